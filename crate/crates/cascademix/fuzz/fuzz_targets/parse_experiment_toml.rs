#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Must reject garbage gracefully; never touches the filesystem at
        // parse time even when the spec names a model file.
        let _ = cascademix::experiment::ExperimentSpec::from_toml(text, Path::new("."));
    }
});
