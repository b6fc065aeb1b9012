#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Parsing must never panic; on success the accessors must hold up too.
        if let Ok(model) = cascademix::model::MixtureModel::from_json(text) {
            let _ = model.validate_conditions();
            let _ = model.digest();
            let round = cascademix::model::MixtureModel::from_json(&model.to_json()).unwrap();
            assert_eq!(round.digest(), model.digest());
        }
    }
});
