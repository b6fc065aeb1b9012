#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = cascademix::moments::MomentTable::from_json(text) {
            let _ = table.zero_tolerance();
            let round = cascademix::moments::MomentTable::from_json(&table.to_json()).unwrap();
            assert_eq!(round.to_json(), table.to_json());
        }
    }
});
