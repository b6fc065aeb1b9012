#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(q) = cascademix::query::EventQuery::parse(text) {
            // Display/parse must round-trip for anything accepted.
            let round = cascademix::query::EventQuery::parse(&q.to_string()).unwrap();
            assert_eq!(round, q);
            let _ = q.validate(16);
        }
    }
});
