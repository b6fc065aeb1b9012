#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(corpus) = cascademix::cascade::parse_corpus_jsonl(text) {
            let emitted = cascademix::cascade::write_corpus_jsonl(&corpus);
            let round = cascademix::cascade::parse_corpus_jsonl(&emitted).unwrap();
            assert_eq!(cascademix::cascade::write_corpus_jsonl(&round), emitted);
        }
    }
});
