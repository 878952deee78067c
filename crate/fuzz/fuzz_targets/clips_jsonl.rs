#![no_main]

use gamedet::corpus::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ds) = Dataset::from_jsonl(text, None) {
            let back = Dataset::from_jsonl(&ds.to_jsonl(), Some(ds.vocabulary())).expect("re-parse");
            assert_eq!(back.len(), ds.len());
        }
    }
});
