#![no_main]

use gamedet::curator::PatternBank;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(bank) = PatternBank::from_json(text) {
            let back = PatternBank::from_json(&bank.to_json()).expect("re-parse");
            assert_eq!(back.len(), bank.len());
        }
    }
});
