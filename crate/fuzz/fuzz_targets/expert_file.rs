#![no_main]

use gamedet::analysis::{expand_expert, parse_expert_file};
use gamedet::corpus::FeatureVocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(patterns) = parse_expert_file(text) {
            let vocab = FeatureVocabulary::default_fixture();
            for p in &patterns {
                let _ = expand_expert(p, &vocab, 3);
            }
        }
    }
});
