#![no_main]

use gamedet::netcore::{ModelDocument, ModelState};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(doc) = serde_json::from_slice::<ModelDocument>(data) {
        let _ = ModelState::from_document(doc);
    }
});
