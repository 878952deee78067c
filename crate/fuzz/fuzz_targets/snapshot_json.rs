#![no_main]

use gamedet::trainer::EraSnapshot;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(snap) = EraSnapshot::from_json(text) {
            let _ = snap.harvest(0.3);
        }
    }
});
