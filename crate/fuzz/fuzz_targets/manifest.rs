#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = gazework::data::parse_manifest(text) {
        // A parsed manifest is validated; derived views must not panic.
        let _ = m.facial_roi();
    }
});
