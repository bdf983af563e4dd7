#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(values) = gazework::training::decode_f32(text) {
        // Decoding is lossless: re-encoding reproduces the canonical text.
        let again = gazework::training::encode_f32(&values);
        assert_eq!(gazework::training::decode_f32(&again).unwrap().len(), values.len());
    }
});
