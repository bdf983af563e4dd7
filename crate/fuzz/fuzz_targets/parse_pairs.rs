#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = gazework::align::parse_pairs(text) {
        // Accepted pairs are finite; the fit must not panic on them.
        let _ = gazework::align::ransac_homography(&pairs, 50, 2.0, &mut gazework::rng::stream(0, "fuzz"));
    }
});
