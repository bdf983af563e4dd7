#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(points) = gazework::align::parse_points(text) {
        assert!(points.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
    }
});
