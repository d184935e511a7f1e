#![no_main]

use libfuzzer_sys::fuzz_target;
use simplegrowth::data::parse_ppm;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = parse_ppm(data) {
        assert_eq!(p.pixels.len(), p.width * p.height * 3);
    }
});
