#![no_main]

use libfuzzer_sys::fuzz_target;
use simplegrowth::growth::Topology;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = text.parse::<Topology>() {
        assert_eq!(t.to_string().parse::<Topology>().unwrap(), t);
    }
});
