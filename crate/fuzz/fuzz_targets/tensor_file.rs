#![no_main]

use libfuzzer_sys::fuzz_target;
use simplegrowth::data::{decode_tensor_file, encode_tensor_file};

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = decode_tensor_file::<f32>(data) {
        assert_eq!(encode_tensor_file(&entries), data);
    }
    let _ = decode_tensor_file::<f64>(data);
});
