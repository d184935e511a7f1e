#![no_main]

use libfuzzer_sys::fuzz_target;
use simplegrowth::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint::<f32>(data) {
        assert_eq!(encode_checkpoint(&ck.model, &ck.optimizer, ck.step), data);
    }
    let _ = decode_checkpoint::<f64>(data);
});
