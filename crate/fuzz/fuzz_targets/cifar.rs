#![no_main]

use libfuzzer_sys::fuzz_target;
use simplegrowth::data::{encode_cifar10, parse_cifar10};

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = parse_cifar10(data, 0) {
        let labels = d.labels().expect("CIFAR records carry labels");
        assert_eq!(encode_cifar10(d.images(), labels).unwrap(), data);
    }
});
