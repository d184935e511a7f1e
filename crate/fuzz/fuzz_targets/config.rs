#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use simplegrowth::model::SimpleGrowthConfig;
use simplegrowth_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = RunConfig::parse(text, Path::new("/base")) {
        assert_eq!(RunConfig::parse(&c.echo(), Path::new("/base")).unwrap(), c);
    }
    if let Ok(m) = SimpleGrowthConfig::from_text(text) {
        assert_eq!(SimpleGrowthConfig::from_text(&m.to_text()).unwrap(), m);
    }
});
