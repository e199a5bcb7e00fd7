#![no_main]

use ibgs_core::train::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::from_toml(text) {
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).expect("reparse"), cfg);
    }
});
