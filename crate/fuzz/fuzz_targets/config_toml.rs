#![no_main]

use libfuzzer_sys::fuzz_target;
use slingsim::config::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_toml(text) {
        if cfg.validate().is_ok() {
            let back = ScenarioConfig::from_toml(&cfg.to_toml()).expect("serialized config parses");
            assert_eq!(back.hash(), cfg.hash());
            let _ = cfg.sweep_cells();
        }
    }
});
