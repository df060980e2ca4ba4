#![no_main]

use libfuzzer_sys::fuzz_target;
use nmt_core::config::ConfigMap;
use nmt_core::model::ModelConfig;
use nmt_core::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(mut map) = ConfigMap::parse(text) {
            let _ = ModelConfig::from_config(&mut map, 16, 16);
            let _ = TrainConfig::from_config(&mut map);
            let _ = map.finish();
        }
    }
});
