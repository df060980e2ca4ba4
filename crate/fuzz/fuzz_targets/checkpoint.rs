#![no_main]

use libfuzzer_sys::fuzz_target;
use nmt_core::train::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        let _ = ck.to_model();
    }
});
