#![no_main]

use libfuzzer_sys::fuzz_target;
use nmt_corpus::Vocab;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = Vocab::parse(text) {
            let ids: Vec<u32> = (0..v.len() as u32).collect();
            let _ = v.decode(&ids);
        }
    }
});
