#![no_main]

use libfuzzer_sys::fuzz_target;
use nmt_server::parse_request;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = parse_request(data, 8) {
        assert!(req.text.len() <= 8);
    }
});
