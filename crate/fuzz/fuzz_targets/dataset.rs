#![no_main]

use libfuzzer_sys::fuzz_target;
use nmt_corpus::DatasetFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = DatasetFile::from_bytes(data) {
        for b in &ds.batches {
            assert_eq!(b.src.len(), b.rows * b.src_cols);
            assert_eq!(b.tgt.len(), b.rows * b.tgt_cols);
        }
    }
});
