#![no_main]

use libfuzzer_sys::fuzz_target;
use mededge::meddata::{decode_sample, read_records_from, OnCorrupt};

fuzz_target!(|data: &[u8]| {
    let _ = read_records_from(data, OnCorrupt::Fail);
    let _ = read_records_from(data, OnCorrupt::Skip);
    let _ = decode_sample(data);
});
