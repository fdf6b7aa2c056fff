#![no_main]

use libfuzzer_sys::fuzz_target;
use mededge::modelpack::{decode_bundle, graph_from_bundle, verify_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(layout) = verify_bytes(data) {
        for t in &layout.tensors {
            let _ = layout.payload(data, t);
        }
        if let Ok(b) = decode_bundle(data) {
            let _ = graph_from_bundle(b);
        }
    }
});
