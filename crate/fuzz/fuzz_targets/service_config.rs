#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use mededge_service::ServiceConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ServiceConfig::parse(text, Path::new("/base"));
    }
});
