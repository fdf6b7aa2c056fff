#![no_main]

use libfuzzer_sys::fuzz_target;
use mededge_cli::commands::parse_labeled_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((values, dim, labels)) = parse_labeled_csv(text) {
            assert_eq!(values.len(), dim * labels.len());
        }
    }
});
