#![no_main]

use libfuzzer_sys::fuzz_target;
use mededge::meddata::{encode_p6, parse_p6};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_p6(data) {
        let again = parse_p6(&encode_p6(&img)).expect("re-encoded image parses");
        assert_eq!(again, img);
    }
});
