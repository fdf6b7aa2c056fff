#![no_main]

use libfuzzer_sys::fuzz_target;
use mededge::meddata::{DiseaseCatalog, SymptomVocabulary};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = SymptomVocabulary::parse(text) {
        assert_eq!(SymptomVocabulary::parse(&v.to_text()).expect("round trip"), v);
    }
    let _ = DiseaseCatalog::parse(text);
    let _ = DiseaseCatalog::desk().apply_treatments(text);
});
