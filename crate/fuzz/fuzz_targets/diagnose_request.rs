#![no_main]

use libfuzzer_sys::fuzz_target;
use mededge::meddata::SymptomVocabulary;
use mededge_service::api::DiagnoseRequest;
use mededge_service::validate_request;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = serde_json::from_slice::<DiagnoseRequest>(data) {
        let vocab = SymptomVocabulary::desk();
        if let Ok(k) = validate_request(&req, &vocab) {
            assert!((1..=20).contains(&k));
            vocab.encode(req.symptoms.iter().map(String::as_str)).expect("validated names encode");
        }
    }
});
