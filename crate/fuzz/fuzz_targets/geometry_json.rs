#![no_main]

use libfuzzer_sys::fuzz_target;
use spinstar::chain::GeometryDocument;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = GeometryDocument::from_json(text) {
        let json = serde_json::to_string(&doc).unwrap();
        assert_eq!(GeometryDocument::from_json(&json).unwrap(), doc);
    }
});
