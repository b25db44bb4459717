#![no_main]

use libfuzzer_sys::fuzz_target;
use spinstar::cli::{parse_t2_list, parse_usize_list};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ms) = parse_usize_list(text) {
        let joined = ms.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",");
        assert_eq!(parse_usize_list(&joined).unwrap(), ms);
    }
    if let Ok(t2) = parse_t2_list(text) {
        assert!(t2.iter().all(|t| *t > 0.0));
    }
});
