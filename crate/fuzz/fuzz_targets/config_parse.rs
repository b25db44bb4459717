#![no_main]

use libfuzzer_sys::fuzz_target;
use spinstar::cli::{parse_config_text, Command, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_config_text(text);
    for cmd in Command::ALL {
        if let Ok(cfg) = RunConfig::from_text(cmd, text) {
            // the canonical text must parse back to the same configuration
            let again = RunConfig::from_text(cmd, &cfg.to_text()).expect("canonical text reparses");
            assert_eq!(again.to_text(), cfg.to_text());
            assert_eq!(again.hash(), cfg.hash());
        }
    }
});
