#![no_main]

use int4q_cli::settings::{ConfigFile, Overrides, Settings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ConfigFile::parse(text) {
        let _ = Settings::resolve(Overrides::default(), None, &cfg);
    }
});
