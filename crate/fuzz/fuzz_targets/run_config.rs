//! Run-configuration JSON: parsing plus semantic validation.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = mednc_cli::RunConfig::from_json(text);
    }
});
