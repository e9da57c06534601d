//! CSV feature-table parser over arbitrary UTF-8 input.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = mednc_core::data::parse_feature_csv(text, "fuzz") {
            // A parsed table survives the binary round trip.
            let bytes = mednc_core::data::encode_medf(&table).expect("encodable");
            let back = mednc_core::data::parse_medf(&bytes, "fuzz").expect("round trip");
            assert_eq!(back, table);
        }
    }
});
