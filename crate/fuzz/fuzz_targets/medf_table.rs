//! MEDF binary feature-table parser: arbitrary bytes must either parse or
//! return a format error with an offset, never panic or over-allocate.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    match mednc_core::data::parse_medf(data, "fuzz") {
        Ok(table) => {
            // A parsed table must re-encode to the very same bytes.
            let bytes = mednc_core::data::encode_medf(&table).expect("encodable");
            assert_eq!(bytes, data);
        }
        Err(mednc_core::error::Error::Format { offset, .. }) => {
            assert!(offset as usize <= data.len());
        }
        Err(other) => panic!("unexpected error kind: {other}"),
    }
});
