//! Model document loader: a JSON topology description plus a parameter
//! blob. The first two input bytes split the remainder into the two parts.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let split = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if split > rest.len() {
        return;
    }
    let (json, blob) = rest.split_at(split);
    if let Ok(json) = std::str::from_utf8(json) {
        let _ = mednc_core::model::serialize::decode_model(json, blob, &Default::default());
    }
});
