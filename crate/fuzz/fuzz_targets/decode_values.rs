#![no_main]

use libfuzzer_sys::fuzz_target;
use pncdf::codec::decode_values;
use pncdf::{AttrValues, ExternalType};

fuzz_target!(|data: &[u8]| {
    let Some((&code, bytes)) = data.split_first() else { return };
    let Some(etype) = ExternalType::from_code(u32::from(code % 8)) else { return };
    let _ = decode_values::<i8>(etype, bytes);
    let _ = decode_values::<i16>(etype, bytes);
    let _ = decode_values::<i32>(etype, bytes);
    let _ = decode_values::<f32>(etype, bytes);
    let _ = decode_values::<f64>(etype, bytes);
    let Ok(values) = AttrValues::decode(etype, bytes) else { return };
    // Float NaN payloads may be quieted in conversion; integers are exact.
    if !matches!(etype, ExternalType::Float | ExternalType::Double) {
        assert_eq!(values.encode(), bytes);
    }
});
