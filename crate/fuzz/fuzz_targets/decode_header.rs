#![no_main]

use libfuzzer_sys::fuzz_target;
use pncdf::format::{decode_header, encode_header};

fuzz_target!(|data: &[u8]| {
    let Ok(schema) = decode_header(data) else { return };
    // The re-encode zero fills up to data_begin, which input can make huge.
    if schema.data_begin > 1 << 20 {
        return;
    }
    // Anything we accept must survive a re-encode.
    if let Ok(bytes) = encode_header(&schema) {
        let again = decode_header(&bytes).expect("re-encoded header decodes");
        assert_eq!(again.dimensions, schema.dimensions);
        assert_eq!(again.variables, schema.variables);
        assert_eq!(again.numrecs, schema.numrecs);
    }
});
