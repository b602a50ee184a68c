#![no_main]

use libfuzzer_sys::fuzz_target;
use pncdf::dump::{dump_bytes, DumpOptions};

fuzz_target!(|data: &[u8]| {
    let _ = dump_bytes(data, "fuzz", &DumpOptions::default());
});
