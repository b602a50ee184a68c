#![no_main]

use libfuzzer_sys::fuzz_target;
use pncdf::access::{flatten_file, flatten_memory, AccessRequest};
use pncdf::format::compute_layout;
use pncdf::{Dimension, ExternalType, MemoryType, Schema, Variable};

/// Byte reader that yields zeros once the input runs out.
struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn byte(&mut self) -> u8 {
        match self.0.split_first() {
            Some((&b, rest)) => {
                self.0 = rest;
                b
            }
            None => 0,
        }
    }
}

fuzz_target!(|data: &[u8]| {
    let mut c = Cursor(data);
    let rank = usize::from(c.byte() % 5);
    let record = c.byte() & 1 == 1 && rank > 0;
    let etype = ExternalType::from_code(u32::from(c.byte() % 6 + 1)).unwrap();
    let mut s = Schema::new();
    for i in 0..rank {
        let len = u64::from(c.byte() % 9) + 1;
        s.dimensions.push(if record && i == 0 {
            Dimension::unlimited(format!("d{i}"))
        } else {
            Dimension::fixed(format!("d{i}"), len)
        });
    }
    s.variables.push(Variable::new("v", etype, (0..rank).collect()));
    let Ok(mut s) = compute_layout(&s, u64::from(c.byte())) else { return };
    s.numrecs = u64::from(c.byte() % 8);
    let start: Vec<u64> = (0..rank).map(|_| u64::from(c.byte() % 12)).collect();
    let count: Vec<u64> = (0..rank).map(|_| u64::from(c.byte() % 12)).collect();
    let stride: Vec<u64> = (0..rank).map(|_| u64::from(c.byte() % 4)).collect();
    let imap: Vec<i64> = (0..rank).map(|_| i64::from(c.byte() as i8)).collect();
    let req = AccessRequest::new(0, &start, &count).with_stride(&stride).with_imap(&imap);
    let file = flatten_file(&s, &req);
    let mem = flatten_memory(&s, &req, MemoryType::identity_for(etype));
    if let (Ok(file), Ok(mem)) = (file, mem) {
        // File extents and memory runs describe the same bytes.
        assert_eq!(file.iter().map(|e| e.len).sum::<u64>(), mem.total_bytes);
        assert!(file.windows(2).all(|w| w[0].end() < w[1].offset));
    }
});
