//! Acceptance checks. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any gating criterion fails. Interoperability with an
//! external reader is informative only.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pncdf::access::{flatten_file, flatten_memory, AccessRequest, Extent};
use pncdf::bench::{bench_flash, bench_partition, FlashConfig, PartitionConfig, PartitionPattern};
use pncdf::dataset::{Dataset, UNLIMITED};
use pncdf::engine::{spawn, HintSet};
use pncdf::format::{compute_layout, decode_header, encode_header};
use pncdf::{AttrValues, Attribute, Dimension, Error, ExternalType, MemoryType, Schema, Variable};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const SCHEMA_CASES: u32 = 1_000;
const SCHEMA_BUDGET: Duration = Duration::from_secs(30);
const FLATTEN_CASES: u32 = 10_000;
const FLATTEN_BUDGET: Duration = Duration::from_secs(60);
const EQUIV_BUDGET: Duration = Duration::from_secs(120);
const EQUIV_SHAPES: [[u64; 3]; 2] = [[8, 8, 8], [4, 6, 8]];
const EQUIV_TYPES: [ExternalType; 2] = [ExternalType::Double, ExternalType::Short];
const GROUP_SIZES: [usize; 4] = [1, 2, 4, 8];
const FLASH_BUDGET: Duration = Duration::from_secs(120);
const FLASH_GROUPS: [usize; 3] = [1, 2, 4];
const FLASH_NBLOCKS: u64 = 80;
const FLASH_NVAR: usize = 24;
const FLASH_BLOCK: u64 = 8;
const OPEN_GROUP: usize = 8;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, budget: Duration, what: &str) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took <= budget, format!("{what} took {took:.1?}, budget {budget:?}"))?;
    Ok(took)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// Criterion 1: header round trip.

const TYPES: [ExternalType; 6] = [
    ExternalType::Byte,
    ExternalType::Char,
    ExternalType::Short,
    ExternalType::Int,
    ExternalType::Float,
    ExternalType::Double,
];

fn random_name(rng: &mut StdRng, tag: &str, i: usize) -> String {
    const CHARS: &[char] = &['a', 'Z', '_', '9', '-', '.', 'é', ' ', 'q'];
    let len = rng.gen_range(0..6);
    let stem: String = (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())]).collect();
    format!("{tag}{i}{stem}")
}

fn random_attr_values(rng: &mut StdRng) -> AttrValues {
    let n = rng.gen_range(0..6);
    match TYPES[rng.gen_range(0..TYPES.len())] {
        ExternalType::Byte => AttrValues::Byte((0..n).map(|_| rng.gen()).collect()),
        ExternalType::Char => AttrValues::Char((0..n).map(|_| rng.gen()).collect()),
        ExternalType::Short => AttrValues::Short((0..n).map(|_| rng.gen()).collect()),
        ExternalType::Int => AttrValues::Int((0..n).map(|_| rng.gen()).collect()),
        ExternalType::Float => AttrValues::Float((0..n).map(|_| rng.gen_range(-1e30f32..1e30)).collect()),
        ExternalType::Double => AttrValues::Double((0..n).map(|_| rng.gen_range(-1e300..1e300)).collect()),
    }
}

fn random_attrs(rng: &mut StdRng, max: usize) -> Vec<Attribute> {
    (0..rng.gen_range(0..=max))
        .map(|i| Attribute::new(random_name(rng, "a", i), random_attr_values(rng)))
        .collect()
}

fn random_schema(seed: u64) -> Schema {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut s = Schema::new();
    let ndims = rng.gen_range(0..=6);
    let unlimited = (ndims > 0 && rng.gen_bool(0.5)).then(|| rng.gen_range(0..ndims));
    for i in 0..ndims {
        let name = random_name(&mut rng, "d", i);
        s.dimensions.push(if Some(i) == unlimited {
            Dimension::unlimited(name)
        } else {
            Dimension::fixed(name, rng.gen_range(1..=7))
        });
    }
    let fixed: Vec<usize> = (0..ndims).filter(|&d| Some(d) != unlimited).collect();
    for i in 0..rng.gen_range(0..=12) {
        let mut dims = Vec::new();
        if let Some(u) = unlimited {
            if rng.gen_bool(0.5) {
                dims.push(u);
            }
        }
        if !fixed.is_empty() {
            for _ in 0..rng.gen_range(0..=3) {
                dims.push(fixed[rng.gen_range(0..fixed.len())]);
            }
        }
        let mut v = Variable::new(random_name(&mut rng, "v", i), TYPES[rng.gen_range(0..TYPES.len())], dims);
        v.attributes = random_attrs(&mut rng, 3);
        s.variables.push(v);
    }
    s.global_attributes = random_attrs(&mut rng, 4);
    // Header padding is only representable when some variable marks data_begin.
    let pad = if s.variables.is_empty() { 0 } else { rng.gen_range(0..200) };
    let mut s = compute_layout(&s, pad).expect("generated schema is valid");
    if unlimited.is_some() {
        s.numrecs = rng.gen_range(0..10);
    }
    s
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut runner = TestRunner::new(Config { cases: SCHEMA_CASES, failure_persistence: None, ..Config::default() });
    runner
        .run(&any::<u64>(), |seed| {
            let s = random_schema(seed);
            let bytes = encode_header(&s).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = decode_header(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(encode_header(&back).unwrap(), bytes);
            Ok(())
        })
        .map_err(err)?;
    let took = within(t0, SCHEMA_BUDGET, "round trips")?;
    Ok(format!("{SCHEMA_CASES} random schemas round-trip in {took:.1?}"))
}

// Criterion 2: flattening versus element enumeration.

#[derive(Debug, Clone)]
struct FlattenCase {
    schema: Schema,
    req: AccessRequest,
}

fn flatten_case() -> impl Strategy<Value = FlattenCase> {
    let dims = prop::collection::vec(1u64..=5, 0..=4);
    (dims, any::<bool>(), 0usize..6, 0u64..5, 0usize..3, any::<u64>()).prop_map(
        |(lens, record, type_ix, numrecs, extra, seed)| {
            let mut rng = StdRng::seed_from_u64(seed);
            let record = record && !lens.is_empty();
            let mut s = Schema::new();
            for (i, &len) in lens.iter().enumerate() {
                s.dimensions.push(if record && i == 0 {
                    Dimension::unlimited(format!("d{i}"))
                } else {
                    Dimension::fixed(format!("d{i}"), len)
                });
            }
            let dim_ids: Vec<usize> = (0..lens.len()).collect();
            // Neighbours shift `begin` and, for records, widen `recsize`.
            for k in 0..extra {
                let ids = if record { vec![0] } else { Vec::new() };
                s.variables.push(Variable::new(format!("pre{k}"), TYPES[(type_ix + k) % 6], ids));
            }
            s.variables.push(Variable::new("target", TYPES[type_ix], dim_ids));
            for k in 0..extra {
                let ids = if record { vec![0] } else { Vec::new() };
                s.variables.push(Variable::new(format!("post{k}"), TYPES[(type_ix + k + 1) % 6], ids));
            }
            let mut s = compute_layout(&s, 0).unwrap();
            s.numrecs = numrecs;
            let var_id = extra;
            let mut start = Vec::new();
            let mut count = Vec::new();
            let mut stride = Vec::new();
            for &len in &lens {
                let st = rng.gen_range(1..=3u64);
                let first = rng.gen_range(0..len);
                let room = (len - 1 - first) / st + 1;
                start.push(first);
                count.push(rng.gen_range(0..=room));
                stride.push(st);
            }
            let req = AccessRequest::new(var_id, &start, &count).with_stride(&stride);
            FlattenCase { schema: s, req }
        },
    )
}

/// Every selected element's byte range, visited in row-major selection order.
fn enumerate_elements(s: &Schema, req: &AccessRequest) -> Vec<Extent> {
    let v = &s.variables[req.var_id];
    let esize = v.etype.element_size() as u64;
    let shape: Vec<u64> = v.dim_ids.iter().map(|&d| s.dimensions[d].length).collect();
    let record = s.is_record_var(v);
    let stride = req.stride.clone().unwrap_or_else(|| vec![1; shape.len()]);
    let total: u64 = req.count.iter().product();
    let mut out = Vec::new();
    for n in 0..total {
        let mut rem = n;
        let mut index = vec![0u64; shape.len()];
        for d in (0..shape.len()).rev() {
            index[d] = req.start[d] + (rem % req.count[d]) * stride[d];
            rem /= req.count[d];
        }
        let offset = if record {
            let inner = index[1..].iter().zip(&shape[1..]).fold(0, |acc, (&i, &len)| acc * len + i);
            v.begin + index[0] * s.recsize + inner * esize
        } else {
            v.begin + index.iter().zip(&shape).fold(0, |acc, (&i, &len)| acc * len + i) * esize
        };
        out.push(Extent::new(offset, esize));
    }
    out
}

fn coalesce(mut elems: Vec<Extent>) -> Vec<Extent> {
    elems.sort();
    let mut out: Vec<Extent> = Vec::new();
    for e in elems {
        match out.last_mut() {
            Some(last) if last.end() == e.offset => last.len += e.len,
            _ => out.push(e),
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut runner = TestRunner::new(Config { cases: FLATTEN_CASES, failure_persistence: None, ..Config::default() });
    runner
        .run(&flatten_case(), |case| {
            let got = flatten_file(&case.schema, &case.req).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let elems = enumerate_elements(&case.schema, &case.req);
            prop_assert_eq!(&got, &coalesce(elems.clone()));
            let v = &case.schema.variables[case.req.var_id];
            let mem = flatten_memory(&case.schema, &case.req, MemoryType::identity_for(v.etype)).unwrap();
            prop_assert_eq!(mem.total_bytes, elems.iter().map(|e| e.len).sum::<u64>());
            Ok(())
        })
        .map_err(err)?;
    let took = within(t0, FLATTEN_BUDGET, "flattening")?;
    Ok(format!("{FLATTEN_CASES} random requests match enumeration in {took:.1?}"))
}

// Criterion 3: output independent of participant count and pattern.

fn equivalence_path(dir: &Path, shape: [u64; 3], etype: ExternalType, pattern: PartitionPattern, n: usize) -> PathBuf {
    dir.join(format!("tt_{}x{}x{}_{}_{pattern}_{n}.nc", shape[0], shape[1], shape[2], etype.cdl_name()))
}

fn criterion_3(dir: &Path) -> Outcome {
    let t0 = Instant::now();
    let mut files = 0;
    for shape in EQUIV_SHAPES {
        for etype in EQUIV_TYPES {
            let serial = equivalence_path(dir, shape, etype, PartitionPattern::Z, 1);
            let want = bench_partition(&PartitionConfig::new(shape, etype, PartitionPattern::Z, 1, &serial)).map_err(err)?.digest;
            for pattern in PartitionPattern::AXES_3D {
                for n in GROUP_SIZES {
                    let out = equivalence_path(dir, shape, etype, pattern, n);
                    let got = bench_partition(&PartitionConfig::new(shape, etype, pattern, n, &out)).map_err(err)?.digest;
                    ensure(got == want, format!("{} {shape:?} {pattern} N={n}: digest differs", etype.cdl_name()))?;
                    files += 1;
                }
            }
        }
    }
    let took = within(t0, EQUIV_BUDGET, "partition runs")?;
    Ok(format!("{files} files identical to their serial run in {took:.1?}"))
}

// Criterion 4: multi-variable block writes.

fn flash_config(dir: &Path, nblocks: u64, n: usize, tag: &str) -> FlashConfig {
    FlashConfig {
        nxb: FLASH_BLOCK,
        nyb: FLASH_BLOCK,
        nzb: FLASH_BLOCK,
        nblocks,
        nvar: FLASH_NVAR,
        n,
        nguard: 0,
        out: dir.join(format!("flash_{tag}.nc")),
        aggregators: None,
    }
}

fn criterion_4(dir: &Path) -> Outcome {
    let t0 = Instant::now();
    for n in FLASH_GROUPS {
        let r = bench_flash(&flash_config(dir, FLASH_NBLOCKS, n, &format!("n{n}"))).map_err(err)?;
        let want_bytes = FLASH_NBLOCKS * n as u64 * FLASH_NVAR as u64 * FLASH_BLOCK.pow(3) * 8;
        ensure(r.data_bytes == want_bytes, format!("N={n}: {} data bytes, want {want_bytes}", r.data_bytes))?;
        let serial = bench_flash(&flash_config(dir, FLASH_NBLOCKS * n as u64, 1, &format!("serial{n}"))).map_err(err)?;
        ensure(r.digest == serial.digest, format!("N={n}: digest differs from the 1-participant run"))?;
    }
    let took = within(t0, FLASH_BUDGET, "block writes")?;
    Ok(format!("N in {FLASH_GROUPS:?} match serial runs with N*{FLASH_NBLOCKS} blocks in {took:.1?}"))
}

// Criterion 5: aggregation reduces file operations.

fn criterion_5(dir: &Path) -> Outcome {
    let shape = [8, 8, 8];
    for pattern in PartitionPattern::AXES_3D {
        for n in [2, 4, 8] {
            let mut cfg = PartitionConfig::new(shape, ExternalType::Double, pattern, n, dir.join("agg1.nc"));
            cfg.aggregators = Some(1);
            let ops = bench_partition(&cfg).map_err(err)?.phase("write").map(|p| p.ops);
            ensure(ops == Some(1), format!("{pattern} N={n} with one aggregator: {ops:?} write ops"))?;
        }
    }
    let cfg = PartitionConfig::new(shape, ExternalType::Double, PartitionPattern::Y, 4, dir.join("y.nc"));
    let collective = bench_partition(&cfg).map_err(err)?.phase("write").map_or(0, |p| p.ops);
    let independent = bench_partition(&PartitionConfig { collective: false, ..cfg }).map_err(err)?.phase("write").map_or(0, |p| p.ops);
    ensure(independent == 32, format!("independent Y N=4: {independent} ops, want 32"))?;
    ensure(collective < independent, format!("collective {collective} ops not below independent {independent}"))?;
    Ok(format!("one aggregator issues 1 write; pattern Y N=4 collective {collective} vs independent {independent} ops"))
}

// Criterion 6: header read once and broadcast; inquiry is local.

fn criterion_6(dir: &Path) -> Outcome {
    let path = dir.join("tt_8x8x8_double_Z_1.nc");
    let results = spawn(OPEN_GROUP, |comm| -> Result<(u64, u64, u64, u64), String> {
        comm.barrier().map_err(err)?;
        let before = comm.stats().snapshot();
        let ds = Dataset::open_readonly(&comm, &path, HintSet::new()).map_err(err)?;
        comm.barrier().map_err(err)?;
        let opened = comm.stats().snapshot();
        let tt = ds.inq_varid("tt").map_err(err)?;
        let _ = (ds.inq_ndims(), ds.inq_nvars(), ds.inq_natts(), ds.inq_var(tt), ds.inq_dim(0), ds.inq_unlimdim());
        comm.barrier().map_err(err)?;
        let inquired = comm.stats().snapshot();
        let open = opened - before;
        let inq = inquired - opened;
        // The barrier bracketing inquiry is the only collective expected.
        Ok((open.header_reads, open.broadcasts, inq.file_ops(), inq.collectives() - inq.barriers))
    })
    .map_err(err)?;
    for r in results {
        let (reads, bcasts, inq_ops, inq_coll) = r?;
        ensure(reads == 1 && bcasts == 1, format!("open: {reads} header reads, {bcasts} broadcasts"))?;
        ensure(inq_ops == 0 && inq_coll == 0, format!("inquiry: {inq_ops} file ops, {inq_coll} collectives"))?;
    }
    Ok(format!("N={OPEN_GROUP} open: 1 header read, 1 broadcast; inquiry: 0 ops"))
}

// Criterion 7: divergent definitions are detected everywhere.

fn criterion_7(dir: &Path) -> Outcome {
    let path = dir.join("divergent.nc");
    spawn(4, |comm| -> Result<(), String> {
        let mut ds = Dataset::create(&comm, &path, HintSet::new()).map_err(err)?;
        let x = ds.def_dim("x", 4).map_err(err)?;
        ds.def_var("a", ExternalType::Int, &[x]).map_err(err)?;
        ds.close().map_err(err)
    })
    .map_err(err)?
    .into_iter()
    .collect::<Result<Vec<()>, String>>()?;
    let before = std::fs::read(&path).map_err(err)?;
    let results = spawn(4, |comm| -> Result<bool, String> {
        let mut ds = Dataset::open(&comm, &path, HintSet::new()).map_err(err)?;
        ds.redef().map_err(err)?;
        let etype = if comm.rank() == 2 { ExternalType::Float } else { ExternalType::Double };
        ds.def_var("b", etype, &[0]).map_err(err)?;
        Ok(matches!(ds.enddef(), Err(Error::CollectiveMismatch(_))))
    })
    .map_err(err)?;
    let flagged = results.into_iter().collect::<Result<Vec<bool>, String>>()?;
    ensure(flagged.iter().all(|&f| f), format!("mismatch reported per rank: {flagged:?}"))?;
    let after = std::fs::read(&path).map_err(err)?;
    ensure(before == after, "file changed after a rejected definition")?;
    Ok("all 4 participants report a mismatch; file bytes unchanged".into())
}

// Criterion 8: record variables interleave.

fn criterion_8(dir: &Path) -> Outcome {
    let path = dir.join("records.nc");
    spawn(3, |comm| -> Result<(), String> {
        let mut ds = Dataset::create(&comm, &path, HintSet::new()).map_err(err)?;
        let t = ds.def_dim("t", UNLIMITED).map_err(err)?;
        let x = ds.def_dim("x", 3).map_err(err)?;
        let a = ds.def_var("a", ExternalType::Int, &[t, x]).map_err(err)?;
        let b = ds.def_var("b", ExternalType::Short, &[t]).map_err(err)?;
        ds.enddef().map_err(err)?;
        let r = comm.rank() as u64;
        let row: Vec<i32> = (0..3).map(|k| (100 * r + k) as i32).collect();
        ds.put_vara_all(a, &[r, 0], &[1, 3], &row).map_err(err)?;
        ds.put_var1_all(b, &[r], -(r as i16) - 1).map_err(err)?;
        ds.close().map_err(err)
    })
    .map_err(err)?
    .into_iter()
    .collect::<Result<Vec<()>, String>>()?;
    let bytes = std::fs::read(&path).map_err(err)?;
    let s = decode_header(&bytes).map_err(err)?;
    ensure(s.numrecs == 3, format!("numrecs {}", s.numrecs))?;
    let (a, b) = (&s.variables[0], &s.variables[1]);
    ensure(s.recsize == 12 + 4, format!("recsize {}", s.recsize))?;
    for r in 0..3u64 {
        let at = (a.begin + r * s.recsize) as usize;
        for k in 0..3 {
            let got = i32::from_be_bytes(bytes[at + 4 * k..at + 4 * k + 4].try_into().unwrap());
            ensure(got == (100 * r + k as u64) as i32, format!("a[{r}][{k}] = {got}"))?;
        }
        let at = (b.begin + r * s.recsize) as usize;
        let got = i16::from_be_bytes([bytes[at], bytes[at + 1]]);
        ensure(got == -(r as i16) - 1, format!("b[{r}] = {got}"))?;
    }
    Ok(format!("3 records at begin + r*{}; numrecs 3", s.recsize))
}

// Criterion 9: an external reader sees the generator values.

const READER: &str = r#"
import sys
import numpy as np
from scipy.io import netcdf_file
bad = 0
for path in sys.argv[1:]:
    with netcdf_file(path, "r", mmap=False) as f:
        v = f.variables["tt"]
        data = np.asarray(v[:])
        want = np.arange(data.size).reshape(data.shape).astype(data.dtype)
        if not np.array_equal(data, want):
            bad += 1
print(bad)
"#;

fn criterion_9(dir: &Path) -> Outcome {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("tt_")))
        .collect();
    paths.sort();
    let out = Command::new("python3").arg("-c").arg(READER).args(&paths).output().map_err(|e| format!("python3 unavailable: {e}"))?;
    ensure(out.status.success(), format!("reader failed: {}", String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")))?;
    let bad: usize = String::from_utf8_lossy(&out.stdout).trim().parse().map_err(err)?;
    ensure(bad == 0, format!("{bad} of {} files differ under the external reader", paths.len()))?;
    Ok(format!("{} files read back by scipy with generator values", paths.len()))
}

fn run(outcome: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(outcome)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let d = dir.path();
    let criteria: Vec<(u32, &str, bool, Check)> = vec![
        (1, "header round trip", true, Box::new(criterion_1)),
        (2, "request flattening", true, Box::new(criterion_2)),
        (3, "participant-count invariance", true, Box::new(|| criterion_3(d))),
        (4, "block-structured writes", true, Box::new(|| criterion_4(d))),
        (5, "aggregation", true, Box::new(|| criterion_5(d))),
        (6, "header broadcast", true, Box::new(|| criterion_6(d))),
        (7, "definition consistency", true, Box::new(|| criterion_7(d))),
        (8, "record layout", true, Box::new(|| criterion_8(d))),
        (9, "external reader (informative)", false, Box::new(|| criterion_9(d))),
    ];
    let mut failed = 0;
    for (id, name, gating, check) in criteria {
        match run(check) {
            Ok(detail) => println!("criterion {id} {name}: PASS ({detail})"),
            Err(why) if gating => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({why})");
            }
            Err(why) => println!("criterion {id} {name}: FAIL, not gating ({why})"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
