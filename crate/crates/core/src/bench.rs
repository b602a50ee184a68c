//! Access-pattern benchmarks.
//!
//! [`bench_partition`] writes or reads a 3-D array `tt(z, y, x)` split among
//! the participants along one, two or three axes. [`bench_flash`] writes
//! many equally shaped 4-D variables, each participant owning a contiguous
//! range of blocks along the first dimension. Both report timings,
//! file-operation counts and a digest of the resulting file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::access::{Extent, MemoryLayout};
use crate::codec::MemValue;
use crate::dataset::Dataset;
use crate::engine::{spawn, Comm, HintSet, StatsSnapshot, HINT_AGGREGATORS};
use crate::error::{Error, Result};
use crate::format::ExternalType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionPattern {
    Z,
    Y,
    X,
    ZY,
    ZX,
    YX,
    ZYX,
    /// Block partition of the first dimension.
    Block,
}

impl PartitionPattern {
    /// The seven axis combinations of a 3-D array.
    pub const AXES_3D: [PartitionPattern; 7] = [
        PartitionPattern::Z,
        PartitionPattern::Y,
        PartitionPattern::X,
        PartitionPattern::ZY,
        PartitionPattern::ZX,
        PartitionPattern::YX,
        PartitionPattern::ZYX,
    ];

    /// Partitioned axes, most significant first (0 = z, 1 = y, 2 = x).
    pub fn axes(self) -> &'static [usize] {
        match self {
            PartitionPattern::Z | PartitionPattern::Block => &[0],
            PartitionPattern::Y => &[1],
            PartitionPattern::X => &[2],
            PartitionPattern::ZY => &[0, 1],
            PartitionPattern::ZX => &[0, 2],
            PartitionPattern::YX => &[1, 2],
            PartitionPattern::ZYX => &[0, 1, 2],
        }
    }
}

impl fmt::Display for PartitionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PartitionPattern::Z => "Z",
            PartitionPattern::Y => "Y",
            PartitionPattern::X => "X",
            PartitionPattern::ZY => "ZY",
            PartitionPattern::ZX => "ZX",
            PartitionPattern::YX => "YX",
            PartitionPattern::ZYX => "ZYX",
            PartitionPattern::Block => "BLOCK",
        };
        f.write_str(s)
    }
}

impl FromStr for PartitionPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "Z" => PartitionPattern::Z,
            "Y" => PartitionPattern::Y,
            "X" => PartitionPattern::X,
            "ZY" => PartitionPattern::ZY,
            "ZX" => PartitionPattern::ZX,
            "YX" => PartitionPattern::YX,
            "ZYX" => PartitionPattern::ZYX,
            "BLOCK" => PartitionPattern::Block,
            _ => return Err(format!("unknown partition pattern {s:?}")),
        })
    }
}

/// Splits `n` into `k` factors as evenly as possible, larger factors first.
pub fn factorize(n: usize, k: usize) -> Vec<usize> {
    let mut primes = Vec::new();
    let (mut m, mut p) = (n, 2);
    while m > 1 {
        while m % p == 0 {
            primes.push(p);
            m /= p;
        }
        p += 1;
    }
    let mut factors = vec![1; k];
    for &p in primes.iter().rev() {
        let smallest = (0..k).min_by_key(|&i| (factors[i], i)).expect("k > 0");
        factors[smallest] *= p;
    }
    factors.sort_unstable_by(|a, b| b.cmp(a));
    factors
}

/// Subarray `(start, count)` owned by `rank`. Blocks along an axis differ
/// in length by at most one; blocks may be empty when an axis is shorter
/// than its process count.
pub fn decompose(shape: &[u64], axes: &[usize], n: usize, rank: usize) -> Result<(Vec<u64>, Vec<u64>)> {
    if n == 0 || rank >= n {
        return Err(Error::OutOfBounds(format!("rank {rank} of {n}")));
    }
    if let Some(&a) = axes.iter().find(|&&a| a >= shape.len()) {
        return Err(Error::RankMismatch { expected: shape.len(), got: a + 1 });
    }
    let factors = factorize(n, axes.len());
    let mut start = vec![0; shape.len()];
    let mut count = shape.to_vec();
    let mut rest = rank;
    for (i, &axis) in axes.iter().enumerate().rev() {
        let p = factors[i] as u64;
        let c = (rest % factors[i]) as u64;
        rest /= factors[i];
        let (len, extra) = (shape[axis] / p, shape[axis] % p);
        start[axis] = c * len + c.min(extra);
        count[axis] = len + u64::from(c < extra);
    }
    Ok((start, count))
}

/// Checks that the subarrays of all ranks tile `shape` exactly.
pub fn verify_coverage(shape: &[u64], axes: &[usize], n: usize) -> Result<()> {
    let total: u64 = shape.iter().product();
    let mut owner = vec![usize::MAX; total as usize];
    let mut twice = None;
    for rank in 0..n {
        let (start, count) = decompose(shape, axes, n, rank)?;
        for_each_index(&count, |idx| {
            let mut lin = 0;
            for d in 0..shape.len() {
                lin = lin * shape[d] + start[d] + idx[d];
            }
            let slot = &mut owner[lin as usize];
            if *slot != usize::MAX {
                twice.get_or_insert((lin, *slot, rank));
            }
            *slot = rank;
        });
    }
    if let Some((lin, a, b)) = twice {
        return Err(Error::OverlapError(format!("element {lin} owned by ranks {a} and {b}")));
    }
    match owner.iter().position(|&o| o == usize::MAX) {
        Some(lin) => Err(Error::OutOfBounds(format!("element {lin} owned by no rank"))),
        None => Ok(()),
    }
}

fn for_each_index(count: &[u64], mut f: impl FnMut(&[u64])) {
    if count.contains(&0) {
        return;
    }
    let mut idx = vec![0u64; count.len()];
    loop {
        f(&idx);
        let mut d = count.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < count[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Generator value for global linear index `i`, wrapping for narrow types.
pub trait BenchValue: MemValue {
    fn generate(i: u64) -> Self;
}

macro_rules! bench_value {
    ($($t:ty),*) => {$(
        impl BenchValue for $t {
            fn generate(i: u64) -> Self {
                i as $t
            }
        }
    )*};
}
bench_value!(i8, u8, i16, i32, f32, f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Write,
    Read,
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "write" => Ok(BenchMode::Write),
            "read" => Ok(BenchMode::Read),
            _ => Err(format!("unknown mode {s:?} (expected write or read)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PartitionConfig {
    pub shape: [u64; 3],
    pub etype: ExternalType,
    pub pattern: PartitionPattern,
    pub n: usize,
    pub mode: BenchMode,
    pub out: PathBuf,
    pub aggregators: Option<usize>,
    /// Use `_all` collective calls (the default) or independent calls.
    pub collective: bool,
}

impl PartitionConfig {
    pub fn new(shape: [u64; 3], etype: ExternalType, pattern: PartitionPattern, n: usize, out: impl Into<PathBuf>) -> Self {
        PartitionConfig {
            shape,
            etype,
            pattern,
            n,
            mode: BenchMode::Write,
            out: out.into(),
            aggregators: None,
            collective: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
    /// Data file operations issued during the phase by all participants.
    pub ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub pattern: String,
    pub n: usize,
    pub shape: Vec<u64>,
    /// Bytes of array data moved.
    pub bytes: u64,
    pub phases: Vec<Phase>,
    /// Hex SHA-256 of the whole file after the run.
    pub digest: String,
    /// Elements that read back differently from the generator.
    pub mismatches: u64,
    /// File size minus the header region.
    pub data_bytes: u64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "pattern,n,bytes,phase,seconds,ops";

    pub fn csv(&self) -> String {
        let mut out = String::new();
        for p in &self.phases {
            out.push_str(&format!("{},{},{},{},{:.6},{}\n", self.pattern, self.n, self.bytes, p.name, p.seconds, p.ops));
        }
        out
    }

    pub fn phase(&self, name: &str) -> Option<&Phase> {
        self.phases.iter().find(|p| p.name == name)
    }
}

/// Hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Times `body` on the group: barriers bracket it so that the root's
/// counters see exactly the operations issued inside.
fn timed<T>(comm: &Comm, body: impl FnOnce() -> Result<T>) -> Result<(T, f64, StatsSnapshot)> {
    comm.barrier()?;
    let before = comm.stats().snapshot();
    comm.barrier()?;
    let t = Instant::now();
    let out = body()?;
    comm.barrier()?;
    let secs = t.elapsed().as_secs_f64();
    let delta = comm.stats().snapshot() - before;
    comm.barrier()?;
    Ok((out, secs, delta))
}

fn hints_for(aggregators: Option<usize>) -> HintSet {
    match aggregators {
        Some(a) => HintSet::new().with(HINT_AGGREGATORS, a),
        None => HintSet::new(),
    }
}

fn data_section(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path)?;
    let (schema, _) = crate::format::decode_header_prefix(&bytes)?;
    Ok(bytes.len() as u64 - schema.data_begin)
}

struct RankOutcome {
    phases: Vec<Phase>,
    mismatches: u64,
}

fn partition_rank<T: BenchValue>(comm: &Comm, cfg: &PartitionConfig) -> Result<RankOutcome> {
    let hints = hints_for(cfg.aggregators);
    let shape = cfg.shape;
    let (start, count) = decompose(&shape, cfg.pattern.axes(), cfg.n, comm.rank())?;
    let mut local = Vec::with_capacity(count.iter().product::<u64>() as usize);
    for_each_index(&count, |idx| {
        let lin = ((start[0] + idx[0]) * shape[1] + start[1] + idx[1]) * shape[2] + start[2] + idx[2];
        local.push(T::generate(lin));
    });
    let mut phases = Vec::new();
    let mut mismatches = 0;
    match cfg.mode {
        BenchMode::Write => {
            let (mut ds, secs, d) = timed(comm, || {
                let mut ds = Dataset::create(comm, &cfg.out, hints.clone())?;
                let z = ds.def_dim("z", shape[0])?;
                let y = ds.def_dim("y", shape[1])?;
                let x = ds.def_dim("x", shape[2])?;
                ds.def_var("tt", cfg.etype, &[z, y, x])?;
                ds.enddef()?;
                Ok(ds)
            })?;
            phases.push(Phase { name: "define".into(), seconds: secs, ops: d.file_ops() });
            let ((), secs, d) = timed(comm, || {
                if cfg.collective {
                    ds.put_vara_all(0, &start, &count, &local)
                } else {
                    ds.put_vara(0, &start, &count, &local)
                }
            })?;
            phases.push(Phase { name: "write".into(), seconds: secs, ops: d.write_ops });
            let ((), secs, d) = timed(comm, || ds.close())?;
            phases.push(Phase { name: "close".into(), seconds: secs, ops: d.file_ops() });
        }
        BenchMode::Read => {
            let (ds, secs, d) = timed(comm, || Dataset::open(comm, &cfg.out, hints.clone()))?;
            phases.push(Phase { name: "open".into(), seconds: secs, ops: d.file_ops() });
            let tt = ds.inq_varid("tt")?;
            let file_shape = ds.inq_var_shape(tt)?;
            if file_shape != shape {
                return Err(Error::OutOfBounds(format!("file holds tt{file_shape:?}, expected {shape:?}")));
            }
            let mut back = vec![T::default(); local.len()];
            let ((), secs, d) = timed(comm, || {
                if cfg.collective {
                    ds.get_vara_all(tt, &start, &count, &mut back)
                } else {
                    ds.get_vara(tt, &start, &count, &mut back)
                }
            })?;
            phases.push(Phase { name: "read".into(), seconds: secs, ops: d.read_ops });
            mismatches = back.iter().zip(&local).filter(|(a, b)| a != b).count() as u64;
            let ((), secs, d) = timed(comm, || ds.close())?;
            phases.push(Phase { name: "close".into(), seconds: secs, ops: d.file_ops() });
        }
    }
    Ok(RankOutcome { phases, mismatches })
}

macro_rules! dispatch {
    ($etype:expr, $f:ident, $($arg:expr),*) => {
        match $etype {
            ExternalType::Byte => $f::<i8>($($arg),*),
            ExternalType::Char => $f::<u8>($($arg),*),
            ExternalType::Short => $f::<i16>($($arg),*),
            ExternalType::Int => $f::<i32>($($arg),*),
            ExternalType::Float => $f::<f32>($($arg),*),
            ExternalType::Double => $f::<f64>($($arg),*),
        }
    };
}

fn collect(n: usize, results: Vec<Result<RankOutcome>>) -> Result<(Vec<Phase>, u64)> {
    let mut phases = Vec::new();
    let mut mismatches = 0;
    for (rank, r) in results.into_iter().enumerate() {
        let r = r?;
        mismatches += r.mismatches;
        if rank == 0 {
            phases = r.phases;
        }
    }
    debug_assert!(n > 0);
    Ok((phases, mismatches))
}

/// Runs the partitioned 3-D array benchmark.
pub fn bench_partition(cfg: &PartitionConfig) -> Result<BenchReport> {
    if cfg.n == 0 || cfg.shape.contains(&0) {
        return Err(Error::OutOfBounds(format!("{} participants on shape {:?}", cfg.n, cfg.shape)));
    }
    let results = spawn(cfg.n, |comm| dispatch!(cfg.etype, partition_rank, &comm, cfg))?;
    let (phases, mismatches) = collect(cfg.n, results)?;
    Ok(BenchReport {
        pattern: cfg.pattern.to_string(),
        n: cfg.n,
        shape: cfg.shape.to_vec(),
        bytes: cfg.shape.iter().product::<u64>() * cfg.etype.element_size() as u64,
        phases,
        digest: file_digest(&cfg.out)?,
        mismatches,
        data_bytes: data_section(&cfg.out)?,
    })
}

#[derive(Debug, Clone)]
pub struct FlashConfig {
    pub nxb: u64,
    pub nyb: u64,
    pub nzb: u64,
    /// Blocks owned by each participant.
    pub nblocks: u64,
    pub nvar: usize,
    pub n: usize,
    /// Guard cells around each block in memory; never written to the file.
    pub nguard: u64,
    pub out: PathBuf,
    pub aggregators: Option<usize>,
}

/// Value of element `i` (global linear index) of variable `v`.
pub fn flash_value(v: usize, i: u64) -> f64 {
    v as f64 * 1.0e9 + i as f64
}

fn flash_rank(comm: &Comm, cfg: &FlashConfig) -> Result<RankOutcome> {
    let hints = hints_for(cfg.aggregators);
    let (nb, nz, ny, nx, g) = (cfg.nblocks, cfg.nzb, cfg.nyb, cfg.nxb, cfg.nguard);
    let block = nz * ny * nx;
    let first = comm.rank() as u64 * nb;
    let (gz, gy, gx) = (nz + 2 * g, ny + 2 * g, nx + 2 * g);

    // Interior cells of each guarded block, in row-major file order.
    let layout = MemoryLayout::from_runs((0..nb).flat_map(|b| {
        (0..nz).flat_map(move |z| {
            (0..ny).map(move |y| Extent::new((((b * gz + z + g) * gy + y + g) * gx + g) * 8, nx * 8))
        })
    }))?;

    let mut phases = Vec::new();
    let (mut ds, secs, d) = timed(comm, || {
        let mut ds = Dataset::create(comm, &cfg.out, hints.clone())?;
        let dims = [
            ds.def_dim("blocks", nb * cfg.n as u64)?,
            ds.def_dim("z", nz)?,
            ds.def_dim("y", ny)?,
            ds.def_dim("x", nx)?,
        ];
        for v in 0..cfg.nvar {
            ds.def_var(&format!("var{v:02}"), ExternalType::Double, &dims)?;
        }
        ds.enddef()?;
        Ok(ds)
    })?;
    phases.push(Phase { name: "define".into(), seconds: secs, ops: d.file_ops() });

    let mut total_secs = 0.0;
    let mut total_ops = 0;
    let mut buf = vec![0.0f64; (nb * gz * gy * gx) as usize];
    for v in 0..cfg.nvar {
        let mut k = 0;
        for run in &layout.runs {
            for j in 0..run.len / 8 {
                buf[(run.offset / 8 + j) as usize] = flash_value(v, first * block + k);
                k += 1;
            }
        }
        let ((), secs, d) = timed(comm, || {
            let (start, count) = ([first, 0, 0, 0], [nb, nz, ny, nx]);
            if g == 0 {
                ds.put_vara_all(v, &start, &count, &buf)
            } else {
                ds.put_vara_all_flex(v, &start, &count, None, &layout, &buf)
            }
        })?;
        total_secs += secs;
        total_ops += d.write_ops;
        phases.push(Phase { name: format!("var{v:02}"), seconds: secs, ops: d.write_ops });
    }
    phases.push(Phase { name: "write".into(), seconds: total_secs, ops: total_ops });
    let ((), secs, d) = timed(comm, || ds.close())?;
    phases.push(Phase { name: "close".into(), seconds: secs, ops: d.file_ops() });
    Ok(RankOutcome { phases, mismatches: 0 })
}

/// Runs the FLASH-style block-partitioned multi-variable write benchmark.
pub fn bench_flash(cfg: &FlashConfig) -> Result<BenchReport> {
    if cfg.n == 0 || cfg.nvar == 0 || [cfg.nxb, cfg.nyb, cfg.nzb, cfg.nblocks].contains(&0) {
        return Err(Error::OutOfBounds("flash parameters must be positive".into()));
    }
    let results = spawn(cfg.n, |comm| flash_rank(&comm, cfg))?;
    let (phases, mismatches) = collect(cfg.n, results)?;
    let bytes = cfg.nblocks * cfg.n as u64 * cfg.nvar as u64 * cfg.nzb * cfg.nyb * cfg.nxb * 8;
    Ok(BenchReport {
        pattern: PartitionPattern::Block.to_string(),
        n: cfg.n,
        shape: vec![cfg.nblocks * cfg.n as u64, cfg.nzb, cfg.nyb, cfg.nxb],
        bytes,
        phases,
        digest: file_digest(&cfg.out)?,
        mismatches,
        data_bytes: data_section(&cfg.out)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorization_is_balanced_and_ordered() {
        assert_eq!(factorize(8, 1), vec![8]);
        assert_eq!(factorize(8, 2), vec![4, 2]);
        assert_eq!(factorize(8, 3), vec![2, 2, 2]);
        assert_eq!(factorize(4, 2), vec![2, 2]);
        assert_eq!(factorize(12, 2), vec![4, 3]);
        assert_eq!(factorize(1, 3), vec![1, 1, 1]);
        assert_eq!(factorize(2, 3), vec![2, 1, 1]);
        for n in 1..=16 {
            for k in 1..=3 {
                assert_eq!(factorize(n, k).iter().product::<usize>(), n);
            }
        }
    }

    #[test]
    fn zyx_on_eight_gives_octants() {
        let shape = [8, 8, 8];
        for rank in 0..8 {
            let (start, count) = decompose(&shape, PartitionPattern::ZYX.axes(), 8, rank).unwrap();
            assert_eq!(count, vec![4, 4, 4]);
            let r = rank as u64;
            assert_eq!(start, vec![(r / 4) * 4, ((r / 2) % 2) * 4, (r % 2) * 4]);
        }
        let (start, count) = decompose(&shape, PartitionPattern::Z.axes(), 8, 3).unwrap();
        assert_eq!((start, count), (vec![3, 0, 0], vec![1, 8, 8]));
    }

    #[test]
    fn every_pattern_tiles_exactly() {
        for shape in [[8u64, 8, 8], [4, 6, 8], [3, 5, 7], [1, 1, 2]] {
            for pattern in PartitionPattern::AXES_3D {
                for n in 1..=16 {
                    verify_coverage(&shape, pattern.axes(), n).unwrap();
                }
            }
        }
    }

    #[test]
    fn pattern_names_round_trip() {
        for p in PartitionPattern::AXES_3D.into_iter().chain([PartitionPattern::Block]) {
            assert_eq!(p.to_string().parse::<PartitionPattern>().unwrap(), p);
        }
        assert!("ZZ".parse::<PartitionPattern>().is_err());
    }
}
