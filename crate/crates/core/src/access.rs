//! Flattening of rectangular access requests into file extents and memory
//! runs.
//!
//! A request selects elements with per-dimension `start`, `count` and
//! `stride`. The selected elements are visited in row-major order of the
//! selection; [`flatten_file`] returns the file bytes they occupy and
//! [`flatten_memory`] the buffer bytes they map to under `imap`. The k-th
//! byte of the concatenated file extents always corresponds to the k-th
//! byte of the concatenated memory runs.

use std::fmt;

use crate::codec::MemoryType;
use crate::error::{Error, Result};
use crate::format::Schema;

/// A contiguous byte range `[offset, offset + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Extent {
    pub offset: u64,
    pub len: u64,
}

impl Extent {
    pub fn new(offset: u64, len: u64) -> Self {
        Extent { offset, len }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.len
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.offset, self.len)
    }
}

/// A selection of elements of one variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    pub var_id: usize,
    pub start: Vec<u64>,
    pub count: Vec<u64>,
    /// Per-dimension element strides; `None` means all ones.
    pub stride: Option<Vec<u64>>,
    /// Per-dimension memory strides in elements; `None` means the row-major
    /// layout of `count`.
    pub imap: Option<Vec<i64>>,
}

impl AccessRequest {
    pub fn new(var_id: usize, start: &[u64], count: &[u64]) -> Self {
        AccessRequest {
            var_id,
            start: start.to_vec(),
            count: count.to_vec(),
            stride: None,
            imap: None,
        }
    }

    pub fn with_stride(mut self, stride: &[u64]) -> Self {
        self.stride = Some(stride.to_vec());
        self
    }

    pub fn with_imap(mut self, imap: &[i64]) -> Self {
        self.imap = Some(imap.to_vec());
        self
    }

    /// Number of selected elements.
    pub fn num_elements(&self) -> u64 {
        self.count.iter().product()
    }

    fn stride_at(&self, i: usize) -> u64 {
        self.stride.as_ref().map_or(1, |s| s[i])
    }
}

/// Buffer runs (byte offsets relative to the buffer start) in the order the
/// selected elements are visited.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryLayout {
    pub runs: Vec<Extent>,
    pub total_bytes: u64,
}

impl MemoryLayout {
    /// A single run covering `total_bytes` from the buffer start.
    pub fn contiguous(total_bytes: u64) -> Self {
        let runs = if total_bytes == 0 { Vec::new() } else { vec![Extent::new(0, total_bytes)] };
        MemoryLayout { runs, total_bytes }
    }

    /// Builds a layout from runs given in element-visit order. Runs must be
    /// pairwise disjoint; adjacent runs are merged.
    pub fn from_runs(runs: impl IntoIterator<Item = Extent>) -> Result<Self> {
        let mut layout = MemoryLayout::default();
        for run in runs {
            layout.push(run);
        }
        layout.check_disjoint()?;
        Ok(layout)
    }

    fn push(&mut self, run: Extent) {
        if run.len == 0 {
            return;
        }
        self.total_bytes += run.len;
        if let Some(last) = self.runs.last_mut() {
            if last.end() == run.offset {
                last.len += run.len;
                return;
            }
        }
        self.runs.push(run);
    }

    pub fn is_contiguous(&self) -> bool {
        self.runs.len() <= 1 && self.runs.first().is_none_or(|r| r.offset == 0)
    }

    /// Smallest buffer length (bytes) that holds every run.
    pub fn span(&self) -> u64 {
        self.runs.iter().map(Extent::end).max().unwrap_or(0)
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut sorted = self.runs.clone();
        sorted.sort_unstable();
        for pair in sorted.windows(2) {
            if pair[0].end() > pair[1].offset {
                return Err(Error::OverlapError(format!(
                    "memory runs {} and {} overlap",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

/// Sorts, checks for overlap and merges adjacent extents. Empty extents are
/// dropped.
pub fn merge_extents(mut extents: Vec<Extent>) -> Result<Vec<Extent>> {
    extents.retain(|e| e.len > 0);
    extents.sort_unstable();
    let mut out: Vec<Extent> = Vec::with_capacity(extents.len());
    for e in extents {
        match out.last_mut() {
            Some(last) if last.end() > e.offset => {
                return Err(Error::OverlapError(format!("extents {last} and {e} overlap")));
            }
            Some(last) if last.end() == e.offset => last.len += e.len,
            _ => out.push(e),
        }
    }
    Ok(out)
}

/// Appends `e`, merging it into the last extent when they touch.
fn push_merged(out: &mut Vec<Extent>, e: Extent) {
    if let Some(last) = out.last_mut() {
        if last.end() == e.offset {
            last.len += e.len;
            return;
        }
    }
    out.push(e);
}

/// Per-dimension geometry of a validated request.
struct Geometry {
    base: u64,
    elem: u64,
    start: Vec<u64>,
    count: Vec<u64>,
    stride: Vec<u64>,
    /// Byte distance between consecutive indices of each dimension.
    pitch: Vec<u64>,
}

fn out_of_bounds(msg: String) -> Error {
    Error::OutOfBounds(msg)
}

fn geometry(schema: &Schema, req: &AccessRequest) -> Result<Geometry> {
    let var = schema.var(req.var_id)?;
    let rank = var.rank();
    for len in [req.start.len(), req.count.len()]
        .into_iter()
        .chain(req.stride.as_ref().map(Vec::len))
        .chain(req.imap.as_ref().map(Vec::len))
    {
        if len != rank {
            return Err(Error::RankMismatch { expected: rank, got: len });
        }
    }
    let is_record = schema.is_record_var(var);
    let elem = var.etype.element_size() as u64;
    let lengths: Vec<u64> = var.dim_ids.iter().map(|&d| schema.dimensions[d].length).collect();

    let mut pitch = vec![0u64; rank];
    let mut acc = elem;
    for i in (0..rank).rev() {
        if is_record && i == 0 {
            pitch[i] = schema.recsize;
        } else {
            pitch[i] = acc;
            acc = acc.saturating_mul(lengths[i]);
        }
    }

    let stride: Vec<u64> = (0..rank).map(|i| req.stride_at(i)).collect();
    let mut last_offset = var.begin;
    for i in 0..rank {
        let (s, c, st) = (req.start[i], req.count[i], stride[i]);
        if st == 0 {
            return Err(out_of_bounds(format!("stride of dimension {i} is zero")));
        }
        let bounded = !(is_record && i == 0);
        if c == 0 {
            if bounded && s > lengths[i] {
                return Err(out_of_bounds(format!("start {s} exceeds length {} of dimension {i}", lengths[i])));
            }
            continue;
        }
        let last = (c - 1)
            .checked_mul(st)
            .and_then(|x| x.checked_add(s))
            .ok_or_else(|| out_of_bounds(format!("selection of dimension {i} overflows")))?;
        if bounded && last >= lengths[i] {
            return Err(out_of_bounds(format!(
                "index {last} exceeds length {} of dimension {i}",
                lengths[i]
            )));
        }
        last_offset = last
            .checked_mul(pitch[i])
            .and_then(|x| x.checked_add(last_offset))
            .ok_or_else(|| out_of_bounds(format!("offset of dimension {i} overflows")))?;
    }
    last_offset
        .checked_add(elem)
        .ok_or_else(|| out_of_bounds("selection end overflows".into()))?;
    req.count
        .iter()
        .try_fold(elem, |acc, &c| acc.checked_mul(c))
        .ok_or_else(|| out_of_bounds("selection size overflows".into()))?;

    Ok(Geometry {
        base: var.begin,
        elem,
        start: req.start.clone(),
        count: req.count.clone(),
        stride,
        pitch,
    })
}

/// Visits outer index tuples (all dimensions but the last) in row-major
/// order.
fn for_each_outer(count: &[u64], mut f: impl FnMut(&[u64])) {
    let outer = &count[..count.len() - 1];
    let mut idx = vec![0u64; outer.len()];
    loop {
        f(&idx);
        let mut d = outer.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < outer[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// File extents of the selected elements, ascending, disjoint and merged.
pub fn flatten_file(schema: &Schema, req: &AccessRequest) -> Result<Vec<Extent>> {
    let g = geometry(schema, req)?;
    let rank = g.count.len();
    if rank == 0 {
        return Ok(vec![Extent::new(g.base, g.elem)]);
    }
    if g.count.contains(&0) {
        return Ok(Vec::new());
    }
    let last = rank - 1;
    let mut out = Vec::new();
    for_each_outer(&g.count, |idx| {
        let mut off = g.base + g.start[last] * g.pitch[last];
        for (i, &k) in idx.iter().enumerate() {
            off += (g.start[i] + k * g.stride[i]) * g.pitch[i];
        }
        if g.stride[last] == 1 && g.pitch[last] == g.elem {
            push_merged(&mut out, Extent::new(off, g.count[last] * g.elem));
        } else {
            for k in 0..g.count[last] {
                push_merged(&mut out, Extent::new(off + k * g.stride[last] * g.pitch[last], g.elem));
            }
        }
    });
    Ok(out)
}

/// Memory runs of the selected elements for a buffer of `mtype` elements.
pub fn flatten_memory(schema: &Schema, req: &AccessRequest, mtype: MemoryType) -> Result<MemoryLayout> {
    let g = geometry(schema, req)?;
    let msize = mtype.element_size() as u64;
    let rank = g.count.len();
    let total = g.count.iter().product::<u64>() * msize;
    let Some(imap) = &req.imap else {
        return Ok(MemoryLayout::contiguous(total));
    };
    if let Some(i) = imap.iter().position(|&m| m < 0) {
        return Err(out_of_bounds(format!("negative imap {} for dimension {i}", imap[i])));
    }
    let imap: Vec<u64> = imap.iter().map(|&m| m as u64).collect();
    if total == 0 {
        return Ok(MemoryLayout::default());
    }
    if rank == 0 {
        return Ok(MemoryLayout::contiguous(msize));
    }
    imap.iter()
        .zip(&g.count)
        .try_fold(0u64, |acc, (&m, &c)| {
            m.checked_mul(c - 1)
                .and_then(|x| x.checked_mul(msize))
                .and_then(|x| x.checked_add(acc))
        })
        .ok_or_else(|| out_of_bounds("imap span overflows".into()))?;

    let last = rank - 1;
    let mut layout = MemoryLayout::default();
    for_each_outer(&g.count, |idx| {
        let base: u64 = idx.iter().zip(&imap).map(|(&k, &m)| k * m * msize).sum();
        if imap[last] == 1 {
            layout.push(Extent::new(base, g.count[last] * msize));
        } else {
            for k in 0..g.count[last] {
                layout.push(Extent::new(base + k * imap[last] * msize, msize));
            }
        }
    });
    layout.check_disjoint()?;
    Ok(layout)
}
