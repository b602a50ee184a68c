use super::group::Comm;
use super::hints::HintSet;
use crate::access::{merge_extents, Extent};
use crate::error::{Error, Result};
use crate::format::padded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Read,
    Write,
}

/// A contiguous byte range of the file owned by one aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileDomain {
    pub range: Extent,
    pub aggregator: usize,
}

/// One piece of one participant's request, routed to the aggregator that
/// owns it during a given staging pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exchange {
    pub source: usize,
    pub aggregator: usize,
    pub pass: usize,
    pub extent: Extent,
    /// Offset of the piece within the source's packed data buffer.
    pub data_offset: u64,
}

/// The global, deterministic schedule of one two-phase collective
/// operation. Every participant computes the identical plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoPlan {
    pub direction: Direction,
    pub per_rank: Vec<Vec<Extent>>,
    pub domains: Vec<FileDomain>,
    /// Sorted by source rank, then by position in the source's request.
    pub schedule: Vec<Exchange>,
    /// Number of staging passes every participant takes part in.
    pub passes: usize,
    pub buffer_size: u64,
}

impl IoPlan {
    pub fn aggregators(&self) -> Vec<usize> {
        let mut aggs: Vec<usize> = self.domains.iter().map(|d| d.aggregator).collect();
        aggs.dedup();
        aggs
    }

    pub(crate) fn rank_bytes(&self, rank: usize) -> u64 {
        self.per_rank[rank].iter().map(|e| e.len).sum()
    }
}

/// Builds the plan from every rank's extents.
///
/// The global byte range `[lo, hi)` of all requests is cut into at most
/// `aggregators` domains of equal size (rounded up to a multiple of 4);
/// domain `k` is served by rank `k * n / aggregators`. Each domain is
/// processed in windows of `buffer_size` bytes, one window per pass.
pub fn build_plan(
    per_rank: Vec<Vec<Extent>>,
    aggregators: usize,
    buffer_size: u64,
    direction: Direction,
) -> Result<IoPlan> {
    let n = per_rank.len();
    let aggregators = aggregators.clamp(1, n.max(1));
    let buffer_size = buffer_size.max(1);
    if direction == Direction::Write {
        merge_extents(per_rank.iter().flatten().copied().collect())?;
    }
    let lo = per_rank.iter().flatten().filter(|e| e.len > 0).map(|e| e.offset).min();
    let hi = per_rank.iter().flatten().filter(|e| e.len > 0).map(Extent::end).max();
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return Ok(IoPlan {
            direction,
            per_rank,
            domains: Vec::new(),
            schedule: Vec::new(),
            passes: 0,
            buffer_size,
        });
    };

    let domain_size = padded((hi - lo).div_ceil(aggregators as u64)).max(4);
    let domains: Vec<FileDomain> = (0..aggregators)
        .map_while(|k| {
            let start = lo + k as u64 * domain_size;
            (start < hi).then(|| FileDomain {
                range: Extent::new(start, domain_size.min(hi - start)),
                aggregator: k * n / aggregators,
            })
        })
        .collect();
    let passes = domains
        .iter()
        .map(|d| d.range.len.div_ceil(buffer_size) as usize)
        .max()
        .unwrap_or(0);

    let mut schedule = Vec::new();
    for (source, extents) in per_rank.iter().enumerate() {
        let mut data_offset = 0;
        for e in extents {
            let mut at = e.offset;
            while at < e.end() {
                let k = ((at - lo) / domain_size) as usize;
                let domain = domains[k].range;
                let pass = ((at - domain.offset) / buffer_size) as usize;
                let window_end = (domain.offset + (pass as u64 + 1) * buffer_size).min(domain.end());
                let len = window_end.min(e.end()) - at;
                schedule.push(Exchange {
                    source,
                    aggregator: domains[k].aggregator,
                    pass,
                    extent: Extent::new(at, len),
                    data_offset,
                });
                at += len;
                data_offset += len;
            }
        }
    }
    Ok(IoPlan { direction, per_rank, domains, schedule, passes, buffer_size })
}

fn encode_extents(extents: &[Extent]) -> Vec<u8> {
    let mut out = Vec::with_capacity(extents.len() * 16);
    for e in extents {
        out.extend_from_slice(&e.offset.to_le_bytes());
        out.extend_from_slice(&e.len.to_le_bytes());
    }
    out
}

fn decode_extents(bytes: &[u8]) -> Result<Vec<Extent>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::CollectiveMismatch("malformed extent list from peer".into()));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            Extent::new(
                u64::from_le_bytes(c[..8].try_into().unwrap()),
                u64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect())
}

/// Collective: gathers every participant's extents and builds the plan.
pub fn plan_two_phase(comm: &Comm, extents: &[Extent], hints: &HintSet, direction: Direction) -> Result<IoPlan> {
    let gathered = comm.all_gather_tagged("plan", encode_extents(extents))?;
    let per_rank = gathered.iter().map(|b| decode_extents(b)).collect::<Result<Vec<_>>>()?;
    build_plan(per_rank, hints.aggregators(comm.size())?, hints.buffer_size()?, direction)
}
