//! Execution of independent and two-phase collective I/O.

use super::file::SharedFile;
use super::group::Comm;
use super::plan::{Direction, Exchange, IoPlan};
use crate::access::Extent;
use crate::error::{Error, Result};

/// Collective: succeeds on every participant only if `local` succeeded on
/// all of them; otherwise every participant gets the lowest rank's error.
pub(crate) fn agree(comm: &Comm, tag: &'static str, local: Result<()>) -> Result<()> {
    let payload = match &local {
        Ok(()) => Vec::new(),
        Err(e) => e.to_wire(),
    };
    let statuses = comm.all_gather_tagged(tag, payload)?;
    match statuses.iter().find(|s| !s.is_empty()) {
        Some(wire) => Err(Error::from_wire(wire)),
        None => Ok(()),
    }
}

/// Pieces of `plan` handled by `aggregator` in `pass`, grouped by source in
/// rank order.
fn pieces_for(plan: &IoPlan, aggregator: usize, pass: usize) -> Vec<&Exchange> {
    plan.schedule
        .iter()
        .filter(|x| x.aggregator == aggregator && x.pass == pass)
        .collect()
}

fn own_pieces(plan: &IoPlan, rank: usize) -> Vec<&Exchange> {
    plan.schedule.iter().filter(|x| x.source == rank).collect()
}

/// Collective write: routes every participant's bytes to the aggregators,
/// which write each maximal contiguous run of their domain with a single
/// file operation. `data` holds this participant's bytes packed in the
/// order of its extents. Returns the number of bytes this participant
/// contributed.
pub fn collective_write(comm: &Comm, file: &SharedFile, plan: &IoPlan, data: &[u8]) -> Result<u64> {
    let me = comm.rank();
    let n = comm.size();
    let expected = plan.rank_bytes(me);
    let local = if plan.direction != Direction::Write {
        Err(Error::CollectiveMismatch("collective_write given a read plan".into()))
    } else if data.len() as u64 != expected {
        Err(Error::LayoutMismatch(format!("buffer holds {} bytes, request covers {expected}", data.len())))
    } else {
        Ok(())
    };
    agree(comm, "write_begin", local)?;

    let mine = own_pieces(plan, me);
    let mut status = Ok(());
    for pass in 0..plan.passes {
        let mut outgoing = vec![Vec::new(); n];
        for x in mine.iter().filter(|x| x.pass == pass) {
            let start = x.data_offset as usize;
            outgoing[x.aggregator].extend_from_slice(&data[start..start + x.extent.len as usize]);
        }
        let incoming = comm.all_to_all_tagged("two_phase_write", outgoing)?;

        let pieces = pieces_for(plan, me, pass);
        if pieces.is_empty() {
            continue;
        }
        let mut cursors = vec![0usize; n];
        let mut staged: Vec<(u64, &[u8])> = pieces
            .iter()
            .map(|x| {
                let at = cursors[x.source];
                cursors[x.source] += x.extent.len as usize;
                (x.extent.offset, &incoming[x.source][at..at + x.extent.len as usize])
            })
            .collect();
        staged.sort_unstable_by_key(|(offset, _)| *offset);

        let mut run_start = staged[0].0;
        let mut run: Vec<u8> = Vec::new();
        for (offset, bytes) in staged {
            if offset != run_start + run.len() as u64 {
                if status.is_ok() {
                    status = file.write_at(run_start, &run);
                }
                run.clear();
                run_start = offset;
            }
            run.extend_from_slice(bytes);
        }
        if status.is_ok() {
            status = file.write_at(run_start, &run);
        }
    }
    agree(comm, "write_end", status)?;
    Ok(expected)
}

/// Collective read: aggregators read each maximal contiguous run of the
/// requested bytes in their domain once and scatter the pieces back.
/// Returns this participant's bytes packed in the order of its extents.
pub fn collective_read(comm: &Comm, file: &SharedFile, plan: &IoPlan) -> Result<Vec<u8>> {
    let me = comm.rank();
    let n = comm.size();
    let mut out = vec![0u8; plan.rank_bytes(me) as usize];
    let mine = own_pieces(plan, me);
    let mut status = Ok(());
    for pass in 0..plan.passes {
        let mut outgoing = vec![Vec::new(); n];
        let pieces = pieces_for(plan, me, pass);
        if !pieces.is_empty() {
            // Union of requested bytes; reads may overlap across ranks.
            let mut wanted: Vec<Extent> = pieces.iter().map(|x| x.extent).collect();
            wanted.sort_unstable();
            let mut runs: Vec<Extent> = Vec::new();
            for e in wanted {
                match runs.last_mut() {
                    Some(last) if e.offset <= last.end() => {
                        last.len = last.len.max(e.end() - last.offset);
                    }
                    _ => runs.push(e),
                }
            }
            let mut buffers = Vec::with_capacity(runs.len());
            for run in &runs {
                let mut buf = vec![0u8; run.len as usize];
                if status.is_ok() {
                    status = file.read_at(run.offset, &mut buf);
                }
                buffers.push(buf);
            }
            for x in pieces {
                let k = runs.partition_point(|r| r.end() <= x.extent.offset);
                let at = (x.extent.offset - runs[k].offset) as usize;
                outgoing[x.source].extend_from_slice(&buffers[k][at..at + x.extent.len as usize]);
            }
        }
        let incoming = comm.all_to_all_tagged("two_phase_read", outgoing)?;
        let mut cursors = vec![0usize; n];
        for x in mine.iter().filter(|x| x.pass == pass) {
            let at = cursors[x.aggregator];
            let len = x.extent.len as usize;
            let start = x.data_offset as usize;
            out[start..start + len].copy_from_slice(&incoming[x.aggregator][at..at + len]);
            cursors[x.aggregator] += len;
        }
    }
    agree(comm, "read_end", status)?;
    Ok(out)
}

/// Writes `data` (packed in extent order) with one file operation per
/// extent, without coordinating with other participants.
pub fn independent_write(file: &SharedFile, extents: &[Extent], data: &[u8]) -> Result<u64> {
    let total: u64 = extents.iter().map(|e| e.len).sum();
    if total != data.len() as u64 {
        return Err(Error::LayoutMismatch(format!("buffer holds {} bytes, request covers {total}", data.len())));
    }
    let mut at = 0usize;
    for e in extents {
        file.write_at(e.offset, &data[at..at + e.len as usize])?;
        at += e.len as usize;
    }
    Ok(total)
}

/// Reads every extent with one file operation each; the bytes are returned
/// packed in extent order.
pub fn independent_read(file: &SharedFile, extents: &[Extent]) -> Result<Vec<u8>> {
    let total: u64 = extents.iter().map(|e| e.len).sum();
    let mut out = vec![0u8; total as usize];
    let mut at = 0usize;
    for e in extents {
        file.read_at(e.offset, &mut out[at..at + e.len as usize])?;
        at += e.len as usize;
    }
    Ok(out)
}
