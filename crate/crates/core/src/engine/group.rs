//! In-process participant groups.
//!
//! Every participant runs on its own thread and holds a [`Comm`] handle.
//! Collective calls are numbered per participant; the n-th collective call
//! of every participant meets in the same rendezvous round. A round whose
//! participants disagree on the kind of call, or which a participant can no
//! longer reach because its body already returned, fails with
//! [`Error::CollectiveMismatch`] on every waiting participant.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use super::stats::EngineStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum OpKind {
    Barrier,
    Broadcast,
    AllMatch,
    AllGather,
    AllToAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CallId {
    kind: OpKind,
    tag: &'static str,
}

struct Round {
    calls: Vec<Option<CallId>>,
    payloads: Vec<Vec<Vec<u8>>>,
    arrived: usize,
    outcome: Option<Result<()>>,
    readers_left: usize,
}

struct State {
    rounds: HashMap<u64, Round>,
    /// For participants whose body has returned: how many collective calls
    /// they made.
    departed: Vec<Option<u64>>,
}

struct Shared {
    size: usize,
    state: Mutex<State>,
    cv: Condvar,
    stats: Arc<EngineStats>,
    timeout: Option<Duration>,
}

/// Options for [`spawn_with`].
#[derive(Debug, Clone, Default)]
pub struct GroupOptions {
    /// Upper bound on the time a participant waits in one collective call.
    pub timeout: Option<Duration>,
}

/// One participant's handle on its group.
#[derive(Clone)]
pub struct Comm {
    rank: usize,
    shared: Arc<Shared>,
    calls: Arc<AtomicU64>,
}

impl std::fmt::Debug for Comm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Comm")
            .field("rank", &self.rank)
            .field("size", &self.shared.size)
            .finish()
    }
}

/// Runs `body` on `n` participants concurrently and returns their results in
/// rank order.
pub fn spawn<T, F>(n: usize, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Comm) -> T + Sync,
{
    spawn_with(n, GroupOptions::default(), body)
}

pub fn spawn_with<T, F>(n: usize, options: GroupOptions, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Comm) -> T + Sync,
{
    if n == 0 {
        return Err(Error::InvalidSchema("a group needs at least one participant".into()));
    }
    let shared = Arc::new(Shared {
        size: n,
        state: Mutex::new(State { rounds: HashMap::new(), departed: vec![None; n] }),
        cv: Condvar::new(),
        stats: Arc::new(EngineStats::default()),
        timeout: options.timeout,
    });
    let body = &body;
    let outcomes: Vec<thread::Result<T>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|rank| {
                let comm = Comm { rank, shared: shared.clone(), calls: Arc::new(AtomicU64::new(0)) };
                thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .spawn_scoped(scope, move || {
                        let _departure = Departure(comm.clone());
                        panic::catch_unwind(AssertUnwindSafe(|| body(comm)))
                    })
                    .expect("failed to spawn participant thread")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(Err))
            .collect()
    });
    let mut results = Vec::with_capacity(n);
    for (rank, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(value) => results.push(value),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "non-string panic payload".into());
                return Err(Error::BodyPanic(format!("rank {rank}: {msg}")));
            }
        }
    }
    Ok(results)
}

/// Marks a participant as departed when its body returns or unwinds.
struct Departure(Comm);

impl Drop for Departure {
    fn drop(&mut self) {
        let comm = &self.0;
        let mut state = comm.lock();
        state.departed[comm.rank] = Some(comm.calls.load(Ordering::SeqCst));
        drop(state);
        comm.shared.cv.notify_all();
    }
}

impl Comm {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0
    }

    /// Counters shared by every participant of the group.
    pub fn stats(&self) -> &Arc<EngineStats> {
        &self.shared.stats
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        // A panicking participant never holds the lock across user code.
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks until every participant has called `barrier`.
    pub fn barrier(&self) -> Result<()> {
        self.exchange(OpKind::Barrier, "barrier", Vec::new(), |_, _| ())
    }

    /// Returns the root's `data` on every participant; other participants'
    /// `data` is ignored.
    pub fn broadcast(&self, data: Vec<u8>) -> Result<Vec<u8>> {
        self.broadcast_tagged("broadcast", data)
    }

    pub(crate) fn broadcast_tagged(&self, tag: &'static str, data: Vec<u8>) -> Result<Vec<u8>> {
        let payload = if self.is_root() { vec![data] } else { Vec::new() };
        self.exchange(OpKind::Broadcast, tag, payload, |payloads, _| payloads[0][0].clone())
    }

    /// True on every participant iff all digests are byte-wise equal.
    pub fn all_match(&self, digest: &[u8]) -> Result<bool> {
        self.all_match_tagged("all_match", digest)
    }

    pub(crate) fn all_match_tagged(&self, tag: &'static str, digest: &[u8]) -> Result<bool> {
        self.exchange(OpKind::AllMatch, tag, vec![digest.to_vec()], |payloads, _| {
            payloads.windows(2).all(|w| w[0] == w[1])
        })
    }

    /// Every participant's item, in rank order, on every participant.
    pub fn all_gather(&self, item: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        self.all_gather_tagged("all_gather", item)
    }

    pub(crate) fn all_gather_tagged(&self, tag: &'static str, item: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        self.exchange(OpKind::AllGather, tag, vec![item], |payloads, _| {
            payloads.iter().map(|p| p[0].clone()).collect()
        })
    }

    /// Sends `items[j]` to participant `j`; returns what each participant
    /// sent to this one, in rank order.
    pub fn all_to_all(&self, items: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        self.all_to_all_tagged("all_to_all", items)
    }

    pub(crate) fn all_to_all_tagged(&self, tag: &'static str, items: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        if items.len() != self.size() {
            return Err(Error::CollectiveMismatch(format!(
                "all_to_all needs {} items, got {}",
                self.size(),
                items.len()
            )));
        }
        self.exchange(OpKind::AllToAll, tag, items, |payloads, me| {
            payloads.iter_mut().map(|p| std::mem::take(&mut p[me])).collect()
        })
    }

    /// Deposits `payload` in this participant's next round, waits for the
    /// round to complete and extracts this participant's result with `take`.
    fn exchange<R>(
        &self,
        kind: OpKind,
        tag: &'static str,
        payload: Vec<Vec<u8>>,
        take: impl FnOnce(&mut [Vec<Vec<u8>>], usize) -> R,
    ) -> Result<R> {
        let n = self.size();
        let round_id = self.calls.fetch_add(1, Ordering::SeqCst);
        let me = self.rank;
        let mut state = self.lock();
        let round = state.rounds.entry(round_id).or_insert_with(|| Round {
            calls: vec![None; n],
            payloads: vec![Vec::new(); n],
            arrived: 0,
            outcome: None,
            readers_left: n,
        });
        round.calls[me] = Some(CallId { kind, tag });
        round.payloads[me] = payload;
        round.arrived += 1;
        if round.arrived == n && round.outcome.is_none() {
            let first = round.calls[0];
            round.outcome = Some(if round.calls.iter().all(|c| *c == first) {
                self.shared.stats.count_collective(kind);
                Ok(())
            } else {
                Err(Error::CollectiveMismatch(format!(
                    "collective call #{round_id} differs across ranks: {}",
                    describe_calls(&round.calls)
                )))
            });
            self.shared.cv.notify_all();
        }

        let deadline = self.shared.timeout.map(|t| Instant::now() + t);
        loop {
            let departed = state
                .departed
                .iter()
                .enumerate()
                .find(|(_, d)| d.is_some_and(|calls| calls <= round_id))
                .map(|(r, _)| r);
            let round = state.rounds.get_mut(&round_id).expect("round exists until all readers leave");
            if round.outcome.is_none() {
                if let Some(r) = departed {
                    round.outcome = Some(Err(Error::CollectiveMismatch(format!(
                        "rank {r} finished without reaching collective call #{round_id} ({:?})",
                        kind
                    ))));
                    self.shared.cv.notify_all();
                }
            }
            if let Some(outcome) = round.outcome.clone() {
                let result = outcome.map(|()| take(&mut round.payloads, me));
                round.readers_left -= 1;
                // Readers of a failed round may include ranks that never
                // arrived; the round is dropped once every arrived rank read.
                let done = round.readers_left == 0
                    || (round.outcome.as_ref().is_some_and(|o| o.is_err())
                        && round.readers_left <= n - round.arrived);
                if done {
                    state.rounds.remove(&round_id);
                }
                return result;
            }
            state = match deadline {
                None => self.shared.cv.wait(state).unwrap_or_else(|e| e.into_inner()),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        let round = state.rounds.get_mut(&round_id).unwrap();
                        round.outcome = Some(Err(Error::CollectiveMismatch(format!(
                            "timed out in collective call #{round_id} ({kind:?})"
                        ))));
                        self.shared.cv.notify_all();
                        continue;
                    }
                    self.shared
                        .cv
                        .wait_timeout(state, deadline - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
            };
        }
    }
}

fn describe_calls(calls: &[Option<CallId>]) -> String {
    calls
        .iter()
        .enumerate()
        .map(|(r, c)| match c {
            Some(c) => format!("rank {r}: {:?}({})", c.kind, c.tag),
            None => format!("rank {r}: absent"),
        })
        .collect::<Vec<_>>()
        .join(", ")
}
