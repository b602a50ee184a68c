use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of aggregators used by collective I/O.
pub const HINT_AGGREGATORS: &str = "cb_nodes";
/// Staging buffer size per aggregator, in bytes.
pub const HINT_BUFFER_SIZE: &str = "cb_buffer_size";
/// Extra bytes reserved after the header when the layout is computed.
pub const HINT_HEADER_PAD: &str = "nc_header_pad";
/// Whether collective data calls cross-check their arguments.
pub const HINT_CHECK_COLLECTIVE: &str = "nc_check_collective";
/// Comma-separated ids of record variables accessed together. Reserved:
/// accepted and validated, not yet used for cross-request batching.
pub const HINT_RECORD_BATCH: &str = "record_batch";

pub const DEFAULT_BUFFER_SIZE: u64 = 4 * 1024 * 1024;
pub const DEFAULT_MAX_AGGREGATORS: usize = 4;

/// String key/value hints. Unknown keys are kept and ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HintSet {
    entries: BTreeMap<String, String>,
}

impl HintSet {
    pub fn new() -> Self {
        HintSet::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.trim().parse().map(Some).map_err(|_| Error::BadHint {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    /// Aggregator count for a group of `group_size`: the hint clamped to
    /// `1..=group_size`, or `min(group_size, 4)`.
    pub fn aggregators(&self, group_size: usize) -> Result<usize> {
        let requested = self
            .parsed::<usize>(HINT_AGGREGATORS)?
            .unwrap_or(DEFAULT_MAX_AGGREGATORS.min(group_size));
        Ok(requested.clamp(1, group_size))
    }

    pub fn buffer_size(&self) -> Result<u64> {
        match self.parsed::<u64>(HINT_BUFFER_SIZE)? {
            Some(0) => Err(Error::BadHint { key: HINT_BUFFER_SIZE.into(), value: "0".into() }),
            Some(n) => Ok(n),
            None => Ok(DEFAULT_BUFFER_SIZE),
        }
    }

    pub fn header_pad(&self) -> Result<u64> {
        Ok(self.parsed(HINT_HEADER_PAD)?.unwrap_or(0))
    }

    pub fn check_collective(&self) -> Result<bool> {
        Ok(self.parsed(HINT_CHECK_COLLECTIVE)?.unwrap_or(cfg!(debug_assertions)))
    }

    pub fn record_batch(&self) -> Result<Vec<usize>> {
        let Some(raw) = self.get(HINT_RECORD_BATCH) else {
            return Ok(Vec::new());
        };
        raw.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim().parse().map_err(|_| Error::BadHint {
                    key: HINT_RECORD_BATCH.into(),
                    value: raw.to_string(),
                })
            })
            .collect()
    }
}

impl<K: ToString, V: ToString> FromIterator<(K, V)> for HintSet {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        HintSet {
            entries: iter.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let h = HintSet::new();
        assert_eq!(h.aggregators(8).unwrap(), 4);
        assert_eq!(h.aggregators(2).unwrap(), 2);
        assert_eq!(h.buffer_size().unwrap(), 4 << 20);
        assert_eq!(h.header_pad().unwrap(), 0);
        assert!(h.record_batch().unwrap().is_empty());
    }

    #[test]
    fn recognized_and_unknown_keys() {
        let h: HintSet = [("cb_nodes", "9"), ("striping_factor", "whatever"), ("record_batch", "2, 0,5")]
            .into_iter()
            .collect();
        assert_eq!(h.aggregators(4).unwrap(), 4);
        assert_eq!(h.get("striping_factor"), Some("whatever"));
        assert_eq!(h.record_batch().unwrap(), vec![2, 0, 5]);
        let bad = HintSet::new().with(HINT_BUFFER_SIZE, "lots");
        assert!(matches!(bad.buffer_size(), Err(Error::BadHint { .. })));
    }
}
