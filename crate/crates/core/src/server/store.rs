use std::collections::{BTreeMap, HashSet};

use crate::aggregation::{count_cells, CoarseCell, HeatmapCell};
use crate::crypto::HashedInterval;
use crate::redaction::RetentionPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreEntry {
    pub t_idx: i64,
    pub upload_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseEntry {
    pub cell: CoarseCell,
    pub upload_time: u64,
}

/// One region's carrier data. Holds only digests, time indices and upload
/// times: no user identifiers of any kind.
#[derive(Debug, Clone)]
pub struct CarrierStore {
    region: String,
    tau_sec: u64,
    factor_time: u32,
    entries: BTreeMap<HashedInterval, StoreEntry>,
    coarse: Vec<CoarseEntry>,
    seen_batches: HashSet<[u8; 32]>,
    epoch_id: u64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct InsertOutcome {
    pub accepted: usize,
    pub skipped_stale: usize,
    pub coarse_added: usize,
}

impl InsertOutcome {
    pub fn changed(&self) -> bool {
        self.accepted > 0 || self.coarse_added > 0
    }
}

impl CarrierStore {
    pub fn new(region: &str, tau_sec: u64, factor_time: u32) -> Self {
        CarrierStore {
            region: region.to_string(),
            tau_sec,
            factor_time: factor_time.max(1),
            entries: BTreeMap::new(),
            coarse: Vec::new(),
            seen_batches: HashSet::new(),
            epoch_id: 0,
        }
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn epoch_id(&self) -> u64 {
        self.epoch_id
    }

    pub(crate) fn bump_epoch(&mut self) -> u64 {
        self.epoch_id += 1;
        self.epoch_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&HashedInterval, &StoreEntry)> {
        self.entries.iter()
    }

    pub fn coarse_entries(&self) -> &[CoarseEntry] {
        &self.coarse
    }

    pub fn digests(&self) -> Vec<HashedInterval> {
        self.entries.keys().copied().collect()
    }

    pub fn contains(&self, h: &HashedInterval) -> bool {
        self.entries.contains_key(h)
    }

    fn interval_time(&self, t_idx: i64) -> u64 {
        (t_idx.max(0) as u64).saturating_mul(self.tau_sec)
    }

    fn coarse_end_time(&self, cell: &CoarseCell) -> u64 {
        let span = self.factor_time as u64 * self.tau_sec;
        (cell.day_idx.max(0) as u64 + 1).saturating_mul(span)
    }

    /// Deduplicating insert. Intervals collected before `cutoff` are skipped;
    /// the coarse stream of a batch already seen is ignored so re-uploads do
    /// not inflate heatmap counts.
    pub fn insert_batch(
        &mut self,
        intervals: &[(HashedInterval, i64)],
        coarse: &[CoarseCell],
        batch_id: [u8; 32],
        upload_time: u64,
        cutoff: u64,
    ) -> InsertOutcome {
        let mut out = InsertOutcome::default();
        for (digest, t_idx) in intervals {
            if self.interval_time(*t_idx) < cutoff {
                out.skipped_stale += 1;
                continue;
            }
            if !self.entries.contains_key(digest) {
                self.entries.insert(
                    *digest,
                    StoreEntry {
                        t_idx: *t_idx,
                        upload_time,
                    },
                );
                out.accepted += 1;
            }
        }
        if self.seen_batches.insert(batch_id) {
            for cell in coarse {
                if self.coarse_end_time(cell) > cutoff {
                    self.coarse.push(CoarseEntry {
                        cell: *cell,
                        upload_time,
                    });
                    out.coarse_added += 1;
                }
            }
        }
        out
    }

    /// Remove everything whose collection or upload time falls before the
    /// retention cutoff. Returns the number of fine intervals removed plus
    /// coarse cells removed.
    pub fn purge(&mut self, now: u64, policy: &RetentionPolicy) -> usize {
        let cutoff = policy.cutoff(now);
        let before = self.entries.len() + self.coarse.len();
        let tau = self.tau_sec;
        self.entries
            .retain(|_, e| e.upload_time >= cutoff && (e.t_idx.max(0) as u64).saturating_mul(tau) >= cutoff);
        let span = self.factor_time as u64 * self.tau_sec;
        self.coarse
            .retain(|c| c.upload_time >= cutoff && (c.cell.day_idx.max(0) as u64 + 1).saturating_mul(span) > cutoff);
        before - self.entries.len() - self.coarse.len()
    }

    /// Newline-terminated lowercase hex digests in lexicographic order.
    pub fn flatfile(&self) -> String {
        crate::flatfile::export(self.entries.keys())
    }

    /// Heatmap over coarse cells whose time bucket overlaps `[from, to)`.
    pub fn heatmap(&self, from: Option<u64>, to: Option<u64>, k_suppress: u64) -> Vec<HeatmapCell> {
        let span = self.factor_time as u64 * self.tau_sec;
        let cells = self.coarse.iter().map(|c| c.cell).filter(|c| {
            let start = (c.day_idx.max(0) as u64).saturating_mul(span);
            let end = start.saturating_add(span);
            from.is_none_or(|f| end > f) && to.is_none_or(|t| start < t)
        });
        count_cells(cells, k_suppress)
    }
}
