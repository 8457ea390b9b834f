//! Coarse, suppression-protected heatmap of carrier activity.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::grid::PointInterval;

/// Coarsening factors and the minimum count a cell needs to be published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub factor_space: u32,
    pub factor_time: u32,
    pub k_suppress: u64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        // ~5.5 km cells, one day per bucket at tau = 300 s
        HeatmapConfig {
            factor_space: 100,
            factor_time: 288,
            k_suppress: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoarseCell {
    pub coarse_x: i32,
    pub coarse_y: i32,
    pub day_idx: i64,
}

impl CoarseCell {
    fn sort_key(&self) -> (i64, i32, i32) {
        (self.day_idx, self.coarse_y, self.coarse_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub coarse_x: i32,
    pub coarse_y: i32,
    pub day_idx: i64,
    #[serde(rename = "count")]
    pub carrier_point_count: u64,
}

/// Floor-divide each index by its factor. Factors below one are treated as one.
pub fn coarsen(pi: &PointInterval, factor_space: u32, factor_time: u32) -> CoarseCell {
    let fs = factor_space.max(1) as i32;
    let ft = factor_time.max(1) as i64;
    CoarseCell {
        coarse_x: pi.cell_x.div_euclid(fs),
        coarse_y: pi.cell_y.div_euclid(fs),
        day_idx: pi.t_idx.div_euclid(ft),
    }
}

/// Count already-coarsened cells, drop the ones under `k_suppress`, and order
/// by `(day_idx, coarse_y, coarse_x)`.
pub fn count_cells<I>(cells: I, k_suppress: u64) -> Vec<HeatmapCell>
where
    I: IntoIterator<Item = CoarseCell>,
{
    let mut counts: BTreeMap<(i64, i32, i32), u64> = BTreeMap::new();
    for c in cells {
        *counts.entry(c.sort_key()).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|(_, n)| *n >= k_suppress.max(1))
        .map(|((day_idx, coarse_y, coarse_x), n)| HeatmapCell {
            coarse_x,
            coarse_y,
            day_idx,
            carrier_point_count: n,
        })
        .collect()
}

pub fn build_heatmap<'a, I>(carrier_intervals: I, cfg: &HeatmapConfig) -> Vec<HeatmapCell>
where
    I: IntoIterator<Item = &'a PointInterval>,
{
    count_cells(
        carrier_intervals
            .into_iter()
            .map(|pi| coarsen(pi, cfg.factor_space, cfg.factor_time)),
        cfg.k_suppress,
    )
}

pub fn write_heatmap_csv<W: Write>(writer: W, cells: &[HeatmapCell]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["coarse_x", "coarse_y", "day_idx", "count"])?;
    for c in cells {
        w.write_record([
            c.coarse_x.to_string(),
            c.coarse_y.to_string(),
            c.day_idx.to_string(),
            c.carrier_point_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
