//! Greedy base-view selection over per-camera visibility sets.
//!
//! The first base view is the camera seeing the most splats. Each further
//! pick maximizes `|G_t \ covered| / (|G_t ∩ covered| + 1)` among cameras not
//! yet selected; ties go to the smallest camera id. Scores are compared as
//! exact integer fractions.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterizer::VisibilitySet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub k: usize,
    pub base_view_ids: Vec<u32>,
    /// `|covered|` after each pick.
    pub covered_trace: Vec<usize>,
    /// Score of each pick; the first pick is scored by its set size.
    pub scores: Vec<f64>,
}

/// Score `new / (overlap + 1)` kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PickScore {
    pub new: u64,
    pub overlap: u64,
}

impl PickScore {
    pub fn value(self) -> f64 {
        self.new as f64 / (self.overlap + 1) as f64
    }
}

impl Ord for PickScore {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.new * (other.overlap + 1)).cmp(&(other.new * (self.overlap + 1)))
    }
}

impl PartialOrd for PickScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn score(set: &VisibilitySet, covered: &HashSet<u32>) -> PickScore {
    let overlap = set.members.iter().filter(|m| covered.contains(m)).count() as u64;
    PickScore {
        new: set.members.len() as u64 - overlap,
        overlap,
    }
}

pub fn decompose(visibility: &[VisibilitySet], k: usize) -> Result<Decomposition> {
    if visibility.is_empty() {
        return Err(Error::InvalidArgument("empty visibility list".into()));
    }
    if k < 1 || k > visibility.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} outside [1, {}]",
            visibility.len()
        )));
    }
    let mut ids = HashSet::new();
    if !visibility.iter().all(|v| ids.insert(v.camera_id)) {
        return Err(Error::InvalidArgument("duplicate camera ids in visibility list".into()));
    }

    // Candidates scanned in ascending id so the first strict maximum wins ties.
    let mut order: Vec<usize> = (0..visibility.len()).collect();
    order.sort_by_key(|&i| visibility[i].camera_id);

    let mut selected = vec![false; visibility.len()];
    let mut covered: HashSet<u32> = HashSet::new();
    let mut out = Decomposition {
        k,
        base_view_ids: Vec::with_capacity(k),
        covered_trace: Vec::with_capacity(k),
        scores: Vec::with_capacity(k),
    };

    for pick in 0..k {
        let mut best: Option<(usize, PickScore)> = None;
        for &i in &order {
            if selected[i] {
                continue;
            }
            let s = if pick == 0 {
                PickScore {
                    new: visibility[i].len() as u64,
                    overlap: 0,
                }
            } else {
                score(&visibility[i], &covered)
            };
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, s) = best.expect("K <= number of cameras");
        selected[i] = true;
        covered.extend(visibility[i].members.iter().copied());
        out.base_view_ids.push(visibility[i].camera_id);
        out.covered_trace.push(covered.len());
        out.scores.push(if pick == 0 { s.new as f64 } else { s.value() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Covered fraction of all splats after each pick.
    pub covered_fraction: Vec<f64>,
    /// `|G_bi ∩ G_bj|` for base views `i, j`; the diagonal holds set sizes.
    pub overlap: Vec<Vec<usize>>,
}

pub fn coverage_report(
    decomposition: &Decomposition,
    visibility: &[VisibilitySet],
    total_splats: usize,
) -> CoverageReport {
    let sets: Vec<HashSet<u32>> = decomposition
        .base_view_ids
        .iter()
        .map(|id| {
            visibility
                .iter()
                .find(|v| v.camera_id == *id)
                .map(|v| v.members.iter().copied().collect())
                .unwrap_or_default()
        })
        .collect();
    let mut covered = HashSet::new();
    let covered_fraction = sets
        .iter()
        .map(|s| {
            covered.extend(s.iter().copied());
            covered.len() as f64 / total_splats.max(1) as f64
        })
        .collect();
    let overlap = sets
        .iter()
        .map(|a| sets.iter().map(|b| a.intersection(b).count()).collect())
        .collect();
    CoverageReport {
        covered_fraction,
        overlap,
    }
}
