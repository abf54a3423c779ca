//! Rank normalization of score columns and test-time rank lookup.

use serde::{Deserialize, Serialize};

use crate::data::ScoreView;
use crate::error::{FuseError, Result};
use crate::evaluate::srcc;

/// 1-based ranks with ties sharing the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// `r = R / N` with `R` the ascending average rank.
pub fn rank_normalize(column: &[f64]) -> Result<Vec<f64>> {
    if column.is_empty() {
        return Err(FuseError::Data("cannot rank an empty column".into()));
    }
    if let Some(i) = column.iter().position(|v| !v.is_finite()) {
        return Err(FuseError::Data(format!("non-finite score at row {i}")));
    }
    let n = column.len() as f64;
    Ok(average_ranks(column).into_iter().map(|r| r / n).collect())
}

/// Sorted training scores per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankState {
    pub sorted: Vec<Vec<f64>>,
    pub n: usize,
}

impl RankState {
    pub fn fit(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(FuseError::Data("rank state needs at least one training row".into()));
        }
        let mut sorted = Vec::with_capacity(columns.len());
        for col in columns {
            if col.len() != n {
                return Err(FuseError::Shape { expected: n, actual: col.len() });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(FuseError::Data("non-finite training score".into()));
            }
            let mut s = col.clone();
            s.sort_by(f64::total_cmp);
            sorted.push(s);
        }
        Ok(RankState { sorted, n })
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.sorted.len() != m {
            return Err(FuseError::Shape { expected: m, actual: self.sorted.len() });
        }
        for s in &self.sorted {
            if s.len() != self.n || self.n == 0 {
                return Err(FuseError::Shape { expected: self.n, actual: s.len() });
            }
            if s.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(FuseError::Parameter("rank state column is not sorted".into()));
            }
        }
        Ok(())
    }

    /// Interpolated empirical CDF of the training scores, clamped to
    /// `[1/(N+1), 1]`.
    pub fn lookup(&self, metric: usize, score: f64) -> f64 {
        let s = &self.sorted[metric];
        let n = self.n as f64;
        let floor = 1.0 / (n + 1.0);
        // number of training scores <= score
        let k = s.partition_point(|&v| v <= score);
        if k == 0 {
            return floor;
        }
        if k == s.len() {
            return 1.0;
        }
        let (lo, hi) = (s[k - 1], s[k]);
        let frac = (score - lo) / (hi - lo);
        ((k as f64 + frac) / n).max(floor)
    }
}

/// Free-function form of [`RankState::lookup`].
pub fn rank_lookup(state: &RankState, metric: usize, score: f64) -> f64 {
    state.lookup(metric, score)
}

/// Per-image mean of normalized ranks, each column's polarity aligned with
/// the first usable column by the sign of their rank correlation.
pub fn mean_rank_baseline(view: &ScoreView<'_>) -> Result<Vec<f64>> {
    let m = view.n_metrics();
    let n = view.n_images();
    if m < 2 {
        return Err(FuseError::Data("mean-rank baseline needs at least two metrics".into()));
    }
    let mut reference: Option<Vec<f64>> = None;
    let mut sum = vec![0.0; n];
    let mut used = 0usize;
    for j in 0..m {
        let col = view.column(j);
        if col.iter().all(|&v| v == col[0]) {
            log::warn!("metric `{}` has zero variance; skipped", view.metric_names()[j]);
            continue;
        }
        let mut ranks = rank_normalize(&col)?;
        match &reference {
            None => reference = Some(ranks.clone()),
            Some(r) => {
                if srcc(r, &ranks)? < 0.0 {
                    let top = 1.0 + 1.0 / n as f64;
                    ranks.iter_mut().for_each(|v| *v = top - *v);
                }
            }
        }
        for (s, r) in sum.iter_mut().zip(&ranks) {
            *s += r;
        }
        used += 1;
    }
    if used == 0 {
        return Err(FuseError::Data("every metric column is constant".into()));
    }
    Ok(sum.into_iter().map(|s| s / used as f64).collect())
}
