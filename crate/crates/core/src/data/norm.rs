use serde::{Deserialize, Serialize};

use super::table::{ScoreTable, ScoreView};
use crate::error::{FuseError, Result};

/// Per-metric min/max taken from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormState {
    pub fn fit(view: &ScoreView<'_>) -> Result<Self> {
        if view.n_images() == 0 {
            return Err(FuseError::Data("cannot normalize an empty table".into()));
        }
        let m = view.n_metrics();
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        for i in 0..view.n_images() {
            for (j, &x) in view.row(i).iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        let state = NormState { min, max };
        for j in 0..m {
            if state.is_degenerate(j) {
                log::warn!(
                    "metric `{}` is constant; it is passed through as 0.5",
                    view.metric_names()[j]
                );
            }
        }
        Ok(state)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.min.len() != m || self.max.len() != m {
            return Err(FuseError::Shape { expected: m, actual: self.min.len().min(self.max.len()) });
        }
        if self.min.iter().chain(&self.max).any(|v| !v.is_finite()) {
            return Err(FuseError::Parameter("non-finite normalization bound".into()));
        }
        Ok(())
    }

    pub fn is_degenerate(&self, j: usize) -> bool {
        !(self.max[j] > self.min[j])
    }

    pub fn apply(&self, j: usize, x: f64) -> f64 {
        if self.is_degenerate(j) {
            0.5
        } else {
            (x - self.min[j]) / (self.max[j] - self.min[j])
        }
    }

    pub fn invert(&self, j: usize, y: f64) -> f64 {
        if self.is_degenerate(j) {
            self.min[j]
        } else {
            self.min[j] + y * (self.max[j] - self.min[j])
        }
    }

    pub fn apply_row(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().enumerate().map(|(j, &x)| self.apply(j, x)).collect()
    }
}

/// Min-max normalizes every metric. With `state` the given bounds are reused
/// (test time) and outputs may leave `[0, 1]`.
pub fn normalize(table: &ScoreTable, state: Option<&NormState>) -> Result<(ScoreTable, NormState)> {
    let state = match state {
        Some(s) => {
            s.validate(table.n_metrics())?;
            s.clone()
        }
        None => NormState::fit(&table.view())?,
    };
    let rows = (0..table.n_images()).map(|i| state.apply_row(table.row(i))).collect();
    let out = ScoreTable::new(
        table.dataset_name(),
        table.image_ids().to_vec(),
        table.metric_names().to_vec(),
        rows,
        table.mos().map(<[f64]>::to_vec),
    )?;
    Ok((out, state))
}
