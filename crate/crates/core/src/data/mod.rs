//! Score tables, normalization, synthetic data and model persistence.

mod norm;
mod persist;
mod synth;
mod table;

pub use norm::{normalize, NormState};
pub use persist::{
    load_model, model_from_str, model_to_string, save_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use synth::{synth_generate, with_uniform_metrics, SynthMetric, SynthSpec};
pub use table::{load_csv, read_csv, save_csv, write_csv, ScoreTable, ScoreView};
