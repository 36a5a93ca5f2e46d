//! Learned caches: predictor/selector pairs attached to base-model blocks.

mod arch;
pub mod bundle;
mod explore;
mod knn;
mod metrics;
mod variant;

pub use arch::{default_menu, resolve_menu, ArchSpec};
pub use explore::{explore, layer_taps, CacheData, ExploreConfig, Explored};
pub use knn::{KnnAnswer, KnnCache};
pub use metrics::{parse_metrics, reference_fixture, write_metrics, Confusion, CostModel, VariantMetrics};
pub use variant::{
    build_variant, confusion, default_thresholds, job_seed, label_selector_data, measure_metrics,
    selector_layers, train_predictor, train_selector, train_variant, tune_threshold, CacheTrainConfig,
    CacheVariant, Lookup, TapSample, SELECTOR_HIDDEN,
};
