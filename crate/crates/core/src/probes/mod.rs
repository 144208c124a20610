//! Diagnostics for trained codes: PCA, logistic-regression and neural
//! probes, per-component histograms, swapping, interpolation, retrieval and
//! the S/market correlation check.

mod codes;
mod hist;
mod linear;
mod logreg;
mod market;
mod pca;
mod score;

pub use codes::{interpolate, retrieve, swap, swap_grid};
pub use hist::{separating_components, write_histograms_csv, z_histograms, HistBin};
pub use linear::{linear_probe, LinearProbeConfig};
pub use logreg::{logreg_eval, logreg_fit, LogReg, LogRegConfig};
pub use market::market_correlation;
pub use pca::{pca_fit, pca_project, PcaModel};
pub use score::{
    apply_standardize, classification_score, column_stats, fit_probe, stratified_split, CodeSpace,
    ProbeConfig, ProbeReport,
};
