//! Synthetic rectangle images, CAPM market panels, daily return panels and
//! the windowing / measures that turn panels into labelled samples.

mod capm;
mod measures;
mod panel;
mod samples;
pub mod synth;

pub use capm::{gen_capm, AssetSeries, CapmConfig, MarketPanel, Period};
pub use measures::{
    beta_rho, compute_measures, discretize_quartiles, measures_at, realized_vol, Measures,
    QuantileBins, StockMeasures, YEAR_DAYS,
};
pub use panel::{
    load_returns_csv, simulate_daily_panel, weekdays, window_quarters, DailyPanelConfig,
    QuarterSpan, RawPanel, WindowReport,
};
pub use samples::{augment_noise, Meta, SampleSet};
pub use synth::{gen_synth1, gen_synth2, latent_ids, RectGeometry};
