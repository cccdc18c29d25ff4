//! Country fitness and product complexity rankings from bipartite export
//! data, plus analogue-based growth forecasting.
//!
//! The crate is organised around one central object, the binary
//! country-product matrix [`BinaryMatrix`]: a country is linked to a product
//! when it exports it competitively. Everything else consumes that matrix:
//!
//! * [`trade`] ingests raw export tables, computes revealed comparative
//!   advantage and binarizes it into a [`BinaryMatrix`].
//! * [`matrix`] holds the matrix itself, its degree statistics
//!   (diversification, ubiquity) and synthetic generators used in tests
//!   and benchmarks.
//! * [`fitness`] runs the nonlinear fitness/complexity fixed-point
//!   iteration and produces a [`RankingResult`].
//! * [`eci`] runs the linear iterated-averaging index (ECI/PCI) in both
//!   its iterated and spectral formulations.
//! * [`forecast`] builds the (log fitness, log GDP per capita) panel,
//!   forecasts h-year growth by the method of analogues, classifies
//!   laminar/chaotic regimes and backtests out of sample.

pub mod eci;
pub mod fitness;
pub mod forecast;
pub mod matrix;
pub mod trade;
mod util;

pub use eci::{eci_fixed_point, eci_spectral, EciError, EciResult};
pub use fitness::{
    fitness_fixed_point, spectroscopy, IterationOptions, RankingResult, SolverError,
};
pub use forecast::{
    backtest, build_panel, classify_regime, evaluate, find_analogues, forecast_sps,
    forecast_sps_trend, EvaluationReport, Forecast, ForecastError, PanelDataset, PanelPoint,
    Regime, SpsOptions,
};
pub use matrix::{BinaryMatrix, MatrixError, MatrixMetadata};
pub use trade::{binarize, rca, ExportRecord, ExportTable, RcaMatrix, TradeError};
