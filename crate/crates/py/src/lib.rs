//! Python bindings: the binary country-product matrix, both ranking
//! algorithms, spectroscopy and the analogue growth forecaster.
//!
//! Build with `cargo build -p fitness-rank-py --release`; the resulting
//! `libfitness_rank_py.so` imports as the module `fitness_rank_py` once
//! renamed (see `python/smoke_test.py` for a loader that does this).

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fitness_rank::eci;
use fitness_rank::fitness;
use fitness_rank::forecast;
use fitness_rank::matrix;
use fitness_rank::trade;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Binary country-product matrix.
#[pyclass(name = "BinaryMatrix", module = "fitness_rank_py")]
struct PyBinaryMatrix {
    inner: matrix::BinaryMatrix,
}

#[pymethods]
impl PyBinaryMatrix {
    /// Build from explicit 0/1 rows; all-zero rows and columns are pruned.
    #[new]
    fn new(countries: Vec<String>, products: Vec<String>, rows: Vec<Vec<u8>>) -> PyResult<Self> {
        matrix::BinaryMatrix::new(countries, products, rows, matrix::MatrixMetadata::default())
            .map(|inner| PyBinaryMatrix { inner })
            .map_err(err)
    }

    /// Parse the CSV form (header `country,<product ids...>`, 0/1 cells).
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(err)?;
        matrix::BinaryMatrix::from_csv_reader(&bytes[..])
            .map(|inner| PyBinaryMatrix { inner })
            .map_err(err)
    }

    /// Perfectly nested staircase matrix.
    #[staticmethod]
    fn nested(c: usize, p: usize) -> PyResult<Self> {
        matrix::generate_nested(c, p)
            .map(|inner| PyBinaryMatrix { inner })
            .map_err(err)
    }

    /// Staircase with seeded random cell flips.
    #[staticmethod]
    fn noisy_nested(c: usize, p: usize, flip_prob: f64, seed: u64) -> PyResult<Self> {
        matrix::generate_noisy_nested(c, p, flip_prob, seed)
            .map(|inner| PyBinaryMatrix { inner })
            .map_err(err)
    }

    /// The two-country teaching fixture (A exports q1..q10, B only q6).
    #[staticmethod]
    fn fig1() -> Self {
        PyBinaryMatrix {
            inner: matrix::fig1_fixture(),
        }
    }

    #[getter]
    fn countries(&self) -> Vec<String> {
        self.inner.countries().to_vec()
    }

    #[getter]
    fn products(&self) -> Vec<String> {
        self.inner.products().to_vec()
    }

    fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.inner.n_countries())
            .map(|i| self.inner.row(i).to_vec())
            .collect()
    }

    fn diversification(&self) -> Vec<u32> {
        self.inner.diversification()
    }

    fn ubiquity(&self) -> Vec<u32> {
        self.inner.ubiquity()
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.inner.to_csv_string()).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "BinaryMatrix({} countries x {} products, {} ones)",
            self.inner.n_countries(),
            self.inner.n_products(),
            self.inner.ones_count()
        )
    }
}

/// Converged fitness/complexity values.
#[pyclass(name = "RankingResult", module = "fitness_rank_py")]
struct PyRankingResult {
    inner: fitness::RankingResult,
}

#[pymethods]
impl PyRankingResult {
    #[getter]
    fn fitness(&self) -> BTreeMap<String, f64> {
        self.inner.fitness.clone()
    }

    #[getter]
    fn complexity(&self) -> BTreeMap<String, f64> {
        self.inner.complexity.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations_used
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    /// Countries best-first as (identifier, value, rank) triples.
    fn country_ranking(&self) -> Vec<(String, f64, u32)> {
        self.inner
            .country_ranking()
            .into_iter()
            .map(|e| (e.entity, e.value, e.rank))
            .collect()
    }

    fn product_ranking(&self) -> Vec<(String, f64, u32)> {
        self.inner
            .product_ranking()
            .into_iter()
            .map(|e| (e.entity, e.value, e.rank))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "RankingResult({} countries, {} products, iterations={}, converged={})",
            self.inner.fitness.len(),
            self.inner.complexity.len(),
            self.inner.iterations_used,
            self.inner.converged
        )
    }
}

/// Standardized ECI/PCI values.
#[pyclass(name = "EciResult", module = "fitness_rank_py")]
struct PyEciResult {
    inner: eci::EciResult,
}

#[pymethods]
impl PyEciResult {
    #[getter]
    fn eci(&self) -> BTreeMap<String, f64> {
        self.inner.eci.clone()
    }

    #[getter]
    fn pci(&self) -> BTreeMap<String, f64> {
        self.inner.pci.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations_used
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn country_ranking(&self) -> Vec<(String, f64, u32)> {
        self.inner
            .country_ranking()
            .into_iter()
            .map(|e| (e.entity, e.value, e.rank))
            .collect()
    }

    fn product_ranking(&self) -> Vec<(String, f64, u32)> {
        self.inner
            .product_ranking()
            .into_iter()
            .map(|e| (e.entity, e.value, e.rank))
            .collect()
    }
}

/// Run the nonlinear fitness/complexity fixed point.
#[pyfunction]
#[pyo3(signature = (m, tolerance=1e-10, max_iterations=1000, rank_stability_window=10))]
fn fitness_ranking(
    m: &PyBinaryMatrix,
    tolerance: f64,
    max_iterations: usize,
    rank_stability_window: usize,
) -> PyResult<PyRankingResult> {
    let opts = fitness::IterationOptions {
        max_iterations,
        tolerance,
        rank_stability_window,
    };
    fitness::fitness_fixed_point(&m.inner, &opts)
        .map(|inner| PyRankingResult { inner })
        .map_err(err)
}

/// Run the iterated-averaging index.
#[pyfunction]
#[pyo3(signature = (m, tolerance=1e-10, max_iterations=1000))]
fn eci_ranking(m: &PyBinaryMatrix, tolerance: f64, max_iterations: usize) -> PyResult<PyEciResult> {
    let opts = fitness::IterationOptions {
        max_iterations,
        tolerance,
        ..fitness::IterationOptions::default()
    };
    eci::eci_fixed_point(&m.inner, &opts)
        .map(|inner| PyEciResult { inner })
        .map_err(err)
}

/// Spectral formulation of the same index.
#[pyfunction]
fn eci_spectral(m: &PyBinaryMatrix) -> PyResult<PyEciResult> {
    eci::eci_spectral(&m.inner)
        .map(|inner| PyEciResult { inner })
        .map_err(err)
}

/// One country-side averaging step against explicit product scores
/// (aligned with `m.products`).
#[pyfunction]
fn eci_average_step(m: &PyBinaryMatrix, product_scores: Vec<f64>) -> PyResult<Vec<f64>> {
    eci::eci_country_step(&m.inner, &product_scores).map_err(err)
}

/// Exogenous complexities 1..10 for the fig1 fixture's products.
#[pyfunction]
fn fig1_complexities() -> Vec<f64> {
    matrix::fig1_complexities()
}

/// A country's exported products sorted by ascending complexity, each with
/// its global rank.
#[pyfunction]
fn spectroscopy(
    m: &PyBinaryMatrix,
    ranking: &PyRankingResult,
    country: &str,
) -> PyResult<Vec<(String, f64, u32)>> {
    fitness::spectroscopy(&m.inner, &ranking.inner, country)
        .map(|entries| {
            entries
                .into_iter()
                .map(|e| (e.product, e.complexity, e.rank))
                .collect()
        })
        .map_err(err)
}

/// Parse an export CSV, compute RCA for one year and binarize it.
#[pyfunction]
#[pyo3(signature = (path, year, threshold=1.0))]
fn ingest_exports(path: &str, year: i32, threshold: f64) -> PyResult<PyBinaryMatrix> {
    let bytes = std::fs::read(path).map_err(err)?;
    let table = trade::parse_export_table(&bytes[..]).map_err(err)?;
    let rca = trade::rca(&table, year).map_err(err)?;
    trade::binarize(&rca, threshold)
        .map(|inner| PyBinaryMatrix { inner })
        .map_err(err)
}

/// The (log fitness, log GDP per capita) panel with analogue forecasting.
#[pyclass(name = "Panel", module = "fitness_rank_py")]
struct PyPanel {
    inner: forecast::PanelDataset,
}

fn sps_options(k: usize, laminar_threshold: f64, blend: f64) -> forecast::SpsOptions {
    forecast::SpsOptions {
        k,
        laminar_threshold,
        blend,
    }
}

fn forecast_dict<'py>(py: Python<'py>, f: &forecast::Forecast) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("country", &f.country)?;
    d.set_item("base_year", f.base_year)?;
    d.set_item("predicted_growth", f.predicted_growth)?;
    d.set_item("analogue_count", f.analogue_count)?;
    d.set_item("dispersion", f.dispersion)?;
    d.set_item("regime", f.regime.to_string())?;
    d.set_item("analogue_shortfall", f.analogue_shortfall)?;
    d.set_item("trend_fallback", f.trend_fallback)?;
    Ok(d)
}

fn report_dict<'py>(
    py: Python<'py>,
    r: &forecast::EvaluationReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mae", r.mae)?;
    d.set_item("rmse", r.rmse)?;
    d.set_item("ci_mae", r.ci_mae)?;
    d.set_item("ci_rmse", r.ci_rmse)?;
    d.set_item("n", r.n)?;
    let regimes = PyDict::new(py);
    for (regime, stats) in &r.per_regime {
        let s = PyDict::new(py);
        s.set_item("mae", stats.mae)?;
        s.set_item("rmse", stats.rmse)?;
        s.set_item("n", stats.n)?;
        regimes.set_item(regime.to_string(), s)?;
    }
    d.set_item("per_regime", regimes)?;
    Ok(d)
}

#[pymethods]
impl PyPanel {
    /// Build from (country, year, log_fitness, log_gdppc) tuples.
    #[new]
    #[pyo3(signature = (points, horizon=5))]
    fn new(points: Vec<(String, i32, f64, f64)>, horizon: u32) -> PyResult<Self> {
        let points = points
            .into_iter()
            .map(|(country, year, log_fitness, log_gdppc)| forecast::PanelPoint {
                country,
                year,
                log_fitness,
                log_gdppc,
            })
            .collect();
        forecast::PanelDataset::from_points(points, horizon)
            .map(|inner| PyPanel { inner })
            .map_err(err)
    }

    #[getter]
    fn horizon(&self) -> u32 {
        self.inner.horizon()
    }

    fn __len__(&self) -> usize {
        self.inner.points().len()
    }

    /// Observed h-year displacement, if both endpoints exist.
    fn displacement(&self, country: &str, year: i32) -> Option<f64> {
        self.inner.displacement(country, year)
    }

    /// Out-of-sample forecast for a panel member; cutoff defaults to the
    /// base year. Returns {"sps": {...}, "sps_trend": {...}}.
    #[pyo3(signature = (country, base_year, k=20, laminar_threshold=0.1, blend=0.5, cutoff_year=None))]
    #[allow(clippy::too_many_arguments)]
    fn forecast<'py>(
        &self,
        py: Python<'py>,
        country: &str,
        base_year: i32,
        k: usize,
        laminar_threshold: f64,
        blend: f64,
        cutoff_year: Option<i32>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let query = self
            .inner
            .point(country, base_year)
            .ok_or_else(|| PyValueError::new_err(format!("no panel point for {country} in {base_year}")))?
            .clone();
        let opts = sps_options(k, laminar_threshold, blend);
        let cutoff = cutoff_year.unwrap_or(base_year);
        let sps = forecast::forecast_sps(&self.inner, &query, &opts, cutoff).map_err(err)?;
        let trend = forecast::forecast_sps_trend(&self.inner, &query, &opts, cutoff).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("sps", forecast_dict(py, &sps)?)?;
        out.set_item("sps_trend", forecast_dict(py, &trend)?)?;
        Ok(out)
    }

    /// Strictly out-of-sample backtest; optional baseline maps
    /// (country, base_year) -> predicted growth.
    #[pyo3(signature = (k=20, laminar_threshold=0.1, blend=0.5, baseline=None))]
    fn backtest<'py>(
        &self,
        py: Python<'py>,
        k: usize,
        laminar_threshold: f64,
        blend: f64,
        baseline: Option<BTreeMap<(String, i32), f64>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = sps_options(k, laminar_threshold, blend);
        let report = forecast::backtest(&self.inner, &opts, baseline.as_ref()).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("sps", report_dict(py, &report.sps)?)?;
        out.set_item("sps_trend", report_dict(py, &report.sps_trend)?)?;
        match &report.baseline {
            Some(b) => out.set_item("baseline", report_dict(py, b)?)?,
            None => out.set_item("baseline", py.None())?,
        }
        out.set_item("n_records", report.records.len())?;
        Ok(out)
    }
}

#[pymodule]
fn fitness_rank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBinaryMatrix>()?;
    m.add_class::<PyRankingResult>()?;
    m.add_class::<PyEciResult>()?;
    m.add_class::<PyPanel>()?;
    m.add_function(wrap_pyfunction!(fitness_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(eci_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(eci_spectral, m)?)?;
    m.add_function(wrap_pyfunction!(eci_average_step, m)?)?;
    m.add_function(wrap_pyfunction!(fig1_complexities, m)?)?;
    m.add_function(wrap_pyfunction!(spectroscopy, m)?)?;
    m.add_function(wrap_pyfunction!(ingest_exports, m)?)?;
    Ok(())
}
