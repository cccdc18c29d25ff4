//! Growth forecasting by the method of analogues, with laminar/chaotic
//! predictability grading and out-of-sample backtesting.
//!
//! Each (country, year) is a point in the (log fitness, log GDP per capita)
//! plane. To forecast a country's next h years, look at where the plane's
//! other occupants were when they sat near the query point, and average what
//! happened to them next. Where those historical displacements agree the
//! flow is laminar and the forecast is trustworthy; where they scatter the
//! dynamics is chaotic and the forecast carries little confidence. The
//! dispersion of the analogue displacements, thresholded, is the grade.
//!
//! Backtests are strictly out of sample: an analogue is only usable when its
//! displacement was fully observed by the forecast's base year, and a
//! country is never its own analogue.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::RankingResult;
use crate::util;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("horizon must be >= 1")]
    InvalidHorizon,
    #[error("k must be >= 1")]
    InvalidK,
    #[error("blend must lie in [0, 1], got {0}")]
    InvalidBlend(f64),
    #[error("laminar threshold must be positive and finite, got {0}")]
    InvalidLaminarThreshold(f64),
    #[error("empty panel")]
    EmptyPanel,
    #[error("need at least two ranked years")]
    InsufficientYears,
    #[error("duplicate panel point for {country} in {year}")]
    DuplicatePoint { country: String, year: i32 },
    #[error("non-finite coordinates for {country} in {year}")]
    NonFinite { country: String, year: i32 },
    #[error("non-positive gdppc for {country} in {year}")]
    NonPositiveGdppc { country: String, year: i32 },
    #[error("no eligible analogues for {country} at base year {base_year}")]
    NoEligibleAnalogues { country: String, base_year: i32 },
    #[error("no actual growth for forecast {country} at base year {base_year}")]
    MissingActual { country: String, base_year: i32 },
    #[error("no forecasts to evaluate")]
    NoForecasts,
    #[error("panel spans {span} years, backtesting needs at least {required}")]
    InsufficientSpan { span: i32, required: i32 },
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Predictability grade of a neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Laminar,
    Chaotic,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Laminar => write!(f, "laminar"),
            Regime::Chaotic => write!(f, "chaotic"),
        }
    }
}

/// Laminar iff the dispersion is strictly below the threshold; the boundary
/// itself counts as chaotic.
pub fn classify_regime(dispersion: f64, threshold: f64) -> Regime {
    if dispersion < threshold {
        Regime::Laminar
    } else {
        Regime::Chaotic
    }
}

/// One country-year position in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelPoint {
    pub country: String,
    pub year: i32,
    /// ln of mean-normalized fitness.
    pub log_fitness: f64,
    /// ln of GDP per capita in constant currency units.
    pub log_gdppc: f64,
}

/// The full panel: points plus the h-year forward displacements
/// `log_gdppc(year + h) - log_gdppc(year)` wherever both endpoints exist.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    points: Vec<PanelPoint>,
    horizon: u32,
    displacement: BTreeMap<(String, i32), f64>,
}

impl PanelDataset {
    /// Validate points (unique (country, year), finite coordinates) and
    /// derive the displacement map.
    pub fn from_points(mut points: Vec<PanelPoint>, horizon: u32) -> Result<Self, ForecastError> {
        if horizon < 1 {
            return Err(ForecastError::InvalidHorizon);
        }
        if points.is_empty() {
            return Err(ForecastError::EmptyPanel);
        }
        points.sort_by(|a, b| a.country.cmp(&b.country).then(a.year.cmp(&b.year)));
        for w in points.windows(2) {
            if w[0].country == w[1].country && w[0].year == w[1].year {
                return Err(ForecastError::DuplicatePoint {
                    country: w[0].country.clone(),
                    year: w[0].year,
                });
            }
        }
        let mut by_key: BTreeMap<(&str, i32), f64> = BTreeMap::new();
        for p in &points {
            if !p.log_fitness.is_finite() || !p.log_gdppc.is_finite() {
                return Err(ForecastError::NonFinite {
                    country: p.country.clone(),
                    year: p.year,
                });
            }
            by_key.insert((p.country.as_str(), p.year), p.log_gdppc);
        }
        let mut displacement = BTreeMap::new();
        for p in &points {
            if let Some(&future) = by_key.get(&(p.country.as_str(), p.year + horizon as i32)) {
                displacement.insert((p.country.clone(), p.year), future - p.log_gdppc);
            }
        }
        Ok(PanelDataset {
            points,
            horizon,
            displacement,
        })
    }

    pub fn points(&self) -> &[PanelPoint] {
        &self.points
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn displacement(&self, country: &str, year: i32) -> Option<f64> {
        self.displacement.get(&(country.to_string(), year)).copied()
    }

    pub fn displacements(&self) -> impl Iterator<Item = (&(String, i32), &f64)> {
        self.displacement.iter()
    }

    pub fn point(&self, country: &str, year: i32) -> Option<&PanelPoint> {
        self.points
            .iter()
            .find(|p| p.country == country && p.year == year)
    }

    pub fn year_range(&self) -> (i32, i32) {
        let min = self.points.iter().map(|p| p.year).min().expect("non-empty");
        let max = self.points.iter().map(|p| p.year).max().expect("non-empty");
        (min, max)
    }
}

/// Join per-year rankings with a GDP-per-capita table into a panel.
/// Countries missing either coordinate in a year are silently omitted for
/// that year.
pub fn build_panel(
    rankings: &BTreeMap<i32, RankingResult>,
    gdppc: &BTreeMap<(String, i32), f64>,
    horizon: u32,
) -> Result<PanelDataset, ForecastError> {
    if rankings.len() < 2 {
        return Err(ForecastError::InsufficientYears);
    }
    let mut points = Vec::new();
    for (&year, ranking) in rankings {
        for (country, &fitness) in &ranking.fitness {
            if let Some(&g) = gdppc.get(&(country.clone(), year)) {
                if !g.is_finite() || g <= 0.0 {
                    return Err(ForecastError::NonPositiveGdppc {
                        country: country.clone(),
                        year,
                    });
                }
                points.push(PanelPoint {
                    country: country.clone(),
                    year,
                    log_fitness: fitness.ln(),
                    log_gdppc: g.ln(),
                });
            }
        }
    }
    PanelDataset::from_points(points, horizon)
}

/// One usable analogue: a historical plane point and what happened to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Analogue {
    pub point: PanelPoint,
    pub displacement: f64,
}

/// The analogues found for a query, flagged when fewer than requested were
/// available.
#[derive(Debug, Clone)]
pub struct AnalogueSet {
    pub analogues: Vec<Analogue>,
    pub requested: usize,
    pub shortfall: bool,
}

/// The k nearest eligible analogues of a query point.
///
/// Eligibility is the out-of-sample rule: the analogue's displacement must
/// end at or before `cutoff_year` and it must belong to a different country
/// than the query. Distances are Euclidean on per-axis z-standardized
/// coordinates, with mean and sd taken over the eligible set itself (so a
/// forecast never peeks at statistics of points it could not have seen).
/// Ties are broken by (year, country).
pub fn find_analogues(
    panel: &PanelDataset,
    query: &PanelPoint,
    k: usize,
    cutoff_year: i32,
) -> Result<AnalogueSet, ForecastError> {
    if k < 1 {
        return Err(ForecastError::InvalidK);
    }
    if panel.points.is_empty() {
        return Err(ForecastError::EmptyPanel);
    }
    let h = panel.horizon as i32;
    let eligible: Vec<Analogue> = panel
        .points
        .iter()
        .filter(|p| p.country != query.country && p.year + h <= cutoff_year)
        .filter_map(|p| {
            panel.displacement(&p.country, p.year).map(|d| Analogue {
                point: p.clone(),
                displacement: d,
            })
        })
        .collect();
    if eligible.is_empty() {
        return Err(ForecastError::NoEligibleAnalogues {
            country: query.country.clone(),
            base_year: query.year,
        });
    }

    let xs: Vec<f64> = eligible.iter().map(|a| a.point.log_fitness).collect();
    let ys: Vec<f64> = eligible.iter().map(|a| a.point.log_gdppc).collect();
    let (mx, sx) = axis_stats(&xs);
    let (my, sy) = axis_stats(&ys);
    let qx = (query.log_fitness - mx) / sx;
    let qy = (query.log_gdppc - my) / sy;

    let mut scored: Vec<(f64, Analogue)> = eligible
        .into_iter()
        .map(|a| {
            let dx = (a.point.log_fitness - mx) / sx - qx;
            let dy = (a.point.log_gdppc - my) / sy - qy;
            ((dx * dx + dy * dy).sqrt(), a)
        })
        .collect();
    scored.sort_by(|(da, a), (db, b)| {
        da.total_cmp(db)
            .then_with(|| a.point.year.cmp(&b.point.year))
            .then_with(|| a.point.country.cmp(&b.point.country))
    });
    let shortfall = scored.len() < k;
    scored.truncate(k);
    Ok(AnalogueSet {
        analogues: scored.into_iter().map(|(_, a)| a).collect(),
        requested: k,
        shortfall,
    })
}

/// Mean and sd of one axis over the eligible set; a degenerate axis falls
/// back to unit scale.
fn axis_stats(xs: &[f64]) -> (f64, f64) {
    let m = util::mean(xs);
    let sd = util::std_pop(xs);
    if sd > 0.0 {
        (m, sd)
    } else {
        (m, 1.0)
    }
}

/// Tuning knobs for the analogue forecaster.
#[derive(Debug, Clone, Serialize)]
pub struct SpsOptions {
    /// Number of analogues per forecast.
    pub k: usize,
    /// Dispersion below which a neighborhood counts as laminar.
    pub laminar_threshold: f64,
    /// Weight of the country's own recent displacement in the trend blend.
    pub blend: f64,
}

impl Default for SpsOptions {
    fn default() -> Self {
        SpsOptions {
            k: 20,
            laminar_threshold: 0.1,
            blend: 0.5,
        }
    }
}

impl SpsOptions {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.k < 1 {
            return Err(ForecastError::InvalidK);
        }
        if !self.laminar_threshold.is_finite() || self.laminar_threshold <= 0.0 {
            return Err(ForecastError::InvalidLaminarThreshold(
                self.laminar_threshold,
            ));
        }
        if !(0.0..=1.0).contains(&self.blend) || !self.blend.is_finite() {
            return Err(ForecastError::InvalidBlend(self.blend));
        }
        Ok(())
    }
}

/// One forecast: the predicted h-year log-GDPpc displacement plus its
/// predictability grade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Forecast {
    pub country: String,
    pub base_year: i32,
    pub predicted_growth: f64,
    pub analogue_count: usize,
    /// Sample sd of the analogue displacements; 0 for a single analogue.
    pub dispersion: f64,
    pub regime: Regime,
    /// Fewer eligible analogues than requested.
    pub analogue_shortfall: bool,
    /// The trend variant had no own history and fell back to the plain
    /// analogue mean.
    pub trend_fallback: bool,
}

fn forecast_from_analogues(
    query: &PanelPoint,
    set: &AnalogueSet,
    opts: &SpsOptions,
) -> Forecast {
    let displacements: Vec<f64> = set.analogues.iter().map(|a| a.displacement).collect();
    let mean = util::mean(&displacements);
    let dispersion = util::std_sample(&displacements);
    Forecast {
        country: query.country.clone(),
        base_year: query.year,
        predicted_growth: mean,
        analogue_count: set.analogues.len(),
        dispersion,
        regime: classify_regime(dispersion, opts.laminar_threshold),
        analogue_shortfall: set.shortfall,
        trend_fallback: false,
    }
}

/// Plain analogue forecast: the mean displacement of the query's k nearest
/// eligible analogues.
pub fn forecast_sps(
    panel: &PanelDataset,
    query: &PanelPoint,
    opts: &SpsOptions,
    cutoff_year: i32,
) -> Result<Forecast, ForecastError> {
    opts.validate()?;
    let set = find_analogues(panel, query, opts.k, cutoff_year)?;
    Ok(forecast_from_analogues(query, &set, opts))
}

/// The country's own most recent h-year displacement observable at the base
/// year, if any.
fn own_recent_displacement(panel: &PanelDataset, country: &str, base_year: i32) -> Option<f64> {
    let h = panel.horizon as i32;
    panel
        .displacement
        .iter()
        .filter(|((c, y), _)| c == country && y + h <= base_year)
        .map(|((_, y), &d)| (*y, d))
        .max_by_key(|(y, _)| *y)
        .map(|(_, d)| d)
}

/// Analogue forecast blended with the country's own recent growth:
/// `blend * own + (1 - blend) * analogue mean`. Falls back to the plain
/// analogue forecast (flagged) when the country has no observed history.
pub fn forecast_sps_trend(
    panel: &PanelDataset,
    query: &PanelPoint,
    opts: &SpsOptions,
    cutoff_year: i32,
) -> Result<Forecast, ForecastError> {
    opts.validate()?;
    let set = find_analogues(panel, query, opts.k, cutoff_year)?;
    let mut forecast = forecast_from_analogues(query, &set, opts);
    match own_recent_displacement(panel, &query.country, query.year) {
        Some(own) => {
            forecast.predicted_growth =
                opts.blend * own + (1.0 - opts.blend) * forecast.predicted_growth;
        }
        None => forecast.trend_fallback = true,
    }
    Ok(forecast)
}

/// Per-regime slice of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeStats {
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

/// Forecast accuracy: MAE and RMSE with 3-sigma confidence intervals and a
/// per-regime breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub mae: f64,
    pub rmse: f64,
    pub ci_mae: (f64, f64),
    pub ci_rmse: (f64, f64),
    pub n: usize,
    pub per_regime: BTreeMap<Regime, RegimeStats>,
}

struct EvalItem {
    predicted: f64,
    actual: f64,
    regime: Regime,
}

fn eval_items(items: &[EvalItem]) -> Result<EvaluationReport, ForecastError> {
    if items.is_empty() {
        return Err(ForecastError::NoForecasts);
    }
    let abs_errors: Vec<f64> = items.iter().map(|i| (i.predicted - i.actual).abs()).collect();
    let sq_errors: Vec<f64> = abs_errors.iter().map(|e| e * e).collect();
    let n = items.len();
    let mae = util::mean(&abs_errors);
    let rmse = util::mean(&sq_errors).sqrt();

    // 3-sigma normal-approximation intervals: the MAE is a plain mean of
    // absolute errors; the RMSE gets the delta method on the mean squared
    // error, d sqrt(m) / dm = 1 / (2 sqrt(m)).
    let se_mae = util::std_sample(&abs_errors) / (n as f64).sqrt();
    let se_rmse = if rmse > 0.0 {
        util::std_sample(&sq_errors) / (n as f64).sqrt() / (2.0 * rmse)
    } else {
        0.0
    };
    let ci_mae = ((mae - 3.0 * se_mae).max(0.0), mae + 3.0 * se_mae);
    let ci_rmse = ((rmse - 3.0 * se_rmse).max(0.0), rmse + 3.0 * se_rmse);

    let mut per_regime = BTreeMap::new();
    for regime in [Regime::Laminar, Regime::Chaotic] {
        let slice: Vec<f64> = items
            .iter()
            .zip(&abs_errors)
            .filter(|(i, _)| i.regime == regime)
            .map(|(_, &e)| e)
            .collect();
        if !slice.is_empty() {
            per_regime.insert(
                regime,
                RegimeStats {
                    mae: util::mean(&slice),
                    rmse: util::mean(&slice.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt(),
                    n: slice.len(),
                },
            );
        }
    }
    Ok(EvaluationReport {
        mae,
        rmse,
        ci_mae,
        ci_rmse,
        n,
        per_regime,
    })
}

/// Score a batch of forecasts against realized growth. Every forecast must
/// have a matching actual, keyed by (country, base_year).
pub fn evaluate(
    forecasts: &[Forecast],
    actuals: &BTreeMap<(String, i32), f64>,
) -> Result<EvaluationReport, ForecastError> {
    if forecasts.is_empty() {
        return Err(ForecastError::NoForecasts);
    }
    let mut items = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        let actual = actuals
            .get(&(f.country.clone(), f.base_year))
            .copied()
            .ok_or_else(|| ForecastError::MissingActual {
                country: f.country.clone(),
                base_year: f.base_year,
            })?;
        items.push(EvalItem {
            predicted: f.predicted_growth,
            actual,
            regime: f.regime,
        });
    }
    eval_items(&items)
}

/// Identity of an analogue used by a backtest forecast, for leakage audits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalogueRef {
    pub country: String,
    pub year: i32,
    /// Year the analogue's displacement ends; must be <= the cutoff.
    pub end_year: i32,
}

/// Everything the backtester did for one (country, base_year).
#[derive(Debug, Clone, Serialize)]
pub struct BacktestRecord {
    pub sps: Forecast,
    pub sps_trend: Forecast,
    pub actual: f64,
    pub cutoff_year: i32,
    pub analogues: Vec<AnalogueRef>,
}

/// Backtest output: evaluations of both methods (and an optional external
/// baseline) on identical forecast sets, plus the per-forecast records.
#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub sps: EvaluationReport,
    pub sps_trend: EvaluationReport,
    pub baseline: Option<EvaluationReport>,
    pub records: Vec<BacktestRecord>,
}

/// Walk every base year that can be forecast strictly out of sample and
/// evaluate SPS, SPS+trend and the optional baseline on the same
/// (country, base_year) pairs.
///
/// A base year qualifies when its own displacement is realizable
/// (`base + h` observed) and at least one analogue displacement has fully
/// ended by then, which bounds the usable window to
/// `min_year + h ..= max_year - h`; countries with no eligible analogue at
/// a base year are skipped. When a baseline is supplied, pairs it does not
/// cover are dropped from all methods so the comparison stays paired.
pub fn backtest(
    panel: &PanelDataset,
    opts: &SpsOptions,
    baseline: Option<&BTreeMap<(String, i32), f64>>,
) -> Result<BacktestReport, ForecastError> {
    opts.validate()?;
    let h = panel.horizon as i32;
    let (min_year, max_year) = panel.year_range();
    let span = max_year - min_year + 1;
    if span < 2 * h + 1 {
        return Err(ForecastError::InsufficientSpan {
            span,
            required: 2 * h + 1,
        });
    }

    let mut records = Vec::new();
    for base_year in (min_year + h)..=(max_year - h) {
        // points() is sorted by (country, year), so this is deterministic.
        for point in panel.points.iter().filter(|p| p.year == base_year) {
            let actual = match panel.displacement(&point.country, base_year) {
                Some(a) => a,
                None => continue,
            };
            if let Some(b) = baseline {
                if !b.contains_key(&(point.country.clone(), base_year)) {
                    continue;
                }
            }
            let set = match find_analogues(panel, point, opts.k, base_year) {
                Ok(set) => set,
                Err(ForecastError::NoEligibleAnalogues { .. }) => continue,
                Err(e) => return Err(e),
            };
            let sps = forecast_from_analogues(point, &set, opts);
            let mut sps_trend = sps.clone();
            match own_recent_displacement(panel, &point.country, base_year) {
                Some(own) => {
                    sps_trend.predicted_growth =
                        opts.blend * own + (1.0 - opts.blend) * sps.predicted_growth;
                }
                None => sps_trend.trend_fallback = true,
            }
            let analogues = set
                .analogues
                .iter()
                .map(|a| AnalogueRef {
                    country: a.point.country.clone(),
                    year: a.point.year,
                    end_year: a.point.year + h,
                })
                .collect();
            records.push(BacktestRecord {
                sps,
                sps_trend,
                actual,
                cutoff_year: base_year,
                analogues,
            });
        }
    }

    let sps_report = eval_items(
        &records
            .iter()
            .map(|r| EvalItem {
                predicted: r.sps.predicted_growth,
                actual: r.actual,
                regime: r.sps.regime,
            })
            .collect::<Vec<_>>(),
    )?;
    let trend_report = eval_items(
        &records
            .iter()
            .map(|r| EvalItem {
                predicted: r.sps_trend.predicted_growth,
                actual: r.actual,
                regime: r.sps_trend.regime,
            })
            .collect::<Vec<_>>(),
    )?;
    let baseline_report = match baseline {
        Some(b) => Some(eval_items(
            &records
                .iter()
                .map(|r| EvalItem {
                    predicted: b[&(r.sps.country.clone(), r.sps.base_year)],
                    actual: r.actual,
                    // Grade the baseline on the same neighborhoods so the
                    // regime slices stay comparable across methods.
                    regime: r.sps.regime,
                })
                .collect::<Vec<_>>(),
        )?),
        None => None,
    };

    Ok(BacktestReport {
        sps: sps_report,
        sps_trend: trend_report,
        baseline: baseline_report,
        records,
    })
}

/// One row of the plane export used for flow plots.
#[derive(Debug, Clone, Serialize)]
pub struct PlaneRow {
    pub country: String,
    pub year: i32,
    pub log_fitness: f64,
    pub log_gdppc: f64,
    pub displacement: Option<f64>,
    pub regime: Option<Regime>,
}

/// Tidy rows for plotting the plane. The regime tag here is descriptive:
/// neighborhood dispersion is computed with the full panel visible (cutoff
/// at the last year), not under forecasting rules. Points whose
/// neighborhoods are empty carry no regime.
pub fn plane_rows(panel: &PanelDataset, opts: &SpsOptions) -> Result<Vec<PlaneRow>, ForecastError> {
    opts.validate()?;
    let (_, max_year) = panel.year_range();
    Ok(panel
        .points
        .iter()
        .map(|p| {
            let regime = find_analogues(panel, p, opts.k, max_year)
                .ok()
                .map(|set| {
                    let d: Vec<f64> = set.analogues.iter().map(|a| a.displacement).collect();
                    classify_regime(util::std_sample(&d), opts.laminar_threshold)
                });
            PlaneRow {
                country: p.country.clone(),
                year: p.year,
                log_fitness: p.log_fitness,
                log_gdppc: p.log_gdppc,
                displacement: panel.displacement(&p.country, p.year),
                regime,
            }
        })
        .collect())
}

/// Least-squares line of log_gdppc on log_fitness over all panel points:
/// the equilibrium diagonal drawn on the plane plots. `None` when the
/// fitness axis has no spread.
pub fn equilibrium_line(panel: &PanelDataset) -> Option<(f64, f64)> {
    let xs: Vec<f64> = panel.points.iter().map(|p| p.log_fitness).collect();
    let ys: Vec<f64> = panel.points.iter().map(|p| p.log_gdppc).collect();
    let mx = util::mean(&xs);
    let my = util::mean(&ys);
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if var <= 0.0 {
        return None;
    }
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = cov / var;
    Some((slope, my - slope * mx))
}

#[derive(Debug, Deserialize)]
struct GdppcRow {
    country: String,
    year: i32,
    gdppc: f64,
}

/// Parse a `country,year,gdppc` CSV into a lookup map. Values must be
/// positive; duplicate keys are rejected.
pub fn parse_gdppc_csv<R: Read>(source: R) -> Result<BTreeMap<(String, i32), f64>, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let mut map = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: GdppcRow =
            record
                .deserialize(Some(&headers))
                .map_err(|e| ForecastError::MalformedRow {
                    line,
                    message: e.to_string(),
                })?;
        if !row.gdppc.is_finite() || row.gdppc <= 0.0 {
            return Err(ForecastError::MalformedRow {
                line,
                message: format!("non-positive gdppc {}", row.gdppc),
            });
        }
        if map.insert((row.country.clone(), row.year), row.gdppc).is_some() {
            return Err(ForecastError::MalformedRow {
                line,
                message: format!("duplicate entry for {} in {}", row.country, row.year),
            });
        }
    }
    Ok(map)
}

#[derive(Debug, Deserialize)]
struct BaselineRow {
    country: String,
    base_year: i32,
    predicted_growth: f64,
}

/// Parse a `country,base_year,predicted_growth` CSV of external forecasts.
pub fn parse_baseline_csv<R: Read>(
    source: R,
) -> Result<BTreeMap<(String, i32), f64>, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let mut map = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: BaselineRow =
            record
                .deserialize(Some(&headers))
                .map_err(|e| ForecastError::MalformedRow {
                    line,
                    message: e.to_string(),
                })?;
        if !row.predicted_growth.is_finite() {
            return Err(ForecastError::MalformedRow {
                line,
                message: "non-finite prediction".to_string(),
            });
        }
        map.insert((row.country, row.base_year), row.predicted_growth);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{RankingResult, StopReason};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ranking(countries: &[(&str, f64)]) -> RankingResult {
        RankingResult {
            fitness: countries
                .iter()
                .map(|(c, f)| (c.to_string(), *f))
                .collect(),
            complexity: BTreeMap::new(),
            iterations_used: 1,
            converged: true,
            stop: StopReason::Tolerance,
            trace: vec![0.0],
        }
    }

    fn point(country: &str, year: i32, lf: f64, lg: f64) -> PanelPoint {
        PanelPoint {
            country: country.to_string(),
            year,
            log_fitness: lf,
            log_gdppc: lg,
        }
    }

    #[test]
    fn build_panel_computes_log_displacement() {
        let mut rankings = BTreeMap::new();
        rankings.insert(2000, ranking(&[("A", 1.0)]));
        rankings.insert(2005, ranking(&[("A", 1.0)]));
        let mut gdppc = BTreeMap::new();
        gdppc.insert(("A".to_string(), 2000), 100.0);
        gdppc.insert(("A".to_string(), 2005), 200.0);
        let panel = build_panel(&rankings, &gdppc, 5).unwrap();
        assert_eq!(panel.points().len(), 2);
        assert_relative_eq!(
            panel.displacement("A", 2000).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(panel.displacement("A", 2005).is_none());
    }

    #[test]
    fn build_panel_omits_missing_gdppc() {
        let mut rankings = BTreeMap::new();
        rankings.insert(2000, ranking(&[("A", 1.0), ("B", 2.0)]));
        rankings.insert(2001, ranking(&[("A", 1.0), ("B", 2.0)]));
        let mut gdppc = BTreeMap::new();
        gdppc.insert(("A".to_string(), 2000), 100.0);
        gdppc.insert(("A".to_string(), 2001), 100.0);
        gdppc.insert(("B".to_string(), 2001), 50.0);
        let panel = build_panel(&rankings, &gdppc, 5).unwrap();
        assert_eq!(panel.points().len(), 3);
    }

    #[test]
    fn short_panel_has_no_displacements_but_is_valid() {
        let mut rankings = BTreeMap::new();
        let mut gdppc = BTreeMap::new();
        for year in 2000..=2003 {
            rankings.insert(year, ranking(&[("A", 1.0)]));
            gdppc.insert(("A".to_string(), year), 100.0);
        }
        let panel = build_panel(&rankings, &gdppc, 5).unwrap();
        assert_eq!(panel.points().len(), 4);
        assert_eq!(panel.displacements().count(), 0);
    }

    #[test]
    fn build_panel_needs_two_years() {
        let mut rankings = BTreeMap::new();
        rankings.insert(2000, ranking(&[("A", 1.0)]));
        let gdppc = BTreeMap::new();
        assert!(matches!(
            build_panel(&rankings, &gdppc, 5),
            Err(ForecastError::InsufficientYears)
        ));
    }

    #[test]
    fn empty_join_is_an_error() {
        let mut rankings = BTreeMap::new();
        rankings.insert(2000, ranking(&[("A", 1.0)]));
        rankings.insert(2001, ranking(&[("A", 1.0)]));
        let gdppc = BTreeMap::new(); // no overlap
        assert!(matches!(
            build_panel(&rankings, &gdppc, 5),
            Err(ForecastError::EmptyPanel)
        ));
    }

    /// Minimal panel: query country Q plus analogue countries laid out on a
    /// line, all displacements observable by 2010.
    fn line_panel() -> PanelDataset {
        let mut points = Vec::new();
        for (i, c) in ["a", "b", "c", "d"].iter().enumerate() {
            let x = i as f64;
            points.push(point(c, 2000, x, x));
            points.push(point(c, 2005, x, x + 0.1 * (i as f64 + 1.0)));
        }
        points.push(point("q", 2005, 0.0, 0.0));
        points.push(point("q", 2010, 0.0, 0.0));
        PanelDataset::from_points(points, 5).unwrap()
    }

    #[test]
    fn coincident_single_analogue_is_found() {
        let panel = line_panel();
        let q = point("q", 2005, 0.0, 0.0);
        let set = find_analogues(&panel, &q, 1, 2005).unwrap();
        assert_eq!(set.analogues.len(), 1);
        assert_eq!(set.analogues[0].point.country, "a");
        assert!(!set.shortfall);
    }

    #[test]
    fn oversized_k_returns_all_with_flag() {
        let panel = line_panel();
        let q = point("q", 2005, 0.0, 0.0);
        let set = find_analogues(&panel, &q, 50, 2005).unwrap();
        assert_eq!(set.analogues.len(), 4);
        assert!(set.shortfall);
    }

    #[test]
    fn zero_eligible_is_an_error() {
        let panel = line_panel();
        let q = point("q", 2004, 0.0, 0.0);
        // cutoff before any displacement has ended
        assert!(matches!(
            find_analogues(&panel, &q, 3, 2004),
            Err(ForecastError::NoEligibleAnalogues { .. })
        ));
    }

    #[test]
    fn analogues_match_brute_force_distances() {
        // Independent oracle: recompute standardization and distances by
        // hand over the eligible set and sort.
        let panel = line_panel();
        let q = point("q", 2005, 1.7, 1.2);
        let k = 3;
        let set = find_analogues(&panel, &q, k, 2005).unwrap();

        let eligible: Vec<&PanelPoint> = panel
            .points()
            .iter()
            .filter(|p| {
                p.country != "q"
                    && p.year + 5 <= 2005
                    && panel.displacement(&p.country, p.year).is_some()
            })
            .collect();
        let xs: Vec<f64> = eligible.iter().map(|p| p.log_fitness).collect();
        let ys: Vec<f64> = eligible.iter().map(|p| p.log_gdppc).collect();
        let mx = crate::util::mean(&xs);
        let my = crate::util::mean(&ys);
        let sx = crate::util::std_pop(&xs);
        let sy = crate::util::std_pop(&ys);
        let mut dists: Vec<(f64, &PanelPoint)> = eligible
            .iter()
            .map(|p| {
                let dx = (p.log_fitness - mx) / sx - (q.log_fitness - mx) / sx;
                let dy = (p.log_gdppc - my) / sy - (q.log_gdppc - my) / sy;
                ((dx * dx + dy * dy).sqrt(), *p)
            })
            .collect();
        dists.sort_by(|(da, a), (db, b)| {
            da.total_cmp(db)
                .then_with(|| a.year.cmp(&b.year))
                .then_with(|| a.country.cmp(&b.country))
        });
        let expected: Vec<&str> = dists[..k].iter().map(|(_, p)| p.country.as_str()).collect();
        let got: Vec<&str> = set
            .analogues
            .iter()
            .map(|a| a.point.country.as_str())
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn forecast_mean_and_dispersion() {
        let mut points = vec![
            point("a", 2000, 0.0, 0.0),
            point("a", 2005, 0.0, 0.1),
            point("b", 2000, 0.01, 0.0),
            point("b", 2005, 0.01, 0.3),
            point("q", 2005, 0.0, 0.0),
        ];
        points.push(point("c", 2000, 5.0, 5.0));
        points.push(point("c", 2005, 5.0, 5.2));
        let panel = PanelDataset::from_points(points, 5).unwrap();
        let q = point("q", 2005, 0.0, 0.0);
        let opts = SpsOptions {
            k: 2,
            ..SpsOptions::default()
        };
        let f = forecast_sps(&panel, &q, &opts, 2005).unwrap();
        assert_relative_eq!(f.predicted_growth, 0.2, epsilon = 1e-12);
        assert_relative_eq!(f.dispersion, (0.02f64).sqrt(), epsilon = 1e-12);
        assert_eq!(f.analogue_count, 2);
    }

    #[test]
    fn uniform_displacements_have_zero_dispersion() {
        let points = vec![
            point("a", 2000, 0.0, 0.0),
            point("a", 2005, 0.0, 0.2),
            point("b", 2000, 0.1, 0.0),
            point("b", 2005, 0.1, 0.2),
            point("q", 2005, 0.0, 0.0),
        ];
        let panel = PanelDataset::from_points(points, 5).unwrap();
        let q = point("q", 2005, 0.0, 0.0);
        let opts = SpsOptions {
            k: 2,
            ..SpsOptions::default()
        };
        let f = forecast_sps(&panel, &q, &opts, 2005).unwrap();
        assert_relative_eq!(f.predicted_growth, 0.2, epsilon = 1e-12);
        assert_eq!(f.dispersion, 0.0);
        assert_eq!(f.regime, Regime::Laminar);
    }

    #[test]
    fn laminar_flow_field_prediction_tracks_the_field() {
        // Displacements are a smooth function of plane position plus small
        // noise; with a dense grid the analogue mean must land within the
        // field's local variation around the query plus the noise amplitude.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let field = |lf: f64| 0.30 * lf;
        let noise = 0.005;
        let n = 40;
        let mut points = Vec::new();
        for i in 0..n {
            let lf = i as f64 / (n - 1) as f64;
            let start = 1.0 + lf;
            let eps: f64 = rng.random_range(-noise..noise);
            points.push(point(&format!("c{i:02}"), 2000, lf, start));
            points.push(point(&format!("c{i:02}"), 2005, lf, start + field(lf) + eps));
        }
        let panel = PanelDataset::from_points(points, 5).unwrap();
        let q = point("query", 2005, 0.5, 1.5);
        let opts = SpsOptions {
            k: 5,
            ..SpsOptions::default()
        };
        let f = forecast_sps(&panel, &q, &opts, 2005).unwrap();
        let set = find_analogues(&panel, &q, 5, 2005).unwrap();
        let max_field_dev = set
            .analogues
            .iter()
            .map(|a| (field(a.point.log_fitness) - field(0.5)).abs())
            .fold(0.0, f64::max);
        assert!(
            max_field_dev < 0.02,
            "grid should keep analogues local, got {max_field_dev}"
        );
        assert!(
            (f.predicted_growth - field(0.5)).abs() <= max_field_dev + noise,
            "prediction {} strays from field value {}",
            f.predicted_growth,
            field(0.5)
        );
        assert_eq!(f.regime, Regime::Laminar);
    }

    #[test]
    fn trend_blend_arithmetic() {
        // Own history: q moved +0.4 over 1995-2000 and has no later
        // observed displacement; analogue mean is 0.2. The query point
        // itself need not be a panel member.
        let points = vec![
            point("a", 2000, 0.0, 0.0),
            point("a", 2005, 0.0, 0.2),
            point("b", 2000, 0.1, 0.0),
            point("b", 2005, 0.1, 0.2),
            point("q", 1995, 0.0, 0.1),
            point("q", 2000, 0.0, 0.5),
        ];
        let panel = PanelDataset::from_points(points, 5).unwrap();
        let q = point("q", 2005, 0.0, 0.5);

        let blend = |b: f64| SpsOptions {
            k: 2,
            blend: b,
            ..SpsOptions::default()
        };
        let plain = forecast_sps(&panel, &q, &blend(0.5), 2005).unwrap();

        let zero = forecast_sps_trend(&panel, &q, &blend(0.0), 2005).unwrap();
        assert_relative_eq!(zero.predicted_growth, plain.predicted_growth, epsilon = 1e-12);

        let one = forecast_sps_trend(&panel, &q, &blend(1.0), 2005).unwrap();
        assert_relative_eq!(one.predicted_growth, 0.4, epsilon = 1e-12);

        let half = forecast_sps_trend(&panel, &q, &blend(0.5), 2005).unwrap();
        assert_relative_eq!(half.predicted_growth, 0.3, epsilon = 1e-12);
        assert!(!half.trend_fallback);
    }

    #[test]
    fn trend_without_history_falls_back() {
        let points = vec![
            point("a", 2000, 0.0, 0.0),
            point("a", 2005, 0.0, 0.2),
            point("b", 2000, 0.1, 0.0),
            point("b", 2005, 0.1, 0.2),
            point("q", 2005, 0.0, 0.0),
        ];
        let panel = PanelDataset::from_points(points, 5).unwrap();
        let q = point("q", 2005, 0.0, 0.0);
        let opts = SpsOptions {
            k: 2,
            ..SpsOptions::default()
        };
        let f = forecast_sps_trend(&panel, &q, &opts, 2005).unwrap();
        assert!(f.trend_fallback);
        assert_relative_eq!(f.predicted_growth, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn regime_boundary_is_chaotic() {
        assert_eq!(classify_regime(0.0, 0.1), Regime::Laminar);
        assert_eq!(classify_regime(0.1, 0.1), Regime::Chaotic);
        assert_eq!(classify_regime(0.2, 0.1), Regime::Chaotic);
    }

    #[test]
    fn evaluate_three_point_example() {
        let forecasts: Vec<Forecast> = [(1.0, "a"), (2.0, "b"), (3.0, "c")]
            .iter()
            .map(|(p, c)| Forecast {
                country: c.to_string(),
                base_year: 2000,
                predicted_growth: *p,
                analogue_count: 1,
                dispersion: 0.0,
                regime: Regime::Laminar,
                analogue_shortfall: false,
                trend_fallback: false,
            })
            .collect();
        let mut actuals = BTreeMap::new();
        actuals.insert(("a".to_string(), 2000), 1.0);
        actuals.insert(("b".to_string(), 2000), 1.0);
        actuals.insert(("c".to_string(), 2000), 5.0);
        let report = evaluate(&forecasts, &actuals).unwrap();
        assert_relative_eq!(report.mae, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.rmse, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert!(report.rmse >= report.mae);
        assert_eq!(report.n, 3);
    }

    #[test]
    fn perfect_forecasts_collapse_cis() {
        let forecasts = vec![Forecast {
            country: "a".to_string(),
            base_year: 2000,
            predicted_growth: 0.5,
            analogue_count: 1,
            dispersion: 0.0,
            regime: Regime::Laminar,
            analogue_shortfall: false,
            trend_fallback: false,
        }];
        let mut actuals = BTreeMap::new();
        actuals.insert(("a".to_string(), 2000), 0.5);
        let report = evaluate(&forecasts, &actuals).unwrap();
        assert_eq!(report.mae, 0.0);
        assert_eq!(report.rmse, 0.0);
        assert_eq!(report.ci_mae, (0.0, 0.0));
        assert_eq!(report.ci_rmse, (0.0, 0.0));
    }

    #[test]
    fn equal_magnitude_errors_make_mae_equal_rmse() {
        let forecasts: Vec<Forecast> = [("a", 1.0), ("b", -1.0)]
            .iter()
            .map(|(c, p)| Forecast {
                country: c.to_string(),
                base_year: 2000,
                predicted_growth: *p,
                analogue_count: 1,
                dispersion: 0.0,
                regime: Regime::Chaotic,
                analogue_shortfall: false,
                trend_fallback: false,
            })
            .collect();
        let mut actuals = BTreeMap::new();
        actuals.insert(("a".to_string(), 2000), 1.5);
        actuals.insert(("b".to_string(), 2000), -1.5);
        let report = evaluate(&forecasts, &actuals).unwrap();
        assert_relative_eq!(report.mae, 0.5, epsilon = 1e-12);
        assert_relative_eq!(report.rmse, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn missing_actual_names_the_forecast() {
        let forecasts = vec![Forecast {
            country: "ghost".to_string(),
            base_year: 1999,
            predicted_growth: 0.0,
            analogue_count: 1,
            dispersion: 0.0,
            regime: Regime::Laminar,
            analogue_shortfall: false,
            trend_fallback: false,
        }];
        let actuals = BTreeMap::new();
        match evaluate(&forecasts, &actuals) {
            Err(ForecastError::MissingActual { country, base_year }) => {
                assert_eq!(country, "ghost");
                assert_eq!(base_year, 1999);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    /// Deterministic little flow panel for backtest tests: countries drift
    /// at a rate fixed by their fitness coordinate.
    fn flow_panel(n_countries: usize, years: std::ops::RangeInclusive<i32>) -> PanelDataset {
        let mut points = Vec::new();
        for i in 0..n_countries {
            let lf = i as f64 / n_countries as f64;
            let rate = 0.02 + 0.04 * lf; // yearly log growth
            let mut lg = 1.0 + lf;
            for year in years.clone() {
                points.push(point(&format!("c{i:02}"), year, lf, lg));
                lg += rate;
            }
        }
        PanelDataset::from_points(points, 5).unwrap()
    }

    #[test]
    fn backtest_is_leak_free_and_self_excluding() {
        let panel = flow_panel(6, 2000..=2012);
        let opts = SpsOptions {
            k: 3,
            ..SpsOptions::default()
        };
        let report = backtest(&panel, &opts, None).unwrap();
        assert!(!report.records.is_empty());
        for r in &report.records {
            for a in &r.analogues {
                assert!(a.end_year <= r.cutoff_year, "leaked analogue: {a:?}");
                assert_ne!(a.country, r.sps.country);
            }
        }
    }

    #[test]
    fn backtest_rejects_short_spans() {
        let panel = flow_panel(4, 2000..=2009);
        assert!(matches!(
            backtest(&panel, &SpsOptions::default(), None),
            Err(ForecastError::InsufficientSpan { .. })
        ));
    }

    #[test]
    fn baseline_identical_to_actuals_scores_zero() {
        let panel = flow_panel(6, 2000..=2012);
        let opts = SpsOptions {
            k: 3,
            ..SpsOptions::default()
        };
        let bare = backtest(&panel, &opts, None).unwrap();
        let baseline: BTreeMap<(String, i32), f64> = bare
            .records
            .iter()
            .map(|r| ((r.sps.country.clone(), r.sps.base_year), r.actual))
            .collect();
        let with = backtest(&panel, &opts, Some(&baseline)).unwrap();
        let b = with.baseline.unwrap();
        assert_eq!(b.mae, 0.0);
        assert_eq!(b.rmse, 0.0);
        assert_eq!(b.n, with.sps.n);
    }

    #[test]
    fn backtest_is_bit_deterministic() {
        let panel = flow_panel(6, 2000..=2012);
        let opts = SpsOptions {
            k: 3,
            ..SpsOptions::default()
        };
        let a = serde_json::to_string(&backtest(&panel, &opts, None).unwrap()).unwrap();
        let b = serde_json::to_string(&backtest(&panel, &opts, None).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plane_rows_cover_all_points() {
        let panel = flow_panel(4, 2000..=2011);
        let rows = plane_rows(&panel, &SpsOptions { k: 3, ..SpsOptions::default() }).unwrap();
        assert_eq!(rows.len(), panel.points().len());
        assert!(rows.iter().any(|r| r.regime.is_some()));
        let (slope, _) = equilibrium_line(&panel).unwrap();
        assert!(slope.is_finite());
    }

    #[test]
    fn gdppc_csv_parses_and_validates() {
        let text = "country,year,gdppc\nA,2000,100.5\nB,2000,50\n";
        let map = parse_gdppc_csv(text.as_bytes()).unwrap();
        assert_eq!(map[&("A".to_string(), 2000)], 100.5);
        let bad = "country,year,gdppc\nA,2000,-3\n";
        assert!(matches!(
            parse_gdppc_csv(bad.as_bytes()),
            Err(ForecastError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn baseline_csv_parses() {
        let text = "country,base_year,predicted_growth\nA,2005,0.12\n";
        let map = parse_baseline_csv(text.as_bytes()).unwrap();
        assert_eq!(map[&("A".to_string(), 2005)], 0.12);
    }

    proptest! {
        #[test]
        fn rmse_never_below_mae(errors in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let items: Vec<EvalItem> = errors
                .iter()
                .map(|e| EvalItem { predicted: *e, actual: 0.0, regime: Regime::Laminar })
                .collect();
            let report = eval_items(&items).unwrap();
            prop_assert!(report.rmse >= report.mae - 1e-12);
            prop_assert!(report.ci_mae.0 <= report.mae && report.mae <= report.ci_mae.1);
            prop_assert!(report.ci_rmse.0 <= report.rmse && report.rmse <= report.ci_rmse.1);
        }

        #[test]
        fn prediction_stays_within_analogue_range(seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut points = Vec::new();
            for i in 0..8 {
                let lf: f64 = rng.random_range(-1.0..1.0);
                let lg0: f64 = rng.random_range(-1.0..1.0);
                let lg1 = lg0 + rng.random_range(-0.5..0.5);
                points.push(point(&format!("c{i}"), 2000, lf, lg0));
                points.push(point(&format!("c{i}"), 2005, lf, lg1));
            }
            let panel = PanelDataset::from_points(points, 5).unwrap();
            let q = point("query", 2005, 0.0, 0.0);
            let opts = SpsOptions { k: 4, ..SpsOptions::default() };
            let f = forecast_sps(&panel, &q, &opts, 2005).unwrap();
            let set = find_analogues(&panel, &q, 4, 2005).unwrap();
            let lo = set.analogues.iter().map(|a| a.displacement).fold(f64::INFINITY, f64::min);
            let hi = set.analogues.iter().map(|a| a.displacement).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(f.predicted_growth >= lo - 1e-12 && f.predicted_growth <= hi + 1e-12);
        }

        #[test]
        fn lowering_threshold_never_creates_laminar(d in 0.0f64..1.0, t1 in 0.001f64..1.0, shrink in 0.01f64..1.0) {
            let t2 = t1 * shrink; // t2 <= t1
            if classify_regime(d, t1) == Regime::Chaotic {
                prop_assert_eq!(classify_regime(d, t2), Regime::Chaotic);
            }
        }
    }
}
