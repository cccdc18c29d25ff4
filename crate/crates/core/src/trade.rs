//! Export-table ingestion, revealed comparative advantage and binarization.
//!
//! The pipeline is `parse_export_table` -> [`rca`] -> [`binarize`]: raw
//! (country, product, year, value) records become a per-year share-of-share
//! matrix (the Balassa index), which a threshold turns into the binary
//! country-product matrix everything downstream consumes. The default
//! threshold is 1.0: a country is counted as a competitive exporter when its
//! share of a product's world trade is at least its share of total trade.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{BinaryMatrix, MatrixError, MatrixMetadata};

#[derive(Debug, Error)]
pub enum TradeError {
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("no records")]
    NoRecords,
    #[error("year {0} not present in table")]
    YearAbsent(i32),
    #[error("all export values for year {0} are zero")]
    AllZero(i32),
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One raw observation: how much of a product a country exported in a year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub country: String,
    pub product: String,
    pub year: i32,
    pub value: f64,
}

impl ExportRecord {
    fn validate(&self) -> Result<(), String> {
        if self.country.trim().is_empty() {
            return Err("empty country identifier".into());
        }
        if self.product.trim().is_empty() {
            return Err("empty product identifier".into());
        }
        if !(1900..=2100).contains(&self.year) {
            return Err(format!("year {} outside [1900, 2100]", self.year));
        }
        if !self.value.is_finite() || self.value < 0.0 {
            return Err(format!("negative or non-finite value {}", self.value));
        }
        Ok(())
    }
}

/// Dense per-year view of the table: summed values on sorted, deduplicated
/// country and product axes.
#[derive(Debug, Clone, PartialEq)]
pub struct YearMatrix {
    pub countries: Vec<String>,
    pub products: Vec<String>,
    /// Row-major countries x products.
    pub values: Vec<f64>,
}

impl YearMatrix {
    pub fn get(&self, country: usize, product: usize) -> f64 {
        self.values[country * self.products.len() + product]
    }
}

/// The raw export table plus its per-year dense index. Duplicate
/// (country, product, year) records are summed, never dropped.
#[derive(Debug, Clone)]
pub struct ExportTable {
    records: Vec<ExportRecord>,
    index: BTreeMap<i32, YearMatrix>,
}

impl ExportTable {
    pub fn from_records(records: Vec<ExportRecord>) -> Result<Self, TradeError> {
        if records.is_empty() {
            return Err(TradeError::NoRecords);
        }
        let mut years: BTreeMap<i32, BTreeMap<(String, String), f64>> = BTreeMap::new();
        for r in &records {
            *years
                .entry(r.year)
                .or_default()
                .entry((r.country.clone(), r.product.clone()))
                .or_insert(0.0) += r.value;
        }
        let mut index = BTreeMap::new();
        for (year, cells) in years {
            let countries: Vec<String> = cells
                .keys()
                .map(|(c, _)| c.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let products: Vec<String> = cells
                .keys()
                .map(|(_, p)| p.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut values = vec![0.0; countries.len() * products.len()];
            for ((c, p), v) in cells {
                let i = countries.binary_search(&c).expect("by construction");
                let j = products.binary_search(&p).expect("by construction");
                values[i * products.len() + j] = v;
            }
            index.insert(
                year,
                YearMatrix {
                    countries,
                    products,
                    values,
                },
            );
        }
        Ok(ExportTable { records, index })
    }

    pub fn records(&self) -> &[ExportRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn years(&self) -> Vec<i32> {
        self.index.keys().copied().collect()
    }

    pub fn year_matrix(&self, year: i32) -> Option<&YearMatrix> {
        self.index.get(&year)
    }

    /// Canonical CSV form: duplicates summed, rows sorted by
    /// (year, country, product). Re-parsing yields identical per-year
    /// matrices.
    pub fn to_csv_writer<W: Write>(&self, w: W) -> Result<(), TradeError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["country", "product", "year", "value"])?;
        for (year, ym) in &self.index {
            for (i, country) in ym.countries.iter().enumerate() {
                for (j, product) in ym.products.iter().enumerate() {
                    let v = ym.get(i, j);
                    if v > 0.0 || self.has_record(country, product, *year) {
                        wtr.write_record([
                            country.as_str(),
                            product.as_str(),
                            &year.to_string(),
                            &format_value(v),
                        ])?;
                    }
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_csv_writer(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    fn has_record(&self, country: &str, product: &str, year: i32) -> bool {
        self.records
            .iter()
            .any(|r| r.year == year && r.country == country && r.product == product)
    }
}

fn format_value(v: f64) -> String {
    // Shortest representation that round-trips; avoids trailing noise in
    // serialized tables.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') {
        s.push_str(".0");
    }
    s
}

/// Parse a `country,product,year,value` CSV stream. Lines starting with `#`
/// are skipped. Duplicate keys are summed; malformed rows are rejected with
/// their line number.
pub fn parse_export_table<R: Read>(source: R) -> Result<ExportTable, TradeError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let mut records = Vec::new();
    let mut raw = csv::StringRecord::new();
    while rdr.read_record(&mut raw)? {
        let line = raw.position().map(|p| p.line()).unwrap_or(0);
        let record: ExportRecord =
            raw.deserialize(Some(&headers))
                .map_err(|e| TradeError::MalformedRow {
                    line,
                    message: trim_csv_error(&e),
                })?;
        if let Err(message) = record.validate() {
            return Err(TradeError::MalformedRow { line, message });
        }
        records.push(record);
    }
    let table = ExportTable::from_records(records)?;
    log::info!("parsed {} export records", table.len());
    Ok(table)
}

fn trim_csv_error(e: &csv::Error) -> String {
    // csv's Display repeats the position; keep just the cause.
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    }
}

/// Per-year revealed comparative advantage on sorted axes.
#[derive(Debug, Clone, PartialEq)]
pub struct RcaMatrix {
    pub year: i32,
    pub countries: Vec<String>,
    pub products: Vec<String>,
    /// Row-major countries x products, finite and >= 0.
    pub values: Vec<f64>,
}

impl RcaMatrix {
    pub fn get(&self, country: usize, product: usize) -> f64 {
        self.values[country * self.products.len() + product]
    }
}

/// Balassa share-of-share index for one year:
/// `RCA_cp = (x_cp / sum_p' x_cp') / (sum_c' x_c'p / sum_c'p' x_c'p')`.
///
/// Countries with zero total export and products with zero world export are
/// dropped with a warning; an RCA there would be 0/0.
pub fn rca(table: &ExportTable, year: i32) -> Result<RcaMatrix, TradeError> {
    let ym = table
        .year_matrix(year)
        .ok_or(TradeError::YearAbsent(year))?;
    let n_products = ym.products.len();

    let row_totals: Vec<f64> = (0..ym.countries.len())
        .map(|i| (0..n_products).map(|j| ym.get(i, j)).sum())
        .collect();
    let col_totals: Vec<f64> = (0..n_products)
        .map(|j| (0..ym.countries.len()).map(|i| ym.get(i, j)).sum())
        .collect();
    let world_total: f64 = row_totals.iter().sum();
    if world_total <= 0.0 {
        return Err(TradeError::AllZero(year));
    }

    let keep_rows: Vec<usize> = (0..ym.countries.len())
        .filter(|&i| {
            if row_totals[i] > 0.0 {
                true
            } else {
                warn!(
                    "dropping country `{}` in {year}: zero total export",
                    ym.countries[i]
                );
                false
            }
        })
        .collect();
    let keep_cols: Vec<usize> = (0..n_products)
        .filter(|&j| {
            if col_totals[j] > 0.0 {
                true
            } else {
                warn!(
                    "dropping product `{}` in {year}: zero world export",
                    ym.products[j]
                );
                false
            }
        })
        .collect();

    let mut values = Vec::with_capacity(keep_rows.len() * keep_cols.len());
    for &i in &keep_rows {
        for &j in &keep_cols {
            let country_share = ym.get(i, j) / row_totals[i];
            let world_share = col_totals[j] / world_total;
            values.push(country_share / world_share);
        }
    }
    Ok(RcaMatrix {
        year,
        countries: keep_rows.iter().map(|&i| ym.countries[i].clone()).collect(),
        products: keep_cols.iter().map(|&j| ym.products[j].clone()).collect(),
        values,
    })
}

/// Threshold an RCA matrix into the binary country-product matrix:
/// `M_cp = 1` iff `RCA_cp >= threshold` (inclusive, so the conventional
/// threshold of exactly 1.0 is deterministic). Empty rows and columns are
/// pruned afterwards and recorded in the matrix metadata.
pub fn binarize(rca: &RcaMatrix, threshold: f64) -> Result<BinaryMatrix, TradeError> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(TradeError::InvalidThreshold(threshold));
    }
    let rows: Vec<Vec<u8>> = (0..rca.countries.len())
        .map(|i| {
            (0..rca.products.len())
                .map(|j| u8::from(rca.get(i, j) >= threshold))
                .collect()
        })
        .collect();
    let metadata = MatrixMetadata {
        year: Some(rca.year),
        threshold: Some(threshold),
        ..MatrixMetadata::default()
    };
    Ok(BinaryMatrix::new(
        rca.countries.clone(),
        rca.products.clone(),
        rows,
        metadata,
    )?)
}
