//! The binary country-product incidence matrix, its degree statistics and
//! synthetic generators.
//!
//! [`BinaryMatrix`] is what every ranking algorithm consumes. Construction
//! prunes all-zero rows and columns (the fitness update divides by column
//! sums, so an empty column would be undefined) and records what was pruned
//! in the matrix metadata.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("empty matrix")]
    Empty,
    #[error("duplicate identifier `{0}`")]
    DuplicateIdentifier(String),
    #[error("row {row} has {got} cells, expected {expected}")]
    RowLength {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("cell ({row}, {col}) is `{value}`, expected 0 or 1")]
    NonBinaryCell {
        row: usize,
        col: usize,
        value: String,
    },
    #[error("nested generator needs c >= 1 and p >= c, got c={c}, p={p}")]
    InvalidNestedShape { c: usize, p: usize },
    #[error("flip probability must lie in [0, 0.5), got {0}")]
    InvalidFlipProbability(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Provenance carried along with a matrix: where it came from and what was
/// pruned while constructing it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixMetadata {
    pub year: Option<i32>,
    pub threshold: Option<f64>,
    pub pruned_countries: Vec<String>,
    pub pruned_products: Vec<String>,
}

/// A C x P matrix over {0, 1} linking countries to the products they export
/// competitively.
///
/// Invariants, enforced on construction:
/// * identifier lists are duplicate-free,
/// * every row and every column contains at least one 1,
/// * C >= 1 and P >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMatrix {
    countries: Vec<String>,
    products: Vec<String>,
    /// Row-major C x P entries, each 0 or 1.
    entries: Vec<u8>,
    metadata: MatrixMetadata,
}

impl BinaryMatrix {
    /// Build a matrix from per-country rows, pruning all-zero rows and
    /// columns. Pruned identifiers are appended to the metadata.
    pub fn new(
        countries: Vec<String>,
        products: Vec<String>,
        rows: Vec<Vec<u8>>,
        mut metadata: MatrixMetadata,
    ) -> Result<Self, MatrixError> {
        check_unique(&countries)?;
        check_unique(&products)?;
        if rows.len() != countries.len() {
            return Err(MatrixError::RowLength {
                row: rows.len(),
                got: rows.len(),
                expected: countries.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != products.len() {
                return Err(MatrixError::RowLength {
                    row: i,
                    got: row.len(),
                    expected: products.len(),
                });
            }
            for (j, &cell) in row.iter().enumerate() {
                if cell > 1 {
                    return Err(MatrixError::NonBinaryCell {
                        row: i,
                        col: j,
                        value: cell.to_string(),
                    });
                }
            }
        }

        // A 1-cell keeps both its row and its column alive, so a single pass
        // over the original sums prunes everything that has to go.
        let keep_rows: Vec<usize> = (0..countries.len())
            .filter(|&i| rows[i].contains(&1))
            .collect();
        let keep_cols: Vec<usize> = (0..products.len())
            .filter(|&j| rows.iter().any(|r| r[j] == 1))
            .collect();
        for (i, id) in countries.iter().enumerate() {
            if !keep_rows.contains(&i) {
                metadata.pruned_countries.push(id.clone());
            }
        }
        for (j, id) in products.iter().enumerate() {
            if !keep_cols.contains(&j) {
                metadata.pruned_products.push(id.clone());
            }
        }
        if keep_rows.is_empty() || keep_cols.is_empty() {
            return Err(MatrixError::Empty);
        }

        let mut entries = Vec::with_capacity(keep_rows.len() * keep_cols.len());
        for &i in &keep_rows {
            for &j in &keep_cols {
                entries.push(rows[i][j]);
            }
        }
        Ok(BinaryMatrix {
            countries: keep_rows.iter().map(|&i| countries[i].clone()).collect(),
            products: keep_cols.iter().map(|&j| products[j].clone()).collect(),
            entries,
            metadata,
        })
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_products(&self) -> usize {
        self.products.len()
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn products(&self) -> &[String] {
        &self.products
    }

    pub fn metadata(&self) -> &MatrixMetadata {
        &self.metadata
    }

    pub fn get(&self, country: usize, product: usize) -> bool {
        self.entries[country * self.products.len() + product] == 1
    }

    /// One row of 0/1 cells for a country.
    pub fn row(&self, country: usize) -> &[u8] {
        let p = self.products.len();
        &self.entries[country * p..(country + 1) * p]
    }

    pub fn country_index(&self, id: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == id)
    }

    pub fn product_index(&self, id: &str) -> Option<usize> {
        self.products.iter().position(|p| p == id)
    }

    /// d_c: number of products each country exports. Positive by invariant.
    pub fn diversification(&self) -> Vec<u32> {
        (0..self.countries.len())
            .map(|i| self.row(i).iter().map(|&c| c as u32).sum())
            .collect()
    }

    /// u_p: number of countries exporting each product. Positive by invariant.
    pub fn ubiquity(&self) -> Vec<u32> {
        let mut sums = vec![0u32; self.products.len()];
        for i in 0..self.countries.len() {
            for (j, &cell) in self.row(i).iter().enumerate() {
                sums[j] += cell as u32;
            }
        }
        sums
    }

    pub fn ones_count(&self) -> usize {
        self.entries.iter().filter(|&&c| c == 1).count()
    }

    /// Serialize as CSV: header `country,<product ids...>`, then one row per
    /// country with 0/1 cells.
    pub fn to_csv_writer<W: Write>(&self, w: W) -> Result<(), MatrixError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["country".to_string()];
        header.extend(self.products.iter().cloned());
        wtr.write_record(&header)?;
        for (i, country) in self.countries.iter().enumerate() {
            let mut record = vec![country.clone()];
            record.extend(self.row(i).iter().map(|c| c.to_string()));
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_csv_writer(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Parse the CSV form written by [`Self::to_csv_writer`]. Lines starting
    /// with `#` are skipped so provenance headers pass through unharmed.
    pub fn from_csv_reader<R: Read>(r: R) -> Result<Self, MatrixError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(r);
        let headers = match rdr.headers() {
            Ok(h) if h.len() >= 2 => h.clone(),
            _ => return Err(MatrixError::Empty),
        };
        let products: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
        let mut countries = Vec::new();
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != products.len() + 1 {
                return Err(MatrixError::RowLength {
                    row: i,
                    got: record.len().saturating_sub(1),
                    expected: products.len(),
                });
            }
            countries.push(record[0].to_string());
            let mut row = Vec::with_capacity(products.len());
            for (j, cell) in record.iter().skip(1).enumerate() {
                match cell.trim() {
                    "0" => row.push(0),
                    "1" => row.push(1),
                    other => {
                        return Err(MatrixError::NonBinaryCell {
                            row: i,
                            col: j,
                            value: other.to_string(),
                        })
                    }
                }
            }
            rows.push(row);
        }
        if countries.is_empty() {
            return Err(MatrixError::Empty);
        }
        Self::new(countries, products, rows, MatrixMetadata::default())
    }
}

fn check_unique(ids: &[String]) -> Result<(), MatrixError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(MatrixError::DuplicateIdentifier(id.clone()));
        }
    }
    Ok(())
}

/// Zero-padded identifiers like `c01..c12`, so lexicographic order matches
/// numeric order.
fn indexed_ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n)
        .map(|i| format!("{prefix}{i:0width$}"))
        .collect()
}

/// Perfectly nested staircase matrix: country i (1-based) exports products
/// 1..=ceil(p * i / c), so each country's product set contains the previous
/// country's.
pub fn generate_nested(c: usize, p: usize) -> Result<BinaryMatrix, MatrixError> {
    if c < 1 || p < c {
        return Err(MatrixError::InvalidNestedShape { c, p });
    }
    let rows = staircase_rows(c, p);
    BinaryMatrix::new(
        indexed_ids("c", c),
        indexed_ids("p", p),
        rows,
        MatrixMetadata::default(),
    )
}

fn staircase_rows(c: usize, p: usize) -> Vec<Vec<u8>> {
    (1..=c)
        .map(|i| {
            let width = (p * i).div_ceil(c);
            (1..=p).map(|j| u8::from(j <= width)).collect()
        })
        .collect()
}

/// Staircase matrix with every cell flipped independently with probability
/// `flip_prob`, then pruned.
///
/// The noise stream is pinned down so runs are reproducible anywhere: a
/// ChaCha8 generator seeded with `seed_from_u64(seed)` is consumed in
/// row-major cell order, one standard-uniform f64 per cell, and the cell is
/// flipped when that draw is below `flip_prob`.
pub fn generate_noisy_nested(
    c: usize,
    p: usize,
    flip_prob: f64,
    seed: u64,
) -> Result<BinaryMatrix, MatrixError> {
    if !(0.0..0.5).contains(&flip_prob) {
        return Err(MatrixError::InvalidFlipProbability(flip_prob));
    }
    if c < 1 || p < c {
        return Err(MatrixError::InvalidNestedShape { c, p });
    }
    let mut rows = staircase_rows(c, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in rows.iter_mut() {
        for cell in row.iter_mut() {
            if rng.random::<f64>() < flip_prob {
                *cell = 1 - *cell;
            }
        }
    }
    BinaryMatrix::new(
        indexed_ids("c", c),
        indexed_ids("p", p),
        rows,
        MatrixMetadata::default(),
    )
}

/// The two-country teaching fixture: country A exports all ten products
/// q1..q10, country B exports only q6.
pub fn fig1_fixture() -> BinaryMatrix {
    let products: Vec<String> = (1..=10).map(|i| format!("q{i}")).collect();
    let row_a = vec![1u8; 10];
    let mut row_b = vec![0u8; 10];
    row_b[5] = 1; // q6
    BinaryMatrix::new(
        vec!["A".to_string(), "B".to_string()],
        products,
        vec![row_a, row_b],
        MatrixMetadata::default(),
    )
    .expect("fixture is valid")
}

/// Exogenous product complexities for the fixture: product qk scores k,
/// aligned with [`fig1_fixture`]'s product order.
pub fn fig1_complexities() -> Vec<f64> {
    (1..=10).map(|i| i as f64).collect()
}
