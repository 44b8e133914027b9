//! Dense row-major 2-D arrays shared by models, sections and feature maps.

use serde::{Deserialize, Serialize};

/// A `rows × cols` matrix of `f64`, row 0 at the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    /// Wraps an existing buffer; `None` when the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, self.cols - 1 - j))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// The most frequent value (bitwise equality); ties go to the smaller value.
    pub fn mode(&self) -> f64 {
        let mut sorted: Vec<u64> = self.data.iter().map(|v| v.to_bits()).collect();
        sorted.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
        let mut best = (0usize, f64::NAN);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            if j - i > best.0 {
                best = (j - i, f64::from_bits(sorted[i]));
            }
            i = j;
        }
        best.1
    }

    /// Row-major CSV with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 16);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format_sig9(self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }

    /// Parses comma-separated rows; blank lines are skipped.
    pub fn from_csv(text: &str) -> Result<Self, CsvError> {
        let mut rows = 0;
        let mut cols = None;
        let mut data = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| CsvError::BadNumber {
                    line: lineno + 1,
                    field: field.trim().to_string(),
                })?;
                data.push(v);
            }
            let n = data.len() - before;
            match cols {
                None => cols = Some(n),
                Some(c) if c != n => {
                    return Err(CsvError::Ragged {
                        line: lineno + 1,
                        expected: c,
                        found: n,
                    })
                }
                _ => {}
            }
            rows += 1;
        }
        let cols = cols.ok_or(CsvError::Empty)?;
        Ok(Self { rows, cols, data })
    }
}

/// Formats with 9 significant digits, dropping redundant trailing zeros.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.8e}");
    // Round-trip through the parser so 5.00000000e2 prints as 500.
    let parsed: f64 = s.parse().unwrap_or(v);
    let plain = format!("{parsed}");
    if plain.len() <= s.len() {
        plain
    } else {
        s
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CsvError {
    #[error("empty CSV")]
    Empty,
    #[error("line {line}: cannot parse {field:?} as a number")]
    BadNumber { line: usize, field: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
}
