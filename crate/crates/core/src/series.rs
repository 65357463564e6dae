//! Multivariate series, binary masks, instance normalization and the masking
//! operator `X̃ = (1 − M)∘X − M`.

use std::collections::HashSet;

use thiserror::Error;

use crate::Scalar;

/// Value written into masked cells. Normalized data live in `[0, 1]`, so the
/// sentinel cannot collide with an observation.
pub const MASK_SENTINEL: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("empty series: need at least one variable and one time step")]
    Empty,
    #[error("value buffer has {got} entries, expected {rows}x{cols}")]
    BadBuffer { rows: usize, cols: usize, got: usize },
    #[error("expected {expected} variable names, got {got}")]
    NameCount { expected: usize, got: usize },
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("resolution must be a positive number of minutes")]
    BadResolution,
    #[error("non-finite value at variable {row}, step {col}")]
    NonFinite { row: usize, col: usize },
    #[error("normalized value {value} outside [0, 1] at variable {row}, step {col}")]
    OutOfUnitRange { row: usize, col: usize, value: f64 },
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("mask entry {value} at ({row}, {col}) is not 0 or 1")]
    NonBinaryMask { row: usize, col: usize, value: u8 },
    #[error("series is already normalized")]
    AlreadyNormalized,
    #[error("series is not normalized")]
    NotNormalized,
    #[error("normalization parameters cover {params} variables, series has {series}")]
    ParamMismatch { params: usize, series: usize },
    #[error("forecast horizon {horizon} exceeds series length {len}")]
    HorizonTooLong { horizon: usize, len: usize },
    #[error("super-resolution factor must be at least 1")]
    BadFactor,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
}

/// An `E × L` matrix of named variables sampled at a fixed resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix<T> {
    values: Vec<T>,
    rows: usize,
    cols: usize,
    variable_names: Vec<String>,
    resolution_minutes: u32,
    is_normalized: bool,
}

impl<T: Scalar> TimeSeriesMatrix<T> {
    /// Builds a raw (unnormalized) series from row-major values.
    pub fn new(
        variable_names: Vec<String>,
        values: Vec<T>,
        cols: usize,
        resolution_minutes: u32,
    ) -> Result<Self, DataError> {
        Self::build(variable_names, values, cols, resolution_minutes, false)
    }

    /// Builds a series whose entries are already scaled into `[0, 1]`.
    pub fn new_normalized(
        variable_names: Vec<String>,
        values: Vec<T>,
        cols: usize,
        resolution_minutes: u32,
    ) -> Result<Self, DataError> {
        Self::build(variable_names, values, cols, resolution_minutes, true)
    }

    /// Builds a raw series from one vector per variable.
    pub fn from_rows(
        variable_names: Vec<String>,
        rows: Vec<Vec<T>>,
        resolution_minutes: u32,
    ) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DataError::BadBuffer {
                rows: rows.len(),
                cols,
                got: rows.iter().map(Vec::len).sum(),
            });
        }
        let values = rows.into_iter().flatten().collect();
        Self::new(variable_names, values, cols, resolution_minutes)
    }

    fn build(
        variable_names: Vec<String>,
        values: Vec<T>,
        cols: usize,
        resolution_minutes: u32,
        is_normalized: bool,
    ) -> Result<Self, DataError> {
        let rows = variable_names.len();
        if rows == 0 || cols == 0 {
            return Err(DataError::Empty);
        }
        if values.len() != rows * cols {
            return Err(DataError::BadBuffer {
                rows,
                cols,
                got: values.len(),
            });
        }
        if resolution_minutes == 0 {
            return Err(DataError::BadResolution);
        }
        let mut seen = HashSet::new();
        for name in &variable_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    row: i / cols,
                    col: i % cols,
                });
            }
            if is_normalized && (*v < T::zero() || *v > T::one()) {
                return Err(DataError::OutOfUnitRange {
                    row: i / cols,
                    col: i % cols,
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(Self {
            values,
            rows,
            cols,
            variable_names,
            resolution_minutes,
            is_normalized,
        })
    }

    /// Number of variables `E`.
    pub fn n_vars(&self) -> usize {
        self.rows
    }

    /// Number of time steps `L`.
    pub fn len(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.cols == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn resolution_minutes(&self) -> u32 {
        self.resolution_minutes
    }

    pub fn is_normalized(&self) -> bool {
        self.is_normalized
    }

    #[inline]
    pub fn get(&self, var: usize, step: usize) -> T {
        self.values[var * self.cols + step]
    }

    pub fn row(&self, var: usize) -> &[T] {
        &self.values[var * self.cols..(var + 1) * self.cols]
    }

    pub fn var_index(&self, name: &str) -> Result<usize, DataError> {
        self.variable_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DataError::UnknownVariable(name.to_string()))
    }

    /// First `len` steps of every variable.
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.cols).max(1);
        let values = (0..self.rows)
            .flat_map(|r| self.row(r)[..len].iter().copied())
            .collect();
        Self {
            values,
            rows: self.rows,
            cols: len,
            variable_names: self.variable_names.clone(),
            resolution_minutes: self.resolution_minutes,
            is_normalized: self.is_normalized,
        }
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> TimeSeriesMatrix<U> {
        TimeSeriesMatrix {
            values: self.values.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            rows: self.rows,
            cols: self.cols,
            variable_names: self.variable_names.clone(),
            resolution_minutes: self.resolution_minutes,
            is_normalized: self.is_normalized,
        }
    }

    /// Replaces the value buffer, keeping names and metadata.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self, DataError> {
        Self::build(
            self.variable_names.clone(),
            values,
            self.cols,
            self.resolution_minutes,
            self.is_normalized,
        )
    }

    fn check_same_shape(&self, rows: usize, cols: usize) -> Result<(), DataError> {
        if self.rows != rows || self.cols != cols {
            return Err(DataError::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rows,
                right_cols: cols,
            });
        }
        Ok(())
    }
}

/// Per-variable min/max recorded by [`instance_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
    /// Constant variables, stored as all-zero after normalization.
    pub degenerate: Vec<bool>,
}

impl<T: Scalar> NormalizationParams<T> {
    pub fn n_vars(&self) -> usize {
        self.min.len()
    }

    /// Maps a normalized value of variable `var` back to native units.
    #[inline]
    pub fn denormalize_value(&self, var: usize, v: T) -> T {
        if self.degenerate[var] {
            self.min[var]
        } else {
            v * (self.max[var] - self.min[var]) + self.min[var]
        }
    }
}

/// Min-max scales every variable of a raw series into `[0, 1]`.
pub fn instance_normalize<T: Scalar>(
    x: &TimeSeriesMatrix<T>,
) -> Result<(TimeSeriesMatrix<T>, NormalizationParams<T>), DataError> {
    if x.is_normalized {
        return Err(DataError::AlreadyNormalized);
    }
    let mut params = NormalizationParams {
        min: Vec::with_capacity(x.rows),
        max: Vec::with_capacity(x.rows),
        degenerate: Vec::with_capacity(x.rows),
    };
    let mut values = Vec::with_capacity(x.values.len());
    for r in 0..x.rows {
        let row = x.row(r);
        let (lo, hi) = row.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        // NaN spans count as degenerate
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let degenerate = !(span > T::zero());
        for &v in row {
            let n = if degenerate {
                T::zero()
            } else {
                ((v - lo) / span).max(T::zero()).min(T::one())
            };
            values.push(n);
        }
        params.min.push(lo);
        params.max.push(hi);
        params.degenerate.push(degenerate);
    }
    let normalized = TimeSeriesMatrix {
        values,
        rows: x.rows,
        cols: x.cols,
        variable_names: x.variable_names.clone(),
        resolution_minutes: x.resolution_minutes,
        is_normalized: true,
    };
    Ok((normalized, params))
}

/// Inverse of [`instance_normalize`].
pub fn denormalize<T: Scalar>(
    xn: &TimeSeriesMatrix<T>,
    params: &NormalizationParams<T>,
) -> Result<TimeSeriesMatrix<T>, DataError> {
    if params.n_vars() != xn.rows || params.max.len() != xn.rows || params.degenerate.len() != xn.rows {
        return Err(DataError::ParamMismatch {
            params: params.n_vars(),
            series: xn.rows,
        });
    }
    let values = xn
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| params.denormalize_value(i / xn.cols, v))
        .collect();
    Ok(TimeSeriesMatrix {
        values,
        rows: xn.rows,
        cols: xn.cols,
        variable_names: xn.variable_names.clone(),
        resolution_minutes: xn.resolution_minutes,
        is_normalized: false,
    })
}

/// Binary `E × L` matrix; `1` marks a cell the model must reconstruct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    values: Vec<u8>,
    rows: usize,
    cols: usize,
}

impl MaskMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            values: vec![0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            values: vec![1; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<u8>) -> Result<Self, DataError> {
        if values.len() != rows * cols {
            return Err(DataError::BadBuffer {
                rows,
                cols,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(DataError::NonBinaryMask {
                row: i / cols,
                col: i % cols,
                value: values[i],
            });
        }
        Ok(Self { values, rows, cols })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, var: usize, step: usize) -> bool {
        self.values[var * self.cols + step] == 1
    }

    #[inline]
    pub fn set(&mut self, var: usize, step: usize, masked: bool) {
        self.values[var * self.cols + step] = u8::from(masked);
    }

    pub fn row(&self, var: usize) -> &[u8] {
        &self.values[var * self.cols..(var + 1) * self.cols]
    }

    pub fn count_masked(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Mask restricted to the first `len` steps.
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.cols);
        let values = (0..self.rows)
            .flat_map(|r| self.row(r)[..len].iter().copied())
            .collect();
        Self {
            values,
            rows: self.rows,
            cols: len,
        }
    }

    /// One line per variable, comma-separated 0/1.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 2);
        for r in 0..self.rows {
            let line: Vec<&str> = self
                .row(r)
                .iter()
                .map(|&v| if v == 1 { "1" } else { "0" })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Normalized series with masked cells overwritten by [`MASK_SENTINEL`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSeries<T> {
    values: Vec<T>,
    rows: usize,
    cols: usize,
    mask: MaskMatrix,
}

impl<T: Scalar> MaskedSeries<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, var: usize, step: usize) -> T {
        self.values[var * self.cols + step]
    }

    pub fn row(&self, var: usize) -> &[T] {
        &self.values[var * self.cols..(var + 1) * self.cols]
    }

    /// Pads with the sentinel (mask 0) or truncates to `len` steps.
    pub fn padded_to(&self, len: usize) -> Self {
        let sentinel = T::of(MASK_SENTINEL);
        let mut values = Vec::with_capacity(self.rows * len);
        let mut mask = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            for t in 0..len {
                if t < self.cols {
                    values.push(self.values[r * self.cols + t]);
                    mask.push(self.mask.values[r * self.cols + t]);
                } else {
                    values.push(sentinel);
                    mask.push(0);
                }
            }
        }
        Self {
            values,
            rows: self.rows,
            cols: len,
            mask: MaskMatrix {
                values: mask,
                rows: self.rows,
                cols: len,
            },
        }
    }
}

/// `X̃ = (1 − M)∘X + (−1)·M`.
pub fn apply_mask<T: Scalar>(
    x: &TimeSeriesMatrix<T>,
    mask: &MaskMatrix,
) -> Result<MaskedSeries<T>, DataError> {
    if !x.is_normalized {
        return Err(DataError::NotNormalized);
    }
    x.check_same_shape(mask.rows, mask.cols)?;
    let sentinel = T::of(MASK_SENTINEL);
    let values = x
        .values
        .iter()
        .zip(&mask.values)
        .map(|(&v, &m)| if m == 1 { sentinel } else { v })
        .collect();
    Ok(MaskedSeries {
        values,
        rows: x.rows,
        cols: x.cols,
        mask: mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn normalize_linear_endpoints() {
        let x = TimeSeriesMatrix::new(names(1), vec![0.0, 5.0, 10.0], 3, 1).unwrap();
        let (n, p) = instance_normalize(&x).unwrap();
        assert_eq!(n.values(), &[0.0, 0.5, 1.0]);
        assert_eq!((p.min[0], p.max[0]), (0.0, 10.0));
        assert!(!p.degenerate[0]);
    }

    #[test]
    fn constant_row_is_degenerate() {
        let x = TimeSeriesMatrix::new(names(1), vec![3.0, 3.0, 3.0], 3, 1).unwrap();
        let (n, p) = instance_normalize(&x).unwrap();
        assert_eq!(n.values(), &[0.0, 0.0, 0.0]);
        assert!(p.degenerate[0]);
        let back = denormalize(&n, &p).unwrap();
        assert_eq!(back.values(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn denormalize_inverse_example() {
        let xn = TimeSeriesMatrix::new_normalized(names(1), vec![0.0, 0.5, 1.0], 3, 1).unwrap();
        let p = NormalizationParams {
            min: vec![0.0],
            max: vec![10.0],
            degenerate: vec![false],
        };
        assert_eq!(denormalize(&xn, &p).unwrap().values(), &[0.0, 5.0, 10.0]);
    }

    #[test]
    fn non_finite_rejected_with_index() {
        let err = TimeSeriesMatrix::new(names(2), vec![0.0, 1.0, f64::NAN, 2.0], 2, 1).unwrap_err();
        assert_eq!(err, DataError::NonFinite { row: 1, col: 0 });
    }

    #[test]
    fn denormalize_rejects_param_mismatch() {
        let xn = TimeSeriesMatrix::new_normalized(names(2), vec![0.0; 4], 2, 1).unwrap();
        let p = NormalizationParams {
            min: vec![0.0],
            max: vec![1.0],
            degenerate: vec![false],
        };
        assert!(matches!(denormalize(&xn, &p), Err(DataError::ParamMismatch { .. })));
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = TimeSeriesMatrix::new(vec!["a".into(), "a".into()], vec![0.0; 2], 1, 1).unwrap_err();
        assert_eq!(err, DataError::DuplicateName("a".into()));
    }

    #[test]
    fn apply_mask_identity_and_full() {
        let x = TimeSeriesMatrix::new_normalized(names(2), vec![0.1, 0.2, 0.3, 0.4], 2, 1).unwrap();
        let none = apply_mask(&x, &MaskMatrix::zeros(2, 2)).unwrap();
        assert_eq!(none.values(), x.values());
        let all = apply_mask(&x, &MaskMatrix::ones(2, 2)).unwrap();
        assert!(all.values().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn apply_mask_rejects_raw_and_mismatch() {
        let raw = TimeSeriesMatrix::new(names(1), vec![4.0, 5.0], 2, 1).unwrap();
        assert_eq!(
            apply_mask(&raw, &MaskMatrix::zeros(1, 2)).unwrap_err(),
            DataError::NotNormalized
        );
        let xn = TimeSeriesMatrix::new_normalized(names(1), vec![0.0, 1.0], 2, 1).unwrap();
        assert!(matches!(
            apply_mask(&xn, &MaskMatrix::zeros(1, 3)),
            Err(DataError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mask_csv() {
        let mut m = MaskMatrix::zeros(2, 3);
        m.set(1, 2, true);
        assert_eq!(m.to_csv(), "0,0,0\n0,0,1\n");
    }
}
