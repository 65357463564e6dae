//! Reconstruction metrics: MAE, RMSE, FID over fixed windows, DTW,
//! correlation-matrix discrepancy and power-balance MAE.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matmul, psd_sqrt, symmetric_eigen};
use crate::plant::PowerRoles;
use crate::series::{DataError, MaskMatrix, TimeSeriesMatrix};
use crate::Scalar;

pub const DEFAULT_FID_WINDOW: usize = 32;

/// Absolute floor for the negative-eigenvalue tolerance in FID; the
/// effective tolerance scales with the largest eigenvalue.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no cells selected")]
    EmptySelection,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least 2 feature vectors, got {0}")]
    TooFewFeatures(usize),
    #[error("covariance product is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("correlation discrepancy needs at least 2 variables")]
    TooFewVariables,
    #[error("power roles out of range for {0} variables")]
    MissingRole(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn check_len<A, B>(a: &[A], b: &[B]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn selected_errors<'a, T: Scalar>(
    y: &'a [T],
    y_hat: &'a [T],
    scope: Option<&'a [u8]>,
) -> Result<impl Iterator<Item = T> + 'a, MetricError> {
    check_len(y, y_hat)?;
    if let Some(s) = scope {
        check_len(y, s)?;
    }
    Ok(y.iter()
        .zip(y_hat)
        .enumerate()
        .filter(move |(i, _)| scope.is_none_or(|s| s[*i] != 0))
        .map(|(_, (a, b))| *a - *b))
}

/// Mean absolute error over all cells, or only those where `scope` is nonzero.
pub fn mae<T: Scalar>(y: &[T], y_hat: &[T], scope: Option<&[u8]>) -> Result<T, MetricError> {
    let (mut sum, mut n) = (T::zero(), 0usize);
    for e in selected_errors(y, y_hat, scope)? {
        sum += e.abs();
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::EmptySelection);
    }
    Ok(sum / T::of(n as f64))
}

pub fn rmse<T: Scalar>(y: &[T], y_hat: &[T], scope: Option<&[u8]>) -> Result<T, MetricError> {
    let (mut sum, mut n) = (T::zero(), 0usize);
    for e in selected_errors(y, y_hat, scope)? {
        sum += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::EmptySelection);
    }
    Ok((sum / T::of(n as f64)).sqrt())
}

/// Gaussian fit of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FidFeatureSet<T> {
    pub m: usize,
    pub dim: usize,
    pub mean: Vec<T>,
    /// Unbiased covariance, row-major `dim × dim`.
    pub cov: Vec<T>,
}

impl<T: Scalar> FidFeatureSet<T> {
    pub fn from_vectors(vectors: &[Vec<T>]) -> Result<Self, MetricError> {
        let m = vectors.len();
        if m < 2 {
            return Err(MetricError::TooFewFeatures(m));
        }
        let dim = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(MetricError::DimMismatch(dim, v.len()));
        }
        let mt = T::of(m as f64);
        let mut mean = vec![T::zero(); dim];
        for v in vectors {
            for (a, x) in mean.iter_mut().zip(v) {
                *a += *x;
            }
        }
        mean.iter_mut().for_each(|a| *a /= mt);
        let mut cov = vec![T::zero(); dim * dim];
        for v in vectors {
            for i in 0..dim {
                let di = v[i] - mean[i];
                for j in i..dim {
                    cov[i * dim + j] += di * (v[j] - mean[j]);
                }
            }
        }
        let denom = T::of((m - 1) as f64);
        for i in 0..dim {
            for j in i..dim {
                let c = cov[i * dim + j] / denom;
                cov[i * dim + j] = c;
                cov[j * dim + i] = c;
            }
        }
        Ok(Self { m, dim, mean, cov })
    }

    /// Non-overlapping windows of `window` steps; a trailing partial window
    /// is dropped.
    pub fn from_windows(series: &[T], window: usize) -> Result<Self, MetricError> {
        if window == 0 {
            return Err(MetricError::DimMismatch(0, series.len()));
        }
        let vectors: Vec<Vec<T>> = series.chunks_exact(window).map(<[T]>::to_vec).collect();
        Self::from_vectors(&vectors)
    }

    /// Pools windows from several series of the same variable.
    pub fn from_many_windows<'a, I>(series: I, window: usize) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        if window == 0 {
            return Err(MetricError::DimMismatch(0, 0));
        }
        let vectors: Vec<Vec<T>> = series
            .into_iter()
            .flat_map(|s| s.chunks_exact(window).map(<[T]>::to_vec))
            .collect();
        Self::from_vectors(&vectors)
    }
}

/// `‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2(Σ_r Σ_g)^{1/2})`, with the trace of the
/// square root taken from the symmetric product `Σ_r^{1/2} Σ_g Σ_r^{1/2}`.
pub fn fid<T: Scalar>(real: &FidFeatureSet<T>, gen: &FidFeatureSet<T>) -> Result<T, MetricError> {
    if real.dim != gen.dim {
        return Err(MetricError::DimMismatch(real.dim, gen.dim));
    }
    let p = real.dim;
    let mean_term: T = real.mean.iter().zip(&gen.mean).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    let scale = |c: &[T]| (0..p).map(|i| c[i * p + i].abs()).fold(T::zero(), T::max);
    let tol_r = T::of(PSD_TOL) * T::one().max(scale(&real.cov));
    let sr = psd_sqrt(&real.cov, p, tol_r).ok_or(MetricError::NotPsd(f64::NAN))?;
    let mut prod = matmul(&matmul(&sr, &gen.cov, p, p, p), &sr, p, p, p);
    for i in 0..p {
        for j in i + 1..p {
            let s = (prod[i * p + j] + prod[j * p + i]) / T::of(2.0);
            prod[i * p + j] = s;
            prod[j * p + i] = s;
        }
    }
    let (vals, _) = symmetric_eigen(&prod, p);
    let top = vals.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let tol = T::of(PSD_TOL) * T::one().max(top);
    let mut tr_sqrt = T::zero();
    for v in vals {
        if v < -tol {
            return Err(MetricError::NotPsd(v.to_f64_lossy()));
        }
        tr_sqrt += v.max(T::zero()).sqrt();
    }
    let tr: T = (0..p).map(|i| real.cov[i * p + i] + gen.cov[i * p + i]).sum();
    Ok((mean_term + tr - T::of(2.0) * tr_sqrt).max(T::zero()))
}

/// Dynamic time warping with absolute-difference cost over the full lattice,
/// steps (1,0), (0,1), (1,1), anchored at both ends.
pub fn dtw<T: Scalar>(r: &[T], g: &[T]) -> Result<T, MetricError> {
    if r.is_empty() || g.is_empty() {
        return Err(MetricError::EmptySelection);
    }
    let m = g.len();
    let inf = T::infinity();
    let mut prev = vec![inf; m];
    let mut cur = vec![inf; m];
    for (i, &ri) in r.iter().enumerate() {
        for j in 0..m {
            let d = (ri - g[j]).abs();
            let best = if i == 0 && j == 0 {
                T::zero()
            } else {
                let mut b = inf;
                if i > 0 {
                    b = b.min(prev[j]);
                }
                if j > 0 {
                    b = b.min(cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    b = b.min(prev[j - 1]);
                }
                b
            };
            cur[j] = best + d;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let n = T::of(a.len() as f64);
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (*x - ma, *y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrDiscrepancy {
    pub value: f64,
    /// Pairs left out because a variable had zero variance in either input.
    pub skipped_pairs: usize,
}

/// `Σ_{i<j} |corr_out(i, j) − corr_gt(i, j)|`.
pub fn corr_discrepancy<T: Scalar>(
    out: &TimeSeriesMatrix<T>,
    gt: &TimeSeriesMatrix<T>,
) -> Result<CorrDiscrepancy, MetricError> {
    if out.shape() != gt.shape() {
        let (a, b) = (out.shape(), gt.shape());
        return Err(DataError::ShapeMismatch {
            left_rows: a.0,
            left_cols: a.1,
            right_rows: b.0,
            right_cols: b.1,
        }
        .into());
    }
    let e = out.n_vars();
    if e < 2 {
        return Err(MetricError::TooFewVariables);
    }
    let (mut value, mut skipped) = (0.0, 0);
    for i in 0..e {
        for j in i + 1..e {
            match (pearson(out.row(i), out.row(j)), pearson(gt.row(i), gt.row(j))) {
                (Some(a), Some(b)) => value += (a - b).abs().to_f64_lossy(),
                _ => skipped += 1,
            }
        }
    }
    Ok(CorrDiscrepancy {
        value,
        skipped_pairs: skipped,
    })
}

/// Per-step residual `total − (pv + storage)`.
pub fn power_residual<T: Scalar>(x: &TimeSeriesMatrix<T>, roles: PowerRoles) -> Result<Vec<T>, MetricError> {
    let e = x.n_vars();
    if roles.total >= e || roles.pv >= e || roles.storage >= e {
        return Err(MetricError::MissingRole(e));
    }
    Ok((0..x.len())
        .map(|t| x.get(roles.total, t) - (x.get(roles.pv, t) + x.get(roles.storage, t)))
        .collect())
}

/// `mean |R_true − R_pred|` on raw (denormalized) series.
pub fn power_balance_mae<T: Scalar>(
    pred: &TimeSeriesMatrix<T>,
    truth: &TimeSeriesMatrix<T>,
    roles: PowerRoles,
) -> Result<T, MetricError> {
    if pred.is_normalized() || truth.is_normalized() {
        return Err(DataError::AlreadyNormalized.into());
    }
    let rp = power_residual(pred, roles)?;
    let rt = power_residual(truth, roles)?;
    mae(&rt, &rp, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    Masked,
}

/// Metrics of one prediction against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scope: Scope,
    pub variables: Vec<String>,
    /// Per variable; `None` when the scope selects no cell of that variable.
    pub mae: Vec<Option<f64>>,
    pub rmse: Vec<Option<f64>>,
    /// Per variable; `None` in masked scope or when too few windows exist.
    pub fid: Vec<Option<f64>>,
    pub dtw: Vec<Option<f64>>,
    pub mae_mean: f64,
    pub rmse_mean: f64,
    pub fid_mean: Option<f64>,
    pub dtw_mean: Option<f64>,
    pub corr_discrepancy: f64,
    pub corr_skipped_pairs: usize,
    pub power_balance_mae: Option<f64>,
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub scope: Scope,
    pub fid_window: usize,
    pub roles: Option<PowerRoles>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            scope: Scope::All,
            fid_window: DEFAULT_FID_WINDOW,
            roles: None,
        }
    }
}

fn mean_of(xs: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates raw-unit predictions. `mask` selects the masked cells in
/// [`Scope::Masked`]; it is ignored in [`Scope::All`]. Aggregate MAE/RMSE
/// pool every selected cell.
pub fn evaluate<T: Scalar>(
    pred: &TimeSeriesMatrix<T>,
    truth: &TimeSeriesMatrix<T>,
    mask: Option<&MaskMatrix>,
    opts: &EvalOptions,
) -> Result<MetricReport, MetricError> {
    if pred.shape() != truth.shape() {
        let (a, b) = (pred.shape(), truth.shape());
        return Err(DataError::ShapeMismatch {
            left_rows: a.0,
            left_cols: a.1,
            right_rows: b.0,
            right_cols: b.1,
        }
        .into());
    }
    let (e, l) = pred.shape();
    let scope_rows: Option<&MaskMatrix> = match opts.scope {
        Scope::All => None,
        Scope::Masked => {
            let m = mask.ok_or(MetricError::EmptySelection)?;
            if m.shape() != (e, l) {
                return Err(DataError::ShapeMismatch {
                    left_rows: e,
                    left_cols: l,
                    right_rows: m.shape().0,
                    right_cols: m.shape().1,
                }
                .into());
            }
            Some(m)
        }
    };
    let mut maes = Vec::with_capacity(e);
    let mut rmses = Vec::with_capacity(e);
    let mut fids = Vec::with_capacity(e);
    let mut dtws = Vec::with_capacity(e);
    for v in 0..e {
        let s = scope_rows.map(|m| m.row(v));
        maes.push(mae(truth.row(v), pred.row(v), s).ok().map(|x| x.to_f64_lossy()));
        rmses.push(rmse(truth.row(v), pred.row(v), s).ok().map(|x| x.to_f64_lossy()));
        if opts.scope == Scope::All {
            let f = match (
                FidFeatureSet::from_windows(truth.row(v), opts.fid_window),
                FidFeatureSet::from_windows(pred.row(v), opts.fid_window),
            ) {
                (Ok(a), Ok(b)) => Some(fid(&a, &b)?.to_f64_lossy()),
                _ => None,
            };
            fids.push(f);
            dtws.push(Some(dtw(truth.row(v), pred.row(v))?.to_f64_lossy()));
        } else {
            fids.push(None);
            dtws.push(None);
        }
    }
    let all_scope = scope_rows.map(MaskMatrix::values);
    let mae_mean = mae(truth.values(), pred.values(), all_scope)?.to_f64_lossy();
    let rmse_mean = rmse(truth.values(), pred.values(), all_scope)?.to_f64_lossy();
    let cd = if e >= 2 {
        corr_discrepancy(pred, truth)?
    } else {
        CorrDiscrepancy {
            value: 0.0,
            skipped_pairs: 0,
        }
    };
    let pb = match opts.roles {
        Some(r) => Some(power_balance_mae(pred, truth, r)?.to_f64_lossy()),
        None => None,
    };
    Ok(MetricReport {
        scope: opts.scope,
        variables: truth.variable_names().to_vec(),
        fid_mean: mean_of(&fids),
        dtw_mean: mean_of(&dtws),
        mae: maes,
        rmse: rmses,
        fid: fids,
        dtw: dtws,
        mae_mean,
        rmse_mean,
        corr_discrepancy: cd.value,
        corr_skipped_pairs: cd.skipped_pairs,
        power_balance_mae: pb,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "scope",
            "mae",
            "rmse",
            "fid",
            "dtw",
            "corr_discrepancy",
            "power_balance_mae",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for v in &self.variables {
            for m in ["mae", "rmse", "fid", "dtw"] {
                h.push(format!("{m}_{v}"));
            }
        }
        h
    }

    /// Flat record matching [`csv_header`](Self::csv_header); missing values are empty.
    pub fn csv_row(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut r = vec![
            match self.scope {
                Scope::All => "all".to_string(),
                Scope::Masked => "masked".to_string(),
            },
            self.mae_mean.to_string(),
            self.rmse_mean.to_string(),
            opt(self.fid_mean),
            opt(self.dtw_mean),
            self.corr_discrepancy.to_string(),
            opt(self.power_balance_mae),
        ];
        for i in 0..self.variables.len() {
            r.extend([opt(self.mae[i]), opt(self.rmse[i]), opt(self.fid[i]), opt(self.dtw[i])]);
        }
        r
    }

    /// Header plus one data row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_header()).expect("in-memory write");
        w.write_record(self.csv_row()).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset() {
        let y = [1.0f64, 2.0, 3.0];
        let yh = [1.5, 2.5, 3.5];
        assert!((mae(&y, &yh, None).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&y, &yh, None).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mae(&y, &yh, Some(&[0, 0, 0])), Err(MetricError::EmptySelection));
    }

    #[test]
    fn dtw_single_point() {
        assert_eq!(dtw(&[2.0], &[5.0]).unwrap(), 3.0);
        assert_eq!(dtw(&[0.0, 1.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn fid_identical_is_zero() {
        let v = vec![vec![1.0f64, 2.0], vec![2.0, 1.0], vec![0.5, 0.7], vec![3.0, 1.1]];
        let a = FidFeatureSet::from_vectors(&v).unwrap();
        assert!(fid(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn report_csv_has_matching_columns() {
        let names = vec!["a".to_string(), "b".to_string()];
        let x = TimeSeriesMatrix::new(names, (0..128).map(|i| (i as f64 * 0.37).sin()).collect(), 64, 1).unwrap();
        let r = evaluate(&x, &x, None, &EvalOptions::default()).unwrap();
        assert_eq!(r.csv_header().len(), r.csv_row().len());
        assert_eq!(r.mae_mean, 0.0);
        assert_eq!(r.fid_mean.map(|f| f < 1e-8), Some(true));
    }
}
