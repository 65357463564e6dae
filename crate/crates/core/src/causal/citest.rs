use statrs::distribution::{ContinuousCDF, Normal};

use super::{CausalError, CiTestConfig, SampleMatrix};
use crate::linalg::{cholesky, cholesky_solve};
use crate::Scalar;

/// Outcome of one conditional independence test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiVerdict<T> {
    pub independent: bool,
    /// `√(n − |Z| − 3) · |atanh(r)|`.
    pub statistic: T,
    /// Partial correlation before clamping.
    pub r: T,
    pub p_value: f64,
    /// The conditioning covariance was singular; the pair is kept as dependent.
    pub singular: bool,
    /// One endpoint is an exact linear function of the conditioning set.
    pub determined: bool,
}

pub(crate) enum Partial<T> {
    Corr(T),
    /// An endpoint has (numerically) zero residual variance given Z, so it is
    /// trivially independent of anything conditional on Z.
    Determined,
}

fn residual_tol<T: Scalar>() -> T {
    T::of(1e-10).max(T::epsilon() * T::of(100.0))
}

fn singular_tol<T: Scalar>() -> T {
    T::epsilon() * T::of(1e4)
}

/// Partial correlation of the first two variables of a covariance matrix
/// given the remaining `m − 2`.
pub(crate) fn partial_from_cov<T: Scalar>(cov: &[T], m: usize) -> Result<Partial<T>, CausalError> {
    let sd: Vec<T> = (0..m).map(|i| cov[i * m + i].max(T::zero()).sqrt()).collect();
    if sd[0] == T::zero() || sd[1] == T::zero() {
        return Ok(Partial::Determined);
    }
    if sd[2..].iter().any(|s| *s == T::zero()) {
        return Err(CausalError::RankDeficient);
    }
    let corr = |i: usize, j: usize| cov[i * m + j] / (sd[i] * sd[j]);
    let k = m - 2;
    let (ruu, rvv, ruv) = if k == 0 {
        (T::one(), T::one(), corr(0, 1))
    } else {
        let szz: Vec<T> = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| corr(i + 2, j + 2))
            .collect();
        let l = cholesky(&szz, k, singular_tol()).ok_or(CausalError::RankDeficient)?;
        let szu: Vec<T> = (0..k).map(|i| corr(i + 2, 0)).collect();
        let szv: Vec<T> = (0..k).map(|i| corr(i + 2, 1)).collect();
        let wu = cholesky_solve(&l, k, &szu);
        let wv = cholesky_solve(&l, k, &szv);
        let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| *x * *y).sum::<T>();
        (
            T::one() - dot(&szu, &wu),
            T::one() - dot(&szv, &wv),
            corr(0, 1) - dot(&szu, &wv),
        )
    };
    let tol = residual_tol::<T>();
    if ruu <= tol || rvv <= tol {
        return Ok(Partial::Determined);
    }
    let r = ruv / (ruu * rvv).sqrt();
    Ok(Partial::Corr(r.max(-T::one()).min(T::one())))
}

fn check_indices(p: usize, u: usize, v: usize, z: &[usize]) -> Result<(), CausalError> {
    for &i in [u, v].iter().chain(z) {
        if i >= p {
            return Err(CausalError::IndexOutOfRange(i));
        }
    }
    if u == v || z.contains(&u) || z.contains(&v) {
        return Err(CausalError::BadIndices);
    }
    Ok(())
}

/// Correlation of the OLS residuals of `u` and `v` after regressing each on
/// `z` (with intercept). An empty `z` gives the Pearson correlation. When an
/// endpoint is an exact linear function of `z` the result is 0.
pub fn partial_correlation<T: Scalar>(
    data: &SampleMatrix<T>,
    u: usize,
    v: usize,
    z: &[usize],
) -> Result<T, CausalError> {
    check_indices(data.n_vars(), u, v, z)?;
    if data.n_samples() < z.len() + 3 {
        return Err(CausalError::InsufficientSamples {
            needed: z.len() + 2,
            got: data.n_samples(),
        });
    }
    let cols: Vec<usize> = [u, v].into_iter().chain(z.iter().copied()).collect();
    let cov = data.covariance_of(&cols);
    Ok(match partial_from_cov(&cov, cols.len())? {
        Partial::Corr(r) => r,
        Partial::Determined => T::zero(),
    })
}

pub(crate) fn critical_value(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

pub(crate) fn verdict_from_partial<T: Scalar>(
    partial: Result<Partial<T>, CausalError>,
    n: usize,
    k: usize,
    cfg: &CiTestConfig,
) -> Result<CiVerdict<T>, CausalError> {
    let crit = critical_value(cfg.alpha);
    match partial {
        Ok(Partial::Corr(r)) => {
            let clamp = T::of(cfg.r_clamp);
            let rc = r.max(-clamp).min(clamp);
            let half = T::of(0.5);
            let fisher = (half * ((T::one() + rc) / (T::one() - rc)).ln()).abs();
            let statistic = T::of(((n - k - 3) as f64).sqrt()) * fisher;
            let s = statistic.to_f64_lossy();
            let p_value = 2.0 * (1.0 - Normal::standard().cdf(s));
            Ok(CiVerdict {
                independent: s <= crit,
                statistic,
                r,
                p_value,
                singular: false,
                determined: false,
            })
        }
        Ok(Partial::Determined) => Ok(CiVerdict {
            independent: true,
            statistic: T::zero(),
            r: T::zero(),
            p_value: 1.0,
            singular: false,
            determined: true,
        }),
        Err(CausalError::RankDeficient) => Ok(CiVerdict {
            independent: false,
            statistic: T::infinity(),
            r: T::nan(),
            p_value: 0.0,
            singular: true,
            determined: false,
        }),
        Err(e) => Err(e),
    }
}

/// Fisher-Z test of `u ⟂ v | z` at level `cfg.alpha`.
pub fn fisher_z_test<T: Scalar>(
    data: &SampleMatrix<T>,
    u: usize,
    v: usize,
    z: &[usize],
    cfg: &CiTestConfig,
) -> Result<CiVerdict<T>, CausalError> {
    check_indices(data.n_vars(), u, v, z)?;
    let n = data.n_samples();
    if n <= z.len() + 3 {
        return Err(CausalError::InsufficientSamples {
            needed: z.len() + 3,
            got: n,
        });
    }
    let cols: Vec<usize> = [u, v].into_iter().chain(z.iter().copied()).collect();
    let cov = data.covariance_of(&cols);
    verdict_from_partial(partial_from_cov(&cov, cols.len()), n, z.len(), cfg)
}
