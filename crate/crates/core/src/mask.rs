//! Task-specific mask generators: random missing segments (imputation), a
//! fixed trailing window (forecasting) and periodic gaps (super-resolution).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::series::{DataError, MaskMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationMaskConfig {
    /// Mean missing-segment length in time steps.
    pub mu: f64,
    /// Standard deviation of the segment length in time steps.
    pub sigma: f64,
    #[serde(default = "default_segments")]
    pub segments_per_variable: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_segments() -> usize {
    1
}

impl Default for ImputationMaskConfig {
    fn default() -> Self {
        Self {
            mu: 60.0,
            sigma: 10.0,
            segments_per_variable: 1,
            rng_seed: 0,
        }
    }
}

/// `ℓ = max(0, ⌊draw⌋)`, clipped to the series length.
pub fn segment_length(draw: f64, len: usize) -> usize {
    if !draw.is_finite() || draw < 1.0 {
        return 0;
    }
    (draw.floor() as usize).min(len)
}

/// Imputation mask seeded from `cfg.rng_seed`.
pub fn gen_mask_imputation(n_vars: usize, len: usize, cfg: &ImputationMaskConfig) -> MaskMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    gen_mask_imputation_with(n_vars, len, cfg, &mut rng)
}

/// Imputation mask drawn from a caller-owned generator.
///
/// Every variable receives `segments_per_variable` independent segments.
/// Overlapping segments merge.
pub fn gen_mask_imputation_with<R: Rng + ?Sized>(
    n_vars: usize,
    len: usize,
    cfg: &ImputationMaskConfig,
    rng: &mut R,
) -> MaskMatrix {
    let mut mask = MaskMatrix::zeros(n_vars, len);
    let mu = cfg.mu.max(0.0);
    let sigma = cfg.sigma.max(0.0);
    // sigma >= 0 and finite, so construction only fails on NaN input
    let normal = Normal::new(mu, sigma).ok();
    for var in 0..n_vars {
        for _ in 0..cfg.segments_per_variable {
            let draw = match &normal {
                Some(n) if sigma > 0.0 => n.sample(rng),
                _ => mu,
            };
            let seg = segment_length(draw, len);
            if seg == 0 {
                continue;
            }
            let start = rng.random_range(0..=len - seg);
            for step in start..start + seg {
                mask.set(var, step, true);
            }
        }
    }
    mask
}

/// Masks the trailing `horizon` steps of every variable.
pub fn gen_mask_forecast(n_vars: usize, len: usize, horizon: usize) -> Result<MaskMatrix, DataError> {
    if horizon > len {
        return Err(DataError::HorizonTooLong { horizon, len });
    }
    let mut mask = MaskMatrix::zeros(n_vars, len);
    for var in 0..n_vars {
        for step in len - horizon..len {
            mask.set(var, step, true);
        }
    }
    Ok(mask)
}

/// Keeps steps `0, factor, 2·factor, …` and masks everything else, including
/// any ragged tail after the last kept index.
pub fn gen_mask_superres(n_vars: usize, len: usize, factor: usize) -> Result<MaskMatrix, DataError> {
    if factor < 1 {
        return Err(DataError::BadFactor);
    }
    let mut mask = MaskMatrix::ones(n_vars, len);
    for var in 0..n_vars {
        for step in (0..len).step_by(factor) {
            mask.set(var, step, false);
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_length_segments() {
        let cfg = ImputationMaskConfig {
            mu: 0.0,
            sigma: 0.0,
            segments_per_variable: 3,
            rng_seed: 1,
        };
        assert_eq!(gen_mask_imputation(4, 50, &cfg).count_masked(), 0);
    }

    #[test]
    fn negative_draw_gives_empty_segment() {
        assert_eq!(segment_length(-3.2, 100), 0);
        assert_eq!(segment_length(0.99, 100), 0);
        assert_eq!(segment_length(10.7, 100), 10);
        assert_eq!(segment_length(250.0, 100), 100);
    }

    #[test]
    fn fixed_length_run_placement() {
        // sigma = 0: every row gets one run of exactly 10 ones starting in [0, 90]
        for seed in 0..1000 {
            let cfg = ImputationMaskConfig {
                mu: 10.0,
                sigma: 0.0,
                segments_per_variable: 1,
                rng_seed: seed,
            };
            let m = gen_mask_imputation(2, 100, &cfg);
            for var in 0..2 {
                let row = m.row(var);
                let ones: Vec<usize> = (0..100).filter(|&i| row[i] == 1).collect();
                assert_eq!(ones.len(), 10);
                let start = ones[0];
                assert!(start <= 90);
                assert_eq!(ones, (start..start + 10).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn forecast_edges() {
        assert_eq!(gen_mask_forecast(3, 10, 0).unwrap().count_masked(), 0);
        assert_eq!(gen_mask_forecast(3, 10, 10).unwrap().count_masked(), 30);
        let m = gen_mask_forecast(2, 96, 24).unwrap();
        for var in 0..2 {
            for t in 0..96 {
                assert_eq!(m.get(var, t), t >= 72);
            }
        }
        assert_eq!(
            gen_mask_forecast(1, 5, 6).unwrap_err(),
            DataError::HorizonTooLong { horizon: 6, len: 5 }
        );
    }

    #[test]
    fn superres_edges() {
        assert_eq!(gen_mask_superres(2, 7, 1).unwrap().count_masked(), 0);
        let m = gen_mask_superres(1, 9, 3).unwrap();
        let kept: Vec<usize> = (0..9).filter(|&t| !m.get(0, t)).collect();
        assert_eq!(kept, vec![0, 3, 6]);
        assert_eq!(m.count_masked(), 6);
        assert_eq!(gen_mask_superres(1, 9, 0).unwrap_err(), DataError::BadFactor);
    }
}
