//! Reconstruction of masked cells and the mean-fill reference.

use cmts_core::{MaskMatrix, NormalizationParams, Scalar, TimeSeriesMatrix};
use cmts_model::{Adjacency, CmModel, ModelInput};

use crate::sample::SftSample;
use crate::TrainError;

/// Normalized model prediction of a sample, `F × L_valid`, clamped to `[0, 1]`.
pub fn predict_sample<T: Scalar>(model: &CmModel<T>, s: &SftSample<T>) -> Result<TimeSeriesMatrix<T>, TrainError> {
    let adj = Adjacency::from_graph(&s.graph, &model.cfg.dgp);
    let y = model.predict(&ModelInput {
        prompt: &s.tokens,
        series: &s.series,
        adjacency: &adj,
    })?;
    let (f, l) = s.target.shape();
    let v = y.data();
    let values = (0..f * l)
        .map(|i| v[(i % l) * f + i / l].max(T::zero()).min(T::one()))
        .collect();
    Ok(TimeSeriesMatrix::new_normalized(
        s.target.variable_names().to_vec(),
        values,
        l,
        s.target.resolution_minutes(),
    )?)
}

/// Copies `observed` and overwrites only the masked cells with `fill`.
pub fn fill_masked<T: Scalar>(
    observed: &TimeSeriesMatrix<T>,
    mask: &MaskMatrix,
    fill: &TimeSeriesMatrix<T>,
) -> Result<TimeSeriesMatrix<T>, TrainError> {
    if observed.shape() != mask.shape() || observed.shape() != fill.shape() {
        let (a, b) = (observed.shape(), fill.shape());
        return Err(cmts_core::DataError::ShapeMismatch {
            left_rows: a.0,
            left_cols: a.1,
            right_rows: b.0,
            right_cols: b.1,
        }
        .into());
    }
    let values = observed
        .values()
        .iter()
        .zip(fill.values())
        .zip(mask.values())
        .map(|((&o, &p), &m)| if m == 1 { p } else { o })
        .collect();
    Ok(observed.with_values(values)?)
}

/// Maps a normalized prediction to native units and merges it into the raw
/// series; observed cells are copied from `raw` untouched.
pub fn reconstruct_raw<T: Scalar>(
    raw: &TimeSeriesMatrix<T>,
    params: &NormalizationParams<T>,
    mask: &MaskMatrix,
    pred: &TimeSeriesMatrix<T>,
) -> Result<TimeSeriesMatrix<T>, TrainError> {
    let (f, l) = raw.shape();
    if params.n_vars() != f {
        return Err(cmts_core::DataError::ParamMismatch {
            params: params.n_vars(),
            series: f,
        }
        .into());
    }
    let denorm: Vec<T> = (0..f * l)
        .map(|i| params.denormalize_value(i / l, pred.values()[i]))
        .collect();
    let fill = raw.with_values(denorm)?;
    fill_masked(raw, mask, &fill)
}

/// Per-variable mean of the normalized targets of `data`.
pub fn global_means<T: Scalar>(data: &[SftSample<T>]) -> Vec<f64> {
    let f = data.first().map_or(0, |s| s.n_vars());
    let mut sum = vec![0.0; f];
    let mut n = vec![0usize; f];
    for s in data {
        for (v, (acc, cnt)) in sum.iter_mut().zip(n.iter_mut()).enumerate() {
            for &x in s.target.row(v) {
                *acc += x.to_f64_lossy();
                *cnt += 1;
            }
        }
    }
    sum.iter().zip(&n).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

/// Prediction that fills every cell of variable `v` with `means[v]`.
pub fn mean_fill<T: Scalar>(s: &SftSample<T>, means: &[f64]) -> Result<TimeSeriesMatrix<T>, TrainError> {
    let (f, l) = s.target.shape();
    let values = (0..f * l).map(|i| T::of(means[i / l])).collect();
    Ok(TimeSeriesMatrix::new_normalized(
        s.target.variable_names().to_vec(),
        values,
        l,
        s.target.resolution_minutes(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_touches_only_masked() {
        let names = vec!["a".to_string()];
        let obs = TimeSeriesMatrix::new(names.clone(), vec![1.0f64, 2.0, 3.0], 3, 1).unwrap();
        let fill = TimeSeriesMatrix::new(names, vec![9.0, 9.0, 9.0], 3, 1).unwrap();
        let mut m = MaskMatrix::zeros(1, 3);
        m.set(0, 1, true);
        let out = fill_masked(&obs, &m, &fill).unwrap();
        assert_eq!(out.values(), &[1.0, 9.0, 3.0]);
    }
}
