#![allow(clippy::needless_range_loop)]

//! Independent re-computations checked against the library.

use cmts_core::causal::{discover_skeleton, fisher_z_test, partial_correlation, CiTestConfig, SampleMatrix};
use cmts_core::metrics::{corr_discrepancy, dtw, fid, mae, power_balance_mae, rmse, FidFeatureSet};
use cmts_core::plant::{day_rng, generate_day, PlantConfig, PowerRoles};
use cmts_core::{PriorGraph, TimeSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

// Residuals of y regressed on [1, xs...] via normal equations with Gaussian elimination.
fn ols_residual(y: &[f64], xs: &[&[f64]]) -> Vec<f64> {
    let n = y.len();
    let k = xs.len() + 1;
    let col = |j: usize, i: usize| if j == 0 { 1.0 } else { xs[j - 1][i] };
    let mut a = vec![vec![0.0; k + 1]; k];
    for r in 0..k {
        for c in 0..k {
            a[r][c] = (0..n).map(|i| col(r, i) * col(c, i)).sum();
        }
        a[r][k] = (0..n).map(|i| col(r, i) * y[i]).sum();
    }
    for p in 0..k {
        let piv = (p..k).max_by(|&i, &j| a[i][p].abs().total_cmp(&a[j][p].abs())).unwrap();
        a.swap(p, piv);
        for r in 0..k {
            if r != p {
                let f = a[r][p] / a[p][p];
                for c in p..=k {
                    a[r][c] -= f * a[p][c];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..k).map(|r| a[r][k] / a[r][r]).collect();
    (0..n).map(|i| y[i] - (0..k).map(|j| beta[j] * col(j, i)).sum::<f64>()).collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    sab / (saa * sbb).sqrt()
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

#[test]
fn partial_correlation_matches_residual_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let z1 = gauss(&mut rng, 300);
        let z2 = gauss(&mut rng, 300);
        let e1 = gauss(&mut rng, 300);
        let e2 = gauss(&mut rng, 300);
        let c: f64 = rng.random_range(-1.0..1.0);
        let u: Vec<f64> = (0..300).map(|i| 0.7 * z1[i] - 0.3 * z2[i] + e1[i]).collect();
        let v: Vec<f64> = (0..300).map(|i| 0.2 * z1[i] + 0.9 * z2[i] + c * e1[i] + e2[i]).collect();
        let data = SampleMatrix::from_columns(names(4), &[u.clone(), v.clone(), z1.clone(), z2.clone()]);
        let lib = partial_correlation(&data, 0, 1, &[2, 3]).unwrap();
        let oracle = pearson(&ols_residual(&u, &[&z1, &z2]), &ols_residual(&v, &[&z1, &z2]));
        assert!((lib - oracle).abs() < 1e-10, "{lib} vs {oracle}");
    }
}

#[test]
fn chain_scm_drops_the_shortcut() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 2000;
    let x = gauss(&mut rng, n);
    let ey = gauss(&mut rng, n);
    let ez = gauss(&mut rng, n);
    let y: Vec<f64> = (0..n).map(|i| 0.8 * x[i] + 0.6 * ey[i]).collect();
    let z: Vec<f64> = (0..n).map(|i| 0.8 * y[i] + 0.6 * ez[i]).collect();
    let data = SampleMatrix::from_columns(names(3), &[x, y, z]);
    let sk = discover_skeleton(&data, &PriorGraph::empty(names(3)).unwrap(), &CiTestConfig::default()).unwrap();
    assert!(sk.contains(0, 1));
    assert!(sk.contains(1, 2));
    assert!(!sk.contains(0, 2));
}

#[test]
fn five_node_scm_skeleton() {
    // a -> c <- b, c -> d, d -> e
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 5000;
    let a = gauss(&mut rng, n);
    let b = gauss(&mut rng, n);
    let noise: Vec<Vec<f64>> = (0..3).map(|_| gauss(&mut rng, n)).collect();
    let c: Vec<f64> = (0..n).map(|i| 0.7 * a[i] - 0.6 * b[i] + 0.5 * noise[0][i]).collect();
    let d: Vec<f64> = (0..n).map(|i| 0.9 * c[i] + 0.5 * noise[1][i]).collect();
    let e: Vec<f64> = (0..n).map(|i| -0.8 * d[i] + 0.5 * noise[2][i]).collect();
    let data = SampleMatrix::from_columns(names(5), &[a, b, c, d, e]);
    let sk = discover_skeleton(&data, &PriorGraph::empty(names(5)).unwrap(), &CiTestConfig::default()).unwrap();
    let mut got: Vec<(usize, usize)> = sk.edges().collect();
    got.sort_unstable();
    assert_eq!(got, vec![(0, 2), (1, 2), (2, 3), (3, 4)]);
}

#[test]
fn fisher_z_false_dependence_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for alpha in [0.01, 0.05] {
        let cfg = CiTestConfig {
            alpha,
            ..Default::default()
        };
        let trials = 1000;
        let mut rejected = 0;
        for _ in 0..trials {
            let data = SampleMatrix::from_columns(names(2), &[gauss(&mut rng, 500), gauss(&mut rng, 500)]);
            if !fisher_z_test(&data, 0, 1, &[], &cfg).unwrap().independent {
                rejected += 1;
            }
        }
        let rate = rejected as f64 / trials as f64;
        assert!((rate - alpha).abs() < 0.03, "alpha {alpha}: rate {rate}");
    }
}

fn all_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(i: usize, j: usize, n: usize, m: usize, path: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        path.push((i, j));
        if i == n - 1 && j == m - 1 {
            out.push(path.clone());
        } else {
            if i + 1 < n {
                go(i + 1, j, n, m, path, out);
            }
            if j + 1 < m {
                go(i, j + 1, n, m, path, out);
            }
            if i + 1 < n && j + 1 < m {
                go(i + 1, j + 1, n, m, path, out);
            }
        }
        path.pop();
    }
    let mut out = Vec::new();
    go(0, 0, n, m, &mut Vec::new(), &mut out);
    out
}

#[test]
fn dtw_matches_path_enumeration() {
    let r = [0.0f64, 1.0, 0.0, 0.0];
    let g = [0.0, 0.0, 1.0, 0.0];
    let best = all_paths(4, 4)
        .iter()
        .map(|p| p.iter().map(|&(i, j)| (r[i] - g[j]).abs()).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(dtw(&r, &g).unwrap(), best);
    assert_eq!(best, 0.0);
}

#[test]
fn fid_one_dimensional_closed_form() {
    let (m1, s1, m2, s2) = (0.0f64, 1.0f64, 0.2f64, 1.3f64);
    let population = (m1 - m2).powi(2) + (s1 - s2).powi(2);
    let draw = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Vec<f64>> = (0..10_000).map(|_| vec![m1 + s1 * draw(&mut rng)]).collect();
        let b: Vec<Vec<f64>> = (0..10_000).map(|_| vec![m2 + s2 * draw(&mut rng)]).collect();
        let (fa, fb) = (FidFeatureSet::from_vectors(&a).unwrap(), FidFeatureSet::from_vectors(&b).unwrap());
        let got = fid(&fa, &fb).unwrap();
        let sample = (fa.mean[0] - fb.mean[0]).powi(2) + (fa.cov[0].sqrt() - fb.cov[0].sqrt()).powi(2);
        assert!((got - sample).abs() < 1e-9);
        assert!((got - population).abs() < 0.05, "seed {seed}: {got} vs {population}");
    }
}

#[test]
fn mae_rmse_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = gauss(&mut rng, 257);
    let yh = gauss(&mut rng, 257);
    let scope: Vec<u8> = (0..257).map(|_| rng.random_range(0..2)).collect();
    let (mut sa, mut ss, mut n) = (0.0, 0.0, 0.0);
    for i in 0..257 {
        if scope[i] == 1 {
            sa += (y[i] - yh[i]).abs();
            ss += (y[i] - yh[i]).powi(2);
            n += 1.0;
        }
    }
    assert!((mae(&y, &yh, Some(&scope)).unwrap() - sa / n).abs() < 1e-12);
    assert!((rmse(&y, &yh, Some(&scope)).unwrap() - (ss / n).sqrt()).abs() < 1e-12);
}

#[test]
fn corr_discrepancy_three_variable_hand_case() {
    // gt: a, b = a, c = -a -> corr(a,b)=1, corr(a,c)=-1, corr(b,c)=-1
    // out: a, b = a, c orthogonal to a -> 1, 0, 0
    let a = vec![1.0, 2.0, 3.0, 4.0];
    let gt = TimeSeries::from_rows(names(3), vec![a.clone(), a.clone(), vec![-1.0, -2.0, -3.0, -4.0]], 1).unwrap();
    let out = TimeSeries::from_rows(names(3), vec![a.clone(), a, vec![1.0, -1.0, -1.0, 1.0]], 1).unwrap();
    let d = corr_discrepancy(&out, &gt).unwrap();
    assert!((d.value - 2.0).abs() < 1e-12);
    assert_eq!(d.skipped_pairs, 0);
}

#[test]
fn power_balance_three_steps() {
    let n = vec!["total".to_string(), "pv".to_string(), "storage".to_string()];
    let roles = PowerRoles {
        total: 0,
        pv: 1,
        storage: 2,
    };
    let truth = TimeSeries::from_rows(n.clone(), vec![vec![10.0, 5.0, 7.0], vec![6.0, 5.0, 2.0], vec![4.0, 0.0, 5.0]], 1).unwrap();
    let pred = TimeSeries::from_rows(n, vec![vec![11.0, 5.0, 6.0], vec![6.0, 4.0, 2.0], vec![4.0, 0.0, 5.0]], 1).unwrap();
    // residuals: truth 0,0,0; pred 1,1,-1
    assert!((power_balance_mae(&pred, &truth, roles).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn soc_follows_cumulative_sum() {
    let cfg = PlantConfig::default();
    let day = generate_day(&cfg, cfg.start_date, &mut day_rng(4, 0)).unwrap();
    let s = &day.series;
    let dt = cfg.resolution_minutes as f64 / 60.0;
    let mut soc = cfg.initial_soc;
    for t in 0..s.len() {
        soc -= s.get(4, t) * dt / cfg.storage_capacity_kwh;
        assert!((soc - s.get(5, t)).abs() < 1e-9, "step {t}");
        assert!((0.0..=1.0).contains(&s.get(5, t)));
    }
}

#[test]
fn meter_noise_residual_std() {
    let cfg = PlantConfig {
        meter_noise_kw: 5.0,
        resolution_minutes: 1,
        ..Default::default()
    };
    let mut res = Vec::new();
    for d in 0..5 {
        let day = generate_day(&cfg, cfg.start_date, &mut day_rng(2, d)).unwrap();
        let s = &day.series;
        res.extend((0..s.len()).map(|t| s.get(3, t) - s.get(2, t) - s.get(4, t)));
    }
    let n = res.len() as f64;
    let m = res.iter().sum::<f64>() / n;
    let sd = (res.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).sqrt();
    assert!((sd - 5.0).abs() < 0.5, "{sd}");
}
