use cmts_nn::gradcheck::relative_error;
use cmts_nn::{
    gradient_check, Adam, AdamConfig, AttentionMode, GradCheckConfig, LayerNorm, Linear, Module, MultiHeadAttention,
    Param, Tensor, Transformer, TransformerConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn nudge_lora_b<M: Module<f64>>(m: &mut M, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut() {
        if p.name.ends_with("lora_b") {
            for v in p.value.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = 0.1 * z;
            }
        }
    }
}

#[test]
fn linear_with_adapter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut lin = Linear::<f64>::new("l", 6, 5, true, &mut rng);
    lin.wrap_lora(2, 0.5, &mut rng).unwrap();
    nudge_lora_b(&mut lin, 1);
    lin.w.trainable = true;
    let x = randn(&[4, 6], 2);
    let probe = randn(&[4, 5], 3);
    let report = gradient_check(
        &mut lin,
        |m| {
            let (y, c) = m.forward(&x).unwrap();
            m.backward(&c, &probe);
            dot(&y, &probe)
        },
        |m| dot(&m.apply(&x).unwrap(), &probe),
        &GradCheckConfig::default(),
    );
    assert!(report.max_rel_err < 1e-6, "{report:?}");
    assert!(report.frozen_with_grad.is_empty());
}

#[test]
fn input_gradient_of_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lin = Linear::<f64>::new("l", 3, 2, true, &mut rng);
    let x = randn(&[2, 3], 5);
    let probe = randn(&[2, 2], 6);
    let (_, c) = lin.forward(&x).unwrap();
    let dx = lin.backward(&c, &probe);
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += 1e-5;
        let mut xm = x.clone();
        xm.data_mut()[i] -= 1e-5;
        let fd = (dot(&lin.apply(&xp).unwrap(), &probe) - dot(&lin.apply(&xm).unwrap(), &probe)) / 2e-5;
        assert!(relative_error(dx.data()[i], fd, 1e-6) < 1e-6);
    }
}

#[test]
fn layernorm_gradients() {
    let mut ln = LayerNorm::<f64>::new("ln", 5);
    for (i, v) in ln.gamma.value.data_mut().iter_mut().enumerate() {
        *v = 1.0 + 0.1 * i as f64;
    }
    let x = randn(&[3, 5], 7);
    let probe = randn(&[3, 5], 8);
    let report = gradient_check(
        &mut ln,
        |m| {
            let (y, c) = m.forward(&x).unwrap();
            m.backward(&c, &probe);
            dot(&y, &probe)
        },
        |m| dot(&m.forward(&x).unwrap().0, &probe),
        &GradCheckConfig::default(),
    );
    assert!(report.max_rel_err < 1e-6, "{report:?}");
    let (_, c) = ln.forward(&x).unwrap();
    let dx = ln.backward(&c, &probe);
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += 1e-5;
        let mut xm = x.clone();
        xm.data_mut()[i] -= 1e-5;
        let fd = (dot(&ln.forward(&xp).unwrap().0, &probe) - dot(&ln.forward(&xm).unwrap().0, &probe)) / 2e-5;
        assert!(relative_error(dx.data()[i], fd, 1e-6) < 1e-5);
    }
}

#[test]
fn attention_gradients_both_masks() {
    for causal in [true, false] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut attn = MultiHeadAttention::<f64>::new("a", 8, 2, &mut rng).unwrap();
        let x = randn(&[5, 8], 10);
        let probe = randn(&[5, 8], 11);
        let report = gradient_check(
            &mut attn,
            |m| {
                let (y, c) = m.forward(&x, causal).unwrap();
                m.backward(&c, &probe);
                dot(&y, &probe)
            },
            |m| dot(&m.forward(&x, causal).unwrap().0, &probe),
            &GradCheckConfig::default(),
        );
        assert!(report.max_rel_err < 1e-5, "causal={causal}: {report:?}");
    }
}

fn tiny_cfg(mode: AttentionMode, positional: bool) -> TransformerConfig {
    TransformerConfig {
        layers: 2,
        heads: 2,
        hidden: 8,
        ffn: 12,
        attention: mode,
        dropout: 0.0,
        max_seq_len: 16,
        positional,
    }
}

#[test]
fn transformer_with_lora_gradients_and_freezing() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut t = Transformer::<f64>::new("bb", &tiny_cfg(AttentionMode::Causal, true), &mut rng).unwrap();
    t.wrap_lora(2, 1.0, &mut rng).unwrap();
    nudge_lora_b(&mut t, 13);
    let x = randn(&[6, 8], 14);
    let probe = randn(&[6, 8], 15);
    let report = gradient_check(
        &mut t,
        |m| {
            let (y, c) = m.forward(&x, None).unwrap();
            m.backward(&c, &probe);
            dot(&y, &probe)
        },
        |m| dot(&m.apply(&x).unwrap(), &probe),
        &GradCheckConfig::default(),
    );
    assert!(report.max_rel_err < 1e-5, "{report:?}");
    assert!(report.checked >= 200);
    assert!(report.frozen_with_grad.is_empty());
    assert!(t.params().iter().filter(|p| p.trainable).all(|p| p.name.contains("lora")));
}

#[test]
fn causal_mask_ignores_future() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let t = Transformer::<f64>::new("bb", &tiny_cfg(AttentionMode::Causal, true), &mut rng).unwrap();
    let x = randn(&[7, 8], 17);
    let y = t.apply(&x).unwrap();
    for pos in 0..7 {
        let mut xp = x.clone();
        for c in 0..8 {
            xp.data_mut()[pos * 8 + c] += 1.0;
        }
        let yp = t.apply(&xp).unwrap();
        for r in 0..7 {
            let same = y.row(r) == yp.row(r);
            assert_eq!(same, r < pos, "row {r} after perturbing {pos}");
        }
    }
}

#[test]
fn full_mask_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let t = Transformer::<f64>::new("bb", &tiny_cfg(AttentionMode::Full, false), &mut rng).unwrap();
    let x = randn(&[5, 8], 19);
    let perm = [3, 0, 4, 1, 2];
    let xp = Tensor::from_fn(&[5, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
    let y = t.apply(&x).unwrap();
    let yp = t.apply(&xp).unwrap();
    for (r, &src) in perm.iter().enumerate() {
        for c in 0..8 {
            assert!((yp.row(r)[c] - y.row(src)[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn merged_weights_match_adapter_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut t = Transformer::<f64>::new("bb", &tiny_cfg(AttentionMode::Causal, true), &mut rng).unwrap();
    let base = t.clone();
    t.wrap_lora(2, 1.0, &mut rng).unwrap();
    let x = randn(&[6, 8], 21);
    assert_eq!(t.apply(&x).unwrap(), base.apply(&x).unwrap());
    nudge_lora_b(&mut t, 22);
    let merged = t.merged();
    let (a, b) = (t.apply(&x).unwrap(), merged.apply(&x).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(u, v)| (u - v).abs() < 1e-10));
    assert_ne!(a, base.apply(&x).unwrap());
}

#[test]
fn dropout_is_seeded() {
    let cfg = TransformerConfig {
        dropout: 0.3,
        ..tiny_cfg(AttentionMode::Causal, true)
    };
    let t = Transformer::<f64>::new("bb", &cfg, &mut ChaCha8Rng::seed_from_u64(23)).unwrap();
    let x = randn(&[4, 8], 24);
    let run = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        t.forward(&x, Some(&mut r)).unwrap().0
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert_eq!(t.forward(&x, None).unwrap().0, t.apply(&x).unwrap());
}

#[test]
fn adam_descends_quadratic_bowl() {
    // f(x) = Σ c_i (x_i − t_i)²
    let c = [1.0, 4.0, 0.25];
    let target = [1.0, -2.0, 3.0];
    let mut p = Param::new("x", Tensor::from_vec(&[3], vec![0.0f64; 3]).unwrap());
    let mut opt = Adam::new(AdamConfig {
        lr: 0.05,
        ..Default::default()
    });
    let f = |x: &[f64]| (0..3).map(|i| c[i] * (x[i] - target[i]).powi(2)).sum::<f64>();
    let mut losses = Vec::new();
    for _ in 0..200 {
        let x = p.value.data().to_vec();
        losses.push(f(&x));
        for i in 0..3 {
            p.grad.data_mut()[i] = 2.0 * c[i] * (x[i] - target[i]);
        }
        opt.step_params(vec![&mut p]).unwrap();
    }
    for w in losses[..40].windows(2) {
        assert!(w[1] < w[0]);
    }
    assert!(*losses.last().unwrap() < 1e-2 * losses[0]);
}

#[test]
fn linear_regression_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut lin = Linear::<f64>::new("reg", 4, 1, true, &mut rng);
    let x = randn(&[30, 4], 26);
    let y = randn(&[30, 1], 27);
    let mse = |pred: &Tensor<f64>| pred.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 30.0;
    let report = gradient_check(
        &mut lin,
        |m| {
            let (p, c) = m.forward(&x).unwrap();
            let g = Tensor::from_fn(&[30, 1], |i| 2.0 * (p.data()[i] - y.data()[i]) / 30.0);
            m.backward(&c, &g);
            mse(&p)
        },
        |m| mse(&m.apply(&x).unwrap()),
        &GradCheckConfig::default(),
    );
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn checkpoint_restores_transformer() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let mut t = Transformer::<f32>::new("bb", &tiny_cfg(AttentionMode::Causal, true), &mut rng).unwrap();
    t.wrap_lora(2, 1.0, &mut rng).unwrap();
    let mut buf = Vec::new();
    cmts_nn::write_checkpoint(&mut buf, &serde_json::json!({}), &t.state()).unwrap();
    let ck = cmts_nn::read_checkpoint::<f32, _>(buf.as_slice()).unwrap();
    let mut other = Transformer::<f32>::new("bb", &tiny_cfg(AttentionMode::Causal, true), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    other.wrap_lora(2, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    other.load_state(&ck.tensors).unwrap();
    assert_eq!(other, t);
}
