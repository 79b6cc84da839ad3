use super::*;
use crate::dataset::{generate_synthetic, standardize, SyntheticSpec};
use crate::numerics::gradient_check;

fn toy_config(m_heads: usize) -> TransformerConfig {
    TransformerConfig {
        window: 8,
        layers: 1,
        heads: m_heads,
        d_model: 8,
        d_ff: 12,
        lambda: 3.0,
        seed: 3,
        ..Default::default()
    }
}

fn random_window(n: usize, m: usize, seed: u64) -> Matrix {
    RandomSource::new(seed).normal_matrix(n, m, 1.0)
}

#[test]
fn prior_limits_and_direct_formula() {
    let wide = prior_association(8, &[1e6; 8]);
    assert!(wide.as_slice().iter().all(|v| (v - 0.125).abs() < 1e-6));
    let narrow = prior_association(8, &[1e-3; 8]);
    for i in 0..8 {
        for j in 0..8 {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((narrow[(i, j)] - expected).abs() < 1e-12);
        }
    }
    let p = prior_association(4, &[1.0; 4]);
    for i in 0..4 {
        let raw: Vec<f64> = (0..4)
            .map(|j| (-((i as f64 - j as f64).powi(2)) / 2.0).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        for j in 0..4 {
            assert!((p[(i, j)] - raw[j] / total).abs() < 1e-15);
        }
    }
}

#[test]
fn discrepancy_cases() {
    let p = prior_association(5, &[0.8, 1.0, 1.3, 2.0, 0.5]);
    let zero = association_discrepancy(&[vec![p.clone()]], &[vec![p.clone()]], Some(SMOOTHING)).unwrap();
    assert!(zero.iter().all(|&v| v.abs() < 1e-15));

    // N = 2: smoothed identity against uniform, by closed form
    let eye = Matrix::identity(2);
    let flat = Matrix::filled(2, 2, 0.5);
    let r = association_discrepancy(&[vec![eye.clone()]], &[vec![flat.clone()]], Some(SMOOTHING)).unwrap();
    let hi = (1.0 + SMOOTHING) / (1.0 + 2.0 * SMOOTHING);
    let lo = SMOOTHING / (1.0 + 2.0 * SMOOTHING);
    let expected = (hi - 0.5) * (hi / 0.5).ln() + (lo - 0.5) * (lo / 0.5).ln();
    for v in &r {
        assert!((v - expected).abs() < 1e-12);
    }
    let doubled = association_discrepancy(
        &[vec![eye.clone()], vec![eye.clone()]],
        &[vec![flat.clone()], vec![flat.clone()]],
        Some(SMOOTHING),
    )
    .unwrap();
    assert_eq!(doubled, r);
    assert!(matches!(
        association_discrepancy(&[vec![eye]], &[vec![flat]], None),
        Err(Error::InfiniteDivergence { row: 0, col: 1 })
    ));
}

#[test]
fn criterion_cases() {
    let x = Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]]).unwrap();
    let xhat = Matrix::from_rows(&[[0.0, 2.0], [1.0, 1.0], [3.0, 0.0]]).unwrap();
    let recon = [0.5, 2.5, 0.125];
    let flat = criterion(&[0.7; 3], &x, &xhat).unwrap();
    for (c, r) in flat.iter().zip(recon) {
        assert!((c - r / 3.0).abs() < 1e-15);
    }
    assert!(criterion(&[0.0, 1.0, 2.0], &x, &x).unwrap().iter().all(|&v| v == 0.0));
    // softmax(-[0,1,2]) by hand
    let e = [1.0, (-1f64).exp(), (-2f64).exp()];
    let z: f64 = e.iter().sum();
    let c = criterion(&[0.0, 1.0, 2.0], &x, &xhat).unwrap();
    for i in 0..3 {
        assert!((c[i] - e[i] / z * recon[i]).abs() < 1e-15);
    }
}

#[test]
fn associations_are_stochastic_and_discrepancy_nonnegative() {
    let cfg = TransformerConfig {
        window: 10,
        layers: 2,
        heads: 2,
        d_model: 8,
        ..toy_config(2)
    };
    let model = TransformerModel::new(4, &cfg).unwrap();
    for seed in 0..5 {
        let w = random_window(10, 4, seed);
        let (ps, ss) = model.associations(&w).unwrap();
        for layer in ps.iter().chain(&ss) {
            for m in layer {
                for row in m.row_iter() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                }
            }
        }
        let out = model.forward(&w).unwrap();
        assert!(out.assdis.iter().all(|&v| v >= -1e-12));
        let direct = association_discrepancy(&ps, &ss, Some(SMOOTHING)).unwrap();
        for (a, b) in direct.iter().zip(&out.assdis) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut cad: Vec<f64> = out.assdis.iter().map(|v| -v).collect();
        softmax_in_place(&mut cad);
        assert!((cad.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn criterion_monotone_in_residual() {
    let x = random_window(6, 3, 1);
    let mut xhat = random_window(6, 3, 2);
    let assdis = [0.3, 0.1, 0.9, 0.0, 0.4, 0.2];
    let before = criterion(&assdis, &x, &xhat).unwrap();
    xhat[(2, 1)] += if x[(2, 1)] > xhat[(2, 1)] { -1.0 } else { 1.0 };
    let after = criterion(&assdis, &x, &xhat).unwrap();
    assert!(after[2] >= before[2]);
}

#[test]
fn full_gradient_matches_finite_differences() {
    for m in [2, 3] {
        let model = TransformerModel::new(m, &toy_config(1)).unwrap();
        let windows = vec![random_window(8, m, 10), random_window(8, m, 11)];
        let coeffs = Coefficients {
            reconstruction: 1.0,
            series: 3.0,
            prior: 3.0,
        };
        let f = |p: &[f64]| model.objective(p, &windows, coeffs, None).unwrap().0;
        let g = |p: &[f64]| model.objective(p, &windows, coeffs, None).unwrap().1;
        let err = gradient_check(f, g, model.parameters(), 1e-6).unwrap();
        assert!(err < 1e-4, "m = {m}: {err}");
    }
}

#[test]
fn minimize_phase_gradient_with_frozen_prior() {
    let model = TransformerModel::new(3, &toy_config(1)).unwrap();
    let windows = vec![random_window(8, 3, 20)];
    let frozen: Vec<Vec<Vec<f64>>> = windows
        .iter()
        .map(|w| model.forward(w).unwrap().prior_mean)
        .collect();
    let coeffs = Coefficients::minimize_phase(3.0);
    let f = |p: &[f64]| model.objective(p, &windows, coeffs, Some(&frozen)).unwrap().0;
    let g = |p: &[f64]| model.objective(p, &windows, coeffs, Some(&frozen)).unwrap().1;
    let err = gradient_check(f, g, model.parameters(), 1e-6).unwrap();
    assert!(err < 1e-4, "{err}");
    // the prior's scale parameters receive nothing in this phase
    let grad = g(model.parameters());
    for name in ["layer0.sigma.w", "layer0.sigma.b"] {
        let idx = model.params.index_of(name).unwrap();
        assert!(grad[model.params.slots()[idx].range()].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_lambda_removes_discrepancy_gradient() {
    let model = TransformerModel::new(2, &toy_config(1)).unwrap();
    let windows = vec![random_window(8, 2, 5)];
    let rec_only = Coefficients {
        reconstruction: 1.0,
        series: 0.0,
        prior: 0.0,
    };
    let (_, g0) = model.objective(model.parameters(), &windows, rec_only, None).unwrap();
    let (_, g1) = model
        .objective(model.parameters(), &windows, Coefficients::minimax(0.0), None)
        .unwrap();
    for (a, b) in g0.iter().zip(&g1) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn trains_and_scores_at_two_and_three_dims() {
    for m in [2, 3] {
        let spec = SyntheticSpec::balanced(m, 800, 250, 0.1, 1, 7);
        let (ds, _) = standardize(&generate_synthetic(&spec).unwrap());
        let cfg = TransformerConfig {
            window: 16,
            layers: 2,
            heads: 1,
            d_model: 8,
            d_ff: 16,
            epochs: 10,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 9,
            ..Default::default()
        };
        let a = train_minimax(&ds, &cfg).unwrap();
        let b = train_minimax(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.loss_trace[9] < a.loss_trace[0], "{:?}", a.loss_trace);
        let s = score_series(&a, &ds).unwrap();
        assert_eq!(s.len(), 250);
        assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn scoring_shapes_and_padding() {
    let model = TransformerModel::new(3, &toy_config(1)).unwrap();
    let exact = random_window(24, 3, 1);
    assert_eq!(model.score(&exact).unwrap().len(), 24);
    let ragged = random_window(27, 3, 1);
    let scores = model.score(&ragged).unwrap();
    assert_eq!(scores.len(), 27);
    assert_eq!(&scores[..24], &model.score(&exact).unwrap()[..]);
    // tail rows 24..27 scored inside a window padded with row 24
    let tail = ragged.slice_rows(24, 27);
    let padded = Matrix::from_fn(8, 3, |i, j| if i < 5 { tail[(0, j)] } else { tail[(i - 5, j)] });
    assert_eq!(&scores[24..], &model.window_criterion(&padded).unwrap()[5..]);
    assert!(matches!(
        model.score(&random_window(10, 4, 1)),
        Err(Error::DimensionMismatch { expected: 3, found: 4 })
    ));
}

#[test]
fn zero_data_zero_model_scores_zero() {
    let mut model = TransformerModel::new(2, &toy_config(1)).unwrap();
    model.parameters_mut().fill(0.0);
    let scores = model.score(&Matrix::zeros(20, 2)).unwrap();
    assert!(scores.iter().all(|&v| v == 0.0));
}

#[test]
fn save_load_round_trip() {
    let model = TransformerModel::new(5, &toy_config(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    assert_eq!(TransformerModel::load(dir.path()).unwrap(), model);
}
