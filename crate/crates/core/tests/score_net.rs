use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use specdiff::linalg::DenseMatrix;
use specdiff::nn::gradcheck::check_gradient;
use specdiff::nn::{
    dsm_loss, dsm_loss_batch, dsm_loss_value, Activation, AdamConfig, AdamState, Mlp, Preconditioning, ScoreNet,
    ScoreNetConfig,
};
use specdiff::sde::{analytic_score, DiffusionSchedule, T_EPS};

fn normals(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn randomize(net: &mut ScoreNet<f64>, rng: &mut ChaCha8Rng) {
    let p: Vec<f64> = (0..net.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
    net.set_params(&p).unwrap();
}

fn spread_coords(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for act in [Activation::Tanh, Activation::Identity, Activation::Relu] {
        let mut net = Mlp::<f64>::new(5, &[8, 8], 3, act, false, &mut rng);
        let x = normals(&mut rng, 4, 5);
        let c = normals(&mut rng, 4, 3);
        net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&c).unwrap();
        let params = net.params();
        let loss = |p: &[f64]| {
            let mut m = net.clone();
            m.set_params(p)?;
            let y = m.infer(&x)?;
            Ok(y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
        };
        let coords = spread_coords(params.len(), 50, &mut rng);
        let report = check_gradient(loss, &params, &grads, &coords, 1e-4).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{act:?}: {report:?}");

        let input_loss = |flat: &[f64]| {
            let xi = DenseMatrix::from_vec(4, 5, flat.to_vec())?;
            let y = net.infer(&xi)?;
            Ok(y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
        };
        let all: Vec<usize> = (0..20).collect();
        let report = check_gradient(input_loss, x.as_slice(), dx.as_slice(), &all, 1e-4).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{act:?} input: {report:?}");
    }
}

#[test]
fn dsm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let schedule = DiffusionSchedule::default();
    let mut cfg = ScoreNetConfig::new(3, 2);
    cfg.hidden = vec![8, 8];
    cfg.time_embed_dim = 4;
    let mut net = ScoreNet::<f64>::new(cfg, &mut rng).unwrap();
    randomize(&mut net, &mut rng);
    let x0 = normals(&mut rng, 6, 3);
    let cond = normals(&mut rng, 6, 2);
    let noise = normals(&mut rng, 6, 3);
    let times: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..1.0)).collect();
    let out = dsm_loss_batch(&mut net, &schedule, &x0, &cond, &times, &noise).unwrap();
    let params = net.params();
    let loss = |p: &[f64]| {
        let mut m = net.clone();
        m.set_params(p)?;
        dsm_loss_value(&m, &schedule, &x0, &cond, &times, &noise)
    };
    let coords = spread_coords(params.len(), 60, &mut rng);
    let report = check_gradient(loss, &params, &out.grads, &coords, 1e-4).unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn dsm_loss_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let schedule = DiffusionSchedule::default();
    let mut net = ScoreNet::<f64>::new(ScoreNetConfig::new(2, 0), &mut rng).unwrap();
    let (x0, noise, t) = ([0.5, -1.0], [0.3, 0.8], 0.4);

    // Zero-output net: loss is the weighted norm of the analytic score.
    let out = dsm_loss(&mut net, &schedule, &x0, &[], t, &noise).unwrap();
    let k = schedule.kernel(t);
    let xt: Vec<f64> = x0.iter().zip(noise).map(|(a, z)| k.mean_scale * a + k.std * z).collect();
    let score = analytic_score(&schedule, &xt, &x0, t).unwrap();
    let direct = k.std * k.std * score.iter().map(|s| s * s).sum::<f64>();
    assert!((out.loss - direct).abs() < 1e-12 * direct.max(1.0));

    // Net whose output layer is replaced by the exact score for this input.
    let last = net.mlp().layers.len() - 1;
    let mlp = net.mlp_mut();
    for (j, s) in score.iter().enumerate() {
        mlp.layers[last].bias[j] = *s;
    }
    let out = dsm_loss(&mut net, &schedule, &x0, &[], t, &noise).unwrap();
    assert!(out.loss < 1e-20);

    assert!(dsm_loss(&mut net, &schedule, &x0, &[], T_EPS / 2.0, &noise).is_err());

    let mut net = ScoreNet::<f64>::new(ScoreNetConfig::new(2, 0), &mut rng).unwrap();
    randomize(&mut net, &mut rng);
    for _ in 0..100 {
        let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = rng.random_range(T_EPS..1.0);
        assert!(dsm_loss(&mut net, &schedule, &x0, &[], t, &z).unwrap().loss >= 0.0);
    }
}

#[test]
fn forward_is_deterministic_across_instances() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut net = ScoreNet::<f64>::new(ScoreNetConfig::new(4, 2), &mut rng).unwrap();
        randomize(&mut net, &mut rng);
        net.score(&[0.1, 0.2, 0.3, 0.4], &[1.0, -1.0], 0.25).unwrap()
    };
    let a: Vec<u64> = build().iter().map(|x| x.to_bits()).collect();
    let b: Vec<u64> = build().iter().map(|x| x.to_bits()).collect();
    assert_eq!(a, b);
}

const MU: f64 = 2.0;
const SD: f64 = 0.5;

fn gaussian_score(schedule: &DiffusionSchedule<f64>, x: f64, t: f64) -> f64 {
    let k = schedule.kernel(t);
    -(x - k.mean_scale * MU) / (k.mean_scale * k.mean_scale * SD * SD + k.std * k.std)
}

fn gaussian_batch(rng: &mut ChaCha8Rng, rows: usize) -> (DenseMatrix<f64>, Vec<f64>, DenseMatrix<f64>) {
    let x0 = DenseMatrix::from_fn(rows, 1, |_, _| MU + SD * Distribution::<f64>::sample(&StandardNormal, rng));
    let times = (0..rows).map(|_| rng.random_range(T_EPS..1.0)).collect();
    (x0, times, normals(rng, rows, 1))
}

#[test]
fn training_learns_gaussian_score() {
    let schedule = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut net = ScoreNet::<f64>::new(ScoreNetConfig::new(1, 0), &mut rng).unwrap();
    let mut adam = AdamState::new(net.num_params(), AdamConfig::default());
    let batch = 256;
    let no_cond = DenseMatrix::zeros(batch, 0);

    let mut held_rng = ChaCha8Rng::seed_from_u64(7);
    let (hx, ht, hz) = gaussian_batch(&mut held_rng, 4096);
    let held_cond = DenseMatrix::zeros(4096, 0);
    let initial = dsm_loss_value(&net, &schedule, &hx, &held_cond, &ht, &hz).unwrap();

    let steps = 6000;
    for step in 0..steps {
        // Linear decay to a tenth of the base rate over the second half.
        let frac = (step as f64 / steps as f64 - 0.5).max(0.0) * 2.0;
        adam.config.lr = 1e-3 * (1.0 - 0.9 * frac);
        let (x0, times, noise) = gaussian_batch(&mut rng, batch);
        let out = dsm_loss_batch(&mut net, &schedule, &x0, &no_cond, &times, &noise).unwrap();
        let mut p = net.params();
        adam.step(&mut p, &out.grads).unwrap();
        net.set_params(&p).unwrap();
        if step == 1999 {
            let after = dsm_loss_value(&net, &schedule, &hx, &held_cond, &ht, &hz).unwrap();
            assert!(after <= 0.5 * initial, "held-out loss {initial} -> {after}");
        }
    }

    let grid: Vec<f64> = (0..=60).map(|i| 0.5 + 3.0 * i as f64 / 60.0).collect();
    let mae = grid
        .iter()
        .map(|&x| (net.score(&[x], &[], 0.1).unwrap()[0] - gaussian_score(&schedule, x, 0.1)).abs())
        .sum::<f64>()
        / grid.len() as f64;
    assert!(mae <= 0.15, "mean absolute score error {mae}");
}

#[test]
fn preconditioned_net_gradients_and_untrained_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let schedule = DiffusionSchedule::default();
    let mut cfg = ScoreNetConfig::new(3, 2);
    cfg.hidden = vec![8];
    cfg.time_embed_dim = 4;
    cfg.preconditioning = Some(Preconditioning { schedule, gaussian_skip: true });

    // Untrained: exact score of N(0, I) data.
    let net = ScoreNet::<f64>::new(cfg.clone(), &mut rng).unwrap();
    let x = [0.4, -1.1, 2.0];
    for t in [0.01, 0.3, 1.0] {
        let s = net.score(&x, &[0.0, 0.0], t).unwrap();
        let exact = analytic_score(&schedule, &x, &[0.0; 3], t).unwrap();
        let k = schedule.kernel(t);
        let var = k.mean_scale * k.mean_scale + k.std * k.std;
        for j in 0..3 {
            assert!((s[j] - (-x[j] / var)).abs() < 1e-12);
            // The data-free kernel score and the unit-Gaussian score agree at t = 1.
            if t == 1.0 {
                assert!((s[j] - exact[j]).abs() < 1e-3);
            }
        }
    }

    let mut net = ScoreNet::<f64>::new(cfg, &mut rng).unwrap();
    randomize(&mut net, &mut rng);
    let x0 = normals(&mut rng, 5, 3);
    let cond = normals(&mut rng, 5, 2);
    let noise = normals(&mut rng, 5, 3);
    let times: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
    let out = dsm_loss_batch(&mut net, &schedule, &x0, &cond, &times, &noise).unwrap();
    let params = net.params();
    let loss = |p: &[f64]| {
        let mut m = net.clone();
        m.set_params(p)?;
        dsm_loss_value(&m, &schedule, &x0, &cond, &times, &noise)
    };
    let coords = spread_coords(params.len(), 60, &mut rng);
    let report = check_gradient(loss, &params, &out.grads, &coords, 1e-4).unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");

    // State gradient includes the skip term.
    let c = normals(&mut rng, 5, 3);
    let state = normals(&mut rng, 5, 3);
    net.forward(&state, &cond, &times).unwrap();
    let (_, ds, _) = net.backward(&c).unwrap();
    let input_loss = |flat: &[f64]| {
        let y = net.infer(&DenseMatrix::from_vec(5, 3, flat.to_vec())?, &cond, &times)?;
        Ok(y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
    };
    let all: Vec<usize> = (0..15).collect();
    let report = check_gradient(input_loss, state.as_slice(), ds.as_slice(), &all, 1e-5).unwrap();
    assert!(report.max_rel_error <= 1e-4, "state: {report:?}");
}
