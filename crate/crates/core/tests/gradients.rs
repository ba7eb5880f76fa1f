mod common;

use common::*;
use gdn_core::{
    forward, grad_params, input_gradient, jacobian_wrt_input, project_constraints, GdnParams, Tying,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_param_gradient(seed: u64, boundary: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = random_params(4, &mut rng, boundary);
    params.validate().unwrap();
    let x = normal_batch(&mut rng, 64, 4, 1.5);
    let analytic = grad_params(&params, x.view(), &Tying::Full)
        .unwrap()
        .to_flat();
    let (fd, sides) = fd_loss_gradient(&params, x.view());
    for k in 0..fd.len() {
        let tol = if sides[k] == Side::Central {
            1e-4
        } else {
            1e-3
        };
        let e = rel_err(analytic[k], fd[k]);
        assert!(
            e <= tol,
            "seed {seed} entry {k} ({:?}): analytic {} fd {} rel {e:.2e}",
            sides[k],
            analytic[k],
            fd[k]
        );
    }
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    for seed in 0..10 {
        check_param_gradient(seed, false);
    }
}

#[test]
fn parameter_gradient_matches_one_sided_differences_on_the_boundary() {
    for seed in 100..110 {
        check_param_gradient(seed, true);
    }
}

#[test]
fn tied_gradient_is_the_derivative_along_the_tied_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = gdn_core::init_params(3, &Tying::Radial).unwrap();
    p.h = random_params(3, &mut rng, false).h;
    p.gamma.fill(0.2);
    p.beta.fill(0.7);
    p.epsilon.fill(0.4);
    let p = project_constraints(&p, &Tying::Radial).unwrap();
    let x = normal_batch(&mut rng, 64, 3, 1.0);
    let g = grad_params(&p, x.view(), &Tying::Radial).unwrap();
    // Moving the shared gamma moves all nine entries at once.
    let shift = |d: f64| {
        let mut q = p.clone();
        q.gamma.mapv_inplace(|v| v + d);
        gdn_core::loss(&q, x.view()).unwrap().loss
    };
    let fd = (shift(FD_STEP) - shift(-FD_STEP)) / (2.0 * FD_STEP);
    assert!(
        rel_err(g.gamma[[0, 0]], fd) < 1e-4,
        "{} vs {fd}",
        g.gamma[[0, 0]]
    );
}

#[test]
fn jacobian_and_logdet_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for n in [3, 4, 8] {
        let params = random_params(n, &mut rng, false);
        let x = normal_batch(&mut rng, 5, n, 1.0);
        let out = forward(&params, x.view()).unwrap();
        for s in 0..x.nrows() {
            let analytic = jacobian_wrt_input(&params, x.row(s)).unwrap();
            let fd = fd_jacobian(&params, x.row(s));
            assert!(columnwise_rel_err(&analytic, &fd) <= 1e-5);
            let reference = log_abs_det(&fd);
            assert!((out.logdet[s] - reference).abs() <= 1e-5 * reference.abs().max(1.0));
        }
    }
}

fn fd_score(params: &GdnParams, x: &Array2<f64>) -> Array2<f64> {
    let log_density = |v: &Array2<f64>| -> Vec<f64> {
        let out = forward(params, v.view()).unwrap();
        out.y
            .rows()
            .into_iter()
            .zip(out.logdet.iter())
            .map(|(r, l)| l - 0.5 * r.dot(&r))
            .collect()
    };
    let mut score = Array2::zeros(x.raw_dim());
    for k in 0..x.ncols() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.column_mut(k).mapv_inplace(|v| v + FD_STEP);
        minus.column_mut(k).mapv_inplace(|v| v - FD_STEP);
        let (lp, lm) = (log_density(&plus), log_density(&minus));
        for s in 0..x.nrows() {
            score[[s, k]] = (lp[s] - lm[s]) / (2.0 * FD_STEP);
        }
    }
    score
}

#[test]
fn input_gradient_is_minus_the_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let params = random_params(8, &mut rng, false);
        let x = normal_batch(&mut rng, 16, 8, 1.0);
        let score = input_gradient(&params, x.view()).unwrap().mapv(|v| -v);
        let fd = fd_score(&params, &x);
        for (a, b) in score.iter().zip(fd.iter()) {
            assert!(rel_err(*a, *b) <= 1e-4, "{a} vs {b}");
        }
    }
}
