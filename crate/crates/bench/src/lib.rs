//! Fixtures shared by the benchmarks.

use gdn_core::data::{gen_gsm, ScaleDist};
use gdn_core::{init_params, project_constraints, GdnParams, Tying};
use ndarray::Array2;

/// Dense parameters with every normalization weight active, so the
/// benchmarks do not hit the zero-gamma shortcuts.
pub fn dense_params(dim: usize, tying: &Tying) -> GdnParams {
    let mut p = init_params(dim, tying).expect("valid dimension");
    for i in 0..dim {
        for j in 0..dim {
            p.gamma[[i, j]] = 0.05 + 0.1 / (1.0 + (i as f64 - j as f64).abs());
            p.alpha[[i, j]] = if i == j { 2.0 } else { 1.5 };
            if i != j {
                p.h[[i, j]] = 0.02 * ((i * 7 + j * 3) % 5) as f64 - 0.04;
            }
        }
        p.epsilon[i] = 0.4;
    }
    project_constraints(&p, tying).expect("projectable")
}

/// GSM rows with log-normal scales, the data the transform is built for.
pub fn batch(dim: usize, rows: usize) -> Array2<f64> {
    gen_gsm(dim, ScaleDist::LogNormal { sigma: 0.8 }, rows, 17)
        .expect("valid generator")
        .data
}
