//! Tab-separated text reports. Lines starting with `#` are comments; floats
//! use the shortest representation that round-trips.

use std::fmt::Write;

use gdn_core::{EvalReport, FitReport, MiPoint, PatchSet};

use crate::config::FitFile;

/// `key<TAB>value` lines.
pub fn key_values(rows: &[(String, f64)]) -> String {
    rows.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
}

/// Resolved config as `# key = value` lines, then one row per epoch:
/// `stage epoch loss delta_j min_logdet clamped min_eigenvalue halvings`,
/// then `delta_j_train` on the whole training set.
pub fn fit_report(file: &FitFile, data: &PatchSet, stages: &[FitReport], delta_j: f64) -> String {
    let mut s = String::from("# gdn fit report\n");
    let _ = writeln!(
        s,
        "# data: {} x {} source={} preproc={}",
        data.len(),
        data.dim(),
        data.source,
        data.preproc
    );
    for line in file.to_toml().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str("stage\tepoch\tloss\tdelta_j\tmin_logdet\tclamped\tmin_eigenvalue\thalvings\n");
    for (k, rep) in stages.iter().enumerate() {
        for e in &rep.epochs {
            let _ = writeln!(
                s,
                "{k}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.epoch, e.loss, e.delta_j, e.min_logdet, e.clamped, e.min_eigenvalue, e.halvings
            );
        }
    }
    let _ = writeln!(s, "delta_j_train\t{delta_j}");
    let _ = writeln!(s, "delta_j_train_per_dim\t{}", delta_j / data.dim() as f64);
    s
}

/// `key<TAB>value` lines; `marginal_ks.<i>` per output coordinate.
pub fn eval_report(r: &EvalReport) -> String {
    let n = r.marginal_ks.len() as f64;
    let mut rows = vec![
        ("delta_j".to_string(), r.delta_j),
        ("delta_j_per_dim".into(), r.delta_j_per_dim),
        ("log_likelihood".into(), r.log_likelihood),
        (
            "bits_per_dim".into(),
            -r.log_likelihood / (n * std::f64::consts::LN_2),
        ),
    ];
    if let Some(mi) = r.mi {
        rows.push(("mi".into(), mi));
    }
    rows.push(("radial_ks".into(), r.radial_ks));
    rows.push(("max_marginal_ks".into(), r.max_marginal_ks()));
    for (i, v) in r.marginal_ks.iter().enumerate() {
        rows.push((format!("marginal_ks.{i}"), *v));
    }
    key_values(&rows)
}

pub fn cascade_eval_report(
    total: f64,
    stages: &[f64],
    dim: usize,
    marginal: &[f64],
    radial: f64,
) -> String {
    let mut rows = vec![
        ("delta_j".to_string(), total),
        ("delta_j_per_dim".into(), total / dim as f64),
    ];
    for (k, v) in stages.iter().enumerate() {
        rows.push((format!("delta_j.stage{k}"), *v));
    }
    rows.push(("radial_ks".into(), radial));
    rows.push((
        "max_marginal_ks".into(),
        marginal.iter().copied().fold(0.0, f64::max),
    ));
    key_values(&rows)
}

/// `distance variant mi` rows.
pub fn mi_table(rows: &[MiPoint]) -> String {
    let mut s = String::from("distance\tvariant\tmi\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}", r.distance, r.variant, r.mi);
    }
    s
}
