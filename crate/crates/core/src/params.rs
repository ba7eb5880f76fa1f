//! Parameter vector of the transform, its box constraints, and the tying
//! schemes that carve the classic special cases out of the full model.

use ndarray::{Array1, Array2};

use crate::error::{GdnError, Result};

/// Lower bound used to implement the open constraint `beta > 0`.
pub const BETA_FLOOR: f64 = 1e-6;

/// Tolerance below which `|det H|` counts as singular.
pub const H_DET_TOLERANCE: f64 = 1e-300;

const GAMMA_INIT: f64 = 0.1;

/// Full parameter set `{H, alpha, beta, gamma, epsilon}` of an N-dimensional
/// transform. All matrices are N×N, all vectors length N.
#[derive(Debug, Clone, PartialEq)]
pub struct GdnParams {
    pub h: Array2<f64>,
    pub alpha: Array2<f64>,
    pub beta: Array1<f64>,
    pub gamma: Array2<f64>,
    pub epsilon: Array1<f64>,
}

impl GdnParams {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// The identity configuration: `H = I`, `gamma = 0`, `beta = 1`, so the
    /// transform is the identity for any `alpha`/`epsilon`.
    pub fn identity(dim: usize) -> Self {
        GdnParams {
            h: Array2::eye(dim),
            alpha: Array2::ones((dim, dim)),
            beta: Array1::ones(dim),
            gamma: Array2::zeros((dim, dim)),
            epsilon: Array1::from_elem(dim, 0.5),
        }
    }

    /// Total number of scalar parameters, `3N² + 2N`.
    pub fn len(&self) -> usize {
        let n = self.dim();
        3 * n * n + 2 * n
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }

    /// Check shapes, finiteness and every box constraint, including a
    /// non-singular `H`.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(GdnError::InvariantViolation("dimension is zero".into()));
        }
        for (name, shape) in [
            ("H", self.h.dim()),
            ("alpha", self.alpha.dim()),
            ("gamma", self.gamma.dim()),
        ] {
            if shape != (n, n) {
                return Err(GdnError::InvariantViolation(format!(
                    "{name} has shape {shape:?}, expected ({n}, {n})"
                )));
            }
        }
        if self.epsilon.len() != n {
            return Err(GdnError::InvariantViolation(
                "epsilon length differs from beta".into(),
            ));
        }
        let all_finite = self.h.iter().all(|v| v.is_finite())
            && self.alpha.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
            && self.gamma.iter().all(|v| v.is_finite())
            && self.epsilon.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(GdnError::InvariantViolation("non-finite parameter".into()));
        }
        if let Some(((i, j), v)) = self.alpha.indexed_iter().find(|(_, &v)| v < 1.0) {
            return Err(GdnError::InvariantViolation(format!(
                "alpha[{i}][{j}] = {v} < 1"
            )));
        }
        if let Some((i, v)) = self.beta.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(GdnError::InvariantViolation(format!(
                "beta[{i}] = {v} is not positive"
            )));
        }
        if let Some(((i, j), v)) = self.gamma.indexed_iter().find(|(_, &v)| v < 0.0) {
            return Err(GdnError::InvariantViolation(format!(
                "gamma[{i}][{j}] = {v} < 0"
            )));
        }
        for i in 0..n {
            let e = self.epsilon[i];
            let bound = 1.0 / self.alpha[[i, i]];
            if !(0.0..=bound).contains(&e) {
                return Err(GdnError::InvariantViolation(format!(
                    "epsilon[{i}] = {e} outside [0, {bound}]"
                )));
            }
        }
        let (_, logdet) = crate::linalg::inverse_and_logdet(&self.h)
            .map_err(|_| GdnError::InvariantViolation("H is singular".into()))?;
        if logdet < H_DET_TOLERANCE.ln() {
            return Err(GdnError::InvariantViolation(
                "H is numerically singular".into(),
            ));
        }
        Ok(())
    }

    /// Flatten in block order H, alpha, beta, gamma, epsilon (row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.h.iter());
        out.extend(self.alpha.iter());
        out.extend(self.beta.iter());
        out.extend(self.gamma.iter());
        out.extend(self.epsilon.iter());
        out
    }

    /// Inverse of [`GdnParams::to_flat`].
    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        let nn = dim * dim;
        if flat.len() != 3 * nn + 2 * dim {
            return Err(GdnError::DimensionMismatch {
                expected: 3 * nn + 2 * dim,
                got: flat.len(),
            });
        }
        let mat = |off: usize| Array2::from_shape_vec((dim, dim), flat[off..off + nn].to_vec());
        let vec = |off: usize| Array1::from(flat[off..off + dim].to_vec());
        Ok(GdnParams {
            h: mat(0).expect("shape"),
            alpha: mat(nn).expect("shape"),
            beta: vec(2 * nn),
            gamma: mat(2 * nn + dim).expect("shape"),
            epsilon: vec(3 * nn + dim),
        })
    }
}

/// Parameter-sharing scheme. Each variant pins or ties entries of
/// `alpha`, `beta`, `gamma`, `epsilon`; `H` is always free.
#[derive(Debug, Clone, PartialEq)]
pub enum Tying {
    /// Every parameter free.
    Full,
    /// `alpha[i][j] = alpha_j`: one exponent per pooled component.
    ColumnTiedAlpha,
    /// Diagonal `gamma`: linear unmixing followed by marginal nonlinearities
    /// (ICA-MG).
    DiagonalGamma,
    /// `alpha = 2`, one shared `beta`, `epsilon` and `gamma`: radial
    /// Gaussianization after the linear stage.
    Radial,
    /// `alpha = p`, one shared `beta`, `epsilon` and `gamma` (Lp-symmetric).
    LpRadial { p: f64 },
    /// Independent subspaces: `alpha = 2`, per-subspace shared `beta`,
    /// `epsilon`, `gamma`, and no pooling across subspaces.
    Subspaces { partition: Vec<Vec<usize>> },
    /// Classic divisive normalization: `epsilon = alpha = gamma = 1`.
    ClassicDn,
}

impl Tying {
    /// Short stable name, also used as the model-file tag.
    pub fn name(&self) -> &'static str {
        match self {
            Tying::Full => "full",
            Tying::ColumnTiedAlpha => "column-tied-alpha",
            Tying::DiagonalGamma => "diagonal-gamma",
            Tying::Radial => "radial",
            Tying::LpRadial { .. } => "lp-radial",
            Tying::Subspaces { .. } => "subspaces",
            Tying::ClassicDn => "classic-dn",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Tying::LpRadial { p } if !(p.is_finite() && *p >= 1.0) => Err(GdnError::InvalidTying(
                format!("Lp exponent {p} must be >= 1"),
            )),
            Tying::Subspaces { partition } => {
                let mut seen = vec![false; dim];
                for set in partition {
                    if set.is_empty() {
                        return Err(GdnError::InvalidTying("empty subspace".into()));
                    }
                    for &i in set {
                        if i >= dim {
                            return Err(GdnError::InvalidTying(format!(
                                "index {i} out of range for dimension {dim}"
                            )));
                        }
                        if seen[i] {
                            return Err(GdnError::InvalidTying(format!(
                                "index {i} appears in more than one subspace"
                            )));
                        }
                        seen[i] = true;
                    }
                }
                if let Some(i) = seen.iter().position(|s| !s) {
                    return Err(GdnError::InvalidTying(format!("index {i} is not covered")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Build the per-block sharing rules for dimension `dim`.
    pub(crate) fn plan(&self, dim: usize) -> Result<TyingPlan> {
        self.validate(dim)?;
        let n = dim;
        let all_mat: Vec<usize> = (0..n * n).collect();
        let all_vec: Vec<usize> = (0..n).collect();
        let plan = match self {
            Tying::Full => TyingPlan::free(),
            Tying::ColumnTiedAlpha => TyingPlan {
                alpha: BlockRule::groups(
                    (0..n)
                        .map(|j| (0..n).map(|i| i * n + j).collect())
                        .collect(),
                ),
                ..TyingPlan::free()
            },
            Tying::DiagonalGamma => TyingPlan {
                gamma: BlockRule::fixed(
                    (0..n * n)
                        .filter(|k| k / n != k % n)
                        .map(|k| (k, 0.0))
                        .collect(),
                ),
                ..TyingPlan::free()
            },
            Tying::Radial | Tying::LpRadial { .. } => {
                let p = match self {
                    Tying::LpRadial { p } => *p,
                    _ => 2.0,
                };
                TyingPlan {
                    alpha: BlockRule::fixed(all_mat.iter().map(|&k| (k, p)).collect()),
                    beta: BlockRule::groups(vec![all_vec.clone()]),
                    gamma: BlockRule::groups(vec![all_mat]),
                    epsilon: BlockRule::groups(vec![all_vec]),
                }
            }
            Tying::Subspaces { partition } => {
                let mut owner = vec![0usize; n];
                for (k, set) in partition.iter().enumerate() {
                    for &i in set {
                        owner[i] = k;
                    }
                }
                let gamma_groups = partition
                    .iter()
                    .map(|set| {
                        set.iter()
                            .flat_map(|&i| set.iter().map(move |&j| i * n + j))
                            .collect()
                    })
                    .collect();
                let gamma_masked = (0..n * n)
                    .filter(|k| owner[k / n] != owner[k % n])
                    .map(|k| (k, 0.0))
                    .collect();
                TyingPlan {
                    alpha: BlockRule::fixed(all_mat.iter().map(|&k| (k, 2.0)).collect()),
                    beta: BlockRule::groups(partition.clone()),
                    gamma: BlockRule {
                        fixed: gamma_masked,
                        groups: gamma_groups,
                    },
                    epsilon: BlockRule::groups(partition.clone()),
                }
            }
            Tying::ClassicDn => TyingPlan {
                alpha: BlockRule::fixed(all_mat.iter().map(|&k| (k, 1.0)).collect()),
                beta: BlockRule::free(),
                gamma: BlockRule::fixed(all_mat.iter().map(|&k| (k, 1.0)).collect()),
                epsilon: BlockRule::fixed(all_vec.iter().map(|&k| (k, 1.0)).collect()),
            },
        };
        Ok(plan)
    }
}

/// Sharing rule for one parameter block (flat row-major indices).
#[derive(Debug, Clone, Default)]
pub(crate) struct BlockRule {
    /// Entries pinned to a constant; not trainable.
    pub fixed: Vec<(usize, f64)>,
    /// Entries constrained to share one value.
    pub groups: Vec<Vec<usize>>,
}

impl BlockRule {
    fn free() -> Self {
        BlockRule::default()
    }

    fn fixed(fixed: Vec<(usize, f64)>) -> Self {
        BlockRule {
            fixed,
            groups: Vec::new(),
        }
    }

    fn groups(groups: Vec<Vec<usize>>) -> Self {
        BlockRule {
            fixed: Vec::new(),
            groups,
        }
    }

    /// Pin fixed entries and replace each group by its mean. Groups that are
    /// already uniform are left bitwise untouched, which keeps projection
    /// idempotent.
    fn impose(&self, values: &mut [f64]) {
        for &(k, v) in &self.fixed {
            values[k] = v;
        }
        for group in &self.groups {
            let first = values[group[0]];
            if group.iter().all(|&k| values[k] == first) {
                continue;
            }
            let mean = group.iter().map(|&k| values[k]).sum::<f64>() / group.len() as f64;
            for &k in group {
                values[k] = mean;
            }
        }
    }

    /// Gradient of the tied parameterization: each group member receives the
    /// group's summed gradient, pinned entries receive zero.
    fn reduce_gradient(&self, grad: &mut [f64]) {
        for &(k, _) in &self.fixed {
            grad[k] = 0.0;
        }
        for group in &self.groups {
            let total: f64 = group.iter().map(|&k| grad[k]).sum();
            for &k in group {
                grad[k] = total;
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct TyingPlan {
    pub alpha: BlockRule,
    pub beta: BlockRule,
    pub gamma: BlockRule,
    pub epsilon: BlockRule,
}

impl TyingPlan {
    fn free() -> Self {
        TyingPlan::default()
    }

    pub fn reduce_gradient(
        &self,
        alpha: &mut [f64],
        beta: &mut [f64],
        gamma: &mut [f64],
        epsilon: &mut [f64],
    ) {
        self.alpha.reduce_gradient(alpha);
        self.beta.reduce_gradient(beta);
        self.gamma.reduce_gradient(gamma);
        self.epsilon.reduce_gradient(epsilon);
    }

    /// Clamp to the box constraints and re-impose the tying. Returns the
    /// number of entries the clamps moved.
    pub fn project(&self, params: &mut GdnParams) -> usize {
        let n = params.dim();
        let mut clamped = 0usize;
        let mut clamp = |v: &mut f64, lo: f64, hi: f64| {
            let c = v.clamp(lo, hi);
            if c != *v {
                clamped += 1;
                *v = c;
            }
        };
        for v in params.alpha.iter_mut() {
            clamp(v, 1.0, f64::INFINITY);
        }
        self.alpha
            .impose(params.alpha.as_slice_mut().expect("standard layout"));
        for v in params.beta.iter_mut() {
            clamp(v, BETA_FLOOR, f64::INFINITY);
        }
        self.beta
            .impose(params.beta.as_slice_mut().expect("standard layout"));
        for v in params.gamma.iter_mut() {
            clamp(v, 0.0, f64::INFINITY);
        }
        self.gamma
            .impose(params.gamma.as_slice_mut().expect("standard layout"));
        for i in 0..n {
            let bound = 1.0 / params.alpha[[i, i]];
            clamp(&mut params.epsilon[i], 0.0, bound);
        }
        self.epsilon
            .impose(params.epsilon.as_slice_mut().expect("standard layout"));
        // A tied epsilon group spanning rows with different alpha_ii could
        // leave one member above its own bound after averaging.
        for i in 0..n {
            let bound = 1.0 / params.alpha[[i, i]];
            if params.epsilon[i] > bound {
                params.epsilon[i] = bound;
            }
        }
        clamped
    }
}

/// Initial parameters for `dim` inputs under `tying`.
///
/// `H = I`, `beta = 1`, `gamma` diagonal (0.1), `alpha = 1` and
/// `epsilon = 0.5 / alpha_ii`. Tied variants replace these by their own
/// constants (e.g. radial: `alpha = 2`, a single `gamma = 0.1 / N` in every
/// entry), so the normalization Jacobian starts out positive definite.
pub fn init_params(dim: usize, tying: &Tying) -> Result<GdnParams> {
    if dim == 0 {
        return Err(GdnError::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    let plan = tying.plan(dim)?;
    let mut params = GdnParams::identity(dim);
    match tying {
        Tying::Radial | Tying::LpRadial { .. } => {
            params.gamma.fill(GAMMA_INIT / dim as f64);
        }
        Tying::Subspaces { partition } => {
            for set in partition {
                let g = GAMMA_INIT / set.len() as f64;
                for &i in set {
                    for &j in set {
                        params.gamma[[i, j]] = g;
                    }
                }
            }
        }
        _ => params.gamma.diag_mut().fill(GAMMA_INIT),
    }
    plan.project(&mut params);
    for i in 0..dim {
        params.epsilon[i] = 0.5 / params.alpha[[i, i]];
    }
    plan.project(&mut params);
    Ok(params)
}

/// Clamp `params` into the feasible box and re-impose `tying`.
///
/// Idempotent, and returns valid, tying-conformant parameters unchanged.
pub fn project_constraints(params: &GdnParams, tying: &Tying) -> Result<GdnParams> {
    let mut out = params.as_standard_layout();
    tying.plan(params.dim())?.project(&mut out);
    Ok(out)
}

impl GdnParams {
    fn as_standard_layout(&self) -> GdnParams {
        GdnParams {
            h: self.h.as_standard_layout().to_owned(),
            alpha: self.alpha.as_standard_layout().to_owned(),
            beta: self.beta.clone(),
            gamma: self.gamma.as_standard_layout().to_owned(),
            epsilon: self.epsilon.clone(),
        }
    }
}
