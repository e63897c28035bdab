//! The hashing objective and its alternating block-coordinate optimizer.
//!
//! Notation follows the usual collective matrix factorization layout: features
//! are `d x N` with one sample per column, `V` is the `k x N` shared latent
//! representation, `B` the `k x N` binary codes, `U1`/`U2` the per-modality
//! factor loadings, `P` the `c x k` label projection, `R` a `k x k` rotation
//! and `W1`/`W2` the linear hash functions.
//!
//! Every block except `B` has a closed-form ridge or Procrustes minimizer.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{center_dataset, load_matrix, save_matrix, CenteringStats, Dataset, Modality};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, polar_factor, spd_solve, DenseMatrix};

/// Ridge added to `B B^T` in the label-projection step; that Gram matrix
/// can be singular when code rows coincide.
pub const P_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Reconstruction weight of the first modality.
    pub lambda1: f64,
    /// Reconstruction weight of the second modality.
    pub lambda2: f64,
    /// Label reconstruction weight.
    pub gamma: f64,
    /// Weight tying the codes to the rotated latent space.
    pub alpha: f64,
    /// Hash-function fit weight, first modality.
    pub beta1: f64,
    /// Hash-function fit weight, second modality.
    pub beta2: f64,
    /// Frobenius regularizer on `U1, U2, V, W1, W2`.
    pub mu: f64,
    /// Code length in bits.
    pub k: usize,
    pub miter: usize,
    pub seed: u64,
    /// Stop once the relative objective decrease of an iteration drops below this.
    pub rel_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 1.0,
            lambda2: 1.0,
            gamma: 10.0,
            alpha: 2.0,
            beta1: 10.0,
            beta2: 10.0,
            mu: 5.0,
            k: 16,
            miter: 20,
            seed: 0,
            rel_tol: 1e-5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("mu", self.mu),
        ];
        for (name, w) in weights {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {w}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Argument("code length k must be >= 1".into()));
        }
        if self.miter == 0 {
            return Err(Error::Argument("miter must be >= 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return Err(Error::Argument(format!(
                "rel_tol must be non-negative, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }

    fn lambda(&self, m: Modality) -> f64 {
        match m {
            Modality::First => self.lambda1,
            Modality::Second => self.lambda2,
        }
    }

    fn beta(&self, m: Modality) -> f64 {
        match m {
            Modality::First => self.beta1,
            Modality::Second => self.beta2,
        }
    }
}

/// Trained (or in-training) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EdshModel {
    pub u1: DenseMatrix,
    pub u2: DenseMatrix,
    pub p: DenseMatrix,
    pub v: DenseMatrix,
    pub r: DenseMatrix,
    pub b: DenseMatrix,
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub centering: CenteringStats,
    pub hyper: Hyperparams,
}

impl EdshModel {
    pub fn k(&self) -> usize {
        self.r.rows()
    }

    pub fn u(&self, m: Modality) -> &DenseMatrix {
        match m {
            Modality::First => &self.u1,
            Modality::Second => &self.u2,
        }
    }

    pub fn w(&self, m: Modality) -> &DenseMatrix {
        match m {
            Modality::First => &self.w1,
            Modality::Second => &self.w2,
        }
    }

    /// Feature dimension of modality `m`.
    pub fn dim(&self, m: Modality) -> usize {
        self.w(m).cols()
    }

    /// `||R R^T - I||_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let k = self.k();
        matmul_nt(&self.r, &self.r)
            .expect("square rotation")
            .dist_sq(&DenseMatrix::identity(k))
            .expect("k x k")
            .sqrt()
    }

    /// Checks the two hard constraints: `R` orthogonal, `B` in {-1, +1}.
    pub fn check_constraints(&self) -> Result<()> {
        let err = self.orthogonality_error();
        if err.is_nan() || err > 1e-8 {
            return Err(Error::Argument(format!(
                "rotation is not orthogonal (||RR^T - I||_F = {err:e})"
            )));
        }
        for i in 0..self.b.rows() {
            for (j, &v) in self.b.row(i).iter().enumerate() {
                if v != 1.0 && v != -1.0 {
                    return Err(Error::Encoding {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    fn check_dims(&self, train: &Dataset) -> Result<()> {
        let k = self.k();
        let n = train.len();
        let expect = [
            ("u1", &self.u1, (train.x1.rows(), k)),
            ("u2", &self.u2, (train.x2.rows(), k)),
            ("p", &self.p, (train.classes(), k)),
            ("v", &self.v, (k, n)),
            ("r", &self.r, (k, k)),
            ("b", &self.b, (k, n)),
            ("w1", &self.w1, (k, train.x1.rows())),
            ("w2", &self.w2, (k, train.x2.rows())),
        ];
        for (name, mat, shape) in expect {
            if mat.shape() != shape {
                return Err(Error::shape(
                    "model",
                    format!("{name} is {:?}, expected {shape:?}", mat.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// Random initialization followed by closed-form `U1`, `U2` and `P`.
///
/// `train` must already be centered. The returned model carries zero
/// centering statistics; [`train`] replaces them with the training means.
pub fn init_state(train: &Dataset, hyper: &Hyperparams) -> Result<EdshModel> {
    hyper.validate()?;
    let k = hyper.k;
    let n = train.len();
    if n <= k {
        warn!("{n} training samples for {k}-bit codes: B B^T is likely rank deficient");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let gauss = Normal::new(0.0, (1.0 / k as f64).sqrt()).expect("positive std");

    let b = DenseMatrix::from_fn(k, n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    let v = DenseMatrix::from_fn(k, n, |_, _| gauss.sample(&mut rng));
    let g = DenseMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let r = polar_factor(&g)?;
    let w1 = DenseMatrix::from_fn(k, train.x1.rows(), |_, _| gauss.sample(&mut rng));
    let w2 = DenseMatrix::from_fn(k, train.x2.rows(), |_, _| gauss.sample(&mut rng));

    let mut model = EdshModel {
        u1: DenseMatrix::zeros(train.x1.rows(), k),
        u2: DenseMatrix::zeros(train.x2.rows(), k),
        p: DenseMatrix::zeros(train.classes(), k),
        v,
        r,
        b,
        w1,
        w2,
        centering: CenteringStats {
            mean1: vec![0.0; train.x1.rows()],
            mean2: vec![0.0; train.x2.rows()],
        },
        hyper: hyper.clone(),
    };
    model.u1 = update_u(&model, train, Modality::First)?;
    model.u2 = update_u(&model, train, Modality::Second)?;
    model.p = update_p(&model, train)?;
    Ok(model)
}

/// Per-term breakdown of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    /// `sum_m lambda_m ||X_m - U_m V||^2`
    pub reconstruction: f64,
    /// `gamma ||Y - P B||^2`
    pub label: f64,
    /// `alpha ||B - R V||^2`
    pub rotation: f64,
    /// `sum_m beta_m ||V - W_m X_m||^2`
    pub hash_fit: f64,
    /// `mu (||U1||^2 + ||U2||^2 + ||V||^2 + ||W1||^2 + ||W2||^2)`
    pub regularizer: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.label + self.rotation + self.hash_fit + self.regularizer
    }
}

pub fn objective_terms(model: &EdshModel, train: &Dataset) -> Result<ObjectiveTerms> {
    model.check_dims(train)?;
    let h = &model.hyper;
    let mut reconstruction = 0.0;
    let mut hash_fit = 0.0;
    for m in [Modality::First, Modality::Second] {
        let x = train.modality(m);
        reconstruction += h.lambda(m) * x.dist_sq(&matmul(model.u(m), &model.v)?)?;
        hash_fit += h.beta(m) * model.v.dist_sq(&matmul(model.w(m), x)?)?;
    }
    let label = h.gamma * train.labels.dist_sq(&matmul(&model.p, &model.b)?)?;
    let rotation = h.alpha * model.b.dist_sq(&matmul(&model.r, &model.v)?)?;
    let regularizer = h.mu
        * (model.u1.frobenius_sq()
            + model.u2.frobenius_sq()
            + model.v.frobenius_sq()
            + model.w1.frobenius_sq()
            + model.w2.frobenius_sq());
    Ok(ObjectiveTerms {
        reconstruction,
        label,
        rotation,
        hash_fit,
        regularizer,
    })
}

/// Full training objective. `train` must be centered the same way the model was.
pub fn objective(model: &EdshModel, train: &Dataset) -> Result<f64> {
    Ok(objective_terms(model, train)?.total())
}

/// `U_m = X_m V^T (V V^T + (mu / lambda_m) I)^-1`
pub fn update_u(model: &EdshModel, train: &Dataset, m: Modality) -> Result<DenseMatrix> {
    let h = &model.hyper;
    let x = train.modality(m);
    let gram = matmul_nt(&model.v, &model.v)?.add_diagonal(h.mu / h.lambda(m))?;
    let rhs = matmul_nt(&model.v, x)?; // V X^T = (X V^T)^T
    Ok(spd_solve(&gram, &rhs)?.transpose())
}

/// `P = Y B^T (B B^T + eps I)^-1` with `eps = P_RIDGE`.
pub fn update_p(model: &EdshModel, train: &Dataset) -> Result<DenseMatrix> {
    let gram = matmul_nt(&model.b, &model.b)?.add_diagonal(P_RIDGE)?;
    let rhs = matmul_nt(&model.b, &train.labels)?;
    Ok(spd_solve(&gram, &rhs)?.transpose())
}

/// Closed-form shared latent representation given every other block.
pub fn update_v(model: &EdshModel, train: &Dataset) -> Result<DenseMatrix> {
    let h = &model.hyper;
    let k = model.k();
    let mut system = matmul_tn(&model.r, &model.r)?.scale(h.alpha);
    let mut rhs = matmul_tn(&model.r, &model.b)?.scale(h.alpha);
    for m in [Modality::First, Modality::Second] {
        let u = model.u(m);
        let x = train.modality(m);
        system = system.add_scaled(&matmul_tn(u, u)?, h.lambda(m))?;
        rhs = rhs
            .add_scaled(&matmul_tn(u, x)?, h.lambda(m))?
            .add_scaled(&matmul(model.w(m), x)?, h.beta(m))?;
    }
    let system = system.add_diagonal(h.beta1 + h.beta2 + h.mu)?;
    debug_assert_eq!(system.shape(), (k, k));
    spd_solve(&system, &rhs)
}

/// Orthogonal Procrustes: the rotation minimizing `||B - R V||_F`.
///
/// With `B V^T = S diag(sigma) T^T`, the minimizer is `R = S T^T`.
pub fn update_r(model: &EdshModel) -> Result<DenseMatrix> {
    polar_factor(&matmul_nt(&model.b, &model.v)?)
}

/// `B = sign(alpha R V + gamma P^T Y)`, with `sign(0) = +1`.
pub fn update_b(model: &EdshModel, train: &Dataset) -> Result<DenseMatrix> {
    let h = &model.hyper;
    let rv = matmul(&model.r, &model.v)?;
    let pty = matmul_tn(&model.p, &train.labels)?;
    let g = rv.scale(h.alpha).add_scaled(&pty, h.gamma)?;
    Ok(g.map(sign))
}

/// `W_m = V X_m^T (X_m X_m^T + (mu / beta_m) I)^-1`
pub fn update_w(model: &EdshModel, train: &Dataset, m: Modality) -> Result<DenseMatrix> {
    let h = &model.hyper;
    let x = train.modality(m);
    let gram = matmul_nt(x, x)?.add_diagonal(h.mu / h.beta(m))?;
    let rhs = matmul_nt(x, &model.v)?; // X V^T = (V X^T)^T
    Ok(spd_solve(&gram, &rhs)?.transpose())
}

/// Sign with the convention `sign(0) = +1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// One pass of the eight block updates, in the fixed order
/// `U1, U2, P, V, R, B, W1, W2`.
pub fn iterate(model: &mut EdshModel, train: &Dataset) -> Result<()> {
    model.u1 = update_u(model, train, Modality::First)?;
    model.u2 = update_u(model, train, Modality::Second)?;
    model.p = update_p(model, train)?;
    model.v = update_v(model, train)?;
    model.r = update_r(model)?;
    model.b = update_b(model, train)?;
    model.w1 = update_w(model, train, Modality::First)?;
    model.w2 = update_w(model, train, Modality::Second)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective value at initialization, before the first iteration.
    pub initial_objective: f64,
    /// Objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub wall_seconds: f64,
    /// Time spent in the iteration loop alone.
    pub loop_seconds: f64,
}

impl TrainReport {
    pub fn seconds_per_iteration(&self) -> f64 {
        self.loop_seconds / self.iterations_run.max(1) as f64
    }
}

/// Centers `ds`, initializes, and alternates the block updates until
/// `miter` iterations or a relative decrease below `rel_tol`.
pub fn train(ds: &Dataset, hyper: &Hyperparams) -> Result<(EdshModel, TrainReport)> {
    let start = Instant::now();
    hyper.validate()?;
    let (centered, stats) = center_dataset(ds);
    let mut model = init_state(&centered, hyper)?;
    model.centering = stats;

    let initial = objective(&model, &centered)?;
    if !initial.is_finite() {
        return Err(Error::Training {
            iteration: 0,
            detail: format!("initial objective is {initial}"),
        });
    }
    debug!("initial objective {initial:.6e}");

    let loop_start = Instant::now();
    let mut trace = Vec::with_capacity(hyper.miter);
    let mut prev = initial;
    for iteration in 1..=hyper.miter {
        iterate(&mut model, &centered).map_err(|e| Error::Training {
            iteration,
            detail: e.to_string(),
        })?;
        let value = objective(&model, &centered)?;
        if !value.is_finite() {
            return Err(Error::Training {
                iteration,
                detail: format!("objective is {value}"),
            });
        }
        debug!("iteration {iteration}: objective {value:.6e}");
        if value > prev + 1e-9 * prev.abs() {
            warn!("objective increased at iteration {iteration}: {prev:.9e} -> {value:.9e}");
        }
        trace.push(value);
        let decrease = (prev - value) / prev.abs().max(f64::MIN_POSITIVE);
        prev = value;
        if decrease < hyper.rel_tol {
            break;
        }
    }
    let report = TrainReport {
        initial_objective: initial,
        iterations_run: trace.len(),
        objective_trace: trace,
        wall_seconds: start.elapsed().as_secs_f64(),
        loop_seconds: loop_start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

const MODEL_FORMAT: &str = "edsh-model-1";
const META_FILE: &str = "meta.json";
const MATRIX_FILES: [&str; 8] = ["u1", "u2", "p", "v", "r", "w1", "w2", "b"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    format: String,
    k: usize,
    d1: usize,
    d2: usize,
    classes: usize,
    n_train: usize,
    hyper: Hyperparams,
    centering: CenteringStats,
    provenance: String,
}

impl EdshModel {
    /// Writes every parameter matrix as `<name>.edshmat` plus `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, mat) in MATRIX_FILES.iter().zip(self.matrices()) {
            save_matrix(&dir.join(format!("{name}.edshmat")), mat)?;
        }
        let meta = ModelMeta {
            format: MODEL_FORMAT.to_string(),
            k: self.k(),
            d1: self.dim(Modality::First),
            d2: self.dim(Modality::Second),
            classes: self.p.rows(),
            n_train: self.v.cols(),
            hyper: self.hyper.clone(),
            centering: self.centering.clone(),
            provenance: format!(
                "edsh {} alternating discrete optimization, seed {}",
                env!("CARGO_PKG_VERSION"),
                self.hyper.seed
            ),
        };
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(dir.join(META_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<EdshModel> {
        let text = fs::read_to_string(dir.join(META_FILE))?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        if meta.format != MODEL_FORMAT {
            return Err(Error::format(
                0,
                format!("unknown model format {:?}", meta.format),
            ));
        }
        let mut mats = Vec::with_capacity(MATRIX_FILES.len());
        for name in MATRIX_FILES {
            mats.push(load_matrix(&dir.join(format!("{name}.edshmat")))?);
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("eight matrices");
        let model = EdshModel {
            u1: next(),
            u2: next(),
            p: next(),
            v: next(),
            r: next(),
            w1: next(),
            w2: next(),
            b: next(),
            centering: meta.centering,
            hyper: meta.hyper,
        };
        let (k, n) = (meta.k, meta.n_train);
        let expect = [
            ("u1", &model.u1, (meta.d1, k)),
            ("u2", &model.u2, (meta.d2, k)),
            ("p", &model.p, (meta.classes, k)),
            ("v", &model.v, (k, n)),
            ("r", &model.r, (k, k)),
            ("w1", &model.w1, (k, meta.d1)),
            ("w2", &model.w2, (k, meta.d2)),
            ("b", &model.b, (k, n)),
        ];
        for (name, mat, shape) in expect {
            if mat.shape() != shape {
                return Err(Error::format(
                    8,
                    format!(
                        "{name}.edshmat is {:?}, meta.json implies {shape:?}",
                        mat.shape()
                    ),
                ));
            }
        }
        if model.centering.mean1.len() != meta.d1 || model.centering.mean2.len() != meta.d2 {
            return Err(Error::format(
                0,
                "centering means do not match feature dimensions",
            ));
        }
        if model.hyper.k != k {
            return Err(Error::format(0, "hyperparameter k disagrees with stored k"));
        }
        Ok(model)
    }

    fn matrices(&self) -> [&DenseMatrix; 8] {
        [
            &self.u1, &self.u2, &self.p, &self.v, &self.r, &self.w1, &self.w2, &self.b,
        ]
    }
}
