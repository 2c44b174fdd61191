//! Nonlinear function-on-function regression.
//!
//! Fitting recovers all trajectories, builds the first-layer inner-product
//! matrix, maps it through the second-layer Gaussian kernel into `K_X`,
//! centers to `G_X = Q K_X Q` and factorizes the ridge systems. Prediction
//! for a new covariate `x` forms
//!
//! ```text
//! d_x[i] = kappa(X_i, x) - mean_l kappa(X_i, X_l)
//! c_x    = Q (K_X + eps_X I)^-1 d_x
//! w      = G_X (G_X + eps_X I)^-1 c_x
//! yhat   = sum_i w[i] Y_i + mean(Y)
//! ```
//!
//! Both ridges are tuned by generalized cross validation unless fixed in the
//! configuration.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::funcdata::{
    gcv_smoothing, recover, recover_all, rkhs_gram, rkhs_inner, rkhs_inner_many, ObservedCurve,
    RecoveredCurve, SmoothingChoice,
};
use crate::kernels::{KernelFamily, SecondLayerKernel, TimeKernel};
use crate::linalg::{center_gram, center_vector, ridge_cholesky, sym_eigen_desc, trapezoid};

/// Default ridge grid for trajectory recovery.
pub const DEFAULT_EPS_T_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
/// Default GRB bandwidth grid for trajectory recovery.
pub const DEFAULT_GAMMA_T_GRID: [f64; 7] = [1.0, 2.0, 5.0, 7.0, 10.0, 20.0, 50.0];
/// Default ridge grid for the regression layer.
pub const DEFAULT_EPS_X_GRID: [f64; 8] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Multiples of the inverse median pairwise squared distance tried for the
/// second-layer bandwidth when no grid is given.
const GAMMA_X_MULTIPLIERS: [f64; 7] = [0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 20.0];

/// Default second-layer bandwidth grid: the median heuristic.
///
/// Centers the grid on `1 / median_{i<j} ||X_i - X_j||^2` so the kernel sees
/// order-one squared distances regardless of the data scale.
pub fn default_gamma_x_grid(hx_gram: &DMatrix<f64>) -> Vec<f64> {
    let n = hx_gram.nrows();
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push(hx_gram[(i, i)] - 2.0 * hx_gram[(i, j)] + hx_gram[(j, j)]);
        }
    }
    let med = if d2.is_empty() { 0.0 } else { crate::linalg::median(&d2) };
    let base = if med > 0.0 { 1.0 / med } else { 1.0 };
    GAMMA_X_MULTIPLIERS.iter().map(|m| m * base).collect()
}

/// How one tuning parameter pair is determined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Tuning {
    /// Use the given values as-is.
    Fixed {
        epsilon: f64,
        #[serde(default)]
        gamma: Option<f64>,
    },
    /// Grid search by GCV; `None` grids fall back to the defaults.
    Gcv {
        #[serde(default)]
        epsilon_grid: Option<Vec<f64>>,
        #[serde(default)]
        gamma_grid: Option<Vec<f64>>,
    },
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning::Gcv {
            epsilon_grid: None,
            gamma_grid: None,
        }
    }
}

/// Full fit configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub x_family: KernelFamily,
    pub y_family: KernelFamily,
    #[serde(default)]
    pub x_smoothing: Tuning,
    #[serde(default)]
    pub y_smoothing: Tuning,
    #[serde(default)]
    pub second_layer: Tuning,
}

impl FitConfig {
    /// GCV-tuned configuration with default grids on every layer.
    pub fn gcv(x_family: KernelFamily, y_family: KernelFamily) -> Self {
        FitConfig {
            x_family,
            y_family,
            x_smoothing: Tuning::default(),
            y_smoothing: Tuning::default(),
            second_layer: Tuning::default(),
        }
    }
}

/// Where a chosen parameter came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Fixed,
    Gcv,
}

/// A resolved tuning choice together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenParam {
    pub epsilon: f64,
    pub gamma: Option<f64>,
    pub gcv_score: Option<f64>,
    pub provenance: Provenance,
}

/// Tuning choices for all three layers, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub x_smoothing: ChosenParam,
    pub y_smoothing: ChosenParam,
    pub second_layer: ChosenParam,
}

fn resolve_smoothing(
    curves: &[ObservedCurve],
    family: KernelFamily,
    tuning: &Tuning,
    side: &str,
) -> Result<ChosenParam> {
    match tuning {
        Tuning::Fixed { epsilon, gamma } => {
            if !(*epsilon > 0.0) || !epsilon.is_finite() {
                return Err(Error::config(format!(
                    "{side} smoothing ridge must be positive, got {epsilon}"
                )));
            }
            if family.uses_gamma() && gamma.is_none() {
                return Err(Error::config(format!(
                    "{side} smoothing: GRB kernel needs a fixed gamma"
                )));
            }
            family.build(*gamma)?; // validates gamma > 0
            Ok(ChosenParam {
                epsilon: *epsilon,
                gamma: if family.uses_gamma() { *gamma } else { None },
                gcv_score: None,
                provenance: Provenance::Fixed,
            })
        }
        Tuning::Gcv {
            epsilon_grid,
            gamma_grid,
        } => {
            let eps: Vec<f64> = epsilon_grid
                .clone()
                .unwrap_or_else(|| DEFAULT_EPS_T_GRID.to_vec());
            let gam: Vec<f64> = gamma_grid
                .clone()
                .unwrap_or_else(|| DEFAULT_GAMMA_T_GRID.to_vec());
            let choice: SmoothingChoice = gcv_smoothing(curves, family, &eps, &gam)?;
            Ok(ChosenParam {
                epsilon: choice.epsilon,
                gamma: choice.gamma,
                gcv_score: Some(choice.gcv_score),
                provenance: Provenance::Gcv,
            })
        }
    }
}

/// Builds the second-layer Gram `K_X` from first-layer inner products.
pub fn second_layer_gram(
    hx_gram: &DMatrix<f64>,
    kernel: &SecondLayerKernel,
) -> Result<DMatrix<f64>> {
    let n = hx_gram.nrows();
    let mut kx = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(hx_gram[(i, i)], hx_gram[(i, j)], hx_gram[(j, j)])?;
            kx[(i, j)] = v;
            kx[(j, i)] = v;
        }
    }
    Ok(kx)
}

/// Per-subject fitted residual norms `||Y_i - Yhat_i||^2` and the smoother
/// trace, both as functions of the regression ridge.
///
/// `eigvals`/`eigvecs` decompose `G_X`; the fitted-value matrix is
/// `A = V diag(l/(l+eps)) V' + 11'/n` and the returned trace is
/// `trace(A) = sum_j l_j/(l_j+eps) + 1`. The GCV search uses an O(n) trace
/// identity instead; this per-subject form backs the oracle tests.
#[cfg(test)]
pub(crate) fn residual_sq_norms_and_trace(
    eigvals: &DVector<f64>,
    eigvecs: &DMatrix<f64>,
    ky_inner: &DMatrix<f64>,
    eps: f64,
) -> (Vec<f64>, f64) {
    let n = eigvals.len();
    let mut vd = eigvecs.clone();
    let mut tr = 1.0;
    for j in 0..n {
        let s = eigvals[j] / (eigvals[j] + eps);
        tr += s;
        vd.column_mut(j).scale_mut(s);
    }
    // R = I - A with A = V diag(s) V' + 11'/n
    let mut r = vd * eigvecs.transpose();
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = -r[(i, j)] - inv_n;
        }
        r[(i, i)] += 1.0;
    }
    let f = &r * ky_inner;
    let norms = (0..n).map(|i| f.row(i).dot(&r.row(i))).collect();
    (norms, tr)
}

/// Grid search for `(epsilon_X, gamma_X)` minimizing the regression GCV score
/// `n^-1 sum_i ||Y_i - Yhat_i||^2 / [1 - trace(A)/n]^2`.
///
/// Ties break toward smaller epsilon, then smaller gamma. Returns
/// `(epsilon_x, gamma_x, score)`.
pub fn gcv_regression(
    hx_gram: &DMatrix<f64>,
    ky_inner: &DMatrix<f64>,
    eps_grid: &[f64],
    gamma_grid: &[f64],
) -> Result<(f64, f64, f64)> {
    if eps_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::config("regression GCV grids must be nonempty"));
    }
    for &v in eps_grid.iter().chain(gamma_grid) {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::config(format!(
                "regression GCV grid entries must be positive, got {v}"
            )));
        }
    }
    let n_us = hx_gram.nrows();
    let n = n_us as f64;
    let per_gamma: Vec<Vec<f64>> = exec::try_map_indexed(gamma_grid.len(), |gi| {
        let kernel = SecondLayerKernel::new(gamma_grid[gi])?;
        let kx = second_layer_gram(hx_gram, &kernel)?;
        let gx = center_gram(&kx);
        let (vals, vecs) = sym_eigen_desc(&gx);
        // With R = I - A = V diag(e_j) V' - 11'/n, e_j = eps/(l_j + eps), the
        // total residual norm collapses to O(n) per ridge value:
        // trace(R Ky R) = sum_j e_j^2 W_jj - (2/n) sum_j e_j p_j u_j + s/n
        let w_rot = {
            let t = vecs.tr_mul(ky_inner);
            t * &vecs
        };
        let ones = DVector::from_element(n_us, 1.0);
        let ky_ones = ky_inner * &ones;
        let u = vecs.tr_mul(&ky_ones);
        let p = vecs.tr_mul(&ones);
        let s = ones.dot(&ky_ones);
        let scores = eps_grid
            .iter()
            .map(|&eps| {
                let mut quad = 0.0;
                let mut cross = 0.0;
                let mut tr = 1.0;
                for j in 0..n_us {
                    let e = eps / (vals[j] + eps);
                    quad += e * e * w_rot[(j, j)];
                    cross += e * p[j] * u[j];
                    tr += vals[j] / (vals[j] + eps);
                }
                let total = quad - 2.0 * cross / n + s / n;
                let denom = 1.0 - tr / n;
                if denom <= 0.0 {
                    f64::INFINITY
                } else {
                    (total / n) / (denom * denom)
                }
            })
            .collect();
        Ok(scores)
    })?;

    let mut best: Option<(f64, f64, f64)> = None;
    for (gi, scores) in per_gamma.iter().enumerate() {
        for (ei, &score) in scores.iter().enumerate() {
            let (eps, gamma) = (eps_grid[ei], gamma_grid[gi]);
            let better = match best {
                None => true,
                Some((be, bg, bs)) => {
                    score < bs
                        || (score == bs && (eps < be || (eps == be && gamma < bg)))
                }
            };
            if better {
                best = Some((eps, gamma, score));
            }
        }
    }
    let (eps, gamma, score) = best.expect("nonempty grids");
    if !score.is_finite() {
        return Err(Error::numerical(
            "every regression grid point had a degenerate GCV denominator",
        ));
    }
    Ok((eps, gamma, score))
}

/// Prediction weight vectors for one new covariate.
#[derive(Debug, Clone)]
pub struct PredictionWeights {
    /// Centered kernel evaluations `kappa(X_i, x) - mean_l kappa(X_i, X_l)`.
    pub d: DVector<f64>,
    /// Coordinates of the centered kernel section, zero-sum.
    pub c: DVector<f64>,
    /// Weights on the training responses in the centered prediction term.
    pub w: DVector<f64>,
}

/// A fitted nonlinear function-on-function regression model.
#[derive(Debug, Clone)]
pub struct FittedModel {
    subject_ids: Vec<String>,
    x_kernel: TimeKernel,
    epsilon_t_x: f64,
    y_kernel: TimeKernel,
    epsilon_t_y: f64,
    second_layer: SecondLayerKernel,
    epsilon_x: f64,
    x_curves: Vec<RecoveredCurve>,
    y_curves: Vec<RecoveredCurve>,
    hx_gram: DMatrix<f64>,
    kx: DMatrix<f64>,
    gx: DMatrix<f64>,
    ky_inner: DMatrix<f64>,
    kx_row_means: Vec<f64>,
    kx_chol: Cholesky<f64, Dyn>,
    gx_chol: Cholesky<f64, Dyn>,
    tuning: TuningSummary,
}

/// Serializable snapshot of a [`FittedModel`].
///
/// Factorizations are rebuilt on load; everything else round-trips exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParts {
    pub subject_ids: Vec<String>,
    pub x_kernel: TimeKernel,
    pub epsilon_t_x: f64,
    pub y_kernel: TimeKernel,
    pub epsilon_t_y: f64,
    pub gamma_x: f64,
    pub epsilon_x: f64,
    pub x_curves: Vec<RecoveredCurve>,
    pub y_curves: Vec<RecoveredCurve>,
    pub hx_gram: DMatrix<f64>,
    pub kx: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub ky_inner: DMatrix<f64>,
    pub tuning: TuningSummary,
}

fn pair_by_subject(
    x: &[ObservedCurve],
    y: &[ObservedCurve],
) -> Result<Vec<ObservedCurve>> {
    let mut y_idx: HashMap<&str, usize> = HashMap::new();
    for (j, c) in y.iter().enumerate() {
        if y_idx.insert(c.subject_id(), j).is_some() {
            return Err(Error::validation(format!(
                "duplicate response subject id '{}'",
                c.subject_id()
            )));
        }
    }
    let mut seen_x: HashMap<&str, ()> = HashMap::new();
    let mut missing = Vec::new();
    let mut ordered = Vec::with_capacity(x.len());
    for c in x {
        if seen_x.insert(c.subject_id(), ()).is_some() {
            return Err(Error::validation(format!(
                "duplicate covariate subject id '{}'",
                c.subject_id()
            )));
        }
        match y_idx.remove(c.subject_id()) {
            Some(j) => ordered.push(y[j].clone()),
            None => missing.push(c.subject_id().to_string()),
        }
    }
    let extra: Vec<String> = y_idx.keys().map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut extra = extra;
        extra.sort();
        return Err(Error::validation(format!(
            "unpaired subjects: missing y for [{}]; missing x for [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    Ok(ordered)
}

/// Fits the model on paired covariate/response curves.
///
/// The subject order of `x` is kept; `y` is matched by subject id.
pub fn fit(x: &[ObservedCurve], y: &[ObservedCurve], config: &FitConfig) -> Result<FittedModel> {
    if x.len() < 2 {
        return Err(Error::validation(format!(
            "fit requires at least 2 subjects, got {}",
            x.len()
        )));
    }
    let y_ordered = pair_by_subject(x, y)?;

    let x_choice = resolve_smoothing(x, config.x_family, &config.x_smoothing, "covariate")?;
    let y_choice = resolve_smoothing(&y_ordered, config.y_family, &config.y_smoothing, "response")?;
    let x_kernel = config.x_family.build(x_choice.gamma)?;
    let y_kernel = config.y_family.build(y_choice.gamma)?;

    let x_curves = recover_all(x, &x_kernel, x_choice.epsilon)?;
    let y_curves = recover_all(&y_ordered, &y_kernel, y_choice.epsilon)?;

    let hx_gram = rkhs_gram(&x_curves)?;
    let ky_inner = rkhs_gram(&y_curves)?;

    let sl_choice = match &config.second_layer {
        Tuning::Fixed { epsilon, gamma } => {
            let gamma = gamma.ok_or_else(|| {
                Error::config("second layer needs a fixed gamma when not tuned")
            })?;
            if !(*epsilon > 0.0) || !epsilon.is_finite() {
                return Err(Error::config(format!(
                    "regression ridge must be positive, got {epsilon}"
                )));
            }
            SecondLayerKernel::new(gamma)?;
            ChosenParam {
                epsilon: *epsilon,
                gamma: Some(gamma),
                gcv_score: None,
                provenance: Provenance::Fixed,
            }
        }
        Tuning::Gcv {
            epsilon_grid,
            gamma_grid,
        } => {
            let eps: Vec<f64> = epsilon_grid
                .clone()
                .unwrap_or_else(|| DEFAULT_EPS_X_GRID.to_vec());
            let gam: Vec<f64> = gamma_grid
                .clone()
                .unwrap_or_else(|| default_gamma_x_grid(&hx_gram));
            let (e, g, s) = gcv_regression(&hx_gram, &ky_inner, &eps, &gam)?;
            ChosenParam {
                epsilon: e,
                gamma: Some(g),
                gcv_score: Some(s),
                provenance: Provenance::Gcv,
            }
        }
    };

    let second_layer = SecondLayerKernel::new(sl_choice.gamma.expect("gamma set above"))?;
    let epsilon_x = sl_choice.epsilon;
    let tuning = TuningSummary {
        x_smoothing: x_choice.clone(),
        y_smoothing: y_choice.clone(),
        second_layer: sl_choice,
    };

    FittedModel::assemble(
        x.iter().map(|c| c.subject_id().to_string()).collect(),
        x_kernel,
        x_choice.epsilon,
        y_kernel,
        y_choice.epsilon,
        second_layer,
        epsilon_x,
        x_curves,
        y_curves,
        hx_gram,
        ky_inner,
        tuning,
    )
}

impl FittedModel {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        subject_ids: Vec<String>,
        x_kernel: TimeKernel,
        epsilon_t_x: f64,
        y_kernel: TimeKernel,
        epsilon_t_y: f64,
        second_layer: SecondLayerKernel,
        epsilon_x: f64,
        x_curves: Vec<RecoveredCurve>,
        y_curves: Vec<RecoveredCurve>,
        hx_gram: DMatrix<f64>,
        ky_inner: DMatrix<f64>,
        tuning: TuningSummary,
    ) -> Result<FittedModel> {
        let n = x_curves.len();
        let kx = second_layer_gram(&hx_gram, &second_layer)?;
        let gx = center_gram(&kx);
        let kx_chol = ridge_cholesky(&kx, epsilon_x)?;
        let gx_chol = ridge_cholesky(&gx, epsilon_x)?;
        let kx_row_means = (0..n).map(|i| kx.row(i).sum() / n as f64).collect();
        Ok(FittedModel {
            subject_ids,
            x_kernel,
            epsilon_t_x,
            y_kernel,
            epsilon_t_y,
            second_layer,
            epsilon_x,
            x_curves,
            y_curves,
            hx_gram,
            kx,
            gx,
            ky_inner,
            kx_row_means,
            kx_chol,
            gx_chol,
            tuning,
        })
    }

    pub fn n(&self) -> usize {
        self.x_curves.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn x_curves(&self) -> &[RecoveredCurve] {
        &self.x_curves
    }

    pub fn y_curves(&self) -> &[RecoveredCurve] {
        &self.y_curves
    }

    pub fn hx_gram(&self) -> &DMatrix<f64> {
        &self.hx_gram
    }

    pub fn kx(&self) -> &DMatrix<f64> {
        &self.kx
    }

    pub fn gx(&self) -> &DMatrix<f64> {
        &self.gx
    }

    pub fn ky_inner(&self) -> &DMatrix<f64> {
        &self.ky_inner
    }

    pub fn epsilon_x(&self) -> f64 {
        self.epsilon_x
    }

    /// Operator-level ridge `eps_X / n` (the sample covariance carries `1/n`).
    pub fn epsilon_n(&self) -> f64 {
        self.epsilon_x / self.n() as f64
    }

    pub fn gamma_x(&self) -> f64 {
        self.second_layer.gamma()
    }

    pub fn x_kernel(&self) -> &TimeKernel {
        &self.x_kernel
    }

    pub fn y_kernel(&self) -> &TimeKernel {
        &self.y_kernel
    }

    pub fn epsilon_t_x(&self) -> f64 {
        self.epsilon_t_x
    }

    pub fn epsilon_t_y(&self) -> f64 {
        self.epsilon_t_y
    }

    pub fn tuning(&self) -> &TuningSummary {
        &self.tuning
    }

    /// Recovers a new covariate with the training kernel and ridge.
    pub fn recover_new(&self, x0: &ObservedCurve) -> Result<RecoveredCurve> {
        recover(x0, &self.x_kernel, self.epsilon_t_x)
    }

    /// Fitted-value matrix `A` with `Yhat_i = sum_j A[i,j] Y_j` on the
    /// training set, `A = (G_X + eps_X I)^-1 G_X + 11'/n`.
    pub fn fitted_value_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = self.gx_chol.solve(&self.gx);
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += inv_n;
            }
        }
        a
    }

    /// Prediction weights for an already recovered covariate.
    pub fn weights_for_recovered(&self, x0: &RecoveredCurve) -> Result<PredictionWeights> {
        let cross = rkhs_inner_many(&self.x_curves, x0)?;
        let x00 = rkhs_inner(x0, x0)?;
        let n = self.n();
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let k = self
                .second_layer
                .eval(self.hx_gram[(i, i)], cross[i], x00)?;
            d[i] = k - self.kx_row_means[i];
        }
        Ok(self.weights_from_d(&d))
    }

    /// Prediction weights from a centered kernel vector `d_x`.
    ///
    /// The weights depend on the new covariate only through `d_x`.
    pub fn weights_from_d(&self, d: &DVector<f64>) -> PredictionWeights {
        let c = center_vector(&self.kx_chol.solve(d));
        let w = &self.gx * self.gx_chol.solve(&c);
        PredictionWeights { d: d.clone(), c, w }
    }

    /// Prediction weights for a new observed covariate.
    pub fn weights(&self, x0: &ObservedCurve) -> Result<PredictionWeights> {
        let rec = self.recover_new(x0)?;
        self.weights_for_recovered(&rec)
    }

    /// Precomputes response-curve evaluations on a grid for fast prediction.
    pub fn predictor(&self, grid: &[f64]) -> Result<GridPredictor<'_>> {
        if grid.is_empty() {
            return Err(Error::validation("prediction grid is empty"));
        }
        if grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("prediction grid has non-finite entries"));
        }
        let n = self.n();
        let rows = exec::map_indexed(n, |i| self.y_curves[i].evaluate_on(grid));
        let y_evals = DMatrix::from_fn(n, grid.len(), |i, g| rows[i][g]);
        let mean: Vec<f64> = (0..grid.len())
            .map(|g| y_evals.column(g).sum() / n as f64)
            .collect();
        Ok(GridPredictor {
            model: self,
            grid: grid.to_vec(),
            y_evals,
            mean,
        })
    }

    /// Predicts the response curve for a new covariate on a grid.
    pub fn predict(&self, x0: &ObservedCurve, grid: &[f64]) -> Result<Vec<f64>> {
        self.predictor(grid)?.predict(x0)
    }

    /// Snapshot for serialization.
    pub fn to_parts(&self) -> ModelParts {
        ModelParts {
            subject_ids: self.subject_ids.clone(),
            x_kernel: self.x_kernel,
            epsilon_t_x: self.epsilon_t_x,
            y_kernel: self.y_kernel,
            epsilon_t_y: self.epsilon_t_y,
            gamma_x: self.second_layer.gamma(),
            epsilon_x: self.epsilon_x,
            x_curves: self.x_curves.clone(),
            y_curves: self.y_curves.clone(),
            hx_gram: self.hx_gram.clone(),
            kx: self.kx.clone(),
            gx: self.gx.clone(),
            ky_inner: self.ky_inner.clone(),
            tuning: self.tuning.clone(),
        }
    }

    /// Rebuilds a model from a snapshot, re-deriving the factorizations.
    pub fn from_parts(parts: ModelParts) -> Result<FittedModel> {
        let n = parts.x_curves.len();
        if n < 2
            || parts.y_curves.len() != n
            || parts.subject_ids.len() != n
            || parts.hx_gram.nrows() != n
            || parts.hx_gram.ncols() != n
            || parts.kx.nrows() != n
            || parts.kx.ncols() != n
            || parts.gx.nrows() != n
            || parts.gx.ncols() != n
            || parts.ky_inner.nrows() != n
            || parts.ky_inner.ncols() != n
        {
            return Err(Error::validation(
                "model parts have inconsistent dimensions",
            ));
        }
        if !(parts.epsilon_x > 0.0) {
            return Err(Error::validation("model parts: epsilon_x must be positive"));
        }
        let second_layer = SecondLayerKernel::new(parts.gamma_x)?;
        let kx_chol = ridge_cholesky(&parts.kx, parts.epsilon_x)?;
        let gx_chol = ridge_cholesky(&parts.gx, parts.epsilon_x)?;
        let kx_row_means = (0..n).map(|i| parts.kx.row(i).sum() / n as f64).collect();
        Ok(FittedModel {
            subject_ids: parts.subject_ids,
            x_kernel: parts.x_kernel,
            epsilon_t_x: parts.epsilon_t_x,
            y_kernel: parts.y_kernel,
            epsilon_t_y: parts.epsilon_t_y,
            second_layer,
            epsilon_x: parts.epsilon_x,
            x_curves: parts.x_curves,
            y_curves: parts.y_curves,
            hx_gram: parts.hx_gram,
            kx: parts.kx,
            gx: parts.gx,
            ky_inner: parts.ky_inner,
            kx_row_means,
            kx_chol,
            gx_chol,
            tuning: parts.tuning,
        })
    }
}

/// Response-curve evaluations frozen on one grid.
pub struct GridPredictor<'m> {
    model: &'m FittedModel,
    grid: Vec<f64>,
    y_evals: DMatrix<f64>,
    mean: Vec<f64>,
}

impl GridPredictor<'_> {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Sample mean response curve on the grid.
    pub fn mean_curve(&self) -> &[f64] {
        &self.mean
    }

    /// Per-subject response evaluations (row `i` is `Y_i` on the grid).
    pub fn y_evals(&self) -> &DMatrix<f64> {
        &self.y_evals
    }

    /// `yhat(t) = sum_i w[i] Y_i(t) + mean(Y)(t)` for precomputed weights.
    pub fn predict_weights(&self, w: &DVector<f64>) -> Vec<f64> {
        let centered = self.y_evals.tr_mul(w);
        (0..self.grid.len())
            .map(|g| centered[g] + self.mean[g])
            .collect()
    }

    pub fn predict(&self, x0: &ObservedCurve) -> Result<Vec<f64>> {
        let weights = self.model.weights(x0)?;
        Ok(self.predict_weights(&weights.w))
    }
}

/// Integrated squared error between two curves sampled on a common grid,
/// by trapezoidal quadrature.
pub fn ise(predicted: &[f64], truth: &[f64], grid: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.len() != grid.len() {
        return Err(Error::validation(format!(
            "ise length mismatch: {} predicted, {} truth, {} grid",
            predicted.len(),
            truth.len(),
            grid.len()
        )));
    }
    if grid.len() < 2 {
        return Err(Error::validation("ise needs at least two grid points"));
    }
    let sq: Vec<f64> = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .collect();
    Ok(trapezoid(&sq, grid))
}
