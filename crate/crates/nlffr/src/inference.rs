//! Pointwise confidence intervals and simultaneous confidence bands for the
//! predicted conditional mean curve.
//!
//! The pointwise interval at time `t` uses the plug-in standard error
//!
//! ```text
//! sigma_n3(x0, t)^2 = n^-1 E[U^2(t)] sum_j lambda_j (lambda_j + eps_n)^-2 phi_j(x0)^2
//! ```
//!
//! with `(lambda_j, phi_j)` the eigenpairs of the sample covariance
//! `n^-1 G_X` and `eps_n = eps_X / n`. The simultaneous band has constant
//! half-width `s_n C(alpha)`, where `s_n = ||w||_2` for the prediction weight
//! vector and `C(alpha)` is the upper-`alpha` quantile of `sup_t |Z(t)|` for
//! a centered Gaussian process with the empirical residual covariance,
//! estimated by path simulation on the prediction grid.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec;
use crate::funcdata::ObservedCurve;
use crate::linalg::sym_eigen_desc;
use crate::regression::{FittedModel, PredictionWeights};

/// Default relative eigenvalue truncation: components below
/// `tol * lambda_1` are dropped because `(lambda + eps_n)^-2` amplifies them.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;

/// Eigenpairs of the estimated covariance operator `n^-1 G_X`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    lambdas: Vec<f64>,
    coord_vectors: Vec<DVector<f64>>,
    retained: usize,
}

impl EigenSystem {
    /// All eigenvalue estimates, nonincreasing, clamped at zero.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Number of retained leading components.
    pub fn retained(&self) -> usize {
        self.retained
    }

    /// Coordinate vector of the `j`-th retained eigenfunction in the spanning
    /// system `{kappa(., X_i) - mu_X}`, normalized so `a_j' G_X a_j = 1`.
    pub fn coord_vector(&self, j: usize) -> Result<&DVector<f64>> {
        self.coord_vectors.get(j).ok_or_else(|| {
            Error::validation(format!(
                "eigen component {j} out of range (retained {})",
                self.retained
            ))
        })
    }
}

/// Eigendecomposes `n^-1 G_X`, retaining components with
/// `lambda_j > tol * lambda_1`.
pub fn eigen_system(model: &FittedModel, tol: f64) -> Result<EigenSystem> {
    let n = model.n();
    let scaled = model.gx() / n as f64;
    let (vals, vecs) = sym_eigen_desc(&scaled);
    let lambda_max = vals[0];
    if !(lambda_max > 0.0) {
        return Err(Error::Numerical(
            "covariance spectrum is entirely nonpositive; covariates are constant".into(),
        ));
    }
    let lambdas: Vec<f64> = vals.iter().map(|&l| l.max(0.0)).collect();
    let mut coord_vectors = Vec::new();
    for (j, &l) in lambdas.iter().enumerate() {
        if l <= tol * lambda_max {
            break;
        }
        // ||v|| = 1 and (n^-1 G) v = l v, so v' G v = n l; rescale to unit H-norm
        let scale = 1.0 / (n as f64 * l).sqrt();
        coord_vectors.push(vecs.column(j) * scale);
    }
    let retained = coord_vectors.len();
    Ok(EigenSystem {
        lambdas,
        coord_vectors,
        retained,
    })
}

/// Evaluates the `j`-th estimated eigenfunction against a new covariate
/// through its centered kernel vector: `phi_j(x0) = a_j' d_x0`.
pub fn phi_at(es: &EigenSystem, j: usize, d_x0: &DVector<f64>) -> Result<f64> {
    Ok(es.coord_vector(j)?.dot(d_x0))
}

/// Empirical residual structure on a working grid.
#[derive(Debug, Clone)]
pub struct ResidualModel {
    grid: Vec<f64>,
    /// Rows express `U_i = Y_i - Yhat(X_i)` as weights on the training
    /// responses: row `i` of `I - A`.
    residual_weights: DMatrix<f64>,
    /// `U_i(t)` on the grid, one row per subject.
    u_grid: DMatrix<f64>,
    /// `E[U^2(t)] = n^-1 sum_i U_i(t)^2`.
    u2: Vec<f64>,
    /// `Sigma_UU(s, t) = n^-1 sum_i U_i(s) U_i(t)`.
    sigma_uu: DMatrix<f64>,
}

impl ResidualModel {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn residual_weights(&self) -> &DMatrix<f64> {
        &self.residual_weights
    }

    pub fn u_grid(&self) -> &DMatrix<f64> {
        &self.u_grid
    }

    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    pub fn sigma_uu(&self) -> &DMatrix<f64> {
        &self.sigma_uu
    }
}

/// Computes training residual curves and their empirical second moments on
/// `grid`. Residuals already subtract the estimated conditional mean, so no
/// re-centering is applied.
pub fn residual_model(model: &FittedModel, grid: &[f64]) -> Result<ResidualModel> {
    let n = model.n();
    let predictor = model.predictor(grid)?;
    let a = model.fitted_value_matrix();
    let mut r = -a;
    for i in 0..n {
        r[(i, i)] += 1.0;
    }
    let u_grid = &r * predictor.y_evals();
    let sigma_uu = u_grid.tr_mul(&u_grid) / n as f64;
    let u2: Vec<f64> = (0..grid.len()).map(|g| sigma_uu[(g, g)]).collect();
    Ok(ResidualModel {
        grid: grid.to_vec(),
        residual_weights: r,
        u_grid,
        u2,
        sigma_uu,
    })
}

/// Sum `sum_j lambda_j (lambda_j + eps_n)^-2 phi_j(x0)^2` over retained
/// components; the `t`-free factor of the pointwise variance.
fn eigen_series(model: &FittedModel, es: &EigenSystem, d_x0: &DVector<f64>) -> f64 {
    let eps_n = model.epsilon_n();
    let mut acc = 0.0;
    for j in 0..es.retained() {
        let l = es.lambdas[j];
        let phi = es.coord_vectors[j].dot(d_x0);
        acc += l / ((l + eps_n) * (l + eps_n)) * phi * phi;
    }
    acc
}

/// Plug-in pointwise standard error `sigma_n3(x0, t)` at grid index `t_idx`.
pub fn pointwise_sigma(
    model: &FittedModel,
    es: &EigenSystem,
    resid: &ResidualModel,
    d_x0: &DVector<f64>,
    t_idx: usize,
) -> Result<f64> {
    if t_idx >= resid.grid.len() {
        return Err(Error::validation(format!(
            "grid index {t_idx} out of range ({} points)",
            resid.grid.len()
        )));
    }
    let series = eigen_series(model, es, d_x0);
    Ok((resid.u2[t_idx] * series / model.n() as f64).sqrt())
}

fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::validation(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let norm = Normal::standard();
    Ok(norm.inverse_cdf(1.0 - alpha / 2.0))
}

/// Pointwise `(1 - alpha)` confidence intervals on the residual-model grid.
///
/// Returns `(lo, hi)` per grid point around the predicted curve.
pub fn pointwise_ci(
    model: &FittedModel,
    es: &EigenSystem,
    resid: &ResidualModel,
    x0: &ObservedCurve,
    alpha: f64,
) -> Result<Vec<(f64, f64)>> {
    let z = z_quantile(alpha)?;
    let weights = model.weights(x0)?;
    let center = model.predictor(&resid.grid)?.predict_weights(&weights.w);
    let series = eigen_series(model, es, &weights.d);
    let n = model.n() as f64;
    Ok(center
        .iter()
        .zip(&resid.u2)
        .map(|(&c, &u2)| {
            let hw = z * (u2 * series / n).sqrt();
            (c - hw, c + hw)
        })
        .collect())
}

/// Plug-in estimate of the band scale `s_n`: the Euclidean norm of the
/// prediction weight vector `w = G_X (G_X + eps_X I)^-1 c_x0`.
pub fn s_n_hat(model: &FittedModel, x0: &ObservedCurve) -> Result<f64> {
    Ok(model.weights(x0)?.w.norm())
}

/// Upper-`alpha` empirical quantile of `sup_t |Z(t)|` over simulated paths of
/// a centered Gaussian process with covariance `sigma_uu`.
///
/// Paths use independent, deterministic substreams of `seed`, so the result
/// is reproducible for any thread count.
pub fn simulate_c_alpha(
    resid: &ResidualModel,
    alpha: f64,
    n_paths: usize,
    seed: u64,
) -> Result<f64> {
    if n_paths < 100 {
        return Err(Error::validation(format!(
            "need at least 100 Gaussian paths, got {n_paths}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let g = resid.grid.len();
    if resid.sigma_uu.nrows() != g || resid.sigma_uu.ncols() != g {
        return Err(Error::validation(
            "residual covariance does not match the grid",
        ));
    }
    // symmetric square root with negative eigenvalues clipped at zero
    let (vals, vecs) = sym_eigen_desc(&resid.sigma_uu);
    let mut vd = vecs.clone();
    for j in 0..g {
        vd.column_mut(j).scale_mut(vals[j].max(0.0).sqrt());
    }
    let root = vd * vecs.transpose();

    let sups = exec::map_indexed(n_paths, |p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let z: DVector<f64> =
            DVector::from_iterator(g, (0..g).map(|_| StandardNormal.sample(&mut rng)));
        let path = &root * z;
        path.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    });
    let mut sorted = sups;
    sorted.sort_by(f64::total_cmp);
    let k = ((1.0 - alpha) * n_paths as f64).ceil() as usize;
    Ok(sorted[k.clamp(1, n_paths) - 1])
}

/// Predicted curve with pointwise intervals and a simultaneous band.
#[derive(Debug, Clone)]
pub struct BandResult {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    /// `z_{1-alpha/2} sigma_n3(x0, t)` per grid point.
    pub pointwise_halfwidth: Vec<f64>,
    /// `s_n C(alpha)`, constant over the grid.
    pub band_halfwidth: f64,
    pub alpha: f64,
}

/// Builds the `(1 - alpha)` simultaneous confidence band (and the pointwise
/// half-widths for comparison) on the residual-model grid.
pub fn simultaneous_band(
    model: &FittedModel,
    es: &EigenSystem,
    resid: &ResidualModel,
    x0: &ObservedCurve,
    alpha: f64,
    n_paths: usize,
    seed: u64,
) -> Result<BandResult> {
    let weights: PredictionWeights = model.weights(x0)?;
    let center = model.predictor(&resid.grid)?.predict_weights(&weights.w);
    let s_n = weights.w.norm();
    let c_alpha = simulate_c_alpha(resid, alpha, n_paths, seed)?;
    let z = z_quantile(alpha)?;
    let series = eigen_series(model, es, &weights.d);
    let n = model.n() as f64;
    let pointwise_halfwidth: Vec<f64> = resid
        .u2
        .iter()
        .map(|&u2| z * (u2 * series / n).sqrt())
        .collect();
    Ok(BandResult {
        grid: resid.grid.clone(),
        center,
        pointwise_halfwidth,
        band_halfwidth: s_n * c_alpha,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcdata::ObservedCurve;
    use crate::kernels::KernelFamily;
    use crate::regression::{fit, FitConfig, Tuning};
    use crate::testsupport::jacobi_eigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixed_config(eps_x: f64, gamma_x: f64) -> FitConfig {
        FitConfig {
            x_family: KernelFamily::Grb,
            y_family: KernelFamily::Grb,
            x_smoothing: Tuning::Fixed {
                epsilon: 1e-3,
                gamma: Some(7.0),
            },
            y_smoothing: Tuning::Fixed {
                epsilon: 1e-3,
                gamma: Some(7.0),
            },
            second_layer: Tuning::Fixed {
                epsilon: eps_x,
                gamma: Some(gamma_x),
            },
        }
    }

    fn toy_model(seed: u64, n: usize) -> FittedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..10).map(|k| (k as f64 + 0.5) / 10.0).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let xv: Vec<f64> = times.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let yv: Vec<f64> = times
                .iter()
                .zip(&xv)
                .map(|(t, x)| x.cos() * t + rng.random_range(-0.05..0.05))
                .collect();
            xs.push(ObservedCurve::new(format!("s{i}"), times.clone(), xv).unwrap());
            ys.push(ObservedCurve::new(format!("s{i}"), times.clone(), yv).unwrap());
        }
        fit(&xs, &ys, &fixed_config(1e-2, 0.5)).unwrap()
    }

    fn grid(len: usize) -> Vec<f64> {
        (0..len).map(|g| g as f64 / (len - 1) as f64).collect()
    }

    #[test]
    fn two_by_two_eigen_closed_form() {
        let times = vec![0.25, 0.75];
        let x = vec![
            ObservedCurve::new("a", times.clone(), vec![1.0, 0.0]).unwrap(),
            ObservedCurve::new("b", times.clone(), vec![0.0, 1.0]).unwrap(),
        ];
        let y = vec![
            ObservedCurve::new("a", times.clone(), vec![1.0, 2.0]).unwrap(),
            ObservedCurve::new("b", times.clone(), vec![2.0, 1.0]).unwrap(),
        ];
        let model = fit(&x, &y, &fixed_config(1e-2, 0.5)).unwrap();
        // G = [[g, -g], [-g, g]] after centering a 2x2 kernel matrix
        let g = model.gx()[(0, 0)];
        assert!((model.gx()[(0, 1)] + g).abs() < 1e-14);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        assert!((es.lambdas()[0] - g).abs() < 1e-12);
        assert_eq!(es.retained(), 1);
        // hand-computed phi: a1 = v1 / sqrt(2 g), v1 = (1, -1)/sqrt(2)
        let d = DVector::from_vec(vec![0.3, -0.1]);
        let a1 = 1.0 / (2.0 * g).sqrt() * std::f64::consts::FRAC_1_SQRT_2;
        let expect = a1 * 0.3 - a1 * (-0.1);
        let got = phi_at(&es, 0, &d).unwrap().abs();
        assert!((got - expect.abs()).abs() < 1e-10);
    }

    #[test]
    fn eigen_trace_identity_and_residuals() {
        let model = toy_model(3, 8);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let trace = model.gx().trace() / 8.0;
        let sum: f64 = es.lambdas().iter().sum();
        assert!((sum - trace).abs() < 1e-8);
        let scaled = model.gx() / 8.0;
        let gnorm = model.gx().norm();
        for j in 0..es.retained() {
            let a = es.coord_vector(j).unwrap();
            let lhs = &scaled * a;
            let res = (&lhs - a * es.lambdas()[j]).norm();
            assert!(res <= 1e-8 * gnorm, "component {j}: residual {res}");
            let norm = (a.transpose() * model.gx() * a)[(0, 0)];
            assert!((norm - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn eigen_matches_jacobi_oracle() {
        let model = toy_model(7, 6);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let n = 6;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| model.gx()[(i, j)] / n as f64).collect())
            .collect();
        let (vals, _) = jacobi_eigen(&a);
        for j in 0..n {
            assert!((es.lambdas()[j] - vals[j].max(0.0)).abs() < 1e-8, "j={j}");
        }
    }

    #[test]
    fn degenerate_covariates_rejected() {
        let times = vec![0.2, 0.8];
        let xv = vec![0.5, -0.5];
        let x = vec![
            ObservedCurve::new("a", times.clone(), xv.clone()).unwrap(),
            ObservedCurve::new("b", times.clone(), xv.clone()).unwrap(),
        ];
        let y = vec![
            ObservedCurve::new("a", times.clone(), vec![1.0, 2.0]).unwrap(),
            ObservedCurve::new("b", times.clone(), vec![0.0, 1.0]).unwrap(),
        ];
        let model = fit(&x, &y, &fixed_config(1e-2, 0.5)).unwrap();
        assert!(eigen_system(&model, DEFAULT_EIGEN_TOL).is_err());
    }

    #[test]
    fn phi_linear_and_zero_on_zero_vector() {
        let model = toy_model(11, 7);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let zero = DVector::zeros(7);
        assert_eq!(phi_at(&es, 0, &zero).unwrap(), 0.0);
        let d1 = DVector::from_fn(7, |i, _| (i as f64 * 0.37).sin());
        let d2 = DVector::from_fn(7, |i, _| (i as f64 * 0.91).cos());
        let sum = &d1 + &d2;
        let got = phi_at(&es, 0, &sum).unwrap();
        let parts = phi_at(&es, 0, &d1).unwrap() + phi_at(&es, 0, &d2).unwrap();
        assert!((got - parts).abs() < 1e-12);
        assert!(phi_at(&es, 99, &d1).is_err());
    }

    #[test]
    fn residual_model_moments_consistent() {
        let model = toy_model(19, 9);
        let resid = residual_model(&model, &grid(21)).unwrap();
        let su = resid.sigma_uu();
        for g in 0..21 {
            assert_eq!(su[(g, g)], resid.u2()[g]);
            assert!(resid.u2()[g] >= 0.0);
            for h in 0..21 {
                assert_eq!(su[(g, h)], su[(h, g)]);
            }
        }
        let (vals, _) = sym_eigen_desc(su);
        assert!(vals[vals.len() - 1] >= -1e-9);
        // u_grid rows really are (I - A) applied to the response evaluations
        let pred = model.predictor(&grid(21)).unwrap();
        let direct = resid.residual_weights() * pred.y_evals();
        assert_eq!(&direct, resid.u_grid());
    }

    #[test]
    fn pointwise_sigma_zero_when_no_residual_variance() {
        let model = toy_model(23, 6);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let mut resid = residual_model(&model, &grid(11)).unwrap();
        resid.u2 = vec![0.0; 11];
        let d = DVector::from_fn(6, |i, _| 0.1 * i as f64);
        for t in 0..11 {
            assert_eq!(pointwise_sigma(&model, &es, &resid, &d, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn pointwise_sigma_single_component_closed_form() {
        let times = vec![0.25, 0.75];
        let x = vec![
            ObservedCurve::new("a", times.clone(), vec![1.0, 0.0]).unwrap(),
            ObservedCurve::new("b", times.clone(), vec![0.0, 1.0]).unwrap(),
        ];
        let y = vec![
            ObservedCurve::new("a", times.clone(), vec![1.0, 2.0]).unwrap(),
            ObservedCurve::new("b", times.clone(), vec![2.0, 1.0]).unwrap(),
        ];
        let model = fit(&x, &y, &fixed_config(1e-2, 0.5)).unwrap();
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let resid = residual_model(&model, &grid(5)).unwrap();
        let d = DVector::from_vec(vec![0.2, -0.4]);
        let got = pointwise_sigma(&model, &es, &resid, &d, 2).unwrap();
        let l = es.lambdas()[0];
        let eps_n = model.epsilon_n();
        let phi = phi_at(&es, 0, &d).unwrap();
        let expect =
            (resid.u2()[2] * l / ((l + eps_n) * (l + eps_n)) * phi * phi / 2.0).sqrt();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn pointwise_sigma_matches_series_oracle() {
        let model = toy_model(29, 6);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let resid = residual_model(&model, &grid(9)).unwrap();
        let d = DVector::from_fn(6, |i, _| ((i + 1) as f64).ln());
        let got = pointwise_sigma(&model, &es, &resid, &d, 4).unwrap();
        let eps_n = model.epsilon_n();
        let mut series = 0.0;
        for j in 0..es.retained() {
            let l = es.lambdas()[j];
            let phi = es.coord_vector(j).unwrap().dot(&d);
            series += l / (l + eps_n).powi(2) * phi * phi;
        }
        let expect = (resid.u2()[4] * series / 6.0).sqrt();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn pointwise_ci_alpha_one_is_degenerate() {
        let model = toy_model(31, 6);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let resid = residual_model(&model, &grid(7)).unwrap();
        let x0 = ObservedCurve::new("x0", vec![0.3, 0.6], vec![0.2, -0.1]).unwrap();
        let ci = pointwise_ci(&model, &es, &resid, &x0, 1.0).unwrap();
        for (lo, hi) in ci {
            assert!((hi - lo).abs() < 1e-12);
        }
        assert!(pointwise_ci(&model, &es, &resid, &x0, 0.0).is_err());
        assert!(pointwise_ci(&model, &es, &resid, &x0, 1.5).is_err());
    }

    #[test]
    fn interval_width_monotone_in_u2() {
        let model = toy_model(37, 6);
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let resid = residual_model(&model, &grid(7)).unwrap();
        let d = DVector::from_fn(6, |i, _| 0.2 * (i as f64 + 1.0));
        let base = pointwise_sigma(&model, &es, &resid, &d, 3).unwrap();
        let mut scaled = resid.clone();
        for v in scaled.u2.iter_mut() {
            *v *= 4.0;
        }
        let wide = pointwise_sigma(&model, &es, &scaled, &d, 3).unwrap();
        assert!((wide - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn s_n_is_weight_norm_and_zero_for_degenerate_gram() {
        let model = toy_model(41, 5);
        let x0 = ObservedCurve::new("x0", vec![0.3, 0.6], vec![0.2, -0.1]).unwrap();
        let w = model.weights(&x0).unwrap().w;
        let got = s_n_hat(&model, &x0).unwrap();
        assert!((got - w.iter().map(|v| v * v).sum::<f64>().sqrt()).abs() < 1e-14);

        // identical covariates force G = 0, hence w = 0 and s_n = 0
        let times = vec![0.2, 0.8];
        let x = vec![
            ObservedCurve::new("a", times.clone(), vec![0.5, -0.5]).unwrap(),
            ObservedCurve::new("b", times.clone(), vec![0.5, -0.5]).unwrap(),
        ];
        let y = vec![
            ObservedCurve::new("a", times.clone(), vec![1.0, 2.0]).unwrap(),
            ObservedCurve::new("b", times.clone(), vec![0.0, 1.0]).unwrap(),
        ];
        let degen = fit(&x, &y, &fixed_config(1e-2, 0.5)).unwrap();
        assert_eq!(s_n_hat(&degen, &x0).unwrap(), 0.0);
    }

    #[test]
    fn s_n_matches_operator_coordinate_oracle() {
        // n^-1 E_n <V G_i, G_x0>^2 with <V G_i, G_x0> = n e_i' (G + eps I)^-1 G c
        // must equal ||w||^2 when the regularized coordinates c represent x0
        let model = toy_model(43, 6);
        let x0 = ObservedCurve::new("x0", vec![0.25, 0.65], vec![0.4, -0.3]).unwrap();
        let weights = model.weights(&x0).unwrap();
        let n = 6usize;
        let mut gr = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                gr[i][j] = model.gx()[(i, j)];
            }
            gr[i][i] += model.epsilon_x();
        }
        let ginv = crate::testsupport::gj_inverse(&gr);
        let gc: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| model.gx()[(i, j)] * weights.c[j])
                    .sum::<f64>()
            })
            .collect();
        let mut plug_in = 0.0;
        for i in 0..n {
            let inner: f64 = (0..n).map(|j| ginv[i][j] * gc[j]).sum::<f64>() * n as f64;
            plug_in += inner * inner;
        }
        plug_in /= n as f64 * n as f64; // n^-1 * E_n
        let s2 = weights.w.norm_squared();
        assert!(
            (plug_in - s2).abs() <= 1e-8 * s2.max(1e-12),
            "plug-in {plug_in} vs ||w||^2 {s2}"
        );
    }

    #[test]
    fn c_alpha_zero_covariance_and_monotonicity() {
        let model = toy_model(47, 6);
        let mut resid = residual_model(&model, &grid(9)).unwrap();
        resid.sigma_uu = DMatrix::zeros(9, 9);
        assert_eq!(simulate_c_alpha(&resid, 0.05, 200, 9).unwrap(), 0.0);

        let resid = residual_model(&model, &grid(9)).unwrap();
        let c05 = simulate_c_alpha(&resid, 0.05, 2000, 9).unwrap();
        let c10 = simulate_c_alpha(&resid, 0.10, 2000, 9).unwrap();
        assert!(c05 >= c10);
        assert!(simulate_c_alpha(&resid, 0.05, 50, 9).is_err());
        assert!(simulate_c_alpha(&resid, 0.0, 2000, 9).is_err());
    }

    #[test]
    fn c_alpha_reproducible_across_thread_counts() {
        let model = toy_model(53, 7);
        let resid = residual_model(&model, &grid(13)).unwrap();
        let a = crate::exec::with_threads(Some(1), || {
            simulate_c_alpha(&resid, 0.05, 5000, 42).unwrap()
        });
        let b = crate::exec::with_threads(Some(4), || {
            simulate_c_alpha(&resid, 0.05, 5000, 42).unwrap()
        });
        let c = simulate_c_alpha(&resid, 0.05, 5000, 42).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn zero_residuals_give_zero_width_band() {
        let model = toy_model(59, 6);
        let mut resid = residual_model(&model, &grid(11)).unwrap();
        resid.sigma_uu = DMatrix::zeros(11, 11);
        resid.u2 = vec![0.0; 11];
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let x0 = ObservedCurve::new("x0", vec![0.3, 0.6], vec![0.2, -0.1]).unwrap();
        let band = simultaneous_band(&model, &es, &resid, &x0, 0.05, 500, 3).unwrap();
        assert_eq!(band.band_halfwidth, 0.0);
        for hw in band.pointwise_halfwidth {
            assert_eq!(hw, 0.0);
        }
    }

    #[test]
    fn sigma_and_s_n_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let times: Vec<f64> = (0..8).map(|k| (k as f64 + 0.5) / 8.0).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..7 {
            let xv: Vec<f64> = times.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let yv: Vec<f64> = times.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            xs.push(ObservedCurve::new(format!("s{i}"), times.clone(), xv).unwrap());
            ys.push(ObservedCurve::new(format!("s{i}"), times.clone(), yv).unwrap());
        }
        let cfg = fixed_config(1e-2, 0.5);
        let model = fit(&xs, &ys, &cfg).unwrap();
        let perm = [4usize, 2, 6, 0, 3, 5, 1];
        let xp: Vec<ObservedCurve> = perm.iter().map(|&i| xs[i].clone()).collect();
        let yp: Vec<ObservedCurve> = perm.iter().map(|&i| ys[i].clone()).collect();
        let model_p = fit(&xp, &yp, &cfg).unwrap();

        let x0 = ObservedCurve::new("x0", vec![0.3, 0.7], vec![0.5, -0.2]).unwrap();
        let s1 = s_n_hat(&model, &x0).unwrap();
        let s2 = s_n_hat(&model_p, &x0).unwrap();
        assert!((s1 - s2).abs() < 1e-10 * s1.max(1.0));

        let g = grid(9);
        let es1 = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let es2 = eigen_system(&model_p, DEFAULT_EIGEN_TOL).unwrap();
        let r1 = residual_model(&model, &g).unwrap();
        let r2 = residual_model(&model_p, &g).unwrap();
        let d1 = model.weights(&x0).unwrap().d;
        let d2 = model_p.weights(&x0).unwrap().d;
        let sig1 = pointwise_sigma(&model, &es1, &r1, &d1, 4).unwrap();
        let sig2 = pointwise_sigma(&model_p, &es2, &r2, &d2, 4).unwrap();
        assert!((sig1 - sig2).abs() < 1e-9 * sig1.max(1e-12));
    }
}
