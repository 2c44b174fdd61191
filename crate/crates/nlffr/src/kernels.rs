//! Time-domain kernels and the second-layer kernel on the curve space.
//!
//! The first layer consists of positive definite kernels on `[0, 1]` used to
//! build the covariate and response curve spaces. The second layer is a
//! Gaussian kernel on the first-layer Hilbert space itself; it only sees the
//! three inner products `(<f,f>, <f,g>, <g,g>)`, never raw curves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest negative squared distance tolerated before signalling
/// inconsistent inner products.
pub const SQ_DIST_TOL: f64 = 1e-10;

/// Positive definite kernel on the time interval `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TimeKernel {
    /// `k(s, t) = exp(-gamma (s - t)^2)`, unit diagonal.
    GaussianRbf { gamma: f64 },
    /// `k(s, t) = min(s, t)`, the covariance of standard Brownian motion.
    BrownianCovariance,
}

impl TimeKernel {
    pub fn gaussian_rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::config(format!(
                "GRB kernel requires a positive finite gamma, got {gamma}"
            )));
        }
        Ok(TimeKernel::GaussianRbf { gamma })
    }

    pub fn brownian() -> Self {
        TimeKernel::BrownianCovariance
    }

    /// Evaluates `k(s, t)`; symmetric in its arguments.
    #[inline]
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match *self {
            TimeKernel::GaussianRbf { gamma } => {
                let d = s - t;
                (-gamma * d * d).exp()
            }
            TimeKernel::BrownianCovariance => s.min(t),
        }
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            TimeKernel::GaussianRbf { .. } => KernelFamily::Grb,
            TimeKernel::BrownianCovariance => KernelFamily::Bmc,
        }
    }

    /// The bandwidth for GRB kernels, `None` for BMC.
    pub fn gamma(&self) -> Option<f64> {
        match *self {
            TimeKernel::GaussianRbf { gamma } => Some(gamma),
            TimeKernel::BrownianCovariance => None,
        }
    }
}

/// Kernel family without parameters, used when the bandwidth is tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Grb,
    Bmc,
}

impl KernelFamily {
    /// Instantiates the kernel. `gamma` is required for GRB and ignored for BMC.
    pub fn build(&self, gamma: Option<f64>) -> Result<TimeKernel> {
        match self {
            KernelFamily::Grb => match gamma {
                Some(g) => TimeKernel::gaussian_rbf(g),
                None => Err(Error::config("GRB kernel requires gamma")),
            },
            KernelFamily::Bmc => Ok(TimeKernel::brownian()),
        }
    }

    pub fn uses_gamma(&self) -> bool {
        matches!(self, KernelFamily::Grb)
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::Grb => write!(f, "grb"),
            KernelFamily::Bmc => write!(f, "bmc"),
        }
    }
}

/// Gram matrix with entry `(k, l) = kernel(points[k], points[l])`.
pub fn time_gram(kernel: &TimeKernel, points: &[f64]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::validation("time_gram requires at least one point"));
    }
    let m = points.len();
    let mut gram = DMatrix::zeros(m, m);
    for k in 0..m {
        for l in k..m {
            let v = kernel.eval(points[k], points[l]);
            gram[(k, l)] = v;
            gram[(l, k)] = v;
        }
    }
    Ok(gram)
}

/// Rectangular kernel matrix with entry `(k, l) = kernel(rows[k], cols[l])`.
pub fn cross_gram(kernel: &TimeKernel, rows: &[f64], cols: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |k, l| kernel.eval(rows[k], cols[l]))
}

/// Gaussian kernel on the first-layer Hilbert space,
/// `kappa(f, g) = exp(-gamma ||f - g||^2)`.
///
/// Evaluation is expressed through the squared distance
/// `<f,f> - 2<f,g> + <g,g>`, so callers never materialise curves here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondLayerKernel {
    gamma: f64,
}

impl SecondLayerKernel {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::config(format!(
                "second-layer kernel requires a positive finite gamma, got {gamma}"
            )));
        }
        Ok(SecondLayerKernel { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Evaluates `exp(-gamma (aa - 2 ab + bb))` from the three inner products.
    ///
    /// Squared distances in `[-1e-10, 0)` are clipped to zero; anything more
    /// negative signals inconsistent inner products.
    #[inline]
    pub fn eval(&self, aa: f64, ab: f64, bb: f64) -> Result<f64> {
        let sq = aa - 2.0 * ab + bb;
        if sq < -SQ_DIST_TOL {
            return Err(Error::numerical(format!(
                "inconsistent inner products: squared distance {sq:e} < -{SQ_DIST_TOL:e}"
            )));
        }
        Ok((-self.gamma * sq.max(0.0)).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grb_diagonal_is_one() {
        let k = TimeKernel::gaussian_rbf(7.0).unwrap();
        assert_eq!(k.eval(0.5, 0.5), 1.0);
    }

    #[test]
    fn bmc_closed_form() {
        let k = TimeKernel::brownian();
        assert_eq!(k.eval(0.3, 0.7), 0.3);
        assert_eq!(k.eval(0.7, 0.3), 0.3);
    }

    #[test]
    fn grb_closed_form_endpoints() {
        let k = TimeKernel::gaussian_rbf(7.0).unwrap();
        let v = k.eval(0.0, 1.0);
        assert!((v - (-7.0f64).exp()).abs() < 1e-12);
        assert!((v - 9.1188e-4).abs() < 1e-7);
    }

    #[test]
    fn invalid_gamma_rejected() {
        assert!(TimeKernel::gaussian_rbf(0.0).is_err());
        assert!(TimeKernel::gaussian_rbf(-1.0).is_err());
        assert!(TimeKernel::gaussian_rbf(f64::NAN).is_err());
        assert!(SecondLayerKernel::new(0.0).is_err());
    }

    #[test]
    fn gram_single_point() {
        let k = TimeKernel::gaussian_rbf(7.0).unwrap();
        let g = time_gram(&k, &[0.5]).unwrap();
        assert_eq!(g.nrows(), 1);
        assert_eq!(g[(0, 0)], 1.0);
    }

    #[test]
    fn gram_bmc_two_points() {
        let g = time_gram(&TimeKernel::brownian(), &[0.25, 0.75]).unwrap();
        assert_eq!(g[(0, 0)], 0.25);
        assert_eq!(g[(0, 1)], 0.25);
        assert_eq!(g[(1, 0)], 0.25);
        assert_eq!(g[(1, 1)], 0.75);
    }

    #[test]
    fn gram_empty_rejected() {
        assert!(time_gram(&TimeKernel::brownian(), &[]).is_err());
    }

    #[test]
    fn grb_gram_psd_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let k = TimeKernel::gaussian_rbf(7.0).unwrap();
        for _ in 0..5 {
            let pts: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
            let gram = time_gram(&k, &pts).unwrap();
            let eig = gram.symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-10, "min eigenvalue {min}");
        }
    }

    #[test]
    fn bmc_gram_zero_row_at_origin() {
        let g = time_gram(&TimeKernel::brownian(), &[0.0, 0.5, 1.0]).unwrap();
        for j in 0..3 {
            assert_eq!(g[(0, j)], 0.0);
            assert_eq!(g[(j, 0)], 0.0);
        }
    }

    #[test]
    fn second_layer_closed_form() {
        let k = SecondLayerKernel::new(0.5).unwrap();
        let v = k.eval(2.0, 1.0, 2.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
        assert!((v - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn second_layer_self_is_one() {
        let k = SecondLayerKernel::new(0.5).unwrap();
        for c in [0.0, 1.0, 3.5, 100.0] {
            assert_eq!(k.eval(c, c, c).unwrap(), 1.0);
        }
    }

    #[test]
    fn second_layer_symmetric() {
        let k = SecondLayerKernel::new(2.0).unwrap();
        let a = k.eval(1.5, 0.2, 3.0).unwrap();
        let b = k.eval(3.0, 0.2, 1.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn second_layer_tiny_negative_clipped() {
        let k = SecondLayerKernel::new(1.0).unwrap();
        // aa - 2ab + bb = -5e-11, inside the clip band.
        let v = k.eval(1.0, 1.000000000025, 1.0).unwrap();
        assert_eq!(v, 1.0);
        assert!(k.eval(1.0, 1.5, 1.0).is_err());
    }
}
