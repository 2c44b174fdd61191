//! Synthetic-data generators and the replicated simulation harness.
//!
//! Covariates are drawn either as random Gaussian-bump combinations (GRB) or
//! as truncated Karhunen-Loeve Brownian paths (BMC). Responses pass a scalar
//! functional of the covariate through a fixed shape function `rho` plus
//! Brownian noise. Every replication derives its own deterministic RNG
//! substreams from the scenario seed, so runs are reproducible for any
//! thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::funcdata::ObservedCurve;
use crate::inference::{eigen_system, residual_model, simultaneous_band, DEFAULT_EIGEN_TOL};
use crate::kernels::KernelFamily;
use crate::linalg::{median, quantile};
use crate::regression::{fit, ise, FitConfig};

/// Bandwidth of the GRB generator kernel.
pub const GRB_GENERATOR_GAMMA: f64 = 7.0;
/// Anchor points of the functionals `b_1, b_2, b_3` under the GRB generator.
pub const GRB_FUNCTIONAL_ANCHORS: [f64; 3] = [0.6, 0.9, 0.1];
/// Number of Karhunen-Loeve terms in the BMC generator.
pub const BMC_KL_TERMS: usize = 100;

/// The 50-point master observation grid `(1..=50)/50`; excludes `t = 0`
/// where the Brownian kernel row degenerates.
pub fn master_grid() -> Vec<f64> {
    (1..=50).map(|k| k as f64 / 50.0).collect()
}

/// Which covariate generator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XGen {
    Grb,
    Bmc,
}

impl std::fmt::Display for XGen {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            XGen::Grb => write!(f, "grb"),
            XGen::Bmc => write!(f, "bmc"),
        }
    }
}

/// Which response model generates `Y` from `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ResponseModel {
    One,
    Two,
}

impl TryFrom<u8> for ResponseModel {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(ResponseModel::One),
            2 => Ok(ResponseModel::Two),
            other => Err(format!("unknown response model {other}; expected 1 or 2")),
        }
    }
}

impl From<ResponseModel> for u8 {
    fn from(m: ResponseModel) -> u8 {
        match m {
            ResponseModel::One => 1,
            ResponseModel::Two => 2,
        }
    }
}

impl std::fmt::Display for ResponseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Observation design for the master grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Keep all 50 grid points.
    Dense,
    /// Keep a uniformly random 10-subset per curve.
    Sparse,
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Design::Dense => write!(f, "dense"),
            Design::Sparse => write!(f, "sparse"),
        }
    }
}

/// A sampled covariate path with closed-form evaluation and functionals.
#[derive(Debug, Clone)]
pub enum XSample {
    /// `X(t) = sum_k coeffs[k] exp(-7 (t - centers[k])^2)`.
    Grb {
        coeffs: [f64; 5],
        centers: [f64; 5],
    },
    /// `X(t) = sum_j sqrt(2) [(j-1/2) pi]^-1 coeffs[j] sin((j-1/2) pi t)`.
    Bmc { coeffs: Vec<f64> },
}

impl XSample {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            XSample::Grb { coeffs, centers } => coeffs
                .iter()
                .zip(centers)
                .map(|(&a, &c)| a * (-GRB_GENERATOR_GAMMA * (t - c) * (t - c)).exp())
                .sum(),
            XSample::Bmc { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    let freq = (j as f64 + 0.5) * PI;
                    std::f64::consts::SQRT_2 / freq * a * (freq * t).sin()
                })
                .sum(),
        }
    }

    pub fn eval_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.eval(t)).collect()
    }

    /// The scalar functional `<X, b_j>` for `j` in `1..=3`.
    ///
    /// Under GRB, `b_j = kappa_T(., t_j)` and the pairing is the reproducing
    /// one. Under BMC, `b_1` and `b_3` are the first and third Brownian
    /// eigenfunctions taken as unit vectors of the Brownian RKHS and `b_2 =
    /// 0`; pairing a Karhunen-Loeve path against the unit-norm eigenfunction
    /// reads off the raw score, `<X, b_j> = a_j`.
    pub fn functional(&self, j: usize) -> f64 {
        assert!((1..=3).contains(&j), "functional index must be 1..=3");
        match self {
            XSample::Grb { coeffs, centers } => {
                let anchor = GRB_FUNCTIONAL_ANCHORS[j - 1];
                coeffs
                    .iter()
                    .zip(centers)
                    .map(|(&a, &c)| {
                        a * (-GRB_GENERATOR_GAMMA * (c - anchor) * (c - anchor)).exp()
                    })
                    .sum()
            }
            XSample::Bmc { coeffs } => {
                if j == 2 {
                    return 0.0;
                }
                coeffs[j - 1]
            }
        }
    }
}

/// Draws a GRB covariate: five `N(0,1)` amplitudes, then five `U[0,1]`
/// centers.
pub fn gen_x_grb(rng: &mut impl Rng) -> XSample {
    let mut coeffs = [0.0; 5];
    for c in coeffs.iter_mut() {
        *c = StandardNormal.sample(rng);
    }
    let mut centers = [0.0; 5];
    for c in centers.iter_mut() {
        *c = rng.random_range(0.0..1.0);
    }
    XSample::Grb { coeffs, centers }
}

/// Draws a BMC covariate: a 100-term truncated Karhunen-Loeve Brownian path.
pub fn gen_x_bmc(rng: &mut impl Rng) -> XSample {
    let coeffs: Vec<f64> = (0..BMC_KL_TERMS)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    XSample::Bmc { coeffs }
}

pub fn gen_x(generator: XGen, rng: &mut impl Rng) -> XSample {
    match generator {
        XGen::Grb => gen_x_grb(rng),
        XGen::Bmc => gen_x_bmc(rng),
    }
}

/// The shape function `rho(t) = sum_{j=1..5} sqrt(2) sin((j-1/2) pi t)`.
pub fn rho(t: f64) -> f64 {
    (0..5)
        .map(|j| std::f64::consts::SQRT_2 * ((j as f64 + 0.5) * PI * t).sin())
        .sum()
}

/// The scalar coefficient of `rho` in the true conditional mean.
pub fn true_coefficient(model: ResponseModel, x: &XSample) -> f64 {
    match model {
        ResponseModel::One => {
            let f1 = x.functional(1);
            let f2 = x.functional(2);
            1.0 / (1.0 + f1.exp()) + f2 * f2
        }
        ResponseModel::Two => x.functional(3).cos(),
    }
}

/// True conditional mean `E[Y | X = x]` on a grid.
pub fn true_mean_on(model: ResponseModel, x: &XSample, grid: &[f64]) -> Vec<f64> {
    let coef = true_coefficient(model, x);
    grid.iter().map(|&t| coef * rho(t)).collect()
}

/// Standard Brownian path on a grid via cumulative Gaussian increments
/// (exact finite-dimensional distribution, starting from `B(0) = 0`).
pub fn brownian_path(rng: &mut impl Rng, grid: &[f64]) -> Vec<f64> {
    let mut path = Vec::with_capacity(grid.len());
    let mut prev_t = 0.0;
    let mut value = 0.0;
    for &t in grid {
        let dt = t - prev_t;
        let z: f64 = StandardNormal.sample(rng);
        value += dt.sqrt() * z;
        path.push(value);
        prev_t = t;
    }
    path
}

/// Generates response values `Y(t) = coef(X) rho(t) + sigma eps(t)` on a grid.
pub fn gen_response_values(
    model: ResponseModel,
    x: &XSample,
    sigma: f64,
    rng: &mut impl Rng,
    grid: &[f64],
) -> Vec<f64> {
    let coef = true_coefficient(model, x);
    let noise = brownian_path(rng, grid);
    grid.iter()
        .zip(&noise)
        .map(|(&t, &e)| coef * rho(t) + sigma * e)
        .collect()
}

/// Subsamples values on the master grid according to the design.
pub fn apply_design(
    subject_id: &str,
    grid: &[f64],
    values: &[f64],
    design: Design,
    rng: &mut impl Rng,
) -> Result<ObservedCurve> {
    match design {
        Design::Dense => {
            ObservedCurve::new(subject_id, grid.to_vec(), values.to_vec())
        }
        Design::Sparse => {
            let mut idx: Vec<usize> = rand::seq::index::sample(rng, grid.len(), 10).into_vec();
            idx.sort_unstable();
            let times: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
            let vals: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            ObservedCurve::new(subject_id, times, vals)
        }
    }
}

fn default_n_train() -> usize {
    100
}

fn default_n_test() -> usize {
    500
}

fn default_alpha() -> f64 {
    0.05
}

fn default_n_paths() -> usize {
    10_000
}

/// Optional per-replication confidence evaluation at a fresh covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        CoverageSettings {
            alpha: default_alpha(),
            n_paths: default_n_paths(),
        }
    }
}

/// Full description of one simulation scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ResponseModel,
    pub x_generator: XGen,
    /// Kernel family used for both curve spaces when fitting.
    pub fit_kernel: KernelFamily,
    pub sigma: f64,
    pub design: Design,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    pub n_reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub coverage: Option<CoverageSettings>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 {
            return Err(Error::config("n_train must be at least 2"));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test must be positive"));
        }
        if self.n_reps == 0 {
            return Err(Error::config("n_reps must be positive"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if let Some(cov) = &self.coverage {
            if !(cov.alpha > 0.0 && cov.alpha < 1.0) {
                return Err(Error::config(format!(
                    "coverage alpha must lie in (0, 1), got {}",
                    cov.alpha
                )));
            }
            if cov.n_paths < 100 {
                return Err(Error::config("coverage n_paths must be at least 100"));
            }
        }
        Ok(())
    }
}

/// Outcome of a single replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    /// Median test-set ISE; `None` when the replication failed.
    pub median_ise: Option<f64>,
    pub band_covered: Option<bool>,
    /// Fraction of grid points where the pointwise interval covers the truth.
    pub pointwise_coverage: Option<f64>,
    pub error: Option<String>,
}

/// Cross-replication summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub median: f64,
    pub iqr: f64,
    pub failures: usize,
    pub band_coverage: Option<f64>,
    pub pointwise_coverage: Option<f64>,
}

/// Per-replication outcomes plus summary, with the config echoed back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub reps: Vec<RepOutcome>,
    pub summary: ScenarioSummary,
}

/// RNG substream channels within one replication.
mod channel {
    pub const X: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const DESIGN: u64 = 2;
    pub const COVERAGE: u64 = 3;
    pub const CHANNELS: u64 = 4;
}

fn substream(seed: u64, rep: usize, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 * channel::CHANNELS + channel);
    rng
}

/// SplitMix64 finalizer; decorrelates derived seeds from the base seed.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct RepData {
    x_obs: Vec<ObservedCurve>,
    y_obs: Vec<ObservedCurve>,
    y_true: Vec<Vec<f64>>,
}

fn generate_rep_data(cfg: &ScenarioConfig, grid: &[f64], rep: usize) -> Result<RepData> {
    let n_total = cfg.n_train + cfg.n_test;
    let mut rng_x = substream(cfg.seed, rep, channel::X);
    let mut rng_noise = substream(cfg.seed, rep, channel::NOISE);
    let mut rng_design = substream(cfg.seed, rep, channel::DESIGN);

    let samples: Vec<XSample> = (0..n_total).map(|_| gen_x(cfg.x_generator, &mut rng_x)).collect();
    let y_true: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| gen_response_values(cfg.model, x, cfg.sigma, &mut rng_noise, grid))
        .collect();

    let mut x_obs = Vec::with_capacity(n_total);
    let mut y_obs = Vec::with_capacity(n_total);
    for (i, sample) in samples.iter().enumerate() {
        let id = format!("s{i:05}");
        let xv = sample.eval_on(grid);
        x_obs.push(apply_design(&id, grid, &xv, cfg.design, &mut rng_design)?);
        y_obs.push(apply_design(&id, grid, &y_true[i], cfg.design, &mut rng_design)?);
    }
    Ok(RepData {
        x_obs,
        y_obs,
        y_true,
    })
}

fn run_rep(cfg: &ScenarioConfig, grid: &[f64], rep: usize) -> RepOutcome {
    let fail = |rep: usize, e: Error| RepOutcome {
        rep,
        median_ise: None,
        band_covered: None,
        pointwise_coverage: None,
        error: Some(e.to_string()),
    };
    let data = match generate_rep_data(cfg, grid, rep) {
        Ok(d) => d,
        Err(e) => return fail(rep, e),
    };
    let fit_config = FitConfig::gcv(cfg.fit_kernel, cfg.fit_kernel);
    let model = match fit(
        &data.x_obs[..cfg.n_train],
        &data.y_obs[..cfg.n_train],
        &fit_config,
    ) {
        Ok(m) => m,
        Err(e) => return fail(rep, e),
    };
    let predictor = match model.predictor(grid) {
        Ok(p) => p,
        Err(e) => return fail(rep, e),
    };

    let mut ises = Vec::with_capacity(cfg.n_test);
    for i in cfg.n_train..cfg.n_train + cfg.n_test {
        let yhat = match predictor.predict(&data.x_obs[i]) {
            Ok(v) => v,
            Err(e) => return fail(rep, e),
        };
        match ise(&yhat, &data.y_true[i], grid) {
            Ok(v) => ises.push(v),
            Err(e) => return fail(rep, e),
        }
    }
    let median_ise = median(&ises);

    let (band_covered, pointwise_coverage) = match &cfg.coverage {
        None => (None, None),
        Some(cov) => {
            let mut rng_cov = substream(cfg.seed, rep, channel::COVERAGE);
            let x0_sample = gen_x(cfg.x_generator, &mut rng_cov);
            let x0_values = x0_sample.eval_on(grid);
            let x0_obs =
                match apply_design("x0", grid, &x0_values, cfg.design, &mut rng_cov) {
                    Ok(c) => c,
                    Err(e) => return fail(rep, e),
                };
            let truth = true_mean_on(cfg.model, &x0_sample, grid);
            let es = match eigen_system(&model, DEFAULT_EIGEN_TOL) {
                Ok(es) => es,
                Err(e) => return fail(rep, e),
            };
            let resid = match residual_model(&model, grid) {
                Ok(r) => r,
                Err(e) => return fail(rep, e),
            };
            let band_seed = mix_seed(cfg.seed, rep as u64 + 1);
            let band = match simultaneous_band(
                &model, &es, &resid, &x0_obs, cov.alpha, cov.n_paths, band_seed,
            ) {
                Ok(b) => b,
                Err(e) => return fail(rep, e),
            };
            let sup_err = band
                .center
                .iter()
                .zip(&truth)
                .map(|(c, t)| (c - t).abs())
                .fold(0.0f64, f64::max);
            let covered = sup_err <= band.band_halfwidth;
            let hits = band
                .center
                .iter()
                .zip(&truth)
                .zip(&band.pointwise_halfwidth)
                .filter(|((c, t), hw)| (*c - *t).abs() <= **hw)
                .count();
            (
                Some(covered),
                Some(hits as f64 / grid.len() as f64),
            )
        }
    };

    RepOutcome {
        rep,
        median_ise: Some(median_ise),
        band_covered,
        pointwise_coverage,
        error: None,
    }
}

/// Runs all replications and aggregates.
///
/// Replications run in parallel over independent substreams; a scenario with
/// more than 5% failed replications is itself an error.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let grid = master_grid();
    let reps: Vec<RepOutcome> =
        exec::map_indexed(cfg.n_reps, |rep| run_rep(cfg, &grid, rep));

    let failures = reps.iter().filter(|r| r.error.is_some()).count();
    if failures * 20 > cfg.n_reps {
        let first = reps
            .iter()
            .find_map(|r| r.error.as_deref())
            .unwrap_or("unknown");
        return Err(Error::numerical(format!(
            "{failures}/{} replications failed (> 5%); first error: {first}",
            cfg.n_reps
        )));
    }
    let medians: Vec<f64> = reps.iter().filter_map(|r| r.median_ise).collect();
    if medians.is_empty() {
        return Err(Error::numerical("no successful replications"));
    }
    let band_cov = {
        let vals: Vec<f64> = reps
            .iter()
            .filter_map(|r| r.band_covered.map(|b| if b { 1.0 } else { 0.0 }))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let pw_cov = {
        let vals: Vec<f64> = reps.iter().filter_map(|r| r.pointwise_coverage).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let summary = ScenarioSummary {
        median: median(&medians),
        iqr: quantile(&medians, 0.75) - quantile(&medians, 0.25),
        failures,
        band_coverage: band_cov,
        pointwise_coverage: pw_cov,
    };
    Ok(ScenarioResult {
        config: cfg.clone(),
        reps,
        summary,
    })
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders the one-row summary table (Table-1-shaped columns first).
pub fn render_summary_csv(result: &ScenarioResult) -> String {
    let cfg = &result.config;
    let s = &result.summary;
    let mut out = String::from(
        "model,x_gen,sigma,fit_kernel,design,median,iqr,n_reps,n_train,n_test,seed,failures,band_coverage,pointwise_coverage\n",
    );
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        cfg.model,
        cfg.x_generator,
        cfg.sigma,
        cfg.fit_kernel,
        cfg.design,
        fmt17(s.median),
        fmt17(s.iqr),
        cfg.n_reps,
        cfg.n_train,
        cfg.n_test,
        cfg.seed,
        s.failures,
        s.band_coverage.map(fmt17).unwrap_or_default(),
        s.pointwise_coverage.map(fmt17).unwrap_or_default(),
    ));
    out
}

/// Renders the per-replication table.
pub fn render_reps_csv(result: &ScenarioResult) -> String {
    let mut out = String::from("rep,median_ise,band_covered,pointwise_coverage,error\n");
    for r in &result.reps {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.rep,
            r.median_ise.map(fmt17).unwrap_or_default(),
            r.band_covered.map(|b| b.to_string()).unwrap_or_default(),
            r.pointwise_coverage.map(fmt17).unwrap_or_default(),
            r.error
                .as_deref()
                .map(|e| e.replace([',', '\n'], ";"))
                .unwrap_or_default(),
        ));
    }
    out
}
