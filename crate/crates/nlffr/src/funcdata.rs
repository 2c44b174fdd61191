//! Irregularly observed curves, ridge-regularized trajectory recovery and
//! first-layer inner products.
//!
//! A curve observed at `m` time points is recovered as a kernel expansion
//! whose coefficients solve `(K + eps I) c = values`. Inner products between
//! recovered curves reduce to coefficient quadratic forms against a cross
//! kernel matrix, which is all the regression layer ever needs.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::{cross_gram, time_gram, KernelFamily, TimeKernel};
use crate::linalg::ridge_cholesky;

/// One subject's irregular observations on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedCurve {
    subject_id: String,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ObservedCurve {
    /// Validates and builds a curve. Times must be strictly increasing in
    /// `[0, 1]` (duplicates are rejected), values finite, lengths equal.
    pub fn new(subject_id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let subject_id = subject_id.into();
        if times.is_empty() {
            return Err(Error::validation(format!(
                "curve '{subject_id}': needs at least one observation"
            )));
        }
        if times.len() != values.len() {
            return Err(Error::validation(format!(
                "curve '{subject_id}': {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        for (k, &t) in times.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::validation(format!(
                    "curve '{subject_id}': time {t} at position {k} outside [0, 1]"
                )));
            }
            if k > 0 && t <= times[k - 1] {
                return Err(Error::validation(format!(
                    "curve '{subject_id}': times must be strictly increasing \
                     (t[{}] = {} then t[{}] = {})",
                    k - 1,
                    times[k - 1],
                    k,
                    t
                )));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "curve '{subject_id}': non-finite value {v}"
            )));
        }
        Ok(ObservedCurve {
            subject_id,
            times,
            values,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least one observation by construction
    }
}

/// A smoothed trajectory `t -> sum_k coeffs[k] kernel(t, times[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredCurve {
    times: Vec<f64>,
    coeffs: Vec<f64>,
    kernel: TimeKernel,
    epsilon: f64,
}

impl RecoveredCurve {
    /// Rebuilds a recovered curve from stored parts (model deserialization).
    pub fn from_parts(
        times: Vec<f64>,
        coeffs: Vec<f64>,
        kernel: TimeKernel,
        epsilon: f64,
    ) -> Result<Self> {
        if times.len() != coeffs.len() || times.is_empty() {
            return Err(Error::validation(
                "recovered curve needs matching, nonempty times and coeffs",
            ));
        }
        Ok(RecoveredCurve {
            times,
            coeffs,
            kernel,
            epsilon,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn kernel(&self) -> &TimeKernel {
        &self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Evaluates the kernel expansion at `t`.
    pub fn evaluate(&self, t: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.coeffs)
            .map(|(&tk, &ck)| ck * self.kernel.eval(t, tk))
            .sum()
    }

    pub fn evaluate_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.evaluate(t)).collect()
    }
}

/// Recovers a smooth trajectory by solving `(K + eps I) c = values`.
pub fn recover(curve: &ObservedCurve, kernel: &TimeKernel, epsilon: f64) -> Result<RecoveredCurve> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::config(format!(
            "recovery ridge must be positive and finite, got {epsilon}"
        )));
    }
    let k = time_gram(kernel, curve.times())?;
    let chol = ridge_cholesky(&k, epsilon)?;
    let coeffs = chol.solve(&DVector::from_column_slice(curve.values()));
    Ok(RecoveredCurve {
        times: curve.times().to_vec(),
        coeffs: coeffs.as_slice().to_vec(),
        kernel: *kernel,
        epsilon,
    })
}

/// Recovers every curve with the same kernel and ridge.
pub fn recover_all(
    curves: &[ObservedCurve],
    kernel: &TimeKernel,
    epsilon: f64,
) -> Result<Vec<RecoveredCurve>> {
    exec::try_map_indexed(curves.len(), |i| recover(&curves[i], kernel, epsilon))
}

fn check_same_kernel(a: &RecoveredCurve, b: &RecoveredCurve) -> Result<()> {
    if a.kernel != b.kernel {
        return Err(Error::config(format!(
            "inner product between curves with different kernels: {:?} vs {:?}",
            a.kernel, b.kernel
        )));
    }
    Ok(())
}

/// First-layer inner product of two recovered trajectories,
/// `[a]' K_cross [b]` with `K_cross[k, l] = kernel(a.times[k], b.times[l])`.
pub fn rkhs_inner(a: &RecoveredCurve, b: &RecoveredCurve) -> Result<f64> {
    check_same_kernel(a, b)?;
    let k = cross_gram(&a.kernel, &a.times, &b.times);
    let cb = DVector::from_column_slice(&b.coeffs);
    let u = k * cb;
    Ok(DVector::from_column_slice(&a.coeffs).dot(&u))
}

/// Groups curve indices by identical observation grids.
///
/// Grids are compared by exact bit patterns; groups come back sorted by their
/// smallest member so downstream block traversal is deterministic.
fn group_by_times(curves: &[RecoveredCurve]) -> Vec<Vec<usize>> {
    let mut map: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for (i, c) in curves.iter().enumerate() {
        let key: Vec<u64> = c.times.iter().map(|t| t.to_bits()).collect();
        map.entry(key).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = map.into_values().collect();
    groups.sort_by_key(|g| g[0]);
    groups
}

fn coeff_matrix(curves: &[RecoveredCurve], group: &[usize]) -> DMatrix<f64> {
    let m = curves[group[0]].coeffs.len();
    DMatrix::from_fn(group.len(), m, |r, a| curves[group[r]].coeffs[a])
}

/// Pairwise inner-product matrix of a set of recovered curves.
///
/// Exactly symmetric by construction; positive semidefinite up to rounding
/// because it is the Gram matrix of elements of one Hilbert space.
pub fn rkhs_gram(curves: &[RecoveredCurve]) -> Result<DMatrix<f64>> {
    let n = curves.len();
    if n == 0 {
        return Err(Error::validation("gram of an empty curve set"));
    }
    for c in curves.iter().skip(1) {
        check_same_kernel(&curves[0], c)?;
    }
    let kernel = curves[0].kernel;
    let groups = group_by_times(curves);
    let coeffs: Vec<DMatrix<f64>> = groups.iter().map(|g| coeff_matrix(curves, g)).collect();

    let mut pairs = Vec::new();
    for p in 0..groups.len() {
        for q in p..groups.len() {
            pairs.push((p, q));
        }
    }
    let blocks = exec::map_indexed(pairs.len(), |idx| {
        let (p, q) = pairs[idx];
        let k = cross_gram(&kernel, curves[groups[p][0]].times(), curves[groups[q][0]].times());
        let u = k * coeffs[q].transpose();
        &coeffs[p] * u
    });

    let mut gram = DMatrix::zeros(n, n);
    for (idx, &(p, q)) in pairs.iter().enumerate() {
        let block = &blocks[idx];
        for (r, &i) in groups[p].iter().enumerate() {
            for (s, &j) in groups[q].iter().enumerate() {
                if p == q && r > s {
                    continue;
                }
                gram[(i, j)] = block[(r, s)];
                gram[(j, i)] = block[(r, s)];
            }
        }
    }
    Ok(gram)
}

/// Inner products of one curve against a whole training set.
pub fn rkhs_inner_many(train: &[RecoveredCurve], other: &RecoveredCurve) -> Result<Vec<f64>> {
    for c in train {
        check_same_kernel(c, other)?;
    }
    let groups = group_by_times(train);
    let c_other = DVector::from_column_slice(&other.coeffs);
    let mut out = vec![0.0; train.len()];
    for g in &groups {
        let k = cross_gram(&other.kernel, train[g[0]].times(), other.times());
        let u = k * &c_other;
        for &i in g {
            out[i] = DVector::from_column_slice(&train[i].coeffs).dot(&u);
        }
    }
    Ok(out)
}

/// Result of the smoothing-parameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingChoice {
    pub epsilon: f64,
    /// GRB bandwidth; `None` for BMC where no bandwidth exists.
    pub gamma: Option<f64>,
    pub gcv_score: f64,
}

fn validate_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config(format!("{name} grid must be nonempty")));
    }
    for &v in grid {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::config(format!(
                "{name} grid entries must be positive and finite, got {v}"
            )));
        }
    }
    Ok(())
}

/// Per-curve spectral data reused across the ridge grid.
struct CurveSpectrum {
    group: usize,
    /// Rotated observations `V' values`.
    z: DVector<f64>,
    m: usize,
}

fn smoothing_scores_for_kernel(
    curves: &[ObservedCurve],
    kernel: &TimeKernel,
    eps_grid: &[f64],
) -> Result<Vec<f64>> {
    // One eigendecomposition per distinct observation grid; every ridge value
    // is then O(m) per curve.
    let mut map: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut eigs: Vec<DVector<f64>> = Vec::new();
    let mut vecs: Vec<DMatrix<f64>> = Vec::new();
    let mut spectra = Vec::with_capacity(curves.len());
    for c in curves {
        let key: Vec<u64> = c.times().iter().map(|t| t.to_bits()).collect();
        let group = match map.get(&key) {
            Some(&g) => g,
            None => {
                let k = time_gram(kernel, c.times())?;
                let (vals, v) = crate::linalg::sym_eigen_desc(&k);
                eigs.push(vals);
                vecs.push(v);
                let g = eigs.len() - 1;
                map.insert(key, g);
                g
            }
        };
        let z = vecs[group].tr_mul(&DVector::from_column_slice(c.values()));
        spectra.push(CurveSpectrum {
            group,
            z,
            m: c.len(),
        });
    }

    let mut scores = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let mut total = 0.0;
        for sp in &spectra {
            let lambda = &eigs[sp.group];
            let m = sp.m as f64;
            let mut rss = 0.0;
            let mut tr = 0.0;
            for j in 0..sp.m {
                let l = lambda[j];
                let shrink = eps / (l + eps);
                rss += (shrink * sp.z[j]).powi(2);
                tr += l / (l + eps);
            }
            let denom = 1.0 - tr / m;
            if denom <= 0.0 {
                total = f64::INFINITY;
                break;
            }
            total += (rss / m) / (denom * denom);
        }
        scores.push(total);
    }
    Ok(scores)
}

/// Selects `(epsilon, gamma)` minimizing the summed GCV score
/// `sum_i [m_i^-1 ||values_i - fitted_i||^2] / [1 - trace(S_i)/m_i]^2`
/// over the grid, with ties broken by smaller epsilon then smaller gamma.
pub fn gcv_smoothing(
    curves: &[ObservedCurve],
    family: KernelFamily,
    eps_grid: &[f64],
    gamma_grid: &[f64],
) -> Result<SmoothingChoice> {
    if curves.is_empty() {
        return Err(Error::validation("gcv_smoothing needs at least one curve"));
    }
    validate_grid("epsilon", eps_grid)?;
    let gammas: Vec<Option<f64>> = if family.uses_gamma() {
        validate_grid("gamma", gamma_grid)?;
        gamma_grid.iter().map(|&g| Some(g)).collect()
    } else {
        vec![None]
    };

    let per_gamma: Vec<Vec<f64>> = exec::try_map_indexed(gammas.len(), |gi| {
        let kernel = family.build(gammas[gi])?;
        smoothing_scores_for_kernel(curves, &kernel, eps_grid)
    })?;

    let mut best: Option<SmoothingChoice> = None;
    for (gi, scores) in per_gamma.iter().enumerate() {
        for (ei, &score) in scores.iter().enumerate() {
            let cand = SmoothingChoice {
                epsilon: eps_grid[ei],
                gamma: gammas[gi],
                gcv_score: score,
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    score < b.gcv_score
                        || (score == b.gcv_score
                            && (cand.epsilon < b.epsilon
                                || (cand.epsilon == b.epsilon
                                    && cand.gamma.unwrap_or(0.0) < b.gamma.unwrap_or(0.0))))
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    let choice = best.expect("nonempty grids");
    if !choice.gcv_score.is_finite() {
        return Err(Error::numerical(
            "every smoothing grid point had a degenerate GCV denominator",
        ));
    }
    Ok(choice)
}
