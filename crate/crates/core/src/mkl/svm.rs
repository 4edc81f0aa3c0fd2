//! Binary soft-margin SVM dual solved by SMO.
//!
//! Minimizes `f(a) = 1/2 a^T Q a - 1^T a` with `Q_ij = y_i y_j K_ij`,
//! `0 <= a <= C` and `y^T a = 0`, using second-order working-set selection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

/// Relative tolerance of the PSD check before jitter is applied.
pub const SVM_INDEFINITE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// KKT tolerance on the maximal violating pair.
    pub eps: f64,
    /// Termination also requires `gap <= max_rel_gap * |dual|`; eps is
    /// tightened until it holds.
    pub max_rel_gap: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            eps: 1e-5,
            max_rel_gap: 1e-4,
            max_iter: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// `sum a - 1/2 a^T Q a` at the solution.
    pub dual_objective: f64,
    pub primal_objective: f64,
    pub iterations: usize,
    /// Diagonal jitter added to make `K` PSD, 0 if none.
    pub jitter: f64,
}

impl SvmSolution {
    pub fn duality_gap(&self) -> f64 {
        self.primal_objective - self.dual_objective
    }

    /// `sum_i a_i y_i K(x, x_i) + b` given the kernel row `k_x`.
    pub fn decision(&self, labels: &[f64], k_x: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(labels)
            .zip(k_x)
            .map(|((a, y), k)| a * y * k)
            .sum::<f64>()
            + self.bias
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(k: &DMatrix<f64>) -> f64 {
    k.clone().symmetric_eigen().eigenvalues.min()
}

/// Adds `|lambda_min| + 1e-10 * trace` to the diagonal when
/// `lambda_min < -rel_tol * trace`. Returns the jitter applied.
pub fn repair_psd(k: &mut DMatrix<f64>, rel_tol: f64) -> f64 {
    let trace = k.trace().abs().max(f64::MIN_POSITIVE);
    let lmin = min_eigenvalue(k);
    if lmin >= -rel_tol * trace {
        return 0.0;
    }
    let jitter = -lmin + 1e-10 * trace;
    for i in 0..k.nrows() {
        k[(i, i)] += jitter;
    }
    log::warn!("kernel indefinite (min eigenvalue {lmin:.3e}, trace {trace:.3e}); added jitter {jitter:.3e}");
    jitter
}

struct Smo<'a> {
    k: &'a DMatrix<f64>,
    y: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Smo<'a> {
    #[inline]
    fn q(&self, i: usize, j: usize) -> f64 {
        self.y[i] * self.y[j] * self.k[(i, j)]
    }

    fn in_up(&self, t: usize) -> bool {
        (self.y[t] > 0.0 && self.alpha[t] < self.c) || (self.y[t] < 0.0 && self.alpha[t] > 0.0)
    }

    fn in_low(&self, t: usize) -> bool {
        (self.y[t] > 0.0 && self.alpha[t] > 0.0) || (self.y[t] < 0.0 && self.alpha[t] < self.c)
    }

    /// Second-order working set. `None` when the max violation is below eps.
    fn select(&self, eps: f64) -> Option<(usize, usize)> {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let i = i_sel?;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let v = self.y[t] * self.grad[t];
            if v >= gmax2 {
                gmax2 = v;
            }
            let b = gmax + v;
            if b > 0.0 {
                let a = self.k[(i, i)] + self.k[(t, t)] - 2.0 * self.k[(i, t)];
                let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < eps {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let qij = self.q(i, j);
        let (qii, qjj) = (self.k[(i, i)], self.k[(j, j)]);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.y.len() {
            self.grad[t] += self.q(t, i) * di + self.q(t, j) * dj;
        }
    }

    fn bias(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.grad[t];
            let at_upper = self.alpha[t] >= self.c;
            let at_lower = self.alpha[t] <= 0.0;
            if at_upper {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if at_lower {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }

    fn objectives(&self, bias: f64) -> (f64, f64) {
        let n = self.y.len();
        // grad = Q a - 1, so a^T Q a = a^T (grad + 1)
        let quad: f64 = (0..n).map(|t| self.alpha[t] * (self.grad[t] + 1.0)).sum();
        let sum_a: f64 = self.alpha.iter().sum();
        let dual = sum_a - 0.5 * quad;
        let hinge: f64 = (0..n)
            .map(|t| (1.0 - (self.grad[t] + 1.0 + self.y[t] * bias)).max(0.0))
            .sum();
        let primal = 0.5 * quad + self.c * hinge;
        (dual, primal)
    }
}

/// Trains a binary SVM on a precomputed kernel.
///
/// `labels` must be `+1`/`-1` with both present. An indefinite kernel
/// (beyond `-1e-6 * trace`) gets diagonal jitter and a warning.
pub fn svm_train(k: &DMatrix<f64>, labels: &[f64], params: &SvmParams) -> Result<SvmSolution> {
    let n = labels.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::Shape(format!(
            "kernel is {}x{} for {n} labels",
            k.nrows(),
            k.ncols()
        )));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::Parameter("SVM labels must be +1 or -1".into()));
    }
    if !labels.contains(&1.0) || !labels.contains(&-1.0) {
        return Err(Error::Data("SVM needs at least one example of each class".into()));
    }
    if !(params.c > 0.0) {
        return Err(Error::Parameter(format!("C must be > 0, got {}", params.c)));
    }
    let asym = (k - k.transpose()).abs().max();
    if asym > 1e-9 * (1.0 + k.abs().max()) {
        return Err(Error::Shape(format!("kernel not symmetric (max asymmetry {asym:.3e})")));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("kernel has non-finite entries".into()));
    }
    let mut kk = k.clone();
    let jitter = repair_psd(&mut kk, SVM_INDEFINITE_TOL);
    if jitter > 0.0 && min_eigenvalue(&kk) < -SVM_INDEFINITE_TOL * kk.trace().abs() {
        return Err(Error::Solver("kernel still indefinite after jitter".into()));
    }

    let mut smo = Smo {
        k: &kk,
        y: labels,
        c: params.c,
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
    };
    let mut eps = params.eps;
    let mut iterations = 0;
    loop {
        while let Some((i, j)) = smo.select(eps) {
            smo.update(i, j);
            iterations += 1;
            if iterations >= params.max_iter {
                return Err(Error::Solver(format!(
                    "SMO did not converge in {} iterations",
                    params.max_iter
                )));
            }
        }
        let bias = smo.bias();
        let (dual, primal) = smo.objectives(bias);
        if primal - dual <= params.max_rel_gap * dual.abs() || eps < 1e-13 {
            return Ok(SvmSolution {
                alpha: smo.alpha,
                bias,
                dual_objective: dual,
                primal_objective: primal,
                iterations,
                jitter,
            });
        }
        eps /= 10.0;
    }
}
