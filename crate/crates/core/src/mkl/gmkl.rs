//! Generalized MKL with non-negative, l2-regularized kernel weights.
//!
//! Minimizes `T(d) = sum_c W_c(d) + lambda/2 |d|^2` over `d >= 0`, where
//! `W_c` is the optimal one-vs-rest SVM dual for class `c` under
//! `K(d) = sum_m d_m K_m`. The weights are shared by all classes.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grams::{BaseKernelSet, Block};
use super::svm::{repair_psd, svm_train, SvmParams, SvmSolution};
use crate::error::{Error, Result};

/// PSD tolerance applied to the combined kernel before the inner solves.
pub const COMBINED_PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmklConfig {
    pub c: f64,
    pub lambda_d: f64,
    pub max_outer: usize,
    /// Stop when `|T_new - T| < rel_tol * |T|`.
    pub rel_tol: f64,
    pub max_halvings: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub svm_eps: f64,
}

impl Default for GmklConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            lambda_d: 1e-2,
            max_outer: 50,
            rel_tol: 1e-5,
            max_halvings: 20,
            armijo: 1e-4,
            svm_eps: 1e-5,
        }
    }
}

impl GmklConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Parameter(format!("C must be positive, got {}", self.c)));
        }
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return Err(Error::Parameter(format!("lambda_d must be >= 0, got {}", self.lambda_d)));
        }
        if !(self.svm_eps > 0.0) || !(self.rel_tol >= 0.0) {
            return Err(Error::Parameter("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn svm(&self) -> SvmParams {
        SvmParams {
            c: self.c,
            eps: self.svm_eps,
            ..SvmParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MklStatus {
    Converged,
    MaxIterations,
    /// The line search made no progress after the allowed halvings.
    LineSearchStalled,
    /// Weights were fixed by the caller.
    Fixed,
}

/// One-vs-rest classifier of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub alpha: Vec<f64>,
    /// `+1` for the class, `-1` for the rest.
    pub labels: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MklModel {
    pub weights: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub classes: Vec<usize>,
    pub class_models: Vec<ClassModel>,
    pub c: f64,
    pub lambda_d: f64,
    /// Objective value after every accepted outer step, starting at `d0`.
    pub trace: Vec<f64>,
    pub weight_trace: Vec<Vec<f64>>,
    pub status: MklStatus,
    /// Normalization factors of the Grams the model was trained on.
    pub scales: Vec<f64>,
    pub train_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// `scores[x][c]` in the order of `MklModel::classes`.
    pub scores: Vec<Vec<f64>>,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
    solutions: Vec<SvmSolution>,
}

fn one_vs_rest(labels: &[usize]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Data(format!("need at least 2 classes, got {}", classes.len())));
    }
    let ys = classes
        .iter()
        .map(|&c| labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect())
        .collect();
    Ok((classes, ys))
}

fn evaluate(ks: &BaseKernelSet, ys: &[Vec<f64>], d: &[f64], cfg: &GmklConfig, lambda_d: f64) -> Result<Eval> {
    let mut k = ks.combine(d, Block::Train)?;
    repair_psd(&mut k, COMBINED_PSD_TOL);
    let params = cfg.svm();
    let solutions = ys
        .par_iter()
        .map(|y| svm_train(&k, y, &params))
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.5 * lambda_d * d.iter().map(|x| x * x).sum::<f64>();
    let mut grad: Vec<f64> = d.iter().map(|x| lambda_d * x).collect();
    for (sol, y) in solutions.iter().zip(ys) {
        value += sol.dual_objective;
        let ay: Vec<f64> = sol.alpha.iter().zip(y).map(|(a, y)| a * y).collect();
        for (g, km) in grad.iter_mut().zip(&ks.train) {
            *g -= 0.5 * quad_form(km, &ay);
        }
    }
    Ok(Eval { value, grad, solutions })
}

fn quad_form(k: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for j in 0..n {
        if v[j] == 0.0 {
            continue;
        }
        let col = k.column(j);
        let mut t = 0.0;
        for i in 0..n {
            t += col[i] * v[i];
        }
        s += t * v[j];
    }
    s
}

/// `T(d)` and its gradient, with the SVM duals re-solved at `d`.
pub fn objective(ks: &BaseKernelSet, labels: &[usize], d: &[f64], cfg: &GmklConfig) -> Result<(f64, Vec<f64>)> {
    let (_, ys) = one_vs_rest(labels)?;
    let e = evaluate(ks, &ys, d, cfg, cfg.lambda_d)?;
    Ok((e.value, e.grad))
}

fn check_inputs(ks: &BaseKernelSet, labels: &[usize], cfg: &GmklConfig) -> Result<()> {
    cfg.validate()?;
    if ks.is_empty() {
        return Err(Error::Empty("no base kernels".into()));
    }
    if labels.len() != ks.n_train() {
        return Err(Error::Shape(format!("{} labels for {} training images", labels.len(), ks.n_train())));
    }
    Ok(())
}

fn build_model(ks: &BaseKernelSet, classes: Vec<usize>, ys: Vec<Vec<f64>>, e: Eval, d: Vec<f64>, cfg: &GmklConfig) -> MklModel {
    MklModel {
        class_models: e
            .solutions
            .into_iter()
            .zip(ys)
            .map(|(s, labels)| ClassModel { alpha: s.alpha, labels, bias: s.bias })
            .collect(),
        weights: d,
        pairs: ks.pairs.clone(),
        classes,
        c: cfg.c,
        lambda_d: cfg.lambda_d,
        trace: Vec::new(),
        weight_trace: Vec::new(),
        status: MklStatus::Fixed,
        scales: ks.scales.clone(),
        train_ids: ks.train_ids.clone(),
    }
}

/// Trains one-vs-rest SVMs on `sum_m d_m K_m` with `d` held fixed.
pub fn train_fixed(ks: &BaseKernelSet, labels: &[usize], weights: &[f64], cfg: &GmklConfig) -> Result<MklModel> {
    check_inputs(ks, labels, cfg)?;
    if weights.len() != ks.len() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Parameter(format!("need {} non-negative weights", ks.len())));
    }
    let (classes, ys) = one_vs_rest(labels)?;
    let e = evaluate(ks, &ys, weights, cfg, 0.0)?;
    let value = e.value;
    let mut model = build_model(ks, classes, ys, e, weights.to_vec(), cfg);
    model.trace = vec![value];
    model.weight_trace = vec![weights.to_vec()];
    Ok(model)
}

/// Learns `d` by projected gradient descent with Armijo backtracking,
/// starting from `d_m = 1/M`.
pub fn gmkl_train(ks: &BaseKernelSet, labels: &[usize], cfg: &GmklConfig) -> Result<MklModel> {
    check_inputs(ks, labels, cfg)?;
    let (classes, ys) = one_vs_rest(labels)?;
    let m = ks.len();
    let mut d = vec![1.0 / m as f64; m];
    let mut cur = evaluate(ks, &ys, &d, cfg, cfg.lambda_d)?;
    let mut trace = vec![cur.value];
    let mut weight_trace = vec![d.clone()];
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut step = norm(&d) / norm(&cur.grad).max(f64::MIN_POSITIVE);
    let mut status = MklStatus::MaxIterations;

    for outer in 0..cfg.max_outer {
        let mut accepted = None;
        let mut stationary = false;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<f64> = d.iter().zip(&cur.grad).map(|(x, g)| (x - step * g).max(0.0)).collect();
            let decrease: f64 = cur.grad.iter().zip(cand.iter().zip(&d)).map(|(g, (c, x))| g * (c - x)).sum();
            if cand == d {
                stationary = true;
                break;
            }
            let next = evaluate(ks, &ys, &cand, cfg, cfg.lambda_d)?;
            if next.value <= cur.value + cfg.armijo * decrease {
                accepted = Some((cand, next));
                break;
            }
            step *= 0.5;
        }
        if stationary {
            status = MklStatus::Converged;
            break;
        }
        let Some((cand, next)) = accepted else {
            log::warn!("GMKL line search stalled at outer iteration {outer}");
            status = MklStatus::LineSearchStalled;
            break;
        };
        let change = (cur.value - next.value).abs();
        let scale = cur.value.abs();
        d = cand;
        cur = next;
        trace.push(cur.value);
        weight_trace.push(d.clone());
        log::debug!("GMKL iteration {outer}: T = {:.8e}", cur.value);
        if change < cfg.rel_tol * scale {
            status = MklStatus::Converged;
            break;
        }
        step *= 2.0;
    }
    let mut model = build_model(ks, classes, ys, cur, d, cfg);
    model.trace = trace;
    model.weight_trace = weight_trace;
    model.status = status;
    Ok(model)
}

fn scales_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()))
}

impl MklModel {
    /// Scores every test image and picks the best class (lowest index on ties).
    pub fn predict(&self, ks: &BaseKernelSet) -> Result<Prediction> {
        if ks.pairs != self.pairs || !scales_match(&ks.scales, &self.scales) || ks.train_ids != self.train_ids {
            return Err(Error::StaleArtifact(
                "kernel set was built with different variant pairs, normalization or training images".into(),
            ));
        }
        let kt = ks.combine(&self.weights, Block::Test)?;
        let mut labels = Vec::with_capacity(kt.nrows());
        let mut scores = Vec::with_capacity(kt.nrows());
        for x in 0..kt.nrows() {
            let row: Vec<f64> = kt.row(x).iter().copied().collect();
            let s: Vec<f64> = self
                .class_models
                .iter()
                .map(|cm| {
                    cm.alpha
                        .iter()
                        .zip(&cm.labels)
                        .zip(&row)
                        .map(|((a, y), k)| a * y * k)
                        .sum::<f64>()
                        + cm.bias
                })
                .collect();
            let mut best = 0;
            for c in 1..s.len() {
                if s[c] > s[best] {
                    best = c;
                }
            }
            labels.push(self.classes[best]);
            scores.push(s);
        }
        Ok(Prediction { labels, scores })
    }

    /// Short content hash of the training configuration.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{:?}|{}|{}|{:?}", self.pairs, self.classes, self.c, self.lambda_d, self.scales));
        hex::encode(&h.finalize()[..8])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io_path(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io_path(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Fraction of predictions equal to the truth.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}
