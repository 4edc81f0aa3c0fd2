//! Image-level base Grams between variant features.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::ImageFeature;
use crate::error::{Error, Result};

/// Base Grams `K_(i,j)` over the training set plus the matching test blocks.
///
/// `train[m]` is `n x n`, `test[m]` is `n_test x n` (rows are test images).
/// Pair `(i,j)` is scaled by `1/sqrt(s_i s_j)` where `s_i` is the mean
/// squared norm of variant `i` features over the training images, so every
/// `(i,i)` Gram has unit mean diagonal and the bilinear expansion of a
/// combined feature still holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseKernelSet {
    pub n_variants: usize,
    pub pairs: Vec<(usize, usize)>,
    pub train: Vec<DMatrix<f64>>,
    pub test: Vec<DMatrix<f64>>,
    /// Per-variant mean squared feature norm on the training set.
    pub scales: Vec<f64>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Which block a combination is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Train,
    Test,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `K[x,y] = Phi_i(rows[x])^T Phi_j(cols[y])` without scaling or symmetrization.
pub fn raw_pair_gram(rows: &[&[Vec<f64>]], cols: &[&[Vec<f64>]], i: usize, j: usize) -> DMatrix<f64> {
    let entries: Vec<f64> = (0..rows.len() * cols.len())
        .into_par_iter()
        .map(|k| dot(&rows[k % rows.len()][i], &cols[k / rows.len()][j]))
        .collect();
    DMatrix::from_vec(rows.len(), cols.len(), entries)
}

/// Groups features by image id into `[variant] -> values`.
fn index_features(features: &[ImageFeature]) -> Result<(usize, HashMap<&str, Vec<Vec<f64>>>)> {
    let n_variants = features.iter().map(|f| f.variant + 1).max().unwrap_or(0);
    if n_variants == 0 {
        return Err(Error::Empty("no image features".into()));
    }
    let mut slots: HashMap<&str, Vec<Option<&Vec<f64>>>> = HashMap::new();
    for f in features {
        let s = slots.entry(f.image_id.as_str()).or_insert_with(|| vec![None; n_variants]);
        if s[f.variant].is_some() {
            return Err(Error::Data(format!("duplicate feature for {} variant {}", f.image_id, f.variant)));
        }
        s[f.variant] = Some(&f.values);
    }
    let dim = features[0].values.len();
    let mut out = HashMap::new();
    for (id, s) in slots {
        let mut vals = Vec::with_capacity(n_variants);
        for (v, slot) in s.into_iter().enumerate() {
            let x = slot.ok_or_else(|| Error::Data(format!("image {id} is missing variant {v}")))?;
            if x.len() != dim {
                return Err(Error::Shape(format!("feature of {id} variant {v} has dimension {} != {dim}", x.len())));
            }
            vals.push(x.clone());
        }
        out.insert(id, vals);
    }
    Ok((n_variants, out))
}

/// Builds all `N^2` base Grams for the given split.
pub fn base_grams(features: &[ImageFeature], train_ids: &[String], test_ids: &[String]) -> Result<BaseKernelSet> {
    let (n_variants, by_id) = index_features(features)?;
    let lookup = |ids: &[String]| -> Result<Vec<&[Vec<f64>]>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|v| v.as_slice())
                    .ok_or_else(|| Error::Data(format!("no features for image {id}")))
            })
            .collect()
    };
    let tr = lookup(train_ids)?;
    let te = lookup(test_ids)?;
    if tr.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let scales: Vec<f64> = (0..n_variants)
        .map(|i| {
            let s = tr.iter().map(|x| dot(&x[i], &x[i])).sum::<f64>() / tr.len() as f64;
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();

    let mut pairs = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..n_variants {
        for j in 0..n_variants {
            let f = 1.0 / (scales[i] * scales[j]).sqrt();
            let k = raw_pair_gram(&tr, &tr, i, j);
            let k = if i == j { k * f } else { (&k + k.transpose()) * (0.5 * f) };
            let t = if i == j {
                raw_pair_gram(&te, &tr, i, j) * f
            } else {
                (raw_pair_gram(&te, &tr, i, j) + raw_pair_gram(&te, &tr, j, i)) * (0.5 * f)
            };
            pairs.push((i, j));
            train.push(k);
            test.push(t);
        }
    }
    Ok(BaseKernelSet {
        n_variants,
        pairs,
        train,
        test,
        scales,
        train_ids: train_ids.to_vec(),
        test_ids: test_ids.to_vec(),
    })
}

impl BaseKernelSet {
    /// Wraps precomputed Grams, each already normalized by the caller.
    pub fn from_grams(train: Vec<DMatrix<f64>>, test: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = train.len();
        if m == 0 {
            return Err(Error::Empty("no kernels".into()));
        }
        let n = train[0].nrows();
        if train.iter().any(|k| k.nrows() != n || k.ncols() != n) {
            return Err(Error::Shape("train Grams must all be n x n".into()));
        }
        if test.len() != m || test.iter().any(|k| k.ncols() != n || k.nrows() != test[0].nrows()) {
            return Err(Error::Shape("test blocks must be n_test x n, one per kernel".into()));
        }
        let n_test = test[0].nrows();
        Ok(Self {
            n_variants: m,
            pairs: (0..m).map(|k| (k, k)).collect(),
            train,
            test,
            scales: vec![1.0; m],
            train_ids: (0..n).map(|i| format!("train{i}")).collect(),
            test_ids: (0..n_test).map(|i| format!("test{i}")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_ids.len()
    }

    /// Index of pair `(i,j)`.
    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (i, j))
    }

    /// `sum_m d_m K_m` over the chosen block.
    pub fn combine(&self, weights: &[f64], block: Block) -> Result<DMatrix<f64>> {
        if weights.len() != self.len() {
            return Err(Error::Shape(format!("{} weights for {} kernels", weights.len(), self.len())));
        }
        let mats = match block {
            Block::Train => &self.train,
            Block::Test => &self.test,
        };
        let mut out = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
        for (k, &d) in mats.iter().zip(weights) {
            if d != 0.0 {
                out += k * d;
            }
        }
        Ok(out)
    }

    /// Keeps only the kernels at `indices`, in that order.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.len()) {
            return Err(Error::Parameter(format!("invalid kernel subset {indices:?}")));
        }
        Ok(Self {
            pairs: indices.iter().map(|&i| self.pairs[i]).collect(),
            train: indices.iter().map(|&i| self.train[i].clone()).collect(),
            test: indices.iter().map(|&i| self.test[i].clone()).collect(),
            ..self.clone()
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io_path(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io_path(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
