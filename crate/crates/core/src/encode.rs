//! Codebook construction and image-level encoding.
//!
//! EMK features use the codebook-projected map
//! `phi(x) = G^{-1/2} [k_e(x, v_1), ..., k_e(x, v_D)]` with a Gaussian
//! patch kernel `k_e`, mean-pooled over an image's descriptors, so that
//! `Phi(I)^T Phi(J)` is the average pairwise approximated patch kernel.
//! Bag-of-words is the hard-assignment histogram over the same codebook.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::TensorBlob;
use crate::kdes::{inverse_sqrt, DescriptorSet, PatchDescriptor};

/// Eigenvalue floor for `G^{-1/2}`.
pub const PROJECTION_EIG_FLOOR: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
    pub gamma_e: f64,
    /// `G^{-1/2}`, present once [`build_projection`] ran.
    pub projection: Option<DMatrix<f64>>,
    /// Sum of squared distances to the assigned centroid at termination.
    pub inertia: f64,
    pub iterations: usize,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }

    pub fn to_blob(&self) -> Result<TensorBlob> {
        let flat: Vec<f64> = self.centroids.iter().flatten().copied().collect();
        Ok(TensorBlob::from_f64(vec![self.size(), self.dim()], &flat)?
            .with_meta("kind", "codebook")
            .with_meta("gamma_e", self.gamma_e)
            .with_meta("size", self.size()))
    }

    /// Loads centroids and rebuilds the projection from the stored `gamma_e`.
    pub fn from_blob(blob: &TensorBlob) -> Result<Self> {
        if blob.shape.len() != 2 {
            return Err(Error::Format("codebook blob must be rank 2".into()));
        }
        let gamma_e: f64 = blob
            .meta("gamma_e")?
            .parse()
            .map_err(|_| Error::Format("bad gamma_e in codebook metadata".into()))?;
        let dim = blob.shape[1];
        let values = blob.to_f64();
        let centroids = values.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        let cb = Codebook {
            centroids,
            gamma_e,
            projection: None,
            inertia: 0.0,
            iterations: 0,
        };
        build_projection(cb, gamma_e)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, &samples[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on a zero-weight tail
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // fewer distinct points than k: take unused indices in order
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, &samples[next]));
        }
    }
    chosen.into_iter().map(|i| samples[i].clone()).collect()
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Stops when no centroid moves more than [`KMEANS_TOL`] or after
/// [`KMEANS_MAX_ITER`] iterations. Empty clusters are re-seeded with the
/// sample farthest from its current centroid.
pub fn kmeans(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<Codebook> {
    if k == 0 {
        return Err(Error::Parameter("codebook size must be >= 1".into()));
    }
    if samples.len() < k {
        return Err(Error::Empty(format!(
            "{} samples cannot seed {k} clusters",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("k-means samples differ in dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(samples, k, &mut rng);
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        let assign: Vec<(usize, f64)> = samples.par_iter().map(|s| nearest(&centroids, s)).collect();

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (s, &(c, _)) in samples.iter().zip(&assign) {
            counts[c] += 1;
            for (acc, v) in sums[c].iter_mut().zip(s) {
                *acc += v;
            }
        }
        let mut taken = Vec::new();
        let mut moved: f64 = 0.0;
        for c in 0..k {
            let new = if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                sums[c].iter().map(|v| v * inv).collect::<Vec<_>>()
            } else {
                let far = (0..samples.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| assign[a].1.total_cmp(&assign[b].1).then(b.cmp(&a)))
                    .expect("samples >= k");
                taken.push(far);
                samples[far].clone()
            };
            moved = moved.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    let inertia = samples.iter().map(|s| nearest(&centroids, s).1).sum();
    Ok(Codebook {
        centroids,
        gamma_e: 0.0,
        projection: None,
        inertia,
        iterations,
    })
}

/// Computes `G^{-1/2}` for `G_ij = exp(-gamma_e |v_i - v_j|^2)`.
pub fn build_projection(mut cb: Codebook, gamma_e: f64) -> Result<Codebook> {
    if !(gamma_e > 0.0) {
        return Err(Error::Parameter(format!("gamma_e must be > 0, got {gamma_e}")));
    }
    let g = codeword_gram(&cb.centroids, gamma_e);
    cb.projection = Some(inverse_sqrt(&g, PROJECTION_EIG_FLOOR));
    cb.gamma_e = gamma_e;
    Ok(cb)
}

pub fn codeword_gram(centroids: &[Vec<f64>], gamma_e: f64) -> DMatrix<f64> {
    let d = centroids.len();
    DMatrix::from_fn(d, d, |i, j| (-gamma_e * sq_dist(&centroids[i], &centroids[j])).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Emk,
    Bow,
}

/// Image-level feature of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeature {
    pub image_id: String,
    pub variant: usize,
    pub values: Vec<f64>,
    pub encoder: Encoder,
}

/// Descriptors sorted by grid position so pooled sums have a fixed order.
fn sorted_descriptors(ds: &DescriptorSet, dim: usize) -> Result<Vec<&PatchDescriptor>> {
    if ds.is_empty() {
        return Err(Error::Empty(format!("descriptor set of {} is empty", ds.image_id)));
    }
    if ds.descriptors.iter().any(|d| d.values.len() != dim) {
        return Err(Error::Shape(format!(
            "descriptor dimension {} does not match codebook dimension {dim}",
            ds.dim()
        )));
    }
    let mut v: Vec<&PatchDescriptor> = ds.descriptors.iter().collect();
    v.sort_by_key(|d| (d.grid_pos.1, d.grid_pos.0));
    Ok(v)
}

/// `k_e(x, v_i)` for every codeword.
pub fn codeword_kernel(cb: &Codebook, x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        cb.size(),
        cb.centroids.iter().map(|c| (-cb.gamma_e * sq_dist(c, x)).exp()),
    )
}

/// Projected feature `phi(x)` of a single descriptor.
pub fn emk_descriptor_feature(cb: &Codebook, x: &[f64]) -> Result<DVector<f64>> {
    let proj = cb
        .projection
        .as_ref()
        .ok_or_else(|| Error::Parameter("codebook projection not built".into()))?;
    Ok(proj * codeword_kernel(cb, x))
}

/// Mean-pooled EMK feature over all descriptors of one image variant.
pub fn emk_encode(ds: &DescriptorSet, cb: &Codebook) -> Result<ImageFeature> {
    let proj = cb
        .projection
        .as_ref()
        .ok_or_else(|| Error::Parameter("codebook projection not built".into()))?;
    let descs = sorted_descriptors(ds, cb.dim())?;
    let mut mean = DVector::zeros(cb.size());
    for d in &descs {
        mean += codeword_kernel(cb, &d.values);
    }
    mean /= descs.len() as f64;
    Ok(ImageFeature {
        image_id: ds.image_id.clone(),
        variant: ds.variant,
        values: (proj * mean).iter().copied().collect(),
        encoder: Encoder::Emk,
    })
}

/// EMK pooled over a 1x1 + 2x2 spatial pyramid (5 D-dimensional blocks).
pub fn emk_encode_pyramid(ds: &DescriptorSet, cb: &Codebook) -> Result<ImageFeature> {
    let global = emk_encode(ds, cb)?;
    let proj = cb.projection.as_ref().expect("checked by emk_encode");
    let (cols, rows) = ds.grid;
    let mut values = global.values;
    for qy in 0..2 {
        for qx in 0..2 {
            let mut mean = DVector::zeros(cb.size());
            let mut n = 0usize;
            for d in sorted_descriptors(ds, cb.dim())? {
                let (cx, cy) = d.grid_pos;
                if (2 * cx >= cols) as usize == qx && (2 * cy >= rows) as usize == qy {
                    mean += codeword_kernel(cb, &d.values);
                    n += 1;
                }
            }
            if n > 0 {
                mean /= n as f64;
            }
            values.extend((proj * mean).iter());
        }
    }
    Ok(ImageFeature {
        image_id: ds.image_id.clone(),
        variant: ds.variant,
        values,
        encoder: Encoder::Emk,
    })
}

/// Hard-assignment histogram normalized to sum 1.
pub fn bow_encode(ds: &DescriptorSet, cb: &Codebook) -> Result<ImageFeature> {
    let descs = sorted_descriptors(ds, cb.dim())?;
    let mut hist = vec![0.0; cb.size()];
    for d in &descs {
        hist[cb.nearest(&d.values)] += 1.0;
    }
    let n = descs.len() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    Ok(ImageFeature {
        image_id: ds.image_id.clone(),
        variant: ds.variant,
        values: hist,
        encoder: Encoder::Bow,
    })
}

/// A descriptor drawn for codebook training, tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSample {
    pub image_id: String,
    pub variant: usize,
    pub grid_pos: (usize, usize),
    pub values: Vec<f64>,
}

/// Draws `per_variant` descriptors of every variant from the training sets.
///
/// `train` holds, per training image, one [`DescriptorSet`] per variant.
/// When a variant pool is smaller than `per_variant`, every variant
/// contributes the size of the smallest pool so counts stay equal.
pub fn sample_for_codebook(train: &[Vec<DescriptorSet>], per_variant: usize, seed: u64) -> Result<Vec<CodebookSample>> {
    let n_variants = train
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Empty("no training images for the codebook".into()))?;
    let mut pools: Vec<Vec<(&DescriptorSet, &PatchDescriptor)>> = vec![Vec::new(); n_variants];
    for sets in train {
        if sets.len() != n_variants {
            return Err(Error::Shape("training images have different variant counts".into()));
        }
        for (v, set) in sets.iter().enumerate() {
            if set.variant != v {
                return Err(Error::Shape(format!(
                    "descriptor set of {} out of variant order",
                    set.image_id
                )));
            }
            pools[v].extend(set.descriptors.iter().map(|d| (set, d)));
        }
    }
    let take = pools.iter().map(Vec::len).min().unwrap_or(0).min(per_variant);
    if take == 0 {
        return Err(Error::Empty("no descriptors to sample for the codebook".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(take * n_variants);
    for pool in &pools {
        let mut idx = sample(&mut rng, pool.len(), take).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| {
            let (set, d) = pool[i];
            CodebookSample {
                image_id: set.image_id.clone(),
                variant: set.variant,
                grid_pos: d.grid_pos,
                values: d.values.clone(),
            }
        }));
    }
    Ok(out)
}

/// Fails if any codebook sample comes from an image outside `train_ids`.
pub fn check_train_only(samples: &[CodebookSample], train_ids: &[String]) -> Result<()> {
    let allowed: std::collections::HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    match samples.iter().find(|s| !allowed.contains(s.image_id.as_str())) {
        Some(s) => Err(Error::Data(format!(
            "codebook sample drawn from non-training image {}",
            s.image_id
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: &str, variant: usize, vals: &[Vec<f64>]) -> DescriptorSet {
        let cols = vals.len();
        DescriptorSet {
            image_id: id.into(),
            variant,
            grid: (cols, 1),
            descriptors: vals
                .iter()
                .enumerate()
                .map(|(i, v)| PatchDescriptor {
                    values: v.clone(),
                    grid_pos: (i, 0),
                })
                .collect(),
        }
    }

    fn rand_vecs(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| (rng.gen::<f64>() - 0.5) * scale).collect())
            .collect()
    }

    #[test]
    fn kmeans_on_exactly_k_points() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 5.0], vec![-3.0, 2.0], vec![7.0, 7.0]];
        let cb = kmeans(&pts, 4, 3).unwrap();
        assert_eq!(cb.inertia, 0.0);
        let mut got = cb.centroids.clone();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut want = pts.clone();
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, want);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for centre in [-10.0, 10.0] {
            for _ in 0..50 {
                pts.push(vec![centre + rng.gen::<f64>() - 0.5, centre + rng.gen::<f64>() - 0.5]);
            }
        }
        let cb = kmeans(&pts, 2, 9).unwrap();
        let mut signs: Vec<bool> = cb.centroids.iter().map(|c| c[0] > 0.0).collect();
        signs.sort();
        assert_eq!(signs, vec![false, true]);
        for c in &cb.centroids {
            let centre = if c[0] > 0.0 { 10.0 } else { -10.0 };
            assert!(c.iter().all(|v| (v - centre).abs() <= 0.5));
        }
    }

    #[test]
    fn kmeans_deterministic_and_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = rand_vecs(&mut rng, 200, 5, 4.0);
        let a = kmeans(&pts, 12, 77).unwrap();
        let b = kmeans(&pts, 12, 77).unwrap();
        for (x, y) in a.centroids.iter().flatten().zip(b.centroids.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert!(a.iterations <= KMEANS_MAX_ITER);
        assert!(kmeans(&pts[..3], 4, 0).is_err());
        assert!(kmeans(&[vec![0.0], vec![1.0, 2.0]], 1, 0).is_err());
    }

    #[test]
    fn kmeans_handles_duplicates() {
        let pts = vec![vec![1.0]; 6];
        let cb = kmeans(&pts, 3, 0).unwrap();
        assert_eq!(cb.size(), 3);
        assert_eq!(cb.inertia, 0.0);
    }

    #[test]
    fn projection_examples() {
        let cb = build_projection(kmeans(&[vec![0.3, 0.4]], 1, 0).unwrap(), 1.0).unwrap();
        assert!((cb.projection.unwrap()[(0, 0)] - 1.0).abs() < 1e-12);

        let far = vec![vec![0.0, 0.0], vec![100.0, 0.0]];
        let cb = build_projection(kmeans(&far, 2, 0).unwrap(), 1.0).unwrap();
        let p = cb.projection.unwrap();
        assert!((p - DMatrix::identity(2, 2)).abs().max() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = rand_vecs(&mut rng, 5, 3, 2.0);
        let cb = build_projection(kmeans(&pts, 5, 0).unwrap(), 0.7).unwrap();
        let g = codeword_gram(&cb.centroids, 0.7);
        let p = cb.projection.as_ref().unwrap();
        let should_be_id = p * &g * p;
        assert!((should_be_id - DMatrix::identity(5, 5)).abs().max() < 1e-6);
        assert!(build_projection(cb, 0.0).is_err());
    }

    fn small_codebook(rng: &mut ChaCha8Rng) -> Codebook {
        let pts = rand_vecs(rng, 40, 3, 2.0);
        build_projection(kmeans(&pts, 6, 5).unwrap(), 0.8).unwrap()
    }

    #[test]
    fn emk_examples() {
        let cb = build_projection(kmeans(&[vec![0.2, 0.1]], 1, 0).unwrap(), 1.0).unwrap();
        let f = emk_encode(&set("a", 0, &[vec![0.2, 0.1]]), &cb).unwrap();
        assert!((f.values[0] - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cb = small_codebook(&mut rng);
        let xs = rand_vecs(&mut rng, 7, 3, 2.0);
        let mut doubled = xs.clone();
        doubled.extend(xs.iter().cloned());
        let a = emk_encode(&set("x", 0, &xs), &cb).unwrap();
        let b = emk_encode(&set("x", 0, &doubled), &cb).unwrap();
        for (p, q) in a.values.iter().zip(&b.values) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn emk_inner_product_is_mean_pairwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cb = small_codebook(&mut rng);
        let xs = rand_vecs(&mut rng, 9, 3, 2.0);
        let ys = rand_vecs(&mut rng, 5, 3, 2.0);
        let fx = emk_encode(&set("x", 0, &xs), &cb).unwrap();
        let fy = emk_encode(&set("y", 0, &ys), &cb).unwrap();
        let lhs: f64 = fx.values.iter().zip(&fy.values).map(|(a, b)| a * b).sum();
        let mut rhs = 0.0;
        for x in &xs {
            let px = emk_descriptor_feature(&cb, x).unwrap();
            for y in &ys {
                rhs += px.dot(&emk_descriptor_feature(&cb, y).unwrap());
            }
        }
        rhs /= (xs.len() * ys.len()) as f64;
        assert!((lhs - rhs).abs() < 1e-10);
        let self_k: f64 = fx.values.iter().map(|v| v * v).sum();
        assert!(self_k >= 0.0);
    }

    #[test]
    fn encoders_reject_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cb = small_codebook(&mut rng);
        let empty = set("e", 0, &[]);
        assert!(matches!(emk_encode(&empty, &cb), Err(Error::Empty(_))));
        assert!(matches!(bow_encode(&empty, &cb), Err(Error::Empty(_))));
        let wrong = set("w", 0, &[vec![1.0, 2.0]]);
        assert!(matches!(emk_encode(&wrong, &cb), Err(Error::Shape(_))));
        let mut no_proj = cb.clone();
        no_proj.projection = None;
        assert!(emk_encode(&set("x", 0, &[vec![0.0; 3]]), &no_proj).is_err());
    }

    #[test]
    fn bow_examples() {
        let cb = Codebook {
            centroids: vec![vec![0.0], vec![2.0], vec![10.0], vec![20.0]],
            gamma_e: 1.0,
            projection: None,
            inertia: 0.0,
            iterations: 0,
        };
        let f = bow_encode(&set("a", 0, &[vec![19.0], vec![21.0], vec![20.5]]), &cb).unwrap();
        assert_eq!(f.values, vec![0.0, 0.0, 0.0, 1.0]);
        let f = bow_encode(&set("b", 0, &[vec![1.0]]), &cb).unwrap();
        assert_eq!(f.values, vec![1.0, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cb = small_codebook(&mut rng);
        let xs = rand_vecs(&mut rng, 30, 3, 2.0);
        let f = bow_encode(&set("c", 0, &xs), &cb).unwrap();
        let mut want = vec![0.0; cb.size()];
        for x in &xs {
            let mut best = 0;
            for j in 1..cb.size() {
                let dj: f64 = x.iter().zip(&cb.centroids[j]).map(|(a, b)| (a - b).powi(2)).sum();
                let db: f64 = x.iter().zip(&cb.centroids[best]).map(|(a, b)| (a - b).powi(2)).sum();
                if dj < db {
                    best = j;
                }
            }
            want[best] += 1.0 / 30.0;
        }
        for (a, b) in f.values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((f.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encoding_ignores_descriptor_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cb = small_codebook(&mut rng);
        let xs = rand_vecs(&mut rng, 12, 3, 2.0);
        let a = set("x", 0, &xs);
        let mut b = a.clone();
        b.descriptors.reverse();
        assert_eq!(emk_encode(&a, &cb).unwrap(), emk_encode(&b, &cb).unwrap());
        assert_eq!(bow_encode(&a, &cb).unwrap(), bow_encode(&b, &cb).unwrap());
    }

    #[test]
    fn pyramid_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cb = small_codebook(&mut rng);
        let mut s = set("p", 0, &rand_vecs(&mut rng, 9, 3, 2.0));
        s.grid = (3, 3);
        for (k, d) in s.descriptors.iter_mut().enumerate() {
            d.grid_pos = (k % 3, k / 3);
        }
        let f = emk_encode_pyramid(&s, &cb).unwrap();
        assert_eq!(f.values.len(), 5 * cb.size());
        assert_eq!(&f.values[..cb.size()], &emk_encode(&s, &cb).unwrap().values[..]);
    }

    #[test]
    fn codebook_sampling_parity_and_provenance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let train: Vec<Vec<DescriptorSet>> = (0..5)
            .map(|i| {
                (0..4)
                    .map(|v| set(&format!("img{i}"), v, &rand_vecs(&mut rng, 6, 3, 1.0)))
                    .collect()
            })
            .collect();
        let samples = sample_for_codebook(&train, 10, 1).unwrap();
        assert_eq!(samples.len(), 40);
        for v in 0..4 {
            assert_eq!(samples.iter().filter(|s| s.variant == v).count(), 10);
        }
        let ids: Vec<String> = (0..5).map(|i| format!("img{i}")).collect();
        check_train_only(&samples, &ids).unwrap();
        assert!(check_train_only(&samples, &ids[..2]).is_err());

        // pool of 30 per variant caps the draw
        assert_eq!(sample_for_codebook(&train, 1000, 1).unwrap().len(), 120);
        assert_eq!(sample_for_codebook(&train, 10, 1).unwrap(), samples);
    }

    #[test]
    fn codebook_blob_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cb = small_codebook(&mut rng);
        let back = Codebook::from_blob(&cb.to_blob().unwrap()).unwrap();
        assert_eq!(back.size(), cb.size());
        assert_eq!(back.gamma_e, cb.gamma_e);
        assert!(back.projection.is_some());
    }
}
