//! Gradient kernel descriptors.
//!
//! The exact gradient match kernel between two patches is a double sum over
//! pixel pairs,
//!
//! ```text
//! k(P, Q) = sum_z sum_z' m~(z) m~(z') exp(-g_o |t(z) - t(z')|^2) exp(-g_p |z - z'|^2)
//! ```
//!
//! with `t = [sin theta, cos theta]` and patch-local positions in `[0,1]^2`.
//! [`kdes_feature`] projects a patch onto a finite orientation x position
//! basis so that inner products of descriptors approximate `k`. With
//! whitening enabled the projection is the Nystrom map `K_b^{-1/2} k_b(.)`
//! of each basis, which converges to the exact kernel as the basis grows.
//!
//! For variants `g_i(P)` of a patch and non-negative weights `a`, the kernel
//! with combined magnitudes `sum_i a_i m~_i` expands into
//! `sum_ij a_i a_j k_cross(i, j)`; see [`edited_match_kernel`] and
//! [`decompose_kernel`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::editing::{apply_base_image, BaseFunction, EditingCombo};
use crate::error::{Error, Result};
use crate::gradients::{check_aligned, gradient_field_plane, normalize_patch, patch_positions, NormalizedPatch, PatchWindow};
use crate::imgio::{Image, Plane};

/// Eigenvalue floor used when whitening basis Grams.
pub const WHITEN_EIG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdesParams {
    pub patch_size: usize,
    pub stride: usize,
    pub gamma_o: f64,
    pub gamma_p: f64,
    /// Number of orientation basis vectors.
    pub orientation_basis: usize,
    /// Position basis points per axis.
    pub position_basis: usize,
    pub eps_g: f64,
    pub whiten: bool,
}

impl Default for KdesParams {
    fn default() -> Self {
        Self {
            patch_size: 16,
            stride: 8,
            gamma_o: 5.0,
            gamma_p: 3.0,
            orientation_basis: 16,
            position_basis: 5,
            eps_g: crate::gradients::DEFAULT_EPS_G,
            whiten: true,
        }
    }
}

impl KdesParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_o > 0.0 && self.gamma_p > 0.0) {
            return Err(Error::Parameter("gamma_o and gamma_p must be > 0".into()));
        }
        if self.orientation_basis < 2 || self.position_basis < 2 {
            return Err(Error::Parameter("basis sizes must be >= 2".into()));
        }
        if self.patch_size < 4 {
            return Err(Error::Parameter(format!("patch size {} < 4", self.patch_size)));
        }
        if self.stride == 0 {
            return Err(Error::Parameter("stride must be >= 1".into()));
        }
        if !(self.eps_g >= 0.0) {
            return Err(Error::Parameter("eps_g must be >= 0".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.orientation_basis * self.position_basis * self.position_basis
    }

    /// Short stable hash of every field, used to tag persisted artifacts.
    pub fn hash(&self) -> String {
        let canon = format!(
            "kdes;{};{};{:e};{:e};{};{};{:e};{}",
            self.patch_size,
            self.stride,
            self.gamma_o,
            self.gamma_p,
            self.orientation_basis,
            self.position_basis,
            self.eps_g,
            self.whiten
        );
        hex::encode(&Sha256::digest(canon.as_bytes())[..8])
    }
}

#[inline]
fn sq_dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (d0, d1) = (a[0] - b[0], a[1] - b[1]);
    d0 * d0 + d1 * d1
}

fn check_kernel_inputs(p: &NormalizedPatch, q: &NormalizedPatch) -> Result<()> {
    if p.positions.len() != p.magnitudes.len() || q.positions.len() != q.magnitudes.len() {
        return Err(Error::Shape("patch positions do not match magnitudes".into()));
    }
    Ok(())
}

/// Exact double-sum match kernel, `O(|P| |Q|)`. Reference for the feature map.
pub fn match_kernel_exact(p: &NormalizedPatch, q: &NormalizedPatch, gamma_o: f64, gamma_p: f64) -> Result<f64> {
    check_kernel_inputs(p, q)?;
    Ok(weighted_double_sum(
        &p.magnitudes,
        &p.orientations,
        &p.positions,
        &q.magnitudes,
        &q.orientations,
        &q.positions,
        gamma_o,
        gamma_p,
    ))
}

#[allow(clippy::too_many_arguments)]
fn weighted_double_sum(
    pm: &[f64],
    po: &[Option<[f64; 2]>],
    pz: &[[f64; 2]],
    qm: &[f64],
    qo: &[Option<[f64; 2]>],
    qz: &[[f64; 2]],
    gamma_o: f64,
    gamma_p: f64,
) -> f64 {
    let mut total = 0.0;
    for i in 0..pm.len() {
        let (m, Some(t)) = (pm[i], po[i]) else { continue };
        if m == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..qm.len() {
            let (m2, Some(t2)) = (qm[j], qo[j]) else { continue };
            if m2 == 0.0 {
                continue;
            }
            row += m2 * (-gamma_o * sq_dist2(t, t2)).exp() * (-gamma_p * sq_dist2(pz[i], qz[j])).exp();
        }
        total += m * row;
    }
    total
}

/// Match kernel with combined magnitudes `sum_i a_i m~_i` on both sides.
///
/// Orientations come from variant 0 (the unedited patch) for every variant.
pub fn edited_match_kernel(
    p: &[NormalizedPatch],
    q: &[NormalizedPatch],
    combo: &EditingCombo,
    gamma_o: f64,
    gamma_p: f64,
) -> Result<f64> {
    let pe = crate::gradients::edited_magnitudes(p, combo)?;
    let qe = crate::gradients::edited_magnitudes(q, combo)?;
    check_kernel_inputs(&p[0], &q[0])?;
    Ok(weighted_double_sum(
        &pe.combined,
        &p[0].orientations,
        &p[0].positions,
        &qe.combined,
        &q[0].orientations,
        &q[0].positions,
        gamma_o,
        gamma_p,
    ))
}

/// `N x N` cross kernels: entry `(i, j)` pairs magnitudes of variant `i` of
/// `P` with variant `j` of `Q`, sharing the unedited orientations.
pub fn decompose_kernel(
    p: &[NormalizedPatch],
    q: &[NormalizedPatch],
    gamma_o: f64,
    gamma_p: f64,
) -> Result<DMatrix<f64>> {
    check_aligned(p)?;
    check_aligned(q)?;
    if p.len() != q.len() {
        return Err(Error::Shape(format!("{} vs {} variants", p.len(), q.len())));
    }
    check_kernel_inputs(&p[0], &q[0])?;
    let n = p.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        weighted_double_sum(
            &p[i].magnitudes,
            &p[0].orientations,
            &p[0].positions,
            &q[j].magnitudes,
            &q[0].orientations,
            &q[0].positions,
            gamma_o,
            gamma_p,
        )
    }))
}

/// `V diag(max(lambda, floor)^{-1/2}) V^T` for a symmetric matrix.
pub(crate) fn inverse_sqrt(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(floor).sqrt()),
    );
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&scaled) * v.transpose()
}

/// Precomputed orientation and position bases for one parameter set.
#[derive(Debug, Clone)]
pub struct KdesBasis {
    pub params: KdesParams,
    pub orientations: Vec<[f64; 2]>,
    pub positions: Vec<[f64; 2]>,
    orient_whiten: Option<DMatrix<f64>>,
    pos_whiten: Option<DMatrix<f64>>,
    /// `k_p(z, p)` for every pixel of a `patch_size` patch, row-major by pixel.
    pos_table: Vec<f64>,
}

impl KdesBasis {
    pub fn new(params: &KdesParams) -> Result<Self> {
        params.validate()?;
        let go = params.orientation_basis;
        let gp = params.position_basis;
        let orientations: Vec<[f64; 2]> = (0..go)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / go as f64;
                [phi.sin(), phi.cos()]
            })
            .collect();
        let positions = patch_positions(gp, gp);
        let (orient_whiten, pos_whiten) = if params.whiten {
            let ko = DMatrix::from_fn(go, go, |i, j| {
                (-params.gamma_o * sq_dist2(orientations[i], orientations[j])).exp()
            });
            let kp = DMatrix::from_fn(gp * gp, gp * gp, |i, j| {
                (-params.gamma_p * sq_dist2(positions[i], positions[j])).exp()
            });
            (
                Some(inverse_sqrt(&ko, WHITEN_EIG_FLOOR)),
                Some(inverse_sqrt(&kp, WHITEN_EIG_FLOOR)),
            )
        } else {
            (None, None)
        };
        let s = params.patch_size;
        let pos_table = patch_positions(s, s)
            .iter()
            .flat_map(|&z| positions.iter().map(move |&p| (-params.gamma_p * sq_dist2(z, p)).exp()))
            .collect();
        Ok(Self {
            params: params.clone(),
            orientations,
            positions,
            orient_whiten,
            pos_whiten,
            pos_table,
        })
    }

    pub fn dim(&self) -> usize {
        self.orientations.len() * self.positions.len()
    }
}

/// One patch descriptor and the grid cell it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor {
    pub values: Vec<f64>,
    /// `(column, row)` in the dense grid.
    pub grid_pos: (usize, usize),
}

impl PatchDescriptor {
    pub fn dot(&self, other: &PatchDescriptor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Feature vector of a normalized patch, laid out orientation-major:
/// entry `o * G_p^2 + p`.
pub fn kdes_feature(patch: &NormalizedPatch, basis: &KdesBasis) -> Vec<f64> {
    let no = basis.orientations.len();
    let np = basis.positions.len();
    let params = &basis.params;
    let table = (patch.width == params.patch_size && patch.height == params.patch_size)
        .then_some(basis.pos_table.as_slice());

    let mut raw = vec![0.0; no * np];
    let mut ko = vec![0.0; no];
    let mut kp = vec![0.0; np];
    for (z, &m) in patch.magnitudes.iter().enumerate() {
        let Some(t) = patch.orientations[z] else { continue };
        if m == 0.0 {
            continue;
        }
        for (k, o) in basis.orientations.iter().enumerate() {
            ko[k] = m * (-params.gamma_o * sq_dist2(t, *o)).exp();
        }
        let kp = match table {
            Some(tab) => &tab[z * np..(z + 1) * np],
            None => {
                for (k, p) in basis.positions.iter().enumerate() {
                    kp[k] = (-params.gamma_p * sq_dist2(patch.positions[z], *p)).exp();
                }
                &kp[..]
            }
        };
        for (k, &a) in ko.iter().enumerate() {
            let row = &mut raw[k * np..(k + 1) * np];
            for (r, &b) in row.iter_mut().zip(kp) {
                *r += a * b;
            }
        }
    }
    match (&basis.orient_whiten, &basis.pos_whiten) {
        (Some(wo), Some(wp)) => {
            // raw is (G_o x G_p^2) row-major; F = W_o raw W_p^T
            let r = DMatrix::from_row_slice(no, np, &raw);
            let f = wo * r * wp.transpose();
            let mut out = Vec::with_capacity(no * np);
            for i in 0..no {
                for j in 0..np {
                    out.push(f[(i, j)]);
                }
            }
            out
        }
        _ => raw,
    }
}

/// Dense grid of square windows, row-major. Fails when the image is smaller
/// than one patch.
pub fn grid_windows(width: usize, height: usize, params: &KdesParams) -> Result<(usize, usize, Vec<PatchWindow>)> {
    let s = params.patch_size;
    if width < s || height < s {
        return Err(Error::Empty(format!(
            "{width}x{height} image is smaller than one {s}x{s} patch"
        )));
    }
    let cols = (width - s) / params.stride + 1;
    let rows = (height - s) / params.stride + 1;
    let mut windows = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            windows.push(PatchWindow::square(c * params.stride, r * params.stride, s));
        }
    }
    Ok((cols, rows, windows))
}

/// Descriptors of one variant of one image over the dense grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub image_id: String,
    /// Index into the variant basis, 0 = unedited.
    pub variant: usize,
    /// `(columns, rows)` of the patch grid.
    pub grid: (usize, usize),
    pub descriptors: Vec<PatchDescriptor>,
}

impl DescriptorSet {
    pub fn dim(&self) -> usize {
        self.descriptors.first().map_or(0, |d| d.values.len())
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Descriptors of every grid patch of a plane, in grid order.
pub fn plane_descriptors(plane: &Plane, basis: &KdesBasis) -> Result<((usize, usize), Vec<PatchDescriptor>)> {
    let params = &basis.params;
    let (cols, rows, windows) = grid_windows(plane.width, plane.height, params)?;
    let gf = gradient_field_plane(plane);
    let descriptors = windows
        .par_iter()
        .enumerate()
        .map(|(k, w)| {
            let patch = normalize_patch(&gf, *w, params.eps_g)?;
            Ok(PatchDescriptor {
                values: kdes_feature(&patch, basis),
                grid_pos: (k % cols, k / cols),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(((cols, rows), descriptors))
}

/// One [`DescriptorSet`] per variant `g_i(img)`, all on the same grid.
pub fn extract_descriptors(
    image_id: &str,
    img: &Image,
    basis: &KdesBasis,
    variants: &[BaseFunction],
) -> Result<Vec<DescriptorSet>> {
    if !img.is_gray() {
        return Err(Error::Shape("descriptor extraction needs a grayscale image".into()));
    }
    variants
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let edited = apply_base_image(f, img)?;
            let (grid, descriptors) = plane_descriptors(&edited.to_plane()?, basis)?;
            Ok(DescriptorSet {
                image_id: image_id.to_string(),
                variant: i,
                grid,
                descriptors,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::editing::DEFAULT_BASIS;
    use crate::gradients::gradient_field;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(rng: &mut ChaCha8Rng, size: usize) -> NormalizedPatch {
        let n = size * size;
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let norm = raw.iter().map(|m| m * m).sum::<f64>().sqrt();
        NormalizedPatch {
            width: size,
            height: size,
            magnitudes: raw.iter().map(|m| m / norm).collect(),
            orientations: (0..n)
                .map(|_| {
                    let t = rng.gen::<f64>() * std::f64::consts::TAU;
                    Some([t.sin(), t.cos()])
                })
                .collect(),
            positions: patch_positions(size, size),
            eps_g: 0.0,
        }
    }

    /// Plain nested loops over pixel pairs, written independently.
    fn brute_force(p: &NormalizedPatch, q: &NormalizedPatch, go: f64, gp: f64) -> f64 {
        let mut s = 0.0;
        for a in 0..p.len() {
            for b in 0..q.len() {
                let (oa, ob) = match (p.orientations[a], q.orientations[b]) {
                    (Some(x), Some(y)) => (x, y),
                    _ => continue,
                };
                let dor = (oa[0] - ob[0]).powi(2) + (oa[1] - ob[1]).powi(2);
                let dpo = (p.positions[a][0] - q.positions[b][0]).powi(2)
                    + (p.positions[a][1] - q.positions[b][1]).powi(2);
                s += p.magnitudes[a] * q.magnitudes[b] * (-go * dor).exp() * (-gp * dpo).exp();
            }
        }
        s
    }

    #[test]
    fn single_pixel_self_kernel_is_one() {
        let mut p = random_patch(&mut ChaCha8Rng::seed_from_u64(0), 4);
        p.magnitudes = vec![0.0; 16];
        p.magnitudes[5] = 1.0;
        assert!((match_kernel_exact(&p, &p, 5.0, 3.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_kernel_matches_brute_force_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let p = random_patch(&mut rng, 4);
            let q = random_patch(&mut rng, 4);
            let k = match_kernel_exact(&p, &q, 1.0, 1.0).unwrap();
            assert!((k - brute_force(&p, &q, 1.0, 1.0)).abs() < 1e-12);
            let kt = match_kernel_exact(&q, &p, 1.0, 1.0).unwrap();
            assert!((k - kt).abs() < 1e-12);
        }
    }

    fn variant_set(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<NormalizedPatch> {
        let base = random_patch(rng, size);
        (0..n)
            .map(|i| {
                if i == 0 {
                    return base.clone();
                }
                let mut v = random_patch(rng, size);
                v.orientations = base.orientations.clone();
                v
            })
            .collect()
    }

    #[test]
    fn edited_kernel_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = variant_set(&mut rng, 4, 5);
        let q = variant_set(&mut rng, 4, 5);
        let id = EditingCombo::basis_vector(4, 0);
        let e = edited_match_kernel(&p, &q, &id, 5.0, 3.0).unwrap();
        assert!((e - match_kernel_exact(&p[0], &q[0], 5.0, 3.0).unwrap()).abs() < 1e-14);
        let zero = EditingCombo::new(vec![0.0; 4]).unwrap();
        assert_eq!(edited_match_kernel(&p, &q, &zero, 5.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_identity_and_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let p = variant_set(&mut rng, 4, 5);
            let q = variant_set(&mut rng, 4, 5);
            let k = decompose_kernel(&p, &q, 5.0, 3.0).unwrap();
            let kt = decompose_kernel(&q, &p, 5.0, 3.0).unwrap();
            assert!((k[(0, 0)] - match_kernel_exact(&p[0], &q[0], 5.0, 3.0).unwrap()).abs() < 1e-14);
            for i in 0..4 {
                for j in 0..4 {
                    assert!((k[(i, j)] - kt[(j, i)]).abs() <= 1e-12 * (1.0 + k[(i, j)].abs()));
                }
            }
            let a: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 2.0).collect();
            let combo = EditingCombo::new(a.clone()).unwrap();
            let direct = edited_match_kernel(&p, &q, &combo, 5.0, 3.0).unwrap();
            let mut expanded = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    expanded += a[i] * a[j] * k[(i, j)];
                }
            }
            assert!((direct - expanded).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn diagonal_cross_kernel_is_variant_self_kernel() {
        // i = j with P = Q, where variant orientations agree with the original
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = variant_set(&mut rng, 3, 4);
        let k = decompose_kernel(&p, &p, 5.0, 3.0).unwrap();
        for i in 0..3 {
            let direct = match_kernel_exact(&p[i], &p[i], 5.0, 3.0).unwrap();
            assert!((k[(i, i)] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn kernel_input_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = variant_set(&mut rng, 2, 4);
        let q = variant_set(&mut rng, 3, 4);
        assert!(decompose_kernel(&p, &q, 1.0, 1.0).is_err());
        let mut bad = p[0].clone();
        bad.positions.pop();
        assert!(match_kernel_exact(&bad, &p[0], 1.0, 1.0).is_err());
        let r = variant_set(&mut rng, 2, 5);
        assert!(decompose_kernel(&[p[0].clone(), r[0].clone()], &p, 1.0, 1.0).is_err());
    }

    #[test]
    fn exact_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let patches: Vec<_> = (0..12).map(|_| random_patch(&mut rng, 4)).collect();
        let g = DMatrix::from_fn(12, 12, |i, j| match_kernel_exact(&patches[i], &patches[j], 5.0, 3.0).unwrap());
        let eig = g.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        assert!(min >= -1e-8 * g.trace(), "min eig {min}");
        assert!((0..12).all(|i| g[(i, i)] >= 0.0));
    }

    #[test]
    fn zero_patch_gives_zero_feature() {
        let basis = KdesBasis::new(&KdesParams::default()).unwrap();
        let mut p = random_patch(&mut ChaCha8Rng::seed_from_u64(7), 16);
        p.magnitudes = vec![0.0; 256];
        assert!(kdes_feature(&p, &basis).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_feature_is_product_of_gaussians() {
        let params = KdesParams {
            patch_size: 5,
            whiten: false,
            ..KdesParams::default()
        };
        let basis = KdesBasis::new(&params).unwrap();
        let mut p = random_patch(&mut ChaCha8Rng::seed_from_u64(8), 5);
        p.magnitudes = vec![0.0; 25];
        p.magnitudes[12] = 1.0; // centre pixel, z = (0.5, 0.5)
        p.orientations[12] = Some([0.0, 1.0]); // theta = 0
        let f = kdes_feature(&p, &basis);
        let np = 25;
        for o in 0..16 {
            let phi = std::f64::consts::TAU * o as f64 / 16.0;
            let ko = (-5.0 * ((0.0 - phi.sin()).powi(2) + (1.0 - phi.cos()).powi(2))).exp();
            for py in 0..5 {
                for px in 0..5 {
                    let (bx, by) = (px as f64 / 4.0, py as f64 / 4.0);
                    let kp = (-3.0 * ((0.5 - bx).powi(2) + (0.5 - by).powi(2))).exp();
                    let got = f[o * np + py * 5 + px];
                    assert!((got - ko * kp).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn off_size_patch_uses_direct_positions() {
        let params = KdesParams::default();
        let basis = KdesBasis::new(&params).unwrap();
        let p = random_patch(&mut ChaCha8Rng::seed_from_u64(9), 16);
        let mut small_params = params.clone();
        small_params.patch_size = 8;
        let basis8 = KdesBasis::new(&small_params).unwrap();
        // the 16x16 patch is evaluated without the 8x8 table
        assert_eq!(kdes_feature(&p, &basis), kdes_feature(&p, &basis8));
    }

    /// Median relative error of F(P).F(Q) against the exact kernel.
    fn median_rel_error(params: &KdesParams, pairs: &[(NormalizedPatch, NormalizedPatch)]) -> f64 {
        let basis = KdesBasis::new(params).unwrap();
        let mut errs: Vec<f64> = pairs
            .iter()
            .map(|(p, q)| {
                let exact = match_kernel_exact(p, q, params.gamma_o, params.gamma_p).unwrap();
                let fp = kdes_feature(p, &basis);
                let fq = kdes_feature(q, &basis);
                let approx: f64 = fp.iter().zip(&fq).map(|(a, b)| a * b).sum();
                (approx - exact).abs() / exact.abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        errs[errs.len() / 2]
    }

    #[test]
    fn unwhitened_map_does_not_approximate() {
        // The raw projection's inner product grows with the basis size, so it
        // cannot serve as an approximation of the exact kernel.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pairs: Vec<_> = (0..20).map(|_| (random_patch(&mut rng, 16), random_patch(&mut rng, 16))).collect();
        let raw = |go, gp| {
            median_rel_error(
                &KdesParams {
                    orientation_basis: go,
                    position_basis: gp,
                    whiten: false,
                    ..KdesParams::default()
                },
                &pairs,
            )
        };
        assert!(raw(16, 5) > raw(8, 3));
        assert!(raw(16, 5) > 1.0);
    }

    #[test]
    fn approximation_improves_with_basis_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pairs: Vec<_> = (0..50).map(|_| (random_patch(&mut rng, 16), random_patch(&mut rng, 16))).collect();
        let med = |go, gp| {
            median_rel_error(
                &KdesParams {
                    orientation_basis: go,
                    position_basis: gp,
                    ..KdesParams::default()
                },
                &pairs,
            )
        };
        let (m83, m85, m163, m165) = (med(8, 3), med(8, 5), med(16, 3), med(16, 5));
        // measured: 7.96e-2, 7.56e-2, 5.20e-3, 3.64e-4
        assert!(m85 <= m83 && m163 <= m83);
        assert!(m165 <= m85 && m165 <= m163);
        assert!(m165 < 5e-4, "{m165}");
        assert!(m83 < 0.1, "{m83}");
    }

    #[test]
    fn grid_geometry() {
        let p = KdesParams::default();
        assert_eq!(grid_windows(16, 16, &p).unwrap().2.len(), 1);
        let (c, r, w) = grid_windows(32, 32, &p).unwrap();
        assert_eq!((c, r, w.len()), (3, 3, 9));
        assert_eq!(w[4], PatchWindow::square(8, 8, 16));
        assert!(matches!(grid_windows(15, 32, &p), Err(Error::Empty(_))));
    }

    #[test]
    fn extraction_per_variant() {
        let basis = KdesBasis::new(&KdesParams::default()).unwrap();
        let img = Image::from_fn(16, 16, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
        let sets = extract_descriptors("a", &img, &basis, &DEFAULT_BASIS).unwrap();
        assert_eq!(sets.len(), 4);
        assert!(sets.iter().all(|s| s.len() == 1 && s.dim() == 400));

        let img = Image::from_fn(32, 32, |x, y| ((x * 5 + y * y) % 13) as f64 / 12.0).unwrap();
        let sets = extract_descriptors("b", &img, &basis, &DEFAULT_BASIS).unwrap();
        assert!(sets.iter().all(|s| s.len() == 9 && s.grid == (3, 3)));
        assert_eq!(sets[2].variant, 2);
        assert_eq!(sets[0].descriptors[8].grid_pos, (2, 2));

        // identity variant equals direct extraction on the unedited image
        let (_, direct) = plane_descriptors(&img.to_plane().unwrap(), &basis).unwrap();
        assert_eq!(sets[0].descriptors, direct);

        let small = Image::gray(10, 10, vec![0.5; 100]).unwrap();
        assert!(extract_descriptors("c", &small, &basis, &DEFAULT_BASIS).is_err());
    }

    #[test]
    fn descriptors_see_real_gradients() {
        // a vertical edge should produce an orientation-0 dominated descriptor
        let img = Image::from_fn(16, 16, |x, _| if x < 8 { 0.2 } else { 0.8 }).unwrap();
        let gf = gradient_field(&img).unwrap();
        let patch = normalize_patch(&gf, PatchWindow::square(0, 0, 16), 1e-8).unwrap();
        let params = KdesParams::default();
        let k = match_kernel_exact(&patch, &patch, params.gamma_o, params.gamma_p).unwrap();
        let basis = KdesBasis::new(&params).unwrap();
        let f = kdes_feature(&patch, &basis);
        let approx: f64 = f.iter().map(|v| v * v).sum();
        assert!((approx - k).abs() / k < 0.05, "approx {approx} exact {k}");
    }

    #[test]
    fn params_hash_is_stable_and_sensitive() {
        let a = KdesParams::default();
        assert_eq!(a.hash(), KdesParams::default().hash());
        let b = KdesParams { gamma_o: 4.0, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        assert!(KdesParams { patch_size: 3, ..a.clone() }.validate().is_err());
        assert!(KdesParams { orientation_basis: 1, ..a.clone() }.validate().is_err());
        assert!(KdesParams { gamma_p: 0.0, ..a }.validate().is_err());
    }
}
