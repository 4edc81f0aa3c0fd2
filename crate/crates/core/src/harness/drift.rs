//! How much a tone filter moves patch descriptors.

use serde::{Deserialize, Serialize};

use crate::editing::{apply_style, StyleFilter};
use crate::encode::Codebook;
use crate::error::{Error, Result};
use crate::imgio::{Image, Plane};
use crate::kdes::{plane_descriptors, KdesBasis};

/// Guards the relative drift against all-zero descriptors.
pub const DRIFT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub filter: String,
    pub patches: usize,
    pub mean: f64,
    pub max: f64,
    pub median: f64,
    /// Fraction of patches whose nearest codeword changed.
    pub flip_rate: Option<f64>,
    pub per_patch: Vec<f64>,
}

/// Relative L1 drift `|a - b|_1 / max(|a|_1, eps)`.
pub fn relative_l1(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    let norm: f64 = a.iter().map(|x| x.abs()).sum();
    diff / norm.max(DRIFT_EPS)
}

/// Per-patch drift and codeword flips between two planes of equal size.
/// Returns `(drifts, flips)`.
pub fn plane_drift(original: &Plane, edited: &Plane, basis: &KdesBasis, codebook: Option<&Codebook>) -> Result<(Vec<f64>, usize)> {
    if (original.width, original.height) != (edited.width, edited.height) {
        return Err(Error::Shape("drift needs planes of equal size".into()));
    }
    let (_, a) = plane_descriptors(original, basis)?;
    let (_, b) = plane_descriptors(edited, basis)?;
    let drifts = a.iter().zip(&b).map(|(p, q)| relative_l1(&p.values, &q.values)).collect();
    let flips = codebook.map_or(0, |cb| a.iter().zip(&b).filter(|(p, q)| cb.nearest(&p.values) != cb.nearest(&q.values)).count());
    Ok((drifts, flips))
}

/// Drift of `filter` over a set of grayscale images.
pub fn drift_analysis(images: &[Image], filter: &StyleFilter, basis: &KdesBasis, codebook: Option<&Codebook>) -> Result<DriftReport> {
    if images.is_empty() {
        return Err(Error::Empty("no images for drift analysis".into()));
    }
    if let Some(cb) = codebook {
        if cb.dim() != basis.dim() {
            return Err(Error::Shape(format!("codebook dimension {} != descriptor dimension {}", cb.dim(), basis.dim())));
        }
    }
    let mut per_patch = Vec::new();
    let mut flips = 0;
    for img in images {
        let edited = apply_style(filter, img)?;
        let (d, f) = plane_drift(&img.to_plane()?, &edited.to_plane()?, basis, codebook)?;
        per_patch.extend(d);
        flips += f;
    }
    let n = per_patch.len();
    let mut sorted = per_patch.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(DriftReport {
        filter: filter.to_string(),
        patches: n,
        mean: per_patch.iter().sum::<f64>() / n as f64,
        max: sorted.last().copied().unwrap_or(0.0),
        median: sorted.get(n / 2).copied().unwrap_or(0.0),
        flip_rate: codebook.map(|_| flips as f64 / n as f64),
        per_patch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::kmeans;
    use crate::harness::dataset::synth_images;
    use crate::kdes::KdesParams;

    fn basis(eps_g: f64) -> KdesBasis {
        KdesBasis::new(&KdesParams { eps_g, orientation_basis: 8, position_basis: 3, ..Default::default() }).unwrap()
    }

    fn images() -> Vec<Image> {
        synth_images(2, 2, 32, 4).unwrap().into_iter().map(|x| x.2).collect()
    }

    #[test]
    fn identity_filter_has_zero_drift() {
        let r = drift_analysis(&images(), &StyleFilter::Identity, &basis(1e-8), None).unwrap();
        assert!(r.per_patch.iter().all(|&d| d == 0.0));
        assert_eq!(r.max, 0.0);
        assert_eq!(r.flip_rate, None);
    }

    #[test]
    fn linear_scaling_cancels_without_eps() {
        let b = basis(0.0);
        let r = drift_analysis(&images(), &StyleFilter::Scale(0.5), &b, None).unwrap();
        assert!(r.max <= 1e-6, "max drift {}", r.max);
        for img in images() {
            let p = img.to_plane().unwrap();
            let (d, _) = plane_drift(&p, &p.map(|u| 2.0 * u), &b, None).unwrap();
            assert!(d.iter().all(|&x| x <= 1e-6));
        }
    }

    #[test]
    fn nonlinear_filter_drifts_and_flips() {
        let b = basis(1e-8);
        let imgs = images();
        let descs: Vec<Vec<f64>> = imgs
            .iter()
            .flat_map(|i| plane_descriptors(&i.to_plane().unwrap(), &b).unwrap().1)
            .map(|d| d.values)
            .collect();
        let cb = kmeans(&descs, 8, 1).unwrap();
        let lomo = StyleFilter::LomoLike { k: 8.0, c: 0.5, beta: 0.35 };
        let r = drift_analysis(&imgs, &lomo, &b, Some(&cb)).unwrap();
        assert!(r.mean > 0.0);
        let f = r.flip_rate.unwrap();
        assert!((0.0..=1.0).contains(&f));
        assert_eq!(r.patches, r.per_patch.len());
        assert!(r.median <= r.max);
    }

    #[test]
    fn relative_l1_guards_zero() {
        assert_eq!(relative_l1(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_l1(&[1.0, -1.0], &[0.0, -1.0]), 0.5);
        assert!(drift_analysis(&[], &StyleFilter::Identity, &basis(1e-8), None).is_err());
    }
}
