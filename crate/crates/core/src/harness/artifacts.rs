//! On-disk artifacts of the stage-by-stage CLI: descriptor sets and
//! encoded features as tensor blobs.

use std::path::{Path, PathBuf};

use crate::encode::{Encoder, ImageFeature};
use crate::error::{Error, Result};
use crate::imgio::{read_blob, write_blob, TensorBlob};
use crate::kdes::{DescriptorSet, KdesParams, PatchDescriptor};

/// File name of an image id (`/` is not allowed in names).
pub fn file_stem(id: &str) -> String {
    id.replace('/', "__")
}

/// All variants of one image as a `[variants, patches, dim]` blob.
pub fn descriptors_to_blob(sets: &[DescriptorSet], params: &KdesParams) -> Result<TensorBlob> {
    let first = sets.first().ok_or_else(|| Error::Empty("no descriptor sets".into()))?;
    let (p, d) = (first.len(), first.dim());
    if sets.iter().any(|s| s.len() != p || s.dim() != d || s.image_id != first.image_id) {
        return Err(Error::Shape("variants of one image must share grid and dimension".into()));
    }
    let flat: Vec<f64> = sets.iter().flat_map(|s| s.descriptors.iter().flat_map(|x| x.values.iter().copied())).collect();
    Ok(TensorBlob::from_f64(vec![sets.len(), p, d], &flat)?
        .with_meta("kind", "descriptors")
        .with_meta("image_id", &first.image_id)
        .with_meta("cols", first.grid.0)
        .with_meta("rows", first.grid.1)
        .with_meta("params_hash", params.hash()))
}

fn meta_usize(blob: &TensorBlob, key: &str) -> Result<usize> {
    blob.meta(key)?
        .parse()
        .map_err(|_| Error::Format(format!("bad {key} in blob metadata")))
}

pub fn descriptors_from_blob(blob: &TensorBlob) -> Result<Vec<DescriptorSet>> {
    if blob.meta("kind")? != "descriptors" || blob.shape.len() != 3 {
        return Err(Error::Format("not a descriptor blob".into()));
    }
    let id = blob.meta("image_id")?.to_string();
    let cols = meta_usize(blob, "cols")?;
    let rows = meta_usize(blob, "rows")?;
    let (v, p, d) = (blob.shape[0], blob.shape[1], blob.shape[2]);
    if cols * rows != p {
        return Err(Error::Format(format!("grid {cols}x{rows} does not hold {p} patches")));
    }
    let values = blob.to_f64();
    Ok((0..v)
        .map(|variant| DescriptorSet {
            image_id: id.clone(),
            variant,
            grid: (cols, rows),
            descriptors: (0..p)
                .map(|k| PatchDescriptor {
                    values: values[(variant * p + k) * d..(variant * p + k + 1) * d].to_vec(),
                    grid_pos: (k % cols, k / cols),
                })
                .collect(),
        })
        .collect())
}

pub fn descriptor_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{}.desc", file_stem(id)))
}

pub fn write_descriptors(dir: &Path, sets: &[DescriptorSet], params: &KdesParams) -> Result<()> {
    let blob = descriptors_to_blob(sets, params)?;
    write_blob(&blob, descriptor_path(dir, &sets[0].image_id))
}

/// Reads the descriptors of `id`, checking they were made with `params`
/// when given.
pub fn read_descriptors(dir: &Path, id: &str, params: Option<&KdesParams>) -> Result<Vec<DescriptorSet>> {
    let blob = read_blob(descriptor_path(dir, id))?;
    if let Some(p) = params {
        if blob.meta("params_hash")? != p.hash() {
            return Err(Error::StaleArtifact(format!("descriptors of {id} were extracted with other parameters")));
        }
    }
    descriptors_from_blob(&blob)
}

/// Features of many images as one `[images, variants, D]` blob; ids are
/// stored as a JSON list in the metadata.
pub fn features_to_blob(features: &[Vec<ImageFeature>]) -> Result<TensorBlob> {
    let first = features.first().and_then(|f| f.first()).ok_or_else(|| Error::Empty("no features".into()))?;
    let (v, d) = (features[0].len(), first.values.len());
    if features.iter().any(|f| f.len() != v || f.iter().any(|x| x.values.len() != d)) {
        return Err(Error::Shape("all images need the same variants and dimension".into()));
    }
    let ids: Vec<&str> = features.iter().map(|f| f[0].image_id.as_str()).collect();
    let flat: Vec<f64> = features.iter().flatten().flat_map(|x| x.values.iter().copied()).collect();
    let encoder = match first.encoder {
        Encoder::Emk => "emk",
        Encoder::Bow => "bow",
    };
    Ok(TensorBlob::from_f64(vec![features.len(), v, d], &flat)?
        .with_meta("kind", "features")
        .with_meta("encoder", encoder)
        .with_meta("ids", serde_json::to_string(&ids)?))
}

pub fn features_from_blob(blob: &TensorBlob) -> Result<Vec<ImageFeature>> {
    if blob.meta("kind")? != "features" || blob.shape.len() != 3 {
        return Err(Error::Format("not a feature blob".into()));
    }
    let ids: Vec<String> = serde_json::from_str(blob.meta("ids")?)?;
    let encoder = match blob.meta("encoder")? {
        "emk" => Encoder::Emk,
        "bow" => Encoder::Bow,
        e => return Err(Error::Format(format!("unknown encoder {e:?}"))),
    };
    let (n, v, d) = (blob.shape[0], blob.shape[1], blob.shape[2]);
    if ids.len() != n {
        return Err(Error::Format("feature blob id list does not match its shape".into()));
    }
    let values = blob.to_f64();
    let mut out = Vec::with_capacity(n * v);
    for (i, id) in ids.iter().enumerate() {
        for variant in 0..v {
            let off = (i * v + variant) * d;
            out.push(ImageFeature { image_id: id.clone(), variant, values: values[off..off + d].to_vec(), encoder });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::editing::DEFAULT_BASIS;
    use crate::harness::dataset::synth_images;
    use crate::kdes::{extract_descriptors, KdesBasis};

    #[test]
    fn descriptor_blob_round_trip() {
        let params = KdesParams { orientation_basis: 8, position_basis: 3, ..Default::default() };
        let basis = KdesBasis::new(&params).unwrap();
        let (id, _, img) = synth_images(2, 2, 32, 0).unwrap().remove(0);
        let sets = extract_descriptors(&format!("dir/{id}"), &img, &basis, &DEFAULT_BASIS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_descriptors(dir.path(), &sets, &params).unwrap();
        let back = read_descriptors(dir.path(), &sets[0].image_id, Some(&params)).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in sets.iter().zip(&back) {
            assert_eq!((a.grid, a.variant, &a.image_id), (b.grid, b.variant, &b.image_id));
            for (p, q) in a.descriptors.iter().zip(&b.descriptors) {
                assert_eq!(p.grid_pos, q.grid_pos);
                assert!(p.values.iter().zip(&q.values).all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + x.abs())));
            }
        }
        let other = KdesParams { stride: 4, ..params };
        assert!(matches!(read_descriptors(dir.path(), &sets[0].image_id, Some(&other)), Err(Error::StaleArtifact(_))));
    }

    #[test]
    fn feature_blob_round_trip() {
        let feats: Vec<Vec<ImageFeature>> = (0..3)
            .map(|i| {
                (0..2)
                    .map(|v| ImageFeature { image_id: format!("img{i}"), variant: v, values: vec![i as f64, v as f64, 0.5], encoder: Encoder::Bow })
                    .collect()
            })
            .collect();
        let back = features_from_blob(&features_to_blob(&feats).unwrap()).unwrap();
        assert_eq!(back, feats.into_iter().flatten().collect::<Vec<_>>());
    }
}
