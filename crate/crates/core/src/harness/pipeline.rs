//! End-to-end experiment: styles, split, descriptors, codebook, encoding,
//! base kernels and the three classifiers, repeated over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig, Method};
use super::dataset::{assign_styles, stratified_split, synth_images, Dataset};
use crate::editing::{apply_style, DEFAULT_BASIS};
use crate::encode::{bow_encode, build_projection, check_train_only, emk_encode, kmeans, sample_for_codebook, Codebook, Encoder, ImageFeature};
use crate::error::{Error, Result};
use crate::imgio::Image;
use crate::kdes::{extract_descriptors, DescriptorSet, KdesBasis};
use crate::mkl::{accuracy, base_grams, gmkl_train, train_fixed, BaseKernelSet, GmklConfig, MklStatus};

pub const CODEBOOK_POLICY: &str = "rebuilt per seed from training images only";

/// Images and labels the experiment runs on.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub images: Vec<Image>,
    pub class_names: Vec<String>,
}

impl Corpus {
    pub fn load(spec: &DatasetSpec) -> Result<Self> {
        match spec {
            DatasetSpec::Synthetic { classes, per_class, size, seed } => {
                let imgs = synth_images(*classes, *per_class, *size, *seed)?;
                Ok(Self {
                    ids: imgs.iter().map(|x| x.0.clone()).collect(),
                    labels: imgs.iter().map(|x| x.1).collect(),
                    images: imgs.into_iter().map(|x| x.2).collect(),
                    class_names: super::dataset::SHAPES[..*classes].iter().map(|s| s.to_string()).collect(),
                })
            }
            DatasetSpec::Directory { path } => {
                let ds = Dataset::open(path)?;
                Ok(Self {
                    ids: ds.ids(),
                    labels: ds.labels(),
                    images: ds.load_images()?,
                    class_names: ds.class_names.clone(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub accuracy: BTreeMap<Method, f64>,
    /// Base-kernel weights per method, in pair order.
    pub weights: BTreeMap<Method, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmkl_status: Option<MklStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmkl_objective: Option<Vec<f64>>,
    pub gamma_e: Option<f64>,
    /// Style of every image in this seed's dataset.
    pub styles: BTreeMap<String, String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    pub std: f64,
    pub seeds_ok: usize,
    /// Mean learned weights over successful seeds.
    pub mean_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub codebook_policy: String,
    pub basis: Vec<String>,
    pub pairs: Vec<(usize, usize)>,
    pub summary: Vec<MethodSummary>,
    pub seeds: Vec<SeedResult>,
}

impl Report {
    pub fn summary_of(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }

    /// Fixed-width table of mean accuracies and mean learned weights.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>6}", "method", "mean", "std", "seeds");
        for m in &self.summary {
            let _ = writeln!(s, "{:<10} {:>8.4} {:>8.4} {:>6}", m.method.name(), m.mean, m.std, m.seeds_ok);
        }
        if let Some(g) = self.summary_of(Method::AddGmkl) {
            let _ = writeln!(s, "\nmean learned weights (pair: d)");
            for (p, d) in self.pairs.iter().zip(&g.mean_weights) {
                let _ = writeln!(s, "  ({}, {}) {:.5}", self.basis[p.0], self.basis[p.1], d);
            }
        }
        let failed: Vec<String> = self.seeds.iter().filter(|r| !r.ok).map(|r| r.seed.to_string()).collect();
        if !failed.is_empty() {
            let _ = writeln!(s, "\nfailed seeds: {}", failed.join(", "));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io_path(dir, e))?;
        let p = dir.join("report.json");
        std::fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io_path(&p, e))?;
        let p = dir.join("report.txt");
        std::fs::write(&p, self.table()).map_err(|e| Error::io_path(&p, e))?;
        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        w.write_record(["method", "seed", "accuracy", "status", "weights"])?;
        for r in &self.seeds {
            for &m in &self.config.methods {
                let acc = r.accuracy.get(&m).map_or(String::new(), |a| a.to_string());
                let wts = r.weights.get(&m).map_or(String::new(), |w| join(w));
                let status = if r.ok { "ok" } else { "failed" };
                w.write_record([m.name(), &r.seed.to_string(), &acc, status, &wts])?;
            }
        }
        for m in &self.summary {
            w.write_record([m.method.name(), "mean", &m.mean.to_string(), "", &join(&m.mean_weights)])?;
            w.write_record([m.method.name(), "std", &m.std.to_string(), "", ""])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Independent stream seed for one pipeline stage.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverse of the median squared distance between distinct codewords.
pub fn median_gamma(cb: &Codebook) -> f64 {
    let mut d = Vec::new();
    for i in 0..cb.size() {
        for j in i + 1..cb.size() {
            d.push(cb.centroids[i].iter().zip(&cb.centroids[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        }
    }
    d.sort_by(f64::total_cmp);
    let med = d.get(d.len() / 2).copied().unwrap_or(1.0);
    if med > 0.0 {
        1.0 / med
    } else {
        1.0
    }
}

/// Everything one seed produces before classification.
pub struct SeedKernels {
    pub kernels: BaseKernelSet,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub gamma_e: Option<f64>,
    pub styles: Vec<usize>,
}

/// Styles, split, descriptors, codebook, encoding and base Grams of one seed.
pub fn seed_kernels(cfg: &ExperimentConfig, corpus: &Corpus, basis: &KdesBasis, seed: u64, log: &mut Vec<String>) -> Result<SeedKernels> {
    let styles = assign_styles(corpus.images.len(), &cfg.styles, cfg.mixture, stage_seed(seed, 1))?;
    let split = stratified_split(&corpus.labels, cfg.train_per_class, cfg.test_per_class, stage_seed(seed, 2))?;
    log.push(format!("split: {} train, {} test", split.train.len(), split.test.len()));

    let used: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
    let sets: Vec<Vec<DescriptorSet>> = used
        .par_iter()
        .map(|&i| {
            let styled = apply_style(&cfg.styles[styles[i]], &corpus.images[i])?;
            extract_descriptors(&corpus.ids[i], &styled, basis, &DEFAULT_BASIS)
        })
        .collect::<Result<_>>()?;
    let n_train = split.train.len();
    log.push(format!("descriptors: {} per image variant, dim {}", sets[0][0].len(), sets[0][0].dim()));

    let train_ids: Vec<String> = split.train.iter().map(|&i| corpus.ids[i].clone()).collect();
    let test_ids: Vec<String> = split.test.iter().map(|&i| corpus.ids[i].clone()).collect();
    let samples = sample_for_codebook(&sets[..n_train], cfg.codebook_samples, stage_seed(seed, 3))?;
    check_train_only(&samples, &train_ids)?;
    let values: Vec<Vec<f64>> = samples.iter().map(|s| s.values.clone()).collect();
    let cb = kmeans(&values, cfg.codebook_size, stage_seed(seed, 4))?;
    log.push(format!(
        "codebook: {} samples, D = {}, {} iterations, inertia {:.6e}",
        values.len(),
        cb.size(),
        cb.iterations,
        cb.inertia
    ));

    let (cb, gamma_e) = match cfg.encoder {
        Encoder::Emk => {
            let g = cfg.gamma_e.unwrap_or_else(|| median_gamma(&cb));
            log.push(format!("gamma_e = {g:.6e}"));
            (build_projection(cb, g)?, Some(g))
        }
        Encoder::Bow => (cb, None),
    };
    let features: Vec<ImageFeature> = sets
        .par_iter()
        .flat_map_iter(|variants| {
            variants.iter().map(|ds| match cfg.encoder {
                Encoder::Emk => emk_encode(ds, &cb),
                Encoder::Bow => bow_encode(ds, &cb),
            })
        })
        .collect::<Result<_>>()?;
    let kernels = base_grams(&features, &train_ids, &test_ids)?;
    Ok(SeedKernels {
        kernels,
        train_labels: split.train.iter().map(|&i| corpus.labels[i]).collect(),
        test_labels: split.test.iter().map(|&i| corpus.labels[i]).collect(),
        gamma_e,
        styles,
    })
}

fn run_seed(cfg: &ExperimentConfig, corpus: &Corpus, basis: &KdesBasis, seed: u64, log: &mut Vec<String>) -> Result<SeedResult> {
    let sk = seed_kernels(cfg, corpus, basis, seed, log)?;
    let ks = &sk.kernels;
    let gcfg = GmklConfig { c: cfg.c, lambda_d: cfg.lambda_d, ..GmklConfig::default() };
    let mut result = SeedResult {
        seed,
        ok: true,
        error: None,
        accuracy: BTreeMap::new(),
        weights: BTreeMap::new(),
        gmkl_status: None,
        gmkl_objective: None,
        gamma_e: sk.gamma_e,
        styles: corpus.ids.iter().zip(&sk.styles).map(|(id, &s)| (id.clone(), cfg.styles[s].to_string())).collect(),
        train_ids: ks.train_ids.clone(),
        test_ids: ks.test_ids.clone(),
    };
    for &m in &cfg.methods {
        let model = match m {
            Method::Standard => {
                let mut w = vec![0.0; ks.len()];
                w[ks.pair_index(0, 0).expect("identity pair")] = 1.0;
                train_fixed(ks, &sk.train_labels, &w, &gcfg)?
            }
            Method::AddAk => train_fixed(ks, &sk.train_labels, &vec![1.0 / ks.len() as f64; ks.len()], &gcfg)?,
            Method::AddGmkl => {
                let model = gmkl_train(ks, &sk.train_labels, &gcfg)?;
                result.gmkl_status = Some(model.status);
                result.gmkl_objective = Some(model.trace.clone());
                model
            }
        };
        let acc = accuracy(&model.predict(ks)?.labels, &sk.test_labels);
        log.push(format!("{m}: accuracy {acc:.4}"));
        result.accuracy.insert(m, acc);
        result.weights.insert(m, model.weights);
    }
    Ok(result)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Per-seed wall-clock seconds, kept out of the report so reports stay
/// bit-identical across runs.
pub type Timing = Vec<(u64, f64)>;

/// Runs every seed sequentially. A failing seed is logged and marked failed.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<(Report, Vec<Vec<String>>, Timing)> {
    cfg.validate()?;
    let corpus = Corpus::load(&cfg.dataset)?;
    let basis = KdesBasis::new(&cfg.kdes)?;
    let mut seeds = Vec::new();
    let mut logs = Vec::new();
    let mut timing = Vec::new();
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let mut log = vec![format!("seed {seed}")];
        let r = run_seed(cfg, &corpus, &basis, seed, &mut log).unwrap_or_else(|e| {
            log::error!("seed {seed} failed: {e}");
            log.push(format!("failed: {e}"));
            SeedResult {
                seed,
                ok: false,
                error: Some(e.to_string()),
                accuracy: BTreeMap::new(),
                weights: BTreeMap::new(),
                gmkl_status: None,
                gmkl_objective: None,
                gamma_e: None,
                styles: BTreeMap::new(),
                train_ids: Vec::new(),
                test_ids: Vec::new(),
            }
        });
        log::info!("{}", log.join("; "));
        timing.push((seed, start.elapsed().as_secs_f64()));
        seeds.push(r);
        logs.push(log);
    }
    let pairs: Vec<(usize, usize)> = (0..DEFAULT_BASIS.len())
        .flat_map(|i| (0..DEFAULT_BASIS.len()).map(move |j| (i, j)))
        .collect();
    let summary = cfg
        .methods
        .iter()
        .map(|&m| {
            let ok: Vec<&SeedResult> = seeds.iter().filter(|r| r.ok).collect();
            let accs: Vec<f64> = ok.iter().filter_map(|r| r.accuracy.get(&m).copied()).collect();
            let (mean, std) = mean_std(&accs);
            let mut mean_weights = vec![0.0; pairs.len()];
            for r in &ok {
                for (acc, w) in mean_weights.iter_mut().zip(&r.weights[&m]) {
                    *acc += w / ok.len() as f64;
                }
            }
            MethodSummary { method: m, mean, std, seeds_ok: accs.len(), mean_weights }
        })
        .collect();
    let report = Report {
        config: cfg.clone(),
        codebook_policy: CODEBOOK_POLICY.into(),
        basis: DEFAULT_BASIS.iter().map(|b| b.name().to_string()).collect(),
        pairs,
        summary,
        seeds,
    };
    Ok((report, logs, timing))
}

/// Runs the pipeline and writes the report, per-seed logs and timing file
/// into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let (report, logs, timing) = run_pipeline(cfg)?;
    let dir = &cfg.output_dir;
    report.write(dir)?;
    for (r, log) in report.seeds.iter().zip(&logs) {
        let p = dir.join(format!("seed_{}.log", r.seed));
        std::fs::write(&p, log.join("\n") + "\n").map_err(|e| Error::io_path(&p, e))?;
    }
    let t: BTreeMap<String, f64> = timing.into_iter().map(|(s, t)| (format!("seed_{s}"), t)).collect();
    let p = dir.join("timing.json");
    std::fs::write(&p, serde_json::to_string_pretty(&t)?).map_err(|e| Error::io_path(&p, e))?;
    Ok(report)
}
