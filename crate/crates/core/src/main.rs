//! `add` command line: stage-by-stage tools and the experiment runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use add_core::editing::{StyleFilter, DEFAULT_BASIS};
use add_core::encode::{bow_encode, build_projection, emk_encode, kmeans, sample_for_codebook, Codebook, Encoder, ImageFeature};
use add_core::harness::artifacts::{features_from_blob, features_to_blob, read_descriptors, write_descriptors};
use add_core::harness::pipeline::median_gamma;
use add_core::harness::{
    apply_styles, assign_styles, drift_analysis, run_experiment, stratified_split, synth_dataset, Dataset, ExperimentConfig, Method, MixtureMode,
};
use add_core::imgio::{read_blob, write_blob};
use add_core::kdes::{extract_descriptors, KdesBasis, KdesParams};
use add_core::mkl::{accuracy, base_grams, gmkl_train, train_fixed, BaseKernelSet, GmklConfig, MklModel};
use add_core::{Error, Result};

#[derive(Parser)]
#[command(name = "add", version, about = "Adaptive descriptor design: tone-edited kernel descriptors with multiple kernel learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SplitArgs {
    /// Training images per class.
    #[arg(long)]
    train_per_class: usize,
    /// Test images per class (default: the rest).
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic shape corpus as PGM files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Style filters.
    Styles {
        #[command(subcommand)]
        action: StylesAction,
    },
    /// Extract 4-variant kernel descriptors for every image of a dataset.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// KDES parameters as JSON (defaults otherwise).
        #[arg(long)]
        kdes: Option<PathBuf>,
    },
    /// Build a codebook from training-image descriptors.
    Codebook {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, default_value_t = 200)]
        size: usize,
        /// Descriptors sampled per variant.
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// EMK bandwidth (default: inverse median codeword distance).
        #[arg(long)]
        gamma_e: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode every image's descriptors into image-level features.
    Encode {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long, value_parser = parse_encoder, default_value = "emk")]
        encoder: Encoder,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the base Grams for a train/test split.
    Grams {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on base Grams.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        grams: PathBuf,
        #[arg(long, default_value = "add_gmkl")]
        method: Method,
        #[arg(long, default_value_t = 10.0)]
        c: f64,
        #[arg(long, default_value_t = 1e-2)]
        lambda_d: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on the test block of the Grams.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        grams: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Optional CSV of per-image predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Experiments driven by a JSON config.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Measure how much a filter moves patch descriptors.
    Drift {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        style: StyleFilter,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        kdes: Option<PathBuf>,
        /// Use only the first N images.
        #[arg(long)]
        limit: Option<usize>,
        /// Write the full report (with per-patch drifts) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StylesAction {
    /// Write one styled copy of every image.
    Apply {
        #[arg(long)]
        dataset: PathBuf,
        /// Style spec, repeatable (e.g. `gamma:0.5`, `lomo_like`).
        #[arg(long = "style", required = true)]
        styles: Vec<StyleFilter>,
        #[arg(long, default_value = "all-mix")]
        mode: MixtureMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run every seed of a config and write report.{json,csv,txt}.
    Run { config: PathBuf },
}

fn parse_encoder(s: &str) -> std::result::Result<Encoder, String> {
    match s {
        "emk" => Ok(Encoder::Emk),
        "bow" => Ok(Encoder::Bow),
        _ => Err(format!("unknown encoder {s:?} (emk or bow)")),
    }
}

fn kdes_params(path: Option<&Path>) -> Result<KdesParams> {
    let p = match path {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => KdesParams::default(),
    };
    p.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(p)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Data(format!("cannot create {}: {e}", p.display())))
}

fn split_ids(ds: &Dataset, a: &SplitArgs) -> Result<(Vec<String>, Vec<String>)> {
    let s = stratified_split(&ds.labels(), a.train_per_class, a.test_per_class, a.seed)?;
    let ids = ds.ids();
    Ok((s.train.iter().map(|&i| ids[i].clone()).collect(), s.test.iter().map(|&i| ids[i].clone()).collect()))
}

fn labels_of(ds: &Dataset, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            ds.entries
                .iter()
                .find(|e| &e.id == id)
                .map(|e| e.label)
                .ok_or_else(|| Error::Data(format!("image {id} not in dataset")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, classes, per_class, size, seed } => {
            let ds = synth_dataset(&out, classes, per_class, size, seed)?;
            println!("wrote {} images in {} classes to {}", ds.entries.len(), ds.n_classes(), out.display());
        }
        Command::Styles { action: StylesAction::Apply { dataset, styles, mode, seed, out } } => {
            let ds = Dataset::open(&dataset)?;
            let assignment = assign_styles(ds.entries.len(), &styles, mode, seed)?;
            let styled = apply_styles(&ds, &styles, &assignment, &out)?;
            for (s, style) in styles.iter().enumerate() {
                println!("{style}: {} images", assignment.iter().filter(|&&a| a == s).count());
            }
            println!("wrote styled dataset to {}", styled.root.display());
        }
        Command::Extract { dataset, out, kdes } => {
            let ds = Dataset::open(&dataset)?;
            let params = kdes_params(kdes.as_deref())?;
            let basis = KdesBasis::new(&params)?;
            create_dir(&out)?;
            for (e, img) in ds.entries.iter().zip(ds.load_images()?) {
                let sets = extract_descriptors(&e.id, &img, &basis, &DEFAULT_BASIS)?;
                write_descriptors(&out, &sets, &params)?;
            }
            let p = out.join("kdes.json");
            std::fs::write(&p, serde_json::to_string_pretty(&params)?).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            println!("extracted {} images (descriptor dim {})", ds.entries.len(), basis.dim());
        }
        Command::Codebook { dataset, descriptors, split, size, samples, gamma_e, out } => {
            let ds = Dataset::open(&dataset)?;
            let (train, _) = split_ids(&ds, &split)?;
            let sets = train.iter().map(|id| read_descriptors(&descriptors, id, None)).collect::<Result<Vec<_>>>()?;
            let drawn = sample_for_codebook(&sets, samples, split.seed)?;
            let values: Vec<Vec<f64>> = drawn.into_iter().map(|s| s.values).collect();
            let cb = kmeans(&values, size, split.seed)?;
            let g = gamma_e.unwrap_or_else(|| median_gamma(&cb));
            let cb = build_projection(cb, g)?;
            write_blob(&cb.to_blob()?.with_meta("seed", split.seed), &out)?;
            println!("codebook: D = {}, {} samples, {} iterations, gamma_e = {g:.6e}", cb.size(), values.len(), cb.iterations);
        }
        Command::Encode { dataset, descriptors, codebook, encoder, out } => {
            let ds = Dataset::open(&dataset)?;
            let cb = Codebook::from_blob(&read_blob(&codebook)?)?;
            let feats = ds
                .entries
                .iter()
                .map(|e| {
                    read_descriptors(&descriptors, &e.id, None)?
                        .iter()
                        .map(|s| match encoder {
                            Encoder::Emk => emk_encode(s, &cb),
                            Encoder::Bow => bow_encode(s, &cb),
                        })
                        .collect::<Result<Vec<ImageFeature>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            write_blob(&features_to_blob(&feats)?, &out)?;
            println!("encoded {} images into {}-dimensional features", feats.len(), cb.size());
        }
        Command::Grams { dataset, features, split, out } => {
            let ds = Dataset::open(&dataset)?;
            let (train, test) = split_ids(&ds, &split)?;
            let feats = features_from_blob(&read_blob(&features)?)?;
            let ks = base_grams(&feats, &train, &test)?;
            ks.save(&out)?;
            println!("{} base Grams over {} train / {} test images", ks.len(), ks.n_train(), ks.n_test());
        }
        Command::Train { dataset, grams, method, c, lambda_d, out } => {
            let ds = Dataset::open(&dataset)?;
            let ks = BaseKernelSet::load(&grams)?;
            let labels = labels_of(&ds, &ks.train_ids)?;
            let cfg = GmklConfig { c, lambda_d, ..GmklConfig::default() };
            let model = match method {
                Method::Standard => {
                    let mut w = vec![0.0; ks.len()];
                    w[ks.pair_index(0, 0).ok_or_else(|| Error::Data("no identity kernel".into()))?] = 1.0;
                    train_fixed(&ks, &labels, &w, &cfg)?
                }
                Method::AddAk => train_fixed(&ks, &labels, &vec![1.0 / ks.len() as f64; ks.len()], &cfg)?,
                Method::AddGmkl => gmkl_train(&ks, &labels, &cfg)?,
            };
            model.save(&out)?;
            println!("{method}: status {:?}, weights {:?}", model.status, model.weights);
        }
        Command::Eval { dataset, grams, model, predictions } => {
            let ds = Dataset::open(&dataset)?;
            let ks = BaseKernelSet::load(&grams)?;
            let model = MklModel::load(&model)?;
            let truth = labels_of(&ds, &ks.test_ids)?;
            let pred = model.predict(&ks)?;
            if let Some(p) = predictions {
                let mut w = csv::Writer::from_path(&p).map_err(Error::from)?;
                w.write_record(["image", "truth", "predicted"]).map_err(Error::from)?;
                for ((id, t), l) in ks.test_ids.iter().zip(&truth).zip(&pred.labels) {
                    w.write_record([id.as_str(), &ds.class_names[*t], &ds.class_names[*l]]).map_err(Error::from)?;
                }
                w.flush()?;
            }
            println!("accuracy {:.4} on {} test images", accuracy(&pred.labels, &truth), truth.len());
        }
        Command::Experiment { action: ExperimentAction::Run { config } } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.table());
            if report.seeds.iter().all(|s| !s.ok) {
                return Err(Error::Data("every seed failed".into()));
            }
        }
        Command::Drift { dataset, style, codebook, kdes, limit, out } => {
            let ds = Dataset::open(&dataset)?;
            let params = kdes_params(kdes.as_deref())?;
            let basis = KdesBasis::new(&params)?;
            let mut images = ds.load_images()?;
            if let Some(n) = limit {
                images.truncate(n);
            }
            let cb = codebook.map(|p| read_blob(&p).and_then(|b| Codebook::from_blob(&b))).transpose()?;
            let r = drift_analysis(&images, &style, &basis, cb.as_ref())?;
            println!("filter {}: {} patches, mean drift {:.4}, median {:.4}, max {:.4}", r.filter, r.patches, r.mean, r.median, r.max);
            if let Some(f) = r.flip_rate {
                println!("codeword flip rate {f:.4}");
            }
            if let Some(p) = out {
                std::fs::write(&p, serde_json::to_string_pretty(&r)?).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
