use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ofdmsim::harness::{
    build_dataset, builtin_names, builtin_suite, evaluate_with_bank, read_curves_csv, report, run_experiment,
    train_on, write_curves_csv, DatasetFile, DetectorKind, ExperimentSpec, TrainingCache, TrainingSnr, RESULTS_FILE,
};
use ofdmsim::neural::TrainedDetector;
use ofdmsim::ofdm::Modulation;

/// OFDM link simulator with classical and LSTM bit detectors.
#[derive(Parser, Debug)]
#[command(name = "ofdmsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate training and validation frames and store them as JSON.
    Dataset {
        #[command(flatten)]
        spec: SpecArgs,
        /// Frames to simulate (split 4:1 into training and validation).
        #[arg(long)]
        frames: Option<usize>,
        /// Training SNR in dB; a comma list draws one value per frame.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
        /// Output directory for dataset.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the LSTM detector and write a checkpoint.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        /// Dataset file or directory written by `dataset`; simulated on the fly when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        /// Training SNR in dB; a comma list draws one value per frame.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory for model.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure BER curves for one configuration.
    Eval {
        #[command(flatten)]
        spec: SpecArgs,
        /// Checkpoint file or directory for the DDLSD detector; trained on the fly when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Detectors to run, e.g. LS,MMSE,DDLSD,ORACLE.
        #[arg(long, value_delimiter = ',')]
        detectors: Vec<DetectorKind>,
        /// Evaluation SNR grid in dB.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
        /// Frames per SNR point.
        #[arg(long)]
        frames: Option<usize>,
        /// Output directory for results.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in suite (or the --config spec) and write CSV, manifest and plot script.
    Sweep {
        /// Built-in suite name; omit to sweep the --config spec.
        suite: Option<String>,
        #[command(flatten)]
        spec: SpecArgs,
        /// Evaluation SNR grid in dB.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
        #[arg(long)]
        frames: Option<usize>,
        /// Directory for trained checkpoints shared between runs.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print SNR crossings at BER 1e-1, 1e-2 and 1e-3 from a results CSV.
    Report {
        csv: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct SpecArgs {
    /// Experiment spec as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comb pilot count in the pilot block.
    #[arg(long)]
    pilots: Option<usize>,
    /// qpsk or 16qam.
    #[arg(long)]
    modulation: Option<Modulation>,
    /// Cyclic prefix length in samples.
    #[arg(long)]
    cp: Option<usize>,
}

impl SpecArgs {
    fn base(&self) -> Result<ExperimentSpec> {
        match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Ok(ExperimentSpec::from_json(&text)?)
            }
            None => Ok(ExperimentSpec::default()),
        }
    }

    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(p) = self.pilots {
            spec.config.pilot_count = p;
        }
        if let Some(m) = self.modulation {
            spec.config.modulation = m;
        }
        if let Some(cp) = self.cp {
            spec.config.cp_len = cp;
        }
    }

    fn resolve(&self) -> Result<ExperimentSpec> {
        let mut spec = self.base()?;
        self.apply(&mut spec);
        Ok(spec)
    }

    fn touches_config(&self) -> bool {
        self.pilots.is_some() || self.modulation.is_some() || self.cp.is_some()
    }
}

fn training_snr(values: &[f64]) -> Option<TrainingSnr> {
    match values {
        [] => None,
        [v] => Some(TrainingSnr::Fixed(*v)),
        vs => Some(TrainingSnr::Mixed(vs.to_vec())),
    }
}

const DATASET_FILE: &str = "dataset.json";
const MODEL_FILE: &str = "model.json";

/// `path` itself, or `path/name` when `path` is a directory.
fn in_dir(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn print_report(curves: &[ofdmsim::harness::BerCurve]) -> Result<String> {
    let text = report(curves)?.render();
    print!("{text}");
    Ok(text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset { spec, frames, snr, out } => {
            let mut spec = spec.resolve()?;
            if let Some(n) = frames {
                spec.train.frames = n;
            }
            if let Some(s) = training_snr(&snr) {
                spec.train.snr_db = s;
            }
            spec.validate()?;
            let (train_set, val_set) = build_dataset(&spec)?;
            fs::create_dir_all(&out)?;
            let out = out.join(DATASET_FILE);
            DatasetFile::new(&spec, &train_set, &val_set).save(&out)?;
            println!(
                "wrote {} training and {} validation frames to {}",
                train_set.n_frames(),
                val_set.n_frames(),
                out.display()
            );
        }
        Command::Train { spec: args, dataset, frames, snr, epochs, out } => {
            let (mut spec, sets) = match &dataset {
                Some(path) => {
                    if args.config.is_some() || args.seed.is_some() || args.touches_config() || frames.is_some() || !snr.is_empty() {
                        bail!("--dataset fixes the link configuration; only --epochs may be combined with it");
                    }
                    let path = in_dir(path, DATASET_FILE);
                    let file = DatasetFile::load(&path).with_context(|| format!("reading {}", path.display()))?;
                    let sets = file.to_sets()?;
                    (file.spec, Some(sets))
                }
                None => (args.resolve()?, None),
            };
            if let Some(n) = frames {
                spec.train.frames = n;
            }
            if let Some(s) = training_snr(&snr) {
                spec.train.snr_db = s;
            }
            if let Some(e) = epochs {
                spec.train.config.max_epochs = e;
            }
            spec.validate()?;
            let (train_set, val_set) = match sets {
                Some(s) => s,
                None => build_dataset(&spec)?,
            };
            let trained = train_on(&spec, &train_set, &val_set)?;
            fs::create_dir_all(&out)?;
            let out = out.join(MODEL_FILE);
            trained.save(&out)?;
            for (g, h) in trained.history.iter().enumerate() {
                println!(
                    "model {g}: best epoch {} validation loss {:.5}",
                    h.best_epoch,
                    h.val_psi[h.best_epoch]
                );
            }
            println!("wrote checkpoint to {}", out.display());
        }
        Command::Eval { spec, model, detectors, snr, frames, out } => {
            let mut spec = spec.resolve()?;
            if !detectors.is_empty() {
                spec.detectors = detectors;
            }
            if !snr.is_empty() {
                spec.snr_grid_db = snr;
            }
            if let Some(n) = frames {
                spec.frames_per_point = n;
            }
            spec.validate()?;
            let trained = match (&model, spec.detectors.contains(&DetectorKind::Ddlsd)) {
                (Some(path), _) => {
                    let path = in_dir(path, MODEL_FILE);
                    Some(TrainedDetector::load(&path).with_context(|| format!("reading {}", path.display()))?)
                }
                (None, true) => Some(TrainingCache::in_memory().get_or_train(&spec)?.clone()),
                (None, false) => None,
            };
            let curves = evaluate_with_bank(&spec, trained.as_ref().map(|t| &t.bank))?;
            fs::create_dir_all(&out)?;
            let path = out.join(RESULTS_FILE);
            write_curves_csv(&curves, BufWriter::new(File::create(&path)?))?;
            print_report(&curves)?;
            println!("wrote {}", path.display());
        }
        Command::Sweep { suite, spec: args, snr, frames, cache, out } => {
            let (name, mut specs) = match &suite {
                Some(name) => {
                    if args.config.is_some() {
                        bail!("give either a suite name or --config, not both");
                    }
                    let specs = builtin_suite(name)
                        .with_context(|| format!("known suites: {}", builtin_names().join(", ")))?;
                    (name.clone(), specs)
                }
                None => {
                    let spec = args.resolve()?;
                    (spec.name.clone(), vec![spec])
                }
            };
            for spec in &mut specs {
                args.apply(spec);
                if !snr.is_empty() {
                    spec.snr_grid_db = snr.clone();
                }
                if let Some(n) = frames {
                    spec.frames_per_point = n;
                }
            }
            let mut cache = match cache {
                Some(dir) => TrainingCache::with_dir(dir),
                None => TrainingCache::in_memory(),
            };
            let bundle = run_experiment(&name, &specs, &out, &mut cache)?;
            print_report(&bundle.curves)?;
            println!("wrote {}", bundle.dir.display());
        }
        Command::Report { csv, out } => {
            let file = File::open(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let curves = read_curves_csv(file)?;
            let mut specs: Vec<&str> = Vec::new();
            for c in &curves {
                if !specs.contains(&c.spec_name.as_str()) {
                    specs.push(&c.spec_name);
                }
            }
            let mut text = String::new();
            for name in specs {
                let group: Vec<_> = curves.iter().filter(|c| c.spec_name == name).cloned().collect();
                text.push_str(&print_report(&group)?);
            }
            if let Some(path) = out {
                ensure_parent(&path)?;
                fs::write(&path, text)?;
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
