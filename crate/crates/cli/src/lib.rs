//! Command-line pipeline: synthetic data, training, refinement, prediction,
//! evaluation and reporting.

pub mod error;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use refinegan_core::metrics::{evaluate, write_metrics_csv, MetricReport};
use refinegan_core::mvol::{patient_id_from_path, read_mvol, write_mvol, MvolObject};
use refinegan_core::synth::{gen_dataset, Dataset, Split, SynthSpec};
use refinegan_core::{PatientRecord, SegMap};
use refinegan_nets::{Checkpoint, NetKind, Network};
use refinegan_train::data::dataset_net_config;
use refinegan_train::trace::{write_loss_csv, write_refine_csv};
use refinegan_train::{predict, train_cgan, train_refinement, PatientSlices, RunConfig, GENERATOR, REFINEMENT};

pub use error::{CliError, Result};

pub const THREADS_ENV: &str = "REFINEGAN_THREADS";
pub const CGAN_CHECKPOINT: &str = "cgan.ckpt";
pub const REFINE_CHECKPOINT: &str = "refine.ckpt";
pub const LOSS_CSV: &str = "loss.csv";
pub const REFINE_LOSS_CSV: &str = "refine_loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const PRED_SUFFIX: &str = ".pred.mvl";

#[derive(Parser, Debug)]
#[command(name = "refinegan", version, about = "Adversarial segmentation with error-mask refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Run config file with `key = value` lines
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file)
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Dataset directory containing manifest.txt
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Slicing plane
    #[arg(long, value_enum)]
    plane: Option<PlaneArg>,
    /// Extra config override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PlaneArg {
    Axial,
    Coronal,
    Sagittal,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SplitArg {
    All,
    Train,
    Val,
}

impl SplitArg {
    fn accepts(self, split: Split) -> bool {
        match self {
            SplitArg::All => true,
            SplitArg::Train => split == Split::Train,
            SplitArg::Val => split == Split::Val,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (MVOL files and manifest) to --out
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        patients: usize,
        #[arg(long, default_value_t = 16)]
        slices: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        channels: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// Target lesion fraction
        #[arg(long, default_value_t = 0.02)]
        fraction: f64,
        /// Lesion contrast in background standard deviations
        #[arg(long, default_value_t = 3.0)]
        contrast: f64,
    },
    /// Train generator and discriminator on the training split
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train the refinement network against a frozen generator
    Refine {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint written by `train`
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Segment volumes; writes <id>.pred.mvl label maps to --out
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long = "refine-checkpoint", value_name = "PATH")]
        refine_checkpoint: Option<PathBuf>,
        /// Single MVOL volume instead of the dataset in --data
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Compare predictions in --pred with the dataset truth; writes metrics.csv
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory with <id>.pred.mvl files
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Render loss curves (SVG) and metric tables (Markdown) from the CSVs in
    /// --data (default: --out)
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn keys_help() -> String {
    let mut s = String::from("Run config keys (`key = value`, `#` comments; flags override the file):\n");
    for (k, d) in refinegan_train::config::KEYS {
        s.push_str(&format!("  {k:<18} {d}\n"));
    }
    s.push_str(&format!("\nEnvironment:\n  {THREADS_ENV:<18} maximum worker threads\n"));
    s.push_str("\nExit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical divergence");
    s
}

/// Runs one command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let keys = keys_help();
    let mut cmd = Cli::command().after_help(keys.clone());
    for name in ["train", "refine", "predict", "evaluate"] {
        cmd = cmd.mut_subcommand(name, |c| c.after_help(keys.clone()));
    }
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { common, patients, slices, height, width, channels, classes, fraction, contrast } => {
            let spec = SynthSpec {
                n_patients: patients,
                slices,
                height,
                width,
                channels,
                class_count: classes,
                lesion_fraction: fraction,
                contrast,
                seed: common.seed.unwrap_or(SynthSpec::default().seed),
            };
            spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("data"));
            let ds = gen_dataset(&spec)?;
            ds.write(&out)?;
            eprintln!("wrote {} patients to {}", ds.records.len(), out.display());
            Ok(())
        }
        Command::Train { common } => cmd_train(&common),
        Command::Refine { common, checkpoint } => cmd_refine(&common, &checkpoint),
        Command::Predict { common, checkpoint, refine_checkpoint, input, split } => {
            cmd_predict(&common, &checkpoint, refine_checkpoint.as_deref(), input.as_deref(), split)
        }
        Command::Evaluate { common, pred, split } => cmd_evaluate(&common, &pred, split),
        Command::Report { common } => {
            let out = common.out.unwrap_or_else(|| PathBuf::from("out"));
            let input = common.data.unwrap_or_else(|| out.clone());
            report::render(&input, &out)
        }
    }
}

/// Config file, then `--set` pairs, then dedicated flags.
fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut pairs = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if let Some(d) = &common.data {
        pairs.push(("data".into(), d.display().to_string()));
    }
    if let Some(o) = &common.out {
        pairs.push(("out".into(), o.display().to_string()));
    }
    if let Some(p) = common.plane {
        let name = match p {
            PlaneArg::Axial => "axial",
            PlaneArg::Coronal => "coronal",
            PlaneArg::Sagittal => "sagittal",
        };
        pairs.push(("plane".into(), name.into()));
    }
    Ok(RunConfig::from_pairs(&pairs)?)
}

fn prepare_out(run: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&run.out)?;
    fs::write(run.out.join(format!("{command}.cfg")), run.to_text())?;
    Ok(())
}

fn training_slices(run: &RunConfig) -> Result<(Vec<PatientSlices>, refinegan_nets::NetConfig)> {
    let ds = Dataset::load(&run.data)?;
    let patients = ds
        .split(Split::Train)
        .into_iter()
        .map(|r| PatientSlices::from_record(r, run.plane))
        .collect::<refinegan_train::Result<Vec<_>>>()?;
    let cfg = dataset_net_config(run, &patients)?;
    Ok((patients, cfg))
}

fn cmd_train(common: &Common) -> Result<()> {
    let run = resolve_config(common)?;
    let (patients, net_cfg) = training_slices(&run)?;
    prepare_out(&run, "train")?;
    let ckpt_path = run.out.join(CGAN_CHECKPOINT);
    let result = train_cgan(&patients, &net_cfg, &run, |_, ck| Ok(ck.save(&ckpt_path)?))?;
    let file = fs::File::create(run.out.join(LOSS_CSV))?;
    write_loss_csv(std::io::BufWriter::new(file), &result.trace)?;
    if let Some(last) = result.trace.last() {
        eprintln!(
            "trained {} steps; last d_loss {:.4} g_adv {:.4} l1 {:.4}",
            result.trace.len(),
            last.d_loss,
            last.g_adv,
            last.l1
        );
    }
    Ok(())
}

fn cmd_refine(common: &Common, checkpoint: &Path) -> Result<()> {
    let run = resolve_config(common)?;
    let (patients, net_cfg) = training_slices(&run)?;
    let ck = Checkpoint::load(checkpoint)?;
    let mut generator = ck.restore::<f32>(GENERATOR, NetKind::Generator, &net_cfg)?;
    prepare_out(&run, "refine")?;
    let ckpt_path = run.out.join(REFINE_CHECKPOINT);
    let result = train_refinement(&mut generator, &patients, &net_cfg, &run, |_, ck| Ok(ck.save(&ckpt_path)?))?;
    let file = fs::File::create(run.out.join(REFINE_LOSS_CSV))?;
    write_refine_csv(std::io::BufWriter::new(file), &result.trace)?;
    if let Some(last) = result.trace.last() {
        eprintln!("trained refinement {} steps; last bce {:.4}", result.trace.len(), last.bce);
    }
    Ok(())
}

fn load_generator(path: &Path) -> Result<Network<f32>> {
    Ok(Checkpoint::load(path)?.network::<f32>(GENERATOR)?)
}

fn cmd_predict(
    common: &Common,
    checkpoint: &Path,
    refine_checkpoint: Option<&Path>,
    input: Option<&Path>,
    split: SplitArg,
) -> Result<()> {
    let run = resolve_config(common)?;
    let mut generator = load_generator(checkpoint)?;
    let mut refinement = match refine_checkpoint {
        Some(p) => {
            let r = Checkpoint::load(p)?.network::<f32>(REFINEMENT)?;
            let g = generator.config();
            let rc = r.config();
            if (rc.height, rc.width, rc.in_channels, rc.class_count) != (g.height, g.width, g.in_channels, g.class_count)
            {
                return Err(CliError::Data("refinement checkpoint does not match the generator".into()));
            }
            Some(r)
        }
        None => None,
    };
    prepare_out(&run, "predict")?;
    let volumes: Vec<(String, refinegan_core::Volume)> = match input {
        Some(p) => vec![(patient_id_from_path(p), read_mvol(p)?.into_volume()?)],
        None => {
            let ds = Dataset::load(&run.data)?;
            ds.records
                .into_iter()
                .zip(ds.manifest)
                .filter(|(_, m)| split.accepts(m.split))
                .map(|(r, m)| (m.patient_id, r.volume))
                .collect()
        }
    };
    for (id, volume) in volumes {
        let seg = predict(&mut generator, refinement.as_mut(), &volume, run.plane)?;
        write_mvol(&MvolObject::Labels(seg), run.out.join(format!("{id}{PRED_SUFFIX}")))?;
        eprintln!("predicted {id}");
    }
    Ok(())
}

/// Worker pool capped by `REFINEGAN_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Data(e.to_string()))
}

fn cmd_evaluate(common: &Common, pred_dir: &Path, split: SplitArg) -> Result<()> {
    let run = resolve_config(common)?;
    let ds = Dataset::load(&run.data)?;
    let cases: Vec<(&PatientRecord, String)> = ds
        .records
        .iter()
        .zip(&ds.manifest)
        .filter(|(_, m)| split.accepts(m.split))
        .map(|(r, m)| (r, m.patient_id.clone()))
        .collect();
    let pool = thread_pool()?;
    let rows: Vec<Result<(String, MetricReport)>> = pool.install(|| {
        cases
            .par_iter()
            .map(|(rec, id)| {
                let truth = rec
                    .truth
                    .as_ref()
                    .ok_or_else(|| CliError::Data(format!("patient {id} has no truth")))?;
                let pred_path = pred_dir.join(format!("{id}{PRED_SUFFIX}"));
                let pred: SegMap = read_mvol(&pred_path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", pred_path.display())))?
                    .into_labels()?;
                let s = rec.volume.spacing();
                let spacing = [s[0] as f64, s[1] as f64, s[2] as f64];
                Ok((id.clone(), evaluate(&pred, truth, spacing, &[])?))
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    prepare_out(&run, "evaluate")?;
    let file = fs::File::create(run.out.join(METRICS_CSV))?;
    write_metrics_csv(std::io::BufWriter::new(file), &rows)?;
    eprintln!("evaluated {} patients", rows.len());
    Ok(())
}
