//! The `aisc` command-line tool.
//!
//! Configuration precedence: command-line flags, then the TOML file given by
//! `--config` (`[synth]`, `[train]` and `[eval]` tables), then built-in
//! defaults. Every artifact carries the effective configuration.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 usage or configuration
//! error, 3 data error, 4 numerical degeneracy, 5 divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{self, assign_folds, generate_synthetic, load_dataset, save_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{ablation, config_echo, cross_validate};
use crate::gradcheck::{self, GradcheckConfig};
use crate::grassmann::Aisc;
use crate::network::{train, FusionMode, TrainConfig};

/// Exit status of a gradient check that ran but did not pass.
pub const EXIT_CHECK_FAILED: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "aisc", version, about = "Affine-invariant landmark shape comparison and kinship verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare two landmark files and print the feature norm and principal angles.
    Compare(CompareArgs),
    /// Check both backward paths against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic kinship dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(RunArgs),
    /// k-fold cross-validation report.
    Eval(RunArgs),
    /// Appearance-only / shape-only / fused accuracies.
    Ablate(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub shape_a: PathBuf,
    pub shape_b: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    pub centering: Switch,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Landmark counts, cycled through the trials.
    #[arg(long = "m", value_delimiter = ',', default_values_t = [5usize, 10, 68])]
    pub landmark_counts: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "on")]
    pub centering: Switch,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub families: Option<usize>,
    /// Landmark file used as the template instead of the bundled face.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Number of folds written into the manifest.
    #[arg(short = 'k', long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// Number of folds; folds already in the manifest are used when they match.
    #[arg(short = 'k', long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Permute labels before training (null control).
    #[arg(long)]
    pub shuffle_labels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Score,
    Concat,
}

/// Cross-validation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub folds: usize,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { folds: 5, jobs: 1 }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Parses `args` (including the program name) and runs the command.
///
/// Returns the process exit code. Usage errors are reported before anything
/// is read or written.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return e.exit_code();
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    let text = match command {
        Command::Compare(a) => compare(&a)?,
        Command::Gradcheck(a) => {
            let (text, passed) = run_gradcheck(&a)?;
            emit(out, &text)?;
            return Ok(if passed { 0 } else { EXIT_CHECK_FAILED });
        }
        Command::Synth(a) => synth(&a)?,
        Command::Train(a) => run_train(&a)?,
        Command::Eval(a) => run_eval(&a)?,
        Command::Ablate(a) => run_ablate(&a)?,
    };
    emit(out, &text)?;
    Ok(0)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
    parts.join(",")
}

pub fn compare(a: &CompareArgs) -> Result<String> {
    let s0 = data::load_landmarks(&a.shape_a)?;
    let s1 = data::load_landmarks(&a.shape_b)?;
    let aisc = Aisc::new(a.centering.on());
    let (feature, d0, d1) = aisc.forward_with_decompositions(&s0, &s1)?;
    let info = aisc.geodesic_info(&feature, &d0, &d1)?;
    let mut s = String::new();
    let _ = writeln!(s, "landmarks={}", s0.landmark_count());
    let _ = writeln!(s, "centering={}", a.centering.on());
    let _ = writeln!(s, "frobenius_norm={:?}", feature.frobenius_norm());
    let _ = writeln!(s, "principal_cosines={}", fmt_list(&info.principal_cosines));
    let _ = writeln!(s, "principal_angles={}", fmt_list(&info.principal_angles()));
    Ok(s)
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<(String, bool)> {
    let config = GradcheckConfig {
        seed: a.seed,
        landmark_counts: a.landmark_counts.clone(),
        trials: a.trials,
        centering: a.centering.on(),
        ..GradcheckConfig::default()
    };
    let summary = gradcheck::run(&config)?;
    let mut text = summary.to_table();
    text.push_str("\n[config]\n");
    text.push_str(&config_echo(&config));
    Ok((text, summary.passed()))
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: &SynthArgs) -> Result<String> {
    let mut file = FileConfig::load(a.config.as_deref())?;
    let config = &mut file.synth;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(n) = a.families {
        config.family_count = n;
    }
    if let Some(k) = a.folds {
        file.eval.folds = k;
    }
    if let Some(path) = &a.template {
        file.synth.template = Some(data::load_landmarks(path)?);
    }
    file.synth.validate()?;
    let mut samples = generate_synthetic(&file.synth)?;
    assign_folds(&mut samples, file.eval.folds, file.synth.seed)?;
    create_out_dir(&a.out)?;
    save_dataset(&samples, &a.out)?;
    let echo = file.to_toml();
    write_file(&a.out.join("config.toml"), &echo)?;
    Ok(format!(
        "pairs={}\nout={}\n\n{}",
        samples.len(),
        a.out.display(),
        echo
    ))
}

/// Effective configuration of a train/eval/ablate run.
fn run_config(a: &RunArgs) -> Result<FileConfig> {
    let mut file = FileConfig::load(a.config.as_deref())?;
    let t = &mut file.train;
    if let Some(seed) = a.seed {
        t.seed = seed;
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(lr) = a.lr {
        t.learning_rate = lr;
    }
    if let Some(f) = a.fusion {
        t.fusion = match f {
            FusionArg::Score => FusionMode::Score,
            FusionArg::Concat => FusionMode::Concat,
        };
    }
    if let Some(k) = a.folds {
        file.eval.folds = k;
    }
    if let Some(j) = a.jobs {
        file.eval.jobs = j;
    }
    file.train.validate()?;
    if file.eval.jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    Ok(file)
}

fn load_run_data(a: &RunArgs, file: &FileConfig, need_folds: bool) -> Result<Vec<data::PairSample>> {
    let mut samples = load_dataset(&a.data)?;
    if a.shuffle_labels {
        samples = data::shuffle_labels(&samples, file.train.seed);
    }
    if need_folds && data::validate_folds(&samples, file.eval.folds).is_err() {
        assign_folds(&mut samples, file.eval.folds, file.train.seed)?;
    }
    Ok(samples)
}

fn run_train(a: &RunArgs) -> Result<String> {
    let file = run_config(a)?;
    let samples = load_run_data(a, &file, false)?;
    let (model, history) = train(&samples, &file.train)?;
    create_out_dir(&a.out)?;
    save_checkpoint(&model, a.out.join("model.ckpt"))?;

    let mut h = String::from("[history]\n");
    for s in &history {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_else(|| "none".into());
        let _ = writeln!(
            h,
            "epoch={} shape_loss={} appearance_loss={} joint_loss={} shape_input_grad_norm={}",
            s.epoch,
            opt(s.shape_loss),
            opt(s.appearance_loss),
            opt(s.joint_loss),
            opt(s.shape_input_grad_norm)
        );
    }
    let correct = samples
        .iter()
        .map(|s| model.predict(s).map(|p| p.is_kin() == (s.label == data::Label::Kin)))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&c| c)
        .count();
    let _ = writeln!(h, "\n[summary]\npairs={}", samples.len());
    let _ = writeln!(h, "train_accuracy={:?}", correct as f64 / samples.len() as f64);
    let _ = writeln!(h, "shuffle_labels={}", a.shuffle_labels);
    h.push_str("\n[train]\n");
    h.push_str(&config_echo(&file.train));
    write_file(&a.out.join("history.txt"), &h)?;
    Ok(h)
}

fn run_eval(a: &RunArgs) -> Result<String> {
    let file = run_config(a)?;
    let samples = load_run_data(a, &file, true)?;
    let report = cross_validate(&samples, &file.train, file.eval.folds, file.eval.jobs)?;
    create_out_dir(&a.out)?;
    let mut text = report.to_text();
    let _ = writeln!(text, "shuffle_labels={}", a.shuffle_labels);
    write_file(&a.out.join("report.txt"), &text)?;
    write_file(&a.out.join("report.json"), &report.to_json())?;
    Ok(text)
}

fn run_ablate(a: &RunArgs) -> Result<String> {
    let file = run_config(a)?;
    let samples = load_run_data(a, &file, true)?;
    let table = ablation(&samples, &file.train, file.eval.folds, file.eval.jobs)?;
    create_out_dir(&a.out)?;
    let mut text = table.to_text();
    text.push('\n');
    text.push_str(&table.report.to_text());
    write_file(&a.out.join("ablation.txt"), &text)?;
    write_file(&a.out.join("ablation.json"), &serde_json::to_string_pretty(&table).expect("table serialises"))?;
    Ok(text)
}
