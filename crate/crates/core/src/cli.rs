//! Command-line front end. Every subcommand reads a flat JSON config
//! (`--config`) and `--key value` overrides; nested settings use dotted
//! keys such as `--components.vsa false`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::dataio::{import_to, load_dataset, synth_write, Dims, SynthConfig};
use crate::diagnostics::{check_hyper, gradcheck_suite, worst, CheckKind, CheckLine};
use crate::error::{HireError, Result};
use crate::evaluator::{
    check_expectations, evaluate, run_ablation, AblationSpec, EvalReport, Expectations, Shortfall,
};
use crate::model::{load_checkpoint, HireModel, HyperParams};
use crate::numcore::DEFAULT_STEP;
use crate::trainer::{train, TrainConfig, BEST_CHECKPOINT, LAST_CHECKPOINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Per-op and end-to-end gradient error limit of `gradcheck`.
pub const GRADCHECK_LIMIT: f64 = 1e-4;

pub const CONFIG_FILE: &str = "config.json";
pub const EVAL_FILE: &str = "eval.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_TABLE_FILE: &str = "ablation.txt";
pub const GRADCHECK_FILE: &str = "gradcheck.json";

#[derive(Parser, Debug)]
#[command(name = "hire", version, about = "Image-text matching with intra- and inter-modal interaction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON config file; later `--key value` pairs override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one directional model.
    Train(Common),
    /// Recall@K of one model, or of two models and their ensemble.
    Eval(Common),
    /// Finite-difference check of every op, layer and the full loss.
    Gradcheck(Common),
    /// Write a synthetic dataset.
    Synth(Common),
    /// Retrain and evaluate ordering and component variants.
    Ablate(Common),
    /// Convert a NumPy feature dump to the native format.
    Import(Common),
}

/// Paths, seeds and evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub train_data: PathBuf,
    pub val_data: Option<PathBuf>,
    /// Evaluation split; defaults to `val_data`, then `train_data`.
    pub eval_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Parameter initialization seed.
    pub seed: u64,
    pub folds: Option<usize>,
    /// JSON file of minimum recalls per report row.
    pub expectations: Option<PathBuf>,
    /// Checkpoints for `eval`; empty means the run's own best checkpoint.
    pub checkpoints: Vec<PathBuf>,
    /// Variants for `ablate`; absent means the standard nine.
    pub ablation: Option<Vec<AblationSpec>>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            train_data: PathBuf::from("data/train"),
            val_data: None,
            eval_data: None,
            out_dir: PathBuf::from("runs"),
            seed: 0,
            folds: None,
            expectations: None,
            checkpoints: Vec::new(),
            ablation: None,
        }
    }
}

/// Keys that do not change what a training run produces.
const UNHASHED: [&str; 6] = ["eval_data", "out_dir", "folds", "expectations", "checkpoints", "ablation"];

/// Everything `train`, `eval`, `gradcheck` and `ablate` read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub run: RunSettings,
    pub model: HyperParams,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub seed: u64,
    pub images: usize,
    pub captions_per_image: usize,
    /// Defaults to a quarter of `images`, at least two.
    pub val_images: Option<usize>,
    /// `toy` or `full` geometry.
    pub dims: String,
    pub out: PathBuf,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            seed: 7,
            images: 32,
            captions_per_image: 1,
            val_images: None,
            dims: "toy".into(),
            out: PathBuf::from("data"),
        }
    }
}

impl SynthSettings {
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let dims = match self.dims.as_str() {
            "toy" => Dims::TOY,
            "full" => Dims::FULL,
            other => return Err(HireError::Config(format!("dims must be \"toy\" or \"full\", got {other:?}"))),
        };
        let mut cfg = SynthConfig::new(self.seed, self.images, self.captions_per_image, dims);
        if let Some(v) = self.val_images {
            cfg.val_images = v;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportSettings {
    pub src: PathBuf,
    pub out: PathBuf,
    pub split: String,
}

impl Default for ImportSettings {
    fn default() -> Self {
        ImportSettings {
            src: PathBuf::from("dump"),
            out: PathBuf::from("data/train"),
            split: "train".into(),
        }
    }
}

fn object_of<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("settings serialize to objects"),
    }
}

fn config_err(msg: impl Into<String>) -> HireError {
    HireError::Config(msg.into())
}

/// Reads `--key value` pairs. A value that parses as JSON is used as such,
/// anything else as a string.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| config_err(format!("expected --key, got {flag:?}")))?;
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| config_err(format!("missing value for --{key}")))?;
                (key.to_string(), v.clone())
            }
        };
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Config file entries with overrides applied on top.
fn merged(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Map<String, Value>> {
    let mut flat = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            match serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))? {
                Value::Object(m) => m,
                _ => return Err(config_err(format!("{}: expected a JSON object", p.display()))),
            }
        }
        None => Map::new(),
    };
    for (key, value) in overrides {
        match key.split_once('.') {
            Some((outer, inner)) => {
                let slot = flat.entry(outer.to_string()).or_insert_with(|| Value::Object(Map::new()));
                match slot {
                    Value::Object(m) => {
                        m.insert(inner.to_string(), value.clone());
                    }
                    _ => return Err(config_err(format!("--{key}: {outer} is not a nested setting"))),
                }
            }
            None => {
                flat.insert(key.clone(), value.clone());
            }
        }
    }
    Ok(flat)
}

/// Deserializes one section, naming the offending key on failure.
fn section<T: DeserializeOwned + Serialize + Default>(entries: Map<String, Value>) -> Result<T> {
    match serde_json::from_value(Value::Object(entries.clone())) {
        Ok(v) => Ok(v),
        Err(e) => {
            let defaults = object_of(&T::default());
            for (k, v) in &entries {
                let mut one = defaults.clone();
                one.insert(k.clone(), v.clone());
                if let Err(inner) = serde_json::from_value::<T>(Value::Object(one)) {
                    return Err(config_err(format!("key {k:?}: {inner}")));
                }
            }
            Err(config_err(e.to_string()))
        }
    }
}

/// Routes flat entries to sections by key name. Unknown keys are errors.
fn split_flat(flat: Map<String, Value>, keysets: &[Map<String, Value>]) -> Result<Vec<Map<String, Value>>> {
    let mut parts = vec![Map::new(); keysets.len()];
    for (k, v) in flat {
        let i = keysets
            .iter()
            .position(|ks| ks.contains_key(&k))
            .ok_or_else(|| config_err(format!("unknown config key {k:?}")))?;
        parts[i].insert(k, v);
    }
    Ok(parts)
}

impl RunConfig {
    pub fn from_flat(flat: Map<String, Value>) -> Result<Self> {
        let keys = [
            object_of(&RunSettings::default()),
            object_of(&HyperParams::default()),
            object_of(&TrainConfig::default()),
        ];
        let mut parts = split_flat(flat, &keys)?.into_iter();
        let cfg = RunConfig {
            run: section(parts.next().unwrap_or_default())?,
            model: section(parts.next().unwrap_or_default())?,
            train: section(parts.next().unwrap_or_default())?,
        };
        Ok(cfg)
    }

    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        Self::from_flat(merged(file, overrides)?)
    }

    /// All settings as one flat object.
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut m = object_of(&self.run);
        m.extend(object_of(&self.model));
        m.extend(object_of(&self.train));
        m
    }

    /// First 12 hex digits of the SHA-256 of the settings that affect
    /// training.
    pub fn hash(&self) -> String {
        let mut flat = self.to_flat();
        for k in UNHASHED {
            flat.remove(k);
        }
        let sorted: std::collections::BTreeMap<_, _> = flat.into_iter().collect();
        let bytes = serde_json::to_vec(&sorted).expect("settings serialize");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `<out_dir>/<hash>-s<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.run.out_dir.join(format!("{}-s{}", self.hash(), self.run.seed))
    }

    pub fn eval_path(&self) -> &Path {
        self.run
            .eval_data
            .as_deref()
            .or(self.run.val_data.as_deref())
            .unwrap_or(&self.run.train_data)
    }

    fn write_config(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(CONFIG_FILE), &self.to_flat())
    }
}

impl Common {
    /// Config entries with overrides applied; `--config` may also appear
    /// among the trailing pairs.
    fn flat(&self) -> Result<Map<String, Value>> {
        let mut file = self.config.clone();
        let mut rest = Vec::new();
        for (k, v) in parse_overrides(&self.overrides)? {
            match (k.as_str(), v) {
                ("config", Value::String(p)) => file = Some(PathBuf::from(p)),
                ("config", other) => return Err(config_err(format!("--config expects a path, got {other}"))),
                (_, v) => rest.push((k, v)),
            }
        }
        merged(file.as_deref(), &rest)
    }
}

fn resolve_simple<T: DeserializeOwned + Serialize + Default>(common: &Common) -> Result<T> {
    let flat = common.flat()?;
    let part = split_flat(flat, &[object_of(&T::default())])?.pop().unwrap_or_default();
    section(part)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HireError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HireError::io(path, e))
}

fn cmd_train(cfg: &RunConfig) -> Result<i32> {
    cfg.train.validate()?;
    let train_set = load_dataset(&cfg.run.train_data)?;
    let val_set = cfg.run.val_data.as_deref().map(load_dataset).transpose()?;
    let mut model = HireModel::new(
        cfg.model.clone(),
        train_set.dims.region_dim,
        train_set.dims.word_dim,
        cfg.run.seed,
    )?;
    let dir = cfg.run_dir();
    cfg.write_config(&dir)?;
    let out = train(&mut model, &train_set, val_set.as_ref(), &cfg.train, Some(&dir))?;
    for r in &out.log {
        let val = r.val.as_ref().map_or(String::new(), |v| format!(" rsum {:.1}", v.rsum));
        eprintln!("epoch {:>3} lr {:.1e} loss {:.4}{val}{}", r.epoch, r.lr, r.loss, if r.best { " *" } else { "" });
    }
    println!("{}", dir.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    report: &'a EvalReport,
    shortfalls: &'a [Shortfall],
}

fn cmd_eval(cfg: &RunConfig) -> Result<i32> {
    let dir = cfg.run_dir();
    let paths: Vec<PathBuf> = if cfg.run.checkpoints.is_empty() {
        let best = dir.join(BEST_CHECKPOINT);
        vec![if best.exists() { best } else { dir.join(LAST_CHECKPOINT) }]
    } else {
        cfg.run.checkpoints.clone()
    };
    let models = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    let ds = load_dataset(cfg.eval_path())?;
    let refs: Vec<&HireModel> = models.iter().collect();
    let report = evaluate(&refs, &ds, cfg.run.folds)?;
    print!("{}", report.table());
    let shortfalls = match &cfg.run.expectations {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| HireError::io(p, e))?;
            let exp: Expectations = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            check_expectations(&report, &exp)?
        }
        None => Vec::new(),
    };
    for s in &shortfalls {
        println!("MISSED {} {}: {:.2} < {:.2}", s.row, s.field, s.actual, s.expected);
    }
    write_json(
        &dir.join(EVAL_FILE),
        &EvalOutput {
            report: &report,
            shortfalls: &shortfalls,
        },
    )?;
    Ok(if shortfalls.is_empty() { EXIT_OK } else { EXIT_FAILURE })
}

/// Runs the gradient suite with the mode flags of `cfg` at the check
/// geometry. Always in f64.
pub fn gradcheck_lines(cfg: &RunConfig) -> Result<Vec<CheckLine>> {
    let toy = check_hyper();
    let base = HyperParams {
        d_model: toy.d_model,
        heads: toy.heads,
        d_map: toy.d_map,
        d_ff: None,
        ..cfg.model.clone()
    };
    gradcheck_suite(&base, cfg.run.seed, DEFAULT_STEP)
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<i32> {
    let lines = gradcheck_lines(cfg)?;
    for l in &lines {
        let kind = match l.kind {
            CheckKind::Op => "op",
            CheckKind::Layer => "layer",
            CheckKind::EndToEnd => "e2e",
        };
        println!("{kind:<6} {:<32} {:>10.3e}  ({} compared, {} at kinks)", l.name, l.max_rel_error, l.compared, l.excluded);
    }
    let worst_all = [CheckKind::Op, CheckKind::Layer, CheckKind::EndToEnd]
        .iter()
        .map(|&k| worst(&lines, k))
        .fold(0.0, f64::max);
    println!("max relative error {worst_all:.3e} (limit {GRADCHECK_LIMIT:.0e})");
    write_json(&cfg.run_dir().join(GRADCHECK_FILE), &lines)?;
    Ok(if worst_all <= GRADCHECK_LIMIT { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_ablate(cfg: &RunConfig) -> Result<i32> {
    let specs = cfg.run.ablation.clone().unwrap_or_else(AblationSpec::standard);
    for s in &specs {
        s.components()?;
    }
    let train_set = load_dataset(&cfg.run.train_data)?;
    let eval_set = load_dataset(cfg.eval_path())?;
    let table = run_ablation(&cfg.model, &cfg.train, cfg.run.seed, &specs, &train_set, &eval_set)?;
    let text = table.table();
    print!("{text}");
    let dir = cfg.run_dir();
    write_json(&dir.join(ABLATION_FILE), &table)?;
    fs::write(dir.join(ABLATION_TABLE_FILE), &text).map_err(|e| HireError::io(dir.join(ABLATION_TABLE_FILE), e))?;
    Ok(if table.gradients_isolated() { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_synth(s: &SynthSettings) -> Result<i32> {
    let data = synth_write(&s.synth_config()?, &s.out)?;
    println!(
        "{}: {} train / {} val images",
        s.out.display(),
        data.train.images.len(),
        data.val.images.len()
    );
    Ok(EXIT_OK)
}

fn cmd_import(s: &ImportSettings) -> Result<i32> {
    let ds = import_to(&s.src, &s.out, &s.split)?;
    println!(
        "{}: {} images, {} sentences",
        s.out.display(),
        ds.images.len(),
        ds.sentences.len()
    );
    Ok(EXIT_OK)
}

fn dispatch(cmd: &Command) -> Result<i32> {
    let run = |c: &Common| RunConfig::from_flat(c.flat()?);
    match cmd {
        Command::Train(c) => cmd_train(&run(c)?),
        Command::Eval(c) => cmd_eval(&run(c)?),
        Command::Gradcheck(c) => cmd_gradcheck(&run(c)?),
        Command::Ablate(c) => cmd_ablate(&run(c)?),
        Command::Synth(c) => cmd_synth(&resolve_simple(c)?),
        Command::Import(c) => cmd_import(&resolve_simple(c)?),
    }
}

/// Exit code for an error: configuration problems are 2, the rest 1.
pub fn exit_code(err: &HireError) -> i32 {
    match err {
        HireError::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
