//! Command-line surface. The config file is the source of truth; flags
//! override individual keys.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{analyze, emit_reports};
use crate::construct::{FeatureMatrix, FeatureTemplate};
use crate::dataset::{Dataset, LoadOptions, Schema};
use crate::error::{Error, Result};
use crate::pipeline::{
    run_on, save_training, train_and_evaluate, EvalReport, RunConfig, RunReport, FEATURES_FILE, METRICS_FILE,
    REPORT_FILE, TEMPLATE_FILE,
};

pub const ANALYSIS_DIR: &str = "analysis";

#[derive(Debug, Parser)]
#[command(name = "crossfeat", version, about = "Search, build and evaluate groupby-aggregate cross features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the schema, cardinalities, positive rate and task plan as JSON.
    Inspect(InspectArgs),
    /// Sample, search field pairs, select and write a feature template.
    Search(Common),
    /// Apply a template to the full data and write the feature matrix.
    Transform {
        #[command(flatten)]
        common: Common,
        /// Template file; defaults to <out>/template.json.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Train the configured learner on a feature matrix and write metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Feature matrix; defaults to <out>/features.csv.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Write combination-strength, sampling-study and curve reports.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        template: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides run.out.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config key, e.g. --set sampling.rate=0.1 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Exclude the row exactly one window before the current row.
    #[arg(long)]
    pub window_open_lower: bool,
    /// Data file; overrides data.path.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long, required_unless_present = "data")]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated categorical columns (without --config).
    #[arg(long, value_delimiter = ',', requires = "data")]
    pub categorical: Vec<String>,
    #[arg(long, default_value = "label")]
    pub label: String,
    #[arg(long)]
    pub timestamp: Option<String>,
}

impl Common {
    pub fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(out) = &self.out {
            o.push(format!("run.out={}", toml_string(&out.to_string_lossy())));
        }
        if let Some(seed) = self.seed {
            o.push(format!("run.seed={seed}"));
        }
        if let Some(p) = self.parallelism {
            o.push(format!("run.parallelism={p}"));
        }
        if self.window_open_lower {
            o.push("features.window_open_lower=true".into());
        }
        o
    }

    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config, &self.overrides())?;
        if let Some(d) = &self.data {
            cfg.data.path = Some(d.clone());
        }
        Ok(cfg)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_owned()).to_string()
}

fn init_logging() {
    let env = env_logger::Env::default().default_filter_or("info");
    let _ = env_logger::Builder::from_env(env).format_target(false).try_init();
}

/// Parse `args` (including the program name), run and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

fn out_dir(cfg: &RunConfig) -> &Path {
    &cfg.run.out
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Inspect(args) => inspect(&args),
        Command::Search(common) => {
            let cfg = common.load()?;
            let data = cfg.load_data()?;
            let out = run_on(&data, &cfg)?;
            out.save(out_dir(&cfg))?;
            log::info!("{} features -> {}", out.template.features.len(), out_dir(&cfg).join(TEMPLATE_FILE).display());
            Ok(())
        }
        Command::Transform { common, template } => {
            let cfg = common.load()?;
            let path = template.unwrap_or_else(|| out_dir(&cfg).join(TEMPLATE_FILE));
            let template = FeatureTemplate::load(&path)?;
            let data = cfg.load_data()?;
            let features = crate::construct::apply_template(&data, &template)?;
            let dir = out_dir(&cfg);
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            features.write_csv(dir.join(FEATURES_FILE), b',')?;
            log::info!("{} rows x {} features -> {}", features.n_rows, features.n_cols(), dir.join(FEATURES_FILE).display());
            Ok(())
        }
        Command::Train { common, features } => {
            let cfg = common.load()?;
            let path = features.unwrap_or_else(|| out_dir(&cfg).join(FEATURES_FILE));
            let x = FeatureMatrix::read_csv(&path, b',')?;
            let data = cfg.load_data()?;
            let (model, report) = train_and_evaluate(&x, &data, &cfg.train)?;
            save_training(out_dir(&cfg), &model, &report)?;
            log::info!("test auc {:.5}", report.auc_test);
            Ok(())
        }
        Command::Analyze { common, template } => {
            let cfg = common.load()?;
            let dir = out_dir(&cfg);
            let template = FeatureTemplate::load(template.unwrap_or_else(|| dir.join(TEMPLATE_FILE)))?;
            let report_path = dir.join(REPORT_FILE);
            let report = if report_path.exists() { Some(RunReport::load(&report_path)?) } else { None };
            let metrics_path = dir.join(METRICS_FILE);
            let evaluations = if metrics_path.exists() {
                let r: EvalReport = read_json(&metrics_path)?;
                vec![(format!("{:?}", r.learner).to_lowercase(), r)]
            } else {
                Vec::new()
            };
            let data = cfg.load_data()?;
            let artifacts = analyze(&data, &cfg, &template, report, evaluations)?;
            let written = emit_reports(&artifacts, dir.join(ANALYSIS_DIR))?;
            log::info!("wrote {}", written.join(", "));
            Ok(())
        }
    }
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let (data, cfg) = match &args.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path, &args.set)?;
            if let Some(d) = &args.data {
                cfg.data.path = Some(d.clone());
            }
            (cfg.load_data()?, Some(cfg))
        }
        None => {
            let path = args.data.as_ref().ok_or_else(|| Error::config("inspect needs --config or --data"))?;
            if args.categorical.is_empty() {
                return Err(Error::config("--categorical is required without --config"));
            }
            let mut schema = Schema::new(args.categorical.clone(), &args.label);
            if let Some(ts) = &args.timestamp {
                schema = schema.with_timestamp(ts);
            }
            (Dataset::load(path, &schema, LoadOptions::default())?, None)
        }
    };
    let mut doc = serde_json::json!({
        "schema": data.schema(),
        "profile": data.profile(),
    });
    if let Some(cfg) = cfg {
        let tasks: Vec<String> = cfg.plan_tasks()?.iter().map(|t| t.name(&data)).collect();
        doc["tasks"] = serde_json::json!(tasks);
        doc["search_space"] = serde_json::to_value(cfg.search_space()?)?;
    }
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}
