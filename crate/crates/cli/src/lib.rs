//! The `adaptest` command line: `calibrate`, `simulate` and `analyze`.
//!
//! Settings come from a flat `key = value` file (`--config`), then from
//! repeated `--set key=value`, then from dedicated flags. Later sources win.
//! Every output is computed in memory first and then written through a
//! temporary file in the output directory that is renamed into place, so a
//! failed run leaves no new files behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use adaptest_core::analytics::report::{AnalysisConfig, AnalysisReport};
use adaptest_core::analytics::{fmt3, CarResult};
use adaptest_core::calibration::{calibrate, CalibrationConfig, ResponseMatrix, Scope};
use adaptest_core::simulation::{
    derive_seed, generate_population, run_campaign_with, BehaviorConfig, CampaignPlan, PopulationConfig,
    DEFAULT_GUESS_FLOOR, DEFAULT_PERIOD_TAG,
};
use adaptest_core::{ItemBank, Method, Prior, ResponseLog, SectionId, SessionConfig};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "adaptest", version, about = "Adaptive testing on the 2PL model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate item parameters from a response log or compact matrix.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Response log or compact `examinee_id,item_id,delta` CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Item bank giving section membership.
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Run a seeded campaign of simulated adaptive sessions.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Summarize a response log against its item bank.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` settings file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a single setting.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

const COMMON_KEYS: [&str; 2] = ["seed", "out"];

const CALIBRATE_KEYS: [&str; 9] = [
    "input",
    "bank",
    "scope",
    "prior_b_mean",
    "prior_b_sd",
    "prior_log_a_mean",
    "prior_log_a_sd",
    "tol",
    "max_iter",
];

const SIMULATE_KEYS: [&str; 13] = [
    "bank",
    "n",
    "theta_mean",
    "theta_sd",
    "k",
    "sections",
    "sessions_per_examinee",
    "period_tags",
    "method",
    "prior_mean",
    "prior_sd",
    "guess_floor",
    "abandon_prob",
];

const ANALYZE_KEYS: [&str; 6] = ["log", "bank", "k", "level", "top_n", "base_points"];

pub const LOG_FILE: &str = "log.csv";
pub const BANK_FILE: &str = "bank.json";
pub const CALIBRATION_REPORT_FILE: &str = "calibration_report.csv";

/// Parses a flat settings file. Blank lines and lines starting with `#`
/// are skipped; duplicate keys keep the last value.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = split_pair(line).with_context(|| format!("config line {}", n + 1))?;
        out.insert(key, value);
    }
    Ok(out)
}

fn split_pair(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected key=value, got '{s}'"))?;
    let k = k.trim();
    if k.is_empty() {
        bail!("empty key in '{s}'");
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Merged settings for one subcommand.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn gather(common: &Common, allowed: &[&str], flags: &[(&str, &Option<PathBuf>)]) -> Result<Self> {
        let mut values = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => BTreeMap::new(),
        };
        for s in &common.set {
            let (k, v) = split_pair(s).context("--set")?;
            values.insert(k, v);
        }
        for key in values.keys() {
            if !allowed.contains(&key.as_str()) && !COMMON_KEYS.contains(&key.as_str()) {
                bail!("unknown setting '{key}' (expected one of {})", allowed.join(", "));
            }
        }
        if let Some(seed) = common.seed {
            values.insert("seed".into(), seed.to_string());
        }
        if let Some(out) = &common.out {
            values.insert("out".into(), out.display().to_string());
        }
        for (key, flag) in flags {
            if let Some(p) = flag {
                values.insert(key.to_string(), p.display().to_string());
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("setting {key}='{v}': {e}")))
            .transpose()
    }

    fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T>(&self, key: &str) -> Result<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("missing required setting '{key}'"))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| anyhow!("missing required setting '{key}'"))
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { common, input, bank } => {
            let s = Settings::gather(&common, &CALIBRATE_KEYS, &[("input", &input), ("bank", &bank)])?;
            run_calibrate(&s)
        }
        Command::Simulate { common, bank } => {
            let s = Settings::gather(&common, &SIMULATE_KEYS, &[("bank", &bank)])?;
            run_simulate(&s)
        }
        Command::Analyze { common, log, bank } => {
            let s = Settings::gather(&common, &ANALYZE_KEYS, &[("log", &log), ("bank", &bank)])?;
            run_analyze(&s)
        }
    }
}

fn load_bank(path: &Path) -> Result<ItemBank> {
    ItemBank::load(path).with_context(|| format!("loading bank {}", path.display()))
}

fn read_log(path: &Path) -> Result<ResponseLog> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = ResponseLog::read_csv(file).with_context(|| format!("reading log {}", path.display()))?;
    if log.is_empty() {
        bail!("{} has no records", path.display());
    }
    Ok(log)
}

fn read_matrix(path: &Path, bank: Option<&ItemBank>) -> Result<ResponseMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or("").trim();
    let matrix = if header.starts_with("examinee_id,session_id") {
        let log = ResponseLog::read_csv(text.as_bytes()).with_context(|| format!("reading log {}", path.display()))?;
        ResponseMatrix::from_log_first_answers(&log, bank)
    } else if header.starts_with("examinee_id,item_id") {
        let mut m = ResponseMatrix::read_compact_csv(text.as_bytes())
            .with_context(|| format!("reading matrix {}", path.display()))?;
        if let Some(bank) = bank {
            m.assign_sections_from(bank);
        }
        m
    } else if header.is_empty() {
        bail!("{} is empty", path.display());
    } else {
        bail!("{}: unrecognized header '{header}'", path.display());
    };
    if matrix.is_empty() {
        bail!("{} has no responses", path.display());
    }
    Ok(matrix)
}

fn run_calibrate(s: &Settings) -> Result<()> {
    let out = s.require_path("out")?;
    let input = s.require_path("input")?;
    let bank_path = s.path("bank");
    let mut inputs = vec![input.clone()];
    inputs.extend(bank_path.clone());
    check_distinct(&inputs, &out, &[BANK_FILE, CALIBRATION_REPORT_FILE])?;

    let defaults = CalibrationConfig::default();
    let scope = match s.raw("scope").unwrap_or("all") {
        "all" => Scope::AllItems,
        v => Scope::SectionItems(
            v.parse::<SectionId>()
                .map_err(|_| anyhow!("scope must be 'all' or a section id, got '{v}'"))?,
        ),
    };
    let config = CalibrationConfig {
        prior_b: Prior::new(
            s.get_or("prior_b_mean", defaults.prior_b.mean())?,
            s.get_or("prior_b_sd", defaults.prior_b.sd())?,
        )?,
        prior_log_a: Prior::new(
            s.get_or("prior_log_a_mean", defaults.prior_log_a.mean())?,
            s.get_or("prior_log_a_sd", defaults.prior_log_a.sd())?,
        )?,
        scope,
        tol: s.get_or("tol", defaults.tol)?,
        max_iter: s.get_or("max_iter", defaults.max_iter)?,
    };
    config.validate()?;
    if matches!(scope, Scope::SectionItems(_)) && bank_path.is_none() {
        bail!("a section scope needs --bank for section membership");
    }

    let bank = bank_path.as_deref().map(load_bank).transpose()?;
    let matrix = read_matrix(&input, bank.as_ref())?;
    let result = calibrate(&matrix, &config)?;
    for id in result.degenerate_items() {
        eprintln!("warning: item {id} has all-correct or all-incorrect responses; its estimate rests on the prior");
    }
    let calibrated = result.to_bank()?;
    write_outputs(
        &out,
        &[
            (BANK_FILE, calibrated.to_json()),
            (CALIBRATION_REPORT_FILE, result.report_csv()),
        ],
    )
}

fn run_simulate(s: &Settings) -> Result<()> {
    let seed: u64 = s
        .get("seed")?
        .ok_or_else(|| anyhow!("simulate needs a seed (--seed or seed= in the config)"))?;
    let out = s.require_path("out")?;
    let bank_path = s.require_path("bank")?;
    check_distinct(std::slice::from_ref(&bank_path), &out, &[LOG_FILE])?;

    let bank = load_bank(&bank_path)?;
    for w in bank.warnings() {
        eprintln!("warning: {w}");
    }
    let sections: Vec<SectionId> = match s.list("sections") {
        Some(list) => list
            .iter()
            .map(|v| v.parse().map_err(|_| anyhow!("bad section id '{v}'")))
            .collect::<Result<_>>()?,
        None => bank.section_ids().collect(),
    };
    let first = *sections.first().ok_or_else(|| anyhow!("no sections to simulate"))?;
    let method: Method = s.get_or("method", Method::Map)?;
    let prior = Prior::new(s.get_or("prior_mean", 0.0)?, s.get_or("prior_sd", 1.0)?)?;
    let session = SessionConfig::new(s.require("k")?, first, seed)?
        .with_method(method)
        .with_prior(prior);
    let behavior = BehaviorConfig {
        guess_floor: s.get_or("guess_floor", DEFAULT_GUESS_FLOOR)?,
        abandon_prob: s.get_or("abandon_prob", 0.0)?,
    };
    let plan = CampaignPlan {
        sections,
        sessions_per_examinee: s.get_or("sessions_per_examinee", 1)?,
        period_tags: s.list("period_tags").unwrap_or_else(|| vec![DEFAULT_PERIOD_TAG.to_string()]),
    };
    let population = generate_population(&PopulationConfig {
        n: s.require("n")?,
        theta_mean: s.get_or("theta_mean", 0.0)?,
        theta_sd: s.get_or("theta_sd", 1.0)?,
        seed: derive_seed(seed, 0, 0),
    })?;
    let log = run_campaign_with(&bank, &population, &session, &behavior, &plan)?;
    write_outputs(&out, &[(LOG_FILE, log.to_csv_string())])?;
    let correct = log.iter().filter(|r| r.outcome.is_correct()).count() as u64;
    let car = CarResult::new(correct, log.len() as u64, 0.95)?;
    println!(
        "{} records, car {} (95% ci [{}, {}])",
        log.len(),
        fmt3(car.rate),
        fmt3(car.ci_low),
        fmt3(car.ci_high)
    );
    Ok(())
}

fn run_analyze(s: &Settings) -> Result<()> {
    let out = s.require_path("out")?;
    let log_path = s.require_path("log")?;
    let bank_path = s
        .path("bank")
        .ok_or_else(|| anyhow!("analyze needs --bank for item sections"))?;
    let names = adaptest_core::analytics::report::REPORT_FILES;
    check_distinct(&[log_path.clone(), bank_path.clone()], &out, &names)?;

    let defaults = AnalysisConfig::default();
    let config = AnalysisConfig {
        k: s.get("k")?,
        level: s.get_or("level", defaults.level)?,
        top_n: s.get_or("top_n", defaults.top_n)?,
        base_points: s.get_or("base_points", defaults.base_points)?,
    };
    let bank = load_bank(&bank_path)?;
    let log = read_log(&log_path)?;
    let report = AnalysisReport::build(&log, &bank, &config)?;
    let files: Vec<(&str, String)> = report.files();
    write_outputs(&out, &files)
}

/// Refuses runs whose outputs would overwrite one of their inputs.
fn check_distinct(inputs: &[PathBuf], out: &Path, names: &[&str]) -> Result<()> {
    let Ok(out_dir) = out.canonicalize() else {
        return Ok(());
    };
    for input in inputs {
        let Ok(input) = input.canonicalize() else { continue };
        if names.iter().any(|n| out_dir.join(n) == input) {
            bail!("input {} would be overwritten by an output", input.display());
        }
    }
    Ok(())
}

/// Writes every file to a temporary name first and renames only once all of
/// them are on disk.
pub fn write_outputs(out: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let mut tmp = tempfile::Builder::new()
            .prefix(&format!(".{name}."))
            .tempfile_in(out)
            .with_context(|| format!("creating temporary file in {}", out.display()))?;
        tmp.write_all(contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, out.join(name)));
    }
    for (tmp, dest) in staged {
        tmp.persist(&dest).with_context(|| format!("writing {}", dest.display()))?;
    }
    Ok(())
}
