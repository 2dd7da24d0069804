//! Batch command line: fitting, analyses, simulations and the survey server.
//!
//! Every table goes to standard output behind a one-line `# {...}` run
//! manifest; diagnostics go to standard error. Exit codes: 0 success, 2 bad
//! input or configuration, 3 an analysis with nothing to report.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analytics::{
    accumulation_curve, consistency_summary, indifference_share, ordinal_rank_delta, prediction_accuracy,
    top5_agreement, top_choice_normalized_rank, top_k_popularity, within_field_overlap, AnalyticsConfig,
    AnalyticsError, ChoiceType, OverlapMode, ScoreSource,
};
use crate::config::Config;
use crate::model::{hash_files, load_dataset, write_dataset, Dataset, DatasetPaths, LoadError};
use crate::rank::{
    field_scores, global_scores, individual_scores, leave_one_out_field_scores, write_scores, RankConfig, RankError,
};
use crate::sim::{
    convergence_experiment, derive_seed, generate_null_dataset, logistic_sessions, null_matches_template,
    synthetic_dataset, SimError, SyntheticSpec,
};
use crate::scheduler::TranscriptEntry;
use crate::service::{http, SurveyService};
use crate::stats::{
    benjamini_hochberg, demographic_spec, fit_ols, permutation_null, respondent_rows, tick_rate_regression, CiMethod, StatsError,
    Top5Source,
};

#[derive(Debug, Parser)]
#[command(name = "venuerank", version, about = "Venue preference ranking and survey analysis")]
pub struct Cli {
    /// Directory holding venues.csv, respondents.csv, comparisons.csv and
    /// optionally publications.csv and citations.csv.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// TOML configuration shared with the server.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sweeps; output does not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a ranking and print its scores table.
    Fit(FitArgs),
    /// Run one analysis over the dataset.
    Analyze(AnalyzeArgs),
    /// Run a simulation experiment.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Run the survey HTTP service.
    Serve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Individual,
    Field,
    Global,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub level: Level,
    /// Regularization; defaults to 0 for individual fits and the configured
    /// consensus value otherwise.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub respondent: Option<String>,
    #[arg(long)]
    pub field: Option<String>,
    /// Hold out `--respondent` from a field or global fit.
    #[arg(long)]
    pub loo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Accumulation,
    Overlap,
    Topk,
    Agreement,
    Accuracy,
    JifAccuracy,
    RankDelta,
    Violations,
    Topchoice,
    Regress,
    Tickrate,
    Indifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceArg {
    LooField,
    Global,
    Jif,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopSourceArg {
    Personal,
    Field,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// Normalized field rank of the respondent's top preference.
    Topchoice,
    /// Normalized field rank of the respondent's top aspiration.
    Aspiration,
    /// Share of the respondent's strict choices that contradict their own ranking.
    ViolationRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiArg {
    Normal,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapArg {
    SetShare,
    AnyOther,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub analysis: Analysis,
    /// Restrict to one field; analyses that need a field run over every field without it.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0.0)]
    pub min_selection_pct: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = SourceArg::LooField)]
    pub source: SourceArg,
    #[arg(long, value_enum, default_value_t = TopSourceArg::Both)]
    pub top5: TopSourceArg,
    #[arg(long, value_enum, default_value_t = OverlapArg::SetShare)]
    pub overlap_mode: OverlapArg,
    #[arg(long, value_enum, default_value_t = Outcome::Topchoice)]
    pub outcome: Outcome,
    #[arg(long, value_enum, default_value_t = CiArg::Normal)]
    pub ci: CiArg,
    /// Report a within-field permutation null for this covariate instead of the fit.
    #[arg(long)]
    pub permute: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Randomized-response datasets matched to the loaded one.
    Null(NullArgs),
    /// Adaptive versus shuffled comparison order.
    Convergence(ConvergenceArgs),
    /// A synthetic dataset answered by logistic agents.
    Agents(AgentsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct NullArgs {
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Write each dataset to `<out>/null_<i>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergenceArgs {
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    #[arg(long, default_value_t = 200)]
    pub sessions: usize,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.08)]
    pub indifference: f64,
    #[arg(long, default_value_t = 10)]
    pub shuffles: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    pub fractions: Vec<f64>,
    /// Use the loaded dataset's sessions instead of simulated agents.
    #[arg(long)]
    pub from_data: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AgentsArgs {
    #[arg(long, value_delimiter = ',', default_values_t = ["Biology".to_string(), "Economics".to_string(), "Physics".to_string()])]
    pub fields: Vec<String>,
    #[arg(long, default_value_t = 25)]
    pub venues_per_field: usize,
    #[arg(long, default_value_t = 12)]
    pub respondents_per_field: usize,
    #[arg(long, default_value_t = 10)]
    pub set_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub taste_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.08)]
    pub indifference: f64,
    /// Directory to write the dataset into.
    #[arg(long)]
    pub out: PathBuf,
}

/// Head line of every output.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub subcommand: String,
    pub args: serde_json::Value,
    pub config: &'a Config,
    pub dataset_hash: Option<String>,
    pub seed: u64,
    pub version: &'static str,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn empty(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        let mut message = e.to_string();
        if let LoadError::Invalid(vs) = &e {
            for v in vs {
                message.push_str(&format!("\n  {v}"));
            }
        }
        Failure::input(message)
    }
}

impl From<RankError> for Failure {
    fn from(e: RankError) -> Self {
        match e {
            RankError::EmptyField(_) | RankError::EmptyMatrix => Failure::empty(e.to_string()),
            RankError::UnknownItem(_) | RankError::UnknownRespondent(_) => Failure::input(e.to_string()),
            _ => Failure { code: 1, message: e.to_string() },
        }
    }
}

impl From<AnalyticsError> for Failure {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::UnknownRespondent(_) => Failure::input(e.to_string()),
            AnalyticsError::Rank(r) => r.into(),
            _ => Failure::empty(e.to_string()),
        }
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::UnknownColumn(_) | StatsError::WrongType { .. } => Failure::input(e.to_string()),
            StatsError::Rank(r) => r.into(),
            _ => Failure::empty(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Rank(r) => r.into(),
            _ => Failure::input(e.to_string()),
        }
    }
}

struct Run {
    config: Config,
    seed: u64,
    data_dir: Option<PathBuf>,
}

impl Run {
    fn analytics(&self) -> AnalyticsConfig {
        self.config.analytics()
    }

    fn load(&self) -> Result<(Dataset, String), Failure> {
        let dir = self.data_dir.as_ref().ok_or_else(|| Failure::input("--data is required"))?;
        let paths = DatasetPaths::in_dir(dir);
        let hash = hash_files(&paths)?;
        Ok((load_dataset(&paths)?, hash))
    }

    fn manifest(&self, out: &mut dyn Write, subcommand: &str, args: &impl Serialize, hash: Option<String>) -> Result<(), Failure> {
        let m = RunManifest {
            subcommand: subcommand.to_string(),
            args: serde_json::to_value(args).expect("arguments serialize"),
            config: &self.config,
            dataset_hash: hash,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
        };
        writeln!(out, "# {}", serde_json::to_string(&m).expect("manifest serializes"))?;
        Ok(())
    }
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let mut config = Config::load(cli.config.as_deref()).map_err(|e| Failure::input(e.to_string()))?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(d) = &cli.data {
        config.data_dir = Some(d.clone());
    }
    let run = Run { seed: config.seed, data_dir: config.data_dir.clone(), config };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::input(e.to_string()))?;
    let mut buf: Vec<u8> = Vec::new();
    let b = &mut buf;
    pool.install(|| match cli.command {
        Command::Fit(a) => fit(&run, &a, b),
        Command::Analyze(a) => analyze(&run, &a, b),
        Command::Simulate(SimulateCommand::Null(a)) => simulate_null(&run, &a, b),
        Command::Simulate(SimulateCommand::Convergence(a)) => simulate_convergence(&run, &a, b),
        Command::Simulate(SimulateCommand::Agents(a)) => simulate_agents(&run, &a, b),
        Command::Serve => serve(&run),
    })?;
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn fit(run: &Run, a: &FitArgs, out: &mut Vec<u8>) -> Result<(), Failure> {
    let (ds, hash) = run.load()?;
    let alpha = a.alpha.unwrap_or(match a.level {
        Level::Individual => run.config.alpha_individual,
        _ => run.config.alpha_consensus,
    });
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Failure::input("--alpha must be a non-negative number"));
    }
    let cfg = RankConfig::with_alpha(alpha);
    let respondent = || a.respondent.as_deref().ok_or_else(|| Failure::input("--respondent is required"));
    let held_out = if a.loo { Some(respondent()?) } else { None };
    let scores = match a.level {
        Level::Individual => individual_scores(&ds, respondent()?, &cfg)?,
        Level::Field => {
            let field = match (&a.field, held_out) {
                (Some(f), _) => f.clone(),
                (None, Some(r)) => ds.respondents.get(r).map(|x| x.field.clone()).ok_or_else(|| {
                    Failure::input(format!("unknown respondent {r}"))
                })?,
                (None, None) => return Err(Failure::input("--field is required")),
            };
            if !ds.fields().contains(field.as_str()) {
                return Err(Failure::input(format!("unknown field {field:?}")));
            }
            match held_out {
                Some(r) => {
                    if !ds.respondents.contains_key(r) {
                        return Err(Failure::input(format!("unknown respondent {r}")));
                    }
                    leave_one_out_field_scores(&ds, &field, r, &cfg)?
                }
                None => field_scores(&ds, &field, &cfg)?,
            }
        }
        Level::Global => global_scores(&ds, held_out, &cfg)?,
    };
    run.manifest(out, "fit", a, Some(hash))?;
    write_scores(out, &scores)?;
    Ok(())
}

fn fields_of(ds: &Dataset, field: &Option<String>) -> Result<Vec<String>, Failure> {
    match field {
        Some(f) if ds.fields().contains(f.as_str()) => Ok(vec![f.clone()]),
        Some(f) => Err(Failure::input(format!("unknown field {f:?}"))),
        None => Ok(ds.fields().into_iter().map(String::from).collect()),
    }
}

fn one_field(ds: &Dataset, field: &Option<String>) -> Result<String, Failure> {
    match field {
        None => Err(Failure::input("--field is required")),
        Some(_) => Ok(fields_of(ds, field)?.remove(0)),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn analyze(run: &Run, a: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (ds, hash) = run.load()?;
    let cfg = run.analytics();
    // build the table first so that failures leave standard output empty
    let mut t: Vec<u8> = Vec::new();
    match a.analysis {
        Analysis::Accumulation => {
            let field = one_field(&ds, &a.field)?;
            let c = accumulation_curve(&ds, &field, a.realizations, run.seed)?;
            writeln!(t, "k,mean_unique,sd_unique")?;
            for i in 0..c.k_values.len() {
                writeln!(t, "{},{},{}", c.k_values[i], c.mean_unique[i], c.sd_unique[i])?;
            }
        }
        Analysis::Overlap => {
            let mode = match a.overlap_mode {
                OverlapArg::SetShare => OverlapMode::SetShare,
                OverlapArg::AnyOther => OverlapMode::AnyOther,
            };
            writeln!(t, "field,respondents,mean_overlap_pct")?;
            let fields = fields_of(&ds, &a.field)?;
            let mut any = false;
            for f in &fields {
                match within_field_overlap(&ds, f, mode) {
                    Ok(o) => {
                        any = true;
                        writeln!(t, "{f},{},{}", o.per_respondent.len(), o.mean)?
                    }
                    Err(e) if fields.len() > 1 => log::warn!("{f}: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            if !any {
                return Err(Failure::empty("no field has two respondents"));
            }
        }
        Analysis::Topk => {
            writeln!(t, "field,rank,venue,name,selection_pct")?;
            for f in fields_of(&ds, &a.field)? {
                for (i, (v, share)) in top_k_popularity(&ds, &f, a.k).into_iter().enumerate() {
                    writeln!(t, "{f},{},{v},{},{share}", i + 1, csv_field(&ds.venues[&v].name))?;
                }
            }
        }
        Analysis::Agreement => {
            writeln!(t, "field,respondents,mean_agreement_pct")?;
            per_field(&ds, &a.field, &mut t, |f, t| {
                let g = top5_agreement(&ds, f, &cfg)?;
                writeln!(t, "{f},{},{}", g.per_respondent.len(), g.mean)?;
                Ok(())
            })?;
        }
        Analysis::Accuracy | Analysis::JifAccuracy => {
            let runs: Vec<(ScoreSource, bool)> = if a.analysis == Analysis::JifAccuracy {
                vec![(ScoreSource::Jif, true), (ScoreSource::LooField, true)]
            } else {
                let s = match a.source {
                    SourceArg::LooField => ScoreSource::LooField,
                    SourceArg::Global => ScoreSource::Global,
                    SourceArg::Jif => ScoreSource::Jif,
                };
                vec![(s, false)]
            };
            writeln!(t, "field,source,jif_subset,eligible,credit,accuracy_pct")?;
            let scopes: Vec<Option<String>> = match &a.field {
                Some(_) => vec![Some(one_field(&ds, &a.field)?)],
                None => ds.fields().into_iter().map(|f| Some(f.to_string())).chain([None]).collect(),
            };
            let mut any = false;
            for scope in &scopes {
                for &(source, subset) in &runs {
                    let name = scope.as_deref().unwrap_or("all");
                    match prediction_accuracy(&ds, scope.as_deref(), source, subset, &cfg) {
                        Ok(acc) => {
                            any = true;
                            writeln!(
                                t,
                                "{name},{},{subset},{},{},{}",
                                source_name(source),
                                acc.eligible,
                                acc.credit,
                                acc.percent
                            )?;
                        }
                        Err(e) if scopes.len() > 1 => log::warn!("{name}: {e}"),
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            if !any {
                return Err(AnalyticsError::NoEligibleComparisons.into());
            }
        }
        Analysis::RankDelta => {
            let field = one_field(&ds, &a.field)?;
            let rows = ordinal_rank_delta(&ds, &field, a.min_selection_pct, &cfg)?;
            if rows.is_empty() {
                return Err(Failure::empty("no venue passes the selection threshold with both scores"));
            }
            writeln!(t, "venue,name,rank_pref,rank_jif,diff")?;
            for r in rows {
                writeln!(t, "{},{},{},{},{}", r.venue, csv_field(&ds.venues[&r.venue].name), r.rank_pref, r.rank_jif, r.diff)?;
            }
        }
        Analysis::Violations => {
            writeln!(t, "field,respondents,strict,violations,violation_pct,fully_consistent_pct,rank_statistic")?;
            let scopes: Vec<Option<String>> = match &a.field {
                Some(_) => vec![Some(one_field(&ds, &a.field)?)],
                None => ds.fields().into_iter().map(|f| Some(f.to_string())).chain([None]).collect(),
            };
            let mut any = false;
            for scope in &scopes {
                let name = scope.as_deref().unwrap_or("all");
                match consistency_summary(&ds, scope.as_deref(), &cfg) {
                    Ok(s) => {
                        any = true;
                        writeln!(
                            t,
                            "{name},{},{},{},{},{},{}",
                            s.respondents,
                            s.strict,
                            s.violations,
                            s.violation_pct,
                            s.fully_consistent_pct,
                            opt(s.rank_statistic)
                        )?;
                    }
                    Err(e) if scopes.len() > 1 => log::warn!("{name}: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            if !any {
                return Err(AnalyticsError::NoEligibleComparisons.into());
            }
        }
        Analysis::Topchoice => {
            writeln!(t, "field,choice,respondents,mean_normalized_rank")?;
            let mut any = false;
            for f in fields_of(&ds, &a.field)? {
                for (choice, label) in [(ChoiceType::TopPreference, "top-preference"), (ChoiceType::TopAspiration, "top-aspiration")] {
                    let values = topchoice_values(&ds, &f, choice, &cfg);
                    if !values.is_empty() {
                        any = true;
                        let mean = values.iter().sum::<f64>() / values.len() as f64;
                        writeln!(t, "{f},{label},{},{mean}", values.len())?;
                    }
                }
            }
            if !any {
                return Err(AnalyticsError::NoEligibleComparisons.into());
            }
        }
        Analysis::Regress => regress(&ds, a, run.seed, &cfg, &mut t)?,
        Analysis::Tickrate => {
            let method = ci_method(a.ci);
            let sources: Vec<Top5Source> = match a.top5 {
                TopSourceArg::Personal => vec![Top5Source::Personal],
                TopSourceArg::Field => vec![Top5Source::Field],
                TopSourceArg::Both => vec![Top5Source::Personal, Top5Source::Field],
            };
            let scopes: Vec<Option<String>> = match &a.field {
                Some(_) => vec![Some(one_field(&ds, &a.field)?)],
                None => std::iter::once(None).chain(ds.fields().into_iter().map(|f| Some(f.to_string()))).collect(),
            };
            writeln!(
                t,
                "field,source,n,reference,slope,slope_ci_low,slope_ci_high,slope_p,slope_p_adjusted,prediction,prediction_ci_low,prediction_ci_high"
            )?;
            let mut any = false;
            for &source in &sources {
                let mut fits = Vec::new();
                for scope in &scopes {
                    match tick_rate_regression(&ds, scope.as_deref(), source, method, &cfg) {
                        Ok(r) => fits.push(r),
                        Err(e) if scopes.len() > 1 => log::warn!("{}: {e}", scope.as_deref().unwrap_or("all")),
                        Err(e) => return Err(e.into()),
                    }
                }
                // one correction family per top-5 source
                let adjusted = benjamini_hochberg(&fits.iter().map(|r| r.slope.p_value).collect::<Vec<_>>());
                let src = if source == Top5Source::Personal { "personal" } else { "field" };
                for (r, q) in fits.iter().zip(adjusted) {
                    any = true;
                    writeln!(
                        t,
                        "{},{src},{},prestige decile 10 (highest),{},{},{},{},{q},{},{},{}",
                        r.group,
                        r.n,
                        r.slope.estimate,
                        r.slope.ci_low,
                        r.slope.ci_high,
                        r.slope.p_value,
                        r.at_top_decile.value,
                        r.at_top_decile.ci_low,
                        r.at_top_decile.ci_high
                    )?;
                }
            }
            if !any {
                return Err(Failure::empty("no group has enough respondents for a tick-rate regression"));
            }
        }
        Analysis::Indifference => {
            let share = indifference_share(&ds).ok_or(AnalyticsError::NoEligibleComparisons)?;
            writeln!(t, "comparisons,indifference_pct")?;
            writeln!(t, "{},{share}", ds.comparisons.len())?;
        }
    }
    run.manifest(out, &format!("analyze {}", analysis_name(a.analysis)), a, Some(hash))?;
    out.write_all(&t)?;
    Ok(())
}

fn per_field(
    ds: &Dataset,
    field: &Option<String>,
    t: &mut Vec<u8>,
    mut row: impl FnMut(&str, &mut Vec<u8>) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let fields = fields_of(ds, field)?;
    let mut any = false;
    for f in &fields {
        match row(f, t) {
            Ok(()) => any = true,
            Err(e) if fields.len() > 1 && e.code == 3 => log::warn!("{f}: {}", e.message),
            Err(e) => return Err(e),
        }
    }
    if any {
        Ok(())
    } else {
        Err(AnalyticsError::NoEligibleComparisons.into())
    }
}

fn topchoice_values(ds: &Dataset, field: &str, choice: ChoiceType, cfg: &AnalyticsConfig) -> Vec<f64> {
    ds.respondents_in(field)
        .filter_map(|r| top_choice_normalized_rank(ds, &r.id, choice, cfg).ok())
        .collect()
}

fn regress(ds: &Dataset, a: &AnalyzeArgs, seed: u64, cfg: &AnalyticsConfig, t: &mut Vec<u8>) -> Result<(), Failure> {
    let outcome = match a.outcome {
        Outcome::Topchoice => "topchoice",
        Outcome::Aspiration => "aspiration",
        Outcome::ViolationRate => "violation_rate",
    };
    let value = |r: &crate::model::RespondentRecord| -> Option<f64> {
        if a.field.as_ref().is_some_and(|f| &r.field != f) {
            return None;
        }
        match a.outcome {
            Outcome::Topchoice => top_choice_normalized_rank(ds, &r.id, ChoiceType::TopPreference, cfg).ok(),
            Outcome::Aspiration => top_choice_normalized_rank(ds, &r.id, ChoiceType::TopAspiration, cfg).ok(),
            Outcome::ViolationRate => crate::analytics::self_consistency(ds, &r.id, cfg)
                .ok()
                .filter(|s| s.strict > 0)
                .map(|s| s.violation_pct),
        }
    };
    if let Some(f) = &a.field {
        one_field(ds, &Some(f.clone()))?;
    }
    let rows = respondent_rows(ds, outcome, value);
    let spec = demographic_spec(outcome);
    match &a.permute {
        None => {
            let fit = fit_ols(&rows, &spec, ci_method(a.ci))?;
            writeln!(t, "term,estimate,se,ci_low,ci_high,p_value,n")?;
            for c in &fit.coefficients {
                writeln!(t, "{},{},{},{},{},{},{}", c.name, c.estimate, c.se, c.ci_low, c.ci_high, c.p_value, fit.n)?;
            }
        }
        Some(covariate) => {
            let p = permutation_null(&rows, &spec, covariate, "field", a.iterations, seed)?;
            writeln!(t, "coefficient,observed,null_low,null_high,tail_fraction,iterations")?;
            writeln!(t, "{},{},{},{},{},{}", p.coefficient, p.observed, p.null_low, p.null_high, p.tail_fraction, p.null.len())?;
        }
    }
    Ok(())
}

fn ci_method(c: CiArg) -> CiMethod {
    match c {
        CiArg::Normal => CiMethod::Normal,
        CiArg::T => CiMethod::StudentT,
    }
}

fn source_name(s: ScoreSource) -> &'static str {
    match s {
        ScoreSource::LooField => "loo-field",
        ScoreSource::Global => "global",
        ScoreSource::Jif => "jif",
    }
}

fn analysis_name(a: Analysis) -> String {
    a.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn simulate_null(run: &Run, a: &NullArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (ds, hash) = run.load()?;
    let mut t = Vec::new();
    writeln!(t, "iteration,seed,respondents,comparisons,matched")?;
    for i in 0..a.iterations {
        let seed = derive_seed(run.seed, i as u64, 3);
        let null = generate_null_dataset(&ds, run.config.scheduler(), seed);
        let matched = null_matches_template(&ds, &null);
        if let Some(dir) = &a.out {
            let d = dir.join(format!("null_{i:03}"));
            std::fs::create_dir_all(&d)?;
            write_dataset(&null, &DatasetPaths::all_in_dir(&d))?;
        }
        let respondents: BTreeSet<&str> = null.comparisons.iter().map(|c| c.respondent_id.as_str()).collect();
        writeln!(t, "{i},{seed},{},{},{matched}", respondents.len(), null.comparisons.len())?;
    }
    run.manifest(out, "simulate null", a, Some(hash))?;
    out.write_all(&t)?;
    Ok(())
}

fn simulate_convergence(run: &Run, a: &ConvergenceArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Failure::input("fractions must lie in (0, 1]"));
    }
    let (transcripts, hash): (Vec<Vec<TranscriptEntry>>, Option<String>) = if a.from_data {
        let (ds, hash) = run.load()?;
        let sessions = ds
            .comparisons_by_respondent()
            .into_values()
            .filter(|cs| cs.len() >= 2)
            .map(|cs| {
                cs.iter()
                    .map(|c| TranscriptEntry {
                        order_index: c.order_index,
                        first: c.first.clone(),
                        second: c.second.clone(),
                        outcome: c.outcome,
                    })
                    .collect()
            })
            .collect();
        (sessions, Some(hash))
    } else {
        if a.items < 2 {
            return Err(Failure::input("--items must be at least 2"));
        }
        (logistic_sessions(a.items, a.sessions, a.beta, a.indifference, run.config.scheduler(), run.seed), None)
    };
    let result = convergence_experiment(&transcripts, &a.fractions, a.shuffles, run.seed, &run.analytics().individual)?;
    let mut t = Vec::new();
    result.write_csv(&mut t)?;
    run.manifest(out, "simulate convergence", a, hash)?;
    out.write_all(&t)?;
    Ok(())
}

fn simulate_agents(run: &Run, a: &AgentsArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.fields.is_empty() || a.set_size < 2 || a.venues_per_field < a.set_size {
        return Err(Failure::input("need at least one field and 2 <= set size <= venues per field"));
    }
    let spec = SyntheticSpec {
        fields: a.fields.clone(),
        venues_per_field: a.venues_per_field,
        respondents_per_field: a.respondents_per_field,
        set_size: a.set_size,
        taste_noise: a.taste_noise,
        beta: a.beta,
        indifference: a.indifference,
        seed: run.seed,
    };
    let ds = synthetic_dataset(&spec, run.config.scheduler());
    std::fs::create_dir_all(&a.out)?;
    let paths = DatasetPaths::all_in_dir(&a.out);
    write_dataset(&ds, &paths)?;
    let mut t = Vec::new();
    writeln!(t, "field,respondents,venues,comparisons")?;
    for f in ds.fields() {
        let rs: BTreeSet<&str> = ds.respondents_in(f).map(|r| r.id.as_str()).collect();
        let venues = ds.venues.values().filter(|v| v.field_tags.contains(f)).count();
        let comparisons = ds.comparisons.iter().filter(|c| rs.contains(c.respondent_id.as_str())).count();
        writeln!(t, "{f},{},{venues},{comparisons}", rs.len())?;
    }
    run.manifest(out, "simulate agents", a, Some(hash_files(&paths)?))?;
    out.write_all(&t)?;
    Ok(())
}

fn serve(run: &Run) -> Result<(), Failure> {
    let ds = match &run.data_dir {
        Some(d) => load_dataset(&DatasetPaths::in_dir(d))?,
        None => Dataset::default(),
    };
    let service = SurveyService::open(run.config.clone(), ds).map_err(|e| Failure::input(e.to_string()))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::input(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&run.config.listen)
            .await
            .map_err(|e| Failure::input(format!("cannot listen on {}: {e}", run.config.listen)))?;
        let addr = listener.local_addr()?;
        log::info!("listening on {addr}");
        eprintln!("listening on {addr}");
        http::serve(Arc::new(service), listener, shutdown_signal()).await?;
        log::info!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Reads a dataset directory, as `--data` does.
pub fn load_dir(dir: &Path) -> Result<Dataset, LoadError> {
    load_dataset(&DatasetPaths::in_dir(dir))
}
