//! Least squares with confidence intervals, within-group permutation nulls and
//! the publication tick-rate regressions.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::analytics::AnalyticsConfig;
use crate::model::{Dataset, RespondentRecord, VenueId};
use crate::rank::{individual_scores, leave_one_out_field_scores, RankError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("design matrix is rank deficient at column {0:?}")]
    RankDeficient(String),
    #[error("{n} complete rows for {p} parameters")]
    TooFewRows { n: usize, p: usize },
    #[error("column {0:?} missing from the table")]
    UnknownColumn(String),
    #[error("column {column:?} holds a {found} where a {expected} is expected")]
    WrongType { column: String, expected: &'static str, found: &'static str },
    #[error("need at least two distinct values of {0}")]
    NoVariation(String),
    #[error(transparent)]
    Rank(#[from] RankError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Cat(String),
    Missing,
}

impl Cell {
    fn kind(&self) -> &'static str {
        match self {
            Cell::Num(_) => "number",
            Cell::Cat(_) => "category",
            Cell::Missing => "missing value",
        }
    }
}

pub type Row = BTreeMap<String, Cell>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Dummy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub outcome: String,
    pub covariates: Vec<(String, CovariateKind)>,
    /// Reference level per dummy covariate; the smallest level otherwise.
    pub reference_levels: BTreeMap<String, String>,
}

impl RegressionSpec {
    pub fn new(outcome: &str) -> Self {
        RegressionSpec { outcome: outcome.to_string(), covariates: Vec::new(), reference_levels: BTreeMap::new() }
    }

    pub fn continuous(mut self, name: &str) -> Self {
        self.covariates.push((name.to_string(), CovariateKind::Continuous));
        self
    }

    pub fn dummy(mut self, name: &str, reference: Option<&str>) -> Self {
        self.covariates.push((name.to_string(), CovariateKind::Dummy));
        if let Some(r) = reference {
            self.reference_levels.insert(name.to_string(), r.to_string());
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// 1.96 standard errors, z-test p-values.
    #[default]
    Normal,
    /// Student t with n - p degrees of freedom.
    StudentT,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    /// Intercept first, then one column per continuous covariate and one per
    /// non-reference dummy level (`name=level`).
    pub coefficients: Vec<Coefficient>,
    pub n: usize,
    pub residual_variance: f64,
    pub multiplier: f64,
    pub method: CiMethod,
    covariance: Vec<Vec<f64>>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.coefficients.iter().map(|c| c.name.as_str())
    }

    /// Fitted value and interval at a design point given in coefficient order
    /// (leading 1 for the intercept).
    pub fn predict(&self, point: &[f64]) -> Prediction {
        assert_eq!(point.len(), self.coefficients.len(), "design point length");
        let value: f64 = point.iter().zip(&self.coefficients).map(|(x, c)| x * c.estimate).sum();
        let mut var = 0.0;
        for (i, xi) in point.iter().enumerate() {
            for (j, xj) in point.iter().enumerate() {
                var += xi * self.covariance[i][j] * xj;
            }
        }
        let se = var.max(0.0).sqrt();
        Prediction { value, se, ci_low: value - self.multiplier * se, ci_high: value + self.multiplier * se }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub value: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

struct Design {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn num(row: &Row, col: &str) -> Result<Option<f64>, StatsError> {
    match row.get(col) {
        None => Err(StatsError::UnknownColumn(col.to_string())),
        Some(Cell::Num(v)) if v.is_finite() => Ok(Some(*v)),
        Some(Cell::Num(_)) | Some(Cell::Missing) => Ok(None),
        Some(c) => Err(StatsError::WrongType { column: col.to_string(), expected: "number", found: c.kind() }),
    }
}

fn level(row: &Row, col: &str) -> Result<Option<String>, StatsError> {
    match row.get(col) {
        None => Err(StatsError::UnknownColumn(col.to_string())),
        Some(Cell::Cat(s)) => Ok(Some(s.clone())),
        Some(Cell::Num(v)) => Ok(Some(v.to_string())),
        Some(Cell::Missing) => Ok(None),
    }
}

fn is_complete(row: &Row, spec: &RegressionSpec) -> Result<bool, StatsError> {
    if num(row, &spec.outcome)?.is_none() {
        return Ok(false);
    }
    for (name, kind) in &spec.covariates {
        let present = match kind {
            CovariateKind::Continuous => num(row, name)?.is_some(),
            CovariateKind::Dummy => level(row, name)?.is_some(),
        };
        if !present {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Rows with every used column present.
pub fn complete_cases<'a>(rows: &'a [Row], spec: &RegressionSpec) -> Result<Vec<&'a Row>, StatsError> {
    let mut out = Vec::new();
    for r in rows {
        if is_complete(r, spec)? {
            out.push(r);
        }
    }
    Ok(out)
}

fn design(rows: &[&Row], spec: &RegressionSpec) -> Result<Design, StatsError> {
    let mut names = vec!["intercept".to_string()];
    let mut columns: Vec<Box<dyn Fn(&Row) -> f64>> = vec![Box::new(|_| 1.0)];
    for (name, kind) in &spec.covariates {
        match kind {
            CovariateKind::Continuous => {
                names.push(name.clone());
                let n = name.clone();
                columns.push(Box::new(move |r: &Row| match r.get(&n) {
                    Some(Cell::Num(v)) => *v,
                    _ => f64::NAN,
                }));
            }
            CovariateKind::Dummy => {
                let mut levels = BTreeSet::new();
                for r in rows {
                    levels.extend(level(r, name)?);
                }
                let reference =
                    spec.reference_levels.get(name).cloned().or_else(|| levels.iter().next().cloned()).unwrap_or_default();
                for l in levels.into_iter().filter(|l| *l != reference) {
                    names.push(format!("{name}={l}"));
                    let n = name.clone();
                    columns.push(Box::new(move |r: &Row| {
                        if level(r, &n).ok().flatten().as_deref() == Some(l.as_str()) {
                            1.0
                        } else {
                            0.0
                        }
                    }));
                }
            }
        }
    }
    let (n, p) = (rows.len(), columns.len());
    let x = DMatrix::from_fn(n, p, |i, j| columns[j](rows[i]));
    let mut y = DVector::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        y[i] = num(r, &spec.outcome)?.unwrap_or(f64::NAN);
    }
    Ok(Design { names, x, y })
}

/// Ordinary least squares on the complete cases of `rows`.
pub fn fit_ols(rows: &[Row], spec: &RegressionSpec, method: CiMethod) -> Result<RegressionResult, StatsError> {
    let complete = complete_cases(rows, spec)?;
    fit_design(design(&complete, spec)?, method)
}

fn fit_design(d: Design, method: CiMethod) -> Result<RegressionResult, StatsError> {
    let (n, p) = d.x.shape();
    if n <= p {
        return Err(StatsError::TooFewRows { n, p });
    }
    let qr = d.x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = d.x.column(j).norm();
        if r[(j, j)].abs() <= 1e-9 * norm.max(1.0) {
            return Err(StatsError::RankDeficient(d.names[j].clone()));
        }
    }
    let qty = qr.q().transpose() * &d.y;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| StatsError::RankDeficient(d.names[p - 1].clone()))?;
    let resid = &d.y - &d.x * &beta;
    let df = (n - p) as f64;
    let sigma2 = resid.norm_squared() / df;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| StatsError::RankDeficient(d.names[p - 1].clone()))?;
    let cov = (&r_inv * r_inv.transpose()) * sigma2;

    let normal = Normal::standard();
    let t = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let multiplier = match method {
        CiMethod::Normal => 1.96,
        CiMethod::StudentT => t.inverse_cdf(0.975),
    };
    let coefficients = (0..p)
        .map(|j| {
            let estimate = beta[j];
            let se = cov[(j, j)].max(0.0).sqrt();
            let p_value = if se == 0.0 {
                if estimate == 0.0 { 1.0 } else { 0.0 }
            } else {
                let z = (estimate / se).abs();
                match method {
                    CiMethod::Normal => 2.0 * normal.sf(z),
                    CiMethod::StudentT => 2.0 * t.sf(z),
                }
            };
            Coefficient {
                name: d.names[j].clone(),
                estimate,
                se,
                ci_low: estimate - multiplier * se,
                ci_high: estimate + multiplier * se,
                p_value,
            }
        })
        .collect();
    Ok(RegressionResult {
        coefficients,
        n,
        residual_variance: sigma2,
        multiplier,
        method,
        covariance: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Permutation null

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationNull {
    pub coefficient: String,
    pub observed: f64,
    pub null: Vec<f64>,
    /// Share of null values at least as far from the null mean as the observed one.
    pub tail_fraction: f64,
    pub null_low: f64,
    pub null_high: f64,
}

impl PermutationNull {
    /// Whether the observed value lies within the central 95% of the null.
    pub fn observed_in_central_95(&self) -> bool {
        self.null_low <= self.observed && self.observed <= self.null_high
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Refits after permuting `permute` within each level of `within`; iteration
/// `i` draws from a generator seeded with `seed + i`. `permute` is a column,
/// tracked through its first generated term, or a single term such as
/// `career_stage=full`, which permutes its column.
pub fn permutation_null(
    rows: &[Row],
    spec: &RegressionSpec,
    permute: &str,
    within: &str,
    iterations: usize,
    seed: u64,
) -> Result<PermutationNull, StatsError> {
    let complete: Vec<Row> = complete_cases(rows, spec)?.into_iter().cloned().collect();
    let observed_fit = fit_design(design(&complete.iter().collect::<Vec<_>>(), spec)?, CiMethod::Normal)?;
    let column = permute.split_once('=').map_or(permute, |(c, _)| c);
    let coefficient = observed_fit
        .names()
        .find(|n| *n == permute || (column == permute && n.starts_with(&format!("{permute}="))))
        .ok_or_else(|| StatsError::UnknownColumn(permute.to_string()))?
        .to_string();
    if complete.iter().any(|r| !r.contains_key(column)) {
        return Err(StatsError::UnknownColumn(column.to_string()));
    }
    let observed = observed_fit.coefficient(&coefficient).expect("found above").estimate;

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in complete.iter().enumerate() {
        let g = level(r, within)?.unwrap_or_default();
        groups.entry(g).or_default().push(i);
    }

    let null: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|it| -> Result<f64, StatsError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(it as u64));
            let mut shuffled = complete.clone();
            for idx in groups.values() {
                let mut values: Vec<Cell> = idx.iter().map(|&i| complete[i][column].clone()).collect();
                values.shuffle(&mut rng);
                for (&i, v) in idx.iter().zip(values) {
                    shuffled[i].insert(column.to_string(), v);
                }
            }
            let refs: Vec<&Row> = shuffled.iter().collect();
            let fit = fit_design(design(&refs, spec)?, CiMethod::Normal)?;
            Ok(fit.coefficient(&coefficient).map_or(f64::NAN, |c| c.estimate))
        })
        .collect::<Result<_, _>>()?;

    let mean = null.iter().sum::<f64>() / null.len().max(1) as f64;
    let dist = (observed - mean).abs();
    // small slack so that a null identical to the observed value counts as extreme
    let extreme = null.iter().filter(|v| (*v - mean).abs() >= dist - 1e-12 * dist.max(1.0)).count();
    let mut sorted = null.clone();
    sorted.sort_by(f64::total_cmp);
    let (null_low, null_high) =
        if sorted.is_empty() { (observed, observed) } else { (quantile(&sorted, 0.025), quantile(&sorted, 0.975)) };
    Ok(PermutationNull {
        coefficient,
        observed,
        tail_fraction: if null.is_empty() { 1.0 } else { extreme as f64 / null.len() as f64 },
        null,
        null_low,
        null_high,
    })
}

/// Benjamini-Hochberg adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    adjusted
}

// ---------------------------------------------------------------------------
// Tick rates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Top5Source {
    /// The respondent's own ranking.
    Personal,
    /// The field consensus without the respondent.
    Field,
}

/// Fraction of a top-five list found in `publications`; shorter lists are
/// scored out of their length.
pub fn tick_rate_of(top: &[VenueId], publications: &BTreeSet<VenueId>) -> f64 {
    if top.is_empty() {
        return 0.0;
    }
    top.iter().filter(|v| publications.contains(v)).count() as f64 / top.len() as f64
}

pub fn tick_rate(
    ds: &Dataset,
    respondent: &RespondentRecord,
    source: Top5Source,
    config: &AnalyticsConfig,
) -> Result<f64, StatsError> {
    let top = match source {
        Top5Source::Personal => individual_scores(ds, &respondent.id, &config.individual)?.top(5),
        Top5Source::Field => leave_one_out_field_scores(ds, &respondent.field, &respondent.id, &config.consensus)?.top(5),
    };
    Ok(tick_rate_of(&top, &respondent.publications))
}

/// Prestige stored with 1 = most prestigious, mapped so larger = more prestigious.
pub fn prestige_score(decile: u8) -> f64 {
    11.0 - decile as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRateRegression {
    pub group: String,
    pub n: usize,
    pub slope: Coefficient,
    pub at_top_decile: Prediction,
}

/// Tick rate against prestige (10 = highest) for respondents with a prestige
/// decile, a publication record and comparisons. `field = None` pools all.
pub fn tick_rate_regression(
    ds: &Dataset,
    field: Option<&str>,
    source: Top5Source,
    method: CiMethod,
    config: &AnalyticsConfig,
) -> Result<TickRateRegression, StatsError> {
    let eligible: Vec<&RespondentRecord> = ds
        .respondents
        .values()
        .filter(|r| field.is_none_or(|f| r.field == f))
        .filter(|r| r.prestige_decile.is_some() && !r.publications.is_empty())
        .filter(|r| ds.comparisons_of(&r.id).next().is_some())
        .collect();
    let rows: Vec<Row> = eligible
        .par_iter()
        .map(|r| -> Result<Option<Row>, StatsError> {
            let y = match tick_rate(ds, r, source, config) {
                Ok(y) => y,
                Err(StatsError::Rank(RankError::EmptyField(_))) => return Ok(None),
                Err(e) => return Err(e),
            };
            let x = prestige_score(r.prestige_decile.expect("filtered"));
            Ok(Some(Row::from([("tick_rate".into(), Cell::Num(y)), ("prestige".into(), Cell::Num(x))])))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let distinct: BTreeSet<u64> =
        rows.iter().filter_map(|r| if let Some(Cell::Num(x)) = r.get("prestige") { Some(x.to_bits()) } else { None }).collect();
    if distinct.len() < 2 {
        return Err(StatsError::NoVariation("prestige decile".into()));
    }
    let spec = RegressionSpec::new("tick_rate").continuous("prestige");
    let fit = fit_ols(&rows, &spec, method)?;
    Ok(TickRateRegression {
        group: field.unwrap_or("Academia").to_string(),
        n: fit.n,
        slope: fit.coefficient("prestige").expect("covariate").clone(),
        at_top_decile: fit.predict(&[1.0, 10.0]),
    })
}

/// One row per respondent with `career_stage`, `gender`, `prestige`
/// (10 = highest) and `field`, plus `outcome` where `value` yields one.
pub fn respondent_rows(
    ds: &Dataset,
    outcome: &str,
    value: impl Fn(&RespondentRecord) -> Option<f64> + Sync,
) -> Vec<Row> {
    let rs: Vec<&RespondentRecord> = ds.respondents.values().collect();
    rs.par_iter()
        .map(|r| {
            Row::from([
                (outcome.to_string(), value(r).map_or(Cell::Missing, Cell::Num)),
                ("career_stage".into(), Cell::Cat(r.career_stage.as_token().into())),
                ("gender".into(), r.gender.map_or(Cell::Missing, |g| Cell::Cat(g.as_token().into()))),
                ("prestige".into(), r.prestige_decile.map_or(Cell::Missing, |d| Cell::Num(prestige_score(d)))),
                ("field".into(), Cell::Cat(r.field.clone())),
            ])
        })
        .collect()
}

/// Outcome on career stage (assistant as reference), gender and prestige.
pub fn demographic_spec(outcome: &str) -> RegressionSpec {
    RegressionSpec::new(outcome)
        .dummy("career_stage", Some("assistant"))
        .dummy("gender", Some("man"))
        .continuous("prestige")
}
