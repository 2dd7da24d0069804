//! Scores table: a `#alpha=..,beta_hat=..,residual=..` header record followed by
//! `venue_id,raw,rescaled,normalized,ordinal_rank` rows, best first.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use crate::model::VenueId;

use super::{ordinal_ranks, RankScores};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub venue: VenueId,
    pub raw: f64,
    pub rescaled: Option<f64>,
    pub normalized: f64,
    pub ordinal_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoresTable {
    pub alpha: f64,
    pub beta_hat: Option<f64>,
    pub residual: f64,
    pub rows: Vec<ScoreRow>,
}

impl ScoresTable {
    pub fn from_scores(scores: &RankScores) -> Self {
        let raw = scores.raw_map();
        let all: BTreeSet<VenueId> = scores.items.iter().cloned().collect();
        let ranks = ordinal_ranks(&raw, &all);
        let normalized = scores.normalized();
        let mut rows: Vec<ScoreRow> = scores
            .items
            .iter()
            .enumerate()
            .map(|(i, v)| ScoreRow {
                venue: v.clone(),
                raw: scores.raw_scores[i],
                rescaled: scores.rescaled_scores.as_ref().map(|r| r[i]),
                normalized: normalized[i],
                ordinal_rank: ranks[v],
            })
            .collect();
        rows.sort_by(|a, b| a.ordinal_rank.cmp(&b.ordinal_rank).then_with(|| a.venue.cmp(&b.venue)));
        ScoresTable { alpha: scores.config.alpha, beta_hat: scores.inverse_temperature, residual: scores.residual, rows }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

pub fn write_scores(out: &mut impl Write, scores: &RankScores) -> io::Result<()> {
    let table = ScoresTable::from_scores(scores);
    writeln!(out, "#alpha={},beta_hat={},residual={:e}", table.alpha, opt(table.beta_hat), table.residual)?;
    writeln!(out, "venue_id,raw,rescaled,normalized,ordinal_rank")?;
    for r in &table.rows {
        writeln!(out, "{},{},{},{},{}", r.venue, r.raw, opt(r.rescaled), r.normalized, r.ordinal_rank)?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn parse_f64(s: &str) -> io::Result<f64> {
    s.trim().parse().map_err(|_| bad(format!("not a number: {s:?}")))
}

fn parse_opt(s: &str) -> io::Result<Option<f64>> {
    if s.trim() == "NA" {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

/// Parses the output of [`write_scores`]. Other `#` lines are skipped.
pub fn read_scores(input: impl BufRead) -> io::Result<ScoresTable> {
    let mut header = None;
    let mut rows = Vec::new();
    for line in input.lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("#alpha=") {
            let parts: Vec<&str> = rest.split(',').collect();
            let [alpha, beta, residual] = parts.as_slice() else {
                return Err(bad("malformed scores header"));
            };
            let beta = beta.strip_prefix("beta_hat=").ok_or_else(|| bad("missing beta_hat"))?;
            let residual = residual.strip_prefix("residual=").ok_or_else(|| bad("missing residual"))?;
            header = Some((parse_f64(alpha)?, parse_opt(beta)?, parse_f64(residual)?));
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() || line.starts_with("venue_id,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 columns: {line:?}")));
        }
        rows.push(ScoreRow {
            venue: VenueId::new(f[0]).ok_or_else(|| bad("blank venue id"))?,
            raw: parse_f64(f[1])?,
            rescaled: parse_opt(f[2])?,
            normalized: parse_f64(f[3])?,
            ordinal_rank: f[4].trim().parse().map_err(|_| bad("bad rank"))?,
        });
    }
    let (alpha, beta_hat, residual) = header.ok_or_else(|| bad("missing scores header"))?;
    Ok(ScoresTable { alpha, beta_hat, residual, rows })
}
