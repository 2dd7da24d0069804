//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use venuerank::model::{CareerStage, Comparison, ComparisonOutcome, Dataset, Gender, RespondentRecord, Venue, VenueId};
use venuerank::rank::ComparisonMatrix;
use venuerank::scheduler::SchedulerConfig;
use venuerank::sim::{synthetic_dataset, SyntheticSpec};

pub fn vid(s: &str) -> VenueId {
    VenueId::new(s).unwrap()
}

pub fn venue(id: &str, works: u64, jif: Option<f64>) -> Venue {
    Venue {
        id: vid(id),
        name: format!("Venue {id}"),
        works_count: works,
        external_score: jif,
        field_tags: BTreeSet::new(),
    }
}

pub fn respondent(id: &str, field: &str, stage: CareerStage, set: &[&str]) -> RespondentRecord {
    RespondentRecord {
        id: id.into(),
        field: field.into(),
        career_stage: stage,
        prestige_decile: None,
        gender: None,
        consideration_set: set.iter().map(|s| vid(s)).collect(),
        aspirations: None,
        publications: BTreeSet::new(),
    }
}

/// Appends comparisons `(first, second, outcome)` for `r` with consecutive order indices.
pub fn add_comparisons(ds: &mut Dataset, r: &str, rows: &[(&str, &str, ComparisonOutcome)]) {
    let start = ds.comparisons_of(r).count() as u64;
    for (k, (a, b, o)) in rows.iter().enumerate() {
        ds.comparisons.push(Comparison {
            respondent_id: r.into(),
            first: vid(a),
            second: vid(b),
            outcome: *o,
            order_index: start + k as u64,
        });
    }
}

pub fn gender(i: usize) -> Gender {
    if i % 2 == 0 {
        Gender::Man
    } else {
        Gender::Woman
    }
}

pub fn synthetic(seed: u64) -> Dataset {
    synthetic_dataset(&SyntheticSpec { seed, ..SyntheticSpec::default() }, SchedulerConfig::default())
}

/// Random weighted win matrix over `n` items with integer wins and half-weight ties.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, density: f64) -> ComparisonMatrix {
    let items = (0..n).map(|i| vid(&format!("i{i}"))).collect();
    let mut m = ComparisonMatrix::empty(items);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < density {
                let w = match rng.random_range(0..4) {
                    0 => 0.5,
                    k => k as f64,
                };
                m.add(i, j, w);
            }
        }
    }
    m
}

pub fn dense(m: &ComparisonMatrix) -> DMatrix<f64> {
    let n = m.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = m.get(i, j);
        }
    }
    a
}

/// Minimizer of the spring energy from the dense normal equations
/// `(D_out + D_in - A - A^T + alpha I) s = d_out - d_in`; at `alpha = 0` the
/// minimum-norm solution via the pseudo-inverse.
pub fn dense_springrank(a: &DMatrix<f64>, alpha: f64) -> DVector<f64> {
    let n = a.nrows();
    let sym = a + a.transpose();
    let mut l = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|i| sym.row(i).sum())));
    l -= &sym;
    for i in 0..n {
        l[(i, i)] += alpha;
    }
    let b = DVector::from_iterator(n, (0..n).map(|i| a.row(i).sum() - a.column(i).sum()));
    if alpha > 0.0 {
        l.lu().solve(&b).expect("positive definite")
    } else {
        l.pseudo_inverse(1e-10).expect("svd converges") * b
    }
}

/// Energy `1/2 sum A_ij (s_i - s_j - 1)^2 + alpha/2 |s|^2` computed from the dense matrix.
pub fn dense_energy(a: &DMatrix<f64>, alpha: f64, s: &[f64]) -> f64 {
    let n = a.nrows();
    let mut e = 0.0;
    for i in 0..n {
        for j in 0..n {
            e += a[(i, j)] * (s[i] - s[j] - 1.0).powi(2);
        }
    }
    0.5 * e + 0.5 * alpha * s.iter().map(|x| x * x).sum::<f64>()
}

pub fn dense_gradient(a: &DMatrix<f64>, alpha: f64, s: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    (0..n)
        .map(|k| {
            let mut g = alpha * s[k];
            for j in 0..n {
                g += a[(k, j)] * (s[k] - s[j] - 1.0);
                g -= a[(j, k)] * (s[j] - s[k] - 1.0);
            }
            g
        })
        .collect()
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[k] += h;
            down[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Least squares by the normal equations, with `sigma^2 (X'X)^-1` standard errors.
pub fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = x.shape();
    let xtx = x.transpose() * x;
    let inv = xtx.clone().try_inverse().expect("full rank");
    let beta = &inv * x.transpose() * y;
    let resid = y - x * &beta;
    let sigma2 = resid.dot(&resid) / (n - p) as f64;
    let se = (0..p).map(|i| (sigma2 * inv[(i, i)]).sqrt()).collect();
    (beta.iter().copied().collect(), se)
}

/// Expected union size by enumerating every k-subset.
pub fn accumulation_by_enumeration(sets: &[BTreeSet<u32>]) -> Vec<f64> {
    let n = sets.len();
    let mut total = vec![0.0; n];
    let mut count = vec![0usize; n];
    for mask in 1u32..(1 << n) {
        let k = mask.count_ones() as usize;
        let union: BTreeSet<u32> =
            (0..n).filter(|i| mask & (1 << i) != 0).flat_map(|i| sets[i].iter().copied()).collect();
        total[k - 1] += union.len() as f64;
        count[k - 1] += 1;
    }
    total.iter().zip(count).map(|(t, c)| t / c as f64).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Minimal blocking HTTP/1.1 client for talking to a spawned server.
pub struct HttpReply {
    pub status: u16,
    pub body: serde_json::Value,
}

pub fn http(addr: &str, method: &str, path: &str, body: Option<&serde_json::Value>) -> std::io::Result<HttpReply> {
    let mut stream = TcpStream::connect(addr)?;
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
        payload.len()
    )?;
    let mut reader = BufReader::new(stream);
    let mut status_line = String::new();
    reader.read_line(&mut status_line)?;
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, status_line.clone()))?;
    let mut headers = BTreeMap::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    if headers.get("transfer-encoding").is_some_and(|v| v.eq_ignore_ascii_case("chunked")) {
        raw = dechunk(&raw);
    }
    let body = if raw.is_empty() { serde_json::Value::Null } else { serde_json::from_slice(&raw).unwrap_or(serde_json::Value::Null) };
    Ok(HttpReply { status, body })
}

fn dechunk(mut raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let Some(pos) = raw.windows(2).position(|w| w == b"\r\n") else { break };
        let size = usize::from_str_radix(std::str::from_utf8(&raw[..pos]).unwrap_or("0").trim(), 16).unwrap_or(0);
        if size == 0 {
            break;
        }
        out.extend_from_slice(&raw[pos + 2..pos + 2 + size]);
        raw = &raw[pos + 2 + size + 2..];
    }
    out
}

/// Drives one scheduler session with random answers and undos, checking the
/// scheduler contract at every step against bookkeeping kept here.
pub fn scheduler_session_contract(n: usize, seed: u64, answer_seed: u64, exhaust: bool) -> Result<usize, String> {
    use venuerank::scheduler::{transcript_of, SchedulerState};
    let items: Vec<VenueId> = (0..n).map(|i| vid(&format!("v{i:02}"))).collect();
    let config = SchedulerConfig::default();
    let mut s = SchedulerState::new(items.clone(), seed, config);
    let mut answers = rng(answer_seed);
    let total = n * (n - 1) / 2;
    let mut seen: BTreeSet<(VenueId, VenueId)> = BTreeSet::new();
    let mut counts: BTreeMap<VenueId, u32> = items.iter().map(|v| (v.clone(), 0)).collect();
    let mut undos = 0;
    loop {
        let decision = if exhaust { s.continue_pair(None) } else { s.next_pair(None) };
        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                if seen.len() == total {
                    break;
                }
                return Err(format!("scheduler error {e} with {} of {total} pairs asked", seen.len()));
            }
        };
        let all_three = counts.values().all(|&c| c >= config.min_comparisons);
        let expected_complete = all_three || seen.len() == total;
        if decision.stage_complete != expected_complete {
            return Err(format!("stage_complete {} but counts/exhaustion say {expected_complete}", decision.stage_complete));
        }
        if s.is_stage_complete() != expected_complete {
            return Err("is_stage_complete disagrees with the completion rule".into());
        }
        let Some((a, b)) = decision.pair else {
            if !expected_complete || exhaust {
                return Err("no pair issued before completion".into());
            }
            break;
        };
        let again = if exhaust { s.continue_pair(None) } else { s.next_pair(None) };
        if again.as_ref().ok().and_then(|d| d.pair.clone()) != Some((a.clone(), b.clone())) {
            return Err("repeated request did not re-issue the outstanding pair".into());
        }
        let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        if a == b || seen.contains(&key) {
            return Err(format!("pair ({a}, {b}) issued twice"));
        }
        let outcome = match answers.random_range(0..10) {
            0 => ComparisonOutcome::Indifferent,
            1..=5 => ComparisonOutcome::First,
            _ => ComparisonOutcome::Second,
        };
        let before = s.clone();
        let before_json = serde_json::to_string(&s).map_err(|e| e.to_string())?;
        s.record_outcome(&a, &b, outcome).map_err(|e| e.to_string())?;
        if answers.random_range(0..8) == 0 {
            s.undo().map_err(|e| e.to_string())?;
            undos += 1;
            if s != before || serde_json::to_string(&s).map_err(|e| e.to_string())? != before_json {
                return Err("undo did not restore the prior state".into());
            }
            let reissued = if exhaust { s.continue_pair(None) } else { s.next_pair(None) };
            if reissued.ok().and_then(|d| d.pair) != Some((a.clone(), b.clone())) {
                return Err("undo did not re-serve the same pair".into());
            }
            s.record_outcome(&a, &b, outcome).map_err(|e| e.to_string())?;
        }
        seen.insert(key);
        *counts.get_mut(&a).unwrap() += 1;
        *counts.get_mut(&b).unwrap() += 1;
        s.check_invariants()?;
    }
    if exhaust && seen.len() != total {
        return Err(format!("exhaustive session stopped at {} of {total}", seen.len()));
    }
    let transcript = transcript_of(&s);
    let replayed = SchedulerState::replay(items.clone(), seed, config, &transcript).map_err(|e| e.to_string())?;
    if replayed.history() != s.history() || transcript_of(&replayed) != transcript {
        return Err("replay under the same seed diverged".into());
    }
    // a fresh run with the same seed and answers issues the same pairs
    let mut fresh = SchedulerState::new(items, seed, config);
    for e in &transcript {
        let d = fresh.continue_pair(None).map_err(|e| e.to_string())?;
        if d.pair != Some((e.first.clone(), e.second.clone())) {
            return Err("fresh run under the same seed issued a different pair".into());
        }
        fresh.record_outcome(&e.first, &e.second, e.outcome).map_err(|e| e.to_string())?;
    }
    Ok(undos)
}

/// Replaces every respondent's comparisons by a scheduler session over their
/// consideration set answered by an agent from `make_agent(index, items)`.
pub fn dataset_from_agents(
    template: &Dataset,
    seed: u64,
    make_agent: impl Fn(usize, &[VenueId]) -> venuerank::sim::AgentSpec,
) -> Dataset {
    use venuerank::sim::{derive_seed, run_agent_session, SessionLength};
    let mut ds = Dataset { comparisons: Vec::new(), ..template.clone() };
    for (i, r) in template.respondents.values().enumerate() {
        let mut items = r.consideration_set.clone();
        items.sort();
        if items.len() < 2 {
            continue;
        }
        let agent = make_agent(i, &items);
        for e in run_agent_session(items, agent, SchedulerConfig::default(), derive_seed(seed, i as u64, 0), SessionLength::StageComplete) {
            ds.comparisons.push(Comparison {
                respondent_id: r.id.clone(),
                first: e.first,
                second: e.second,
                outcome: e.outcome,
                order_index: e.order_index,
            });
        }
    }
    ds
}

pub fn normal_utilities(items: &[VenueId], seed: u64) -> BTreeMap<VenueId, f64> {
    let mut r = rng(seed);
    items.iter().map(|v| (v.clone(), r.sample::<f64, _>(rand_distr::StandardNormal))).collect()
}
