mod common;

use std::path::Path;

use common::*;

use venuerank::analytics::{prediction_accuracy, AnalyticsConfig, ScoreSource};
use venuerank::cli::run;
use venuerank::model::{write_dataset, CareerStage, ComparisonOutcome::*, Dataset, DatasetPaths, Gender};
use venuerank::rank::{leave_one_out_field_scores, write_scores, RankConfig};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Output {
    /// Standard output without the manifest line.
    fn table(&self) -> &str {
        self.stdout.split_once('\n').map_or("", |(_, rest)| rest)
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.table().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
    }
}

fn cli(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("venuerank").chain(args.iter().copied()).map(Into::into);
    let code = run(argv, &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn write(ds: &Dataset, dir: &Path) -> String {
    write_dataset(ds, &DatasetPaths::all_in_dir(dir)).unwrap();
    dir.to_str().unwrap().to_string()
}

fn two_venues() -> Dataset {
    let mut ds = Dataset::default();
    for id in ["a", "b"] {
        ds.venues.insert(vid(id), venue(id, 1, None));
    }
    let r = respondent("r", "F", CareerStage::Assistant, &["a", "b"]);
    ds.respondents.insert(r.id.clone(), r);
    add_comparisons(&mut ds, "r", &[("a", "b", First)]);
    ds
}

/// Three venues; every respondent prefers one venue over both others. Six
/// assistants pick a, four associates b and two full professors c, so with
/// any one respondent held out the field order stays a, b, c.
fn stage_fixture() -> Dataset {
    let mut ds = Dataset::default();
    for (id, jif) in [("a", 1.0), ("b", 3.0), ("c", 2.0)] {
        ds.venues.insert(vid(id), venue(id, 5, Some(jif)));
    }
    let groups = [("a", CareerStage::Assistant, 6), ("b", CareerStage::Associate, 4), ("c", CareerStage::Full, 2)];
    let mut i = 0;
    for (top, stage, n) in groups {
        for _ in 0..n {
            let id = format!("r{i:02}");
            let mut r = respondent(&id, "F", stage, &["a", "b", "c"]);
            r.gender = Some(if i % 2 == 0 { Gender::Man } else { Gender::Woman });
            r.prestige_decile = Some((i % 5 + 1) as u8);
            ds.respondents.insert(id.clone(), r);
            let others: Vec<&str> = ["a", "b", "c"].into_iter().filter(|v| *v != top).collect();
            add_comparisons(&mut ds, &id, &[(top, others[0], First), (others[1], top, Second)]);
            i += 1;
        }
    }
    ds
}

#[test]
fn individual_fit_of_one_comparison_has_unit_gap() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&two_venues(), dir.path());
    let o = cli(&["--data", &data, "fit", "--level", "individual", "--respondent", "r"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let lines: Vec<&str> = o.table().lines().collect();
    assert!(lines[0].starts_with("#alpha=0,"));
    assert_eq!(lines[1], "venue_id,raw,rescaled,normalized,ordinal_rank");
    let raw: Vec<(String, f64)> = lines[2..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap())
        })
        .collect();
    assert_eq!(raw[0].0, "a");
    assert!((raw[0].1 - raw[1].1 - 1.0).abs() < 1e-9);
}

#[test]
fn manifest_heads_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&two_venues(), dir.path());
    let o = cli(&["--data", &data, "--seed", "9", "fit", "--level", "field", "--field", "F"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let head = o.stdout.lines().next().unwrap();
    let m: serde_json::Value = serde_json::from_str(head.strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(m["subcommand"], "fit");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["args"]["level"], "field");
    assert_eq!(m["dataset_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn leave_one_out_fit_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic(31);
    let data = write(&ds, dir.path());
    let r = ds.respondents.keys().nth(3).unwrap().clone();
    let field = ds.respondents[&r].field.clone();
    let o = cli(&["--data", &data, "fit", "--level", "field", "--loo", "--respondent", &r]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let mut expected = Vec::new();
    write_scores(&mut expected, &leave_one_out_field_scores(&ds, &field, &r, &RankConfig::consensus()).unwrap()).unwrap();
    assert_eq!(o.table(), String::from_utf8(expected).unwrap());
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&two_venues(), dir.path());
    let missing = dir.path().join("nowhere");
    for args in [
        vec!["--data", missing.to_str().unwrap(), "fit", "--level", "global"],
        vec!["fit", "--level", "global"],
        vec!["--data", &data, "fit", "--level", "field", "--field", "Nope"],
        vec!["--data", &data, "fit", "--level", "individual"],
        vec!["--data", &data, "fit", "--level", "individual", "--respondent", "r", "--alpha", "-1"],
        vec!["--data", &data, "analyze", "no-such-analysis"],
    ] {
        let o = cli(&args);
        assert_eq!(o.code, 2, "{args:?}");
        assert!(o.stdout.is_empty(), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn empty_results_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&stage_fixture(), dir.path());
    let o = cli(&["--data", &data, "analyze", "rank-delta", "--field", "F", "--min-selection-pct", "101"]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(o.stdout.is_empty());
}

#[test]
fn identical_sets_overlap_fully() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&stage_fixture(), dir.path());
    for mode in ["set-share", "any-other"] {
        let o = cli(&["--data", &data, "analyze", "overlap", "--overlap-mode", mode]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        assert_eq!(o.rows(), vec![vec!["F".to_string(), "12".into(), "100".into()]]);
    }
}

#[test]
fn accuracy_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let ds = stage_fixture();
    let data = write(&ds, dir.path());
    let o = cli(&["--data", &data, "analyze", "accuracy", "--source", "jif"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let acc = prediction_accuracy(&ds, None, ScoreSource::Jif, false, &AnalyticsConfig::default()).unwrap();
    let rows = o.rows();
    assert_eq!(rows.len(), 2);
    let all = rows.iter().find(|r| r[0] == "all").unwrap();
    assert_eq!(all[3], acc.eligible.to_string());
    assert_eq!(all[5].parse::<f64>().unwrap(), acc.percent);
    // b over c is right for the jif ranking; a over b and a over c are wrong
    assert_eq!(acc.eligible, 24);
    let right = 4 * 2 + 6 * 0 + 2 * 1;
    assert!((acc.percent - 100.0 * right as f64 / 24.0).abs() < 1e-9);
}

#[test]
fn stage_regression_is_exact_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&stage_fixture(), dir.path());
    let o = cli(&["--data", &data, "analyze", "regress", "--outcome", "topchoice"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let est = |term: &str| -> f64 {
        let row = o.rows().into_iter().find(|r| r[0] == term).unwrap_or_else(|| panic!("{term} in {}", o.stdout));
        row[1].parse().unwrap()
    };
    // top choices sit at positions 1, 1/2 and 0 of the held-out field order
    assert!((est("intercept") - 1.0).abs() < 1e-9);
    assert!((est("career_stage=associate") + 0.5).abs() < 1e-9);
    assert!((est("career_stage=full") + 1.0).abs() < 1e-9);
    assert!(est("prestige").abs() < 1e-9);
    assert!(o.rows().iter().all(|r| r[6] == "12"));
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&synthetic(32), dir.path());
    for args in [
        vec!["analyze", "accumulation", "--field", "Biology", "--realizations", "40"],
        vec!["analyze", "violations"],
        vec!["analyze", "regress", "--permute", "career_stage=full", "--iterations", "99"],
        vec!["simulate", "convergence", "--items", "8", "--sessions", "12", "--shuffles", "3"],
    ] {
        let run = |jobs: &str| {
            let mut full = vec!["--data", data.as_str(), "--seed", "4", "--jobs", jobs];
            full.extend(args.iter().copied());
            cli(&full)
        };
        let (a, b) = (run("1"), run("4"));
        assert_eq!(a.code, 0, "{args:?}: {}", a.stderr);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}
