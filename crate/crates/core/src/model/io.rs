//! Line-delimited comma-separated dataset files.
//!
//! | file          | columns                                                                 |
//! |---------------|-------------------------------------------------------------------------|
//! | venues        | `id,name,works_count[,jif][,field_tags]` (tags `;`-separated)             |
//! | comparisons   | `respondent_id,first,second,outcome,order_index` (`first`/`second`/`tie`) |
//! | respondents   | `id,field,career_stage,prestige|NA,gender|NA,top;mid;low|NA,set`          |
//! | publications  | `respondent_id,venue_id`                                                |
//! | citations     | `citing_id,cited_id,count`                                              |
//!
//! Lines starting with `#` are comments. A first line naming the columns is
//! tolerated and skipped.

use std::collections::{btree_map::Entry, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::*;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error in {file} at line {line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("dangling reference to {0:?}")]
    DanglingReference(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("dataset violates {} invariant(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),
}

/// Locations of the five dataset files. Publications and citations are optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub venues: PathBuf,
    pub respondents: PathBuf,
    pub comparisons: PathBuf,
    pub publications: Option<PathBuf>,
    pub citations: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside one directory. Optional files are only
    /// included when they exist.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            venues: dir.join("venues.csv"),
            respondents: dir.join("respondents.csv"),
            comparisons: dir.join("comparisons.csv"),
            publications: optional("publications.csv"),
            citations: optional("citations.csv"),
        }
    }

    /// Same layout, every file present (for writing).
    pub fn all_in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            venues: dir.join("venues.csv"),
            respondents: dir.join("respondents.csv"),
            comparisons: dir.join("comparisons.csv"),
            publications: Some(dir.join("publications.csv")),
            citations: Some(dir.join("citations.csv")),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &PathBuf> {
        [Some(&self.venues), Some(&self.respondents), Some(&self.comparisons)]
            .into_iter()
            .chain([self.publications.as_ref(), self.citations.as_ref()])
            .flatten()
    }
}

/// SHA-256 over the raw bytes of every present file, in a fixed order.
pub fn hash_files(paths: &DatasetPaths) -> Result<String, LoadError> {
    let mut hasher = Sha256::new();
    for p in paths.iter() {
        hasher.update(read_file(p)?.as_bytes());
        hasher.update([0u8]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset, LoadError> {
    let venues_src = read_file(&paths.venues)?;
    let respondents_src = read_file(&paths.respondents)?;
    let comparisons_src = read_file(&paths.comparisons)?;
    let publications_src = paths.publications.as_deref().map(read_file).transpose()?;
    let citations_src = paths.citations.as_deref().map(read_file).transpose()?;

    let mut ds = Dataset::default();
    parse_venues(&venues_src, &mut ds)?;
    parse_respondents(&respondents_src, &mut ds)?;
    parse_comparisons(&comparisons_src, &mut ds)?;
    if let Some(src) = publications_src {
        parse_publications(&src, &mut ds)?;
    }
    if let Some(src) = citations_src {
        parse_citations(&src, &mut ds)?;
    }
    check_references(&ds)?;

    let violations = ds.validate();
    if !violations.is_empty() {
        return Err(LoadError::Invalid(violations));
    }
    Ok(ds)
}

/// Writes every file in canonical order. Loading the output and writing it
/// again yields identical bytes.
pub fn write_dataset(ds: &Dataset, paths: &DatasetPaths) -> io::Result<()> {
    let [venues, respondents, comparisons, publications, citations] = canonical_files(ds)?;
    File::create(&paths.venues)?.write_all(&venues)?;
    File::create(&paths.respondents)?.write_all(&respondents)?;
    File::create(&paths.comparisons)?.write_all(&comparisons)?;
    if let Some(p) = &paths.publications {
        File::create(p)?.write_all(&publications)?;
    }
    if let Some(p) = &paths.citations {
        File::create(p)?.write_all(&citations)?;
    }
    Ok(())
}

/// Hash of the canonical serialization, independent of input file layout.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut hasher = Sha256::new();
    for part in canonical_files(ds).expect("in-memory write cannot fail") {
        hasher.update(&part);
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

fn canonical_files(ds: &Dataset) -> io::Result<[Vec<u8>; 5]> {
    let mut venues = writer();
    for v in ds.venues.values() {
        let jif = v.external_score.map(|s| s.to_string()).unwrap_or_default();
        let tags = v.field_tags.iter().cloned().collect::<Vec<_>>().join(";");
        venues.write_record([v.id.as_str(), &v.name, &v.works_count.to_string(), &jif, &tags])?;
    }

    let mut respondents = writer();
    for r in ds.respondents.values() {
        let prestige = r.prestige_decile.map(|d| d.to_string()).unwrap_or_else(|| "NA".into());
        let gender = r.gender.map(|g| g.as_token()).unwrap_or("NA");
        let aspirations = r
            .aspirations
            .as_ref()
            .map(|a| format!("{};{};{}", a.top, a.mid, a.low))
            .unwrap_or_else(|| "NA".into());
        let set = r.consideration_set.iter().map(VenueId::as_str).collect::<Vec<_>>().join(";");
        respondents.write_record([
            r.id.as_str(),
            &r.field,
            r.career_stage.as_token(),
            &prestige,
            gender,
            &aspirations,
            &set,
        ])?;
    }

    let mut comparisons = writer();
    let mut sorted: Vec<&Comparison> = ds.comparisons.iter().collect();
    sorted.sort_by(|a, b| (&a.respondent_id, a.order_index).cmp(&(&b.respondent_id, b.order_index)));
    for c in sorted {
        comparisons.write_record([
            c.respondent_id.as_str(),
            c.first.as_str(),
            c.second.as_str(),
            c.outcome.as_token(),
            &c.order_index.to_string(),
        ])?;
    }

    let mut publications = writer();
    for r in ds.respondents.values() {
        for v in &r.publications {
            publications.write_record([r.id.as_str(), v.as_str()])?;
        }
    }

    let mut citations = writer();
    for ((citing, cited), count) in &ds.citations {
        citations.write_record([citing.as_str(), cited.as_str(), &count.to_string()])?;
    }

    Ok([
        finish(venues)?,
        finish(respondents)?,
        finish(comparisons)?,
        finish(publications)?,
        finish(citations)?,
    ])
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> io::Result<Vec<u8>> {
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

fn read_file(path: &Path) -> Result<String, LoadError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
    Ok(s)
}

/// Yields `(line, fields)` for every data record.
fn records<'a>(
    src: &'a str,
    file: &'a str,
    header_token: &'a str,
) -> impl Iterator<Item = Result<(u64, Vec<String>), LoadError>> + 'a {
    let reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(src.as_bytes());
    let mut first = true;
    reader.into_records().filter_map(move |rec| {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Some(Err(LoadError::Parse { file: file.to_string(), line, message: e.to_string() }));
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        let is_header = std::mem::take(&mut first) && fields.first().map(String::as_str) == Some(header_token);
        if is_header || fields.iter().all(String::is_empty) {
            return None;
        }
        Some(Ok((line, fields)))
    })
}

fn parse_err(file: &str, line: u64, message: impl Into<String>) -> LoadError {
    LoadError::Parse { file: file.to_string(), line, message: message.into() }
}

fn venue_id(file: &str, line: u64, s: &str) -> Result<VenueId, LoadError> {
    VenueId::new(s).ok_or_else(|| parse_err(file, line, "blank venue id"))
}

fn optional_field(s: &str) -> Option<&str> {
    let s = s.trim();
    (!s.is_empty() && !s.eq_ignore_ascii_case("NA")).then_some(s)
}

fn semicolon_list(file: &str, line: u64, s: &str) -> Result<Vec<VenueId>, LoadError> {
    s.split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| venue_id(file, line, t))
        .collect()
}

fn parse_venues(src: &str, ds: &mut Dataset) -> Result<(), LoadError> {
    const FILE: &str = "venues";
    for rec in records(src, FILE, "id") {
        let (line, f) = rec?;
        if !(3..=5).contains(&f.len()) {
            return Err(parse_err(FILE, line, format!("expected 3 to 5 columns, found {}", f.len())));
        }
        let id = venue_id(FILE, line, &f[0])?;
        let works_count = f[2]
            .parse::<u64>()
            .map_err(|_| parse_err(FILE, line, format!("works_count {:?} is not a non-negative integer", f[2])))?;
        let external_score = match f.get(3).and_then(|s| optional_field(s)) {
            None => None,
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|_| parse_err(FILE, line, format!("jif {s:?} is not a number")))?,
            ),
        };
        let field_tags: BTreeSet<String> = f
            .get(4)
            .map(|s| s.split(';').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect())
            .unwrap_or_default();
        let venue = Venue { id: id.clone(), name: f[1].clone(), works_count, external_score, field_tags };
        match ds.venues.entry(id) {
            Entry::Occupied(e) => return Err(LoadError::DuplicateKey(e.key().to_string())),
            Entry::Vacant(e) => {
                e.insert(venue);
            }
        }
    }
    Ok(())
}

fn parse_respondents(src: &str, ds: &mut Dataset) -> Result<(), LoadError> {
    const FILE: &str = "respondents";
    for rec in records(src, FILE, "id") {
        let (line, f) = rec?;
        if f.len() != 7 {
            return Err(parse_err(FILE, line, format!("expected 7 columns, found {}", f.len())));
        }
        if f[0].is_empty() {
            return Err(parse_err(FILE, line, "blank respondent id"));
        }
        let career_stage = CareerStage::from_token(&f[2])
            .ok_or_else(|| parse_err(FILE, line, format!("unknown career stage {:?}", f[2])))?;
        let prestige_decile = match optional_field(&f[3]) {
            None => None,
            Some(s) => Some(
                s.parse::<u8>()
                    .map_err(|_| parse_err(FILE, line, format!("prestige decile {s:?} is not an integer")))?,
            ),
        };
        let gender = match optional_field(&f[4]) {
            None => None,
            Some(s) => Some(Gender::from_token(s).ok_or_else(|| parse_err(FILE, line, format!("unknown gender {s:?}")))?),
        };
        let aspirations = match optional_field(&f[5]) {
            None => None,
            Some(s) => {
                let tiers = semicolon_list(FILE, line, s)?;
                let [top, mid, low]: [VenueId; 3] = tiers
                    .try_into()
                    .map_err(|_| parse_err(FILE, line, "aspirations must list exactly three venues"))?;
                Some(Aspirations { top, mid, low })
            }
        };
        let consideration_set = semicolon_list(FILE, line, &f[6])?;
        let record = RespondentRecord {
            id: f[0].clone(),
            field: f[1].clone(),
            career_stage,
            prestige_decile,
            gender,
            consideration_set,
            aspirations,
            publications: BTreeSet::new(),
        };
        match ds.respondents.entry(f[0].clone()) {
            Entry::Occupied(e) => return Err(LoadError::DuplicateKey(e.key().clone())),
            Entry::Vacant(e) => {
                e.insert(record);
            }
        }
    }
    Ok(())
}

fn parse_comparisons(src: &str, ds: &mut Dataset) -> Result<(), LoadError> {
    const FILE: &str = "comparisons";
    let mut keys = HashSet::new();
    for rec in records(src, FILE, "respondent_id") {
        let (line, f) = rec?;
        if f.len() != 5 {
            return Err(parse_err(FILE, line, format!("expected 5 columns, found {}", f.len())));
        }
        let outcome = ComparisonOutcome::from_token(&f[3])
            .ok_or_else(|| parse_err(FILE, line, format!("unknown outcome {:?}", f[3])))?;
        let order_index = f[4]
            .parse::<u64>()
            .map_err(|_| parse_err(FILE, line, format!("order_index {:?} is not a non-negative integer", f[4])))?;
        if !keys.insert((f[0].clone(), order_index)) {
            return Err(LoadError::DuplicateKey(format!("{}#{}", f[0], order_index)));
        }
        ds.comparisons.push(Comparison {
            respondent_id: f[0].clone(),
            first: venue_id(FILE, line, &f[1])?,
            second: venue_id(FILE, line, &f[2])?,
            outcome,
            order_index,
        });
    }
    Ok(())
}

fn parse_publications(src: &str, ds: &mut Dataset) -> Result<(), LoadError> {
    const FILE: &str = "publications";
    for rec in records(src, FILE, "respondent_id") {
        let (line, f) = rec?;
        if f.len() != 2 {
            return Err(parse_err(FILE, line, format!("expected 2 columns, found {}", f.len())));
        }
        let venue = venue_id(FILE, line, &f[1])?;
        let r = ds
            .respondents
            .get_mut(&f[0])
            .ok_or_else(|| LoadError::DanglingReference(f[0].clone()))?;
        if !r.publications.insert(venue) {
            return Err(LoadError::DuplicateKey(format!("{}:{}", f[0], f[1])));
        }
    }
    Ok(())
}

fn parse_citations(src: &str, ds: &mut Dataset) -> Result<(), LoadError> {
    const FILE: &str = "citations";
    for rec in records(src, FILE, "citing_id") {
        let (line, f) = rec?;
        if f.len() != 3 {
            return Err(parse_err(FILE, line, format!("expected 3 columns, found {}", f.len())));
        }
        let count = f[2]
            .parse::<f64>()
            .map_err(|_| parse_err(FILE, line, format!("count {:?} is not a number", f[2])))?;
        let key = (venue_id(FILE, line, &f[0])?, venue_id(FILE, line, &f[1])?);
        match ds.citations.entry(key) {
            Entry::Occupied(e) => return Err(LoadError::DuplicateKey(format!("{}->{}", e.key().0, e.key().1))),
            Entry::Vacant(e) => {
                e.insert(count);
            }
        }
    }
    Ok(())
}

fn check_references(ds: &Dataset) -> Result<(), LoadError> {
    let venue = |v: &VenueId| {
        if ds.venues.contains_key(v) {
            Ok(())
        } else {
            Err(LoadError::DanglingReference(v.to_string()))
        }
    };
    for r in ds.respondents.values() {
        r.consideration_set.iter().try_for_each(venue)?;
        r.publications.iter().try_for_each(venue)?;
        if let Some(a) = &r.aspirations {
            a.iter().try_for_each(venue)?;
        }
    }
    for c in &ds.comparisons {
        if !ds.respondents.contains_key(&c.respondent_id) {
            return Err(LoadError::DanglingReference(c.respondent_id.clone()));
        }
        venue(&c.first)?;
        venue(&c.second)?;
    }
    for (citing, cited) in ds.citations.keys() {
        venue(citing)?;
        venue(cited)?;
    }
    Ok(())
}
