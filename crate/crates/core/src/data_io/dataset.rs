//! On-disk datasets: a directory with `manifest.json`, `counts.csv` and `signals.csv`.
//!
//! `counts.csv` is long form with header `time,platform,opinion,count`; absent
//! rows are zero counts. `signals.csv` has header `time,series,value` where a
//! series is `S`, `S:<opinion>` (per-opinion mode) or `X:<intervention>`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::types::{CountPanel, Dimensions, Exogenous, SignalSet};

pub const DATASET_SCHEMA: &str = "omm.dataset";
pub const DATASET_VERSION: &str = "1.0";

const MANIFEST: &str = "manifest.json";
const COUNTS: &str = "counts.csv";
const SIGNALS: &str = "signals.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub platforms: Vec<String>,
    pub opinions: Vec<String>,
    pub interventions: Vec<String>,
    /// Free-form bin width such as `"1h"`; metadata only.
    pub bin_width: String,
    pub counts: CountPanel,
    pub signals: SignalSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema: String,
    version: String,
    platforms: Vec<String>,
    opinions: Vec<String>,
    interventions: Vec<String>,
    bins: usize,
    bin_width: String,
}

impl DatasetBundle {
    pub fn new(
        platforms: Vec<String>,
        opinions: Vec<String>,
        interventions: Vec<String>,
        bin_width: impl Into<String>,
        counts: CountPanel,
        signals: SignalSet,
    ) -> Result<Self> {
        let bundle = Self {
            platforms,
            opinions,
            interventions,
            bin_width: bin_width.into(),
            counts,
            signals,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn dimensions(&self) -> Dimensions {
        Dimensions {
            platforms: self.platforms.len(),
            opinions: self.opinions.len(),
            interventions: self.interventions.len(),
            bins: self.counts.bins(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = Dimensions::new(
            self.platforms.len(),
            self.opinions.len(),
            self.interventions.len(),
            self.counts.bins(),
        )?;
        self.counts.check_shape(dims.platforms, dims.opinions)?;
        if self.signals.bins() != dims.bins {
            return Err(OmmError::DimensionMismatch(format!(
                "signals cover {} bins, counts cover {}",
                self.signals.bins(),
                dims.bins
            )));
        }
        if self.signals.n_interventions() != dims.interventions {
            return Err(OmmError::DimensionMismatch(format!(
                "{} intervention labels for {} intervention series",
                dims.interventions,
                self.signals.n_interventions()
            )));
        }
        self.signals.check_opinions(dims.opinions)?;
        for (kind, labels) in [
            ("platform", &self.platforms),
            ("opinion", &self.opinions),
            ("intervention", &self.interventions),
        ] {
            let mut seen = HashSet::new();
            for l in labels {
                if l.is_empty() || l.contains(',') || l.contains('\n') {
                    return Err(OmmError::InvalidParameter(format!("invalid {kind} label {l:?}")));
                }
                if !seen.insert(l) {
                    return Err(OmmError::InvalidParameter(format!("duplicate {kind} label {l:?}")));
                }
            }
        }
        Ok(())
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| OmmError::io(path, e))
}

fn malformed(file: &str, row: usize, detail: impl Into<String>) -> OmmError {
    OmmError::Malformed {
        file: file.into(),
        row,
        detail: detail.into(),
    }
}

fn check_header(file: &str, reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = reader
        .headers()
        .map_err(|e| malformed(file, 1, e.to_string()))?
        .clone();
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(malformed(file, 1, format!("header {found:?}, expected {expected:?}")));
    }
    Ok(())
}

fn parse_time(file: &str, row: usize, raw: &str, bins: usize) -> Result<usize> {
    let t: i64 = raw
        .trim()
        .parse()
        .map_err(|_| malformed(file, row, format!("time {raw:?} is not an integer")))?;
    if t < 1 || t as usize > bins {
        return Err(OmmError::LengthMismatch {
            file: file.into(),
            row,
            detail: format!("time {t} outside 1..={bins}"),
        });
    }
    Ok(t as usize)
}

fn index_of(labels: &[String]) -> HashMap<&str, usize> {
    labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect()
}

fn parse_counts(text: &str, m: &Manifest) -> Result<CountPanel> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    check_header(COUNTS, &mut reader, &["time", "platform", "opinion", "count"])?;
    let platforms = index_of(&m.platforms);
    let opinions = index_of(&m.opinions);
    let mut counts = Array3::<u64>::zeros((m.platforms.len(), m.opinions.len(), m.bins));
    let mut seen = HashSet::new();
    for (n, record) in reader.records().enumerate() {
        let row = n + 2;
        let rec = record.map_err(|e| malformed(COUNTS, row, e.to_string()))?;
        if rec.len() != 4 {
            return Err(malformed(COUNTS, row, format!("expected 4 fields, found {}", rec.len())));
        }
        let t = parse_time(COUNTS, row, &rec[0], m.bins)?;
        let p = *platforms.get(&rec[1]).ok_or_else(|| OmmError::UnknownLabel {
            file: COUNTS.into(),
            row,
            column: "platform".into(),
            label: rec[1].into(),
        })?;
        let i = *opinions.get(&rec[2]).ok_or_else(|| OmmError::UnknownLabel {
            file: COUNTS.into(),
            row,
            column: "opinion".into(),
            label: rec[2].into(),
        })?;
        let raw = rec[3].trim();
        let value: i64 = raw
            .parse()
            .map_err(|_| malformed(COUNTS, row, format!("count {raw:?} is not an integer")))?;
        if value < 0 {
            return Err(OmmError::NegativeCount {
                file: COUNTS.into(),
                row,
                column: "count".into(),
                value: raw.into(),
            });
        }
        if !seen.insert((t, p, i)) {
            return Err(malformed(COUNTS, row, format!("duplicate row for t={t}, {}, {}", &rec[1], &rec[2])));
        }
        counts[[p, i, t - 1]] = value as u64;
    }
    CountPanel::new(counts)
}

fn parse_signals(text: &str, m: &Manifest) -> Result<SignalSet> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    check_header(SIGNALS, &mut reader, &["time", "series", "value"])?;
    let mut series: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let opinions: HashSet<&str> = m.opinions.iter().map(String::as_str).collect();
    let interventions: HashSet<&str> = m.interventions.iter().map(String::as_str).collect();
    for (n, record) in reader.records().enumerate() {
        let row = n + 2;
        let rec = record.map_err(|e| malformed(SIGNALS, row, e.to_string()))?;
        if rec.len() != 3 {
            return Err(malformed(SIGNALS, row, format!("expected 3 fields, found {}", rec.len())));
        }
        let t = parse_time(SIGNALS, row, &rec[0], m.bins)?;
        let name = rec[1].to_string();
        let known = name == "S"
            || name.strip_prefix("S:").is_some_and(|o| opinions.contains(o))
            || name.strip_prefix("X:").is_some_and(|x| interventions.contains(x));
        if !known {
            return Err(OmmError::UnknownLabel {
                file: SIGNALS.into(),
                row,
                column: "series".into(),
                label: name,
            });
        }
        let value: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| malformed(SIGNALS, row, format!("value {:?} is not a number", &rec[2])))?;
        if !value.is_finite() {
            return Err(malformed(SIGNALS, row, format!("value {value} is not finite")));
        }
        if name.starts_with('S') && value < 0.0 {
            return Err(malformed(SIGNALS, row, format!("exogenous signal value {value} is negative")));
        }
        let slot = series.entry(name.clone()).or_insert_with(|| vec![None; m.bins]);
        if slot[t - 1].replace(value).is_some() {
            return Err(malformed(SIGNALS, row, format!("duplicate value for {name} at t={t}")));
        }
    }
    let per_opinion = series.keys().any(|k| k.starts_with("S:"));
    if per_opinion && series.contains_key("S") {
        return Err(malformed(SIGNALS, 0, "both a shared S and per-opinion S:<opinion> series are present"));
    }
    let mut take = |name: &str| -> Result<Array1<f64>> {
        let values = series.remove(name).ok_or_else(|| OmmError::MissingSeries {
            file: SIGNALS.into(),
            series: name.into(),
        })?;
        let missing: Vec<usize> = values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_none().then_some(i + 1))
            .collect();
        if let Some(&first) = missing.first() {
            return Err(OmmError::LengthMismatch {
                file: SIGNALS.into(),
                row: 0,
                detail: format!("series {name} has {} of {} bins (first gap at t={first})", m.bins - missing.len(), m.bins),
            });
        }
        Ok(values.into_iter().map(|v| v.unwrap_or_default()).collect())
    };
    let exogenous = if per_opinion {
        let mut s = Array2::zeros((m.opinions.len(), m.bins));
        for (j, o) in m.opinions.iter().enumerate() {
            s.row_mut(j).assign(&take(&format!("S:{o}"))?);
        }
        Exogenous::PerOpinion(s)
    } else {
        Exogenous::Shared(take("S")?)
    };
    let mut x = Array2::zeros((m.interventions.len(), m.bins));
    for (k, name) in m.interventions.iter().enumerate() {
        x.row_mut(k).assign(&take(&format!("X:{name}"))?);
    }
    SignalSet::from_parts(exogenous, x)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read_to_string(&manifest_path)?).map_err(|e| OmmError::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(OmmError::Schema {
            expected: DATASET_SCHEMA.into(),
            found: manifest.schema,
        });
    }
    super::check_version(&manifest.version)?;
    if manifest.bins == 0 {
        return Err(malformed(MANIFEST, 0, "bins must be ≥ 1"));
    }
    let counts = parse_counts(&read_to_string(&dir.join(COUNTS))?, &manifest)?;
    let signals = parse_signals(&read_to_string(&dir.join(SIGNALS))?, &manifest)?;
    DatasetBundle::new(
        manifest.platforms,
        manifest.opinions,
        manifest.interventions,
        manifest.bin_width,
        counts,
        signals,
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| OmmError::io(path, e))
}

/// Writes `bundle` into `dir`, creating it if needed. Zero counts are omitted.
pub fn save_dataset(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| OmmError::io(dir, e))?;
    let manifest = Manifest {
        schema: DATASET_SCHEMA.into(),
        version: DATASET_VERSION.into(),
        platforms: bundle.platforms.clone(),
        opinions: bundle.opinions.clone(),
        interventions: bundle.interventions.clone(),
        bins: bundle.counts.bins(),
        bin_width: bundle.bin_width.clone(),
    };
    write_file(&dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;

    let mut counts = String::from("time,platform,opinion,count\n");
    for t in 0..bundle.counts.bins() {
        for (p, pl) in bundle.platforms.iter().enumerate() {
            for (i, op) in bundle.opinions.iter().enumerate() {
                let n = bundle.counts.get(p, i, t);
                if n > 0 {
                    counts.push_str(&format!("{},{pl},{op},{n}\n", t + 1));
                }
            }
        }
    }
    write_file(&dir.join(COUNTS), &counts)?;

    let mut signals = String::from("time,series,value\n");
    let mut push = |name: &str, values: &mut dyn Iterator<Item = f64>| {
        for (t, v) in values.enumerate() {
            signals.push_str(&format!("{},{name},{v:?}\n", t + 1));
        }
    };
    match bundle.signals.exogenous() {
        Exogenous::Shared(s) => push("S", &mut s.iter().copied()),
        Exogenous::PerOpinion(s) => {
            for (j, op) in bundle.opinions.iter().enumerate() {
                push(&format!("S:{op}"), &mut s.row(j).iter().copied());
            }
        }
    }
    for (k, name) in bundle.interventions.iter().enumerate() {
        push(&format!("X:{name}"), &mut bundle.signals.interventions().row(k).iter().copied());
    }
    write_file(&dir.join(SIGNALS), &signals)
}

/// `X̂(t) = news(t) - (max news / max S)·S(t)`: coverage in excess of what the
/// exogenous signal alone would predict.
pub fn standardize_intervention(news: &[f64], exogenous: &[f64]) -> Result<Vec<f64>> {
    if news.len() != exogenous.len() {
        return Err(OmmError::DimensionMismatch(format!(
            "news has {} bins, exogenous signal {}",
            news.len(),
            exogenous.len()
        )));
    }
    if news.iter().chain(exogenous).any(|v| !v.is_finite()) {
        return Err(OmmError::NonFinite("series passed to standardize_intervention".into()));
    }
    let max_s = exogenous.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_s > 0.0) {
        return Err(OmmError::InvalidParameter("exogenous signal is all zero".into()));
    }
    let max_news = news.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_news < 0.0 {
        return Err(OmmError::InvalidParameter("news series has a negative maximum".into()));
    }
    let scale = max_news / max_s;
    Ok(news.iter().zip(exogenous).map(|(n, s)| n - scale * s).collect())
}
