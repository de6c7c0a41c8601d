//! Survey CSV ingestion, feature selection and standardization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::matrix::{FeatureMatrix, MatrixError};
use crate::stats;

/// The fifteen potentially toxic elements used as clustering features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Element {
    As,
    Ba,
    Bi,
    Co,
    Cr,
    Cu,
    Mn,
    Mo,
    Ni,
    Pb,
    Sb,
    Sn,
    U,
    V,
    Zn,
}

/// Fixed feature order (alphabetical by symbol). Every matrix and export uses it.
pub const ELEMENTS: [Element; 15] = [
    Element::As,
    Element::Ba,
    Element::Bi,
    Element::Co,
    Element::Cr,
    Element::Cu,
    Element::Mn,
    Element::Mo,
    Element::Ni,
    Element::Pb,
    Element::Sb,
    Element::Sn,
    Element::U,
    Element::V,
    Element::Zn,
];

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::As => "As",
            Element::Ba => "Ba",
            Element::Bi => "Bi",
            Element::Co => "Co",
            Element::Cr => "Cr",
            Element::Cu => "Cu",
            Element::Mn => "Mn",
            Element::Mo => "Mo",
            Element::Ni => "Ni",
            Element::Pb => "Pb",
            Element::Sb => "Sb",
            Element::Sn => "Sn",
            Element::U => "U",
            Element::V => "V",
            Element::Zn => "Zn",
        }
    }

    /// Position in [`ELEMENTS`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ELEMENTS
            .iter()
            .copied()
            .find(|e| e.symbol().eq_ignore_ascii_case(s))
            .ok_or_else(|| IngestError::UnknownElement(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("input has no header row")]
    MissingHeader,
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("no records: file contains a header but no data rows")]
    NoRecords,
    #[error("line {line}: column `{column}`: cannot parse `{value}`: {reason}")]
    Parse {
        line: u64,
        column: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: duplicate site id `{site_id}`")]
    DuplicateSiteId { line: u64, site_id: String },
    #[error("record `{site_id}` has non-finite {what}")]
    NonFinite { site_id: String, what: String },
    #[error("column `{0}` has zero variance and cannot be z-scored")]
    DegenerateColumn(String),
    #[error("unknown element symbol `{0}`")]
    UnknownElement(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// How to treat values written as `<DL` (below detection limit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BdlPolicy {
    /// Replace `<DL` with `DL / 2`.
    #[default]
    HalfDl,
    /// Treat `<DL` as a parse error.
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMethod {
    #[default]
    Zscore,
    None,
}

/// Header names accepted for each required column. Matching is
/// case-insensitive and ignores surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnAliases {
    pub site_id: Vec<String>,
    pub easting: Vec<String>,
    pub northing: Vec<String>,
    /// Extra names per element symbol; the bare symbol and the usual unit
    /// suffixes (`_mg/kg`, `_mgkg`, `_mg_kg`, `_ppm`) are always accepted.
    pub elements: BTreeMap<Element, Vec<String>>,
}

impl Default for ColumnAliases {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            site_id: s(&["site_id", "siteid", "sample_id", "sampleid", "sample", "id"]),
            easting: s(&["easting", "itm_e", "itm_easting", "east", "x_itm", "x"]),
            northing: s(&["northing", "itm_n", "itm_northing", "north", "y_itm", "y"]),
            elements: BTreeMap::new(),
        }
    }
}

impl ColumnAliases {
    fn element_names(&self, e: Element) -> Vec<String> {
        let sym = e.symbol();
        let mut names = vec![
            sym.to_string(),
            format!("{sym}_mg/kg"),
            format!("{sym}_mgkg"),
            format!("{sym}_mg_kg"),
            format!("{sym}_ppm"),
            format!("{sym} (mg/kg)"),
        ];
        if let Some(extra) = self.elements.get(&e) {
            names.extend(extra.iter().cloned());
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub site_id: String,
    /// ITM easting, meters.
    pub easting: f64,
    /// ITM northing, meters.
    pub northing: f64,
    /// Concentrations in mg/kg after detection-limit substitution.
    pub concentrations: BTreeMap<Element, f64>,
}

/// Parsed survey samples in file order. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    records: Vec<RawRecord>,
}

impl SampleTable {
    /// Validates coordinate/concentration finiteness and site id uniqueness.
    pub fn new(records: Vec<RawRecord>) -> Result<Self, IngestError> {
        if records.is_empty() {
            return Err(IngestError::NoRecords);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.site_id.as_str()) {
                return Err(IngestError::DuplicateSiteId {
                    line: i as u64 + 2,
                    site_id: r.site_id.clone(),
                });
            }
            if !r.easting.is_finite() || !r.northing.is_finite() {
                return Err(IngestError::NonFinite {
                    site_id: r.site_id.clone(),
                    what: "coordinates".into(),
                });
            }
            if let Some((e, _)) = r.concentrations.iter().find(|(_, v)| !v.is_finite()) {
                return Err(IngestError::NonFinite {
                    site_id: r.site_id.clone(),
                    what: format!("{e} concentration"),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[RawRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn element_order(&self) -> &'static [Element; 15] {
        &ELEMENTS
    }

    pub fn site_ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.site_id.as_str()).collect()
    }

    /// Writes the canonical form: `site_id,easting,northing,As,...,Zn`.
    /// Floats use the shortest round-trip representation, so re-parsing
    /// reproduces the table exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), IngestError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["site_id".to_string(), "easting".into(), "northing".into()];
        header.extend(ELEMENTS.iter().map(|e| e.symbol().to_string()));
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.site_id.clone(),
                r.easting.to_string(),
                r.northing.to_string(),
            ];
            for e in ELEMENTS {
                row.push(
                    r.concentrations
                        .get(&e)
                        .map(f64::to_string)
                        .unwrap_or_default(),
                );
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(|source| IngestError::Io {
            path: PathBuf::from("<writer>"),
            source,
        })?;
        Ok(())
    }
}

fn normalize(name: &str) -> String {
    name.trim()
        .trim_start_matches('\u{feff}')
        .to_ascii_lowercase()
}

fn find_column(headers: &[String], names: &[String], label: &str) -> Result<usize, IngestError> {
    names
        .iter()
        .map(|n| normalize(n))
        .find_map(|n| headers.iter().position(|h| *h == n))
        .ok_or_else(|| IngestError::MissingColumn(label.to_string()))
}

fn parse_number(line: u64, column: &str, raw: &str) -> Result<f64, IngestError> {
    let err = |reason: &str| IngestError::Parse {
        line,
        column: column.to_string(),
        value: raw.to_string(),
        reason: reason.to_string(),
    };
    let v: f64 = raw.trim().parse().map_err(|_| err("not a number"))?;
    if !v.is_finite() {
        return Err(err("not finite"));
    }
    Ok(v)
}

fn parse_concentration(
    line: u64,
    column: &str,
    raw: &str,
    policy: BdlPolicy,
) -> Result<f64, IngestError> {
    let trimmed = raw.trim();
    match trimmed.strip_prefix('<') {
        Some(dl) => match policy {
            BdlPolicy::HalfDl => Ok(parse_number(line, column, dl)? / 2.0),
            BdlPolicy::Reject => Err(IngestError::Parse {
                line,
                column: column.to_string(),
                value: raw.to_string(),
                reason: "below-detection-limit value rejected by policy".into(),
            }),
        },
        None => parse_number(line, column, trimmed),
    }
}

/// Parses a survey CSV from any reader. See [`parse_g5_csv`].
pub fn parse_g5_reader<R: Read>(
    reader: R,
    policy: BdlPolicy,
    aliases: &ColumnAliases,
) -> Result<SampleTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(normalize).collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(IngestError::MissingHeader);
    }
    let site_col = find_column(&headers, &aliases.site_id, "site_id")?;
    let east_col = find_column(&headers, &aliases.easting, "easting")?;
    let north_col = find_column(&headers, &aliases.northing, "northing")?;
    let element_cols = ELEMENTS
        .iter()
        .map(|&e| find_column(&headers, &aliases.element_names(e), e.symbol()).map(|c| (e, c)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let site_id = row.get(site_col).unwrap_or("").trim().to_string();
        if !seen.insert(site_id.clone()) {
            return Err(IngestError::DuplicateSiteId { line, site_id });
        }
        let easting = parse_number(line, "easting", row.get(east_col).unwrap_or(""))?;
        let northing = parse_number(line, "northing", row.get(north_col).unwrap_or(""))?;
        let mut concentrations = BTreeMap::new();
        for &(e, c) in &element_cols {
            let v = parse_concentration(line, e.symbol(), row.get(c).unwrap_or(""), policy)?;
            concentrations.insert(e, v);
        }
        records.push(RawRecord {
            site_id,
            easting,
            northing,
            concentrations,
        });
    }
    SampleTable::new(records)
}

/// Parses a G5-style survey CSV: one record per data row, in file order.
pub fn parse_g5_csv(
    path: &Path,
    policy: BdlPolicy,
    aliases: &ColumnAliases,
) -> Result<SampleTable, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match parse_g5_reader(std::io::BufReader::new(file), policy, aliases) {
        // csv reports a zero-byte file as an empty header row
        Err(IngestError::MissingColumn(_)) | Err(IngestError::MissingHeader)
            if std::fs::metadata(path)
                .map(|m| m.len() == 0)
                .unwrap_or(false) =>
        {
            Err(IngestError::MissingHeader)
        }
        other => other,
    }
}

/// `n × 15` matrix of concentrations in [`ELEMENTS`] order.
pub fn select_features(table: &SampleTable) -> Result<FeatureMatrix, IngestError> {
    let n = table.len();
    let mut data = Vec::with_capacity(n * ELEMENTS.len());
    for r in table.records() {
        for e in ELEMENTS {
            let v = r
                .concentrations
                .get(&e)
                .ok_or_else(|| IngestError::MissingColumn(e.symbol().to_string()))?;
            data.push(*v);
        }
    }
    let columns = ELEMENTS.iter().map(|e| e.symbol().to_string()).collect();
    Ok(FeatureMatrix::with_columns(
        n,
        ELEMENTS.len(),
        data,
        columns,
    )?)
}

/// Per-column affine map `x -> (x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ScalingParams {
    pub fn identity(d: usize) -> Self {
        Self {
            center: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, MatrixError> {
        self.map(m, |v, c, s| (v - c) / s)
    }

    pub fn invert(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, MatrixError> {
        self.map(m, |v, c, s| v * s + c)
    }

    fn map(
        &self,
        m: &FeatureMatrix,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<FeatureMatrix, MatrixError> {
        let d = m.d();
        let data = m
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &v)| f(v, self.center[k % d], self.scale[k % d]))
            .collect();
        FeatureMatrix::with_columns(m.n(), d, data, m.columns().to_vec())
    }
}

/// Column-wise scaling. Under z-score, each output column has mean 0 and
/// sample standard deviation 1.
pub fn standardize(
    matrix: &FeatureMatrix,
    method: ScalingMethod,
) -> Result<(FeatureMatrix, ScalingParams), IngestError> {
    let d = matrix.d();
    let params = match method {
        ScalingMethod::None => ScalingParams::identity(d),
        ScalingMethod::Zscore => {
            let mut center = Vec::with_capacity(d);
            let mut scale = Vec::with_capacity(d);
            for j in 0..d {
                let col: Vec<f64> = matrix.column(j).collect();
                let sd = stats::sample_std(&col);
                if !sd.is_finite() || sd <= 0.0 {
                    return Err(IngestError::DegenerateColumn(matrix.columns()[j].clone()));
                }
                center.push(stats::mean(&col));
                scale.push(sd);
            }
            ScalingParams { center, scale }
        }
    };
    let out = match method {
        ScalingMethod::None => matrix.clone(),
        ScalingMethod::Zscore => params.apply(matrix)?,
    };
    Ok((out, params))
}
