//! File formats for intermediate and final artifacts.
//!
//! All floats are written with the shortest representation that parses back
//! to the same value, so a chain of stages reading each other's files
//! reproduces an in-memory run exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cpf::{ClusterLabeling, FitResult};
use crate::geodesy::GeoCoord;
use crate::ingest::{BdlPolicy, ColumnAliases, IngestError, SampleTable, ELEMENTS};
use crate::metrics::{BoxStats, ClusterSummary};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Mismatch(String),
}

/// One row of the labeling CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub site_id: String,
    pub cluster_label: i32,
    pub log_density: f64,
    /// `inf` at component density maxima.
    pub omega: f64,
    pub component_id: usize,
    /// Present only after Isolation Forest refinement, and only for outliers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iforest_flag: Option<bool>,
}

pub fn label_rows(site_ids: &[&str], fit: &FitResult) -> Vec<LabelRow> {
    site_ids
        .iter()
        .enumerate()
        .map(|(i, id)| LabelRow {
            site_id: id.to_string(),
            cluster_label: fit.labeling.labels[i],
            log_density: fit.density.log_density[i],
            omega: fit.big_brother.omega[i],
            component_id: fit.components.labels[i],
            anomaly_score: None,
            iforest_flag: None,
        })
        .collect()
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

/// Writes `site_id,cluster_label,log_density,omega,component_id`, plus
/// `anomaly_score,iforest_flag` when `refined`.
pub fn write_labels_csv<W: Write>(
    w: W,
    rows: &[LabelRow],
    refined: bool,
) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "site_id",
        "cluster_label",
        "log_density",
        "omega",
        "component_id",
    ];
    if refined {
        header.extend(["anomaly_score", "iforest_flag"]);
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.site_id.clone(),
            r.cluster_label.to_string(),
            r.log_density.to_string(),
            r.omega.to_string(),
            r.component_id.to_string(),
        ];
        if refined {
            rec.push(fmt_opt(&r.anomaly_score));
            rec.push(r.iforest_flag.unwrap_or(false).to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<LabelRow>, ExportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |what: &str| ExportError::Mismatch(format!("bad {what} in labels row {:?}", rec));
        let score = get(5);
        let flag = get(6);
        rows.push(LabelRow {
            site_id: get(0).to_string(),
            cluster_label: get(1).parse().map_err(|_| bad("cluster_label"))?,
            log_density: get(2).parse().map_err(|_| bad("log_density"))?,
            omega: get(3).parse().map_err(|_| bad("omega"))?,
            component_id: get(4).parse().map_err(|_| bad("component_id"))?,
            anomaly_score: if score.is_empty() {
                None
            } else {
                Some(score.parse().map_err(|_| bad("anomaly_score"))?)
            },
            iforest_flag: if flag.is_empty() {
                None
            } else {
                Some(flag.parse().map_err(|_| bad("iforest_flag"))?)
            },
        });
    }
    Ok(rows)
}

/// Checks that label rows line up with the sample table, and returns the labeling.
pub fn labeling_from_rows(
    table: &SampleTable,
    rows: &[LabelRow],
) -> Result<ClusterLabeling, ExportError> {
    if rows.len() != table.len() {
        return Err(ExportError::Mismatch(format!(
            "{} label rows for {} samples",
            rows.len(),
            table.len()
        )));
    }
    for (r, rec) in rows.iter().zip(table.records()) {
        if r.site_id != rec.site_id {
            return Err(ExportError::Mismatch(format!(
                "label row `{}` does not match sample `{}`",
                r.site_id, rec.site_id
            )));
        }
    }
    Ok(ClusterLabeling {
        labels: rows.iter().map(|r| r.cluster_label).collect(),
    })
}

/// Canonical sample table with appended `latitude,longitude` columns.
pub fn write_projected_csv<W: Write>(
    w: W,
    table: &SampleTable,
    coords: &[GeoCoord],
) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["site_id".to_string(), "easting".into(), "northing".into()];
    header.extend(ELEMENTS.iter().map(|e| e.symbol().to_string()));
    header.extend(["latitude".to_string(), "longitude".into()]);
    out.write_record(&header)?;
    for (r, c) in table.records().iter().zip(coords) {
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
        row.push(c.latitude.to_string());
        row.push(c.longitude.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_projected_csv(bytes: &[u8]) -> Result<(SampleTable, Vec<GeoCoord>), ExportError> {
    let table =
        crate::ingest::parse_g5_reader(bytes, BdlPolicy::Reject, &ColumnAliases::default())?;
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExportError::Mismatch(format!("projected file lacks `{name}` column")))
    };
    let (lat_c, lon_c) = (col("latitude")?, col("longitude")?);
    let mut coords = Vec::with_capacity(table.len());
    for rec in rdr.records() {
        let rec = rec?;
        let p = |c: usize| {
            rec.get(c)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| ExportError::Mismatch(format!("bad coordinate in {:?}", rec)))
        };
        coords.push(GeoCoord::new(p(lat_c)?, p(lon_c)?));
    }
    Ok((table, coords))
}

/// GeoJSON FeatureCollection of sample points (`[lon, lat]` order).
pub fn geojson_value(rows: &[LabelRow], coords: &[GeoCoord]) -> Result<Value, ExportError> {
    if rows.len() != coords.len() {
        return Err(ExportError::Mismatch(format!(
            "{} label rows but {} coordinates",
            rows.len(),
            coords.len()
        )));
    }
    let features: Vec<Value> = rows
        .iter()
        .zip(coords)
        .map(|(r, c)| {
            let mut props = json!({
                "site_id": r.site_id,
                "cluster": r.cluster_label,
                "log_density": r.log_density,
                "iforest_flag": r.iforest_flag.unwrap_or(false),
            });
            if let Some(s) = r.anomaly_score {
                props["anomaly_score"] = json!(s);
            }
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [c.longitude, c.latitude] },
                "properties": props,
            })
        })
        .collect();
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

pub fn export_geojson<W: Write>(
    mut w: W,
    rows: &[LabelRow],
    coords: &[GeoCoord],
) -> Result<(), ExportError> {
    let v = geojson_value(rows, coords)?;
    serde_json::to_writer(&mut w, &v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn stat_pairs(s: &BoxStats) -> [(&'static str, f64); 9] {
    [
        ("count", s.count as f64),
        ("min", s.min),
        ("q1", s.q1),
        ("median", s.median),
        ("q3", s.q3),
        ("max", s.max),
        ("iqr", s.iqr),
        ("whisker_low", s.whisker_low),
        ("whisker_high", s.whisker_high),
    ]
}

/// Long format: `cluster,element,statistic,value`.
pub fn export_summary_csv<W: Write>(w: W, summary: &ClusterSummary) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cluster", "element", "statistic", "value"])?;
    for (&(cluster, e), s) in &summary.stats {
        for (name, v) in stat_pairs(s) {
            out.write_record([
                cluster.to_string(),
                e.to_string(),
                name.into(),
                v.to_string(),
            ])?;
        }
        if let Some(ls) = summary
            .log10_stats
            .as_ref()
            .and_then(|m| m.get(&(cluster, e)))
        {
            for (name, v) in stat_pairs(ls).into_iter().skip(1) {
                out.write_record([
                    cluster.to_string(),
                    e.to_string(),
                    format!("log10_{name}"),
                    v.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

/// One row per (cluster, element) with everything a box plot needs.
/// Points beyond the whiskers are `;`-separated.
pub fn export_plot_data<W: Write>(w: W, summary: &ClusterSummary) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    let base = [
        "cluster",
        "element",
        "n",
        "q1",
        "median",
        "q3",
        "whisker_low",
        "whisker_high",
        "beyond",
    ];
    let mut header: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    let logs = summary.log10_stats.as_ref();
    if logs.is_some() {
        header.extend(
            [
                "q1",
                "median",
                "q3",
                "whisker_low",
                "whisker_high",
                "beyond",
            ]
            .iter()
            .map(|s| format!("log10_{s}")),
        );
    }
    out.write_record(&header)?;
    for (&(cluster, e), s) in &summary.stats {
        let mut row = vec![
            cluster.to_string(),
            e.to_string(),
            s.count.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.whisker_low.to_string(),
            s.whisker_high.to_string(),
            join(&s.beyond),
        ];
        if let Some(m) = logs {
            let l = &m[&(cluster, e)];
            row.extend([
                l.q1.to_string(),
                l.median.to_string(),
                l.q3.to_string(),
                l.whisker_low.to_string(),
                l.whisker_high.to_string(),
                join(&l.beyond),
            ]);
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
