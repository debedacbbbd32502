//! File formats for results.
//!
//! Floats are written in their shortest round-trip form and missing values as
//! `NA`, so identical results always produce identical bytes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::did::{EventStudy, Inference};
use crate::fda::{ClusterModel, CurveSet, ExcludedUnit, KCriterion};
use crate::kernel::WeightMatrix;
use crate::local::{LocalATTField, LocalEntry, LocalStatus, SkipReason};
use crate::panel::Location;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

fn inference_cells(inf: Option<&Inference>) -> [String; 4] {
    match inf {
        Some(i) => [num(i.se), num(i.z), num(i.ci_low), num(i.ci_high)],
        None => std::array::from_fn(|_| "NA".into()),
    }
}

/// One row per event time followed by `PRE_AVG` and `POST_AVG`.
pub fn write_event_study_csv<W: Write>(study: &EventStudy, writer: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["e", "att", "se", "z", "ci_low", "ci_high", "n_cohorts"])?;
    for est in &study.estimates {
        let mut row = vec![est.event_time.to_string(), num(est.att)];
        row.extend(inference_cells(est.inference.as_ref()));
        row.push(est.n_cohorts.to_string());
        w.write_record(&row)?;
    }
    for (label, summary) in [("PRE_AVG", &study.pre_avg), ("POST_AVG", &study.post_avg)] {
        let mut row = vec![label.to_string(), opt(summary.as_ref().map(|s| s.att))];
        row.extend(inference_cells(summary.as_ref().and_then(|s| s.inference.as_ref())));
        row.push(summary.as_ref().map_or(0, |s| s.n_event_times).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn att_column(e: i64) -> String {
    format!("att_e_{e}")
}

pub fn write_field_csv<W: Write>(field: &LocalATTField, writer: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["unit_id", "x_km", "y_km", "post_avg", "pre_avg"].map(String::from).to_vec();
    header.extend(field.event_times.iter().map(|&e| att_column(e)));
    header.extend(["status", "detail", "eff_n_treated", "eff_n_control"].map(String::from));
    w.write_record(&header)?;
    for e in &field.entries {
        let mut row =
            vec![e.unit_id.clone(), num(e.location.x_km), num(e.location.y_km), opt(e.post_avg), opt(e.pre_avg)];
        row.extend(e.att_by_e.iter().map(|v| opt(*v)));
        let detail = match &e.status {
            LocalStatus::Ok => String::new(),
            LocalStatus::Skipped { detail, .. } => detail.clone(),
        };
        row.extend([e.status.label(), detail, num(e.effective_n_treated), num(e.effective_n_control)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(s: &str, line: u64, col: &str) -> Result<Option<f64>, ExportError> {
    if s.is_empty() || s == "NA" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| ExportError::Parse { line, message: format!("bad number `{s}` in `{col}`") })
}

fn parse_status(label: &str, detail: &str, line: u64) -> Result<LocalStatus, ExportError> {
    let reason = match label {
        "ok" => return Ok(LocalStatus::Ok),
        "skipped:InsufficientLocalMass" => SkipReason::InsufficientLocalMass,
        "skipped:EstimationFailed" => SkipReason::EstimationFailed,
        other => return Err(ExportError::Parse { line, message: format!("unknown status `{other}`") }),
    };
    Ok(LocalStatus::Skipped { reason, detail: detail.to_string() })
}

/// Inverse of [`write_field_csv`]; kernel metadata is not stored in the CSV.
pub fn read_field_csv<R: Read>(reader: R) -> Result<LocalATTField, ExportError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExportError::Parse { line: 1, message: format!("missing column `{name}`") })
    };
    let (c_id, c_x, c_y, c_post, c_pre, c_status) =
        (col("unit_id")?, col("x_km")?, col("y_km")?, col("post_avg")?, col("pre_avg")?, col("status")?);
    let c_detail = header.iter().position(|h| h == "detail");
    let c_nt = header.iter().position(|h| h == "eff_n_treated");
    let c_nc = header.iter().position(|h| h == "eff_n_control");
    let mut event_cols: Vec<(i64, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("att_e_").and_then(|e| e.parse().ok()).map(|e| (e, i)))
        .collect();
    event_cols.sort();
    let mut entries = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).unwrap_or("");
        let need = |i: usize, name: &str| {
            parse_opt(get(i), line, name)?
                .ok_or_else(|| ExportError::Parse { line, message: format!("missing `{name}`") })
        };
        let att_by_e =
            event_cols.iter().map(|&(_, i)| parse_opt(get(i), line, &header[i])).collect::<Result<_, _>>()?;
        let mass = |c: Option<usize>, name| -> Result<f64, ExportError> {
            Ok(c.map(|i| parse_opt(get(i), line, name)).transpose()?.flatten().unwrap_or(f64::NAN))
        };
        entries.push(LocalEntry {
            unit_id: get(c_id).to_string(),
            location: Location::new(need(c_x, "x_km")?, need(c_y, "y_km")?),
            status: parse_status(get(c_status), c_detail.map_or("", get), line)?,
            post_avg: parse_opt(get(c_post), line, "post_avg")?,
            pre_avg: parse_opt(get(c_pre), line, "pre_avg")?,
            att_by_e,
            effective_n_treated: mass(c_nt, "eff_n_treated")?,
            effective_n_control: mass(c_nc, "eff_n_control")?,
        });
    }
    Ok(LocalATTField {
        event_times: event_cols.iter().map(|(e, _)| *e).collect(),
        kernel: None,
        min_mass: f64::NAN,
        entries,
    })
}

fn json_num(v: Option<f64>) -> Value {
    v.filter(|v| v.is_finite()).map_or(Value::Null, Value::from)
}

/// Point features carrying the field CSV columns, plus `cluster` for units in
/// `clusters` (unit id, label) when given.
pub fn write_field_geojson<W: Write>(
    field: &LocalATTField,
    clusters: Option<(&[String], &[usize])>,
    writer: W,
) -> Result<(), ExportError> {
    let lookup: std::collections::HashMap<&str, usize> = clusters
        .map(|(ids, labels)| ids.iter().map(String::as_str).zip(labels.iter().copied()).collect())
        .unwrap_or_default();
    let features: Vec<Value> = field
        .entries
        .iter()
        .map(|e| {
            let mut props = Map::new();
            props.insert("unit_id".into(), Value::from(e.unit_id.clone()));
            props.insert("post_avg".into(), json_num(e.post_avg));
            props.insert("pre_avg".into(), json_num(e.pre_avg));
            for (t, v) in field.event_times.iter().zip(&e.att_by_e) {
                props.insert(att_column(*t), json_num(*v));
            }
            props.insert("status".into(), Value::from(e.status.label()));
            if clusters.is_some() {
                props.insert("cluster".into(), lookup.get(e.unit_id.as_str()).map_or(Value::Null, |&l| Value::from(l)));
            }
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [e.location.x_km, e.location.y_km] },
                "properties": props,
            })
        })
        .collect();
    serde_json::to_writer(writer, &json!({ "type": "FeatureCollection", "features": features }))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub node_grid: Vec<f64>,
    /// Mean curve of each cluster at the node grid.
    pub mean_curves: Vec<Vec<f64>>,
    pub model: ClusterModel,
    pub excluded: Vec<ExcludedUnit>,
    pub selection: Option<Vec<KCriterion>>,
}

impl ClusterReport {
    pub fn new(curves: &CurveSet, model: ClusterModel, selection: Option<Vec<KCriterion>>) -> Self {
        let mean_curves = (0..model.k).map(|k| model.mean_curve_at(curves, k, &curves.node_grid)).collect();
        Self { node_grid: curves.node_grid.clone(), mean_curves, model, excluded: curves.excluded.clone(), selection }
    }
}

pub fn write_json<T: Serialize, W: Write>(value: &T, writer: W) -> Result<(), ExportError> {
    serde_json::to_writer_pretty(writer, value)?;
    Ok(())
}

/// Per cluster and node: member count, mean and standard deviation of the
/// fitted member curves, and the mean ± one standard deviation band.
pub fn write_cluster_profiles_csv<W: Write>(
    curves: &CurveSet,
    model: &ClusterModel,
    writer: W,
) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cluster", "e", "n_units", "mean", "sd", "lower", "upper"])?;
    let fitted: Vec<Vec<f64>> = (0..curves.len()).map(|i| curves.fitted(i)).collect();
    for k in 0..model.k {
        let members: Vec<&Vec<f64>> =
            fitted.iter().zip(&model.labels).filter(|(_, l)| **l == k).map(|(f, _)| f).collect();
        let n = members.len() as f64;
        for (j, e) in curves.node_grid.iter().enumerate() {
            let mean = members.iter().map(|f| f[j]).sum::<f64>() / n;
            let sd = if members.len() > 1 {
                (members.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            w.write_record([
                k.to_string(),
                num(*e),
                members.len().to_string(),
                num(mean),
                num(sd),
                num(mean - sd),
                num(mean + sd),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_weight_row_csv<W: Write>(row: &WeightMatrix, writer: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "weight"])?;
    for (id, v) in row.unit_ids.iter().zip(&row.weights) {
        w.write_record([id.clone(), num(*v)])?;
    }
    w.flush()?;
    Ok(())
}
