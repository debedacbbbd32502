use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Location, Observation, Panel, PanelBuilder, PanelError, Period};

/// Maps panel fields onto CSV header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub unit_id: String,
    pub period: String,
    pub outcome: String,
    pub treated: String,
    pub x_km: String,
    pub y_km: String,
    /// Fail with `MissingColumn` when the coordinate columns are absent.
    pub require_coordinates: bool,
    /// Covariate columns to load; `None` loads every remaining column.
    pub covariates: Option<Vec<String>>,
    /// Enforce outcome values in [0, 1].
    pub outcome_is_share: bool,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            unit_id: "unit_id".into(),
            period: "period".into(),
            outcome: "outcome".into(),
            treated: "treated".into(),
            x_km: "x_km".into(),
            y_km: "y_km".into(),
            require_coordinates: false,
            covariates: None,
            outcome_is_share: false,
        }
    }
}

/// Counts of cells that were loaded as missing, per column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    /// Empty or `NA` cells.
    pub missing: BTreeMap<String, usize>,
    /// Cells that failed numeric parsing and were stored as missing.
    pub unparseable: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub panel: Panel,
    pub report: IngestReport,
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Ingested, PanelError> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

enum Cell {
    Value(f64),
    Missing,
    Unparseable,
}

fn parse_cell(raw: &str) -> Cell {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        _ => Cell::Unparseable,
    }
}

pub fn ingest_reader<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Ingested, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let require = |name: &str| find(name).ok_or_else(|| PanelError::MissingColumn(name.to_string()));

    let unit_col = require(&schema.unit_id)?;
    let period_col = require(&schema.period)?;
    let outcome_col = require(&schema.outcome)?;
    let treated_col = require(&schema.treated)?;
    let coord_cols = match (find(&schema.x_km), find(&schema.y_km)) {
        (Some(x), Some(y)) => Some((x, y)),
        (x, _) if schema.require_coordinates => {
            let absent = if x.is_none() { &schema.x_km } else { &schema.y_km };
            return Err(PanelError::MissingColumn(absent.clone()));
        }
        _ => None,
    };

    let reserved = [
        Some(unit_col),
        Some(period_col),
        Some(outcome_col),
        Some(treated_col),
        find(&schema.x_km),
        find(&schema.y_km),
    ];
    let covariate_cols: Vec<(String, usize)> = match &schema.covariates {
        Some(names) => names.iter().map(|n| require(n).map(|c| (n.clone(), c))).collect::<Result<_, _>>()?,
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| !reserved.contains(&Some(*i)))
            .map(|(i, h)| (h.to_string(), i))
            .collect(),
    };

    let names: Vec<String> = covariate_cols.iter().map(|(n, _)| n.clone()).collect();
    let mut builder = PanelBuilder::new(names).outcome_is_share(schema.outcome_is_share);
    let mut report = IngestReport::default();
    let tally = |report: &mut IngestReport, column: &str, cell: Cell| -> Option<f64> {
        match cell {
            Cell::Value(v) => Some(v),
            Cell::Missing => {
                *report.missing.entry(column.to_string()).or_default() += 1;
                None
            }
            Cell::Unparseable => {
                *report.unparseable.entry(column.to_string()).or_default() += 1;
                None
            }
        }
    };

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        report.rows += 1;

        let unit = field(unit_col);
        if unit.is_empty() {
            return Err(PanelError::EmptyUnitId { line });
        }
        let period: Period = field(period_col)
            .parse()
            .map_err(|_| PanelError::InvalidPeriod { line, value: field(period_col).to_string() })?;
        let treated = match field(treated_col) {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => return Err(PanelError::InvalidTreatment { line, value: other.to_string() }),
        };
        let outcome = tally(&mut report, &schema.outcome, parse_cell(field(outcome_col)));
        let location = match coord_cols {
            Some((xc, yc)) => {
                let x = tally(&mut report, &schema.x_km, parse_cell(field(xc)));
                let y = tally(&mut report, &schema.y_km, parse_cell(field(yc)));
                x.zip(y).map(|(x, y)| Location::new(x, y))
            }
            None => None,
        };
        let covariates =
            covariate_cols.iter().map(|(name, c)| tally(&mut report, name, parse_cell(field(*c)))).collect();
        builder.push(unit, location, period, Observation { outcome, treated, covariates })?;
    }

    let panel = builder.build()?;
    if schema.require_coordinates {
        panel.locations()?;
    }
    Ok(Ingested { panel, report })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Writes the panel in the same long format `ingest_reader` reads.
///
/// Values use the shortest representation that parses back to the same `f64`,
/// so write → ingest reproduces the panel exactly.
pub fn write_panel_csv<W: Write>(panel: &Panel, writer: W) -> Result<(), PanelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_coords = panel.units().iter().any(|u| u.location.is_some());
    let mut header = vec!["unit_id", "period", "outcome", "treated"];
    if with_coords {
        header.extend(["x_km", "y_km"]);
    }
    header.extend(panel.covariate_names().iter().map(String::as_str));
    wtr.write_record(&header)?;

    for unit in panel.units() {
        for (offset, obs) in unit.observations().iter().enumerate() {
            let Some(obs) = obs else { continue };
            let mut row = vec![
                unit.unit_id.clone(),
                (panel.first_period() + offset as Period).to_string(),
                fmt_opt(obs.outcome),
                if obs.treated { "1" } else { "0" }.to_string(),
            ];
            if with_coords {
                row.push(fmt_opt(unit.location.map(|l| l.x_km)));
                row.push(fmt_opt(unit.location.map(|l| l.y_km)));
            }
            row.extend(obs.covariates.iter().map(|c| fmt_opt(*c)));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str) -> Result<Ingested, PanelError> {
        ingest_reader(text.as_bytes(), &ColumnSchema::default())
    }

    #[test]
    fn minimal_file() {
        let got = ingest(
            "unit_id,period,outcome,treated\n\
             a,2010,0.5,0\n\
             a,2011,0.6,0\n\
             a,2012,0.7,1\n",
        )
        .unwrap();
        assert_eq!(got.panel.n_units(), 1);
        assert_eq!(got.panel.n_periods(), 3);
        assert_eq!(got.panel.periods(), 2010..=2012);
        assert!(got.panel.covariate_names().is_empty());
    }

    #[test]
    fn repeated_row_is_duplicate() {
        let err = ingest("unit_id,period,outcome,treated\na,2010,0.5,0\na,2010,0.6,0\n").unwrap_err();
        assert!(matches!(err, PanelError::DuplicateObservation { .. }));
    }

    #[test]
    fn missing_mandatory_column() {
        let err = ingest("unit_id,period,treated\na,2010,0\n").unwrap_err();
        assert!(matches!(err, PanelError::MissingColumn(c) if c == "outcome"));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(ingest("unit_id,period,outcome,treated\n"), Err(PanelError::EmptyPanel)));
    }

    #[test]
    fn table_one_scale_values_stored_as_is() {
        let got = ingest("unit_id,period,outcome,treated,density\na,2010,0.522,0,276.871\n").unwrap();
        let obs = got.panel.unit(0).observation(0).unwrap();
        assert_eq!(obs.outcome, Some(0.522));
        assert_eq!(obs.covariates, vec![Some(276.871)]);
        assert_eq!(got.panel.covariate_names(), ["density"]);
    }

    #[test]
    fn unparseable_numbers_become_missing_and_are_counted() {
        let got = ingest(
            "unit_id,period,outcome,treated,income\n\
             a,2010,NA,0,abc\n\
             a,2011,,0,1.5\n\
             a,2012,oops,0,\n",
        )
        .unwrap();
        assert_eq!(got.report.missing["outcome"], 2);
        assert_eq!(got.report.unparseable["outcome"], 1);
        assert_eq!(got.report.unparseable["income"], 1);
        assert_eq!(got.report.missing["income"], 1);
        assert!((0..3).all(|t| got.panel.unit(0).outcome(t).is_none()));
    }

    #[test]
    fn invalid_treatment_is_an_error() {
        let err = ingest("unit_id,period,outcome,treated\na,2010,0.5,2\n").unwrap_err();
        assert!(matches!(err, PanelError::InvalidTreatment { .. }));
    }

    #[test]
    fn required_coordinates_enforced() {
        let schema = ColumnSchema { require_coordinates: true, ..Default::default() };
        let err = ingest_reader("unit_id,period,outcome,treated\na,2010,0.5,0\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, PanelError::MissingColumn(c) if c == "x_km"));
    }

    #[test]
    fn explicit_covariate_list_must_exist() {
        let schema = ColumnSchema { covariates: Some(vec!["density".into()]), ..Default::default() };
        let err = ingest_reader("unit_id,period,outcome,treated\na,2010,0.5,0\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, PanelError::MissingColumn(c) if c == "density"));
    }

    #[test]
    fn write_then_read_is_identity() {
        let text = "unit_id,period,outcome,treated,x_km,y_km,density\n\
                    a,2010,0.1,0,1.5,2.25,3.0\n\
                    a,2011,NA,1,1.5,2.25,NA\n\
                    b,2010,0.30000000000000004,0,7,8,1e-7\n";
        let first = ingest(text).unwrap().panel;
        let mut buf = Vec::new();
        write_panel_csv(&first, &mut buf).unwrap();
        let second = ingest_reader(buf.as_slice(), &ColumnSchema::default()).unwrap().panel;
        assert_eq!(first, second);
    }
}
