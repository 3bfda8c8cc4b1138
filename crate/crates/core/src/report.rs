//! Column-aligned result tables in text, CSV and JSON form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::algebra::HierarchyDag;
use crate::error::{Error, Result};
use crate::training::{ScanResult, TrainReport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidArgument(format!("unknown table format `{s}`"))),
        }
    }
}

/// Cells are kept as JSON values so the JSON rendering keeps numbers numeric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: Option<String>,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<serde_json::Value>>,
    /// Extra lines printed under the text table only.
    pub notes: Vec<String>,
}

fn cell_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => "-".into(),
        serde_json::Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:.4}"),
            _ => n.to_string(),
        },
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cell_csv(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::Number(n) => n.to_string(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn num(x: Option<f64>) -> serde_json::Value {
    x.and_then(serde_json::Number::from_f64)
        .map_or(serde_json::Value::Null, serde_json::Value::Number)
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            title: None,
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<serde_json::Value>) {
        assert_eq!(row.len(), self.headers.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self, format: TableFormat) -> Result<String> {
        match format {
            TableFormat::Text => Ok(self.to_text()),
            TableFormat::Csv => self.to_csv(),
            TableFormat::Json => Ok(serde_json::to_string_pretty(&self.to_json())?),
        }
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(cell_text).collect()).collect();
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain([self.headers[c].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |items: &[String]| {
            let mut s = String::new();
            for (c, item) in items.iter().enumerate() {
                if c > 0 {
                    s.push_str("  ");
                }
                let pad = widths[c] - item.chars().count();
                // First column left-aligned, numbers right-aligned.
                if c == 0 {
                    s.push_str(item);
                    s.extend(std::iter::repeat_n(' ', pad));
                } else {
                    s.extend(std::iter::repeat_n(' ', pad));
                    s.push_str(item);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        if let Some(t) = &self.title {
            let _ = writeln!(out, "{t}");
        }
        let _ = writeln!(out, "{}", line(&self.headers));
        let total: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        let _ = writeln!(out, "{}", "-".repeat(total));
        for r in &cells {
            let _ = writeln!(out, "{}", line(r));
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(&self.headers).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(cell_csv)).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj = self.headers.iter().cloned().zip(r.iter().cloned()).collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "title": self.title, "rows": rows, "notes": self.notes })
    }
}

/// `F/N` of the previous row minus `F/N` of this row; `None` for the first
/// row and around failed rows.
pub fn gaps(values: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|i| match (i.checked_sub(1).and_then(|j| values[j]), values[i]) {
            (Some(prev), Some(v)) => Some(prev - v),
            _ => None,
        })
        .collect()
}

pub fn scan_table(scan: &ScanResult) -> Table {
    let mut t = Table::new(&["ν", "F/N", "Gap", "𝒯_best", "Δ_𝒯F"]);
    let values: Vec<Option<f64>> = scan.rows.iter().map(|r| r.value()).collect();
    for (row, gap) in scan.rows.iter().zip(gaps(&values)) {
        let r = row.report.as_ref();
        t.push(vec![
            row.structure.to_string().into(),
            num(row.value()),
            num(gap),
            r.map_or(serde_json::Value::Null, |r| r.best_epoch.into()),
            num(r.and_then(|r| r.final_delta)),
        ]);
    }
    if let Some(v) = scan.reference_value {
        t.notes.push(format!("F_E/N = {v:.4}"));
    }
    for row in scan.rows.iter().filter(|r| r.error.is_some()) {
        t.notes.push(format!(
            "{} failed: {}",
            row.structure,
            row.error.as_deref().unwrap_or("")
        ));
    }
    t
}

/// For each row, `F/N` of every directly more complex scanned structure
/// minus `F/N` of the row. More complex means its algebra embeds into the
/// row's algebra.
pub fn hierarchy_gaps(scan: &ScanResult, dag: &HierarchyDag) -> Vec<Vec<f64>> {
    scan.rows
        .iter()
        .map(|row| {
            let (Some(i), Some(v)) = (dag.index_of(&row.structure), row.value()) else {
                return Vec::new();
            };
            dag.children(i)
                .into_iter()
                .filter_map(|p| scan.value(&dag.nodes()[p]))
                .map(|pv| pv - v)
                .collect()
        })
        .collect()
}

/// Like [`scan_table`], with the Gap column measured against the more
/// complex neighbours in `dag` (several values are joined with `/`).
pub fn scan_table_hierarchical(scan: &ScanResult, dag: &HierarchyDag) -> Table {
    let mut t = scan_table(scan);
    for (row, gaps) in t.rows.iter_mut().zip(hierarchy_gaps(scan, dag)) {
        row[2] = match gaps.len() {
            0 => serde_json::Value::Null,
            1 => num(Some(gaps[0])),
            _ => gaps
                .iter()
                .map(|g| format!("{g:.4}"))
                .collect::<Vec<_>>()
                .join("/")
                .into(),
        };
    }
    t
}

/// One cell of a chain-length versus chain-count sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCell {
    pub chain_length: usize,
    pub chains: usize,
    pub report: TrainReport,
}

pub fn tradeoff_table(cells: &[TradeoffCell]) -> Table {
    let mut t = Table::new(&["N", "S", "F/N", "𝒯_best", "Δ_𝒯F"]);
    for c in cells {
        t.push(vec![
            c.chain_length.into(),
            c.chains.into(),
            num(Some(c.report.best_test_value)),
            c.report.best_epoch.into(),
            num(c.report.final_delta),
        ]);
    }
    let values: Vec<f64> = cells.iter().map(|c| c.report.best_test_value).collect();
    if let Some(spread) = spread(&values) {
        t.notes.push(format!("spread = {spread:.4}"));
    }
    t
}

/// `max − min`, `None` for an empty list.
pub fn spread(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().reduce(f64::max)?;
    let min = values.iter().copied().reduce(f64::min)?;
    Some(max - min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::AlgebraStructure;
    use crate::params::ParameterVector;
    use crate::training::{compare_rows, ScanRow};

    fn row(s: &str, v: f64, epoch: usize) -> ScanRow {
        let structure: AlgebraStructure = s.parse().unwrap();
        ScanRow {
            structure: structure.clone(),
            report: Some(TrainReport {
                structure: structure.clone(),
                epochs: 100,
                best_epoch: epoch,
                best_test_value: v,
                final_delta: (epoch >= 95).then_some(1e-4),
                history: vec![],
                best_params: ParameterVector::zeros(structure, 1).unwrap(),
                restart_index: 0,
                restart_values: vec![Some(v)],
            }),
            error: None,
        }
    }

    fn scan(rows: Vec<ScanRow>) -> ScanResult {
        let mut rows = rows;
        rows.sort_by(compare_rows);
        ScanResult {
            rows,
            reference_value: Some(-1.373),
        }
    }

    #[test]
    fn single_row_has_no_gap() {
        let t = scan_table(&scan(vec![row("({1,4})", -1.374, 100)]));
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0][2].is_null());
        let text = t.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("F_E/N = -1.3730"));
    }

    #[test]
    fn gaps_are_consecutive_differences() {
        let s = scan(vec![
            row("({4,1})", -1.715, 10),
            row("({1,4})", -1.345, 98),
            row("({2,2})", -1.393, 60),
        ]);
        let t = scan_table(&s);
        let vals: Vec<f64> = t.rows.iter().map(|r| r[1].as_f64().unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for i in 1..vals.len() {
            let gap = t.rows[i][2].as_f64().unwrap();
            assert!((gap - (vals[i - 1] - vals[i])).abs() < 1e-9);
        }
        assert!(t.rows[0][4].as_f64().is_some());
        assert!(t.rows[1][4].is_null());
    }

    #[test]
    fn failed_rows_render() {
        let mut s = scan(vec![row("({1,2})", -0.7, 5)]);
        s.rows.push(ScanRow {
            structure: "({2,1})".parse().unwrap(),
            report: None,
            error: Some("all restarts failed".into()),
        });
        let t = scan_table(&s);
        assert!(t.rows[1][1].is_null() && t.rows[1][2].is_null());
        assert!(t.to_text().contains("({2,1}) failed"));
    }

    #[test]
    fn csv_and_json_agree() {
        let t = scan_table(&scan(vec![row("({1,2})", -0.7, 5), row("({2,1})", -0.9, 7)]));
        let csv = t.to_csv().unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        let recs: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[0][0], "({1,2})");
        assert_eq!(recs[1][1].parse::<f64>().unwrap(), -0.9);
        let json = t.to_json();
        assert_eq!(json["rows"][1]["F/N"].as_f64().unwrap(), -0.9);
        assert_eq!(json["rows"][1]["𝒯_best"].as_u64().unwrap(), 7);
    }

    #[test]
    fn rendering_is_deterministic_and_aligned() {
        let t = scan_table(&scan(vec![
            row("({1,2},{1,1},{1,1})", -1.3, 5),
            row("({4,1})", -1.7, 7),
        ]));
        let a = t.render(TableFormat::Text).unwrap();
        assert_eq!(a, t.render(TableFormat::Text).unwrap());
        let lines: Vec<&str> = a.lines().collect();
        let col = lines[0].find("F/N").unwrap();
        let end = col + 3;
        assert!(lines[2].chars().count() >= end);
    }

    #[test]
    fn hierarchy_gap_uses_more_complex_neighbours() {
        let s = scan(vec![
            row("({1,4})", -1.30, 10),
            row("({1,2},{1,2})", -1.32, 10),
            row("({1,3},{1,1})", -1.35, 10),
            row("({4,1})", -1.70, 10),
        ]);
        let dag =
            crate::algebra::hierarchy_dag(&s.rows.iter().map(|r| r.structure.clone()).collect::<Vec<_>>()).unwrap();
        let g = hierarchy_gaps(&s, &dag);
        assert!(g[0].is_empty());
        assert_eq!(g[1].len(), 1);
        assert!((g[1][0] - 0.02).abs() < 1e-12);
        // ({4,1}) contains both middle structures directly.
        let mut last = g[3].clone();
        last.sort_by(f64::total_cmp);
        assert!((last[0] - 0.35).abs() < 1e-12 && (last[1] - 0.38).abs() < 1e-12);
        let t = scan_table_hierarchical(&s, &dag);
        assert!(t.rows[0][2].is_null());
        assert!(t.rows[3][2].as_str().unwrap().contains('/'));
    }

    #[test]
    fn tradeoff_spread() {
        assert_eq!(spread(&[]), None);
        assert_eq!(spread(&[-1.0, -1.2, -1.05]), Some(-1.0 - -1.2));
        assert_eq!("CSV".parse::<TableFormat>().unwrap(), TableFormat::Csv);
        assert!("xml".parse::<TableFormat>().is_err());
    }
}
