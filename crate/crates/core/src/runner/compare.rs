//! Seed aggregation across run directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::runner::evaluate::EpochMetrics;
use crate::runner::experiment::RunSummary;

pub const COMPARE_SCHEMA: &str = "mhcg-compare/v1";

/// Final-epoch columns. Cross-agent columns average the A->B and B->A entries.
pub const COLUMNS: [&str; 9] =
    ["tt_rsa", "vt_rsa_cross", "delta_r2_cross", "i2t_cross", "t2i_cross", "unique", "bias_delta_A", "bias_delta_B", "acceptance"];

fn column(m: &EpochMetrics, name: &str) -> Option<f64> {
    match name {
        "tt_rsa" => Some(m.tt_rsa),
        "vt_rsa_cross" => Some(m.cross_vt_rsa()),
        "delta_r2_cross" => Some(m.cross_delta_r2()),
        "i2t_cross" => Some(m.cross_i2t()),
        "t2i_cross" => Some(m.cross_t2i()),
        "unique" => Some(m.mean_unique()),
        "bias_delta_A" => m.bias_delta.get("A").copied().flatten(),
        "bias_delta_B" => m.bias_delta.get("B").copied().flatten(),
        "acceptance" if !m.acceptance.is_empty() => {
            Some(m.acceptance.values().sum::<f64>() / m.acceptance.len() as f64)
        }
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// Set on MHCG rows when the mean exceeds the NoCom mean of the same condition.
    pub above_nocom: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub condition: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub cells: BTreeMap<String, Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema: String,
    pub rows: Vec<Row>,
}

/// Mean and sample standard deviation; a single value has SD 0.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn collect_summaries(roots: &[&Path]) -> Result<Vec<RunSummary>> {
    let mut out = Vec::new();
    for root in roots {
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Io(e.into()))?;
            if entry.file_name() == "summary.json" {
                let s: RunSummary = serde_json::from_str(&fs::read_to_string(entry.path())?)?;
                if s.failure.is_none() {
                    out.push(s);
                }
            }
        }
    }
    Ok(out)
}

pub fn compare(summaries: &[RunSummary]) -> Comparison {
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        groups.entry((s.condition.clone(), s.method.clone())).or_default().push(s);
    }
    let mut rows: Vec<Row> = groups
        .into_iter()
        .map(|((condition, method), mut runs)| {
            runs.sort_by_key(|r| r.seed);
            let mut cells = BTreeMap::new();
            for col in COLUMNS {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.final_eval().and_then(|m| column(m, col))).collect();
                if !vals.is_empty() {
                    let (mean, sd) = mean_sd(&vals);
                    cells.insert(col.to_string(), Cell { mean, sd, n: vals.len(), above_nocom: false });
                }
            }
            Row { condition, method, seeds: runs.iter().map(|r| r.seed).collect(), cells }
        })
        .collect();
    let nocom: BTreeMap<String, BTreeMap<String, f64>> = rows
        .iter()
        .filter(|r| r.method == "nocom")
        .map(|r| (r.condition.clone(), r.cells.iter().map(|(k, c)| (k.clone(), c.mean)).collect()))
        .collect();
    for row in rows.iter_mut().filter(|r| r.method == "mhcg") {
        if let Some(base) = nocom.get(&row.condition) {
            for (k, cell) in row.cells.iter_mut() {
                cell.above_nocom = base.get(k).is_some_and(|b| cell.mean > *b);
            }
        }
    }
    Comparison { schema: COMPARE_SCHEMA.into(), rows }
}

impl Comparison {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        w.write_record(["condition", "method", "metric", "mean", "sd", "n", "above_nocom"]).map_err(err)?;
        for r in &self.rows {
            for (k, c) in &r.cells {
                w.write_record([
                    r.condition.as_str(),
                    &r.method,
                    k,
                    &format!("{:?}", c.mean),
                    &format!("{:?}", c.sd),
                    &c.n.to_string(),
                    if c.above_nocom { "1" } else { "0" },
                ])
                .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Aligned text table; `*` marks MHCG cells above NoCom.
    pub fn to_text(&self) -> String {
        let mut header = vec!["condition".to_string(), "method".to_string()];
        header.extend(COLUMNS.iter().map(|c| c.to_string()));
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.condition.clone(), r.method.clone()];
            for col in COLUMNS {
                line.push(match r.cells.get(col) {
                    Some(c) => format!("{:.3}±{:.3}{}", c.mean, c.sd, if c.above_nocom { "*" } else { "" }),
                    None => "-".into(),
                });
            }
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("comparison.csv"), self.to_csv()?)?;
        fs::write(out_dir.join("comparison.json"), serde_json::to_string_pretty(self)? + "\n")?;
        fs::write(out_dir.join("comparison.txt"), self.to_text())?;
        Ok(())
    }

    pub fn row(&self, condition: &str, method: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.condition == condition && r.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(cond: &str, method: &str, seed: u64, tt: f64, ab: f64, ba: f64) -> RunSummary {
        let mut m = EpochMetrics { epoch: 3, tt_rsa: tt, ..EpochMetrics::default() };
        for (d, v) in [("A->B", ab), ("B->A", ba), ("A->A", 0.9), ("B->B", 0.9)] {
            m.i2t.insert(d.into(), v);
            m.t2i.insert(d.into(), v);
            m.vt_rsa.insert(d.into(), v);
            m.delta_r2.insert(d.into(), v);
        }
        RunSummary {
            schema: "x".into(),
            condition: cond.into(),
            method: method.into(),
            seed,
            config_hash: String::new(),
            mix: 1.0,
            target_vv_rsa: None,
            vv_rsa: 1.0,
            n_epochs: 3,
            epochs_completed: 3,
            evals: vec![m],
            failure: None,
        }
    }

    #[test]
    fn single_seed_has_zero_sd() {
        let c = compare(&[summary("homo", "mhcg", 0, 0.4, 0.2, 0.3)]);
        let cell = &c.rows[0].cells["tt_rsa"];
        assert_eq!(cell.sd, 0.0);
        assert_eq!(cell.mean, 0.4);
    }

    #[test]
    fn two_seed_mean_and_sample_sd() {
        let (x, y) = (0.3, 0.7);
        let c = compare(&[summary("homo", "mhcg", 0, x, 0.0, 0.0), summary("homo", "mhcg", 1, y, 0.0, 0.0)]);
        let cell = &c.rows[0].cells["tt_rsa"];
        assert!((cell.mean - (x + y) / 2.0).abs() < 1e-15);
        assert!((cell.sd - (x - y).abs() / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cross_cells_average_the_two_directions() {
        let c = compare(&[summary("homo", "mhcg", 0, 0.0, 0.2, 0.6)]);
        for col in ["i2t_cross", "t2i_cross", "vt_rsa_cross", "delta_r2_cross"] {
            assert!((c.rows[0].cells[col].mean - 0.4).abs() < 1e-15, "{col}");
        }
    }

    #[test]
    fn marks_mhcg_above_nocom() {
        let c = compare(&[summary("homo", "mhcg", 0, 0.5, 0.2, 0.2), summary("homo", "nocom", 0, 0.1, 0.3, 0.3)]);
        let row = c.row("homo", "mhcg").unwrap();
        assert!(row.cells["tt_rsa"].above_nocom);
        assert!(!row.cells["i2t_cross"].above_nocom);
        assert!(c.row("homo", "nocom").unwrap().cells.values().all(|c| !c.above_nocom));
        let text = c.to_text();
        assert!(text.contains("0.500±0.000*"));
        assert!(c.to_csv().unwrap().lines().count() > 1);
    }

    #[test]
    fn mean_sd_matches_hand_values() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
