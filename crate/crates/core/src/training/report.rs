use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::model::Modality;
use crate::qm9::TargetId;

use super::TrainError;

pub const CSV_HEADER: &str = "target,modality,seed,fold,mae";

/// How "independent runs" are realized; written into every report.
pub const RUNS_NOTE: &str = "runs are seeds over identical folds; MAE is averaged over seeds and folds";

/// `100 (base - multi) / base`; positive means the multimodal model has the
/// lower error.
pub fn percent_change(mae_base: f64, mae_multi: f64) -> Result<f64, TrainError> {
    if !(mae_base.is_finite() && mae_base > 0.0) {
        return Err(TrainError::Report(format!("baseline MAE must be positive, got {mae_base}")));
    }
    Ok(100.0 * (mae_base - mae_multi) / mae_base)
}

/// `+20.36% ↑` for improvements, `−14.60% ↓` (U+2212) for regressions,
/// `0.00%` when the change rounds to zero.
pub fn format_change(pc: f64) -> String {
    let rounded = format!("{:.2}", pc.abs());
    if rounded == "0.00" {
        "0.00%".to_string()
    } else if pc > 0.0 {
        format!("+{rounded}% \u{2191}")
    } else {
        format!("\u{2212}{rounded}% \u{2193}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub target: TargetId,
    pub modality: Modality,
    pub seed: u64,
    pub fold: usize,
    pub mae: f64,
}

pub fn write_csv<W: Write>(rows: &[CsvRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.target.name(), r.modality, r.seed, r.fold, r.mae)?;
    }
    out.flush()
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, TrainError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let schema = |line: usize, message: String| TrainError::Schema { line, message };
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((i, h)) => return Err(schema(i + 1, format!("expected header {CSV_HEADER:?}, found {:?}", h.trim()))),
        None => return Err(schema(1, "missing header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(schema(i + 1, format!("expected 5 columns, found {}", f.len())));
        }
        let bad = |what: &str| schema(i + 1, format!("bad {what}"));
        let mae: f64 = f[4].parse().map_err(|_| bad("mae"))?;
        if !(mae.is_finite() && mae >= 0.0) {
            return Err(bad("mae"));
        }
        rows.push(CsvRow {
            target: f[0].parse().map_err(|_| bad("target"))?,
            modality: f[1].parse().map_err(|_| bad("modality"))?,
            seed: f[2].parse().map_err(|_| bad("seed"))?,
            fold: f[3].parse().map_err(|_| bad("fold"))?,
            mae,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub target: TargetId,
    pub mae_geometry: f64,
    pub mae_multimodal: f64,
    pub percent_change: f64,
    /// Completed (seed, fold) runs per modality.
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub fold_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub note: String,
    pub rows: Vec<ReportRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Averages CSV rows per target and modality. Targets missing either
/// modality are skipped with a warning.
pub fn aggregate(rows: &[CsvRow], fold_hashes: &BTreeMap<TargetId, String>) -> Result<AblationReport, TrainError> {
    let mut groups: BTreeMap<(TargetId, Modality), Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.target, r.modality)).or_default().push(r);
    }
    let targets: BTreeSet<TargetId> = rows.iter().map(|r| r.target).collect();
    let mut out = Vec::new();
    // benchmark order, not alphabetical
    for t in TargetId::ALL.into_iter().filter(|t| targets.contains(t)) {
        let (Some(geo), Some(multi)) = (
            groups.get(&(t, Modality::GeometryOnly)),
            groups.get(&(t, Modality::Multimodal)),
        ) else {
            log::warn!("{}: only one modality present, skipped", t.name());
            continue;
        };
        let mae_geometry = mean(&geo.iter().map(|r| r.mae).collect::<Vec<_>>());
        let mae_multimodal = mean(&multi.iter().map(|r| r.mae).collect::<Vec<_>>());
        let seeds: BTreeSet<u64> = geo.iter().chain(multi.iter()).map(|r| r.seed).collect();
        out.push(ReportRow {
            target: t,
            mae_geometry,
            mae_multimodal,
            percent_change: percent_change(mae_geometry, mae_multimodal)?,
            n_runs: geo.len().min(multi.len()),
            seeds: seeds.into_iter().collect(),
            fold_hash: fold_hashes.get(&t).cloned(),
        });
    }
    Ok(AblationReport {
        note: RUNS_NOTE.to_string(),
        rows: out,
    })
}

/// Recomputes every percent change from the stored MAEs.
pub fn verify(report: &AblationReport) -> Result<(), TrainError> {
    for r in &report.rows {
        let pc = percent_change(r.mae_geometry, r.mae_multimodal)?;
        if (pc - r.percent_change).abs() > 1e-9 {
            return Err(TrainError::Report(format!(
                "{}: stored change {} but MAEs give {pc}",
                r.target.name(),
                r.percent_change
            )));
        }
    }
    Ok(())
}

/// Markdown table in the layout of a per-property comparison table.
pub fn render_table(report: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Property (Target) | Unit | Geometry-only MAE | Multimodal MAE | Change in MAE |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "| {} ({}) | {} | {:.6} | {:.6} | {} |",
            r.target.label(),
            r.target.name(),
            r.target.unit(),
            r.mae_geometry,
            r.mae_multimodal,
            format_change(r.percent_change)
        );
    }
    let _ = writeln!(s, "\n{}", report.note);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_change_cases() {
        assert!((percent_change(1.0, 0.8).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(percent_change(1.0, 1.0).unwrap(), 0.0);
        assert!(percent_change(0.0, 1.0).is_err());
        assert!(percent_change(-1.0, 1.0).is_err());
    }

    #[test]
    fn markers_follow_sign() {
        assert_eq!(format_change(20.36), "+20.36% \u{2191}");
        assert_eq!(format_change(-14.6), "\u{2212}14.60% \u{2193}");
        assert_eq!(format_change(0.0), "0.00%");
        assert_eq!(format_change(-0.001), "0.00%");
    }

    #[test]
    fn csv_round_trip_and_schema_drift() {
        let rows = vec![
            CsvRow {
                target: TargetId::Homo,
                modality: Modality::GeometryOnly,
                seed: 0,
                fold: 1,
                mae: 0.1 / 3.0,
            },
            CsvRow {
                target: TargetId::Gap,
                modality: Modality::Multimodal,
                seed: 2,
                fold: 0,
                mae: 1e-7,
            },
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(parse_csv(&text).unwrap(), rows);

        let drifted = text.replace("mae", "error");
        assert!(matches!(parse_csv(&drifted), Err(TrainError::Schema { line: 1, .. })));
        let extra = format!("{text}homo,multimodal,0,0,0.1,9\n");
        assert!(matches!(parse_csv(&extra), Err(TrainError::Schema { line: 4, .. })));
    }

    #[test]
    fn aggregate_one_row_per_modality() {
        let rows = vec![
            CsvRow {
                target: TargetId::Homo,
                modality: Modality::GeometryOnly,
                seed: 0,
                fold: 0,
                mae: 0.5,
            },
            CsvRow {
                target: TargetId::Homo,
                modality: Modality::Multimodal,
                seed: 0,
                fold: 0,
                mae: 0.4,
            },
        ];
        let rep = aggregate(&rows, &BTreeMap::new()).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!((rep.rows[0].percent_change - 20.0).abs() < 1e-9);
        verify(&rep).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert_eq!(serde_json::from_str::<AblationReport>(&json).unwrap(), rep);
        assert!(render_table(&rep).contains("+20.00% \u{2191}"));
    }
}
