use std::collections::BTreeMap;
use std::fmt::Write as _;

use gits_core::SamplerKind;
use serde::ser::{Serialize, Serializer};

use crate::experiment::CellRow;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    /// Sample standard deviation; undefined below two seeds.
    pub std: Option<f64>,
    /// Successful cells contributing.
    pub n: usize,
}

/// GITS-vs-baseline win counts.
#[derive(Debug, Clone, PartialEq)]
pub enum Wins {
    /// No GITS rows: the comparison section is omitted.
    Absent,
    /// GITS is the only sampler: emitted as `null`.
    Undefined,
    Counts(BTreeMap<String, usize>),
}

impl Wins {
    pub fn is_absent(&self) -> bool {
        matches!(self, Wins::Absent)
    }
}

impl Serialize for Wins {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Wins::Absent | Wins::Undefined => s.serialize_none(),
            Wins::Counts(m) => m.serialize(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Summary {
    /// sampler → ratio → aggregate of test nRMSE over seeds.
    pub aggregates: BTreeMap<String, BTreeMap<String, Aggregate>>,
    #[serde(skip_serializing_if = "Wins::is_absent")]
    pub wins: Wins,
}

pub fn ratio_key(ratio: f64) -> String {
    format!("{ratio}")
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate {
            mean: None,
            std: None,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Aggregate {
        mean: Some(mean),
        std,
        n,
    }
}

fn samplers_in_order(rows: &[CellRow]) -> Vec<SamplerKind> {
    let mut out = Vec::new();
    for r in rows {
        if !out.contains(&r.sampler) {
            out.push(r.sampler);
        }
    }
    out
}

/// Per-(sampler, ratio) seed statistics and GITS win counts, where a win is
/// a `(ratio, seed)` pair on which GITS has strictly lower nRMSE. Failed
/// cells are excluded.
pub fn compare_report(rows: &[CellRow]) -> Summary {
    let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let slot = values
            .entry(r.sampler.name().to_string())
            .or_default()
            .entry(ratio_key(r.ratio))
            .or_default();
        if let Some(v) = r.nrmse {
            slot.push(v);
        }
    }
    let aggregates = values
        .into_iter()
        .map(|(s, by_ratio)| (s, by_ratio.into_iter().map(|(k, v)| (k, aggregate(&v))).collect()))
        .collect();

    let samplers = samplers_in_order(rows);
    let wins = if !samplers.contains(&SamplerKind::Gits) {
        Wins::Absent
    } else if samplers.len() == 1 {
        Wins::Undefined
    } else {
        let lookup: BTreeMap<(SamplerKind, String, u64), f64> = rows
            .iter()
            .filter_map(|r| r.nrmse.map(|v| ((r.sampler, ratio_key(r.ratio), r.seed), v)))
            .collect();
        let mut counts = BTreeMap::new();
        for &b in samplers.iter().filter(|&&s| s != SamplerKind::Gits) {
            let wins = lookup
                .iter()
                .filter(|((s, ratio, seed), _)| {
                    *s == b
                        && lookup
                            .get(&(SamplerKind::Gits, ratio.clone(), *seed))
                            .is_some_and(|g| g < lookup.get(&(b, ratio.clone(), *seed)).unwrap())
                })
                .count();
            counts.insert(b.name().to_string(), wins);
        }
        Wins::Counts(counts)
    };
    Summary { aggregates, wins }
}

fn fmt_cell(a: Option<&Aggregate>) -> String {
    match a {
        Some(Aggregate { mean: Some(m), std: Some(s), .. }) => format!("{m:.4} ± {s:.4}"),
        Some(Aggregate { mean: Some(m), .. }) => format!("{m:.4}"),
        _ => "n/a".into(),
    }
}

/// Plain-text table: one row per ratio, one column per sampler.
pub fn render_text(summary: &Summary) -> String {
    let samplers: Vec<&String> = summary.aggregates.keys().collect();
    let mut ratios: Vec<String> = summary
        .aggregates
        .values()
        .flat_map(|m| m.keys().cloned())
        .collect();
    ratios.sort_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)));
    ratios.dedup();

    let mut grid: Vec<Vec<String>> = vec![std::iter::once("ratio".to_string())
        .chain(samplers.iter().map(|s| s.to_string()))
        .collect()];
    for r in &ratios {
        let mut line = vec![r.clone()];
        for s in &samplers {
            line.push(fmt_cell(summary.aggregates[*s].get(r)));
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    for row in &grid {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}", w = *w))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    match &summary.wins {
        Wins::Absent => {}
        Wins::Undefined => out.push_str("\nwins: n/a (no baselines)\n"),
        Wins::Counts(m) => {
            out.push_str("\ngits wins (ratio, seed) vs:\n");
            for (b, n) in m {
                let _ = writeln!(out, "  {b}: {n}");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sampler: SamplerKind, ratio: f64, seed: u64, nrmse: Option<f64>) -> CellRow {
        CellRow {
            dataset: "d".into(),
            sampler,
            ratio,
            seed,
            k: 1,
            nrmse,
            crmse: None,
            brmse: None,
            frmse_low: None,
            frmse_mid: None,
            frmse_high: None,
            selection_time_s: None,
            train_time_s: None,
            error: nrmse.is_none().then(|| "boom".into()),
        }
    }

    #[test]
    fn manual_means_and_wins() {
        use SamplerKind::*;
        let rows = vec![
            row(Gits, 0.1, 0, Some(0.2)),
            row(Gits, 0.1, 1, Some(0.4)),
            row(Gits, 0.1, 2, Some(0.3)),
            row(Uniform, 0.1, 0, Some(0.3)),
            row(Uniform, 0.1, 1, Some(0.4)),
            row(Uniform, 0.1, 2, Some(0.2)),
            row(LossOnly, 0.1, 0, Some(0.5)),
            row(LossOnly, 0.1, 1, None),
            row(LossOnly, 0.1, 2, Some(0.7)),
        ];
        let s = compare_report(&rows);
        let g = s.aggregates["gits"]["0.1"];
        assert!((g.mean.unwrap() - 0.3).abs() < 1e-12);
        assert!((g.std.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(g.n, 3);
        let l = s.aggregates["loss_only"]["0.1"];
        assert!((l.mean.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(l.n, 2);
        let Wins::Counts(w) = &s.wins else { panic!("expected counts") };
        // Tie on seed 1 is not a win.
        assert_eq!(w["uniform"], 1);
        assert_eq!(w["loss_only"], 2);
        let text = render_text(&s);
        assert!(text.contains("0.3000 ± 0.1000"));
        assert!(text.contains("uniform: 1"));
    }

    #[test]
    fn single_sampler_and_missing_gits() {
        let only = compare_report(&[row(SamplerKind::Gits, 0.05, 0, Some(0.1))]);
        assert_eq!(only.wins, Wins::Undefined);
        let json = serde_json::to_value(&only).unwrap();
        assert!(json["wins"].is_null());
        assert_eq!(json["aggregates"]["gits"]["0.05"]["std"], serde_json::Value::Null);

        let none = compare_report(&[row(SamplerKind::Uniform, 0.05, 0, Some(0.1))]);
        assert_eq!(none.wins, Wins::Absent);
        let json = serde_json::to_value(&none).unwrap();
        assert!(json.get("wins").is_none());
        assert!(json["aggregates"]["uniform"]["0.05"]["mean"].is_number());
    }
}
