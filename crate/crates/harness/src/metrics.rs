//! Per-case MAE and MAPE with seen/unseen aggregates.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use htgnn_core::WindowSample;
use htgnn_rig::OperatingCondition;

use crate::error::{HarnessError, Result};

/// Windows whose true load is below this magnitude (kN) are left out of
/// MAPE; MAE still counts them.
pub const MAPE_FLOOR_KN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case_id: usize,
    pub condition: OperatingCondition,
    pub seen: bool,
    pub windows: usize,
    pub mae: [f64; 2],
    /// Percent; `None` when every window falls under the floor.
    pub mape: [Option<f64>; 2],
}

/// Unweighted means over cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub cases: usize,
    pub mae: [f64; 2],
    pub mape: [Option<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
    pub seen: Option<Aggregate>,
    pub unseen: Option<Aggregate>,
}

fn aggregate<'a>(cases: impl Iterator<Item = &'a CaseMetrics>) -> Option<Aggregate> {
    let cases: Vec<&CaseMetrics> = cases.collect();
    if cases.is_empty() {
        return None;
    }
    let n = cases.len() as f64;
    let mae = [0, 1].map(|k| cases.iter().map(|c| c.mae[k]).sum::<f64>() / n);
    let mape = [0, 1].map(|k| {
        let v: Vec<f64> = cases.iter().filter_map(|c| c.mape[k]).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    });
    Some(Aggregate {
        cases: cases.len(),
        mae,
        mape,
    })
}

/// Scores predictions (kN) against the windows they were made for.
/// `conditions` is indexed by case id.
pub fn evaluate(predictions: &[[f64; 2]], windows: &[&WindowSample], conditions: &[OperatingCondition]) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(HarnessError::Empty("evaluate"));
    }
    if predictions.len() != windows.len() {
        return Err(HarnessError::Config(format!(
            "{} predictions for {} windows",
            predictions.len(),
            windows.len()
        )));
    }
    struct Acc {
        seen: bool,
        n: usize,
        abs: [f64; 2],
        pct: [f64; 2],
        pct_n: [usize; 2],
    }
    let mut per_case: BTreeMap<usize, Acc> = BTreeMap::new();
    for (p, w) in predictions.iter().zip(windows) {
        let acc = per_case.entry(w.case_id).or_insert(Acc {
            seen: w.seen,
            n: 0,
            abs: [0.0; 2],
            pct: [0.0; 2],
            pct_n: [0; 2],
        });
        acc.n += 1;
        for (k, (&pk, &yk)) in p.iter().zip(&w.y).enumerate() {
            let err = (pk - yk).abs();
            acc.abs[k] += err;
            if yk.abs() >= MAPE_FLOOR_KN {
                acc.pct[k] += 100.0 * err / yk.abs();
                acc.pct_n[k] += 1;
            }
        }
    }
    let cases = per_case
        .into_iter()
        .map(|(case_id, a)| {
            let condition = *conditions
                .get(case_id)
                .ok_or_else(|| HarnessError::Config(format!("no condition for case {case_id}")))?;
            Ok(CaseMetrics {
                case_id,
                condition,
                seen: a.seen,
                windows: a.n,
                mae: [0, 1].map(|k| a.abs[k] / a.n as f64),
                mape: [0, 1].map(|k| (a.pct_n[k] > 0).then(|| a.pct[k] / a.pct_n[k] as f64)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        seen: aggregate(cases.iter().filter(|c| c.seen)),
        unseen: aggregate(cases.iter().filter(|c| !c.seen)),
        cases,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn write_cases_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["case_id", "F_x", "F_y", "speed", "seen", "mae_fx", "mae_fy", "mape_fx", "mape_fy"])?;
        for c in &self.cases {
            w.write_record([
                c.case_id.to_string(),
                c.condition.fx.to_string(),
                c.condition.fy.to_string(),
                c.condition.speed.to_string(),
                u8::from(c.seen).to_string(),
                format!("{:.6}", c.mae[0]),
                format!("{:.6}", c.mae[1]),
                opt(c.mape[0]),
                opt(c.mape[1]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["group", "cases", "mae_fx", "mae_fy", "mape_fx", "mape_fy"])?;
        for (name, agg) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            if let Some(a) = agg {
                w.write_record([
                    name.to_string(),
                    a.cases.to_string(),
                    format!("{:.6}", a.mae[0]),
                    format!("{:.6}", a.mae[1]),
                    opt(a.mape[0]),
                    opt(a.mape[1]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map(|x| format!("{x:8.2}")).unwrap_or_else(|| format!("{:>8}", "-"));
        writeln!(f, "{:<8} {:>5} {:>10} {:>10} {:>8} {:>8}", "group", "cases", "MAE_Fx", "MAE_Fy", "MAPE_Fx", "MAPE_Fy")?;
        for (name, agg) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            if let Some(a) = agg {
                writeln!(
                    f,
                    "{name:<8} {:>5} {:>10.2} {:>10.2} {} {}",
                    a.cases,
                    a.mae[0],
                    a.mae[1],
                    pct(a.mape[0]),
                    pct(a.mape[1])
                )?;
            }
        }
        Ok(())
    }
}

/// Per-window true and predicted loads for plotting, grouped by case in
/// time order.
pub fn write_case_plot_csv<W: Write>(writer: W, predictions: &[[f64; 2]], windows: &[&WindowSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["case_id", "seen", "index", "fx_true", "fx_pred", "fy_true", "fy_pred", "speed"])?;
    let mut seen_count: BTreeMap<usize, usize> = BTreeMap::new();
    for (p, s) in predictions.iter().zip(windows) {
        let k = seen_count.entry(s.case_id).or_default();
        let speed = s.w.data().last().copied().unwrap_or(0.0);
        w.write_record([
            s.case_id.to_string(),
            u8::from(s.seen).to_string(),
            k.to_string(),
            s.y[0].to_string(),
            format!("{:.6}", p[0]),
            s.y[1].to_string(),
            format!("{:.6}", p[1]),
            format!("{speed:.6}"),
        ])?;
        *k += 1;
    }
    w.flush()?;
    Ok(())
}
