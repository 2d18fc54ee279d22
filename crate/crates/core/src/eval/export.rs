use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    default_lead_grid, dual_threshold_eval, lead_tradeoff, operating_point, roc_curve,
    timeliness_curve, CurvePoint, LeadPoint, MetricCurve,
};
use crate::error::{Error, Result};
use crate::scoring::ScoreTrace;

/// Lower (discharge) thresholds reported by default.
pub const DISCHARGE_LOWER_THRESHOLDS: [f64; 3] = [0.01, 0.05, 0.2];

/// Everything computed for one set of score traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub roc: MetricCurve,
    /// `(lower threshold, curve)` pairs.
    pub dual: Vec<(f64, MetricCurve)>,
    pub target_tpr: f64,
    /// Absent when the target TPR cannot be reached.
    pub timeliness: Option<MetricCurve>,
    pub operating_point: Option<CurvePoint>,
    /// PPV and median lead at the target TPR as the required lead grows.
    #[serde(default)]
    pub lead_tradeoff: Vec<LeadPoint>,
}

impl ModelEvaluation {
    pub fn compute(traces: &[ScoreTrace], lowers: &[f64], target_tpr: f64) -> Result<Self> {
        let roc = roc_curve(traces, None)?;
        let dual = lowers
            .iter()
            .map(|&l| Ok((l, dual_threshold_eval(traces, l, None)?)))
            .collect::<Result<Vec<_>>>()?;
        let timeliness = match timeliness_curve(traces, target_tpr, None) {
            Ok(c) => Some(c),
            Err(Error::UnreachableTpr { .. }) => None,
            Err(e) => return Err(e),
        };
        let operating_point = timeliness
            .as_ref()
            .and_then(|c| operating_point(c, target_tpr));
        let lead_tradeoff = if target_tpr > 0.0 {
            match lead_tradeoff(traces, target_tpr, &default_lead_grid()) {
                Ok(s) => s,
                Err(Error::UnreachableTpr { .. }) => Vec::new(),
                Err(e) => return Err(e),
            }
        } else {
            Vec::new()
        };
        Ok(ModelEvaluation {
            roc,
            dual,
            target_tpr,
            timeliness,
            operating_point,
            lead_tradeoff,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub metric: String,
    /// Value per column; `None` when undefined for that model.
    pub values: BTreeMap<String, Option<f64>>,
}

/// Metrics of several scorers on one test cohort, one row per metric and one
/// column per scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub columns: Vec<String>,
    pub rows: Vec<BenchmarkRow>,
    pub patients: usize,
    pub prevalence: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl BenchmarkReport {
    pub fn new(traces_for_prevalence: &[ScoreTrace], models: &[(&str, &ModelEvaluation)]) -> Self {
        let patients = traces_for_prevalence.len();
        let positives = traces_for_prevalence
            .iter()
            .filter(|t| t.outcome == crate::cohort::Outcome::Icu)
            .count();
        let columns: Vec<String> = models.iter().map(|(n, _)| n.to_string()).collect();
        let mut rows = Vec::new();
        let mut row = |metric: String, f: &dyn Fn(&ModelEvaluation) -> Option<f64>| {
            rows.push(BenchmarkRow {
                metric,
                values: models.iter().map(|(n, e)| (n.to_string(), f(e))).collect(),
            })
        };
        row("AUC (ICU admission)".into(), &|e| Some(e.roc.auc));
        let lowers: Vec<f64> = models
            .first()
            .map(|(_, e)| e.dual.iter().map(|d| d.0).collect())
            .unwrap_or_default();
        for l in lowers {
            row(format!("AUC (Discharge at {l})"), &move |e| {
                e.dual.iter().find(|d| d.0 == l).map(|d| d.1.auc)
            });
        }
        let target = models.first().map_or(0.5, |(_, e)| e.target_tpr);
        let pct = (target * 100.0).round();
        row(format!("PPV at TPR {pct}%"), &|e| {
            e.operating_point.and_then(|p| p.ppv)
        });
        row(format!("Median lead time at TPR {pct}% (hours)"), &|e| {
            e.operating_point.and_then(|p| p.lead_hours)
        });
        BenchmarkReport {
            columns,
            rows,
            patients,
            prevalence: if patients == 0 {
                0.0
            } else {
                positives as f64 / patients as f64
            },
            metadata: BTreeMap::new(),
        }
    }

    pub fn value(&self, metric: &str, column: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .and_then(|r| r.values.get(column).copied().flatten())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// CSV with columns `threshold,tpr,ppv,lead_hours`; undefined cells are
/// left empty.
pub fn write_curve_csv<W: Write>(curve: &MetricCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "tpr", "ppv", "lead_hours"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &curve.points {
        w.write_record([
            p.threshold.to_string(),
            p.tpr.to_string(),
            opt(p.ppv),
            opt(p.lead_hours),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// CSV with columns `min_lead_hours,threshold,tpr,ppv,median_lead_hours`.
pub fn write_lead_csv<W: Write>(sweep: &[LeadPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "min_lead_hours",
        "threshold",
        "tpr",
        "ppv",
        "median_lead_hours",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in sweep {
        w.write_record([
            p.min_lead.to_string(),
            p.threshold.to_string(),
            p.tpr.to_string(),
            opt(p.ppv),
            opt(p.median_lead),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Standalone SVG line plot. With `lead_time` the y axis is the median lead
/// time against PPV on x, otherwise PPV against TPR.
pub fn curve_svg(curve: &MetricCurve, title: &str, lead_time: bool) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 50.0;
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|p| {
            if lead_time {
                Some((p.ppv?, p.lead_hours?))
            } else {
                Some((p.tpr, p.ppv?))
            }
        })
        .collect();
    let y_max = if lead_time {
        pts.iter().map(|p| p.1).fold(1.0_f64, f64::max) * 1.05
    } else {
        1.0
    };
    let sx = |x: f64| M + x * (W - 2.0 * M);
    let sy = |y: f64| H - M - y / y_max * (H - 2.0 * M);
    let (xl, yl) = if lead_time {
        ("PPV", "median lead time (h)")
    } else {
        ("TPR", "PPV")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} (AUC {:.3})</text>"#,
        W / 2.0,
        escape(title),
        curve.auc
    );
    let _ = writeln!(
        s,
        r#"<path d="M{x0},{y0} L{x1},{y0} M{x0},{y0} L{x0},{y1}" stroke="black" fill="none"/>"#,
        x0 = sx(0.0),
        y0 = sy(0.0),
        x1 = sx(1.0),
        y1 = sy(y_max)
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{:.2}</text>"#,
            sx(f),
            sy(0.0) + 16.0,
            f
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#,
            sx(0.0) - 6.0,
            sy(f * y_max) + 4.0,
            f * y_max
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xl}</text>"#,
        W / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{yl}</text>"#,
        H / 2.0,
        H / 2.0
    );
    if !pts.is_empty() {
        let mut sorted = pts;
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = sorted
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#,
            path.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Outcome;
    use crate::scoring::ScorePoint;

    fn traces() -> Vec<ScoreTrace> {
        (0..40)
            .map(|i| ScoreTrace {
                patient_id: format!("p{i}"),
                outcome: if i % 5 == 0 {
                    Outcome::Icu
                } else {
                    Outcome::Discharged
                },
                endpoint_time: 24.0,
                points: vec![
                    ScorePoint {
                        time: 1.0,
                        risk: 0.1 + (i % 7) as f64 * 0.02,
                    },
                    ScorePoint {
                        time: 5.0,
                        risk: if i % 5 == 0 {
                            0.6
                        } else {
                            (i % 9) as f64 * 0.07
                        },
                    },
                ],
            })
            .collect()
    }

    #[test]
    fn report_has_all_rows_and_columns() {
        let t = traces();
        let e = ModelEvaluation::compute(&t, &DISCHARGE_LOWER_THRESHOLDS, 0.5).unwrap();
        let r = BenchmarkReport::new(&t, &[("full", &e), ("stationary", &e), ("snapshot", &e)]);
        assert_eq!(r.columns, ["full", "stationary", "snapshot"]);
        assert_eq!(r.rows.len(), 6);
        assert!(r.value("AUC (Discharge at 0.05)", "snapshot").is_some());
        let back: BenchmarkReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_and_svg() {
        let t = traces();
        let c = roc_curve(&t, None).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,tpr,ppv,lead_hours\n"));
        assert_eq!(text.lines().count(), c.points.len() + 1);
        let svg = curve_svg(&c, "a <b>", false);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt;b&gt;"));
    }
}
