//! Report bundle: CSV tables, SVG plots and a JSON summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io;
use crate::Result;

/// Keyword-level accuracy of one measure; `snr` is `all` or a grid value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub measure: String,
    pub condition: String,
    pub listener: String,
    pub snr: String,
    pub accuracy: f64,
    pub ci95: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    pub measure: String,
    pub condition: String,
    pub listener: String,
    pub ncc: f64,
    pub ncc_ci95: f64,
    pub tau: f64,
    pub tau_ci95: f64,
    pub rmse: f64,
    pub rmse_ci95: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SrtRow {
    /// `human` or the predicting measure.
    pub source: String,
    pub condition: String,
    pub listener: String,
    pub srt_db: Option<f64>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub condition: String,
    pub measure_a: String,
    pub measure_b: String,
    pub correct_a: u64,
    pub correct_b: u64,
    pub total: u64,
    pub p: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Vec<AccuracyRow>,
    pub macroscopic: Vec<MacroRow>,
    pub srt: Vec<SrtRow>,
    pub significance: Vec<SignificanceRow>,
    /// Settings the metrics were produced with.
    pub config: serde_json::Value,
}

/// Writes `tables/`, `plots/` and `summary.json` under `dir`.
pub fn build_report(metrics: &Metrics, dir: &Path) -> Result<()> {
    let (overall, by_snr): (Vec<AccuracyRow>, Vec<AccuracyRow>) = metrics.accuracy.iter().cloned().partition(|r| r.snr == "all");
    let tables = dir.join("tables");
    write_table(&tables.join("accuracy.csv"), &overall)?;
    write_table(&tables.join("accuracy_vs_snr.csv"), &by_snr)?;
    write_table(&tables.join("macroscopic.csv"), &metrics.macroscopic)?;
    write_table(&tables.join("srt.csv"), &metrics.srt)?;
    write_table(&tables.join("significance.csv"), &metrics.significance)?;

    let plots = dir.join("plots");
    io::write_text(&plots.join("accuracy_vs_snr.svg"), &accuracy_plot(&by_snr))?;
    io::write_text(&plots.join("srt.svg"), &srt_plot(&metrics.srt))?;
    io::write_text(&plots.join("macroscopic.svg"), &macro_plot(&metrics.macroscopic))?;
    io::write_json(&dir.join("summary.json"), metrics)
}

/// CSV with a header even when there are no rows.
fn write_table<T: Serialize + Default>(path: &Path, rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(T::default())?;
        let bytes = w.into_inner().map_err(|e| crate::Error::invalid(e.to_string()))?;
        let text = String::from_utf8_lossy(&bytes);
        let header = text.lines().next().unwrap_or_default();
        return io::write_text(path, &format!("{header}\n"));
    }
    io::write_csv(path, rows)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        escape(title)
    );
    s
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0).max(1e-12) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0).max(1e-12) * (H - TOP - BOTTOM)
    }

    fn draw(&self, s: &mut String, xlabel: &str, ylabel: &str, xticks: &[(f64, String)]) {
        let (bx, by) = (self.py(self.y0), self.px(self.x0));
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{bx:.2}" x2="{:.2}" y2="{bx:.2}" stroke="black"/>"#,
            W - RIGHT
        );
        let _ = writeln!(s, r#"<line x1="{by:.2}" y1="{TOP}" x2="{by:.2}" y2="{bx:.2}" stroke="black"/>"#);
        for (x, label) in xticks {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                self.px(*x),
                bx + 15.0,
                escape(label)
            );
        }
        for i in 0..=4 {
            let v = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
                LEFT - 5.0,
                self.py(v) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (W - RIGHT + LEFT) / 2.0,
            H - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }
}

fn legend(s: &mut String, i: usize, label: &str) {
    let y = TOP + 14.0 * i as f64;
    let x = W - RIGHT + 10.0;
    let _ = writeln!(
        s,
        r#"<rect x="{x}" y="{:.2}" width="10" height="10" fill="{}"/>"#,
        y,
        PALETTE[i % PALETTE.len()]
    );
    let _ = writeln!(s, r#"<text x="{}" y="{:.2}">{}</text>"#, x + 14.0, y + 9.0, escape(label));
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo.is_finite() {
        (lo, if hi > lo { hi } else { lo + 1.0 })
    } else {
        (0.0, 1.0)
    }
}

fn listener_suffix(listener: &str) -> String {
    if listener.is_empty() || listener == "NHL" {
        String::new()
    } else {
        format!(" {listener}")
    }
}

/// One line per (measure, condition, listener).
fn accuracy_plot(rows: &[AccuracyRow]) -> String {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let Ok(x) = r.snr.parse::<f64>() else { continue };
        let mut key = format!("{} ({}", r.measure, r.condition);
        if r.listener != "NHL" {
            let _ = write!(key, ", {}", r.listener);
        }
        key.push(')');
        series.entry(key).or_default().push((x, r.accuracy));
    }
    let (x0, x1) = range(series.values().flatten().map(|p| p.0));
    let (ylo, _) = range(series.values().flatten().map(|p| p.1));
    let axes = Axes {
        x0,
        x1,
        y0: (ylo / 10.0).floor() * 10.0,
        y1: 100.0,
    };
    let mut s = open("Prediction accuracy vs SNR");
    let mut ticks: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let ticks: Vec<(f64, String)> = ticks.into_iter().map(|t| (t, format!("{t}"))).collect();
    axes.draw(&mut s, "SNR (dB)", "accuracy (%)", &ticks);
    for (i, (name, mut pts)) in series.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", axes.px(*x), axes.py(*y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            path.join(" ")
        );
        legend(&mut s, i, &name);
    }
    s.push_str("</svg>\n");
    s
}

fn bars(title: &str, ylabel: &str, items: &[(String, f64)], zero_based: bool) -> String {
    let (lo, hi) = range(items.iter().map(|i| i.1));
    let (y0, y1) = if zero_based {
        (lo.min(0.0), hi.max(0.0))
    } else {
        (lo - 1.0, hi + 1.0)
    };
    let axes = Axes {
        x0: 0.0,
        x1: items.len().max(1) as f64,
        y0,
        y1: if y1 > y0 { y1 } else { y0 + 1.0 },
    };
    let mut s = open(title);
    axes.draw(&mut s, "", ylabel, &[]);
    let base = if zero_based { 0.0 } else { axes.y0 };
    for (i, (name, v)) in items.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let (a, b) = (axes.py(base), axes.py(*v));
        let x = axes.px(i as f64 + 0.15);
        let w = axes.px(0.7) - axes.px(0.0);
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{}"/>"#,
            a.min(b),
            (a - b).abs(),
            PALETTE[i % PALETTE.len()]
        );
        legend(&mut s, i, &format!("{name}: {v:.3}"));
    }
    s.push_str("</svg>\n");
    s
}

fn srt_plot(rows: &[SrtRow]) -> String {
    let items: Vec<(String, f64)> = rows
        .iter()
        .filter_map(|r| r.srt_db.map(|v| (format!("{} {} {}", r.source, r.condition, r.listener), v)))
        .collect();
    bars("Speech reception thresholds", "SRT (dB)", &items, false)
}

fn macro_plot(rows: &[MacroRow]) -> String {
    let mut items = Vec::new();
    for (metric, get) in [
        ("NCC", (|r: &MacroRow| r.ncc) as fn(&MacroRow) -> f64),
        ("tau", |r| r.tau),
        ("RMSE", |r| r.rmse),
    ] {
        for r in rows {
            items.push((
                format!("{metric} {} {}{}", r.measure, r.condition, listener_suffix(&r.listener)),
                get(r),
            ));
        }
    }
    bars("Macroscopic prediction", "value", &items, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Metrics {
        let mut m = Metrics::default();
        for (measure, acc) in [("D", 80.0), ("NORI", 84.0)] {
            for snr in ["-4", "0", "all"] {
                m.accuracy.push(AccuracyRow {
                    measure: measure.into(),
                    condition: "ssn".into(),
                    listener: "NHL".into(),
                    snr: snr.into(),
                    accuracy: acc,
                    ci95: 1.0,
                    n: 100,
                });
            }
        }
        m.srt.push(SrtRow {
            source: "human".into(),
            condition: "ssn".into(),
            listener: "NHL".into(),
            srt_db: Some(-10.3),
            slope: Some(0.4),
        });
        m
    }

    fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        for sub in ["tables", "plots"] {
            for e in std::fs::read_dir(dir.join(sub)).unwrap() {
                let p = e.unwrap().path();
                out.insert(
                    p.display().to_string().replace(&dir.display().to_string(), ""),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
        out.insert("summary".into(), std::fs::read(dir.join("summary.json")).unwrap());
        out
    }

    #[test]
    fn deterministic_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        build_report(&sample(), a.path()).unwrap();
        build_report(&sample(), b.path()).unwrap();
        assert_eq!(read_all(a.path()), read_all(b.path()));
        let svg = std::fs::read_to_string(a.path().join("plots/accuracy_vs_snr.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let csv = std::fs::read_to_string(a.path().join("tables/accuracy.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn empty_metrics_give_valid_files() {
        let d = tempfile::tempdir().unwrap();
        build_report(&Metrics::default(), d.path()).unwrap();
        let csv = std::fs::read_to_string(d.path().join("tables/accuracy.csv")).unwrap();
        assert_eq!(csv, "measure,condition,listener,snr,accuracy,ci95,n\n");
        let srt = std::fs::read_to_string(d.path().join("tables/srt.csv")).unwrap();
        assert_eq!(srt, "source,condition,listener,srt_db,slope\n");
        for p in ["accuracy_vs_snr", "srt", "macroscopic"] {
            let svg = std::fs::read_to_string(d.path().join(format!("plots/{p}.svg"))).unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        }
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("summary.json")).unwrap()).unwrap();
        assert!(v["accuracy"].as_array().unwrap().is_empty());
    }
}
