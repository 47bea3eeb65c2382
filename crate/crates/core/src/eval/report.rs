use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::to_db;
use crate::error::{Error, Result};
use crate::io;

/// JSON has no infinities; a perfect estimator's `-inf` dB is stored as null.
mod nullable_db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub nmse_linear: f64,
    #[serde(with = "nullable_db")]
    pub nmse_db: f64,
    pub n_slots: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub run_id: String,
    pub dataset_hash: String,
    pub model_hash: Option<String>,
    pub pilot_pattern: String,
    pub eval_seed: u64,
    /// One hash of the noisy pilot draws per SNR point.
    pub draw_hashes: Vec<String>,
    pub notes: BTreeMap<String, String>,
}

impl ReportMeta {
    pub fn new(run_id: impl Into<String>, dataset_hash: impl Into<String>) -> Self {
        ReportMeta {
            run_id: run_id.into(),
            dataset_hash: dataset_hash.into(),
            ..Default::default()
        }
    }

    pub fn note(mut self, key: &str, value: impl ToString) -> Self {
        self.notes.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub estimator: String,
    pub points: Vec<SnrPoint>,
    pub meta: ReportMeta,
}

impl EvalReport {
    pub fn new(estimator: impl Into<String>, meta: ReportMeta) -> Self {
        EvalReport {
            estimator: estimator.into(),
            points: Vec::new(),
            meta,
        }
    }

    pub fn push_point(&mut self, snr_db: f64, nmse_linear: f64, n_slots: usize) {
        self.points.push(SnrPoint {
            snr_db,
            nmse_linear,
            nmse_db: to_db(nmse_linear),
            n_slots,
        });
    }

    pub fn nmse_db_at(&self, snr_db: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.snr_db == snr_db)
            .map(|p| p.nmse_db)
    }

    pub fn mean_nmse_db(&self) -> f64 {
        self.points.iter().map(|p| p.nmse_db).sum::<f64>() / self.points.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            let db_ok = if p.nmse_linear == 0.0 {
                p.nmse_db == f64::NEG_INFINITY
            } else {
                (p.nmse_db - to_db(p.nmse_linear)).abs() < 1e-9
            };
            if !(p.nmse_linear >= 0.0) || !db_ok || p.n_slots == 0 {
                return Err(Error::Contract(format!("inconsistent report point {p:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

/// Columns `estimator, snr_db, nmse_db, n_slots`; one row per point.
pub fn write_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["estimator", "snr_db", "nmse_db", "n_slots"])
        .map_err(csv_err)?;
    for r in reports {
        for p in &r.points {
            w.write_record([
                r.estimator.clone(),
                p.snr_db.to_string(),
                format!("{:.6}", p.nmse_db),
                p.n_slots.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(reports: &[EvalReport], path: &Path) -> Result<()> {
    io::write_json(path, &reports)
}

pub fn read_json(path: &Path) -> Result<Vec<EvalReport>> {
    io::read_json(path)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Self-contained line chart of NMSE (dB) against SNR, one polyline per report.
pub fn render_svg(reports: &[EvalReport], title: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 56.0);
    let pts = reports
        .iter()
        .flat_map(|r| r.points.iter())
        .filter(|p| p.nmse_db.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in pts {
        x0 = x0.min(p.snr_db);
        x1 = x1.max(p.snr_db);
        y0 = y0.min(p.nmse_db);
        y1 = y1.max(p.nmse_db);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 0.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    let (y0, y1) = (
        (y0 / 5.0).floor() * 5.0,
        (y1 / 5.0).ceil() * 5.0 + if y1 == y0 { 5.0 } else { 0.0 },
    );
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let mut y = y0;
    while y <= y1 + 1e-9 {
        let _ = writeln!(
            s,
            r##"<line x1="{m}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{y}</text>"##,
            w - m,
            sy(y),
            sy(y),
            m - 4.0,
            sy(y) + 4.0
        );
        y += 5.0;
    }
    let mut xs: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.points.iter().map(|p| p.snr_db))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{x}</text>"#,
            sx(x),
            h - m + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">SNR (dB)</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">NMSE (dB)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = r
            .points
            .iter()
            .filter(|p| p.nmse_db.is_finite())
            .map(|p| format!("{:.2},{:.2}", sx(p.snr_db), sy(p.nmse_db)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = m + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            w - m - 8.0,
            xml_escape(&r.estimator)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn write_svg(reports: &[EvalReport], title: &str, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(reports, title)).map_err(|e| Error::io(path, e))
}

/// Writes `reports` into `dir` as `<stem>_<run_id>_<dataset hash prefix>.<ext>`.
pub fn emit_report(
    reports: &[EvalReport],
    format: ReportFormat,
    dir: &Path,
    stem: &str,
) -> Result<PathBuf> {
    io::ensure_dir(dir)?;
    let meta = reports.first().map(|r| r.meta.clone()).unwrap_or_default();
    let hash: String = meta.dataset_hash.chars().take(12).collect();
    let mut name = stem.to_string();
    for part in [meta.run_id.as_str(), hash.as_str()] {
        if !part.is_empty() {
            name.push('_');
            name.push_str(part);
        }
    }
    let path = dir.join(format!("{name}.{}", format.extension()));
    match format {
        ReportFormat::Csv => write_csv(reports, &path)?,
        ReportFormat::Json => write_json(reports, &path)?,
        ReportFormat::Svg => write_svg(reports, stem, &path)?,
    }
    Ok(path)
}
