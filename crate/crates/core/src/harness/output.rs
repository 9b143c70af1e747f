use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, C, R> {
    experiment: &'a str,
    config_hash: &'a str,
    config: &'a C,
    results: &'a R,
}

/// Writes `{experiment, config_hash, config, results}` as pretty JSON.
pub fn write_json<C: Serialize, R: Serialize>(
    path: impl AsRef<Path>,
    experiment: &str,
    config_hash: &str,
    config: &C,
    results: &R,
) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let body = serde_json::to_string_pretty(&Envelope {
        experiment,
        config_hash,
        config,
        results,
    })?;
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// Flat table with a leading `config_hash` column.
pub fn write_csv(path: impl AsRef<Path>, config_hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))?;
    let mut head = vec!["config_hash"];
    head.extend_from_slice(header);
    w.write_record(&head)?;
    for r in rows {
        let mut rec = vec![config_hash.to_string()];
        rec.extend(r.iter().cloned());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct LineSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A minimal line chart.
pub fn write_svg_lines(
    path: impl AsRef<Path>,
    title: &str,
    x_label: &str,
    y_label: &str,
    config_hash: &str,
    series: &[LineSeries],
) -> Result<()> {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 1.0f64);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, "<!-- config_hash: {config_hash} -->");
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, m - 6.0, sy(y) + 4.0, y);
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.1}</text>"#, sx(x), h - m + 16.0, x);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            w - m - 120.0,
            m + 16.0 * i as f64,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    let path = path.as_ref();
    ensure_parent(path)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&vec![1, 2, 3]).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_hash(&vec![1, 2, 3]).unwrap());
        assert_ne!(a, config_hash(&vec![1, 2, 4]).unwrap());
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path().join("t.csv"), "abc", &["x"], &[vec!["1".into()]]).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(csv, "config_hash,x\nabc,1\n");
        let series = [LineSeries {
            name: "a<b".into(),
            points: vec![(0.0, 0.5), (1.0, 0.25)],
        }];
        write_svg_lines(dir.path().join("p.svg"), "t", "x", "y", "abc", &series).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("p.svg")).unwrap();
        assert!(svg.contains("a&lt;b") && svg.contains("abc"));
    }
}
