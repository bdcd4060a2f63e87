//! CSV tables and an SVG plot of RD curves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RDCurve, RDPoint};
use crate::error::{precondition, Result};

#[derive(Serialize, Deserialize)]
struct Row {
    name: String,
    lambda: f64,
    bpp: f64,
    psnr_y: f64,
    psnr_yuv: f64,
}

fn file_stem(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "curve".into()
    } else {
        s
    }
}

/// Writes `<label>.csv` per curve and `rd_y.svg`, returning the paths in
/// that order.
pub fn rd_report(curves: &[RDCurve], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if curves.is_empty() {
        return Err(precondition("no curves to report"));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut stems: Vec<String> = Vec::new();
    let mut paths = Vec::new();
    for c in curves {
        let stem = file_stem(&c.label);
        if stems.contains(&stem) {
            return Err(precondition(format!("two curves map to file name '{stem}'")));
        }
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        for p in &c.points {
            w.serialize(Row {
                name: c.label.clone(),
                lambda: p.lambda,
                bpp: p.bpp,
                psnr_y: p.psnr_y,
                psnr_yuv: p.psnr_yuv,
            })?;
        }
        w.flush()?;
        stems.push(stem);
        paths.push(path);
    }
    let plot = dir.join("rd_y.svg");
    std::fs::write(&plot, render_svg(curves, "Y-PSNR (dB)"))?;
    paths.push(plot);
    Ok(paths)
}

/// Appends one point to an RD CSV, writing the header if the file is new.
pub fn append_rd_point(path: impl AsRef<Path>, label: &str, p: &RDPoint) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(Row {
        name: label.to_string(),
        lambda: p.lambda,
        bpp: p.bpp,
        psnr_y: p.psnr_y,
        psnr_yuv: p.psnr_yuv,
    })?;
    w.flush()?;
    Ok(())
}

pub fn read_rd_csv(path: impl AsRef<Path>) -> Result<RDCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let mut label = String::new();
    let mut points = Vec::new();
    for row in r.deserialize() {
        let row: Row = row?;
        label = row.name;
        points.push(RDPoint {
            lambda: row.lambda,
            bpp: row.bpp,
            psnr_y: row.psnr_y,
            psnr_yuv: row.psnr_yuv,
        });
    }
    RDCurve::new(label, points)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

/// Line plot of Y-PSNR against bpp on linear axes.
pub fn render_svg(curves: &[RDCurve], y_label: &str) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 70.0, 160.0, 20.0, 50.0);
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.bpp);
        x1 = x1.max(p.bpp);
        y0 = y0.min(p.psnr_y);
        y1 = y1.max(p.psnr_y);
    }
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if !(y1 > y0) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let (px, py) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * px;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * py;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{px}" height="{py}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.3}</text>"#,
            mt + py,
            mt + py + 5.0,
            mt + py + 18.0
        );
    }
    for t in nice_ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{t:.1}</text>"#,
            ml - 5.0,
            ml - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">bpp</text>"#,
        ml + px / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{y_label}</text>"#,
        mt + py / 2.0,
        mt + py / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.bpp), sy(p.psnr_y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for p in &c.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(p.bpp),
                sy(p.psnr_y)
            );
        }
        let ly = mt + 15.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            w - mr + 10.0,
            w - mr + 30.0,
            w - mr + 35.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(label: &str, shift: f64) -> RDCurve {
        RDCurve::new(
            label,
            [(8e-5, 0.2, 28.0), (1e-4, 0.3, 29.0), (3e-4, 0.6, 31.5)]
                .iter()
                .map(|&(lambda, bpp, q)| RDPoint {
                    lambda,
                    bpp: bpp + shift,
                    psnr_y: q + shift,
                    psnr_yuv: q + 1.0 / 3.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_curves_give_two_tables_and_a_plot() {
        let dir = tempfile::tempdir().unwrap();
        let curves = [curve("ours", 0.0), curve("mean color", 0.05)];
        let files = rd_report(&curves, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert!(files[1].ends_with("mean_color.csv"));
        for (f, c) in files.iter().zip(&curves) {
            assert_eq!(&read_rd_csv(f).unwrap(), c);
        }
        let svg = std::fs::read_to_string(&files[2]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        // Deterministic bytes.
        let first = std::fs::read(&files[0]).unwrap();
        rd_report(&curves, dir.path()).unwrap();
        assert_eq!(std::fs::read(&files[0]).unwrap(), first);
    }

    #[test]
    fn rejects_empty_and_colliding_names() {
        let dir = tempfile::tempdir().unwrap();
        assert!(rd_report(&[], dir.path()).is_err());
        assert!(rd_report(&[curve("a b", 0.0), curve("a_b", 0.0)], dir.path()).is_err());
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        assert!(rd_report(&[curve("a", 0.0)], blocker.join("sub")).is_err());
    }

    #[test]
    fn appended_points_read_back_as_a_curve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rd.csv");
        let c = curve("ours", 0.0);
        for p in c.points.iter().rev() {
            append_rd_point(&path, "ours", p).unwrap();
        }
        assert_eq!(read_rd_csv(&path).unwrap(), c);
    }
}
