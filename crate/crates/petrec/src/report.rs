//! Plain-text and image writers: CSV tables, PNG difference maps and SVG scatter plots.

use std::fmt::Write as _;
use std::io::BufWriter;
use std::path::Path;

use petrec_core::suvr::{AgreementPoint, AgreementStats};

use crate::error::{PipelineError, Result};

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Missing(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))
}

/// CSV with a header row; fields must not contain commas or quotes.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// 8-bit RGB PNG.
pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(PipelineError::Runtime(format!("{} bytes do not fill a {width}x{height} RGB image", rgb.len())));
    }
    ensure_parent(path)?;
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| PipelineError::Runtime(format!("png {}: {e}", path.display()));
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(rgb).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(())
}

/// Bland-Altman scatter (mean vs difference) with mean and limits-of-agreement lines.
pub fn bland_altman_svg(title: &str, points: &[AgreementPoint], stats: &AgreementStats) -> String {
    let (w, h, pad) = (480.0, 360.0, 48.0);
    let xs: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.diff).collect();
    ys.extend([stats.loa_low, stats.loa_high, 0.0]);
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = ((hi - lo) * 0.1).max(1e-3);
        (lo - m, hi + m)
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for (y, color, label) in [
        (stats.mean_diff, "blue", "mean"),
        (stats.loa_low, "red", "-1.96 sd"),
        (stats.loa_high, "red", "+1.96 sd"),
    ] {
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/><text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" fill="{color}">{label} {y:.3}</text>"#,
            w - pad,
            py(y),
            py(y),
            pad + 4.0,
            py(y) - 3.0
        );
    }
    for p in points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="black" fill-opacity="0.6"/>"#, px(p.mean), py(p.diff));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">mean SUVR ({x0:.2} to {x1:.2})</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle" font-family="sans-serif" font-size="12">SUVR difference</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}
