//! SVG figures rendered from a finished artifact directory.
//!
//! Plots read only the CSV artifacts, never the in-memory run, so they can
//! be regenerated from any directory that has a manifest.

use std::fmt::Write as _;
use std::path::Path;

use super::report::{parse_f64, read_csv, ArtifactDir, Manifest};
use crate::error::Result;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
pub const HISTOGRAM_BINS: usize = 30;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Frame {
            x,
            y,
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, label: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" data-label="{label}" points="{}"/>"#,
            coords.join(" ")
        );
    }

    fn finish(self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        s.push('\n');
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
            W / 2.0
        );
        let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
        let _ = writeln!(
            s,
            r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#,
            W / 2.0,
            H - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        );
        for (v, anchor, x, y) in [
            (self.x.0, "start", x0, y0 + 15.0),
            (self.x.1, "end", x1, y0 + 15.0),
        ] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#);
        }
        for (v, y) in [(self.y.0, y0), (self.y.1, y1 + 10.0)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{v:.3}</text>"#,
                x0 - 4.0
            );
        }
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn numeric(rows: &[Vec<String>], col: usize, at: &str) -> Result<Vec<f64>> {
    rows.iter().map(|r| parse_f64(&r[col], at)).collect()
}

/// Loss along an interpolation path, one vertex per sampled alpha.
fn interpolation_svg(alphas: &[f64], losses: &[f64], title: &str) -> String {
    let mut f = Frame::new(span(alphas.iter().copied()), span(losses.iter().copied()));
    let pts: Vec<(f64, f64)> = alphas.iter().copied().zip(losses.iter().copied()).collect();
    f.polyline(&pts, "steelblue", "loss");
    f.finish(title, "alpha", "loss")
}

/// Equal-width histogram counts over `[lo, hi]`.
pub fn histogram(values: &[f64], bins: usize) -> (f64, f64, Vec<usize>) {
    let (lo, hi) = span(values.iter().copied());
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    (lo, hi, counts)
}

fn histogram_svg(values: &[f64], censored: usize, title: &str) -> String {
    let (lo, hi, counts) = histogram(values, HISTOGRAM_BINS);
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut f = Frame::new((lo, hi), (0.0, top));
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    for (i, &c) in counts.iter().enumerate() {
        let (xa, xb) = (f.px(lo + i as f64 * width), f.px(lo + (i + 1) as f64 * width));
        let (ya, yb) = (f.py(c as f64), f.py(0.0));
        let _ = writeln!(
            f.body,
            r#"<rect class="bin" x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="indianred" data-count="{c}"/>"#,
            (xb - xa).max(0.0),
            (yb - ya).max(0.0)
        );
    }
    let title = format!("{title} ({} found, {censored} censored)", values.len());
    f.finish(&title, "radius", "count")
}

fn heat(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t) as u8;
    let b = (255.0 * (1.0 - t)) as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.8) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn surface_svg(dir: &ArtifactDir) -> Result<String> {
    let at = "surface/grid.csv";
    let (h, rows) = read_csv(&dir.path(at))?;
    let col = |n| column(&h, n).expect("surface grid column");
    let xs = numeric(&rows, col("x"), at)?;
    let ys = numeric(&rows, col("y"), at)?;
    let ls = numeric(&rows, col("loss"), at)?;
    let n_cols = rows.iter().map(|r| r[col("col")].parse::<usize>().unwrap_or(0)).max().unwrap_or(0) + 1;
    let n_rows = rows.len() / n_cols.max(1);
    let mut f = Frame::new(span(xs.iter().copied()), span(ys.iter().copied()));
    let (lmin, lmax) = span(ls.iter().copied());
    let cw = (W - 2.0 * PAD) / n_cols.saturating_sub(1).max(1) as f64;
    let ch = (H - 2.0 * PAD) / n_rows.saturating_sub(1).max(1) as f64;
    for i in 0..rows.len() {
        let (cx, cy) = (f.px(xs[i]), f.py(ys[i]));
        let _ = writeln!(
            f.body,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            cx - cw / 2.0,
            cy - ch / 2.0,
            cw,
            ch,
            heat((ls[i] - lmin) / (lmax - lmin))
        );
    }
    if dir.exists("surface/points.csv") {
        let at = "surface/points.csv";
        let (h, rows) = read_csv(&dir.path(at))?;
        let (pc, xc, yc) = (
            column(&h, "point").expect("point column"),
            column(&h, "x").expect("x column"),
            column(&h, "y").expect("y column"),
        );
        for r in &rows {
            let (x, y) = (f.px(parse_f64(&r[xc], at)?), f.py(parse_f64(&r[yc], at)?));
            let _ = writeln!(
                f.body,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="black"/><text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#,
                x + 5.0,
                y - 5.0,
                r[pc]
            );
        }
    }
    Ok(f.finish("loss surface", "x", "y"))
}

fn levels_svg(dir: &ArtifactDir, file: &str, ycol: &str, title: &str) -> Result<String> {
    let (h, rows) = read_csv(&dir.path(file))?;
    let xs = numeric(&rows, column(&h, "level").expect("level column"), file)?;
    let ys = numeric(&rows, column(&h, ycol).expect("value column"), file)?;
    let mut f = Frame::new(span(xs.iter().copied()), span(ys.iter().copied()));
    let pts: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
    f.polyline(&pts, "darkgreen", ycol);
    for &(x, y) in &pts {
        let _ = writeln!(f.body, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="darkgreen"/>"#, f.px(x), f.py(y));
    }
    Ok(f.finish(title, "level", ycol))
}

fn stem(path: &str) -> &str {
    let file = path.rsplit('/').next().unwrap_or(path);
    file.strip_suffix(".csv").unwrap_or(file)
}

/// Renders every figure the directory has data for into `plots/` and
/// returns the written paths. Fails with `MissingArtifact` when the
/// directory has no manifest.
pub fn emit_plots(dir: &Path) -> Result<Vec<String>> {
    let manifest = Manifest::load(dir)?;
    let out = ArtifactDir::create(dir)?;
    let mut written = Vec::new();
    let mut put = |rel: String, svg: String| -> Result<()> {
        out.write(&rel, svg.as_bytes())?;
        written.push(rel);
        Ok(())
    };
    if manifest.contains("levels.csv") {
        put(
            "plots/levels_accuracy.svg".into(),
            levels_svg(&out, "levels.csv", "test_acc", "test accuracy by level")?,
        )?;
        put(
            "plots/levels_sparsity.svg".into(),
            levels_svg(&out, "levels.csv", "sparsity", "sparsity by level")?,
        )?;
    }
    let interp: Vec<String> = manifest
        .paths_with_prefix("interp/")
        .filter(|p| p.ends_with(".csv") && !p.ends_with("barriers.csv"))
        .map(str::to_string)
        .collect();
    for p in interp {
        let (h, rows) = read_csv(&out.path(&p))?;
        let a = numeric(&rows, column(&h, "alpha").expect("alpha column"), &p)?;
        let l = numeric(&rows, column(&h, "loss").expect("loss column"), &p)?;
        put(format!("plots/interp_{}.svg", stem(&p)), interpolation_svg(&a, &l, stem(&p)))?;
    }
    let radius: Vec<String> = manifest
        .paths_with_prefix("radius/")
        .filter(|p| p.ends_with(".csv"))
        .map(str::to_string)
        .collect();
    for p in radius {
        let (h, rows) = read_csv(&out.path(&p))?;
        let (rc, cc) = (
            column(&h, "radius").expect("radius column"),
            column(&h, "censored").expect("censored column"),
        );
        let mut found = Vec::new();
        let mut censored = 0;
        for r in &rows {
            if r[cc] == "1" {
                censored += 1;
            } else {
                found.push(parse_f64(&r[rc], &p)?);
            }
        }
        put(
            format!("plots/radius_{}.svg", stem(&p)),
            histogram_svg(&found, censored, stem(&p)),
        )?;
    }
    if manifest.contains("surface/grid.csv") {
        put("plots/surface.svg".into(), surface_svg(&out)?)?;
    }
    Ok(written)
}
