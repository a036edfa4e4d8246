//! Static SVG line charts and PGM heatmaps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::config::Method;
use crate::error::{CliError, Result};
use crate::sweep::ResultRow;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * hi.abs().max(1.0) {
        // A single value still needs a nonzero span.
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LineChart {
    fn x_of(&self, x: f64) -> f64 {
        if self.log_x {
            x.max(f64::MIN_POSITIVE).log10()
        } else {
            x
        }
    }

    pub fn to_svg(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (x0, x1) = bounds(pts().map(|p| self.x_of(p.0)));
        let (y0, y1) = bounds(pts().map(|p| p.1));
        let sx = |x: f64| MARGIN + (self.x_of(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
        let xl = if self.log_x { format!("log10 {}", self.x_label) } else { self.x_label.clone() };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 10.0,
            escape(&xl)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (v, anchor, x, y) in [(x0, "start", l, b + 14.0), (x1, "end", r, b + 14.0)] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#);
        }
        for (v, y) in [(y0, b), (y1, t)] {
            let _ = writeln!(s, r#"<text x="{}" y="{y:.2}" text-anchor="end" font-size="10">{v:.3}</text>"#, l - 4.0);
        }
        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut pts: Vec<_> = series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            pts.sort_by(|p, q| p.0.total_cmp(&q.0));
            if pts.len() > 1 {
                let d: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, d.join(" "));
            }
            for p in &pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(p.0), sy(p.1));
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
                r - 90.0,
                t + 12.0 * k as f64,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// One series per distinct key, in first-appearance order.
fn group<K: PartialEq + Clone>(rows: &[&ResultRow], key: impl Fn(&ResultRow) -> K, name: impl Fn(&K) -> String, point: impl Fn(&ResultRow) -> Option<(f64, f64)>) -> Vec<Series> {
    let mut keys: Vec<K> = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    for row in rows {
        let Some(p) = point(row) else { continue };
        let k = key(row);
        match keys.iter().position(|x| *x == k) {
            Some(i) => series[i].points.push(p),
            None => {
                series.push(Series { name: name(&k), points: vec![p] });
                keys.push(k);
            }
        }
    }
    series
}

/// Charts for a result table: ratio against time for every method, and the coupling gap
/// against the rank (low-rank solvers) and against ε (Sinkhorn).
pub fn charts(rows: &[ResultRow]) -> Result<Vec<(&'static str, LineChart)>> {
    if rows.is_empty() {
        return Err(CliError::EmptyTable);
    }
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.succeeded()).collect();
    let mut out = vec![(
        "ratio_vs_time",
        LineChart {
            title: "Ratio to reference vs time".into(),
            x_label: "seconds".into(),
            y_label: "ratio R".into(),
            log_x: false,
            series: group(&ok, |r| r.method, |m| m.name().to_string(), |r| Some((r.wall_seconds, r.ratio?))),
        },
    )];
    let low_rank: Vec<&ResultRow> = ok.iter().copied().filter(|r| r.method.is_low_rank()).collect();
    if !low_rank.is_empty() {
        out.push((
            "gap_vs_rank",
            LineChart {
                title: "Coupling gap vs rank".into(),
                x_label: "rank r".into(),
                y_label: "l1 to reference".into(),
                log_x: false,
                series: group(
                    &low_rank,
                    |r| (r.method, r.epsilon.to_bits()),
                    |(m, e)| format!("{} eps={}", m.name(), f64::from_bits(*e)),
                    |r| Some((r.rank? as f64, r.l1_to_reference?)),
                ),
            },
        ));
    }
    let sink: Vec<&ResultRow> = ok.iter().copied().filter(|r| r.method == Method::Sinkhorn).collect();
    if !sink.is_empty() {
        out.push((
            "gap_vs_epsilon",
            LineChart {
                title: "Coupling gap vs epsilon".into(),
                x_label: "epsilon".into(),
                y_label: "l1 to reference".into(),
                log_x: true,
                series: group(&sink, |r| r.seed, |s| format!("seed {s}"), |r| Some((r.epsilon, r.l1_to_reference?))),
            },
        ));
    }
    Ok(out)
}

/// Writes `plots/<name>.svg` for every chart of the table.
pub fn emit_plots(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>> {
    let charts = charts(rows)?;
    let pdir = dir.join("plots");
    std::fs::create_dir_all(&pdir)?;
    charts
        .into_iter()
        .map(|(name, chart)| {
            let path = pdir.join(format!("{name}.svg"));
            std::fs::write(&path, chart.to_svg())?;
            Ok(path)
        })
        .collect()
}

/// Plain (ASCII) PGM with darker pixels for larger mass; one pixel per entry.
pub fn heatmap_pgm(m: &Array2<f64>) -> String {
    let max = m.fold(0.0f64, |acc, &v| acc.max(v));
    let mut s = format!("P2\n{} {}\n255\n", m.ncols(), m.nrows());
    for row in m.rows() {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
                format!("{}", 255 - (255.0 * t).round() as u8)
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}
