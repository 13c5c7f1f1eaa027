//! Tables, CSV files and SVG figures built from metric results.

use std::fmt::Write as _;

use thiserror::Error;

use crate::metrics::{
    ConfidenceReport, EvaluationGroups, Group, MetricsError, OscrCurve, OscrPoint,
};
use crate::scores::ScoreTable;

/// FPR columns of the CCR table.
pub const FPR_TARGETS: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{name} line {line}: {message}")]
    Parse {
        name: &'static str,
        line: usize,
        message: String,
    },
    #[error("histogram value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("nothing to plot")]
    NoSeries,
}

fn parse_err(name: &'static str, line: usize, message: impl Into<String>) -> ReportError {
    ReportError::Parse {
        name,
        line,
        message: message.into(),
    }
}

/// Reads the `theta,fpr,ccr` file written by [`OscrCurve::write_csv`].
pub fn parse_oscr_csv(text: &str) -> Result<OscrCurve, ReportError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, "theta,fpr,ccr")) => {}
        Some((i, _)) => return Err(parse_err("oscr", i + 1, "expected header theta,fpr,ccr")),
        None => return Err(parse_err("oscr", 1, "empty file")),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err("oscr", i + 1, e.to_string()))?;
        let [theta, fpr, ccr] = vals[..] else {
            return Err(parse_err("oscr", i + 1, "expected three values"));
        };
        points.push(OscrPoint { theta, fpr, ccr });
    }
    Ok(OscrCurve { points })
}

/// Confidence CSV; the best epoch, if given, follows as a comment line.
pub fn confidence_csv(reports: &[ConfidenceReport], best: Option<u64>) -> String {
    let mut out = String::from("epoch,gamma_plus,gamma_minus,gamma\n");
    for r in reports {
        let epoch = r.epoch.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{epoch},{:.16e},{:.16e},{:.16e}",
            r.gamma_plus, r.gamma_minus, r.gamma
        );
    }
    if let Some(b) = best {
        let _ = writeln!(out, "# best epoch={b}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceRow {
    pub epoch: u64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub gamma: f64,
}

pub fn parse_confidence_csv(text: &str) -> Result<Vec<ConfidenceRow>, ReportError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, "epoch,gamma_plus,gamma_minus,gamma")) => {}
        Some((i, _)) => {
            return Err(parse_err(
                "confidence",
                i + 1,
                "expected header epoch,gamma_plus,gamma_minus,gamma",
            ))
        }
        None => return Err(parse_err("confidence", 1, "empty file")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [epoch, plus, minus, gamma] = fields[..] else {
            return Err(parse_err("confidence", i + 1, "expected four fields"));
        };
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| parse_err("confidence", i + 1, e.to_string()))
        };
        rows.push(ConfidenceRow {
            epoch: epoch
                .trim()
                .parse()
                .map_err(|_| parse_err("confidence", i + 1, format!("bad epoch {epoch:?}")))?,
            gamma_plus: num(plus)?,
            gamma_minus: num(minus)?,
            gamma: num(gamma)?,
        });
    }
    Ok(rows)
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub label: String,
    pub epoch: Option<u64>,
    pub gamma_plus: Option<f64>,
    pub gamma_minus: Option<f64>,
    /// CCR at each of [`FPR_TARGETS`]; `None` prints as `---`.
    pub ccr: Vec<Option<f64>>,
}

/// Fixed-width table: label, epoch, confidences, then CCR at each FPR.
pub fn results_table(rows: &[ResultRow]) -> String {
    let cell = |v: Option<f64>| v.map_or("---".to_string(), |x| format!("{x:.3}"));
    let width = rows
        .iter()
        .map(|r| r.label.chars().count())
        .chain([6])
        .max()
        .unwrap_or(6);
    let mut out = format!(
        "{:<width$}  {:>5}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}\n",
        "method", "epoch", "gamma+", "gamma-", "1e-3", "1e-2", "1e-1", "1"
    );
    for r in rows {
        let epoch = r.epoch.map_or("-".to_string(), |e| e.to_string());
        let _ = write!(
            out,
            "{:<width$}  {:>5}  {:>6}  {:>6}",
            r.label,
            epoch,
            cell(r.gamma_plus),
            cell(r.gamma_minus)
        );
        for v in &r.ccr {
            let _ = write!(out, "  {:>6}", cell(*v));
        }
        out.push('\n');
    }
    out
}

/// Counts over `bins` uniform bins on [0, 1]; 1.0 lands in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<usize>, ReportError> {
    if bins == 0 {
        return Err(ReportError::NoBins);
    }
    let mut counts = vec![0; bins];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(ReportError::OutOfRange(v));
        }
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(counts)
}

/// Histograms of the true-class probability of knowns and of the maximum
/// known-class probability of the selected group.
pub fn score_histograms(
    table: &ScoreTable,
    group: Group,
    bins: usize,
) -> Result<(Vec<usize>, Vec<usize>), ReportError> {
    let g = EvaluationGroups::from_table(table, group)?;
    let known: Vec<f64> = g.known.iter().map(|k| k.score).collect();
    Ok((histogram(&known, bins)?, histogram(&g.rejected, bins)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisScale {
    #[default]
    Log,
    Linear,
}

impl std::str::FromStr for AxisScale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(AxisScale::Log),
            "linear" => Ok(AxisScale::Linear),
            other => Err(format!("unknown scale {other:?} (expected log or linear)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Points drawn with a circle marker, in data coordinates.
    pub markers: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: AxisScale,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

impl Chart {
    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        let t = match self.x_scale {
            AxisScale::Linear => (x - lo) / (hi - lo),
            AxisScale::Log => (x.log10() - lo.log10()) / (hi.log10() - lo.log10()),
        };
        LEFT + t * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        HEIGHT - BOTTOM - (y - lo) / (hi - lo) * (HEIGHT - TOP - BOTTOM)
    }

    fn x_ticks(&self) -> Vec<(f64, String)> {
        let (lo, hi) = self.x_range;
        match self.x_scale {
            AxisScale::Log => {
                let first = lo.log10().ceil() as i32;
                let last = hi.log10().floor() as i32;
                (first..=last)
                    .map(|e| (10f64.powi(e), format!("1e{e}")))
                    .collect()
            }
            AxisScale::Linear => (0..=5)
                .map(|i| {
                    let v = lo + (hi - lo) * i as f64 / 5.0;
                    (v, trim_number(v))
                })
                .collect(),
        }
    }

    /// Renders the chart; one `<path>` per series.
    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<g class="axes" stroke="black" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
        );
        let _ = writeln!(s, r#"<g class="ticks">"#);
        for (v, label) in self.x_ticks() {
            let x = self.px(v);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                y0 + 5.0,
                y0 + 18.0
            );
        }
        for i in 0..=5 {
            let v = self.y_range.0 + (self.y_range.1 - self.y_range.0) * i as f64 / 5.0;
            let y = self.py(v);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                y + 4.0,
                trim_number(v)
            );
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 18.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut d = String::new();
            for (j, (x, y)) in series.points.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2},{:.2}",
                    if j == 0 { "M" } else { " L" },
                    self.px(*x),
                    self.py(*y)
                );
            }
            let _ = writeln!(
                s,
                r#"<path class="series" d="{d}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></path>"#,
                escape(&series.label)
            );
            for (x, y) in &series.markers {
                let _ = writeln!(
                    s,
                    r#"<circle class="clipped" cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{color}"/>"#,
                    self.px(*x),
                    self.py(*y)
                );
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                x1 + 12.0,
                x1 + 32.0,
                x1 + 38.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// OSCR chart. On a log axis, points with FPR 0 are drawn at the left edge
/// of the axis and marked with a circle.
pub fn oscr_chart(
    curves: &[(String, OscrCurve)],
    scale: AxisScale,
    title: &str,
) -> Result<Chart, ReportError> {
    if curves.is_empty() {
        return Err(ReportError::NoSeries);
    }
    let x_min = match scale {
        AxisScale::Linear => 0.0,
        AxisScale::Log => {
            let smallest = curves
                .iter()
                .flat_map(|(_, c)| c.points.iter().map(|p| p.fpr))
                .filter(|f| *f > 0.0)
                .fold(f64::INFINITY, f64::min);
            if smallest.is_finite() {
                10f64.powf(smallest.log10().floor()).min(0.1)
            } else {
                1e-4
            }
        }
    };
    let series = curves
        .iter()
        .map(|(label, curve)| {
            let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.ccr)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut markers = Vec::new();
            if scale == AxisScale::Log {
                for p in pts.iter_mut().filter(|p| p.0 < x_min) {
                    p.0 = x_min;
                    markers.push(*p);
                }
            }
            Series {
                label: label.clone(),
                points: pts,
                markers,
            }
        })
        .collect();
    Ok(Chart {
        title: title.to_string(),
        x_label: "False Positive Rate".into(),
        y_label: "Correct Classification Rate".into(),
        x_scale: scale,
        x_range: (x_min, 1.0),
        y_range: (0.0, 1.0),
        series,
    })
}

/// Which column of a confidence file to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceMetric {
    GammaPlus,
    GammaMinus,
    #[default]
    Gamma,
}

impl ConfidenceMetric {
    fn pick(self, r: &ConfidenceRow) -> f64 {
        match self {
            ConfidenceMetric::GammaPlus => r.gamma_plus,
            ConfidenceMetric::GammaMinus => r.gamma_minus,
            ConfidenceMetric::Gamma => r.gamma,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ConfidenceMetric::GammaPlus => "gamma+",
            ConfidenceMetric::GammaMinus => "gamma-",
            ConfidenceMetric::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for ConfidenceMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gamma-plus" => Ok(ConfidenceMetric::GammaPlus),
            "gamma-minus" => Ok(ConfidenceMetric::GammaMinus),
            "gamma" => Ok(ConfidenceMetric::Gamma),
            other => Err(format!(
                "unknown metric {other:?} (expected gamma, gamma-plus or gamma-minus)"
            )),
        }
    }
}

pub fn confidence_chart(
    inputs: &[(String, Vec<ConfidenceRow>)],
    metric: ConfidenceMetric,
    title: &str,
) -> Result<Chart, ReportError> {
    if inputs.is_empty() {
        return Err(ReportError::NoSeries);
    }
    let epochs = inputs
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.epoch as f64));
    let (lo, hi) = epochs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
        (lo.min(e), hi.max(e))
    });
    let (lo, hi) = if lo.is_finite() {
        (lo, hi.max(lo + 1.0))
    } else {
        (0.0, 1.0)
    };
    let series = inputs
        .iter()
        .map(|(label, rows)| {
            let mut points: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| (r.epoch as f64, metric.pick(r)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: label.clone(),
                points,
                markers: Vec::new(),
            }
        })
        .collect();
    Ok(Chart {
        title: title.to_string(),
        x_label: "Epoch".into(),
        y_label: metric.name().into(),
        x_scale: AxisScale::Linear,
        x_range: (lo, hi),
        y_range: (0.0, 1.0),
        series,
    })
}

/// Histogram chart drawn as step outlines of per-bin fractions.
pub fn histogram_chart(inputs: &[(String, Vec<usize>)], title: &str) -> Result<Chart, ReportError> {
    if inputs.is_empty() {
        return Err(ReportError::NoSeries);
    }
    let mut y_max: f64 = 0.0;
    let series: Vec<Series> = inputs
        .iter()
        .map(|(label, counts)| {
            let total = counts.iter().sum::<usize>().max(1) as f64;
            let bins = counts.len() as f64;
            let mut points = Vec::with_capacity(2 * counts.len() + 2);
            points.push((0.0, 0.0));
            for (i, c) in counts.iter().enumerate() {
                let f = *c as f64 / total;
                y_max = y_max.max(f);
                points.push((i as f64 / bins, f));
                points.push(((i + 1) as f64 / bins, f));
            }
            points.push((1.0, 0.0));
            Series {
                label: label.clone(),
                points,
                markers: Vec::new(),
            }
        })
        .collect();
    Ok(Chart {
        title: title.to_string(),
        x_label: "Score".into(),
        y_label: "Fraction of samples".into(),
        x_scale: AxisScale::Linear,
        x_range: (0.0, 1.0),
        y_range: (0.0, if y_max > 0.0 { y_max } else { 1.0 }),
        series,
    })
}
