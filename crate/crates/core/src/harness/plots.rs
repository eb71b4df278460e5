use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Error;

use super::run::{LogRow, RunLog};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// One labelled run to draw.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub rows: Vec<LogRow>,
}

impl From<&RunLog> for PlotSeries {
    fn from(log: &RunLog) -> Self {
        Self {
            label: format!("{} seed {}", log.method.label(), log.seed),
            rows: log.rows.clone(),
        }
    }
}

/// Paths written by [`emit_plots`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub error_svg: PathBuf,
    pub error_csv: PathBuf,
    pub trajectory_svg: PathBuf,
    pub trajectory_csv: PathBuf,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            f = Frame {
                x0: 0.0,
                x1: 1.0,
                y0: 0.0,
                y1: 1.0,
            };
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = *hi - *lo;
            let p = if span > 0.0 {
                0.05 * span
            } else {
                0.5 * lo.abs().max(1e-3)
            };
            *lo -= p;
            *hi += p;
        };
        pad(&mut f.x0, &mut f.x1);
        pad(&mut f.y0, &mut f.y1);
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for (v, x) in [(f.x0, l), (f.x1, r)] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#,
            b + 16.0
        );
    }
    for (v, y) in [(f.y0, b), (f.y1, t)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{v:.4}</text>"#,
            l - 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    s
}

fn polyline(s: &mut String, f: &Frame, pts: impl Iterator<Item = (f64, f64)>, color: &str, dash: bool) {
    let coords: Vec<String> = pts
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    if coords.is_empty() {
        return;
    }
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.4"{} points="{}"/>"#,
        if dash { r#" stroke-dasharray="5,4""# } else { "" },
        coords.join(" ")
    );
}

fn legend(s: &mut String, entries: &[(String, &str, bool)]) {
    for (i, (label, color, dash)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN - 190.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"{}/>"#,
            y - 4.0,
            x + 20.0,
            y - 4.0,
            if *dash { r#" stroke-dasharray="5,4""# } else { "" }
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, x + 26.0, escape(label));
    }
}

/// Error curve `e(t)` of every series in one figure.
pub fn error_curve_svg(series: &[PlotSeries]) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.rows.iter().map(|r| (r.t, r.error))));
    let mut s = svg_open("Position error", "t [s]", "e(t) [m]", &f);
    let mut entries = Vec::new();
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut s, &f, ser.rows.iter().map(|r| (r.t, r.error)), color, false);
        entries.push((ser.label.clone(), color, false));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// x–z trajectories of every series over the (dashed) reference of the first.
pub fn trajectory_svg(series: &[PlotSeries]) -> String {
    let pts = series
        .iter()
        .flat_map(|s| s.rows.iter().flat_map(|r| [(r.state.x, r.state.z), (r.x_ref, r.z_ref)]));
    let f = Frame::fit(pts);
    let mut s = svg_open("Trajectory", "x [m]", "z [m]", &f);
    let mut entries = Vec::new();
    if let Some(first) = series.first() {
        polyline(&mut s, &f, first.rows.iter().map(|r| (r.x_ref, r.z_ref)), "black", true);
        entries.push(("reference".to_string(), "black", true));
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(
            &mut s,
            &f,
            ser.rows.iter().map(|r| (r.state.x, r.state.z)),
            color,
            false,
        );
        entries.push((ser.label.clone(), color, false));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

pub fn error_curve_csv(series: &[PlotSeries]) -> String {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["label", "step", "t", "error"])
        .expect("in-memory write");
    for s in series {
        for r in &s.rows {
            out.write_record([
                s.label.clone(),
                r.step.to_string(),
                r.t.to_string(),
                r.error.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(out.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn trajectory_csv(series: &[PlotSeries]) -> String {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["label", "t", "x", "z", "x_ref", "z_ref"])
        .expect("in-memory write");
    for s in series {
        for r in &s.rows {
            out.write_record([
                s.label.clone(),
                r.t.to_string(),
                r.state.x.to_string(),
                r.state.z.to_string(),
                r.x_ref.to_string(),
                r.z_ref.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(out.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>_error.svg`, `<stem>_trajectory.svg` and the CSV behind
/// each into `dir`.
pub fn emit_plots(series: &[PlotSeries], dir: impl AsRef<Path>, stem: &str) -> Result<PlotFiles, Error> {
    if series.is_empty() {
        return Err(Error::Other("nothing to plot: no run logs given".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = PlotFiles {
        error_svg: dir.join(format!("{stem}_error.svg")),
        error_csv: dir.join(format!("{stem}_error.csv")),
        trajectory_svg: dir.join(format!("{stem}_trajectory.svg")),
        trajectory_csv: dir.join(format!("{stem}_trajectory.csv")),
    };
    write(&files.error_svg, &error_curve_svg(series))?;
    write(&files.error_csv, &error_curve_csv(series))?;
    write(&files.trajectory_svg, &trajectory_svg(series))?;
    write(&files.trajectory_csv, &trajectory_csv(series))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_once, ExperimentConfig};

    fn short_log() -> RunLog {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.duration = 0.4;
        run_once(&cfg, 3)
    }

    #[test]
    fn one_log_gives_one_figure_of_each_kind() {
        let dir = tempfile::tempdir().unwrap();
        let log = short_log();
        let files = emit_plots(&[PlotSeries::from(&log)], dir.path(), "run").unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(
            names,
            [
                "run_error.csv",
                "run_error.svg",
                "run_trajectory.csv",
                "run_trajectory.svg"
            ]
        );
        assert!(std::fs::read_to_string(files.error_svg).unwrap().starts_with("<svg"));
    }

    #[test]
    fn error_csv_reproduces_the_error_column() {
        let log = short_log();
        let csv = error_curve_csv(&[PlotSeries::from(&log)]);
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let ys: Vec<f64> = reader.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
        let expected: Vec<f64> = log.errors().collect();
        assert_eq!(ys, expected);
    }

    #[test]
    fn output_is_deterministic() {
        let a = [PlotSeries::from(&short_log())];
        let b = [PlotSeries::from(&short_log())];
        assert_eq!(error_curve_svg(&a), error_curve_svg(&b));
        assert_eq!(trajectory_svg(&a), trajectory_svg(&b));
    }

    #[test]
    fn empty_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plots(&[], dir.path(), "x").is_err());
    }
}
