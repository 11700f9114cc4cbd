use std::fmt::Write as _;
use std::path::Path;

use super::{write_file, SweepResult, SweepRow};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: &str = "model,trials,seeds,fidelity_mean,fidelity_min,fidelity_max,\
unknown_mean,latency_mean_ns,fidelity_change,latency_change";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
type Band<'a> = &'a dyn Fn(&SweepRow) -> (f64, f64);

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn sweep_csv(r: &SweepResult) -> String {
    let mut out = String::from(CSV_COLUMNS);
    out.push('\n');
    for row in &r.rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.1},{},{}",
            row.model,
            row.trials,
            row.seeds,
            row.fidelity_mean,
            row.fidelity_min,
            row.fidelity_max,
            row.unknown_mean,
            row.latency_mean_ns,
            opt(row.fidelity_change),
            opt(row.latency_change)
        )
        .expect("writing to a String");
    }
    out
}

/// Rows grouped per model, in first-appearance order.
fn series(r: &SweepResult) -> Vec<(&str, Vec<&SweepRow>)> {
    let mut out: Vec<(&str, Vec<&SweepRow>)> = Vec::new();
    for row in &r.rows {
        match out.iter_mut().find(|(m, _)| *m == row.model) {
            Some((_, rows)) => rows.push(row),
            None => out.push((&row.model, vec![row])),
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Plot frame with a `log2(1 + trials)` x axis.
struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, trials: u32) -> f64 {
        let t = (1.0 + trials as f64).log2();
        LEFT + (WIDTH - LEFT - RIGHT)
            * if self.x_max > 0.0 {
                t / self.x_max
            } else {
                0.0
            }
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT
            - BOTTOM
            - (HEIGHT - TOP - BOTTOM)
                * if self.y_max > 0.0 {
                    v / self.y_max
                } else {
                    0.0
                }
    }
}

fn svg_plot(
    r: &SweepResult,
    title: &str,
    y_label: &str,
    y_max: f64,
    value: impl Fn(&SweepRow) -> f64,
    band: Option<Band>,
) -> String {
    let groups = series(r);
    let mut grid: Vec<u32> = r.rows.iter().map(|row| row.trials).collect();
    grid.sort_unstable();
    grid.dedup();
    let f = Frame {
        x_max: (1.0 + *grid.last().unwrap_or(&0) as f64).log2(),
        y_max,
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    )
    .unwrap();
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    )
    .unwrap();
    for &t in &grid {
        let x = f.x(t);
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            y0 + 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{t}</text>"#,
            y0 + 16.0
        )
        .unwrap();
    }
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = f.y(v);
        writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            tick(v)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">trials</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .unwrap();

    for (i, (model, rows)) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = band {
            let upper = rows
                .iter()
                .map(|row| format!("{:.2},{:.2}", f.x(row.trials), f.y(band(row).1)));
            let lower = rows
                .iter()
                .rev()
                .map(|row| format!("{:.2},{:.2}", f.x(row.trials), f.y(band(row).0)));
            let pts: Vec<String> = upper.chain(lower).collect();
            writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                pts.join(" ")
            )
            .unwrap();
        }
        let pts: Vec<String> = rows
            .iter()
            .map(|row| format!("{:.2},{:.2}", f.x(row.trials), f.y(value(row))))
            .collect();
        writeln!(
            s,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = TOP + 14.0 + 16.0 * i as f64;
        writeln!(
            s,
            r#"<rect x="{}" y="{:.2}" width="12" height="3" fill="{color}"/>"#,
            x1 + 12.0,
            ly - 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{ly:.2}">{}</text>"#,
            x1 + 30.0,
            escape(model)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v >= 1e3 {
        format!("{:.0}", v)
    } else {
        format!("{:.2}", v)
    }
}

/// Mean fidelity against trials, one line per model with a min/max band.
pub fn fidelity_svg(r: &SweepResult) -> String {
    svg_plot(
        r,
        "Attack fidelity over tuning trials",
        "fidelity",
        1.0,
        |row| row.fidelity_mean,
        Some(&|row: &SweepRow| (row.fidelity_min, row.fidelity_max)),
    )
}

/// Mean total simulated latency (microseconds) against trials.
pub fn latency_svg(r: &SweepResult) -> String {
    let max = r
        .rows
        .iter()
        .map(|row| row.latency_mean_ns / 1e3)
        .fold(0.0, f64::max);
    let y_max = if max > 0.0 { nice_ceiling(max) } else { 1.0 };
    svg_plot(
        r,
        "Inference latency over tuning trials",
        "latency (us)",
        y_max,
        |row| row.latency_mean_ns / 1e3,
        None,
    )
}

/// Smallest of 1, 2, 5 times a power of ten that is at least `v`.
fn nice_ceiling(v: f64) -> f64 {
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * p)
        .find(|c| *c >= v)
        .unwrap_or(10.0 * p)
}

/// Writes `sweep.csv`, `fidelity_vs_trials.svg` and `latency_vs_trials.svg`.
pub fn report(r: &SweepResult, out: &Path) -> Result<()> {
    if r.rows.is_empty() {
        return Err(Error::Config("nothing to report: sweep has no rows".into()));
    }
    write_file(&out.join("sweep.csv"), sweep_csv(r).as_bytes())?;
    write_file(
        &out.join("fidelity_vs_trials.svg"),
        fidelity_svg(r).as_bytes(),
    )?;
    write_file(
        &out.join("latency_vs_trials.svg"),
        latency_svg(r).as_bytes(),
    )
}
