//! Static SVG rendering of learning curves.
//!
//! Output is plain text assembled with fixed-precision coordinates, so a
//! given set of input files always renders to identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::harness::{moving_average, read_curves, HarnessError};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 780.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 440.0;
const TICKS: usize = 5;

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#c4442a", "#2e8540", "#8a4fbe", "#b0791a", "#3aa6a6", "#c23b80", "#6b6b6b",
];

struct Series {
    label: String,
    /// (episode, smoothed mean cumulative reward), episode-sorted.
    points: Vec<(f64, f64)>,
}

fn load_series(path: &Path, window: usize) -> Result<Series, HarnessError> {
    use std::collections::BTreeMap;
    let records = read_curves(path)?;
    let mut by_episode: BTreeMap<u32, (f64, u32)> = BTreeMap::new();
    for r in &records {
        let e = by_episode.entry(r.episode).or_insert((0.0, 0));
        e.0 += r.cum_reward;
        e.1 += 1;
    }
    let episodes: Vec<f64> = by_episode.keys().map(|&e| e as f64).collect();
    let means: Vec<f64> = by_episode.values().map(|(s, n)| s / *n as f64).collect();
    let smoothed = moving_average(&means, window);
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(Series { label, points: episodes.into_iter().zip(smoothed).collect() })
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one smoothed line per input file into an SVG at `output`.
/// Lines are labeled by file stem. Byte output is a pure function of the
/// input contents.
pub fn plot_emit(inputs: &[PathBuf], output: &Path, window: usize) -> Result<(), HarnessError> {
    assert!(!inputs.is_empty(), "plot needs at least one curve file");
    assert!(window >= 1, "window must be at least 1");
    let series: Vec<Series> =
        inputs.iter().map(|p| load_series(p, window)).collect::<Result<_, _>>()?;
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
    }
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in ys {
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    // Degenerate ranges (single episode, constant reward) still render.
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    let to_x = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (RIGHT - LEFT);
    let to_y = |y: f64| BOTTOM - (y - y_min) / (y_max - y_min) * (BOTTOM - TOP);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = x_min + f * (x_max - x_min);
        let xp = to_x(xv);
        svg.push_str(&format!(
            "<line x1=\"{xp:.2}\" y1=\"{BOTTOM}\" x2=\"{xp:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            BOTTOM + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{xp:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{xv:.0}</text>\n",
            BOTTOM + 20.0
        ));
        let yv = y_min + f * (y_max - y_min);
        let yp = to_y(yv);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{LEFT}\" y2=\"{yp:.2}\" stroke=\"black\"/>\n",
            LEFT - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{yv:.1}</text>\n",
            LEFT - 8.0,
            yp + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">episode</text>\n",
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 40.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.2})\">cumulative reward (window {window})</text>\n",
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    ));
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", to_x(x), to_y(y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        // Legend entry.
        let ly = TOP + 16.0 * idx as f64 + 8.0;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"3\"/>\n",
            RIGHT - 180.0,
            RIGHT - 150.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            RIGHT - 144.0,
            ly + 4.0,
            esc(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    if let Some(parent) = output.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| HarnessError::Io { path: output.into(), source: e })?;
    }
    fs::write(output, svg.as_bytes())
        .map_err(|e| HarnessError::Io { path: output.into(), source: e })
}
