//! Metrics aggregation and charting.
//!
//! Runs write one CSV apiece; the report reads any number of them, groups
//! rows by run label (the run id with its `-s<seed>` suffix stripped) and
//! task, and emits a summary table plus an SVG learning-curve chart. The
//! summary reports, per group and task, the final win rate across seeds and
//! the area under the win-rate-versus-env-steps curve, both raw (trapezoidal,
//! in win-rate times env-steps units) and normalized by the evaluated step
//! range so curves of different lengths compare on a common [0, 1] scale.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::trainer::MetricsRow;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },
    #[error("no rows to report")]
    Empty,
}

/// Parse one metrics CSV. Row numbers in errors are 1-based file lines.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let fail = |row: usize, msg: String| ReportError::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fail(1, "empty file".to_string()))?;
    if header != MetricsRow::CSV_HEADER {
        return Err(fail(1, format!("unexpected header '{header}'")));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(fail(row, format!("expected 12 fields, got {}", fields.len())));
        }
        let int = |i: usize, name: &str| -> Result<usize, ReportError> {
            fields[i]
                .parse()
                .map_err(|_| fail(row, format!("bad {name} '{}'", fields[i])))
        };
        let float = |i: usize, name: &str| -> Result<f32, ReportError> {
            fields[i]
                .parse()
                .map_err(|_| fail(row, format!("bad {name} '{}'", fields[i])))
        };
        rows.push(MetricsRow {
            run_id: fields[0].to_string(),
            mode: fields[1].to_string(),
            arch: fields[2].to_string(),
            mixer: fields[3].to_string(),
            task: fields[4].to_string(),
            env_steps: int(5, "env_steps")?,
            train_steps: int(6, "train_steps")?,
            eval_win_rate: float(7, "eval_win_rate")?,
            eval_return: float(8, "eval_return")?,
            loss: float(9, "loss")?,
            omega: float(10, "omega")?,
            epsilon: float(11, "epsilon")?,
        });
    }
    Ok(rows)
}

/// Drop a trailing `-s<digits>` seed suffix, leaving the group label.
pub fn strip_seed(run_id: &str) -> &str {
    if let Some(pos) = run_id.rfind("-s") {
        let suffix = &run_id[pos + 2..];
        if !suffix.is_empty() && suffix.bytes().all(|b| b.is_ascii_digit()) {
            return &run_id[..pos];
        }
    }
    run_id
}

/// One run's evaluation points for one task, in env-step order.
#[derive(Debug)]
struct Series {
    points: Vec<(usize, f32)>,
}

impl Series {
    /// Trapezoidal area under the curve from the first to the last
    /// evaluation point, in win-rate times env-steps units.
    fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 as f64 + w[1].1 as f64) / 2.0)
            .sum()
    }

    fn step_range(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        (self.points.last().unwrap().0 - self.points[0].0) as f64
    }

    /// Area divided by the step range, a [0, 1] score; a single-point series
    /// degenerates to that point's win rate.
    fn auc_normalized(&self) -> f64 {
        let range = self.step_range();
        if range == 0.0 {
            return self.points.last().map_or(0.0, |p| p.1 as f64);
        }
        self.auc() / range
    }

    fn final_win_rate(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1 as f64)
    }
}

fn series_by_run(rows: &[MetricsRow]) -> BTreeMap<(String, String), Series> {
    let mut map: BTreeMap<(String, String), Series> = BTreeMap::new();
    for row in rows {
        map.entry((row.run_id.clone(), row.task.clone()))
            .or_insert_with(|| Series { points: Vec::new() })
            .points
            .push((row.env_steps, row.eval_win_rate));
    }
    for series in map.values_mut() {
        series.points.sort_by_key(|p| p.0);
    }
    map
}

/// Aggregated outcomes for one (group label, task) pair across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub task: String,
    pub runs: usize,
    pub final_win_rate_mean: f64,
    pub final_win_rate_min: f64,
    pub final_win_rate_max: f64,
    pub auc_mean: f64,
    pub auc_normalized_mean: f64,
}

pub const SUMMARY_HEADER: &str = "group,task,runs,final_win_rate_mean,final_win_rate_min,final_win_rate_max,auc,auc_normalized";

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let runs = series_by_run(rows);
    let mut groups: BTreeMap<(String, String), Vec<&Series>> = BTreeMap::new();
    for ((run_id, task), series) in &runs {
        groups
            .entry((strip_seed(run_id).to_string(), task.clone()))
            .or_default()
            .push(series);
    }
    groups
        .into_iter()
        .map(|((group, task), members)| {
            let finals: Vec<f64> = members.iter().map(|s| s.final_win_rate()).collect();
            let n = members.len() as f64;
            SummaryRow {
                group,
                task,
                runs: members.len(),
                final_win_rate_mean: finals.iter().sum::<f64>() / n,
                final_win_rate_min: finals.iter().cloned().fold(f64::INFINITY, f64::min),
                final_win_rate_max: finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                auc_mean: members.iter().map(|s| s.auc()).sum::<f64>() / n,
                auc_normalized_mean: members.iter().map(|s| s.auc_normalized()).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.group,
            r.task,
            r.runs,
            r.final_win_rate_mean,
            r.final_win_rate_min,
            r.final_win_rate_max,
            r.auc_mean,
            r.auc_normalized_mean
        ));
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const CHART_W: f64 = 800.0;
const CHART_H: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 50.0;

/// Render win rate against env steps, one polyline per run and task, colored
/// by group so seeds of the same setting share a color.
pub fn render_chart(rows: &[MetricsRow]) -> Result<String, ReportError> {
    let runs = series_by_run(rows);
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let max_x = runs
        .values()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .max()
        .unwrap()
        .max(1) as f64;

    let groups: Vec<String> = {
        let mut seen = Vec::new();
        for ((run_id, task), _) in &runs {
            let key = format!("{} / {}", strip_seed(run_id), task);
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen
    };
    let color_of = |run_id: &str, task: &str| -> &str {
        let key = format!("{} / {}", strip_seed(run_id), task);
        let idx = groups.iter().position(|g| g == &key).unwrap();
        PALETTE[idx % PALETTE.len()]
    };

    let plot_w = CHART_W - MARGIN_L - MARGIN_R;
    let plot_h = CHART_H - MARGIN_T - MARGIN_B;
    let x_of = |steps: usize| MARGIN_L + steps as f64 / max_x * plot_w;
    let y_of = |rate: f32| MARGIN_T + (1.0 - rate as f64) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {CHART_W} {CHART_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>\n"
    ));

    // Axes with a light quartile grid.
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let y = MARGIN_T + plot_h * (1.0 - frac);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y}\" x2=\"{:.1}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n",
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.2}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0,
            frac
        ));
        let x = MARGIN_L + plot_w * frac;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h + 18.0,
            (max_x * frac).round() as u64
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">env steps</text>\n",
        MARGIN_L + plot_w / 2.0,
        CHART_H - 8.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" transform=\"rotate(-90 16 {:.1})\" text-anchor=\"middle\">win rate</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    for ((run_id, task), series) in &runs {
        let pts: String = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", x_of(x), y_of(y)))
            .collect::<Vec<_>>()
            .join(" ");
        svg.push_str(&format!(
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" opacity=\"0.8\"/>\n",
            color_of(run_id, task)
        ));
    }

    for (i, group) in groups.iter().enumerate().take(12) {
        let y = MARGIN_T + 16.0 + i as f64 * 16.0;
        let x = MARGIN_L + 10.0;
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"4\" fill=\"{}\"/>\n",
            y - 4.0,
            PALETTE[i % PALETTE.len()]
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\">{group}</text>\n",
            x + 18.0
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Read every CSV, then write `summary.csv` and `winrate.svg` into `out_dir`.
pub fn write_report(csv_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<SummaryRow>, ReportError> {
    let mut rows = Vec::new();
    for path in csv_paths {
        rows.extend(read_metrics(path)?);
    }
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let summary = summarize(&rows);
    let io_err = |source: std::io::Error| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(io_err)?;
    std::fs::write(out_dir.join("summary.csv"), summary_csv(&summary)).map_err(io_err)?;
    std::fs::write(out_dir.join("winrate.svg"), render_chart(&rows)?).map_err(io_err)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run_id: &str, task: &str, env_steps: usize, win: f32) -> MetricsRow {
        MetricsRow {
            run_id: run_id.to_string(),
            mode: "scratch".to_string(),
            arch: "apn".to_string(),
            mixer: "vdn".to_string(),
            task: task.to_string(),
            env_steps,
            train_steps: env_steps / 30,
            eval_win_rate: win,
            eval_return: win * 10.0 - 0.3,
            loss: if env_steps == 0 { f32::NAN } else { 0.5 },
            omega: 1.0,
            epsilon: 0.05,
        }
    }

    fn to_csv(rows: &[MetricsRow]) -> String {
        let mut text = String::from(MetricsRow::CSV_HEADER);
        text.push('\n');
        for r in rows {
            text.push_str(&r.csv_line());
            text.push('\n');
        }
        text
    }

    #[test]
    fn csv_round_trips_including_nan_loss() {
        let rows = vec![row("a-s1", "t", 0, 0.25), row("a-s1", "t", 2000, 0.75)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, to_csv(&rows)).unwrap();
        let parsed = read_metrics(&path).unwrap();
        assert_eq!(parsed.len(), 2);
        assert!(parsed[0].loss.is_nan());
        assert_eq!(parsed[1].eval_win_rate, 0.75);
        assert_eq!(parsed[1].env_steps, 2000);
        assert_eq!(parsed[1].run_id, "a-s1");
    }

    #[test]
    fn parse_errors_carry_the_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut text = to_csv(&[row("a-s1", "t", 100, 0.5)]);
        text.push_str("a-s1,scratch,apn,vdn,t,oops,3,0.5,4.7,0.1,1,0.05\n");
        std::fs::write(&path, text).unwrap();
        let err = read_metrics(&path).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        assert!(err.contains("env_steps"), "{err}");

        std::fs::write(&path, "not,a,header\n").unwrap();
        let err = read_metrics(&path).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn seed_suffixes_are_stripped_conservatively() {
        assert_eq!(strip_seed("scratch-apn-vdn-s12"), "scratch-apn-vdn");
        assert_eq!(strip_seed("x-s007"), "x");
        assert_eq!(strip_seed("x-s1x"), "x-s1x");
        assert_eq!(strip_seed("plain"), "plain");
        assert_eq!(strip_seed("tail-s"), "tail-s");
    }

    #[test]
    fn a_flat_half_curve_integrates_to_half_the_step_range() {
        let rows: Vec<MetricsRow> = (0..=5)
            .map(|i| row("flat-s1", "t", 1000 + i * 2000, 0.5))
            .collect();
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        let s = &summary[0];
        assert_eq!(s.group, "flat");
        assert_eq!(s.runs, 1);
        // 0.5 win rate over a 10000-step range.
        assert!((s.auc_mean - 0.5 * 10_000.0).abs() < 1e-9, "{}", s.auc_mean);
        assert!((s.auc_normalized_mean - 0.5).abs() < 1e-12);
        assert_eq!(s.final_win_rate_mean, 0.5);
    }

    #[test]
    fn seeds_aggregate_within_a_group() {
        let mut rows = Vec::new();
        for (seed, last) in [(1, 0.8f32), (2, 0.6f32)] {
            rows.push(row(&format!("g-s{seed}"), "t", 1000, 0.0));
            rows.push(row(&format!("g-s{seed}"), "t", 2000, last));
        }
        rows.push(row("other-s1", "t", 1000, 1.0));
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 2);
        let g = summary.iter().find(|s| s.group == "g").unwrap();
        assert_eq!(g.runs, 2);
        assert!((g.final_win_rate_mean - 0.7).abs() < 1e-6);
        assert!((g.final_win_rate_min - 0.6).abs() < 1e-6);
        assert!((g.final_win_rate_max - 0.8).abs() < 1e-6);
        // Each seed's normalized area: trapezoid mean of 0 and its final.
        let want = (0.4 + 0.3) / 2.0;
        assert!((g.auc_normalized_mean - want).abs() < 1e-6);
    }

    #[test]
    fn the_chart_draws_one_polyline_per_run_and_task() {
        let rows = vec![
            row("a-s1", "t1", 100, 0.1),
            row("a-s1", "t1", 200, 0.4),
            row("a-s2", "t1", 100, 0.2),
            row("a-s2", "t1", 210, 0.5),
            row("b-s1", "t2", 150, 0.9),
            row("b-s1", "t2", 260, 0.8),
        ];
        let svg = render_chart(&rows).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        // Two groups: both seeds of 'a' share a color, 'b' gets its own.
        assert_eq!(svg.matches(PALETTE[0]).count(), 3);
        assert_eq!(svg.matches(PALETTE[1]).count(), 2);
        assert!(svg.contains("a / t1"));
        assert!(svg.contains("b / t2"));
    }

    #[test]
    fn the_report_writes_summary_and_chart_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, to_csv(&[row("a-s1", "t", 100, 0.2), row("a-s1", "t", 200, 0.6)])).unwrap();
        std::fs::write(&b, to_csv(&[row("b-s1", "t", 100, 0.9)])).unwrap();
        let out = dir.path().join("report");
        let summary = write_report(&[a, b], &out).unwrap();
        assert_eq!(summary.len(), 2);
        let written = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(written.starts_with(SUMMARY_HEADER));
        assert_eq!(written.lines().count(), 3);
        let svg = std::fs::read_to_string(out.join("winrate.svg")).unwrap();
        assert!(svg.contains("</svg>"));
    }
}
