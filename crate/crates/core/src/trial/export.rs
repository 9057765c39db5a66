//! Result files: one CSV per avatar plus a JSON summary per run.
//!
//! Layout under the output directory:
//!
//! ```text
//! summary.json
//! <scenario>/avatar_0000.csv
//! <scenario>/cgm/avatar_0000.csv      (only when traces are kept)
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fasting::ModelParams;
use crate::trial::metrics::{attainment, DailyCgm, MetricsReport, WindowMetrics};
use crate::trial::run::{metrics_of, AvatarFailure, AvatarRun, DayRecord, ScenarioResult};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_WEEKS: [usize; 3] = [8, 26, 52];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub index: usize,
    pub start_day: usize,
    pub end_day: usize,
    pub tir: Stat,
    pub tbr: Stat,
    pub mean_cgm: Stat,
    pub gmi: Stat,
    pub mean_fbg: Stat,
    pub level2_count: Stat,
    pub total_insulin: Stat,
}

/// Percentage of avatars meeting each target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttainmentRates {
    pub fasting: f64,
    pub hba1c: f64,
    pub cgm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub window: usize,
    pub attainment: AttainmentRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub avatars: usize,
    pub failures: Vec<AvatarFailure>,
    pub windows: Vec<WindowSummary>,
    /// Keyed `week_8`, `week_26`, `week_52` where the run is long enough.
    pub checkpoints: IndexMap<String, Checkpoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenarios: IndexMap<String, ScenarioSummary>,
}

/// Aggregate per-avatar metric reports; all reports must cover the same windows.
pub fn summarize(reports: &[&MetricsReport], failures: Vec<AvatarFailure>) -> Result<ScenarioSummary> {
    let first = reports.first().ok_or_else(|| Error::invalid("no completed avatar runs to summarize"))?;
    let n_windows = first.windows.len();
    if reports.iter().any(|r| r.windows.len() != n_windows) {
        return Err(Error::invalid("avatar runs differ in length"));
    }
    let column = |i: usize, f: fn(&WindowMetrics) -> f64| Stat::of(reports.iter().map(move |r| f(&r.windows[i])));
    let windows = (0..n_windows)
        .map(|i| {
            let w = &first.windows[i];
            WindowSummary {
                index: w.index,
                start_day: w.start_day,
                end_day: w.end_day,
                tir: column(i, |w| w.tir),
                tbr: column(i, |w| w.tbr),
                mean_cgm: column(i, |w| w.mean_cgm),
                gmi: column(i, |w| w.gmi),
                mean_fbg: column(i, |w| w.mean_fbg),
                level2_count: column(i, |w| w.level2_count as f64),
                total_insulin: column(i, |w| w.total_insulin),
            }
        })
        .collect();
    let mut checkpoints = IndexMap::new();
    for week in CHECKPOINT_WEEKS {
        let Some(window) = first.checkpoint(week) else { continue };
        let hits: Vec<_> = reports.iter().map(|r| attainment(&r.windows[window.index])).collect();
        let pct = |f: fn(&crate::trial::metrics::TargetAttainment) -> bool| {
            100.0 * hits.iter().filter(|a| f(a)).count() as f64 / hits.len() as f64
        };
        checkpoints.insert(
            format!("week_{week}"),
            Checkpoint {
                window: window.index,
                attainment: AttainmentRates {
                    fasting: pct(|a| a.fasting),
                    hba1c: pct(|a| a.hba1c),
                    cgm: pct(|a| a.cgm),
                },
            },
        );
    }
    Ok(ScenarioSummary {
        avatars: reports.len(),
        failures,
        windows,
        checkpoints,
    })
}

pub fn summarize_result(result: &ScenarioResult) -> Result<ScenarioSummary> {
    let reports: Vec<&MetricsReport> = result.runs.iter().map(|r| &r.metrics).collect();
    summarize(&reports, result.failures.clone())
}

#[derive(Debug, Serialize, Deserialize)]
struct DayRow {
    day: i64,
    dose: f64,
    fbg: f64,
    smbg: Option<f64>,
    titrated: bool,
    cgm_samples: u32,
    cgm_in_range: u32,
    cgm_below: u32,
    cgm_sum: f64,
    p0: Option<f64>,
    p1: Option<f64>,
    p2: Option<f64>,
}

impl From<&DayRecord> for DayRow {
    fn from(d: &DayRecord) -> Self {
        Self {
            day: d.day,
            dose: d.dose,
            fbg: d.fbg,
            smbg: d.smbg,
            titrated: d.titrated,
            cgm_samples: d.cgm.samples,
            cgm_in_range: d.cgm.in_range,
            cgm_below: d.cgm.below,
            cgm_sum: d.cgm.sum,
            p0: d.estimate.map(|p| p.p0),
            p1: d.estimate.map(|p| p.p1),
            p2: d.estimate.map(|p| p.p2),
        }
    }
}

impl From<DayRow> for DayRecord {
    fn from(r: DayRow) -> Self {
        let estimate = match (r.p0, r.p1, r.p2) {
            (Some(p0), Some(p1), Some(p2)) => Some(ModelParams { p0, p1, p2 }),
            _ => None,
        };
        Self {
            day: r.day,
            dose: r.dose,
            fbg: r.fbg,
            smbg: r.smbg,
            titrated: r.titrated,
            cgm: DailyCgm {
                samples: r.cgm_samples,
                in_range: r.cgm_in_range,
                below: r.cgm_below,
                sum: r.cgm_sum,
            },
            estimate,
        }
    }
}

fn avatar_file(id: u32) -> String {
    format!("avatar_{id:04}.csv")
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_day_log(path: &Path, run: &AvatarRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    for d in &run.days {
        w.serialize(DayRow::from(d)).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_traces(path: &Path, run: &AvatarRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(["minute", "glucose"]).map_err(csv_error(path))?;
    for trace in &run.traces {
        for (k, g) in trace.samples.iter().enumerate() {
            let minute = trace.start + k as i64 * crate::SAMPLE_MINUTES;
            w.serialize((minute, g)).map_err(csv_error(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_day_log(path: &Path) -> Result<Vec<DayRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    r.deserialize::<DayRow>()
        .map(|row| row.map(DayRecord::from).map_err(csv_error(path)))
        .collect()
}

fn write_json(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(|source| Error::Json {
        context: "run summary".into(),
        source,
    })?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{text}").map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

/// Write per-avatar logs and `summary.json` for a set of scenario results.
pub fn export_results(out: &Path, results: &[ScenarioResult]) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    for result in results {
        if result.runs.is_empty() {
            return Err(Error::invalid(format!("scenario {} has no completed avatars", result.spec.name)));
        }
        summary.scenarios.insert(result.spec.name.clone(), summarize_result(result)?);
    }
    for result in results {
        let dir = out.join(&result.spec.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for run in &result.runs {
            write_day_log(&dir.join(avatar_file(run.avatar_id)), run)?;
            if !run.traces.is_empty() {
                let cgm = dir.join("cgm");
                std::fs::create_dir_all(&cgm).map_err(|e| Error::io(&cgm, e))?;
                write_traces(&cgm.join(avatar_file(run.avatar_id)), run)?;
            }
        }
    }
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn avatar_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("avatar_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Recompute the summary from the per-avatar logs under `out`.
pub fn recompute_summary(out: &Path) -> Result<RunSummary> {
    let previous = read_summary(&out.join(SUMMARY_FILE)).ok();
    let mut names: Vec<String> = match &previous {
        Some(s) => s.scenarios.keys().cloned().collect(),
        None => Vec::new(),
    };
    if names.is_empty() {
        let mut dirs: Vec<String> = std::fs::read_dir(out)
            .map_err(|e| Error::io(out, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        dirs.sort();
        names = dirs;
    }
    let mut summary = RunSummary::default();
    for name in names {
        let dir = out.join(&name);
        let mut reports = Vec::new();
        for file in avatar_logs(&dir)? {
            reports.push(metrics_of(&read_day_log(&file)?)?);
        }
        if reports.is_empty() {
            continue;
        }
        let failures = previous
            .as_ref()
            .and_then(|s| s.scenarios.get(&name))
            .map(|s| s.failures.clone())
            .unwrap_or_default();
        let refs: Vec<&MetricsReport> = reports.iter().collect();
        summary.scenarios.insert(name, summarize(&refs, failures)?);
    }
    if summary.scenarios.is_empty() {
        return Err(Error::invalid(format!("no avatar logs under {}", out.display())));
    }
    Ok(summary)
}

/// Plain-text table of checkpoint outcomes.
pub fn render_report(summary: &RunSummary) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<10} {:>5} {:>5} {:>7} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}\n",
        "scenario", "week", "n", "TIR%", "TBR%", "GMI%", "FBG", "fast%", "hba1c%", "cgm%"
    ));
    for (name, sc) in &summary.scenarios {
        for (key, cp) in &sc.checkpoints {
            let w = &sc.windows[cp.window];
            let week = key.trim_start_matches("week_");
            s.push_str(&format!(
                "{:<10} {:>5} {:>5} {:>7.1} {:>6.2} {:>6.2} {:>8.1} {:>8.1} {:>8.1} {:>8.1}\n",
                name,
                week,
                sc.avatars,
                w.tir.mean,
                w.tbr.mean,
                w.gmi.mean,
                w.mean_fbg.mean,
                cp.attainment.fasting,
                cp.attainment.hba1c,
                cp.attainment.cgm
            ));
        }
        if !sc.failures.is_empty() {
            s.push_str(&format!("{:<10} {} avatar(s) aborted\n", name, sc.failures.len()));
        }
    }
    s
}
