//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use tower::ServiceExt;

use titration_advisor::{router, AppState, ServiceConfig};
use titration_core::controller::{rhc_recommend, soc_recommend, TitrationConfig};
use titration_core::estimator::{map_estimate, map_estimate_from, EstimatorSettings, ObservationLog};
use titration_core::fasting::{fasting_time, ModelParams, PriorSpec};
use titration_core::pk::{insulin_at_times, steady_state_avg, time_to_peak, DoseEvent, DrugParams, Subject};
use titration_core::trial::export::read_summary;
use titration_core::{Error, MINUTES_PER_DAY};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn check(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let mut o = f();
    let elapsed = started.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            o.pass = false;
            o.detail.push_str(&format!("; runtime over {:.0} s limit", limit.as_secs_f64()));
        }
    }
    println!(
        "{} {name}: {} [{:.2} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    o.pass
}

// Direct summation of the biexponential absorption response.
fn oracle_insulin(doses: &[(i64, f64)], t: i64, drug: &DrugParams, bw: f64) -> f64 {
    let (k1, k2) = (drug.k1(), drug.k2());
    let scale = 1000.0 * drug.bioavailability() * k2 * k1 / (bw * drug.distribution_volume() * drug.clearance() * (k2 - k1));
    doses
        .iter()
        .filter(|(s, _)| *s <= t)
        .map(|&(s, u)| {
            let dt = (t - s) as f64;
            scale * ((-k1 * dt).exp() - (-k2 * dt).exp()) * u
        })
        .sum()
}

fn oracle_steady_avg(drug: &DrugParams, units: f64, bw: f64) -> f64 {
    1000.0 * drug.bioavailability() * units / (bw * drug.distribution_volume() * drug.clearance() * MINUTES_PER_DAY as f64)
}

fn pk_steady_state() -> Outcome {
    let bw = 90.0;
    let subject = Subject::new(bw).unwrap();
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for drug in DrugParams::presets() {
        let doses: Vec<DoseEvent> = (0..30).map(|d| DoseEvent::new(d * MINUTES_PER_DAY, 50.0).unwrap()).collect();
        let last_day: Vec<i64> = (29 * MINUTES_PER_DAY..30 * MINUTES_PER_DAY).collect();
        let profile = insulin_at_times(&doses, &last_day, &drug, subject).unwrap();
        let simulated = profile.iter().sum::<f64>() / profile.len() as f64;
        let analytic = steady_state_avg(&drug, 50.0, MINUTES_PER_DAY, subject);
        let oracle = oracle_steady_avg(&drug, 50.0, bw);
        let spot = oracle_insulin(&[(0, 50.0), (1440, 50.0)], 2000, &drug, bw);
        let lib_spot = insulin_at_times(&doses[..2], &[2000], &drug, subject).unwrap()[0];
        let rel = ((simulated - analytic) / analytic).abs();
        worst = worst.max(rel).max(((analytic - oracle) / oracle).abs()).max(((spot - lib_spot) / spot).abs());
        notes.push(format!("{} {:.3} vs {:.3}", drug.name(), simulated, analytic));
    }
    let degludec = oracle_steady_avg(&DrugParams::degludec(), 50.0, bw);
    let frozen_ok = (degludec - 19.290).abs() < 0.005;
    outcome(
        worst < 0.01 && frozen_ok,
        format!("{}; max rel err {:.2e} (tol 1e-2); degludec/50 U/90 kg {:.3} mU/L", notes.join(", "), worst, degludec),
    )
}

fn oracle_time_to_peak(drug: &DrugParams, period: f64) -> f64 {
    let (k1, k2) = (drug.k1(), drug.k2());
    let ratio = (1.0 - (-k1 * period).exp()) / (1.0 - (-k2 * period).exp());
    ((k1 / k2).ln() - ratio.ln()) / (k1 - k2)
}

fn pk_peak() -> Outcome {
    let subject = Subject::new(90.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for drug in DrugParams::presets() {
        let doses: Vec<DoseEvent> = (0..40).map(|d| DoseEvent::new(d * MINUTES_PER_DAY, 50.0).unwrap()).collect();
        let start = 39 * MINUTES_PER_DAY;
        let grid: Vec<i64> = (0..288).map(|k| start + 5 * k).collect();
        let profile = insulin_at_times(&doses, &grid, &drug, subject).unwrap();
        let argmax = (0..profile.len()).max_by(|&a, &b| profile[a].total_cmp(&profile[b])).unwrap();
        let numeric = (5 * argmax) as f64;
        let closed = time_to_peak(&drug, MINUTES_PER_DAY).unwrap();
        let oracle = oracle_time_to_peak(&drug, MINUTES_PER_DAY as f64);
        worst = worst.max((numeric - closed).abs()).max((closed - oracle).abs());
        notes.push(format!("{} {:.1} min (grid {numeric})", drug.name(), closed));
    }
    let degludec = oracle_time_to_peak(&DrugParams::degludec(), 1440.0);
    outcome(
        worst <= 5.0 && (degludec - 478.0).abs() < 1.0,
        format!("{}; max deviation {worst:.2} min (tol 5)", notes.join(", ")),
    )
}

fn soc_exact() -> Outcome {
    let config = TitrationConfig::default();
    let mut values: Vec<f64> = (40..=250).map(f64::from).collect();
    values.extend([71.5, 71.99, 72.01, 89.99, 90.01, 90.5]);
    let table = |w: &[f64]| {
        if w.iter().any(|&z| z < 72.0) {
            -2.0
        } else if w.iter().sum::<f64>() / w.len() as f64 <= 90.0 {
            0.0
        } else {
            2.0
        }
    };
    let mut cases = 0u64;
    let mut deviations = 0u64;
    let mut window = Vec::with_capacity(3);
    let mut probe = |w: &[f64]| {
        cases += 1;
        if soc_recommend(w, &config).unwrap() != table(w) {
            deviations += 1;
        }
    };
    for &a in &values {
        probe(&[a]);
        for &b in &values {
            probe(&[a, b]);
            for &c in &values {
                window.clear();
                window.extend([a, b, c]);
                probe(&window);
            }
        }
    }
    outcome(deviations == 0, format!("{cases} windows, {deviations} deviations"))
}

struct Synthetic {
    log: ObservationLog,
    insulin: Vec<f64>,
    log_z: Vec<f64>,
    subject: Subject,
}

fn synthetic_patient(rng: &mut ChaCha8Rng, noisy: bool) -> Synthetic {
    let drug = DrugParams::degludec();
    let bw = rng.random_range(60.0..130.0);
    let subject = Subject::new(bw).unwrap();
    let truth = ModelParams {
        p0: rng.random_range(130.0..260.0),
        p1: rng.random_range(1.5f64.ln()..12.0f64.ln()).exp(),
        p2: rng.random_range(0.05..0.25),
    };
    // Titrate upward every third day until fasting glucose reaches roughly 110.
    let per_unit = oracle_steady_avg(&drug, 1.0, bw);
    let cap = ((truth.p0 - 110.0) / (truth.p1 * per_unit)).max(2.0);
    let step = rng.random_range(1.0..4.0f64);
    let mut doses = Vec::new();
    let mut readings = Vec::new();
    let mut dose = 0.0;
    for day in 0..60i64 {
        let t = fasting_time(day);
        let past: Vec<(i64, f64)> = doses.iter().map(|d: &DoseEvent| (d.time, d.units)).collect();
        let i = oracle_insulin(&past, t, &drug, bw);
        let y = truth.p0 - truth.p1 * i;
        let z = if noisy {
            let n: f64 = rng.sample(StandardNormal);
            y * (truth.p2 * n).exp()
        } else {
            y
        };
        readings.push((t, z.max(20.0), i));
        if day % 3 == 0 {
            dose = (dose + step).min(cap).round();
        }
        doses.push(DoseEvent::new(t, dose).unwrap());
    }
    let mut log = ObservationLog::new();
    for &(t, z, _) in &readings {
        log.push_reading(t, z).unwrap();
    }
    for d in doses {
        log.push_dose(d).unwrap();
    }
    Synthetic {
        log,
        insulin: readings.iter().map(|r| r.2).collect(),
        log_z: readings.iter().map(|r| r.1.ln()).collect(),
        subject,
    }
}

fn oracle_objective(s: &Synthetic, prior: &PriorSpec, p: [f64; 3]) -> f64 {
    let p2 = p[2].max(0.01);
    let data: f64 = s
        .log_z
        .iter()
        .zip(&s.insulin)
        .map(|(lz, i)| {
            let h = (p[0] - p[1] * i).max(1.0);
            (lz - h.ln()).powi(2)
        })
        .sum();
    let means = [prior.mean.p0, prior.mean.p1, prior.mean.p2];
    let reg: f64 = (0..3).map(|k| ((p[k].max(if k == 2 { 0.01 } else { 0.0 }) / means[k]).ln() / prior.log_sd[k]).powi(2)).sum();
    data / (p2 * p2) + 2.0 * s.log_z.len() as f64 * p2.ln() + reg
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

fn grid_best(s: &Synthetic, prior: &PriorSpec) -> ([f64; 3], f64) {
    let (g0, g1, g2) = (log_grid(60.0, 400.0, 50), log_grid(0.3, 40.0, 50), log_grid(0.01, 1.0, 20));
    let mut best = ([0.0; 3], f64::INFINITY);
    for &a in &g0 {
        for &b in &g1 {
            for &c in &g2 {
                let v = oracle_objective(s, prior, [a, b, c]);
                if v < best.1 {
                    best = ([a, b, c], v);
                }
            }
        }
    }
    best
}

// Successively finer log-space grids around the incumbent.
fn refined_grid(s: &Synthetic, prior: &PriorSpec, start: [f64; 3]) -> [f64; 3] {
    let mut centre = start.map(f64::ln);
    let mut best = oracle_objective(s, prior, start);
    let mut half = [0.04, 0.1, 0.25];
    for _ in 0..60 {
        let mut improved = centre;
        for i in -5..=5 {
            for j in -5..=5 {
                for k in -5..=5 {
                    let th = [
                        centre[0] + half[0] * i as f64 / 5.0,
                        centre[1] + half[1] * j as f64 / 5.0,
                        (centre[2] + half[2] * k as f64 / 5.0).max(0.01f64.ln()),
                    ];
                    let v = oracle_objective(s, prior, th.map(f64::exp));
                    if v < best {
                        best = v;
                        improved = th;
                    }
                }
            }
        }
        if improved == centre {
            half = half.map(|h| h * 0.5);
        }
        centre = improved;
    }
    centre.map(f64::exp)
}

fn estimator_oracle() -> Outcome {
    let prior = PriorSpec::default();
    let drug = DrugParams::degludec();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worse = 0;
    let mut worst_recovery: f64 = 0.0;
    let mut max_gap = f64::NEG_INFINITY;
    for _ in 0..20 {
        let noisy = synthetic_patient(&mut rng, true);
        let map = map_estimate(&noisy.log, &prior, &drug, noisy.subject).unwrap();
        let at_map = oracle_objective(&noisy, &prior, map.as_array());
        let (_, grid) = grid_best(&noisy, &prior);
        max_gap = max_gap.max(at_map - grid);
        if at_map > grid + 1e-9 * grid.abs().max(1.0) {
            worse += 1;
        }

        let clean = synthetic_patient(&mut rng, false);
        let map = map_estimate(&clean.log, &prior, &drug, clean.subject).unwrap();
        let (coarse, _) = grid_best(&clean, &prior);
        let refined = refined_grid(&clean, &prior, coarse);
        for (k, best) in refined.iter().enumerate().take(2) {
            worst_recovery = worst_recovery.max(((map.as_array()[k] - best) / best).abs());
        }
    }
    outcome(
        worse == 0 && worst_recovery <= 0.02,
        format!(
            "20 noisy patients: MAP above grid optimum in {worse} (max J(MAP) - J(grid) = {max_gap:.3}); \
             20 noiseless: max (p0, p1) deviation from refined grid {:.3}% (tol 2%)",
            100.0 * worst_recovery
        ),
    )
}

fn controller_invariants() -> Outcome {
    let prior = PriorSpec::default();
    let config = TitrationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bound_violations = 0;
    let mut fixed_point_violations = 0;
    let mut fixed_point_cases = 0;
    for call in 0..10_000 {
        let drug = DrugParams::presets()[call % 3].clone();
        let bw = rng.random_range(55.0..150.0);
        let subject = Subject::new(bw).unwrap();
        // Odd calls hold a constant dose long enough to reach steady state.
        let in_band = call % 2 == 1;
        let days = if in_band { rng.random_range(40..60i64) } else { rng.random_range(0..30i64) };
        let level: f64 = rng.random_range(if in_band { 1..120 } else { 0..120 }) as f64;
        let jitter = if in_band { 0 } else { 3 };
        let history: Vec<DoseEvent> = (0..days)
            .map(|d| DoseEvent::new(fasting_time(d), (level + rng.random_range(-jitter..=jitter) as f64).max(0.0)).unwrap())
            .collect();
        let u_prev = history.last().map_or(0.0, |d| d.units);
        let now = fasting_time(days);
        let params = if in_band {
            // Put the steady lower envelope exactly on FBG_L with the upper one inside FBG_U.
            let p1 = rng.random_range(1.0..10.0);
            let p2 = rng.random_range(0.01..0.06);
            let past: Vec<(i64, f64)> = history.iter().map(|d| (d.time, d.units)).chain([(now, u_prev)]).collect();
            let i_now = oracle_insulin(&past, now, &drug, bw);
            let target = config.fbg_low * (config.alpha * p2).exp();
            ModelParams { p0: target + p1 * i_now, p1, p2 }
        } else {
            ModelParams {
                p0: rng.random_range(80.0..320.0),
                p1: rng.random_range(0.5..15.0),
                p2: rng.random_range(0.01..0.6),
            }
        };
        let rec = rhc_recommend(&params, &prior, &config, &history, u_prev, now, &drug, subject).unwrap();
        let bound = config.du_min.max(config.beta * u_prev);
        if rec.delta_u.abs() > bound + 1e-12 || rec.new_dose < 0.0 || !rec.new_dose.is_finite() {
            bound_violations += 1;
        }
        // Oracle: performance cost of keeping the dose, evaluated term by term.
        let mut plan: Vec<(i64, f64)> = history.iter().map(|d| (d.time, d.units)).collect();
        plan.extend((0..config.horizon_days as i64).map(|k| (now + k * MINUTES_PER_DAY, u_prev)));
        let spread = (config.alpha * params.p2).exp();
        let (mut hypo, mut hyper_low, mut hyper_high) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..=config.horizon_days as i64 {
            let y = (params.p0 - params.p1 * oracle_insulin(&plan, now + k * MINUTES_PER_DAY, &drug, bw)).max(1.0);
            let lower = y / spread / config.fbg_low - 1.0;
            let upper = y * spread / config.fbg_high - 1.0;
            hypo += lower.min(0.0).powi(2);
            hyper_low += lower.max(0.0).powi(2);
            hyper_high += upper.max(0.0).powi(2);
        }
        let keep_cost = config.gamma * (config.xi * hypo + hyper_low.max(hyper_high)) / config.horizon_days as f64;
        let in_band_now = keep_cost < 1e-12;
        if in_band_now {
            fixed_point_cases += 1;
            if rec.delta_u != 0.0 {
                fixed_point_violations += 1;
            }
        }
    }
    outcome(
        bound_violations == 0 && fixed_point_violations == 0 && fixed_point_cases > 0,
        format!(
            "10000 calls: {bound_violations} bound violations; {fixed_point_violations} fixed-point violations over {fixed_point_cases} zero-cost states"
        ),
    )
}

fn titrate() -> Command {
    Command::new(env!("CARGO_BIN_EXE_titrate"))
}

fn run_harness(out: &Path) -> Result<(), String> {
    let status = titrate()
        .args(["run", "--n", "50", "--seed", "42", "--weeks", "52", "--out"])
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("titrate exited with {status}"))
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn directional(run: &Path) -> Outcome {
    let summary = match read_summary(&run.join("summary.json")) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("no summary: {e}")),
    };
    let w = |name: &str, idx: usize| summary.scenarios[name].windows[idx].clone();
    let (wk8, wk52) = (3, 25);
    let acc = (w("RHC-1-acc", wk8).tir.mean, w("RHC-1-acc", wk52).tir.mean);
    let soc3 = (w("SoC-3", wk8).tir.mean, w("SoC-3", wk52).tir.mean);
    let tbr = |n: &str| w(n, wk52).tbr.mean;
    let rhc_max = tbr("RHC-3").max(tbr("RHC-1")).max(tbr("RHC-1-acc"));
    let dose = |n: &str| w(n, wk52).total_insulin.mean / 14.0;
    let a = (acc.0 - acc.1).abs() <= 5.0;
    let b = soc3.0 <= soc3.1 - 8.0;
    let c = tbr("SoC-1") > tbr("SoC-3") && tbr("SoC-3") > rhc_max;
    let d = (dose("RHC-3") - dose("RHC-1")).abs() <= 5.0;
    outcome(
        a && b && c && d,
        format!(
            "(a) RHC-1-acc TIR wk8 {:.1} vs wk52 {:.1} [{}]; (b) SoC-3 TIR wk8 {:.1} vs wk52 {:.1} [{}]; \
             (c) wk52 TBR SoC-1 {:.2} > SoC-3 {:.2} > RHC max {:.2} [{}]; (d) wk52 dose RHC-3 {:.1} vs RHC-1 {:.1} U [{}]",
            acc.0,
            acc.1,
            ok(a),
            soc3.0,
            soc3.1,
            ok(b),
            tbr("SoC-1"),
            tbr("SoC-3"),
            rhc_max,
            ok(c),
            dose("RHC-3"),
            dose("RHC-1"),
            ok(d)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    if let Err(e) = run_harness(second) {
        return outcome(false, e);
    }
    let (a, b) = (tree(first), tree(second));
    let differing = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).count() + b.keys().filter(|k| !a.contains_key(*k)).count();
    let bytes: usize = a.values().map(Vec::len).sum();
    outcome(
        differing == 0 && a.len() > 250,
        format!("{} files, {bytes} bytes; {differing} differ", a.len()),
    )
}

async fn call(state: &std::sync::Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> Value {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert!(status.is_success(), "{uri}: {status} {v}");
    v
}

struct Expected {
    estimate: ModelParams,
    log: ObservationLog,
}

// Independent replay of the estimate chain.
fn library_state(events: &[(bool, i64, f64)], prior: &PriorSpec, drug: &DrugParams, subject: Subject) -> Expected {
    let mut log = ObservationLog::new();
    let mut estimate = prior.mean;
    for &(is_fbg, t, v) in events {
        if is_fbg {
            log.push_reading(t, v).unwrap();
            match map_estimate_from(&log, prior, drug, subject, &estimate, &EstimatorSettings::default()) {
                Ok(fit) => estimate = fit.params,
                Err(Error::NonConvergence { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        } else {
            log.push_dose(DoseEvent::new(t, v).unwrap()).unwrap();
        }
    }
    Expected { estimate, log }
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

async fn service_parity_async(dir: &Path) -> Outcome {
    let state = AppState::open(dir, ServiceConfig::default(), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = Vec::new();
    let mut patients = Vec::new();
    for n in 0..100 {
        let id = format!("parity-{n:03}");
        let drug = DrugParams::presets()[n % 3].clone();
        let bw: f64 = rng.random_range(55.0..140.0);
        let mut titration = TitrationConfig::default();
        if n % 4 == 3 {
            titration.fbg_high = 110.0;
            titration.horizon_days = 7;
        }
        call(
            &state,
            "POST",
            "/v1/patients",
            Some(json!({"id": id, "body_weight": bw, "drug": drug.name(), "titration": titration})),
        )
        .await;
        let mut events = Vec::new();
        let base: f64 = rng.random_range(140.0..260.0);
        for day in 0..rng.random_range(0..25i64) {
            let t = fasting_time(day);
            if rng.random_bool(0.85) {
                let z = (base - 4.0 * day as f64 + rng.random_range(-25.0..25.0)).max(45.0);
                call(&state, "POST", &format!("/v1/patients/{id}/fbg"), Some(json!({"time": t, "fbg": z}))).await;
                events.push((true, t, z));
            }
            if rng.random_bool(0.9) {
                let units = if rng.random_bool(0.7) {
                    f(&call(&state, "GET", &format!("/v1/patients/{id}/recommendation"), None).await["new_dose"])
                } else {
                    rng.random_range(0..60) as f64
                };
                call(&state, "POST", &format!("/v1/patients/{id}/doses"), Some(json!({"time": t, "units": units}))).await;
                events.push((false, t, units));
            }
        }

        let subject = Subject::new(bw).unwrap();
        let prior = PriorSpec::default();
        let expected = library_state(&events, &prior, &drug, subject);
        let last_fbg = expected.log.readings().last().map(|r| r.time);
        let last_dose = expected.log.doses().last().map(|d| (d.time, d.units));
        let now = match (last_fbg, last_dose) {
            (Some(r), Some((d, _))) => r.max(d + MINUTES_PER_DAY),
            (Some(r), None) => r,
            (None, Some((d, _))) => d + MINUTES_PER_DAY,
            (None, None) => 0,
        };
        let u_prev = last_dose.map_or(0.0, |d| d.1);
        let lib = rhc_recommend(&expected.estimate, &prior, &titration, expected.log.doses(), u_prev, now, &drug, subject).unwrap();
        let svc = call(&state, "GET", &format!("/v1/patients/{id}/recommendation"), None).await;
        let traj = svc["trajectory"].as_array().unwrap();
        let same = f(&svc["delta_u"]) == lib.delta_u
            && f(&svc["new_dose"]) == lib.new_dose
            && f(&svc["bound"]) == lib.diagnostics.bound
            && svc["bound_active"].as_bool() == Some(lib.diagnostics.bound_active)
            && svc["now"].as_i64() == Some(now)
            && f(&svc["u_prev"]) == u_prev
            && f(&svc["estimate"]["p0"]) == expected.estimate.p0
            && f(&svc["estimate"]["p1"]) == expected.estimate.p1
            && f(&svc["estimate"]["p2"]) == expected.estimate.p2
            && f(&svc["cost"]["total"]) == lib.diagnostics.total_cost
            && traj.len() == lib.diagnostics.trajectory.len()
            && traj.iter().enumerate().all(|(k, p)| {
                f(&p["fbg"]) == lib.diagnostics.trajectory[k]
                    && f(&p["low"]) == lib.diagnostics.low[k]
                    && f(&p["high"]) == lib.diagnostics.high[k]
            });
        if !same {
            mismatches.push(id.clone());
        }
        patients.push((id, svc, state.record(&format!("parity-{n:03}")).unwrap()));
    }
    drop(state);

    let replayed = AppState::open(dir, ServiceConfig::default(), None).unwrap();
    let mut replay_mismatches = 0;
    for (id, svc, record) in &patients {
        let again = call(&replayed, "GET", &format!("/v1/patients/{id}/recommendation"), None).await;
        if replayed.record(id).unwrap() != *record || again != *svc {
            replay_mismatches += 1;
        }
    }
    outcome(
        mismatches.is_empty() && replay_mismatches == 0,
        format!(
            "100 patient states: {} differ from library output{}; replay: {replay_mismatches} records or recommendations differ",
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(" ({})", mismatches.join(", ")) }
        ),
    )
}

fn service_parity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(service_parity_async(dir.path()))
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        check("pk-steady-state", Some(secs(1)), pk_steady_state),
        check("pk-peak", Some(secs(1)), pk_peak),
        check("soc-exactness", Some(secs(1)), soc_exact),
        check("estimator-oracle-equivalence", Some(secs(60)), estimator_oracle),
        check("controller-invariants", Some(secs(60)), controller_invariants),
    ];
    let runs = tempfile::tempdir().unwrap();
    let (first, second) = (runs.path().join("first"), runs.path().join("second"));
    let first_ok = run_harness(&first);
    results.push(check("directional-reproduction", None, || match &first_ok {
        Ok(()) => directional(&first),
        Err(e) => outcome(false, e.clone()),
    }));
    results.push(check("determinism", None, || match &first_ok {
        Ok(()) => determinism(&first, &second),
        Err(e) => outcome(false, e.clone()),
    }));
    results.push(check("service-parity-and-replay", None, service_parity));
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
