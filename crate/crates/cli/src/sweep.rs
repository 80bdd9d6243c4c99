//! The experiment matrix: parameter grid × shaping weights × seeds.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clfkit::roa::RoaResult;

use crate::commands::{compute_roa, ensure_dir, Loaded, TrainSetup};
use crate::config::{RunConfig, SystemConfig};
use crate::error::CliError;
use crate::output::write_rows;

/// One scheduled run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCase {
    pub index: usize,
    pub param1: Option<f64>,
    pub param2: Option<f64>,
    /// `None` keeps the configured shaping; `Some(0.0)` switches it off.
    pub eta1: Option<f64>,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: SweepCase,
    pub exit_code: i32,
    pub steps: Option<usize>,
    pub area: Option<f64>,
    pub level: Option<f64>,
    pub wall_seconds: f64,
    pub message: String,
    pub checkpoint: Option<PathBuf>,
    pub roa: Option<RoaResult<f64>>,
}

impl CaseResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }
}

/// Success rate and area statistics over a set of cases.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub group: String,
    pub cases: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful cases with an extracted ROA.
    pub mean_area: Option<f64>,
    pub std_area: Option<f64>,
}

fn param_names(system: &str) -> (&'static str, &'static str) {
    match system {
        "path_following" => ("curvature", "speed"),
        _ => ("mass", "length"),
    }
}

fn param_values(sys: &SystemConfig) -> (Option<f64>, Option<f64>) {
    match sys.name.as_str() {
        "path_following" => (sys.curvature, sys.speed),
        _ => (sys.mass, sys.length),
    }
}

/// Expands the experiment block into cases, parameters outermost and seeds innermost.
pub fn schedule(cfg: &RunConfig) -> Result<Vec<SweepCase>, CliError> {
    let exp = cfg.experiment.as_ref().ok_or_else(|| CliError::Config("sweep needs an [experiment] table".into()))?;
    let etas: Vec<Option<f64>> = if exp.eta1.is_empty() { vec![None] } else { exp.eta1.iter().copied().map(Some).collect() };
    let mut cases = Vec::new();
    for sys in exp.system_variants(&cfg.system) {
        let (param1, param2) = param_values(&sys);
        for &eta1 in &etas {
            for &seed in &exp.seeds {
                let mut c = cfg.clone();
                c.system = sys.clone();
                c.experiment = None;
                c.train.seed = Some(seed);
                match eta1 {
                    Some(e) if e == 0.0 => c.train.shaping = Some(false),
                    Some(e) => {
                        c.train.shaping = Some(true);
                        c.train.eta1 = Some(e);
                    }
                    None => {}
                }
                c.validate()?;
                cases.push(SweepCase { index: cases.len(), param1, param2, eta1, seed, config: c });
            }
        }
    }
    Ok(cases)
}

/// Trains one case and, on success, extracts its ROA. Never fails: errors
/// become the row's exit code and message.
pub fn run_case(case: &SweepCase, checkpoint_dir: Option<&Path>) -> CaseResult {
    let start = Instant::now();
    let mut res = CaseResult {
        case: case.clone(),
        exit_code: 1,
        steps: None,
        area: None,
        level: None,
        wall_seconds: 0.0,
        message: String::new(),
        checkpoint: None,
        roa: None,
    };
    let outcome = TrainSetup::new(&case.config).and_then(|setup| {
        let outcome = setup.run()?;
        Ok((setup, outcome))
    });
    match outcome {
        Err(e) => {
            res.exit_code = e.exit_code();
            res.message = e.to_string();
        }
        Ok((setup, outcome)) => {
            res.steps = Some(outcome.steps);
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(format!("case_{:04}.json", case.index));
                match setup.checkpoint(&outcome.clf).save(&path) {
                    Ok(()) => res.checkpoint = Some(path),
                    Err(e) => res.message = e.to_string(),
                }
            }
            if outcome.success {
                res.exit_code = 0;
                let ld = Loaded { system: setup.system, clf: outcome.clf, controller: setup.controller, delta_verify: setup.train.delta_verify };
                match compute_roa(&case.config, &ld) {
                    Ok((_, roa, _)) => {
                        res.area = Some(roa.area);
                        res.level = Some(roa.level);
                        res.roa = Some(roa);
                    }
                    Err(e) => res.message = format!("ROA extraction failed: {e}"),
                }
            } else {
                res.exit_code = 3;
                let count = outcome.report.map(|r| r.violation_count.to_string()).unwrap_or_else(|| "unknown".into());
                res.message = format!("no convergence after {} steps ({count} violations at the last dense check)", outcome.steps);
            }
        }
    }
    res.wall_seconds = start.elapsed().as_secs_f64();
    res
}

/// Runs every case on `jobs` worker threads; results come back in case order.
pub fn run_cases(cases: &[SweepCase], jobs: usize, checkpoint_dir: Option<&Path>) -> Vec<CaseResult> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CaseResult>>> = Mutex::new(vec![None; cases.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(cases.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cases.len() {
                    break;
                }
                let r = run_case(&cases[i], checkpoint_dir);
                log::info!(
                    "case {}/{} seed {} exit {} area {:?} ({:.1} s)",
                    i + 1,
                    cases.len(),
                    r.case.seed,
                    r.exit_code,
                    r.area,
                    r.wall_seconds
                );
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every case ran")).collect()
}

pub fn aggregate(group: &str, results: &[&CaseResult]) -> Aggregate {
    let successes = results.iter().filter(|r| r.success()).count();
    let areas: Vec<f64> = results.iter().filter(|r| r.success()).filter_map(|r| r.area).collect();
    let mean = (!areas.is_empty()).then(|| areas.iter().sum::<f64>() / areas.len() as f64);
    let std = mean.map(|m| {
        if areas.len() < 2 {
            0.0
        } else {
            (areas.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (areas.len() - 1) as f64).sqrt()
        }
    });
    let cases = results.len();
    Aggregate {
        group: group.into(),
        cases,
        successes,
        success_rate: if cases == 0 { 0.0 } else { successes as f64 / cases as f64 },
        mean_area: mean,
        std_area: std,
    }
}

/// One aggregate per shaping weight when sweeping it, otherwise one overall.
pub fn summarize(results: &[CaseResult]) -> Vec<Aggregate> {
    let mut etas: Vec<Option<f64>> = Vec::new();
    for r in results {
        if !etas.iter().any(|e| e.map(f64::to_bits) == r.case.eta1.map(f64::to_bits)) {
            etas.push(r.case.eta1);
        }
    }
    if etas.len() <= 1 {
        let all: Vec<&CaseResult> = results.iter().collect();
        return vec![aggregate("all", &all)];
    }
    etas.iter()
        .map(|&eta| {
            let group: Vec<&CaseResult> = results.iter().filter(|r| r.case.eta1.map(f64::to_bits) == eta.map(f64::to_bits)).collect();
            let label = eta.map(|e| format!("eta1={e}")).unwrap_or_else(|| "default".into());
            aggregate(&label, &group)
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_cases(path: &Path, system: &str, results: &[CaseResult]) -> Result<(), CliError> {
    let (p1, p2) = param_names(system);
    let header: Vec<String> =
        ["case", p1, p2, "eta1", "seed", "success", "exit_code", "steps", "area", "level", "wall_seconds", "message"].map(String::from).to_vec();
    let rows = results.iter().map(|r| {
        vec![
            r.case.index.to_string(),
            opt(r.case.param1),
            opt(r.case.param2),
            opt(r.case.eta1),
            r.case.seed.to_string(),
            r.success().to_string(),
            r.exit_code.to_string(),
            r.steps.map(|s| s.to_string()).unwrap_or_default(),
            opt(r.area),
            opt(r.level),
            format!("{:.3}", r.wall_seconds),
            r.message.clone(),
        ]
    });
    write_rows(path, &header, rows)
}

pub fn write_summary(path: &Path, rows: &[Aggregate]) -> Result<(), CliError> {
    let header: Vec<String> = ["group", "cases", "successes", "success_rate", "mean_area", "std_area"].map(String::from).to_vec();
    let body = rows.iter().map(|a| {
        vec![a.group.clone(), a.cases.to_string(), a.successes.to_string(), a.success_rate.to_string(), opt(a.mean_area), opt(a.std_area)]
    });
    write_rows(path, &header, body)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<Aggregate>, CliError> {
    ensure_dir(out)?;
    let cases = schedule(cfg)?;
    println!("scheduled {} cases", cases.len());
    let ck_dir = out.join("cases");
    ensure_dir(&ck_dir)?;
    let results = run_cases(&cases, jobs, Some(&ck_dir));
    write_cases(&out.join("sweep_cases.csv"), &cfg.system.name, &results)?;
    let summary = summarize(&results);
    write_summary(&out.join("sweep_summary.csv"), &summary)?;
    for a in &summary {
        println!(
            "{}: {}/{} verifier-clean ({:.2}%), area {} ± {}",
            a.group,
            a.successes,
            a.cases,
            100.0 * a.success_rate,
            a.mean_area.map(|m| format!("{m:.3}")).unwrap_or_else(|| "n/a".into()),
            a.std_area.map(|s| format!("{s:.3}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(summary)
}
