//! The subcommands. Each writes its result files under `out` and returns a
//! summary; failures map to exit codes through [`CliError::exit_code`].

use std::path::{Path, PathBuf};

use clfkit::clf::{ClfCandidate, Lyapunov};
use clfkit::controllers::Controller;
use clfkit::dynamics::{generate_dynamics_samples, pretrain_dynamics, ControlAffine, LearnedDynamics, SystemSpec};
use clfkit::grid::Grid;
use clfkit::roa::{find_roa, point_in_polygon, RoaResult};
use clfkit::simulator::{simulate, SimError};
use clfkit::trainer::{initial_candidate, train, TrainConfig, TrainOutcome};
use clfkit::verify::{check_satisfiability, GridField, VerificationReport, VerifyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, DynamicsCheckpoint};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DYNAMICS_FILE: &str = "dynamics.json";

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub struct PretrainSummary {
    pub residual: f64,
    pub holdout_error: f64,
    pub samples: usize,
    pub path: PathBuf,
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainSummary, CliError> {
    ensure_dir(out)?;
    let system = cfg.build_system()?;
    let pcfg = cfg.pretrain_config()?;
    let samples = generate_dynamics_samples(&system, cfg.pretrain_delta(&system), pcfg.seed)?;
    let model = pretrain_dynamics(&samples, &pcfg)?;
    let residual = model.mean_residual(&samples);
    let path = out.join(DYNAMICS_FILE);
    DynamicsCheckpoint::new(&system, &model).save(&path)?;
    println!("pretrained {} samples: mean residual {residual:e}, holdout error {:e}", samples.len(), model.fit_error());
    println!("wrote {}", path.display());
    Ok(PretrainSummary { residual, holdout_error: model.fit_error(), samples: samples.len(), path })
}

/// Everything a training run needs, resolved from the config.
pub struct TrainSetup {
    pub system: SystemSpec<f64>,
    pub controller: Controller<f64>,
    pub train: TrainConfig<f64>,
    pub initial: ClfCandidate<f64>,
    pub learned: Option<LearnedDynamics<f64>>,
}

impl TrainSetup {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let system = cfg.build_system()?;
        let train = cfg.build_train_config(&system)?;
        let controller = cfg.build_controller(&system, train.loss_mode)?;
        let shape = cfg.net_shape()?;
        let form = cfg.clf_form(train.loss_mode)?;
        let initial = initial_candidate(system.equilibrium().to_vec(), &shape, cfg.clf.k, form, train.seed)?;
        let learned = match &cfg.train.dynamics_model {
            Some(path) => {
                let ck = DynamicsCheckpoint::load(path)?;
                ck.system.ensure_matches(&system)?;
                Some(ck.to_model()?)
            }
            None => None,
        };
        Ok(Self { system, controller, train, initial, learned })
    }

    pub fn run(&self) -> Result<TrainOutcome<f64>, CliError> {
        let region = self.system.region();
        let outcome = match &self.learned {
            Some(model) => train(model, self.initial.clone(), &self.controller, &self.train, region)?,
            None => train(&self.system, self.initial.clone(), &self.controller, &self.train, region)?,
        };
        Ok(outcome)
    }

    /// The dense check the trainer uses, run on the analytic system.
    pub fn audit(&self, clf: &ClfCandidate<f64>) -> Result<VerificationReport<f64>, CliError> {
        let vcfg = VerifyConfig::new(self.train.delta_verify).with_r0(self.train.effective_r0()).with_max_recorded(self.train.counterexample_cap);
        Ok(check_satisfiability(clf, &self.controller, &self.system, self.system.region(), &vcfg)?)
    }

    pub fn checkpoint(&self, clf: &ClfCandidate<f64>) -> Checkpoint {
        Checkpoint::new(&self.system, clf, &self.controller, &self.train)
    }
}

pub struct TrainSummary {
    pub steps: usize,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

/// Trains, writes the checkpoint and history, and fails with
/// [`CliError::NotConverged`] when `max_step` runs out.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary, CliError> {
    ensure_dir(out)?;
    let setup = TrainSetup::new(cfg)?;
    log::info!(
        "training {} with {} controller, {} loss, seed {}",
        setup.system.name(),
        setup.controller.name(),
        setup.train.loss_mode.name(),
        setup.train.seed
    );
    let outcome = setup.run()?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let history = out.join("history.csv");
    setup.checkpoint(&outcome.clf).save(&checkpoint)?;
    output::write_history(&history, &outcome.history)?;
    println!("wrote {} and {}", checkpoint.display(), history.display());
    if outcome.success {
        println!("verifier-clean after {} steps", outcome.steps);
        return Ok(TrainSummary { steps: outcome.steps, checkpoint, history });
    }
    let violations = match &outcome.report {
        Some(rep) => format!("{} violating grid points at the last dense check", rep.violation_count),
        None => {
            let rep = setup.audit(&outcome.clf)?;
            format!("{} violating grid points remain", rep.violation_count)
        }
    };
    Err(CliError::NotConverged { steps: outcome.steps, violations })
}

/// Checkpoint contents checked against the configured system.
pub struct Loaded {
    pub system: SystemSpec<f64>,
    pub clf: ClfCandidate<f64>,
    pub controller: Controller<f64>,
    pub delta_verify: f64,
}

pub fn load_checked(cfg: &RunConfig, checkpoint: &Path) -> Result<Loaded, CliError> {
    let system = cfg.build_system()?;
    let train = cfg.build_train_config(&system)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.system.ensure_matches(&system)?;
    let clf = ck.clf.to_candidate()?;
    if clf.dim() != system.state_dim() {
        return Err(CliError::Checkpoint(format!("CLF input dimension {} does not match the system", clf.dim())));
    }
    let controller = ck.controller.to_controller()?;
    if controller.control_dim() != system.control_dim() {
        return Err(CliError::Checkpoint("controller dimension does not match the system".into()));
    }
    Ok(Loaded { system, clf, controller, delta_verify: train.delta_verify })
}

pub fn cmd_verify(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<VerificationReport<f64>, CliError> {
    ensure_dir(out)?;
    let ld = load_checked(cfg, checkpoint)?;
    let vcfg = VerifyConfig::new(cfg.verify.delta.unwrap_or(ld.delta_verify)).with_r0(cfg.verify.r0).with_max_recorded(cfg.verify.max_recorded);
    let report = check_satisfiability(&ld.clf, &ld.controller, &ld.system, ld.system.region(), &vcfg)?;
    output::write_verification(&out.join("verification.csv"), &report)?;
    output::write_violations(&out.join("violations.csv"), &report, ld.system.state_dim())?;
    println!(
        "checked {} points at spacing {}: {} violations, max V̇ {:e}",
        report.checked, report.delta, report.violation_count, report.max_vdot
    );
    if !report.satisfiable {
        return Err(CliError::VerifyFailed { count: report.violation_count, max_vdot: report.max_vdot });
    }
    Ok(report)
}

/// Dense field, violation mask and the largest certified sublevel set.
pub fn compute_roa(cfg: &RunConfig, ld: &Loaded) -> Result<(GridField<f64>, RoaResult<f64>, f64), CliError> {
    if ld.system.state_dim() != 2 {
        return Err(CliError::Usage(format!("ROA extraction needs a planar system, got dimension {}", ld.system.state_dim())));
    }
    let delta = cfg.roa.delta.unwrap_or(ld.delta_verify);
    let grid = Grid::new(ld.system.region(), delta)?;
    let field = GridField::evaluate(&ld.clf, &ld.controller, &ld.system, grid)?;
    let mask = field.violation_mask(ld.clf.equilibrium(), delta, cfg.verify.r0);
    let roa = find_roa(&field, &mask, ld.clf.equilibrium(), cfg.roa_options())?;
    Ok((field, roa, delta))
}

pub fn cmd_roa(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<RoaResult<f64>, CliError> {
    ensure_dir(out)?;
    let ld = load_checked(cfg, checkpoint)?;
    let (field, roa, delta) = compute_roa(cfg, &ld)?;
    output::write_roa(&out.join("roa.csv"), &roa, delta)?;
    output::write_grid(&out.join("grid.csv"), &field)?;
    output::write_contour(&out.join("contour.csv"), &roa.contour)?;
    println!("ROA level {:e}, area {}, {} contour points", roa.level, roa.area, roa.contour.len());
    Ok(roa)
}

/// Uniform draws inside the ROA contour with `V ≤ level`.
pub fn sample_in_roa(clf: &ClfCandidate<f64>, roa: &RoaResult<f64>, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, CliError> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &roa.contour {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1_000_000 {
            return Err(CliError::Usage("could not draw initial states inside the ROA".into()));
        }
        let p = [lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(), lo[1] + (hi[1] - lo[1]) * rng.random::<f64>()];
        if point_in_polygon(&roa.contour, p) && clf.value(&p)? <= roa.level {
            out.push(p.to_vec());
        }
    }
    Ok(out)
}

pub struct RolloutSummary {
    pub start: Vec<f64>,
    pub steps: usize,
    pub final_distance: f64,
    pub max_value_increase: f64,
    pub diverged: bool,
}

pub fn cmd_simulate(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Vec<RolloutSummary>, CliError> {
    ensure_dir(out)?;
    let ld = load_checked(cfg, checkpoint)?;
    let sim = cfg.sim_config()?;
    let starts = if cfg.simulate.initial_states.is_empty() {
        let (_, roa, _) = compute_roa(cfg, &ld)?;
        sample_in_roa(&ld.clf, &roa, cfg.simulate.samples, cfg.simulate.seed)?
    } else {
        cfg.simulate.initial_states.clone()
    };
    let eq = ld.system.equilibrium().to_vec();
    let mut summaries = Vec::with_capacity(starts.len());
    for (i, s0) in starts.iter().enumerate() {
        let (traj, diverged) = match simulate(&ld.system, &ld.controller, &ld.clf, ld.system.region(), s0, &sim) {
            Ok(t) => (t, false),
            Err(SimError::Diverged { partial, .. }) => (partial, true),
            Err(SimError::Other(e)) => return Err(e.into()),
        };
        output::write_trajectory(&out.join(format!("trajectory_{i}.csv")), &traj)?;
        let last = traj.last_state().unwrap_or(s0);
        let final_distance = last.iter().zip(&eq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        summaries.push(RolloutSummary { start: s0.clone(), steps: traj.len(), final_distance, max_value_increase: traj.max_value_increase(), diverged });
    }
    let n = ld.system.state_dim();
    let mut cols: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    cols.extend(["steps", "final_distance", "max_value_increase", "diverged"].map(String::from));
    let rows = summaries.iter().map(|r| {
        let mut row: Vec<String> = r.start.iter().map(|x| x.to_string()).collect();
        row.extend([r.steps.to_string(), r.final_distance.to_string(), r.max_value_increase.to_string(), r.diverged.to_string()]);
        row
    });
    output::write_rows(&out.join("simulation.csv"), &cols, rows)?;
    let diverged = summaries.iter().filter(|r| r.diverged).count();
    println!("simulated {} rollouts, {diverged} diverged", summaries.len());
    Ok(summaries)
}
