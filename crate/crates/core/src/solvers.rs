//! Per-step nonlinear solvers and the time loop.

use crate::diagnostics::DualNormContext;
use crate::discretization::{Discretization, State, StepContext, SystemKind, TimeDisc};
use crate::error::{Error, Result};
use crate::linalg::{norm_inf, DirectSolver};
use crate::mesh::Mesh;
use crate::physics::{self, Energies, MaterialParams, SourceData};
use std::collections::HashMap;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Newton on the fully coupled system.
    Mono,
    /// Alternating minimization between the phase-field and Biot blocks.
    Split2,
    /// Phase field, then elasticity, then flow.
    Split3,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Mono, Scheme::Split2, Scheme::Split3];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mono => "mono",
            Scheme::Split2 => "split2",
            Scheme::Split3 => "split3",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scheme> {
        match s {
            "mono" => Ok(Scheme::Mono),
            "split2" => Ok(Scheme::Split2),
            "split3" => Ok(Scheme::Split3),
            _ => Err(Error::InvalidArgument(format!("unknown scheme '{s}'"))),
        }
    }
}

impl TimeDisc {
    pub fn name(self) -> &'static str {
        match self {
            TimeDisc::SemiImplicit => "semi",
            TimeDisc::Implicit => "implicit",
        }
    }
}

impl std::str::FromStr for TimeDisc {
    type Err = Error;
    fn from_str(s: &str) -> Result<TimeDisc> {
        match s {
            "semi" | "semi-implicit" => Ok(TimeDisc::SemiImplicit),
            "implicit" => Ok(TimeDisc::Implicit),
            _ => Err(Error::InvalidArgument(format!("unknown time discretization '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub time_disc: TimeDisc,
    pub tau: f64,
    pub n_steps: usize,
    /// Outer tolerance on the squared increment.
    pub tol: f64,
    pub max_iter: usize,
    /// Inner Newton tolerance on the residual max-norm.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Record the step potential after every outer iteration.
    pub trace_potential: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Split2,
            time_disc: TimeDisc::SemiImplicit,
            tau: 1e-3,
            n_steps: 100,
            tol: 1e-6,
            max_iter: 100,
            newton_tol: 1e-10,
            newton_max: 50,
            trace_potential: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.tol > 0.0) || !(self.newton_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.max_iter == 0 || self.newton_max == 0 {
            return Err(Error::InvalidArgument("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub increment_norm_sq: f64,
    /// Potential after the full outer iteration.
    pub potential: Option<f64>,
    /// Potential after the phase-field half-step (splitting schemes only).
    pub potential_half: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: State,
    pub outer_iterations: usize,
    pub converged: bool,
    pub per_iteration: Vec<IterationRecord>,
    /// Potential at the previous-step state, the starting point of the iteration.
    pub initial_potential: Option<f64>,
    pub newton_iterations: usize,
}

/// Incremental stopping test: squared L2 norms of the changes in phi, u and p.
pub fn stopping_test(disc: &Discretization, prev: &State, curr: &State, tol: f64) -> (bool, f64) {
    let m = disc.mass();
    let mut total = 0.0;
    for (a, b) in [
        (&prev.phi, &curr.phi),
        (&prev.ux, &curr.ux),
        (&prev.uy, &curr.uy),
        (&prev.p, &curr.p),
    ] {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        total += m.bilinear(&d, &d);
    }
    (total < tol, total)
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub state: State,
    pub iterations: usize,
    /// Residual max-norms, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

/// Full-step Newton on `kind` until the residual max-norm is at most `newton_tol`.
#[allow(clippy::too_many_arguments)]
pub fn newton_solve(
    disc: &Discretization,
    kind: SystemKind,
    initial_guess: &State,
    previous: &State,
    lagged: &State,
    newton_tol: f64,
    newton_max: usize,
) -> Result<NewtonOutcome> {
    let ctx = disc.step_context(previous)?;
    newton_with(disc, kind, initial_guess, previous, lagged, &ctx, newton_tol, newton_max, &mut DirectSolver::new())
}

#[allow(clippy::too_many_arguments)]
fn newton_with(
    disc: &Discretization,
    kind: SystemKind,
    initial_guess: &State,
    previous: &State,
    lagged: &State,
    ctx: &StepContext,
    newton_tol: f64,
    newton_max: usize,
    solver: &mut DirectSolver,
) -> Result<NewtonOutcome> {
    let mut state = initial_guess.compose(kind, lagged);
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = disc.residual_with(kind, &state, previous, lagged, ctx)?;
        let rn = norm_inf(&r);
        history.push(rn);
        if !rn.is_finite() {
            return Err(Error::NonConvergence { iterations, residual: rn });
        }
        if rn <= newton_tol {
            return Ok(NewtonOutcome {
                state,
                iterations,
                residual_history: history,
            });
        }
        if iterations == newton_max {
            return Err(Error::NonConvergence { iterations, residual: rn });
        }
        let j = disc.jacobian(kind, &state, previous, lagged)?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = solver.factorize(j)?.solve(&neg)?;
        let mut x = state.gather(kind);
        x.iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
        state.scatter(kind, &x);
        iterations += 1;
    }
}

/// Stateful time stepper holding the discretization and cached factorization data.
pub struct Simulation {
    disc: Discretization,
    cfg: SolverConfig,
    state: State,
    step_index: usize,
    solvers: HashMap<SystemKind, DirectSolver>,
    dual: Option<DualNormContext>,
}

fn is_soft(e: &Error) -> bool {
    matches!(e, Error::NonConvergence { .. })
}

impl Simulation {
    pub fn new(
        cfg: SolverConfig,
        mesh: Mesh,
        params: MaterialParams,
        sources: SourceData,
    ) -> Result<Simulation> {
        cfg.validate()?;
        let state = crate::discretization::initial_state(&mesh);
        let disc = Discretization::new(mesh, params, sources, cfg.tau, cfg.time_disc)?;
        let dual = if cfg.trace_potential {
            Some(DualNormContext::new(disc.mesh())?)
        } else {
            None
        };
        Ok(Simulation {
            disc,
            cfg,
            state,
            step_index: 0,
            solvers: HashMap::new(),
            dual,
        })
    }

    pub fn with_state(mut self, state: State) -> Result<Simulation> {
        if state.n_vertices() != self.disc.mesh().n_vertices() {
            return Err(Error::InvalidArgument("state does not match mesh".into()));
        }
        self.state = state;
        Ok(self)
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.cfg.tau
    }

    pub fn energies(&self) -> Energies {
        physics::free_energy(self.disc.mesh(), &self.state, self.disc.params())
    }

    /// Advances one time step and accepts the result, converged or not.
    pub fn step(&mut self) -> Result<StepResult> {
        let previous = self.state.clone();
        let result = self.solve_step(&previous)?;
        self.state = result.state.clone();
        self.step_index += 1;
        Ok(result)
    }

    /// Solves one step from `previous` without advancing.
    pub fn solve_step(&mut self, previous: &State) -> Result<StepResult> {
        match self.cfg.scheme {
            Scheme::Mono => self.step_monolithic(previous),
            Scheme::Split2 => self.step_split(previous, false),
            Scheme::Split3 => self.step_split(previous, true),
        }
    }

    fn potential(&self, candidate: &State, previous: &State) -> Result<Option<f64>> {
        match &self.dual {
            None => Ok(None),
            Some(dual) => physics::potential_semi_implicit(
                self.disc.mesh(),
                candidate,
                previous,
                self.disc.params(),
                self.disc.sources(),
                self.disc.tau(),
                dual,
            )
            .map(Some),
        }
    }

    fn newton(
        &mut self,
        kind: SystemKind,
        guess: &State,
        previous: &State,
        lagged: &State,
        ctx: &StepContext,
    ) -> Result<NewtonOutcome> {
        let solver = self.solvers.entry(kind).or_default();
        newton_with(
            &self.disc,
            kind,
            guess,
            previous,
            lagged,
            ctx,
            self.cfg.newton_tol,
            self.cfg.newton_max,
            solver,
        )
    }

    fn step_monolithic(&mut self, previous: &State) -> Result<StepResult> {
        let kind = SystemKind::monolithic(self.cfg.time_disc);
        let ctx = self.disc.step_context(previous)?;
        let initial_potential = self.potential(previous, previous)?;
        let mut state = previous.clone();
        let mut per_iteration = Vec::new();
        let mut best: (f64, State) = (f64::INFINITY, state.clone());
        let mut passed = false;
        let mut k = 0;
        let converged = loop {
            let r = self.disc.residual_with(kind, &state, previous, &state, &ctx)?;
            let rn = norm_inf(&r);
            if !rn.is_finite() {
                break false;
            }
            if rn < best.0 {
                best = (rn, state.clone());
            }
            if rn <= self.cfg.newton_tol && (k == 0 || passed) {
                break true;
            }
            if k == self.cfg.max_iter {
                break false;
            }
            let j = self.disc.jacobian(kind, &state, previous, &state)?;
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = self.solvers.entry(kind).or_default().factorize(j)?.solve(&neg)?;
            let mut next = state.clone();
            let mut x = next.gather(kind);
            x.iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
            next.scatter(kind, &x);
            if !next.is_finite() {
                break false;
            }
            let (p, inc) = stopping_test(&self.disc, &state, &next, self.cfg.tol);
            passed = p;
            k += 1;
            let potential = self.potential(&next, previous).unwrap_or(None);
            per_iteration.push(IterationRecord {
                increment_norm_sq: inc,
                potential,
                potential_half: None,
            });
            state = next;
        };
        let state = if converged { state } else { best.1 };
        Ok(StepResult {
            state,
            outer_iterations: k,
            converged,
            per_iteration,
            initial_potential,
            newton_iterations: k,
        })
    }

    fn step_split(&mut self, previous: &State, three_way: bool) -> Result<StepResult> {
        let ctx = self.disc.step_context(previous)?;
        let initial_potential = self.potential(previous, previous)?;
        let mut cur = previous.clone();
        let mut per_iteration = Vec::new();
        let mut newton_iterations = 0;
        let mut converged = false;
        let mut outer = 0;
        while outer < self.cfg.max_iter {
            outer += 1;
            let old = cur.clone();
            let ch = match self.newton(SystemKind::ChSubsystem, &old, previous, &old, &ctx) {
                Ok(o) => o,
                Err(e) if is_soft(&e) => {
                    log::warn!("phase-field Newton failed in outer iteration {outer}: {e}");
                    break;
                }
                Err(e) => return Err(e),
            };
            newton_iterations += ch.iterations;
            cur = ch.state;
            let potential_half = self.potential(&cur, previous)?;
            let blocks: &[SystemKind] = if three_way {
                &[SystemKind::ElasticityOnly, SystemKind::FlowOnly]
            } else {
                &[SystemKind::BiotSubsystem]
            };
            for &kind in blocks {
                let o = self.newton(kind, &cur, previous, &cur, &ctx)?;
                newton_iterations += o.iterations;
                cur = o.state;
            }
            let (passed, inc) = stopping_test(&self.disc, &old, &cur, self.cfg.tol);
            let potential = self.potential(&cur, previous)?;
            per_iteration.push(IterationRecord {
                increment_norm_sq: inc,
                potential,
                potential_half,
            });
            if passed {
                converged = true;
                break;
            }
        }
        Ok(StepResult {
            state: cur,
            outer_iterations: outer,
            converged,
            per_iteration,
            initial_potential,
            newton_iterations,
        })
    }
}

/// One row of the per-step log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub time: f64,
    pub energies: Energies,
    pub outer_iterations: usize,
    pub converged: bool,
    pub wall_s: f64,
    /// Lumped integrals used by the conservation report.
    pub phi_integral: f64,
    pub theta_integral: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRow {
    pub step: usize,
    pub iter: usize,
    pub increment_norm_sq: f64,
    pub potential: Option<f64>,
    pub potential_half: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyViolation {
    pub step: usize,
    pub increase: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: SolverConfig,
    pub params: MaterialParams,
    pub sources: SourceData,
    pub mesh_n: usize,
    /// Row 0 holds the initial state; row `k` the state after step `k`.
    pub steps: Vec<StepRow>,
    pub iterations: Vec<IterRow>,
    /// Potential at the start of each step's iteration, indexed by step.
    pub initial_potentials: Vec<Option<f64>>,
    pub energy_violations: Vec<EnergyViolation>,
    pub final_state: State,
    /// Hard failure that ended the run early.
    pub abort: Option<Error>,
}

impl RunRecord {
    pub fn all_converged(&self) -> bool {
        self.abort.is_none() && self.steps.iter().all(|r| r.converged)
    }

    pub fn total_outer_iterations(&self) -> usize {
        self.steps.iter().map(|r| r.outer_iterations).sum()
    }

    pub fn total_wall_time(&self) -> f64 {
        self.steps.iter().map(|r| r.wall_s).sum()
    }

    /// Potential trace `H_0, H_1, ..` of one step, when it was recorded.
    pub fn potential_trace(&self, step: usize) -> Option<Vec<f64>> {
        let mut out = vec![(*self.initial_potentials.get(step)?)?];
        for row in self.iterations.iter().filter(|r| r.step == step) {
            out.push(row.potential?);
        }
        Some(out)
    }
}

/// Slack for flagging an energy increase as a dissipation violation.
pub const ENERGY_SLACK: f64 = 1e-10;

fn step_row(sim: &Simulation, step: usize, outer: usize, converged: bool, wall_s: f64) -> StepRow {
    let m = sim.discretization().lumped_mass();
    let s = sim.state();
    StepRow {
        step,
        time: step as f64 * sim.config().tau,
        energies: sim.energies(),
        outer_iterations: outer,
        converged,
        wall_s,
        phi_integral: crate::linalg::dot(&s.phi, m),
        theta_integral: crate::linalg::dot(&s.theta, m),
    }
}

/// Runs `cfg.n_steps` steps from the initial state.
///
/// Setup errors are returned directly; a hard failure during stepping ends
/// the run and is stored in [`RunRecord::abort`] next to the partial log.
pub fn run_simulation(
    cfg: &SolverConfig,
    mesh: &Mesh,
    params: &MaterialParams,
    sources: &SourceData,
) -> Result<RunRecord> {
    let mut sim = Simulation::new(cfg.clone(), mesh.clone(), params.clone(), sources.clone())?;
    let mut record = RunRecord {
        config: cfg.clone(),
        params: params.clone(),
        sources: sources.clone(),
        mesh_n: mesh.n_cells_per_side,
        steps: vec![step_row(&sim, 0, 0, true, 0.0)],
        iterations: Vec::new(),
        initial_potentials: vec![None],
        energy_violations: Vec::new(),
        final_state: sim.state().clone(),
        abort: None,
    };
    for step in 1..=cfg.n_steps {
        let start = Instant::now();
        let result = match sim.step() {
            Ok(r) => r,
            Err(e) => {
                log::error!("step {step} aborted: {e}");
                record.abort = Some(e);
                break;
            }
        };
        let wall = start.elapsed().as_secs_f64();
        if !result.converged {
            log::warn!(
                "step {step} did not converge within {} outer iterations",
                result.outer_iterations
            );
        }
        for (i, it) in result.per_iteration.iter().enumerate() {
            record.iterations.push(IterRow {
                step,
                iter: i + 1,
                increment_norm_sq: it.increment_norm_sq,
                potential: it.potential,
                potential_half: it.potential_half,
            });
        }
        record.initial_potentials.push(result.initial_potential);
        let row = step_row(&sim, step, result.outer_iterations, result.converged, wall);
        let before = record.steps.last().unwrap().energies.total;
        let increase = row.energies.total - before;
        if increase > ENERGY_SLACK {
            log::warn!("energy increased by {increase:e} in step {step}");
            record.energy_violations.push(EnergyViolation { step, increase });
        }
        record.steps.push(row);
    }
    record.final_state = sim.state().clone();
    Ok(record)
}
