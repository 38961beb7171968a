//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! fails if any criterion fails.
//!
//! Long variants run only with `--include-ignored` (or `--ignored`), matching
//! the flags of the default test harness. A substring argument filters
//! criteria by name.

use chb_core::diagnostics::{
    conservation_report, contraction_bound, estimate_c_inv, estimate_contraction,
    ConvergenceConstants, DualNormContext,
};
use chb_core::discretization::initial_state;
use chb_core::linalg::{dot, norm2};
use chb_core::solvers::newton_solve;
use chb_core::{
    run_simulation, Discretization, Field, MaterialParams, Mesh, RunRecord, ScalarSource, Scheme,
    SolverConfig, SourceData, State, SystemKind, TimeDisc,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    long: bool,
    run: fn() -> Outcome,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(scheme: Scheme, time_disc: TimeDisc, n_steps: usize) -> SolverConfig {
    SolverConfig {
        scheme,
        time_disc,
        n_steps,
        ..SolverConfig::default()
    }
}

fn run(cfg: &SolverConfig, n: usize, params: &MaterialParams, sources: &SourceData) -> RunRecord {
    let mesh = Mesh::build(n).unwrap();
    let rec = run_simulation(cfg, &mesh, params, sources).unwrap();
    if let Some(e) = &rec.abort {
        println!("    note: run aborted: {e}");
    }
    rec
}

fn averaged(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = 0.5 * (a[i][j] + b[i][j]);
        }
    }
    c
}

fn energy_dissipation() -> Outcome {
    let d = MaterialParams::default();
    let params = MaterialParams {
        modulus_minus: 0.55,
        modulus_plus: 0.55,
        alpha_minus: 0.55,
        alpha_plus: 0.55,
        c_minus: averaged(&d.c_minus, &d.c_plus),
        c_plus: averaged(&d.c_minus, &d.c_plus),
        ..d
    };
    let rec = run(
        &config(Scheme::Split2, TimeDisc::SemiImplicit, 100),
        32,
        &params,
        &SourceData::default(),
    );
    let worst = rec
        .steps
        .windows(2)
        .map(|w| w[1].energies.total - w[0].energies.total)
        .fold(f64::NEG_INFINITY, f64::max);
    check(
        rec.steps.len() == 101 && worst <= 1e-10,
        format!(
            "{} steps, largest energy change {worst:e}, E: {:.6} -> {:.6}",
            rec.steps.len() - 1,
            rec.steps[0].energies.total,
            rec.steps.last().unwrap().energies.total
        ),
    )
}

fn l2_distance(disc: &Discretization, a: &State, b: &State, f: Field) -> f64 {
    let d: Vec<f64> = a.field(f).iter().zip(b.field(f)).map(|(x, y)| x - y).collect();
    disc.mass().bilinear(&d, &d).max(0.0).sqrt()
}

fn scheme_equivalence() -> Outcome {
    let n = 16;
    let tight = |scheme| SolverConfig {
        tol: 1e-22,
        newton_tol: 1e-12,
        max_iter: 1000,
        ..config(scheme, TimeDisc::SemiImplicit, 10)
    };
    let params = MaterialParams::default();
    let sources = SourceData::default();
    let mono = run(&tight(Scheme::Mono), n, &params, &sources);
    let disc = Discretization::new(
        Mesh::build(n).unwrap(),
        params.clone(),
        sources.clone(),
        1e-3,
        TimeDisc::SemiImplicit,
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut converged = mono.all_converged();
    for scheme in [Scheme::Split2, Scheme::Split3] {
        let rec = run(&tight(scheme), n, &params, &sources);
        converged &= rec.all_converged();
        for f in Field::ALL {
            worst = worst.max(l2_distance(&disc, &rec.final_state, &mono.final_state, f));
        }
    }
    check(
        converged && worst <= 1e-5,
        format!("all runs converged: {converged}; largest per-field L2 gap {worst:e}"),
    )
}

fn c_inv_h_uniform(params: &MaterialParams) -> f64 {
    let coarse = Mesh::build(8).unwrap();
    let a = estimate_c_inv(&coarse, params.mobility).unwrap();
    let b = estimate_c_inv(&coarse, params.kappa).unwrap();
    a.max(b)
}

fn linear_contraction() -> Outcome {
    let n = 64;
    let params = MaterialParams::default();
    let cfg = SolverConfig {
        trace_potential: true,
        ..config(Scheme::Split2, TimeDisc::SemiImplicit, 20)
    };
    let rec = run(&cfg, n, &params, &SourceData::default());
    let k = ConvergenceConstants::from_params(&params, c_inv_h_uniform(&params));
    let bound = contraction_bound(&k, &params, cfg.tau, Mesh::build(n).unwrap().h)
        .map_err(|e| format!("bound unavailable: {e}"))?;
    let mut worst = 0.0f64;
    for step in 1..=cfg.n_steps {
        let trace = rec
            .potential_trace(step)
            .ok_or_else(|| format!("step {step}: no potential trace"))?;
        let ratio = estimate_contraction(&trace)
            .map_err(|e| format!("step {step} ({} potentials): {e}", trace.len()))?;
        if !(ratio < 1.0 && ratio <= bound.rate) {
            return Err(format!(
                "step {step}: fitted ratio {ratio} vs bound {}",
                bound.rate
            ));
        }
        worst = worst.max(ratio);
    }
    Ok(format!(
        "largest fitted ratio {worst:.4} <= bound {:.6} (beta_ch {:.3e}, beta_b {:.3e}, L_ch {:.1})",
        bound.rate, bound.beta_ch, bound.beta_b, bound.l_ch
    ))
}

fn conservation() -> Outcome {
    let n = 64;
    let mesh = Mesh::build(n).unwrap();
    let params = MaterialParams::default();
    let plain = run(
        &config(Scheme::Split2, TimeDisc::SemiImplicit, 100),
        n,
        &params,
        &SourceData::default(),
    );
    let a = conservation_report(&plain, &mesh).unwrap();
    let sources = SourceData {
        r: ScalarSource::Uniform(1.0),
        ..SourceData::default()
    };
    let with_r = run(
        &config(Scheme::Split2, TimeDisc::SemiImplicit, 10),
        n,
        &params,
        &sources,
    );
    let b = conservation_report(&with_r, &mesh).unwrap();
    let tau_gap = b
        .phi_increments
        .iter()
        .fold(0.0f64, |acc, v| acc.max((v - 1e-3).abs()));
    check(
        a.phi_increments.len() == 100
            && a.max_phi_drift <= 1e-9
            && a.max_theta_drift <= 1e-9
            && tau_gap <= 1e-9,
        format!(
            "zero sources: drift phi {:e}, theta {:e}; R = 1: |increment - tau| <= {tau_gap:e}",
            a.max_phi_drift, a.max_theta_drift
        ),
    )
}

/// Random state with homogeneous Dirichlet displacement, the set every
/// solver iterate lives in.
fn random_state(mesh: &Mesh, rng: &mut ChaCha8Rng) -> State {
    let mut s = State::zeros(mesh.n_vertices());
    for v in s.phi.iter_mut() {
        *v = rng.random_range(-1.3..1.3);
    }
    for f in [Field::Mu, Field::Ux, Field::Uy, Field::Theta, Field::P] {
        for v in s.field_mut(f).iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    for (i, &b) in mesh.boundary_vertex.iter().enumerate() {
        if b {
            s.ux[i] = 0.0;
            s.uy[i] = 0.0;
        }
    }
    s
}

fn jacobian_correctness() -> Outcome {
    let mesh = Mesh::build(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for disc_kind in [TimeDisc::SemiImplicit, TimeDisc::Implicit] {
        let sources = SourceData {
            r: ScalarSource::Uniform(0.3),
            s_f: ScalarSource::Uniform(-0.2),
            f: [ScalarSource::Uniform(0.1), ScalarSource::Uniform(-0.4)],
        };
        let disc = Discretization::new(
            mesh.clone(),
            MaterialParams::default(),
            sources,
            1e-3,
            disc_kind,
        )
        .unwrap();
        for _ in 0..5 {
            let current = random_state(&mesh, &mut rng);
            let previous = random_state(&mesh, &mut rng);
            let lagged = random_state(&mesh, &mut rng);
            for kind in SystemKind::ALL {
                let j = disc.jacobian(kind, &current, &previous, &lagged).unwrap();
                let x = current.gather(kind);
                let v = random_state(&mesh, &mut rng).gather(kind);
                let eval = |t: f64| {
                    let mut s = current.clone();
                    let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + t * b).collect();
                    s.scatter(kind, &y);
                    disc.residual(kind, &s, &previous, &lagged).unwrap()
                };
                let eps = 1e-6;
                let (rp, rm) = (eval(eps), eval(-eps));
                let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
                let jv = j.matvec(&v);
                let diff: Vec<f64> = fd.iter().zip(&jv).map(|(a, b)| a - b).collect();
                let rel = norm2(&diff) / norm2(&jv).max(norm2(&fd)).max(1e-300);
                worst = worst.max(rel);
                checks += 1;
                if rel > 1e-5 {
                    return Err(format!("{kind:?} ({disc_kind:?}): relative mismatch {rel:e}"));
                }
            }
        }
    }
    Ok(format!("{checks} directional checks, worst relative mismatch {worst:e}"))
}

fn strictly_monotone(v: &[usize], increasing: bool) -> bool {
    v.windows(2)
        .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

fn sweep(param: &str, values: &[f64], scheme: Scheme, disc: TimeDisc, n: usize) -> Vec<RunRecord> {
    values
        .iter()
        .map(|&v| {
            let mut params = MaterialParams::default();
            match param {
                "gamma" => params.gamma = v,
                _ => params.xi = v,
            }
            let start = Instant::now();
            let rec = run(&config(scheme, disc, 100), n, &params, &SourceData::default());
            println!(
                "    {param} = {v}: {} {}, {} outer iterations, converged {}, {:.0}s",
                scheme.name(),
                disc.name(),
                rec.total_outer_iterations(),
                rec.all_converged(),
                start.elapsed().as_secs_f64()
            );
            rec
        })
        .collect()
}

const GAMMAS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const XIS: [f64; 4] = [0.0625, 0.125, 0.25, 0.5];

fn gamma_trend(n: usize, banded: bool) -> Outcome {
    let recs = sweep("gamma", &GAMMAS, Scheme::Split2, TimeDisc::SemiImplicit, n);
    let totals: Vec<usize> = recs.iter().map(|r| r.total_outer_iterations()).collect();
    let converged = recs.iter().all(|r| r.all_converged());
    let trend = strictly_monotone(&totals, false);
    let at_one = totals[2] as f64;
    let in_band = (at_one - 571.0).abs() <= 0.4 * 571.0;
    let ok = converged && trend && (!banded || in_band);
    let band = if banded {
        format!(", gamma = 1 total {at_one} vs 571 +-40%: {in_band}")
    } else {
        String::new()
    };
    check(
        ok,
        format!("mesh {n}, totals {totals:?}, strictly decreasing: {trend}{band}"),
    )
}

fn gamma_sweep_trend() -> Outcome {
    gamma_trend(32, false)
}

fn gamma_sweep_banded() -> Outcome {
    gamma_trend(64, true)
}

fn xi_sweep_trend() -> Outcome {
    // mesh 32 does not resolve the interface width, which reverses the
    // semi/implicit ordering at the largest swelling
    let n = 64;
    let semi = sweep("xi", &XIS, Scheme::Split2, TimeDisc::SemiImplicit, n);
    let implicit = sweep("xi", &XIS, Scheme::Split2, TimeDisc::Implicit, n);
    let semi_totals: Vec<usize> = semi.iter().map(|r| r.total_outer_iterations()).collect();
    let trend = strictly_monotone(&semi_totals, true) && semi.iter().all(|r| r.all_converged());
    let mut dominated = true;
    for (s, i) in semi.iter().zip(&implicit) {
        if i.all_converged() {
            dominated &= s.total_outer_iterations() <= i.total_outer_iterations();
        }
    }
    let implicit_totals: Vec<String> = implicit
        .iter()
        .map(|r| {
            let mark = if r.all_converged() { "" } else { "*" };
            format!("{}{mark}", r.total_outer_iterations())
        })
        .collect();

    // the fully implicit monolithic solve at the largest swelling is allowed to fail
    let mesh = Mesh::build(n).unwrap();
    let mut params = MaterialParams::default();
    params.xi = 0.5;
    let mut sim = chb_core::Simulation::new(
        config(Scheme::Mono, TimeDisc::Implicit, 100),
        mesh,
        params,
        SourceData::default(),
    )
    .unwrap();
    let mut mono = "converged on all 100 steps".to_string();
    for step in 1..=100 {
        match sim.step() {
            Ok(r) if r.converged => {}
            Ok(_) => {
                mono = format!("did not converge at step {step}");
                break;
            }
            Err(e) => {
                mono = format!("failed at step {step}: {e}");
                break;
            }
        }
    }
    check(
        trend && dominated,
        format!(
            "mesh {n}, semi totals {semi_totals:?} strictly increasing: {trend}; \
             implicit totals [{}] (* = not converged), semi <= implicit: {dominated}; \
             implicit mono at xi = 0.5 {mono}",
            implicit_totals.join(", ")
        ),
    )
}

fn newton_superlinear() -> Outcome {
    let mesh = Mesh::build(64).unwrap();
    let disc = Discretization::new(
        mesh.clone(),
        MaterialParams::default(),
        SourceData::default(),
        1e-3,
        TimeDisc::SemiImplicit,
    )
    .unwrap();
    let s0 = initial_state(&mesh);
    let out = newton_solve(&disc, SystemKind::ChSubsystem, &s0, &s0, &s0, 1e-10, 50)
        .map_err(|e| e.to_string())?;
    let h = &out.residual_history;
    if h.len() < 4 {
        return Err(format!("history too short: {h:?}"));
    }
    // least-squares order over the last three iterations: log r_{k+1} = log C + p log r_k
    let w = &h[h.len() - 4..];
    let xs: Vec<f64> = w[..3].iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = w[1..].iter().map(|r| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let order = sxy / sxx;
    let c = (my - order * mx).exp();
    let ratios_shrink = w.windows(3).all(|t| t[2] / t[1] < t[1] / t[0]);
    check(
        order >= 1.5 && ratios_shrink,
        format!(
            "residuals {:?}, fitted order {order:.2}, C {c:.3e}",
            h.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn dual_norm_properties() -> Outcome {
    let mesh = Mesh::build(8).unwrap();
    let ctx = DualNormContext::new(&mesh).unwrap();
    let disc = Discretization::new(
        mesh.clone(),
        MaterialParams::default(),
        SourceData::default(),
        1e-3,
        TimeDisc::SemiImplicit,
    )
    .unwrap();
    let lumped = mesh.lumped_mass();
    let total: f64 = lumped.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c_inv = estimate_c_inv(&mesh, 1.0).unwrap();
    let mut worst_inverse = 0.0f64;
    for _ in 0..100 {
        let mut q: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = dot(&q, &lumped) / total;
        q.iter_mut().for_each(|v| *v -= mean);
        let base = ctx.dual_norm_sq(&q, 1.0).unwrap();
        let c: f64 = rng.random_range(-5.0..5.0);
        let scaled: Vec<f64> = q.iter().map(|v| c * v).collect();
        let s = ctx.dual_norm_sq(&scaled, 1.0).unwrap();
        if (s - c * c * base).abs() > 1e-10 * c * c * base {
            return Err(format!("quadratic scaling: {s} vs {}", c * c * base));
        }
        let y: f64 = rng.random_range(0.05..20.0);
        let w = ctx.dual_norm_sq(&q, y).unwrap();
        if (w - base / y).abs() > 1e-10 * base / y {
            return Err(format!("coefficient scaling: {w} vs {}", base / y));
        }
        // inverse inequality |q|_{L2} <= C_inv / h |q|_{V'}
        let l2 = disc.mass().bilinear(&q, &q).sqrt();
        let lhs = l2 * mesh.h / (c_inv * base.sqrt());
        worst_inverse = worst_inverse.max(lhs);
        if lhs > 1.0 + 1e-8 {
            return Err(format!("inverse inequality violated by factor {lhs}"));
        }
        // Cauchy-Schwarz against the seminorm: (q, v)^2 <= |q|^2_{V'} y |grad v|^2
        let v: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pairing = dot(&disc.mass().matvec(&q), &v);
        let semi = disc.stiffness().bilinear(&v, &v);
        if pairing * pairing > w * y * semi * (1.0 + 1e-10) {
            return Err("dual pairing exceeds the product of norms".into());
        }
    }
    Ok(format!(
        "100 vectors; C_inv = {c_inv:.4}; largest inverse-inequality ratio {worst_inverse:.6}"
    ))
}

fn fluctuation_logging() -> Outcome {
    let mut params = MaterialParams::default();
    params.gamma = 0.25;
    let rec = run(
        &config(Scheme::Split2, TimeDisc::SemiImplicit, 100),
        64,
        &params,
        &SourceData::default(),
    );
    let largest = rec
        .energy_violations
        .iter()
        .map(|v| v.increase)
        .fold(0.0f64, f64::max);
    let logged = rec.energy_violations.iter().all(|v| v.increase > 0.0 && v.step >= 1);
    check(
        rec.abort.is_none() && rec.steps.len() == 101 && logged,
        format!(
            "completed {} steps, {} logged energy increases (largest {largest:e})",
            rec.steps.len() - 1,
            rec.energy_violations.len()
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let include_long = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let only_long = args.iter().any(|a| a == "--ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let criteria = [
        Criterion { name: "1 energy dissipation with constant parameters", long: false, run: energy_dissipation },
        Criterion { name: "2 split schemes match the monolithic solve", long: false, run: scheme_equivalence },
        Criterion { name: "3 linear contraction of the potential", long: false, run: linear_contraction },
        Criterion { name: "4 conservation of phase and fluid content", long: false, run: conservation },
        Criterion { name: "5 Jacobians agree with finite differences", long: false, run: jacobian_correctness },
        Criterion { name: "6 gamma sweep trend", long: false, run: gamma_sweep_trend },
        Criterion { name: "6 gamma sweep trend and iteration band on mesh 64", long: true, run: gamma_sweep_banded },
        Criterion { name: "7 xi sweep trend", long: false, run: xi_sweep_trend },
        Criterion { name: "8 superlinear Newton on the phase-field subsystem", long: false, run: newton_superlinear },
        Criterion { name: "9 dual-norm machinery", long: false, run: dual_norm_properties },
        Criterion { name: "10 energy fluctuations are logged, not fatal", long: false, run: fluctuation_logging },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        if (c.long && !include_long) || (!c.long && only_long) {
            println!("criterion {}: SKIPPED (long variant; pass --include-ignored)", c.name);
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS ({secs:.1}s) {detail}", c.name),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL ({secs:.1}s) {detail}", c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
