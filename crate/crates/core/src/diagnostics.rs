//! Dual norms, theoretical contraction constants and run diagnostics.

use crate::error::{Error, Result};
use crate::linalg::{dot, AssemblyBuffer, MeanConstrainedSolver, SparseMatrix};
use crate::mesh::Mesh;
use crate::physics::{MaterialParams, Voigt};
use crate::solvers::RunRecord;
use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

fn assemble(mesh: &Mesh, stiffness: bool) -> Result<SparseMatrix> {
    let n = mesh.n_vertices();
    let mut buf = AssemblyBuffer::with_capacity(n, n, 9 * mesh.n_triangles());
    for (tri, el) in mesh.elements() {
        let k = if stiffness { el.stiffness() } else { el.mass() };
        for a in 0..3 {
            for b in 0..3 {
                buf.push(tri[a], tri[b], k[a][b]);
            }
        }
    }
    buf.finalize()
}

/// Factorized Neumann Laplacian for repeated dual-norm evaluations on one mesh.
pub struct DualNormContext {
    mass: SparseMatrix,
    lumped: Vec<f64>,
    solver: MeanConstrainedSolver,
}

impl DualNormContext {
    pub fn new(mesh: &Mesh) -> Result<DualNormContext> {
        let mass = assemble(mesh, false)?;
        let stiffness = assemble(mesh, true)?;
        let lumped = mesh.lumped_mass();
        let solver = MeanConstrainedSolver::new(&stiffness, &lumped)?;
        Ok(DualNormContext {
            mass,
            lumped,
            solver,
        })
    }

    /// `|q|^2` in the dual of the `y`-weighted H^1 seminorm on zero-mean functions.
    pub fn dual_norm_sq(&self, q: &[f64], y: f64) -> Result<f64> {
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::InvalidArgument(format!("coefficient must be positive, got {y}")));
        }
        if q.len() != self.lumped.len() {
            return Err(Error::InvalidArgument("vector length does not match mesh".into()));
        }
        let mean: f64 = dot(q, &self.lumped);
        let scale: f64 = 1.0 + q.iter().zip(&self.lumped).map(|(a, m)| (a * m).abs()).sum::<f64>();
        if !(mean.abs() <= 1e-9 * scale) {
            return Err(Error::Compatibility { mean });
        }
        let b = self.mass.matvec(q);
        let v = self.solver.solve(&b)?;
        Ok((dot(&v, &b) / y).max(0.0))
    }
}

pub fn dual_norm_sq(mesh: &Mesh, q: &[f64], y: f64) -> Result<f64> {
    DualNormContext::new(mesh)?.dual_norm_sq(q, y)
}

/// Largest mesh for which the dense eigensolve is attempted.
pub const C_INV_MAX_CELLS: usize = 16;

/// Sharp inverse-inequality constant `h * max |q|_{L2} / |q|_{V'}` over zero-mean `q`.
///
/// The maximizer is the top generalized eigenvector of the stiffness and
/// mass matrices, so the constant is `h * sqrt(y * lambda_max)`.
pub fn estimate_c_inv(mesh: &Mesh, y: f64) -> Result<f64> {
    if mesh.n_cells_per_side > C_INV_MAX_CELLS {
        return Err(Error::ResourceGuard(format!(
            "dense eigensolve limited to n <= {C_INV_MAX_CELLS}, got {}",
            mesh.n_cells_per_side
        )));
    }
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::InvalidArgument(format!("coefficient must be positive, got {y}")));
    }
    let n = mesh.n_vertices();
    let to_dense = |a: &SparseMatrix| {
        let mut d = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in a.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    };
    let m = to_dense(&assemble(mesh, false)?);
    let k = to_dense(&assemble(mesh, true)?);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Domain("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("mass factor is singular".into()))?;
    let a = &l_inv * k * l_inv.transpose();
    let sym = (&a + a.transpose()) * 0.5;
    let lambda_max = SymmetricEigen::new(sym).eigenvalues.max();
    Ok(mesh.h * (y * lambda_max).sqrt())
}

/// Constants entering the linear-convergence bounds of the alternating minimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceConstants {
    pub c_inv: f64,
    pub c_omega: f64,
    pub c_stiff_lower: f64,
    pub c_stiff_upper: f64,
    pub c_t_lower: f64,
    pub c_t_upper: f64,
    pub c_m_lower: f64,
    pub c_m_upper: f64,
    pub c_alpha_lower: f64,
    pub c_alpha_upper: f64,
    pub l_psi_c: f64,
}

/// Extreme eigenvalues of a Voigt stiffness measured against the Frobenius
/// norm of the strain tensor, which weighs the engineering shear by 1/2.
pub fn stiffness_bounds(c: &Voigt) -> (f64, f64) {
    let scale = [1.0, 1.0, std::f64::consts::SQRT_2];
    let m = Matrix3::from_fn(|i, j| c[i][j] * scale[i] * scale[j]);
    let ev = SymmetricEigen::new(m).eigenvalues;
    (ev.min(), ev.max())
}

impl ConvergenceConstants {
    /// Constants for the given parameters; `c_inv` must be supplied and
    /// the Poincare constant is the unit-square value `1/pi`.
    pub fn from_params(params: &MaterialParams, c_inv: f64) -> ConvergenceConstants {
        // the interpolation is a convex combination, so the endpoints bound every state
        let (lo_m, hi_m) = stiffness_bounds(&params.c_minus);
        let (lo_p, hi_p) = stiffness_bounds(&params.c_plus);
        let t = params.xi.abs() * std::f64::consts::SQRT_2;
        ConvergenceConstants {
            c_inv,
            c_omega: 1.0 / std::f64::consts::PI,
            c_stiff_lower: lo_m.min(lo_p),
            c_stiff_upper: hi_m.max(hi_p),
            c_t_lower: t,
            c_t_upper: t,
            c_m_lower: params.modulus_minus.min(params.modulus_plus),
            c_m_upper: params.modulus_minus.max(params.modulus_plus),
            c_alpha_lower: params.alpha_minus.min(params.alpha_plus),
            c_alpha_upper: params.alpha_minus.max(params.alpha_plus),
            l_psi_c: crate::physics::psi_c_lipschitz(params.beta_cut),
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.c_inv,
            self.c_omega,
            self.c_stiff_lower,
            self.c_stiff_upper,
            self.c_t_lower,
            self.c_t_upper,
            self.c_m_lower,
            self.c_m_upper,
            self.c_alpha_lower,
            self.c_alpha_upper,
            self.l_psi_c,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain("convergence constants must be positive".into()));
        }
        if self.c_stiff_lower > self.c_stiff_upper
            || self.c_t_lower > self.c_t_upper
            || self.c_m_lower > self.c_m_upper
            || self.c_alpha_lower > self.c_alpha_upper
        {
            return Err(Error::Domain("lower constant exceeds upper constant".into()));
        }
        if self.c_alpha_upper > 1.0 {
            return Err(Error::Domain("Biot-Willis bound exceeds 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionBound {
    pub rate: f64,
    pub beta_ch: f64,
    pub beta_b: f64,
    pub l_ch: f64,
    pub l_b: f64,
}

/// Guaranteed per-iteration contraction of the potential gap.
///
/// State-independent parameters use the factor `(1 - beta_ch/L_ch)(1 - beta_b)`
/// with `beta_b = beta_ch`; otherwise `(1 - beta_ch/L_ch)(1 - beta_b/2)`.
pub fn contraction_bound(
    k: &ConvergenceConstants,
    params: &MaterialParams,
    tau: f64,
    h: f64,
) -> Result<ContractionBound> {
    k.validate()?;
    if !(tau > 0.0 && h > 0.0) {
        return Err(Error::Domain("tau and h must be positive".into()));
    }
    let (gamma, ell) = (params.gamma, params.ell);
    let ct2 = k.c_t_upper * k.c_t_upper;
    let a = h * h / (tau * k.c_inv * k.c_inv * k.c_stiff_upper * ct2);
    let b = gamma * ell / (k.c_omega * k.c_omega * k.c_stiff_upper * ct2);
    let beta_ch = 1.0 - 1.0 / (a + b + 1.0);
    let l_ch = 1.0
        + gamma / ell * k.l_psi_c
            / (h * h / (tau * k.c_inv * k.c_inv)
                + gamma * ell / (k.c_omega * k.c_omega)
                + k.c_stiff_lower * k.c_t_lower * k.c_t_lower);
    let (beta_b, l_b, rate) = if params.is_state_independent() {
        let beta_b = beta_ch;
        (beta_b, 1.0, (1.0 - beta_ch / l_ch) * (1.0 - beta_b))
    } else {
        let tilde = 1.0
            - k.c_alpha_upper / (h * h / (tau * k.c_m_upper * k.c_inv * k.c_inv) + 1.0).sqrt();
        let beta_b = beta_ch.min(tilde);
        (beta_b, 2.0, (1.0 - beta_ch / l_ch) * (1.0 - beta_b / 2.0))
    };
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Domain(format!(
            "contraction rate {rate} outside (0, 1); an assumption on the constants is violated"
        )));
    }
    Ok(ContractionBound {
        rate,
        beta_ch,
        beta_b,
        l_ch,
        l_b,
    })
}

/// Geometric rate of `H_i - H_K`, fitted by least squares on `log(H_i - H_K)`, `i = 0..=K-2`.
pub fn estimate_contraction(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least four potential values, got {}",
            values.len()
        )));
    }
    for (i, w) in values.windows(2).enumerate() {
        let slack = 1e-12 * w[0].abs().max(1.0);
        if !(w[1] <= w[0] + slack) {
            return Err(Error::Monotonicity { index: i + 1 });
        }
    }
    let last = *values.last().unwrap();
    let k = values.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &v) in values[..=k - 2].iter().enumerate() {
        let gap = v - last;
        if gap > 0.0 {
            xs.push(i as f64);
            ys.push(gap.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "potential sequence has no decay to fit".into(),
        ));
    }
    let nx = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / nx;
    let my = ys.iter().sum::<f64>() / nx;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok((sxy / sxx).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConservationReport {
    /// Per-step change of the lumped integral of phi.
    pub phi_increments: Vec<f64>,
    pub theta_increments: Vec<f64>,
    /// Increment implied by the sources, `tau * int R` and `tau * int S_f`.
    pub expected_phi_increment: f64,
    pub expected_theta_increment: f64,
    pub max_phi_drift: f64,
    pub max_theta_drift: f64,
}

pub fn conservation_report(run: &RunRecord, mesh: &Mesh) -> Result<ConservationReport> {
    let n = mesh.n_vertices();
    let m = mesh.lumped_mass();
    let tau = run.config.tau;
    let r = run.sources.r.nodal(n)?;
    let s = run.sources.s_f.nodal(n)?;
    let expected_phi = tau * dot(&r, &m);
    let expected_theta = tau * dot(&s, &m);
    let incr = |g: fn(&crate::solvers::StepRow) -> f64| -> Vec<f64> {
        run.steps.windows(2).map(|w| g(&w[1]) - g(&w[0])).collect()
    };
    let phi_increments = incr(|r| r.phi_integral);
    let theta_increments = incr(|r| r.theta_integral);
    let drift = |v: &[f64], e: f64| v.iter().fold(0.0f64, |acc, x| acc.max((x - e).abs()));
    Ok(ConservationReport {
        max_phi_drift: drift(&phi_increments, expected_phi),
        max_theta_drift: drift(&theta_increments, expected_theta),
        phi_increments,
        theta_increments,
        expected_phi_increment: expected_phi,
        expected_theta_increment: expected_theta,
    })
}
