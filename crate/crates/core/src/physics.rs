//! Pointwise model laws and the integral energy functionals.
//!
//! Strains and stresses use Voigt vectors `(e11, e22, 2 e12)`, so the
//! double contraction `eps : C eps` is the plain quadratic form `v^T C v`.

use crate::discretization::State;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use nalgebra::Matrix3;

pub type Voigt = [[f64; 3]; 3];

/// Voigt image of the identity tensor.
pub const VOIGT_IDENTITY: [f64; 3] = [1.0, 1.0, 0.0];

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialParams {
    /// Surface tension.
    pub gamma: f64,
    /// Interface width.
    pub ell: f64,
    pub mobility: f64,
    pub kappa: f64,
    /// Swelling coefficient of the eigenstrain `xi * phi * I`.
    pub xi: f64,
    /// Cutoff of the double-well beyond which it grows quadratically.
    pub beta_cut: f64,
    pub modulus_minus: f64,
    pub modulus_plus: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub c_minus: Voigt,
    pub c_plus: Voigt,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            gamma: 1.0,
            ell: 0.025,
            mobility: 1.0,
            kappa: 0.25,
            xi: 0.5,
            beta_cut: 1.5,
            modulus_minus: 1.0,
            modulus_plus: 0.1,
            alpha_minus: 1.0,
            alpha_plus: 0.1,
            c_minus: [[100.0, 20.0, 0.0], [20.0, 100.0, 0.0], [0.0, 0.0, 100.0]],
            c_plus: [[1.0, 0.1, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

fn to_matrix3(c: &Voigt) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| c[i][j])
}

impl MaterialParams {
    /// Same parameters with every interpolated law replaced by the midpoint of its endpoints.
    pub fn with_constant_coefficients(&self) -> MaterialParams {
        let mut c = [[0.0; 3]; 3];
        for (i, row) in c.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * (self.c_minus[i][j] + self.c_plus[i][j]);
            }
        }
        let m = 0.5 * (self.modulus_minus + self.modulus_plus);
        let a = 0.5 * (self.alpha_minus + self.alpha_plus);
        MaterialParams {
            modulus_minus: m,
            modulus_plus: m,
            alpha_minus: a,
            alpha_plus: a,
            c_minus: c,
            c_plus: c,
            ..self.clone()
        }
    }

    pub fn is_state_independent(&self) -> bool {
        self.modulus_minus == self.modulus_plus
            && self.alpha_minus == self.alpha_plus
            && self.c_minus == self.c_plus
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("ell", self.ell),
            ("m", self.mobility),
            ("kappa", self.kappa),
            ("M_minus", self.modulus_minus),
            ("M_plus", self.modulus_plus),
            ("alpha_minus", self.alpha_minus),
            ("alpha_plus", self.alpha_plus),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.xi.is_finite() {
            return Err(Error::InvalidArgument("xi must be finite".into()));
        }
        if self.alpha_minus > 1.0 || self.alpha_plus > 1.0 {
            return Err(Error::InvalidArgument(
                "Biot-Willis coefficients must not exceed 1".into(),
            ));
        }
        if !(self.beta_cut.is_finite() && self.beta_cut > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta_cut must exceed 1, got {}",
                self.beta_cut
            )));
        }
        for (name, c) in [("C_minus", &self.c_minus), ("C_plus", &self.c_plus)] {
            for i in 0..3 {
                for j in 0..3 {
                    if !c[i][j].is_finite() || (c[i][j] - c[j][i]).abs() > 1e-12 * (1.0 + c[i][j].abs()) {
                        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
                    }
                }
            }
            if to_matrix3(c).cholesky().is_none() {
                return Err(Error::InvalidArgument(format!("{name} must be positive definite")));
            }
        }
        Ok(())
    }
}

/// A scalar source given either as one value everywhere or per vertex.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarSource {
    Uniform(f64),
    Nodal(Vec<f64>),
}

impl Default for ScalarSource {
    fn default() -> Self {
        ScalarSource::Uniform(0.0)
    }
}

impl ScalarSource {
    pub fn nodal(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            ScalarSource::Uniform(v) => Ok(vec![*v; n]),
            ScalarSource::Nodal(v) if v.len() == n => Ok(v.clone()),
            ScalarSource::Nodal(v) => Err(Error::InvalidArgument(format!(
                "nodal source has {} values, mesh has {n} vertices",
                v.len()
            ))),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarSource::Uniform(v) => *v == 0.0,
            ScalarSource::Nodal(v) => v.iter().all(|x| *x == 0.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceData {
    /// Reaction term of the phase-field equation.
    pub r: ScalarSource,
    /// Fluid source.
    pub s_f: ScalarSource,
    /// Body force components.
    pub f: [ScalarSource; 2],
}

// ---------------------------------------------------------------------------
// double-well

pub fn psi(phi: f64, beta_cut: f64) -> f64 {
    if phi.abs() < beta_cut {
        let t = 1.0 - phi * phi;
        t * t
    } else {
        2.0 * (beta_cut * beta_cut - 1.0) * phi * phi - (beta_cut.powi(4) - 1.0)
    }
}

/// Convex part `Psi_c` of the split `Psi = Psi_c - Psi_e`.
pub fn psi_c(phi: f64, beta_cut: f64) -> f64 {
    if phi.abs() < beta_cut {
        phi.powi(4) + 1.0
    } else {
        2.0 * beta_cut * beta_cut * phi * phi - (beta_cut.powi(4) - 1.0)
    }
}

pub fn psi_e(phi: f64) -> f64 {
    2.0 * phi * phi
}

pub fn psi_prime(phi: f64, beta_cut: f64) -> f64 {
    psi_c_prime(phi, beta_cut) - psi_e_prime(phi)
}

pub fn psi_c_prime(phi: f64, beta_cut: f64) -> f64 {
    if phi.abs() < beta_cut {
        4.0 * phi.powi(3)
    } else {
        4.0 * beta_cut * beta_cut * phi
    }
}

pub fn psi_c_second(phi: f64, beta_cut: f64) -> f64 {
    if phi.abs() < beta_cut {
        12.0 * phi * phi
    } else {
        4.0 * beta_cut * beta_cut
    }
}

/// Lipschitz constant of `Psi_c'`, the supremum of `Psi_c''` (attained at the cutoff).
pub fn psi_c_lipschitz(beta_cut: f64) -> f64 {
    12.0 * beta_cut * beta_cut
}

pub fn psi_e_prime(phi: f64) -> f64 {
    4.0 * phi
}

// ---------------------------------------------------------------------------
// interpolation between the two phases

pub fn interp_pi(phi: f64) -> f64 {
    if phi < -1.0 {
        0.0
    } else if phi > 1.0 {
        1.0
    } else {
        (-phi.powi(3) + 3.0 * phi + 2.0) / 4.0
    }
}

pub fn interp_pi_prime(phi: f64) -> f64 {
    if phi.abs() > 1.0 {
        0.0
    } else {
        (3.0 - 3.0 * phi * phi) / 4.0
    }
}

pub fn interp_pi_second(phi: f64) -> f64 {
    if phi.abs() > 1.0 {
        0.0
    } else {
        -1.5 * phi
    }
}

/// Biot modulus, Biot-Willis coefficient and stiffness at one point (or one of their derivatives).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialValues {
    pub modulus: f64,
    pub alpha: f64,
    pub c: Voigt,
}

fn blend(params: &MaterialParams, w0: f64, w1: f64) -> MaterialValues {
    let mut c = [[0.0; 3]; 3];
    for (i, row) in c.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = w0 * params.c_minus[i][j] + w1 * (params.c_plus[i][j] - params.c_minus[i][j]);
        }
    }
    MaterialValues {
        modulus: w0 * params.modulus_minus + w1 * (params.modulus_plus - params.modulus_minus),
        alpha: w0 * params.alpha_minus + w1 * (params.alpha_plus - params.alpha_minus),
        c,
    }
}

pub fn material_eval(params: &MaterialParams, phi: f64) -> MaterialValues {
    blend(params, 1.0, interp_pi(phi))
}

pub fn material_eval_prime(params: &MaterialParams, phi: f64) -> MaterialValues {
    blend(params, 0.0, interp_pi_prime(phi))
}

pub fn material_eval_second(params: &MaterialParams, phi: f64) -> MaterialValues {
    blend(params, 0.0, interp_pi_second(phi))
}

pub fn eigenstrain(xi: f64, phi: f64) -> [[f64; 2]; 2] {
    [[xi * phi, 0.0], [0.0, xi * phi]]
}

pub fn eigenstrain_prime(xi: f64) -> [[f64; 2]; 2] {
    [[xi, 0.0], [0.0, xi]]
}

// ---------------------------------------------------------------------------
// coupling density W(phi, eps, theta) = 1/2 r.C r + M/2 s^2,
// r = eps - T(phi), s = theta - alpha(phi) div u

/// How the stiffness and Biot modulus depend on the phase field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficients {
    /// Evaluated at the current phase field.
    Live,
    /// Frozen at the given (previous step) value; `alpha` stays live.
    FrozenAt(f64),
}

/// Value, gradient and Hessian of the coupling density with respect to
/// `(phi, eps0, eps1, eps2, theta)`.
#[derive(Clone, Copy, Debug)]
pub struct CouplingPoint {
    pub elastic: f64,
    pub fluid: f64,
    pub grad: [f64; 5],
    pub hess: [[f64; 5]; 5],
}

impl CouplingPoint {
    pub fn value(&self) -> f64 {
        self.elastic + self.fluid
    }
}

fn quad(c: &Voigt, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i] * c[i][j] * b[j];
        }
    }
    s
}

fn matvec3(c: &Voigt, a: &[f64; 3]) -> [f64; 3] {
    let mut y = [0.0; 3];
    for i in 0..3 {
        y[i] = c[i][0] * a[0] + c[i][1] * a[1] + c[i][2] * a[2];
    }
    y
}

pub fn coupling(
    params: &MaterialParams,
    coeffs: Coefficients,
    phi: f64,
    eps: [f64; 3],
    theta: f64,
) -> CouplingPoint {
    let zero = MaterialValues {
        modulus: 0.0,
        alpha: 0.0,
        c: [[0.0; 3]; 3],
    };
    let (mv, d1, d2) = match coeffs {
        Coefficients::Live => (
            material_eval(params, phi),
            material_eval_prime(params, phi),
            material_eval_second(params, phi),
        ),
        Coefficients::FrozenAt(phi0) => (material_eval(params, phi0), zero, zero),
    };
    let c = &mv.c;
    let m = mv.modulus;
    let (dc, dm, d2c, d2m) = (&d1.c, d1.modulus, &d2.c, d2.modulus);
    let alpha = interp_alpha(params, phi);
    let da = material_eval_prime(params, phi).alpha;
    let d2a = material_eval_second(params, phi).alpha;

    let xi = params.xi;
    let iv = VOIGT_IDENTITY;
    let r = [eps[0] - xi * phi, eps[1] - xi * phi, eps[2]];
    let d = eps[0] + eps[1];
    let s = theta - alpha * d;

    let cr = matvec3(c, &r);
    let dcr = matvec3(dc, &r);
    let civ = matvec3(c, &iv);

    let elastic = 0.5 * quad(c, &r, &r);
    let fluid = 0.5 * m * s * s;

    let mut grad = [0.0; 5];
    grad[0] = -xi * (cr[0] + cr[1]) + 0.5 * quad(dc, &r, &r) + 0.5 * dm * s * s
        - m * s * da * d;
    for k in 0..3 {
        grad[1 + k] = cr[k] - m * s * alpha * iv[k];
    }
    grad[4] = m * s;

    let mut hess = [[0.0; 5]; 5];
    hess[0][0] = xi * xi * (civ[0] + civ[1]) - 2.0 * xi * (dcr[0] + dcr[1])
        + 0.5 * quad(d2c, &r, &r)
        + 0.5 * d2m * s * s
        - 2.0 * dm * s * da * d
        + m * da * da * d * d
        - m * s * d2a * d;
    for k in 0..3 {
        let v = -xi * civ[k] + dcr[k] - dm * s * alpha * iv[k]
            + m * da * (alpha * d - s) * iv[k];
        hess[0][1 + k] = v;
        hess[1 + k][0] = v;
    }
    hess[0][4] = dm * s - m * da * d;
    hess[4][0] = hess[0][4];
    for i in 0..3 {
        for j in 0..3 {
            hess[1 + i][1 + j] = c[i][j] + m * alpha * alpha * iv[i] * iv[j];
        }
        hess[1 + i][4] = -m * alpha * iv[i];
        hess[4][1 + i] = hess[1 + i][4];
    }
    hess[4][4] = m;

    CouplingPoint {
        elastic,
        fluid,
        grad,
        hess,
    }
}

fn interp_alpha(params: &MaterialParams, phi: f64) -> f64 {
    params.alpha_minus + interp_pi(phi) * (params.alpha_plus - params.alpha_minus)
}

/// Phase-field load from the previous step that completes the frozen
/// coupling derivative: `1/2 r0.C'(phi0) r0 + M'(phi0)/2 s0^2`.
pub fn lagged_coupling_load(params: &MaterialParams, phi0: f64, eps0: [f64; 3], theta0: f64) -> f64 {
    let d1 = material_eval_prime(params, phi0);
    let alpha0 = interp_alpha(params, phi0);
    let r0 = [eps0[0] - params.xi * phi0, eps0[1] - params.xi * phi0, eps0[2]];
    let s0 = theta0 - alpha0 * (eps0[0] + eps0[1]);
    0.5 * quad(&d1.c, &r0, &r0) + 0.5 * d1.modulus * s0 * s0
}

// ---------------------------------------------------------------------------
// integral functionals

/// Constant Voigt strain of every triangle.
pub fn element_strains(mesh: &Mesh, ux: &[f64], uy: &[f64]) -> Vec<[f64; 3]> {
    mesh.elements()
        .map(|(tri, el)| {
            let b = el.strain_operator();
            let mut ue = [0.0; 6];
            for a in 0..3 {
                ue[2 * a] = ux[tri[a]];
                ue[2 * a + 1] = uy[tri[a]];
            }
            let mut e = [0.0; 3];
            for (k, ek) in e.iter_mut().enumerate() {
                *ek = (0..6).map(|q| b[k][q] * ue[q]).sum();
            }
            e
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Energies {
    pub total: f64,
    pub interface: f64,
    pub elastic: f64,
    pub fluid: f64,
}

fn gradient_energy(mesh: &Mesh, phi: &[f64]) -> f64 {
    let mut e = 0.0;
    for (tri, el) in mesh.elements() {
        let k = el.stiffness();
        for a in 0..3 {
            for b in 0..3 {
                e += phi[tri[a]] * k[a][b] * phi[tri[b]];
            }
        }
    }
    0.5 * e
}

/// Free energy split into interface, elastic and fluid parts.
///
/// The double-well and the coupling density are integrated with the vertex
/// rule; the gradient term exactly.
pub fn free_energy(mesh: &Mesh, state: &State, params: &MaterialParams) -> Energies {
    let lumped = mesh.lumped_mass();
    let well: f64 = lumped
        .iter()
        .zip(&state.phi)
        .map(|(m, &p)| m * psi(p, params.beta_cut))
        .sum();
    let interface = params.gamma * (well / params.ell + params.ell * gradient_energy(mesh, &state.phi));
    let strains = element_strains(mesh, &state.ux, &state.uy);
    let (mut elastic, mut fluid) = (0.0, 0.0);
    for ((tri, el), eps) in mesh.elements().zip(&strains) {
        let w = el.area / 3.0;
        for &v in tri {
            let cp = coupling(params, Coefficients::Live, state.phi[v], *eps, state.theta[v]);
            elastic += w * cp.elastic;
            fluid += w * cp.fluid;
        }
    }
    Energies {
        total: interface + elastic + fluid,
        interface,
        elastic,
        fluid,
    }
}

/// Per-vertex integral of the lagged phase-field load `Ee~(phi0, eps0, theta0)`
/// without the double-well part, tested against the nodal basis.
pub fn lagged_load_vector(mesh: &Mesh, previous: &State, params: &MaterialParams) -> Vec<f64> {
    let mut load = vec![0.0; mesh.n_vertices()];
    if params.is_state_independent() {
        return load;
    }
    let strains = element_strains(mesh, &previous.ux, &previous.uy);
    for ((tri, el), eps) in mesh.elements().zip(&strains) {
        let w = el.area / 3.0;
        for &v in tri {
            load[v] += w * lagged_coupling_load(params, previous.phi[v], *eps, previous.theta[v]);
        }
    }
    load
}

/// The convex step potential minimized by one semi-implicit time step.
///
/// `dual` supplies the discrete dual norms; candidate and previous states
/// must satisfy the mass and content balances to within `1e-8`.
pub fn potential_semi_implicit(
    mesh: &Mesh,
    candidate: &State,
    previous: &State,
    params: &MaterialParams,
    sources: &SourceData,
    tau: f64,
    dual: &crate::diagnostics::DualNormContext,
) -> Result<f64> {
    let n = mesh.n_vertices();
    let lumped = mesh.lumped_mass();
    let r = sources.r.nodal(n)?;
    let s_f = sources.s_f.nodal(n)?;
    let fx = sources.f[0].nodal(n)?;
    let fy = sources.f[1].nodal(n)?;

    let q_phi: Vec<f64> = (0..n)
        .map(|i| candidate.phi[i] - previous.phi[i] - tau * r[i])
        .collect();
    let q_theta: Vec<f64> = (0..n)
        .map(|i| candidate.theta[i] - previous.theta[i] - tau * s_f[i])
        .collect();
    for (field, q) in [("phi", &q_phi), ("theta", &q_theta)] {
        let deviation: f64 = q.iter().zip(&lumped).map(|(a, m)| a * m).sum();
        if !(deviation.abs() <= 1e-8) {
            return Err(Error::Constraint { field, deviation });
        }
    }
    let mut h = dual.dual_norm_sq(&q_phi, params.mobility)? / (2.0 * tau)
        + dual.dual_norm_sq(&q_theta, params.kappa)? / (2.0 * tau);

    h += params.gamma * params.ell * gradient_energy(mesh, &candidate.phi);
    let lagged = lagged_load_vector(mesh, previous, params);
    for i in 0..n {
        h += params.gamma / params.ell * lumped[i] * psi_c(candidate.phi[i], params.beta_cut);
        h += lagged[i] * candidate.phi[i];
        h -= params.gamma / params.ell
            * lumped[i]
            * psi_e_prime(previous.phi[i])
            * candidate.phi[i];
    }
    let strains = element_strains(mesh, &candidate.ux, &candidate.uy);
    for ((tri, el), eps) in mesh.elements().zip(&strains) {
        let w = el.area / 3.0;
        for &v in tri {
            h += w * coupling(
                params,
                Coefficients::FrozenAt(previous.phi[v]),
                candidate.phi[v],
                *eps,
                candidate.theta[v],
            )
            .value();
        }
    }
    // body force with the consistent mass
    for (tri, el) in mesh.elements() {
        let me = el.mass();
        for a in 0..3 {
            for b in 0..3 {
                h -= me[a][b]
                    * (fx[tri[b]] * candidate.ux[tri[a]] + fy[tri[b]] * candidate.uy[tri[a]]);
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn double_well_values() {
        assert_eq!(psi(0.0, 1.5), 1.0);
        assert_eq!(psi(1.0, 1.5), 0.0);
        let inner = (1.0f64 - 2.25).powi(2);
        let outer = 2.0 * 1.25 * 2.25 - (1.5f64.powi(4) - 1.0);
        assert_relative_eq!(inner, 1.5625, epsilon = 1e-15);
        assert_relative_eq!(outer, 1.5625, epsilon = 1e-15);
        assert_relative_eq!(psi(1.5, 1.5), 1.5625, epsilon = 1e-14);
        assert_relative_eq!(psi(1.5 - 1e-12, 1.5), 1.5625, epsilon = 1e-9);
    }

    #[test]
    fn split_derivatives() {
        assert_eq!(psi_c_prime(0.0, 1.5), 0.0);
        assert_eq!(psi_c_prime(2.0, 1.5), 18.0);
        assert_eq!(psi_e_prime(1.0), 4.0);
    }

    #[test]
    fn quadratic_branch_slope_alone_does_not_bound_the_cubic() {
        // 4 beta^2 is the slope outside the cutoff; inside, 12 phi^2 exceeds it
        let beta = 1.5;
        let (a, b) = (-1.434_387_920_655_836_5, -2.101_442_299_826_790_5);
        let jump = (psi_c_prime(a, beta) - psi_c_prime(b, beta)).abs();
        assert!(jump > 4.0 * beta * beta * (a - b).abs());
        assert!(jump <= psi_c_lipschitz(beta) * (a - b).abs());
        assert!((psi_c_second(beta * (1.0 - 1e-12), beta) - psi_c_lipschitz(beta)).abs() < 1e-9);
    }

    #[test]
    fn interpolation_values() {
        assert_eq!(interp_pi(-2.0), 0.0);
        assert_eq!(interp_pi(0.0), 0.5);
        assert_eq!(interp_pi_prime(1.0), 0.0);
        assert_eq!(interp_pi(-1.0), 0.0);
        assert_eq!(interp_pi(1.0), 1.0);
    }

    #[test]
    fn table_defaults() {
        let p = MaterialParams::default();
        assert_eq!(material_eval(&p, -1.0).modulus, 1.0);
        assert_relative_eq!(material_eval(&p, 1.0).alpha, 0.1, epsilon = 1e-15);
        assert_relative_eq!(material_eval(&p, 0.0).modulus, 0.55, epsilon = 1e-15);
        p.validate().unwrap();
    }

    #[test]
    fn eigenstrain_law() {
        assert_eq!(eigenstrain(0.5, 1.0), [[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(eigenstrain(0.5, 0.0), [[0.0; 2]; 2]);
        assert_eq!(eigenstrain_prime(0.5), [[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut p = MaterialParams::default();
        p.alpha_plus = 1.5;
        assert!(p.validate().is_err());
        let mut p = MaterialParams::default();
        p.beta_cut = 1.0;
        assert!(p.validate().is_err());
        let mut p = MaterialParams::default();
        p.c_plus[0][1] = 2.0;
        assert!(p.validate().is_err());
        let mut p = MaterialParams::default();
        p.c_plus = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(p.validate().is_err());
        let mut p = MaterialParams::default();
        p.gamma = 0.0;
        assert!(p.validate().is_err());
    }

    fn uniform_state(mesh: &Mesh, phi: f64) -> State {
        let mut s = State::zeros(mesh.n_vertices());
        s.phi.iter_mut().for_each(|v| *v = phi);
        s
    }

    #[test]
    fn energy_of_pure_phase() {
        let mesh = Mesh::build(4).unwrap();
        let e = free_energy(&mesh, &uniform_state(&mesh, 1.0), &MaterialParams::default());
        assert!(e.interface.abs() < 1e-14);
        assert!(e.fluid.abs() < 1e-14);
        // 1/2 xi^2 (1,1,0).C_plus (1,1,0) = 1/2 * 0.25 * 2.2
        assert_relative_eq!(e.elastic, 0.275, epsilon = 1e-13);
    }

    #[test]
    fn energy_of_mixed_state() {
        let mesh = Mesh::build(4).unwrap();
        let e = free_energy(&mesh, &uniform_state(&mesh, 0.0), &MaterialParams::default());
        assert_relative_eq!(e.interface, 40.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_without_swelling_is_interface_only() {
        let mesh = Mesh::build(4).unwrap();
        let mut p = MaterialParams::default();
        p.xi = 0.0;
        let s = State::zeros(mesh.n_vertices());
        let e = free_energy(&mesh, &s, &p);
        assert_eq!(e.elastic, 0.0);
        assert_eq!(e.fluid, 0.0);
        assert_eq!(e.total, e.interface);
    }

    fn fd_check(coeffs: Coefficients, x: [f64; 5]) {
        let p = MaterialParams::default();
        let eval = |y: [f64; 5]| coupling(&p, coeffs, y[0], [y[1], y[2], y[3]], y[4]);
        let cp = eval(x);
        let h = 1e-6;
        for k in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (fp, fm) = (eval(xp), eval(xm));
            let g = (fp.value() - fm.value()) / (2.0 * h);
            assert!((g - cp.grad[k]).abs() <= 1e-6 * (1.0 + g.abs()), "grad {k}: {g} vs {}", cp.grad[k]);
            for j in 0..5 {
                let hj = (fp.grad[j] - fm.grad[j]) / (2.0 * h);
                assert!(
                    (hj - cp.hess[j][k]).abs() <= 1e-5 * (1.0 + hj.abs()),
                    "hess {j}{k}: {hj} vs {}",
                    cp.hess[j][k]
                );
            }
        }
    }

    #[test]
    fn coupling_derivatives_match_finite_differences() {
        for x in [
            [0.3, 0.01, -0.02, 0.005, 0.1],
            [-0.7, -0.03, 0.02, 0.01, -0.2],
            [0.95, 0.2, 0.1, -0.1, 0.05],
        ] {
            fd_check(Coefficients::Live, x);
            fd_check(Coefficients::FrozenAt(0.2), x);
        }
    }

    proptest! {
        #[test]
        fn split_reconstructs_derivative(phi in -3.0f64..3.0) {
            let b = 1.5;
            let h = 1e-5;
            let fd = (psi(phi + h, b) - psi(phi - h, b)) / (2.0 * h);
            prop_assert!((psi_prime(phi, b) - (psi_c_prime(phi, b) - psi_e_prime(phi))).abs() <= 1e-12);
            prop_assert!((psi(phi, b) - (psi_c(phi, b) - psi_e(phi))).abs() <= 1e-12 * (1.0 + psi(phi, b)));
            if (phi.abs() - b).abs() > 2.0 * h {
                prop_assert!((fd - psi_prime(phi, b)).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }

        #[test]
        fn convex_part_monotone_and_lipschitz(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let beta = 1.5;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(psi_c_prime(lo, beta) <= psi_c_prime(hi, beta));
            prop_assert!((psi_c_prime(a, beta) - psi_c_prime(b, beta)).abs()
                <= psi_c_lipschitz(beta) * (a - b).abs() * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn interpolation_is_monotone_and_bounded(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(interp_pi(lo) <= interp_pi(hi) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&interp_pi(a)));
        }

        #[test]
        fn material_bounds_hold(phi in -3.0f64..3.0) {
            let p = MaterialParams::default();
            let v = material_eval(&p, phi);
            prop_assert!(v.modulus >= 0.1 - 1e-15 && v.modulus <= 1.0 + 1e-15);
            prop_assert!(v.alpha >= 0.1 - 1e-15 && v.alpha <= 1.0 + 1e-15);
        }

        #[test]
        fn material_prime_matches_fd(phi in -0.999f64..0.999) {
            let p = MaterialParams::default();
            let h = 1e-6;
            let (vp, vm) = (material_eval(&p, phi + h), material_eval(&p, phi - h));
            let d = material_eval_prime(&p, phi);
            let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-6 * an.abs().max(1e-3);
            prop_assert!(close((vp.modulus - vm.modulus) / (2.0 * h), d.modulus));
            prop_assert!(close((vp.alpha - vm.alpha) / (2.0 * h), d.alpha));
            for i in 0..3 {
                for j in 0..3 {
                    if p.c_plus[i][j] != p.c_minus[i][j] {
                        prop_assert!(close((vp.c[i][j] - vm.c[i][j]) / (2.0 * h), d.c[i][j]));
                    }
                }
            }
        }

        #[test]
        fn semi_implicit_derivative_is_consistent(
            phi in -1.2f64..1.2,
            e0 in -0.1f64..0.1, e1 in -0.1f64..0.1, e2 in -0.1f64..0.1,
            theta in -0.5f64..0.5,
        ) {
            // frozen derivative plus lagged load at the same state recovers the live derivative
            let p = MaterialParams::default();
            let eps = [e0, e1, e2];
            let live = coupling(&p, Coefficients::Live, phi, eps, theta);
            let frozen = coupling(&p, Coefficients::FrozenAt(phi), phi, eps, theta);
            let lag = lagged_coupling_load(&p, phi, eps, theta);
            prop_assert!((frozen.grad[0] + lag - live.grad[0]).abs() <= 1e-12 * (1.0 + live.grad[0].abs()));
            prop_assert!((frozen.value() - live.value()).abs() <= 1e-12 * (1.0 + live.value().abs()));
        }
    }
}
