//! Residuals and Jacobians of the fully discrete systems.
//!
//! Unknowns are blocked by field in the order phi, mu, u_x, u_y, theta, p;
//! a subsystem uses the subset of its active fields in the same order.
//! Fields a subsystem does not solve for are read from the `lagged` state.

use crate::error::{Error, Result};
use crate::linalg::{AssemblyBuffer, SparseMatrix};
use crate::mesh::Mesh;
use crate::physics::{
    self, coupling, psi_c_prime, psi_c_second, psi_e_prime, Coefficients, CouplingPoint,
    MaterialParams, SourceData,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Phi,
    Mu,
    Ux,
    Uy,
    Theta,
    P,
}

impl Field {
    pub const ALL: [Field; 6] = [Field::Phi, Field::Mu, Field::Ux, Field::Uy, Field::Theta, Field::P];

    pub fn name(self) -> &'static str {
        match self {
            Field::Phi => "phi",
            Field::Mu => "mu",
            Field::Ux => "ux",
            Field::Uy => "uy",
            Field::Theta => "theta",
            Field::P => "p",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Nodal coefficient vectors of all fields at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn zeros(n: usize) -> State {
        State {
            phi: vec![0.0; n],
            mu: vec![0.0; n],
            ux: vec![0.0; n],
            uy: vec![0.0; n],
            theta: vec![0.0; n],
            p: vec![0.0; n],
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.phi.len()
    }

    pub fn field(&self, f: Field) -> &[f64] {
        match f {
            Field::Phi => &self.phi,
            Field::Mu => &self.mu,
            Field::Ux => &self.ux,
            Field::Uy => &self.uy,
            Field::Theta => &self.theta,
            Field::P => &self.p,
        }
    }

    pub fn field_mut(&mut self, f: Field) -> &mut Vec<f64> {
        match f {
            Field::Phi => &mut self.phi,
            Field::Mu => &mut self.mu,
            Field::Ux => &mut self.ux,
            Field::Uy => &mut self.uy,
            Field::Theta => &mut self.theta,
            Field::P => &mut self.p,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        for f in Field::ALL {
            if self.field(f).len() != n {
                return Err(Error::InvalidArgument(format!(
                    "field {} has length {}, mesh has {n} vertices",
                    f.name(),
                    self.field(f).len()
                )));
            }
        }
        Ok(())
    }

    /// Concatenation of the active fields of `kind`.
    pub fn gather(&self, kind: SystemKind) -> Vec<f64> {
        let mut x = Vec::with_capacity(kind.fields().len() * self.n_vertices());
        for &f in kind.fields() {
            x.extend_from_slice(self.field(f));
        }
        x
    }

    pub fn scatter(&mut self, kind: SystemKind, x: &[f64]) {
        let n = self.n_vertices();
        for (k, &f) in kind.fields().iter().enumerate() {
            self.field_mut(f).copy_from_slice(&x[k * n..(k + 1) * n]);
        }
    }

    /// Active fields from `self`, all others from `lagged`.
    pub fn compose(&self, kind: SystemKind, lagged: &State) -> State {
        let mut s = lagged.clone();
        for &f in kind.fields() {
            s.field_mut(f).copy_from_slice(self.field(f));
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        Field::ALL
            .iter()
            .all(|&f| self.field(f).iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimeDisc {
    /// Stiffness and Biot modulus frozen at the previous step.
    SemiImplicit,
    /// All parameters at the new step; only the double-well stays split.
    Implicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    MonolithicSemiImplicit,
    MonolithicImplicit,
    ChSubsystem,
    BiotSubsystem,
    ElasticityOnly,
    FlowOnly,
}

impl SystemKind {
    pub const ALL: [SystemKind; 6] = [
        SystemKind::MonolithicSemiImplicit,
        SystemKind::MonolithicImplicit,
        SystemKind::ChSubsystem,
        SystemKind::BiotSubsystem,
        SystemKind::ElasticityOnly,
        SystemKind::FlowOnly,
    ];

    pub fn fields(self) -> &'static [Field] {
        use Field::*;
        match self {
            SystemKind::MonolithicSemiImplicit | SystemKind::MonolithicImplicit => &Field::ALL,
            SystemKind::ChSubsystem => &[Phi, Mu],
            SystemKind::BiotSubsystem => &[Ux, Uy, Theta, P],
            SystemKind::ElasticityOnly => &[Ux, Uy],
            SystemKind::FlowOnly => &[Theta, P],
        }
    }

    pub fn monolithic(disc: TimeDisc) -> SystemKind {
        match disc {
            TimeDisc::SemiImplicit => SystemKind::MonolithicSemiImplicit,
            TimeDisc::Implicit => SystemKind::MonolithicImplicit,
        }
    }

    /// Time discretization implied by the kind itself, if any.
    fn forced_disc(self) -> Option<TimeDisc> {
        match self {
            SystemKind::MonolithicSemiImplicit => Some(TimeDisc::SemiImplicit),
            SystemKind::MonolithicImplicit => Some(TimeDisc::Implicit),
            _ => None,
        }
    }

    /// Linear systems need one Newton step only.
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            SystemKind::BiotSubsystem | SystemKind::ElasticityOnly | SystemKind::FlowOnly
        )
    }

    fn slot(self, f: Field) -> Option<usize> {
        self.fields().iter().position(|&g| g == f)
    }
}

/// Initial data: the phase field is -1 on the left half and +1 on the right; everything else vanishes.
pub fn initial_state(mesh: &Mesh) -> State {
    let mut s = State::zeros(mesh.n_vertices());
    s.phi = mesh.left_right_indicator();
    s
}

/// Data that depends only on the previous time step.
#[derive(Clone, Debug)]
pub struct StepContext {
    /// Integrated lagged coupling load `(1/2 r0.C' r0 + M'/2 s0^2, eta_i)`; zero in implicit mode.
    lagged_load: Vec<f64>,
    /// `m_i * Psi_e'(phi0_i)`
    explicit_well: Vec<f64>,
}

/// Global operators and source data for a fixed mesh and parameter set.
#[derive(Clone, Debug)]
pub struct Discretization {
    mesh: Mesh,
    params: MaterialParams,
    sources: SourceData,
    tau: f64,
    time_disc: TimeDisc,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    lumped: Vec<f64>,
    strain_ops: Vec<[[f64; 6]; 3]>,
    mass_r: Vec<f64>,
    mass_s: Vec<f64>,
    mass_fx: Vec<f64>,
    mass_fy: Vec<f64>,
}

fn assemble_scalar(mesh: &Mesh, local: impl Fn(&crate::mesh::Element) -> [[f64; 3]; 3]) -> Result<SparseMatrix> {
    let n = mesh.n_vertices();
    let mut buf = AssemblyBuffer::with_capacity(n, n, 9 * mesh.n_triangles());
    for (tri, el) in mesh.elements() {
        let k = local(el);
        for a in 0..3 {
            for b in 0..3 {
                buf.push(tri[a], tri[b], k[a][b]);
            }
        }
    }
    buf.finalize()
}

impl Discretization {
    pub fn new(
        mesh: Mesh,
        params: MaterialParams,
        sources: SourceData,
        tau: f64,
        time_disc: TimeDisc,
    ) -> Result<Discretization> {
        params.validate()?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let n = mesh.n_vertices();
        let mass = assemble_scalar(&mesh, |e| e.mass())?;
        let stiffness = assemble_scalar(&mesh, |e| e.stiffness())?;
        let lumped = mesh.lumped_mass();
        let strain_ops = mesh.elements().map(|(_, e)| e.strain_operator()).collect();
        let mass_r = mass.matvec(&sources.r.nodal(n)?);
        let mass_s = mass.matvec(&sources.s_f.nodal(n)?);
        let mass_fx = mass.matvec(&sources.f[0].nodal(n)?);
        let mass_fy = mass.matvec(&sources.f[1].nodal(n)?);
        Ok(Discretization {
            mesh,
            params,
            sources,
            tau,
            time_disc,
            mass,
            stiffness,
            lumped,
            strain_ops,
            mass_r,
            mass_s,
            mass_fx,
            mass_fy,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn sources(&self) -> &SourceData {
        &self.sources
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn time_disc(&self) -> TimeDisc {
        self.time_disc
    }

    /// Consistent mass matrix.
    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    pub fn n_unknowns(&self, kind: SystemKind) -> usize {
        kind.fields().len() * self.mesh.n_vertices()
    }

    fn disc_for(&self, kind: SystemKind) -> TimeDisc {
        kind.forced_disc().unwrap_or(self.time_disc)
    }

    pub fn step_context(&self, previous: &State) -> Result<StepContext> {
        previous.check(self.mesh.n_vertices())?;
        let lagged_load = physics::lagged_load_vector(&self.mesh, previous, &self.params);
        let explicit_well = previous
            .phi
            .iter()
            .zip(&self.lumped)
            .map(|(&p, m)| m * psi_e_prime(p))
            .collect();
        Ok(StepContext {
            lagged_load,
            explicit_well,
        })
    }

    fn coefficients(&self, disc: TimeDisc, phi0: f64) -> Coefficients {
        match disc {
            TimeDisc::SemiImplicit => Coefficients::FrozenAt(phi0),
            TimeDisc::Implicit => Coefficients::Live,
        }
    }

    fn element_dofs(tri: &[usize; 3]) -> [(Field, usize); 6] {
        [
            (Field::Ux, tri[0]),
            (Field::Uy, tri[0]),
            (Field::Ux, tri[1]),
            (Field::Uy, tri[1]),
            (Field::Ux, tri[2]),
            (Field::Uy, tri[2]),
        ]
    }

    fn element_strain(&self, t: usize, tri: &[usize; 3], s: &State) -> [f64; 3] {
        let b = &self.strain_ops[t];
        let mut e = [0.0; 3];
        for (k, ek) in e.iter_mut().enumerate() {
            for a in 0..3 {
                *ek += b[k][2 * a] * s.ux[tri[a]] + b[k][2 * a + 1] * s.uy[tri[a]];
            }
        }
        e
    }

    fn coupling_points(
        &self,
        disc: TimeDisc,
        s: &State,
        previous: &State,
    ) -> impl Iterator<Item = (usize, &[usize; 3], f64, [CouplingPoint; 3])> + '_ {
        let s = s.clone();
        let phi0 = previous.phi.clone();
        self.mesh.elements().enumerate().map(move |(t, (tri, el))| {
            let eps = self.element_strain(t, tri, &s);
            let cps = [0, 1, 2].map(|a| {
                let v = tri[a];
                coupling(&self.params, self.coefficients(disc, phi0[v]), s.phi[v], eps, s.theta[v])
            });
            (t, tri, el.area / 3.0, cps)
        })
    }

    fn check_states(&self, states: &[&State]) -> Result<()> {
        let n = self.mesh.n_vertices();
        for s in states {
            s.check(n)?;
        }
        Ok(())
    }

    /// Residual of `kind` at `current`, with inactive fields taken from `lagged`.
    pub fn residual(
        &self,
        kind: SystemKind,
        current: &State,
        previous: &State,
        lagged: &State,
    ) -> Result<Vec<f64>> {
        let ctx = self.step_context(previous)?;
        self.residual_with(kind, current, previous, lagged, &ctx)
    }

    pub fn residual_with(
        &self,
        kind: SystemKind,
        current: &State,
        previous: &State,
        lagged: &State,
        ctx: &StepContext,
    ) -> Result<Vec<f64>> {
        self.check_states(&[current, previous, lagged])?;
        let s = current.compose(kind, lagged);
        let disc = self.disc_for(kind);
        let n = self.mesh.n_vertices();
        let p = &self.params;
        let tau = self.tau;
        let mut full = vec![vec![0.0; n]; 6];
        let needs = |f: Field| kind.slot(f).is_some();

        if needs(Field::Phi) {
            let r = &mut full[Field::Phi.index()];
            let dphi: Vec<f64> = (0..n).map(|i| s.phi[i] - previous.phi[i]).collect();
            self.mass.matvec_into(&dphi, r);
            let kmu = self.stiffness.matvec(&s.mu);
            for i in 0..n {
                r[i] += tau * p.mobility * kmu[i] - tau * self.mass_r[i];
            }
        }
        if needs(Field::Theta) {
            let r = &mut full[Field::Theta.index()];
            let dth: Vec<f64> = (0..n).map(|i| s.theta[i] - previous.theta[i]).collect();
            self.mass.matvec_into(&dth, r);
            let kp = self.stiffness.matvec(&s.p);
            for i in 0..n {
                r[i] += tau * p.kappa * kp[i] - tau * self.mass_s[i];
            }
        }
        if needs(Field::Mu) {
            let r = &mut full[Field::Mu.index()];
            self.mass.matvec_into(&s.mu, r);
            let kphi = self.stiffness.matvec(&s.phi);
            for i in 0..n {
                r[i] -= p.gamma * p.ell * kphi[i]
                    + p.gamma / p.ell
                        * (self.lumped[i] * psi_c_prime(s.phi[i], p.beta_cut) - ctx.explicit_well[i]);
                if disc == TimeDisc::SemiImplicit {
                    r[i] -= ctx.lagged_load[i];
                }
            }
        }
        if needs(Field::P) {
            let r = &mut full[Field::P.index()];
            self.mass.matvec_into(&s.p, r);
        }
        if needs(Field::Ux) {
            for i in 0..n {
                full[Field::Ux.index()][i] = -self.mass_fx[i];
                full[Field::Uy.index()][i] = -self.mass_fy[i];
            }
        }

        let want_mu = needs(Field::Mu);
        let want_u = needs(Field::Ux);
        let want_p = needs(Field::P);
        if want_mu || want_u || want_p {
            for (t, tri, w, cps) in self.coupling_points(disc, &s, previous) {
                let mut g_eps = [0.0; 3];
                for a in 0..3 {
                    let v = tri[a];
                    let g = &cps[a].grad;
                    if want_mu {
                        full[Field::Mu.index()][v] -= w * g[0];
                    }
                    if want_p {
                        full[Field::P.index()][v] -= w * g[4];
                    }
                    for k in 0..3 {
                        g_eps[k] += w * g[1 + k];
                    }
                }
                if want_u {
                    let b = &self.strain_ops[t];
                    for (q, (f, v)) in Self::element_dofs(tri).into_iter().enumerate() {
                        let val: f64 = (0..3).map(|k| b[k][q] * g_eps[k]).sum();
                        full[f.index()][v] += val;
                    }
                }
            }
            if want_u {
                for i in 0..n {
                    if self.mesh.boundary_vertex[i] {
                        full[Field::Ux.index()][i] = s.ux[i];
                        full[Field::Uy.index()][i] = s.uy[i];
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(kind.fields().len() * n);
        for &f in kind.fields() {
            out.extend_from_slice(&full[f.index()]);
        }
        Ok(out)
    }

    /// Analytic Jacobian of [`Discretization::residual`] with respect to the active fields.
    pub fn jacobian(
        &self,
        kind: SystemKind,
        current: &State,
        previous: &State,
        lagged: &State,
    ) -> Result<SparseMatrix> {
        self.check_states(&[current, previous, lagged])?;
        let s = current.compose(kind, lagged);
        let disc = self.disc_for(kind);
        let n = self.mesh.n_vertices();
        let p = &self.params;
        let tau = self.tau;
        let size = self.n_unknowns(kind);
        let mut blocks = BlockAssembler {
            kind,
            n,
            boundary: &self.mesh.boundary_vertex,
            buf: AssemblyBuffer::with_capacity(size, size, 40 * size),
        };

        blocks.add_matrix(Field::Phi, Field::Phi, &self.mass, 1.0);
        blocks.add_matrix(Field::Phi, Field::Mu, &self.stiffness, tau * p.mobility);
        blocks.add_matrix(Field::Mu, Field::Mu, &self.mass, 1.0);
        blocks.add_matrix(Field::Mu, Field::Phi, &self.stiffness, -p.gamma * p.ell);
        blocks.add_matrix(Field::Theta, Field::Theta, &self.mass, 1.0);
        blocks.add_matrix(Field::Theta, Field::P, &self.stiffness, tau * p.kappa);
        blocks.add_matrix(Field::P, Field::P, &self.mass, 1.0);
        if blocks.active(Field::Mu) && blocks.active(Field::Phi) {
            for i in 0..n {
                blocks.add(
                    Field::Mu,
                    i,
                    Field::Phi,
                    i,
                    -p.gamma / p.ell * self.lumped[i] * psi_c_second(s.phi[i], p.beta_cut),
                );
            }
        }

        let coupled_rows = blocks.active(Field::Mu) || blocks.active(Field::Ux) || blocks.active(Field::P);
        let coupled_cols = blocks.active(Field::Phi) || blocks.active(Field::Ux) || blocks.active(Field::Theta);
        if coupled_rows && coupled_cols {
            for (t, tri, w, cps) in self.coupling_points(disc, &s, previous) {
                let b = &self.strain_ops[t];
                let dofs = Self::element_dofs(tri);
                let mut h_ee = [[0.0; 3]; 3];
                for a in 0..3 {
                    let v = tri[a];
                    let h = &cps[a].hess;
                    blocks.add(Field::Mu, v, Field::Phi, v, -w * h[0][0]);
                    blocks.add(Field::Mu, v, Field::Theta, v, -w * h[0][4]);
                    blocks.add(Field::P, v, Field::Phi, v, -w * h[4][0]);
                    blocks.add(Field::P, v, Field::Theta, v, -w * h[4][4]);
                    for (q, &(f, dv)) in dofs.iter().enumerate() {
                        let bh_phi: f64 = (0..3).map(|k| b[k][q] * h[1 + k][0]).sum();
                        let bh_th: f64 = (0..3).map(|k| b[k][q] * h[1 + k][4]).sum();
                        blocks.add(Field::Mu, v, f, dv, -w * bh_phi);
                        blocks.add(Field::P, v, f, dv, -w * bh_th);
                        blocks.add(f, dv, Field::Phi, v, w * bh_phi);
                        blocks.add(f, dv, Field::Theta, v, w * bh_th);
                    }
                    for i in 0..3 {
                        for j in 0..3 {
                            h_ee[i][j] += w * h[1 + i][1 + j];
                        }
                    }
                }
                if blocks.active(Field::Ux) {
                    let mut hb = [[0.0; 6]; 3];
                    for i in 0..3 {
                        for q in 0..6 {
                            hb[i][q] = (0..3).map(|k| h_ee[i][k] * b[k][q]).sum();
                        }
                    }
                    for (q, &(fq, vq)) in dofs.iter().enumerate() {
                        for (r, &(fr, vr)) in dofs.iter().enumerate() {
                            let val: f64 = (0..3).map(|k| b[k][q] * hb[k][r]).sum();
                            blocks.add(fq, vq, fr, vr, val);
                        }
                    }
                }
            }
        }
        if blocks.active(Field::Ux) {
            for i in 0..n {
                if self.mesh.boundary_vertex[i] {
                    blocks.add_dirichlet(Field::Ux, i);
                    blocks.add_dirichlet(Field::Uy, i);
                }
            }
        }
        blocks.buf.finalize()
    }
}

/// Scatters field-block entries into the global matrix of one [`SystemKind`],
/// dropping inactive blocks and eliminating Dirichlet displacement rows and columns.
struct BlockAssembler<'a> {
    kind: SystemKind,
    n: usize,
    boundary: &'a [bool],
    buf: AssemblyBuffer,
}

impl BlockAssembler<'_> {
    fn active(&self, f: Field) -> bool {
        self.kind.slot(f).is_some()
    }

    fn is_dirichlet(&self, f: Field, v: usize) -> bool {
        matches!(f, Field::Ux | Field::Uy) && self.boundary[v]
    }

    #[inline]
    fn add(&mut self, rf: Field, i: usize, cf: Field, j: usize, v: f64) {
        let (Some(rs), Some(cs)) = (self.kind.slot(rf), self.kind.slot(cf)) else {
            return;
        };
        if self.is_dirichlet(rf, i) || self.is_dirichlet(cf, j) {
            return;
        }
        self.buf.push(rs * self.n + i, cs * self.n + j, v);
    }

    fn add_matrix(&mut self, rf: Field, cf: Field, a: &SparseMatrix, scale: f64) {
        if !(self.active(rf) && self.active(cf)) {
            return;
        }
        for i in 0..a.n_rows() {
            for (j, v) in a.row(i) {
                self.add(rf, i, cf, j, scale * v);
            }
        }
    }

    fn add_dirichlet(&mut self, f: Field, v: usize) {
        if let Some(s) = self.kind.slot(f) {
            self.buf.push(s * self.n + v, s * self.n + v, 1.0);
        }
    }
}

/// Residual with the semi-implicit discretization for subsystem kinds.
#[allow(clippy::too_many_arguments)]
pub fn residual(
    kind: SystemKind,
    mesh: &Mesh,
    params: &MaterialParams,
    sources: &SourceData,
    tau: f64,
    current: &State,
    previous: &State,
    lagged: &State,
) -> Result<Vec<f64>> {
    Discretization::new(mesh.clone(), params.clone(), sources.clone(), tau, TimeDisc::SemiImplicit)?
        .residual(kind, current, previous, lagged)
}

/// Jacobian with the semi-implicit discretization for subsystem kinds.
#[allow(clippy::too_many_arguments)]
pub fn jacobian(
    kind: SystemKind,
    mesh: &Mesh,
    params: &MaterialParams,
    sources: &SourceData,
    tau: f64,
    current: &State,
    previous: &State,
    lagged: &State,
) -> Result<SparseMatrix> {
    Discretization::new(mesh.clone(), params.clone(), sources.clone(), tau, TimeDisc::SemiImplicit)?
        .jacobian(kind, current, previous, lagged)
}
