//! Forced Lagrange-Dirac time stepping with boundary energy flow.
//!
//! A [`System`] bundles the grid, metric, densities and external currents.
//! A [`PontryaginState`] holds the phase-space variables of the
//! matter sector `(phi, nu, alpha)` and the gauge sector `(A, eps, sigma)`;
//! boundary momenta are kept identically zero.
//!
//! Momentum rates are assembled as
//!
//! * star: `alpha' = d_phi L - (-1)^k div(d_zeta L) + F`
//! * dagger: `alpha' = dag_phi L - (-1)^k d^{nabla*}(dag_zeta L) + F`
//!
//! and the boundary equation `i*(tr d_zeta L) = -F_b` is imposed by
//! overwriting the normal trace of `d_zeta L` on boundary nodes before the
//! divergence is taken.
//!
//! Physical currents map to dual forces by
//!
//! | sector | interior            | boundary                    |
//! |--------|---------------------|-----------------------------|
//! | matter | `F = *(kappa beth)` | `F_b = *_b(kappa gimel)`    |
//! | gauge  | `F = *(G J)`        | `F_b = (-1)^m *_b(G j)`     |
//!
//! with `G = -K`. These give `E' - delta^A B = -J` in the interior and
//! `*_b i*(*B) = j`, `*_b i*(* d phi) = gimel` on faces.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::connection::{
    codifferential, cov_divergence, cov_ext_deriv, curvature, dual_cov_ext_deriv, rep_action,
    rep_action_adjoint, ConnectionError, LieAlgebra, LieRepresentation, LinearConnection,
};
use crate::exterior::{
    binom, contract_point, hodge_point, lower_point, phi_inv_point, phi_iso, phi_iso_inv,
    pullback_on_nodes, raise_point, wedge_pair, Basis, DualField, ExteriorError, FormField,
    Representation,
};
use crate::grid::{
    induced_boundary_data, BoundaryData, Face, FiberMetric, GridError, MetricField, RectGrid,
};
use crate::lagrangian::{
    derivative_field, energy_field, wedge_to_form, Density, FieldArgs, LagrangianError,
    QuadraticDensity, Slot,
};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time step {dt} exceeds the stability limit {limit}")]
    Cfl { dt: Real, limit: Real },
    #[error("time step must be positive (got {0})")]
    NonPositiveStep(Real),
    #[error("non-finite value in the {sector} sector at t = {t}")]
    NonFinite { sector: &'static str, t: Real },
    #[error("boundary current prescribed on {0}, which is not a face of the grid")]
    NoSuchFace(String),
    #[error("the {0} sector is not active")]
    MissingSector(&'static str),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("inconsistent system: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
}

type Result<T> = std::result::Result<T, DynamicsError>;

/// A prescribed current: fills the components at position `x` and time `t`.
pub type CurrentFn = Arc<dyn Fn(&[Real; 3], Real, &mut [Real]) + Send + Sync>;

/// Interior and per-face currents of one sector, in physical variables.
#[derive(Clone, Default)]
pub struct SectorForces {
    pub interior: Option<CurrentFn>,
    pub boundary: Vec<(Face, CurrentFn)>,
}

impl SectorForces {
    pub fn is_zero(&self) -> bool {
        self.interior.is_none() && self.boundary.is_empty()
    }

    fn on_face(&self, face: Face) -> Option<&CurrentFn> {
        self.boundary
            .iter()
            .find(|(f, _)| *f == face)
            .map(|(_, c)| c)
    }
}

impl fmt::Debug for SectorForces {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SectorForces")
            .field("interior", &self.interior.is_some())
            .field(
                "boundary",
                &self
                    .boundary
                    .iter()
                    .map(|(face, _)| face.label())
                    .collect::<Vec<_>>(),
            )
            .finish()
    }
}

/// External currents for both sectors.
#[derive(Clone, Debug, Default)]
pub struct ForceModel {
    pub matter: SectorForces,
    pub gauge: SectorForces,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sector {
    Matter,
    Gauge,
}

impl Sector {
    fn name(self) -> &'static str {
        match self {
            Sector::Matter => "matter",
            Sector::Gauge => "gauge",
        }
    }
}

/// Matter fields: a density, a fiber metric for the force dictionary, and
/// either a fixed connection or a gauge coupling.
#[derive(Clone)]
pub struct MatterSector {
    pub density: Arc<dyn Density>,
    pub kappa: FiberMetric,
    pub connection: Option<LinearConnection>,
    pub coupling: Option<LieRepresentation>,
}

impl MatterSector {
    pub fn quadratic(density: QuadraticDensity) -> Self {
        let kappa = density.kappa().clone();
        Self {
            density: Arc::new(density),
            kappa,
            connection: None,
            coupling: None,
        }
    }

    pub fn with_connection(mut self, connection: LinearConnection) -> Self {
        self.connection = Some(connection);
        self
    }

    pub fn with_coupling(mut self, coupling: LieRepresentation) -> Self {
        self.coupling = Some(coupling);
        self
    }
}

impl fmt::Debug for MatterSector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatterSector")
            .field("degree", &self.density.degree())
            .field("fiber", &self.density.fiber())
            .field("connection", &self.connection.is_some())
            .field("coupling", &self.coupling.is_some())
            .finish()
    }
}

/// Gauge fields in temporal gauge.
#[derive(Clone, Debug)]
pub struct GaugeSector {
    pub algebra: LieAlgebra,
    pub density: QuadraticDensity,
}

impl GaugeSector {
    pub fn yang_mills(dim: usize, algebra: LieAlgebra) -> Result<Self> {
        let density = crate::lagrangian::ym_density(dim, &algebra)?;
        Ok(Self { algebra, density })
    }
}

/// Configuration, velocity and momentum of one sector.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorState {
    pub q: FormField,
    pub v: FormField,
    pub p: DualField,
}

/// The full solution tuple at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct PontryaginState {
    pub t: Real,
    pub matter: Option<SectorState>,
    pub gauge: Option<SectorState>,
}

impl PontryaginState {
    /// Reverses all velocities and momenta.
    pub fn negate_velocities(&mut self) {
        for s in [&mut self.matter, &mut self.gauge].into_iter().flatten() {
            s.v.scale(-1.0);
            s.p.scale(-1.0);
        }
    }

    /// Largest componentwise difference in configurations, velocities and
    /// star-converted momenta.
    pub fn max_difference(&self, other: &PontryaginState) -> Real {
        let mut worst: Real = 0.0;
        for (a, b) in [(&self.matter, &other.matter), (&self.gauge, &other.gauge)] {
            if let (Some(a), Some(b)) = (a, b) {
                worst = worst
                    .max(a.q.max_abs_diff(&b.q))
                    .max(a.v.max_abs_diff(&b.v))
                    .max(
                        a.p.to_rep(Representation::Star)
                            .interior
                            .max_abs_diff(&b.p.to_rep(Representation::Star).interior),
                    );
            }
        }
        worst
    }

    fn check_finite(&self) -> Result<()> {
        for (name, s) in [("matter", &self.matter), ("gauge", &self.gauge)] {
            if let Some(s) = s {
                let ok =
                    s.q.data()
                        .iter()
                        .chain(s.v.data())
                        .chain(s.p.interior.data())
                        .all(|x| x.is_finite());
                if !ok {
                    return Err(DynamicsError::NonFinite {
                        sector: name,
                        t: self.t,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Momentum rate of one sector and the boundary-equation residual found
/// before the boundary data was imposed.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorRate {
    pub rate: FormField,
    pub boundary_residual: Real,
}

/// Momentum rates of both sectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Rates {
    pub matter: Option<SectorRate>,
    pub gauge: Option<SectorRate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Leapfrog,
    Rk4,
}

/// One row of diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: Real,
    pub energy_matter: Real,
    pub energy_gauge: Real,
    pub power_matter: Real,
    pub power_gauge: Real,
    /// Boundary power per face (both sectors), in [`System::boundaries`] order.
    pub power_boundary: Vec<Real>,
    pub power_boundary_matter: Real,
    pub power_boundary_gauge: Real,
    /// Gauge-sector interaction power `int eps . rho*_phi(d_zeta L_mat)`.
    pub interaction_gauge: Real,
    /// Matter-sector interaction power `-int rho_phi(eps) . d_zeta L_mat`.
    pub interaction_matter: Real,
    /// Integrated charge per algebra component.
    pub charge: Vec<Real>,
    pub boundary_residual: Real,
}

impl Sample {
    pub fn energy(&self) -> Real {
        self.energy_matter + self.energy_gauge
    }

    pub fn power(&self) -> Real {
        self.power_matter
            + self.power_gauge
            + self.power_boundary_matter
            + self.power_boundary_gauge
            + self.interaction_gauge
            + self.interaction_matter
    }
}

/// Energy balance residuals `dE/dt - P` by centered differences.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceReport {
    pub times: Vec<Real>,
    pub residual: Vec<Real>,
    pub matter_residual: Vec<Real>,
    pub gauge_residual: Vec<Real>,
}

impl BalanceReport {
    pub fn max_abs(&self) -> Real {
        self.residual.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

/// Builds the balance report from consecutive, equally spaced samples.
pub fn energy_balance(samples: &[Sample]) -> Result<BalanceReport> {
    if samples.len() < 3 {
        return Err(DynamicsError::InsufficientHistory {
            needed: 3,
            got: samples.len(),
        });
    }
    let mut report = BalanceReport {
        times: Vec::new(),
        residual: Vec::new(),
        matter_residual: Vec::new(),
        gauge_residual: Vec::new(),
    };
    for w in samples.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        let span = c.t - a.t;
        let de_m = (c.energy_matter - a.energy_matter) / span;
        let de_g = (c.energy_gauge - a.energy_gauge) / span;
        let rm = de_m - (b.power_matter + b.power_boundary_matter + b.interaction_matter);
        let rg = de_g - (b.power_gauge + b.power_boundary_gauge + b.interaction_gauge);
        report.times.push(b.t);
        report.matter_residual.push(rm);
        report.gauge_residual.push(rg);
        report.residual.push(rm + rg);
    }
    Ok(report)
}

/// Result of [`System::action_gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_deviation: Real,
    pub scale: Real,
    pub checked: usize,
}

impl GradientCheck {
    pub fn relative(&self) -> Real {
        if self.scale > 0.0 {
            self.max_deviation / self.scale
        } else {
            self.max_deviation
        }
    }
}

/// Grid, geometry, densities and currents of a simulation.
#[derive(Clone, Debug)]
pub struct System {
    grid: RectGrid,
    metric: MetricField,
    boundaries: Vec<BoundaryData>,
    matter: Option<MatterSector>,
    gauge: Option<GaugeSector>,
    forces: ForceModel,
    pub rep: Representation,
    pub cfl: Real,
}

impl System {
    pub fn new(grid: RectGrid, metric: MetricField, rep: Representation) -> Result<Self> {
        if metric.dim() != grid.dim() || metric.len() != grid.len() {
            return Err(DynamicsError::Inconsistent(
                "metric does not match the grid".into(),
            ));
        }
        let boundaries = grid
            .faces()
            .into_iter()
            .map(|f| induced_boundary_data(&grid, &metric, f))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            grid,
            metric,
            boundaries,
            matter: None,
            gauge: None,
            forces: ForceModel::default(),
            rep,
            cfl: 1.0,
        })
    }

    pub fn with_matter(mut self, matter: MatterSector) -> Result<Self> {
        let d = &matter.density;
        if d.dim() != self.grid.dim() || matter.kappa.dim() != d.fiber() {
            return Err(DynamicsError::Inconsistent(
                "matter density does not fit the grid or fiber metric".into(),
            ));
        }
        if let Some(c) = &matter.connection {
            if c.fiber() != d.fiber() || c.dim() != d.dim() {
                return Err(DynamicsError::Inconsistent(
                    "matter connection has the wrong shape".into(),
                ));
            }
        }
        if let Some(rep) = &matter.coupling {
            if d.degree() != 0 || rep.dim() != d.fiber() {
                return Err(DynamicsError::Inconsistent(
                    "gauge coupling needs 0-form matter in the representation space".into(),
                ));
            }
        }
        self.matter = Some(matter);
        self.check_coupling()?;
        Ok(self)
    }

    pub fn with_gauge(mut self, gauge: GaugeSector) -> Result<Self> {
        if gauge.density.dim() != self.grid.dim() || gauge.density.fiber() != gauge.algebra.dim() {
            return Err(DynamicsError::Inconsistent(
                "gauge density does not fit the grid or algebra".into(),
            ));
        }
        if self.grid.dim() < 2 {
            return Err(ConnectionError::DimensionTooSmall(self.grid.dim()).into());
        }
        self.gauge = Some(gauge);
        self.check_coupling()?;
        Ok(self)
    }

    fn check_coupling(&self) -> Result<()> {
        if let (Some(m), Some(g)) = (&self.matter, &self.gauge) {
            if let Some(rep) = &m.coupling {
                if rep.algebra_dim() != g.algebra.dim() {
                    return Err(DynamicsError::Inconsistent(format!(
                        "matter couples to a {}-dimensional algebra but the gauge algebra has dimension {}",
                        rep.algebra_dim(),
                        g.algebra.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Installs currents after checking that every boundary current sits on a face.
    pub fn with_forces(mut self, forces: ForceModel) -> Result<Self> {
        for (face, _) in forces.matter.boundary.iter().chain(&forces.gauge.boundary) {
            if face.axis >= self.grid.dim() || self.grid.check_face(*face).is_err() {
                return Err(DynamicsError::NoSuchFace(face.label()));
            }
        }
        self.forces = forces;
        Ok(self)
    }

    pub fn with_cfl(mut self, cfl: Real) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn with_representation(mut self, rep: Representation) -> Self {
        self.rep = rep;
        self
    }

    pub fn grid(&self) -> &RectGrid {
        &self.grid
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn boundaries(&self) -> &[BoundaryData] {
        &self.boundaries
    }

    pub fn matter(&self) -> Option<&MatterSector> {
        self.matter.as_ref()
    }

    pub fn gauge(&self) -> Option<&GaugeSector> {
        self.gauge.as_ref()
    }

    pub fn forces(&self) -> &ForceModel {
        &self.forces
    }

    /// Largest stable step for the explicit schemes.
    pub fn max_stable_dt(&self) -> Real {
        self.cfl * self.grid.min_spacing() / self.metric.max_wave_speed()
    }

    // -----------------------------------------------------------------
    // Field strengths and connections.

    /// Connection acting on matter: induced by the gauge potential when
    /// coupled, otherwise the fixed connection if any.
    pub fn matter_connection<'a>(
        &'a self,
        state: &PontryaginState,
    ) -> Result<Option<Cow<'a, LinearConnection>>> {
        let m = self
            .matter
            .as_ref()
            .ok_or(DynamicsError::MissingSector("matter"))?;
        match &m.coupling {
            Some(rep) => {
                let g = state
                    .gauge
                    .as_ref()
                    .ok_or(DynamicsError::MissingSector("gauge"))?;
                Ok(Some(Cow::Owned(LinearConnection::from_gauge(&g.q, rep)?)))
            }
            None => Ok(m.connection.as_ref().map(Cow::Borrowed)),
        }
    }

    /// Adjoint-bundle connection induced by the gauge potential.
    pub fn gauge_connection(&self, state: &PontryaginState) -> Result<LinearConnection> {
        let g = self
            .gauge
            .as_ref()
            .ok_or(DynamicsError::MissingSector("gauge"))?;
        let s = state
            .gauge
            .as_ref()
            .ok_or(DynamicsError::MissingSector("gauge"))?;
        Ok(LinearConnection::from_gauge(
            &s.q,
            &LieRepresentation::adjoint(&g.algebra),
        )?)
    }

    /// `zeta = d^nabla phi` for the matter sector.
    pub fn matter_zeta(&self, state: &PontryaginState) -> Result<FormField> {
        let s = state
            .matter
            .as_ref()
            .ok_or(DynamicsError::MissingSector("matter"))?;
        let conn = self.matter_connection(state)?;
        Ok(cov_ext_deriv(&self.grid, conn.as_deref(), &s.q)?)
    }

    /// Curvature `B_A` of the gauge potential.
    pub fn curvature(&self, state: &PontryaginState) -> Result<FormField> {
        let g = self
            .gauge
            .as_ref()
            .ok_or(DynamicsError::MissingSector("gauge"))?;
        let s = state
            .gauge
            .as_ref()
            .ok_or(DynamicsError::MissingSector("gauge"))?;
        Ok(curvature(&self.grid, &s.q, &g.algebra)?)
    }

    fn zeta(&self, sector: Sector, state: &PontryaginState) -> Result<FormField> {
        match sector {
            Sector::Matter => self.matter_zeta(state),
            Sector::Gauge => self.curvature(state),
        }
    }

    fn density(&self, sector: Sector) -> Result<&dyn Density> {
        match sector {
            Sector::Matter => Ok(self
                .matter
                .as_ref()
                .ok_or(DynamicsError::MissingSector("matter"))?
                .density
                .as_ref()),
            Sector::Gauge => Ok(&self
                .gauge
                .as_ref()
                .ok_or(DynamicsError::MissingSector("gauge"))?
                .density),
        }
    }

    fn sector_state<'a>(
        &self,
        sector: Sector,
        state: &'a PontryaginState,
    ) -> Result<&'a SectorState> {
        match sector {
            Sector::Matter => state.matter.as_ref(),
            Sector::Gauge => state.gauge.as_ref(),
        }
        .ok_or(DynamicsError::MissingSector(sector.name()))
    }

    fn sector_forces(&self, sector: Sector) -> &SectorForces {
        match sector {
            Sector::Matter => &self.forces.matter,
            Sector::Gauge => &self.forces.gauge,
        }
    }

    fn fiber_metric(&self, sector: Sector) -> Result<&FiberMetric> {
        match sector {
            Sector::Matter => Ok(&self
                .matter
                .as_ref()
                .ok_or(DynamicsError::MissingSector("matter"))?
                .kappa),
            Sector::Gauge => Ok(self
                .gauge
                .as_ref()
                .ok_or(DynamicsError::MissingSector("gauge"))?
                .density
                .kappa()),
        }
    }

    fn sectors(&self) -> Vec<Sector> {
        let mut v = Vec::new();
        if self.matter.is_some() {
            v.push(Sector::Matter);
        }
        if self.gauge.is_some() {
            v.push(Sector::Gauge);
        }
        v
    }

    // -----------------------------------------------------------------
    // State construction and Legendre maps.

    /// Builds a state from configurations and velocities, with momenta from
    /// the Legendre map and zero boundary momenta.
    pub fn initial_state(
        &self,
        t: Real,
        matter: Option<(FormField, FormField)>,
        gauge: Option<(FormField, FormField)>,
    ) -> Result<PontryaginState> {
        if matter.is_some() != self.matter.is_some() || gauge.is_some() != self.gauge.is_some() {
            return Err(DynamicsError::Inconsistent(
                "initial data does not match the active sectors".into(),
            ));
        }
        let wrap =
            |qv: Option<(FormField, FormField)>, sector: Sector| -> Result<Option<SectorState>> {
                let Some((q, v)) = qv else { return Ok(None) };
                let d = self.density(sector)?;
                let expect = (d.degree(), d.fiber(), self.grid.len());
                for f in [&q, &v] {
                    if (f.degree(), f.fiber(), f.nodes()) != expect || f.dim() != self.grid.dim() {
                        return Err(DynamicsError::Inconsistent(format!(
                            "{} initial data has the wrong shape",
                            sector.name()
                        )));
                    }
                }
                let p = DualField::zeros(self.rep, &self.grid, d.degree(), d.fiber());
                Ok(Some(SectorState { q, v, p }))
            };
        let mut state = PontryaginState {
            t,
            matter: wrap(matter, Sector::Matter)?,
            gauge: wrap(gauge, Sector::Gauge)?,
        };
        for sector in self.sectors() {
            let p = self.momentum(sector, &state, self.rep)?;
            match sector {
                Sector::Matter => state.matter.as_mut().expect("active").p.interior = p,
                Sector::Gauge => state.gauge.as_mut().expect("active").p.interior = p,
            }
        }
        state.check_finite()?;
        Ok(state)
    }

    /// `d_nu L` at the current state in the given representation.
    pub fn momentum(
        &self,
        sector: Sector,
        state: &PontryaginState,
        rep: Representation,
    ) -> Result<FormField> {
        let s = self.sector_state(sector, state)?;
        let zeta = self.zeta(sector, state)?;
        let args = FieldArgs {
            metric: &self.metric,
            phi: &s.q,
            nu: &s.v,
            zeta: &zeta,
        };
        Ok(derivative_field(
            self.density(sector)?,
            Slot::Nu,
            rep,
            &args,
        ))
    }

    /// Largest deviation of the stored momentum from `d_nu L(q, v, zeta)`.
    pub fn legendre_defect(&self, state: &PontryaginState) -> Result<Real> {
        let mut worst: Real = 0.0;
        for sector in self.sectors() {
            let s = self.sector_state(sector, state)?;
            let expect = self.momentum(sector, state, s.p.rep)?;
            worst = worst.max(expect.max_abs_diff(&s.p.interior));
        }
        Ok(worst)
    }

    fn velocities_from_momenta(&self, state: &mut PontryaginState) -> Result<()> {
        for sector in self.sectors() {
            let zeta = self.zeta(sector, state)?;
            let d = self.density(sector)?;
            let s = match sector {
                Sector::Matter => state.matter.as_mut(),
                Sector::Gauge => state.gauge.as_mut(),
            }
            .expect("active sector");
            let star = match s.p.rep {
                Representation::Star => Cow::Borrowed(&s.p.interior),
                Representation::Dagger => Cow::Owned(phi_iso_inv(&s.p.interior)),
            };
            for n in 0..self.grid.len() {
                let (q, v) = (&s.q, &mut s.v);
                d.legendre_inverse(
                    self.metric.at(n),
                    q.at(n),
                    zeta.at(n),
                    star.at(n),
                    v.at_mut(n),
                )?;
            }
        }
        Ok(())
    }

    // -----------------------------------------------------------------
    // Forces.

    /// Interior dual force `F` in the requested representation.
    pub fn interior_force(
        &self,
        sector: Sector,
        t: Real,
        rep: Representation,
    ) -> Result<Option<FormField>> {
        let Some(current) = &self.sector_forces(sector).interior else {
            return Ok(None);
        };
        let d = self.density(sector)?;
        let kappa = self.fiber_metric(sector)?;
        let (m, k, n) = (d.dim(), d.degree(), d.fiber());
        let basis = Basis::new(m, k);
        let dual = Basis::new(m, m - k);
        let degree = match rep {
            Representation::Star => k,
            Representation::Dagger => m - k,
        };
        let mut out = FormField::zeros(m, degree, n, self.grid.len());
        let mut raw = vec![0.0; basis.len() * n];
        let mut low = vec![0.0; basis.len() * n];
        for node in 0..self.grid.len() {
            raw.iter_mut().for_each(|x| *x = 0.0);
            current(&self.grid.coords(node), t, &mut raw);
            lower_fiber(kappa, basis.len(), &raw, &mut low);
            let pm = self.metric.at(node);
            match rep {
                Representation::Star => {
                    raise_point(&basis, n, pm, &low, out.at_mut(node));
                    out.at_mut(node).iter_mut().for_each(|x| *x *= pm.sqrt_det);
                }
                Representation::Dagger => {
                    hodge_point(&basis, &dual, n, pm, 1.0, &low, out.at_mut(node))
                }
            }
        }
        Ok(Some(out))
    }

    /// Boundary dual force `F_b` on one face (face-chart components).
    pub fn boundary_force(
        &self,
        sector: Sector,
        bd: &BoundaryData,
        t: Real,
        rep: Representation,
    ) -> Result<Option<FormField>> {
        let Some(current) = self.sector_forces(sector).on_face(bd.face) else {
            return Ok(None);
        };
        let d = self.density(sector)?;
        let kappa = self.fiber_metric(sector)?;
        let (m, k, n) = (d.dim(), d.degree(), d.fiber());
        let fm = m - 1;
        let basis = Basis::new(fm, k);
        let dual = Basis::new(fm, fm - k);
        let sign = match sector {
            Sector::Matter => 1.0,
            Sector::Gauge => {
                if m % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let degree = match rep {
            Representation::Star => k,
            Representation::Dagger => fm - k,
        };
        let mut out = FormField::zeros(fm, degree, n, bd.nodes.len());
        let mut raw = vec![0.0; basis.len() * n];
        let mut low = vec![0.0; basis.len() * n];
        let mut dag = vec![0.0; dual.len() * n];
        for (kf, &node) in bd.nodes.iter().enumerate() {
            raw.iter_mut().for_each(|x| *x = 0.0);
            current(&self.grid.coords(node), t, &mut raw);
            lower_fiber(kappa, basis.len(), &raw, &mut low);
            low.iter_mut().for_each(|x| *x *= sign);
            hodge_point(
                &basis,
                &dual,
                n,
                bd.metric.at(kf),
                bd.orientation,
                &low,
                &mut dag,
            );
            match rep {
                Representation::Dagger => out.at_mut(kf).copy_from_slice(&dag),
                Representation::Star => phi_inv_point(&dual, &basis, n, &dag, out.at_mut(kf)),
            }
        }
        Ok(Some(out))
    }

    /// Imposes `i*(tr chi) = -F_b` (star) or `i*(eta) = -F_b` (dagger) on
    /// every face by overwriting the normal-trace components of the
    /// `zeta`-derivative, and returns the largest violation found first.
    pub fn apply_boundary_currents(
        &self,
        sector: Sector,
        deriv: &mut FormField,
        t: Real,
        rep: Representation,
    ) -> Result<Real> {
        let m = self.grid.dim();
        let d = self.density(sector)?;
        let (k, n) = (d.degree(), d.fiber());
        let mut worst: Real = 0.0;
        for bd in &self.boundaries {
            let a = bd.face.axis;
            let target = self.boundary_force(sector, bd, t, rep)?;
            let face_basis = Basis::new(m - 1, k);
            match rep {
                Representation::Star => {
                    let vol = Basis::new(m, k + 1);
                    let leg = if a % 2 == 0 { 1.0 } else { -1.0 };
                    for (fs, fmi) in face_basis.indices().iter().enumerate() {
                        let upper = fmi.from_face_chart(a);
                        let (j, _) = upper.insert(a).expect("tangential index");
                        let r = j.position(a).expect("contains the normal axis");
                        let pos = if r % 2 == 0 { 1.0 } else { -1.0 };
                        let slot = vol.slot(j);
                        for (kf, &node) in bd.nodes.iter().enumerate() {
                            for c in 0..n {
                                let f = target.as_ref().map_or(0.0, |t| t.get(kf, fs, c));
                                let old = deriv.get(node, slot, c);
                                worst = worst.max((pos * leg * old + f).abs());
                                deriv.set(node, slot, c, -pos * leg * f);
                            }
                        }
                    }
                }
                Representation::Dagger => {
                    let vol = Basis::new(m, m - k - 1);
                    let dual_face = Basis::new(m - 1, m - 1 - k);
                    for (fs, fmi) in dual_face.indices().iter().enumerate() {
                        let slot = vol.slot(fmi.from_face_chart(a));
                        for (kf, &node) in bd.nodes.iter().enumerate() {
                            for c in 0..n {
                                let f = target.as_ref().map_or(0.0, |t| t.get(kf, fs, c));
                                let old = deriv.get(node, slot, c);
                                worst = worst.max((old + f).abs());
                                deriv.set(node, slot, c, -f);
                            }
                        }
                    }
                }
            }
        }
        Ok(worst)
    }

    // -----------------------------------------------------------------
    // Right-hand sides.

    /// Matter momentum rate.
    pub fn assemble_matter_rhs(
        &self,
        state: &PontryaginState,
        rep: Representation,
    ) -> Result<SectorRate> {
        let s = self.sector_state(Sector::Matter, state)?;
        let d = self.density(Sector::Matter)?;
        let conn = self.matter_connection(state)?;
        let zeta = cov_ext_deriv(&self.grid, conn.as_deref(), &s.q)?;
        let args = FieldArgs {
            metric: &self.metric,
            phi: &s.q,
            nu: &s.v,
            zeta: &zeta,
        };
        self.assemble(
            Sector::Matter,
            d,
            conn.as_deref(),
            &args,
            None,
            state.t,
            rep,
        )
    }

    /// Gauge momentum rate, including the matter cross term when coupled.
    pub fn assemble_gauge_rhs(
        &self,
        state: &PontryaginState,
        rep: Representation,
    ) -> Result<SectorRate> {
        let s = self.sector_state(Sector::Gauge, state)?;
        let d = self.density(Sector::Gauge)?;
        let conn = self.gauge_connection(state)?;
        let b = self.curvature(state)?;
        let args = FieldArgs {
            metric: &self.metric,
            phi: &s.q,
            nu: &s.v,
            zeta: &b,
        };
        let cross = self.cross_term(state, rep)?;
        self.assemble(
            Sector::Gauge,
            d,
            Some(&conn),
            &args,
            cross.as_ref(),
            state.t,
            rep,
        )
    }

    /// `rho*_phi(d_zeta L_mat)` as a gauge-sector dual field, when coupled.
    pub fn cross_term(
        &self,
        state: &PontryaginState,
        rep: Representation,
    ) -> Result<Option<FormField>> {
        let Some(m) = &self.matter else {
            return Ok(None);
        };
        let Some(rep_lie) = &m.coupling else {
            return Ok(None);
        };
        let s = self.sector_state(Sector::Matter, state)?;
        let zeta = self.matter_zeta(state)?;
        let args = FieldArgs {
            metric: &self.metric,
            phi: &s.q,
            nu: &s.v,
            zeta: &zeta,
        };
        let dz = derivative_field(m.density.as_ref(), Slot::Zeta, rep, &args);
        Ok(Some(rep_action_adjoint(rep_lie, &s.q, &dz)?))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        sector: Sector,
        d: &dyn Density,
        conn: Option<&LinearConnection>,
        args: &FieldArgs,
        cross: Option<&FormField>,
        t: Real,
        rep: Representation,
    ) -> Result<SectorRate> {
        let k = d.degree();
        let mut rate = derivative_field(d, Slot::Phi, rep, args);
        let mut dz = derivative_field(d, Slot::Zeta, rep, args);
        let boundary_residual = self.apply_boundary_currents(sector, &mut dz, t, rep)?;
        let div = match rep {
            Representation::Star => cov_divergence(&self.grid, conn, &dz)?,
            Representation::Dagger => dual_cov_ext_deriv(&self.grid, conn, &dz)?,
        };
        let grade = if k.is_multiple_of(2) { -1.0 } else { 1.0 };
        rate.add_scaled(grade, &div);
        if let Some(c) = cross {
            rate.add_scaled(1.0, c);
        }
        if let Some(f) = self.interior_force(sector, t, rep)? {
            rate.add_scaled(1.0, &f);
        }
        Ok(SectorRate {
            rate,
            boundary_residual,
        })
    }

    /// Momentum rates of all active sectors in the system representation.
    pub fn rates(&self, state: &PontryaginState) -> Result<Rates> {
        Ok(Rates {
            matter: self
                .matter
                .as_ref()
                .map(|_| self.assemble_matter_rhs(state, self.rep))
                .transpose()?,
            gauge: self
                .gauge
                .as_ref()
                .map(|_| self.assemble_gauge_rhs(state, self.rep))
                .transpose()?,
        })
    }

    // -----------------------------------------------------------------
    // Time stepping.

    pub fn check_step(&self, dt: Real) -> Result<()> {
        if !(dt > 0.0) {
            return Err(DynamicsError::NonPositiveStep(dt));
        }
        let limit = self.max_stable_dt();
        if dt > limit * (1.0 + 1e-12) {
            return Err(DynamicsError::Cfl { dt, limit });
        }
        Ok(())
    }

    /// Advances the state by `dt`.
    pub fn step(
        &self,
        state: &PontryaginState,
        dt: Real,
        scheme: Scheme,
    ) -> Result<PontryaginState> {
        self.check_step(dt)?;
        let next = match scheme {
            Scheme::Leapfrog => self.leapfrog(state, dt)?,
            Scheme::Rk4 => self.rk4(state, dt)?,
        };
        next.check_finite()?;
        Ok(next)
    }

    fn kick(state: &mut PontryaginState, rates: &Rates, h: Real) {
        if let (Some(s), Some(r)) = (state.matter.as_mut(), rates.matter.as_ref()) {
            s.p.interior.add_scaled(h, &r.rate);
        }
        if let (Some(s), Some(r)) = (state.gauge.as_mut(), rates.gauge.as_ref()) {
            s.p.interior.add_scaled(h, &r.rate);
        }
    }

    fn leapfrog(&self, state: &PontryaginState, dt: Real) -> Result<PontryaginState> {
        let mut s = state.clone();
        let r0 = self.rates(&s)?;
        Self::kick(&mut s, &r0, 0.5 * dt);
        self.velocities_from_momenta(&mut s)?;
        for sec in [s.matter.as_mut(), s.gauge.as_mut()].into_iter().flatten() {
            let v = sec.v.clone();
            sec.q.add_scaled(dt, &v);
        }
        s.t = state.t + dt;
        let r1 = self.rates(&s)?;
        Self::kick(&mut s, &r1, 0.5 * dt);
        self.velocities_from_momenta(&mut s)?;
        Ok(s)
    }

    fn derivative(&self, s: &PontryaginState) -> Result<(Vec<FormField>, Vec<FormField>)> {
        let r = self.rates(s)?;
        let mut dq = Vec::new();
        let mut dp = Vec::new();
        for (sec, rate) in [(&s.matter, r.matter), (&s.gauge, r.gauge)] {
            if let (Some(sec), Some(rate)) = (sec, rate) {
                dq.push(sec.v.clone());
                dp.push(rate.rate);
            }
        }
        Ok((dq, dp))
    }

    fn shifted(
        &self,
        base: &PontryaginState,
        dq: &[FormField],
        dp: &[FormField],
        h: Real,
        t: Real,
    ) -> Result<PontryaginState> {
        let mut s = base.clone();
        s.t = t;
        for (i, sec) in [s.matter.as_mut(), s.gauge.as_mut()]
            .into_iter()
            .flatten()
            .enumerate()
        {
            sec.q.add_scaled(h, &dq[i]);
            sec.p.interior.add_scaled(h, &dp[i]);
        }
        self.velocities_from_momenta(&mut s)?;
        Ok(s)
    }

    fn rk4(&self, state: &PontryaginState, dt: Real) -> Result<PontryaginState> {
        let t = state.t;
        let (q1, p1) = self.derivative(state)?;
        let s2 = self.shifted(state, &q1, &p1, 0.5 * dt, t + 0.5 * dt)?;
        let (q2, p2) = self.derivative(&s2)?;
        let s3 = self.shifted(state, &q2, &p2, 0.5 * dt, t + 0.5 * dt)?;
        let (q3, p3) = self.derivative(&s3)?;
        let s4 = self.shifted(state, &q3, &p3, dt, t + dt)?;
        let (q4, p4) = self.derivative(&s4)?;
        let combine = |a: &[FormField],
                       b: &[FormField],
                       c: &[FormField],
                       d: &[FormField]|
         -> Vec<FormField> {
            (0..a.len())
                .map(|i| {
                    let mut x = a[i].scaled(1.0 / 6.0);
                    x.add_scaled(2.0 / 6.0, &b[i]);
                    x.add_scaled(2.0 / 6.0, &c[i]);
                    x.add_scaled(1.0 / 6.0, &d[i]);
                    x
                })
                .collect()
        };
        let dq = combine(&q1, &q2, &q3, &q4);
        let dp = combine(&p1, &p2, &p3, &p4);
        self.shifted(state, &dq, &dp, dt, t + dt)
    }

    // -----------------------------------------------------------------
    // Diagnostics.

    /// Energy, powers, charge and boundary residual at one state.
    pub fn sample(&self, state: &PontryaginState) -> Result<Sample> {
        let mut out = Sample {
            t: state.t,
            energy_matter: 0.0,
            energy_gauge: 0.0,
            power_matter: 0.0,
            power_gauge: 0.0,
            power_boundary: vec![0.0; self.boundaries.len()],
            power_boundary_matter: 0.0,
            power_boundary_gauge: 0.0,
            interaction_gauge: 0.0,
            interaction_matter: 0.0,
            charge: Vec::new(),
            boundary_residual: 0.0,
        };
        for sector in self.sectors() {
            let s = self.sector_state(sector, state)?;
            let zeta = self.zeta(sector, state)?;
            let d = self.density(sector)?;
            let args = FieldArgs {
                metric: &self.metric,
                phi: &s.q,
                nu: &s.v,
                zeta: &zeta,
            };
            let energy = energy_field(d, &args, Representation::Star).integrate(&self.grid);
            let power = match self.interior_force(sector, state.t, Representation::Star)? {
                Some(f) => pair_star(&f, &s.v, &self.grid),
                None => 0.0,
            };
            let mut boundary_total = 0.0;
            for (i, bd) in self.boundaries.iter().enumerate() {
                if let Some(f) = self.boundary_force(sector, bd, state.t, Representation::Dagger)? {
                    let pulled = pullback_on_nodes(&s.v, bd.face, &bd.nodes);
                    let p = wedge_pair(&pulled, &f)?.integrate_face(bd);
                    out.power_boundary[i] += p;
                    boundary_total += p;
                }
            }
            let mut dz = derivative_field(d, Slot::Zeta, Representation::Star, &args);
            let residual =
                self.apply_boundary_currents(sector, &mut dz, state.t, Representation::Star)?;
            out.boundary_residual = out.boundary_residual.max(residual);
            match sector {
                Sector::Matter => {
                    out.energy_matter = energy;
                    out.power_matter = power;
                    out.power_boundary_matter = boundary_total;
                }
                Sector::Gauge => {
                    out.energy_gauge = energy;
                    out.power_gauge = power;
                    out.power_boundary_gauge = boundary_total;
                }
            }
        }
        if let Some((g, m)) = self.interaction_powers(state)? {
            out.interaction_gauge = g;
            out.interaction_matter = m;
        }
        if self.gauge.is_some() {
            let rho = self.charge_density(state)?;
            out.charge = integrate_components(&rho, &self.metric, &self.grid);
        }
        Ok(out)
    }

    /// Gauge and matter interaction powers for a coupled system.
    pub fn interaction_powers(&self, state: &PontryaginState) -> Result<Option<(Real, Real)>> {
        let Some(m) = &self.matter else {
            return Ok(None);
        };
        let Some(rep) = &m.coupling else {
            return Ok(None);
        };
        let sm = self.sector_state(Sector::Matter, state)?;
        let sg = self.sector_state(Sector::Gauge, state)?;
        let zeta = self.matter_zeta(state)?;
        let args = FieldArgs {
            metric: &self.metric,
            phi: &sm.q,
            nu: &sm.v,
            zeta: &zeta,
        };
        let chi = derivative_field(m.density.as_ref(), Slot::Zeta, Representation::Star, &args);
        let gauge_side = rep_action_adjoint(rep, &sm.q, &chi)?;
        let matter_side = rep_action(rep, &sm.q, &sg.v)?;
        Ok(Some((
            pair_star(&gauge_side, &sg.v, &self.grid),
            -pair_star(&chi, &matter_side, &self.grid),
        )))
    }

    /// Non-Abelian charge density `rho = delta^A E` with `E = -eps`.
    pub fn charge_density(&self, state: &PontryaginState) -> Result<FormField> {
        let s = self.sector_state(Sector::Gauge, state)?;
        let conn = self.gauge_connection(state)?;
        let e = s.v.scaled(-1.0);
        Ok(codifferential(&self.grid, &self.metric, Some(&conn), &e)?)
    }

    /// Total current `J + (rho*_phi(d_zeta L_mat))^flat / sqrt|g|` seen by `E`.
    pub fn total_current(&self, state: &PontryaginState) -> Result<FormField> {
        let g = self
            .gauge
            .as_ref()
            .ok_or(DynamicsError::MissingSector("gauge"))?;
        let m = self.grid.dim();
        let n = g.algebra.dim();
        let mut j = FormField::zeros(m, 1, n, self.grid.len());
        if let Some(current) = &self.forces.gauge.interior {
            for node in 0..self.grid.len() {
                current(&self.grid.coords(node), state.t, j.at_mut(node));
            }
        }
        if let Some(cross) = self.cross_term(state, Representation::Star)? {
            let basis = Basis::new(m, 1);
            let mut low = vec![0.0; m * n];
            for node in 0..self.grid.len() {
                let pm = self.metric.at(node);
                lower_point(&basis, n, pm, cross.at(node), &mut low);
                for (o, l) in j.at_mut(node).iter_mut().zip(&low) {
                    *o += l / pm.sqrt_det;
                }
            }
        }
        Ok(j)
    }

    /// `|| (rho_{n+1} - rho_{n-1}) / (t_{n+1} - t_{n-1}) + delta^A J_n ||`.
    pub fn charge_residual(
        &self,
        prev: &PontryaginState,
        mid: &PontryaginState,
        next: &PontryaginState,
    ) -> Result<Real> {
        let span = next.t - prev.t;
        let mut r = self.charge_density(next)?;
        r.add_scaled(-1.0, &self.charge_density(prev)?);
        r.scale(1.0 / span);
        let conn = self.gauge_connection(mid)?;
        let j = self.total_current(mid)?;
        r.add_scaled(
            1.0,
            &codifferential(&self.grid, &self.metric, Some(&conn), &j)?,
        );
        Ok(r.l2_norm(&self.grid))
    }

    /// `|| d^A B_A ||`; zero in dimension two where 3-forms vanish.
    pub fn bianchi_residual(&self, state: &PontryaginState) -> Result<Real> {
        if self.grid.dim() < 3 {
            return Ok(0.0);
        }
        let b = self.curvature(state)?;
        let conn = self.gauge_connection(state)?;
        Ok(cov_ext_deriv(&self.grid, Some(&conn), &b)?.l2_norm(&self.grid))
    }

    /// `|| (B_{n+1} - B_{n-1}) / (t_{n+1} - t_{n-1}) + d^A E_n ||`.
    pub fn bianchi_rate_residual(
        &self,
        prev: &PontryaginState,
        mid: &PontryaginState,
        next: &PontryaginState,
    ) -> Result<Real> {
        let span = next.t - prev.t;
        let mut r = self.curvature(next)?;
        r.add_scaled(-1.0, &self.curvature(prev)?);
        r.scale(1.0 / span);
        let s = self.sector_state(Sector::Gauge, mid)?;
        let conn = self.gauge_connection(mid)?;
        let e = s.v.scaled(-1.0);
        r.add_scaled(1.0, &cov_ext_deriv(&self.grid, Some(&conn), &e)?);
        Ok(r.l2_norm(&self.grid))
    }

    /// Local balance `dE/dt + dS - nu ^ F` as a density, summed over sectors.
    pub fn local_balance(
        &self,
        prev: &PontryaginState,
        mid: &PontryaginState,
        next: &PontryaginState,
    ) -> Result<Vec<Real>> {
        let span = next.t - prev.t;
        let mut out = vec![0.0; self.grid.len()];
        for sector in self.sectors() {
            let d = self.density(sector)?;
            let energy = |st: &PontryaginState| -> Result<Vec<Real>> {
                let s = self.sector_state(sector, st)?;
                let zeta = self.zeta(sector, st)?;
                let args = FieldArgs {
                    metric: &self.metric,
                    phi: &s.q,
                    nu: &s.v,
                    zeta: &zeta,
                };
                Ok(energy_field(d, &args, Representation::Star).values)
            };
            let (e0, e1) = (energy(prev)?, energy(next)?);
            let s = self.sector_state(sector, mid)?;
            let zeta = self.zeta(sector, mid)?;
            let args = FieldArgs {
                metric: &self.metric,
                phi: &s.q,
                nu: &s.v,
                zeta: &zeta,
            };
            let flux = self.corrected_flux(sector, d, &args, mid.t)?;
            let dflux = cov_ext_deriv(&self.grid, None, &flux)?;
            let force = self.interior_force(sector, mid.t, Representation::Star)?;
            for node in 0..self.grid.len() {
                let mut r = (e1[node] - e0[node]) / span + dflux.get(node, 0, 0);
                if let Some(f) = &force {
                    r -= contract_point(f.at(node), s.v.at(node));
                }
                out[node] += r;
            }
        }
        Ok(out)
    }

    /// Poynting flux `nu ^ eta` with the boundary data imposed on `eta`.
    fn corrected_flux(
        &self,
        sector: Sector,
        d: &dyn Density,
        args: &FieldArgs,
        t: Real,
    ) -> Result<FormField> {
        let m = d.dim();
        let (k, n) = (d.degree(), d.fiber());
        let mut eta = derivative_field(d, Slot::Zeta, Representation::Dagger, args);
        self.apply_boundary_currents(sector, &mut eta, t, Representation::Dagger)?;
        let (left, right, target) = (
            Basis::new(m, k),
            Basis::new(m, m - k - 1),
            Basis::new(m, m - 1),
        );
        let mut out = FormField::zeros(m, m - 1, 1, self.grid.len());
        for node in 0..self.grid.len() {
            wedge_to_form(
                &left,
                &right,
                &target,
                n,
                args.nu.at(node),
                eta.at(node),
                out.at_mut(node),
            );
        }
        Ok(out)
    }

    /// Weighted `L2` norm of [`System::local_balance`] with `mu_g`.
    pub fn local_balance_norm(
        &self,
        prev: &PontryaginState,
        mid: &PontryaginState,
        next: &PontryaginState,
    ) -> Result<Real> {
        let r = self.local_balance(prev, mid, next)?;
        Ok(r.iter()
            .enumerate()
            .map(|(n, v)| self.grid.weight(n) * v * v / self.metric.sqrt_det(n))
            .sum::<Real>()
            .sqrt())
    }

    // -----------------------------------------------------------------
    // Variational consistency.

    /// Discrete Lagrangian `int L` of a configuration with given velocities.
    fn total_lagrangian(&self, state: &PontryaginState) -> Result<Real> {
        let mut total = 0.0;
        for sector in self.sectors() {
            let s = self.sector_state(sector, state)?;
            let zeta = self.zeta(sector, state)?;
            let args = FieldArgs {
                metric: &self.metric,
                phi: &s.q,
                nu: &s.v,
                zeta: &zeta,
            };
            total += crate::lagrangian::lagrangian_field(self.density(sector)?, &args)
                .integrate(&self.grid);
        }
        Ok(total)
    }

    /// Compares the implemented equations at trajectory level `level` with
    /// the finite-difference gradient of the discrete action
    /// `sum_n dt/2 (L(q_n, v_{n+1/2}) + L(q_{n+1}, v_{n+1/2}))` plus the
    /// force pairing.
    ///
    /// On bounded axes only nodes at least three cells from every face are
    /// checked; closer to the faces the one-sided stencils and the imposed
    /// boundary data are not the adjoint of the quadrature.
    pub fn action_gradient_check(
        &self,
        trajectory: &[PontryaginState],
        level: usize,
    ) -> Result<GradientCheck> {
        if trajectory.len() < 3 {
            return Err(DynamicsError::InsufficientHistory {
                needed: 3,
                got: trajectory.len(),
            });
        }
        if level == 0 || level + 1 >= trajectory.len() {
            return Err(DynamicsError::Inconsistent(
                "check level must be an interior time level".into(),
            ));
        }
        let prev = &trajectory[level - 1];
        let here = &trajectory[level];
        let next = &trajectory[level + 1];
        let dt_minus = here.t - prev.t;
        let dt_plus = next.t - here.t;

        let with_velocity =
            |q_from: &PontryaginState, q_to: &PontryaginState, at: &PontryaginState, dt: Real| {
                let mut s = at.clone();
                for (dst, (a, b)) in [s.matter.as_mut(), s.gauge.as_mut()]
                    .into_iter()
                    .zip([(&q_from.matter, &q_to.matter), (&q_from.gauge, &q_to.gauge)])
                {
                    if let (Some(dst), Some(a), Some(b)) = (dst, a, b) {
                        let mut v = b.q.clone();
                        v.add_scaled(-1.0, &a.q);
                        v.scale(1.0 / dt);
                        dst.v = v;
                    }
                }
                s
            };
        let action = |trial: &PontryaginState| -> Result<Real> {
            let left_a = with_velocity(prev, trial, prev, dt_minus);
            let left_b = with_velocity(prev, trial, trial, dt_minus);
            let right_a = with_velocity(trial, next, trial, dt_plus);
            let right_b = with_velocity(trial, next, next, dt_plus);
            Ok(0.5
                * dt_minus
                * (self.total_lagrangian(&left_a)? + self.total_lagrangian(&left_b)?)
                + 0.5
                    * dt_plus
                    * (self.total_lagrangian(&right_a)? + self.total_lagrangian(&right_b)?))
        };

        let mid_minus = with_velocity(prev, here, here, dt_minus);
        let mid_plus = with_velocity(here, next, here, dt_plus);
        let tau = 0.5 * (dt_minus + dt_plus);
        let mask = self.centered_nodes();
        let mut worst: Real = 0.0;
        let mut scale: Real = 0.0;
        let mut checked = 0;
        for sector in self.sectors() {
            let p_minus = self.momentum(sector, &mid_minus, Representation::Star)?;
            let p_plus = self.momentum(sector, &mid_plus, Representation::Star)?;
            let rate = match sector {
                Sector::Matter => self.assemble_matter_rhs(here, Representation::Star)?,
                Sector::Gauge => self.assemble_gauge_rhs(here, Representation::Star)?,
            }
            .rate;
            let force = self.interior_force(sector, here.t, Representation::Star)?;
            let stride = self.sector_state(sector, here)?.q.stride();
            for &node in &mask {
                let w = self.grid.weight(node);
                for c in 0..stride {
                    let x0 = self.sector_state(sector, here)?.q.at(node)[c];
                    let h = 1e-6 * (1.0 + x0.abs());
                    let mut trial = here.clone();
                    let set = |st: &mut PontryaginState, v: Real| {
                        let s = match sector {
                            Sector::Matter => st.matter.as_mut(),
                            Sector::Gauge => st.gauge.as_mut(),
                        }
                        .expect("active sector");
                        s.q.at_mut(node)[c] = v;
                    };
                    set(&mut trial, x0 + h);
                    let up = action(&trial)?;
                    set(&mut trial, x0 - h);
                    let down = action(&trial)?;
                    let grad = (up - down) / (2.0 * h);
                    let f = force.as_ref().map_or(0.0, |f| f.at(node)[c]);
                    let implemented =
                        (p_plus.at(node)[c] - p_minus.at(node)[c]) - tau * rate.at(node)[c];
                    let lda = grad + tau * w * f;
                    worst = worst.max((lda + w * implemented).abs());
                    scale = scale.max(grad.abs()).max((w * implemented).abs());
                    checked += 1;
                }
            }
        }
        Ok(GradientCheck {
            max_deviation: worst,
            scale,
            checked,
        })
    }

    fn centered_nodes(&self) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&n| {
                let idx = self.grid.multi_index(n);
                self.grid
                    .axes()
                    .iter()
                    .enumerate()
                    .all(|(i, ax)| match ax.topology {
                        crate::grid::Topology::Periodic => true,
                        crate::grid::Topology::Bounded => idx[i] >= 3 && idx[i] + 4 <= ax.nodes,
                    })
            })
            .collect()
    }
}

fn lower_fiber(kappa: &FiberMetric, slots: usize, raw: &[Real], out: &mut [Real]) {
    let n = kappa.dim();
    for s in 0..slots {
        kappa.lower(&raw[s * n..(s + 1) * n], &mut out[s * n..(s + 1) * n]);
    }
}

/// `int chi . phi` for a star tensor and a form of the same degree.
pub fn pair_star(chi: &FormField, phi: &FormField, grid: &RectGrid) -> Real {
    (0..grid.len())
        .map(|n| grid.weight(n) * contract_point(chi.at(n), phi.at(n)))
        .sum()
}

/// `int f^a mu_g` for each fiber component of a 0-form.
pub fn integrate_components(f: &FormField, metric: &MetricField, grid: &RectGrid) -> Vec<Real> {
    let n = f.fiber();
    let mut out = vec![0.0; n];
    for node in 0..grid.len() {
        let w = grid.weight(node) * metric.sqrt_det(node);
        for (a, o) in out.iter_mut().enumerate() {
            *o += w * f.at(node)[a];
        }
    }
    out
}

/// Converts a star dual to the dagger representation (`Phi`).
pub fn star_to_dagger(f: &FormField) -> FormField {
    phi_iso(f)
}

/// Number of components of a `k`-form with fiber `n` in dimension `m`.
pub fn components(m: usize, k: usize, n: usize) -> usize {
    binom(m, k) * n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AxisSpec;
    use crate::lagrangian::{matter_density, Potential};

    fn rod(n: usize) -> RectGrid {
        RectGrid::new(vec![AxisSpec::bounded(n, 1.0)]).unwrap()
    }

    fn kg_system(grid: RectGrid, rep: Representation) -> System {
        let metric = MetricField::flat(&grid);
        System::new(grid, metric, rep)
            .unwrap()
            .with_matter(MatterSector::quadratic(
                matter_density(
                    1,
                    FiberMetric::identity(1),
                    Potential::KleinGordon { mass: 0.5 },
                )
                .unwrap(),
            ))
            .unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = RectGrid::new(vec![AxisSpec::periodic(16, 1.0)]).unwrap();
        let sys = kg_system(grid.clone(), Representation::Star);
        let z = FormField::zeros_on(&grid, 0, 1);
        let mut s = sys.initial_state(0.0, Some((z.clone(), z)), None).unwrap();
        for _ in 0..10 {
            s = sys.step(&s, 0.01, Scheme::Leapfrog).unwrap();
        }
        let m = s.matter.unwrap();
        assert_eq!(m.q.max_abs(), 0.0);
        assert_eq!(m.p.interior.max_abs(), 0.0);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let grid = RectGrid::new(vec![AxisSpec::periodic(16, 1.0)]).unwrap();
        let sys = kg_system(grid.clone(), Representation::Star);
        let z = FormField::zeros_on(&grid, 0, 1);
        let s = sys.initial_state(0.0, Some((z.clone(), z)), None).unwrap();
        assert!(matches!(
            sys.step(&s, 1.0, Scheme::Leapfrog),
            Err(DynamicsError::Cfl { .. })
        ));
        assert!(matches!(
            sys.step(&s, 0.0, Scheme::Leapfrog),
            Err(DynamicsError::NonPositiveStep(_))
        ));
    }

    #[test]
    fn boundary_current_on_periodic_axis_is_rejected() {
        let grid = RectGrid::new(vec![AxisSpec::periodic(8, 1.0)]).unwrap();
        let sys = kg_system(grid, Representation::Star);
        let mut forces = ForceModel::default();
        forces.matter.boundary.push((
            Face::new(0, crate::grid::Side::Upper),
            Arc::new(|_, _, o| o[0] = 1.0),
        ));
        assert!(matches!(
            sys.with_forces(forces),
            Err(DynamicsError::NoSuchFace(_))
        ));
    }

    #[test]
    fn homogeneous_boundary_forces_zero_normal_flux() {
        let grid = rod(9);
        let sys = kg_system(grid.clone(), Representation::Star);
        let phi = FormField::from_fn(&grid, 0, 1, |x, _, _| x[0] * x[0]);
        let z = FormField::zeros_on(&grid, 0, 1);
        let s = sys.initial_state(0.0, Some((phi, z)), None).unwrap();
        let zeta = sys.matter_zeta(&s).unwrap();
        let args = FieldArgs {
            metric: sys.metric(),
            phi: &s.matter.as_ref().unwrap().q,
            nu: &s.matter.as_ref().unwrap().v,
            zeta: &zeta,
        };
        let mut dz = derivative_field(
            sys.density(Sector::Matter).unwrap(),
            Slot::Zeta,
            Representation::Star,
            &args,
        );
        let residual = sys
            .apply_boundary_currents(Sector::Matter, &mut dz, 0.0, Representation::Star)
            .unwrap();
        assert!((residual - 2.0).abs() < 1e-12);
        assert_eq!(dz.get(0, 0, 0), 0.0);
        assert_eq!(dz.get(8, 0, 0), 0.0);
    }

    #[test]
    fn star_and_dagger_rates_agree() {
        let grid = rod(11);
        let mut forces = ForceModel::default();
        forces.matter.boundary.push((
            Face::new(0, crate::grid::Side::Upper),
            Arc::new(|_, t, o| o[0] = 0.3 + t),
        ));
        forces.matter.boundary.push((
            Face::new(0, crate::grid::Side::Lower),
            Arc::new(|_, _, o| o[0] = -0.2),
        ));
        forces.matter.interior = Some(Arc::new(|x, _, o| o[0] = x[0].sin()));
        let star = kg_system(grid.clone(), Representation::Star)
            .with_forces(forces.clone())
            .unwrap();
        let dagger = kg_system(grid.clone(), Representation::Dagger)
            .with_forces(forces)
            .unwrap();
        let phi = FormField::from_fn(&grid, 0, 1, |x, _, _| (2.0 * x[0]).cos());
        let nu = FormField::from_fn(&grid, 0, 1, |x, _, _| x[0]);
        let s1 = star
            .initial_state(0.0, Some((phi.clone(), nu.clone())), None)
            .unwrap();
        let s2 = dagger.initial_state(0.0, Some((phi, nu)), None).unwrap();
        let r1 = star.assemble_matter_rhs(&s1, Representation::Star).unwrap();
        let r2 = dagger
            .assemble_matter_rhs(&s2, Representation::Dagger)
            .unwrap();
        assert!(star_to_dagger(&r1.rate).max_abs_diff(&r2.rate) < 1e-12);
        assert!((r1.boundary_residual - r2.boundary_residual).abs() < 1e-12);
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let grid = RectGrid::new(vec![AxisSpec::periodic(32, 1.0)]).unwrap();
        let sys = kg_system(grid.clone(), Representation::Star);
        let phi = FormField::from_fn(&grid, 0, 1, |x, _, _| (std::f64::consts::TAU * x[0]).sin());
        let nu = FormField::from_fn(&grid, 0, 1, |x, _, _| (std::f64::consts::TAU * x[0]).cos());
        let start = sys.initial_state(0.0, Some((phi, nu)), None).unwrap();
        let dt = 0.25 / 32.0;
        let mut s = sys.step(&start, dt, Scheme::Leapfrog).unwrap();
        s.negate_velocities();
        let mut back = sys.step(&s, dt, Scheme::Leapfrog).unwrap();
        back.negate_velocities();
        back.t = start.t;
        assert!(back.max_difference(&start) < 1e-12);
    }

    #[test]
    fn insufficient_history_is_an_error() {
        assert!(matches!(
            energy_balance(&[]),
            Err(DynamicsError::InsufficientHistory { needed: 3, got: 0 })
        ));
    }
}
