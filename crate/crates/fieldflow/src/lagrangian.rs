//! Lagrangian densities and their fiber derivatives.
//!
//! A density is evaluated pointwise from the configuration `phi`, the
//! velocity `nu` and the field strength `zeta`; the value returned is the
//! coefficient of `d^m x`. Star derivatives are plain gradients of that
//! coefficient with respect to the form components. Dagger derivatives are
//! their images under `Phi`, which built-in densities compute directly as
//! Hodge duals.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::connection::{ConnectionError, LieAlgebra, LieRepresentation};
use crate::exterior::{
    binom, fiber_map_point, hodge_point, inner_point, lower_point, merge_sign, phi_point,
    raise_point, Basis, FormField, Representation, TopDensity,
};
use crate::grid::{FiberMetric, MetricField, PointMetric};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("configuration degree {degree} must be below the dimension {dim}")]
    DegreeTooHigh { degree: usize, dim: usize },
    #[error("fiber metric has dimension {metric} but the fiber has dimension {fiber}")]
    FiberMetricMismatch { metric: usize, fiber: usize },
    #[error("metric of dimension {metric} used with a density in dimension {density}")]
    MetricMismatch { metric: usize, density: usize },
    #[error("Legendre map is not invertible at this point")]
    LegendreSingular,
    #[error("incompatible sectors: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Connection(#[from] ConnectionError),
}

/// Evaluation slot of a density.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Phi,
    Nu,
    Zeta,
}

/// Pointwise arguments of a density.
#[derive(Clone, Copy, Debug)]
pub struct PointArgs<'a> {
    pub metric: &'a PointMetric,
    pub phi: &'a [Real],
    pub nu: &'a [Real],
    pub zeta: &'a [Real],
}

/// Central-difference step used by the fallback derivatives.
pub const FD_STEP: Real = 1e-5;

/// A first-order Lagrangian density on `k`-forms with values in a fiber of dimension `n`.
pub trait Density: Send + Sync {
    fn dim(&self) -> usize;
    fn degree(&self) -> usize;
    fn fiber(&self) -> usize;

    /// Coefficient of `d^m x`.
    fn evaluate(&self, p: &PointArgs) -> Real;

    /// Whether the fiber derivatives are analytic or finite differences.
    fn is_analytic(&self) -> bool {
        false
    }

    /// Star representation of the fiber derivative in `slot`.
    fn star_derivative(&self, slot: Slot, p: &PointArgs, out: &mut [Real]) {
        fd_star_derivative(self, slot, p, out);
    }

    /// Dagger representation of the fiber derivative in `slot`.
    fn dagger_derivative(&self, slot: Slot, p: &PointArgs, out: &mut [Real]) {
        let m = self.dim();
        let up = slot_degree(self.degree(), slot);
        let from = Basis::new(m, up);
        let to = Basis::new(m, m - up);
        let mut star = vec![0.0; from.len() * self.fiber()];
        self.star_derivative(slot, p, &mut star);
        phi_point(&from, &to, self.fiber(), &star, out);
    }

    /// Solves `d_nu L(phi, nu, zeta) = momentum` (star) for `nu`.
    fn legendre_inverse(
        &self,
        metric: &PointMetric,
        phi: &[Real],
        zeta: &[Real],
        momentum: &[Real],
        out: &mut [Real],
    ) -> Result<(), LagrangianError> {
        newton_legendre(self, metric, phi, zeta, momentum, out)
    }
}

/// Form degree of the primal field in a slot.
pub fn slot_degree(degree: usize, slot: Slot) -> usize {
    match slot {
        Slot::Phi | Slot::Nu => degree,
        Slot::Zeta => degree + 1,
    }
}

/// Number of components in a slot.
pub fn slot_len<D: Density + ?Sized>(d: &D, slot: Slot) -> usize {
    binom(d.dim(), slot_degree(d.degree(), slot)) * d.fiber()
}

/// Central differences of [`Density::evaluate`] in one slot.
pub fn fd_star_derivative<D: Density + ?Sized>(d: &D, slot: Slot, p: &PointArgs, out: &mut [Real]) {
    let mut buf = match slot {
        Slot::Phi => p.phi.to_vec(),
        Slot::Nu => p.nu.to_vec(),
        Slot::Zeta => p.zeta.to_vec(),
    };
    for c in 0..buf.len() {
        let x0 = buf[c];
        let h = FD_STEP * (1.0 + x0.abs());
        let eval = |v: Real, buf: &mut Vec<Real>| {
            buf[c] = v;
            let q = match slot {
                Slot::Phi => PointArgs { phi: buf, ..*p },
                Slot::Nu => PointArgs { nu: buf, ..*p },
                Slot::Zeta => PointArgs { zeta: buf, ..*p },
            };
            d.evaluate(&q)
        };
        let fp = eval(x0 + h, &mut buf);
        let fm = eval(x0 - h, &mut buf);
        buf[c] = x0;
        out[c] = (fp - fm) / (2.0 * h);
    }
}

fn newton_legendre<D: Density + ?Sized>(
    d: &D,
    metric: &PointMetric,
    phi: &[Real],
    zeta: &[Real],
    momentum: &[Real],
    out: &mut [Real],
) -> Result<(), LagrangianError> {
    let n = momentum.len();
    let mut nu = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    for _ in 0..50 {
        let p = PointArgs {
            metric,
            phi,
            nu: &nu,
            zeta,
        };
        d.star_derivative(Slot::Nu, &p, &mut grad);
        let r = DVector::from_iterator(n, grad.iter().zip(momentum).map(|(g, m)| g - m));
        if r.amax() <= 1e-13 * (1.0 + momentum.iter().fold(0.0_f64, |a, b| a.max(b.abs()))) {
            out.copy_from_slice(&nu);
            return Ok(());
        }
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let h = FD_STEP * (1.0 + nu[c].abs());
            let mut probe = nu.clone();
            probe[c] += h;
            d.star_derivative(
                Slot::Nu,
                &PointArgs {
                    metric,
                    phi,
                    nu: &probe,
                    zeta,
                },
                &mut shifted,
            );
            for row in 0..n {
                jac[(row, c)] = (shifted[row] - grad[row]) / h;
            }
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or(LagrangianError::LegendreSingular)?;
        for c in 0..n {
            nu[c] -= step[c];
        }
    }
    Err(LagrangianError::LegendreSingular)
}

/// Potential as a function of `s = g(phi, phi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Potential {
    Zero,
    /// `V = m s`.
    KleinGordon {
        mass: Real,
    },
    /// `V = lambda s^2 - mu s`.
    Higgs {
        lambda: Real,
        mu: Real,
    },
}

impl Potential {
    pub fn value(&self, s: Real) -> Real {
        match *self {
            Potential::Zero => 0.0,
            Potential::KleinGordon { mass } => mass * s,
            Potential::Higgs { lambda, mu } => lambda * s * s - mu * s,
        }
    }

    /// `dV/ds`.
    pub fn slope(&self, s: Real) -> Real {
        match *self {
            Potential::Zero => 0.0,
            Potential::KleinGordon { mass } => mass,
            Potential::Higgs { lambda, mu } => 2.0 * lambda * s - mu,
        }
    }

    /// `V(phi)` for a fiber vector with metric `kappa`.
    pub fn eval_fiber(&self, kappa: &FiberMetric, phi: &[Real]) -> Real {
        self.value(fiber_norm_sq(kappa, phi))
    }

    /// `dV/dphi = 2 V'(s) kappa phi`, a dual-fiber vector.
    pub fn gradient_fiber(&self, kappa: &FiberMetric, phi: &[Real], out: &mut [Real]) {
        let s = fiber_norm_sq(kappa, phi);
        kappa.lower(phi, out);
        let f = 2.0 * self.slope(s);
        for o in out.iter_mut() {
            *o *= f;
        }
    }

    /// `grad_kappa V`, the fiber-sharp of [`Potential::gradient_fiber`].
    pub fn grad_kappa(&self, kappa: &FiberMetric, phi: &[Real], out: &mut [Real]) {
        let s = fiber_norm_sq(kappa, phi);
        let f = 2.0 * self.slope(s);
        for (o, p) in out.iter_mut().zip(phi) {
            *o = f * p;
        }
    }
}

fn fiber_norm_sq(kappa: &FiberMetric, phi: &[Real]) -> Real {
    let n = kappa.dim();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += kappa.get(a, b) * phi[a] * phi[b];
        }
    }
    s
}

/// `sqrt|g| (1/2 g(nu, nu) - 1/2 g(zeta, zeta) - V(g(phi, phi)))`.
///
/// With `k = 0` this is the matter density; with `k = 1`, an algebra-valued
/// fiber and no potential it is the Yang-Mills density.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticDensity {
    dim: usize,
    degree: usize,
    kappa: FiberMetric,
    potential: Potential,
    config: Basis,
    strength: Basis,
    config_dual: Basis,
    strength_dual: Basis,
}

impl QuadraticDensity {
    pub fn new(
        dim: usize,
        degree: usize,
        kappa: FiberMetric,
        potential: Potential,
    ) -> Result<Self, LagrangianError> {
        if degree >= dim {
            return Err(LagrangianError::DegreeTooHigh { degree, dim });
        }
        Ok(Self {
            dim,
            degree,
            kappa,
            potential,
            config: Basis::new(dim, degree),
            strength: Basis::new(dim, degree + 1),
            config_dual: Basis::new(dim, dim - degree),
            strength_dual: Basis::new(dim, dim - degree - 1),
        })
    }

    pub fn kappa(&self) -> &FiberMetric {
        &self.kappa
    }

    pub fn potential(&self) -> Potential {
        self.potential
    }

    fn slot_bases(&self, slot: Slot) -> (&Basis, &Basis) {
        match slot {
            Slot::Phi | Slot::Nu => (&self.config, &self.config_dual),
            Slot::Zeta => (&self.strength, &self.strength_dual),
        }
    }

    fn slot_scale(&self, slot: Slot, p: &PointArgs) -> (Real, Real) {
        match slot {
            Slot::Nu => (1.0, 1.0),
            Slot::Zeta => (-1.0, 1.0),
            Slot::Phi => {
                let s = inner_point(
                    &self.config,
                    self.fiber(),
                    p.metric,
                    &self.kappa,
                    p.phi,
                    p.phi,
                );
                (-2.0 * self.potential.slope(s), 1.0)
            }
        }
    }

    fn slot_value<'a>(slot: Slot, p: &PointArgs<'a>) -> &'a [Real] {
        match slot {
            Slot::Phi => p.phi,
            Slot::Nu => p.nu,
            Slot::Zeta => p.zeta,
        }
    }
}

/// Matter density on fiber-valued 0-forms.
pub fn matter_density(
    dim: usize,
    kappa: FiberMetric,
    potential: Potential,
) -> Result<QuadraticDensity, LagrangianError> {
    QuadraticDensity::new(dim, 0, kappa, potential)
}

/// Yang-Mills density for a Lie algebra with `K = -identity`, so the fiber
/// metric `-K` is the identity.
pub fn ym_density(dim: usize, algebra: &LieAlgebra) -> Result<QuadraticDensity, LagrangianError> {
    QuadraticDensity::new(
        dim,
        1,
        FiberMetric::identity(algebra.dim()),
        Potential::Zero,
    )
}

impl Density for QuadraticDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn degree(&self) -> usize {
        self.degree
    }

    fn fiber(&self) -> usize {
        self.kappa.dim()
    }

    fn evaluate(&self, p: &PointArgs) -> Real {
        let n = self.fiber();
        let kin = inner_point(&self.config, n, p.metric, &self.kappa, p.nu, p.nu);
        let field = inner_point(&self.strength, n, p.metric, &self.kappa, p.zeta, p.zeta);
        let s = inner_point(&self.config, n, p.metric, &self.kappa, p.phi, p.phi);
        p.metric.sqrt_det * (0.5 * kin - 0.5 * field - self.potential.value(s))
    }

    fn is_analytic(&self) -> bool {
        true
    }

    fn star_derivative(&self, slot: Slot, p: &PointArgs, out: &mut [Real]) {
        let (basis, _) = self.slot_bases(slot);
        let (factor, _) = self.slot_scale(slot, p);
        let n = self.fiber();
        let v = Self::slot_value(slot, p);
        let mut lowered = vec![0.0; v.len()];
        fiber_map_point(basis.len(), n, v, &mut lowered, |a, b| self.kappa.get(a, b));
        raise_point(basis, n, p.metric, &lowered, out);
        let f = factor * p.metric.sqrt_det;
        for o in out.iter_mut() {
            *o *= f;
        }
    }

    fn dagger_derivative(&self, slot: Slot, p: &PointArgs, out: &mut [Real]) {
        let (basis, dual) = self.slot_bases(slot);
        let (factor, _) = self.slot_scale(slot, p);
        let n = self.fiber();
        let v = Self::slot_value(slot, p);
        let mut lowered = vec![0.0; v.len()];
        fiber_map_point(basis.len(), n, v, &mut lowered, |a, b| {
            factor * self.kappa.get(a, b)
        });
        hodge_point(basis, dual, n, p.metric, 1.0, &lowered, out);
    }

    fn legendre_inverse(
        &self,
        metric: &PointMetric,
        _phi: &[Real],
        _zeta: &[Real],
        momentum: &[Real],
        out: &mut [Real],
    ) -> Result<(), LagrangianError> {
        let n = self.fiber();
        let mut lowered = vec![0.0; momentum.len()];
        lower_point(&self.config, n, metric, momentum, &mut lowered);
        fiber_map_point(self.config.len(), n, &lowered, out, |a, b| {
            self.kappa.inv(a, b)
        });
        let inv = 1.0 / metric.sqrt_det;
        for o in out.iter_mut() {
            *o *= inv;
        }
        Ok(())
    }
}

/// Energy density `d_nu L . nu - L` in the chosen representation.
pub fn energy_density<D: Density + ?Sized>(d: &D, p: &PointArgs, rep: Representation) -> Real {
    let mut mom = vec![0.0; slot_len(d, Slot::Nu)];
    let pairing = match rep {
        Representation::Star => {
            d.star_derivative(Slot::Nu, p, &mut mom);
            mom.iter().zip(p.nu).map(|(a, b)| a * b).sum::<Real>()
        }
        Representation::Dagger => {
            d.dagger_derivative(Slot::Nu, p, &mut mom);
            let m = d.dim();
            let left = Basis::new(m, d.degree());
            let right = Basis::new(m, m - d.degree());
            crate::exterior::wedge_point(&left, &right, d.fiber(), p.nu, &mom)
        }
    };
    pairing - d.evaluate(p)
}

/// Energy flux at a point.
///
/// Star: the vector components `S^j` of `S = d_zeta L . nu` (a `(1, m)`
/// tensor). Dagger: the `(m-1)`-form `nu ^ dagger_zeta L`. The two are
/// related by `i_S d^m x = nu ^ Phi(d_zeta L)`.
pub fn flux<D: Density + ?Sized>(d: &D, p: &PointArgs, rep: Representation, out: &mut [Real]) {
    let m = d.dim();
    let k = d.degree();
    let n = d.fiber();
    let mut dz = vec![0.0; slot_len(d, Slot::Zeta)];
    let config = Basis::new(m, k);
    match rep {
        Representation::Star => {
            d.star_derivative(Slot::Zeta, p, &mut dz);
            crate::exterior::contract_mixed_point(
                &Basis::new(m, k + 1),
                &config,
                n,
                &dz,
                p.nu,
                out,
            );
        }
        Representation::Dagger => {
            d.dagger_derivative(Slot::Zeta, p, &mut dz);
            wedge_to_form(
                &config,
                &Basis::new(m, m - k - 1),
                &Basis::new(m, m - 1),
                n,
                p.nu,
                &dz,
                out,
            );
        }
    }
}

/// Wedge with fiber contraction into a form of non-top degree.
pub fn wedge_to_form(
    left: &Basis,
    right: &Basis,
    target: &Basis,
    fiber: usize,
    a: &[Real],
    b: &[Real],
    out: &mut [Real],
) {
    for o in out.iter_mut() {
        *o = 0.0;
    }
    for (si, mi) in left.indices().iter().enumerate() {
        for (sj, mj) in right.indices().iter().enumerate() {
            if let Some(sign) = merge_sign(*mi, *mj) {
                let c: Real = (0..fiber)
                    .map(|x| a[si * fiber + x] * b[sj * fiber + x])
                    .sum();
                out[target.slot(mi.union(*mj))] += sign * c;
            }
        }
    }
}

/// Field-level evaluation helpers over all nodes.
pub struct FieldArgs<'a> {
    pub metric: &'a MetricField,
    pub phi: &'a FormField,
    pub nu: &'a FormField,
    pub zeta: &'a FormField,
}

impl<'a> FieldArgs<'a> {
    #[inline]
    pub fn at(&self, node: usize) -> PointArgs<'a> {
        PointArgs {
            metric: self.metric.at(node),
            phi: self.phi.at(node),
            nu: self.nu.at(node),
            zeta: self.zeta.at(node),
        }
    }

    pub fn nodes(&self) -> usize {
        self.phi.nodes()
    }
}

/// The density itself as a top-degree field.
pub fn lagrangian_field<D: Density + ?Sized>(d: &D, f: &FieldArgs) -> TopDensity {
    TopDensity::new((0..f.nodes()).map(|n| d.evaluate(&f.at(n))).collect())
}

/// A fiber derivative as a field in the requested representation.
pub fn derivative_field<D: Density + ?Sized>(
    d: &D,
    slot: Slot,
    rep: Representation,
    f: &FieldArgs,
) -> FormField {
    let m = d.dim();
    let up = slot_degree(d.degree(), slot);
    let degree = match rep {
        Representation::Star => up,
        Representation::Dagger => m - up,
    };
    let mut out = FormField::zeros(m, degree, d.fiber(), f.nodes());
    for n in 0..f.nodes() {
        let p = f.at(n);
        match rep {
            Representation::Star => d.star_derivative(slot, &p, out.at_mut(n)),
            Representation::Dagger => d.dagger_derivative(slot, &p, out.at_mut(n)),
        }
    }
    out
}

/// Energy density as a top-degree field.
pub fn energy_field<D: Density + ?Sized>(d: &D, f: &FieldArgs, rep: Representation) -> TopDensity {
    TopDensity::new(
        (0..f.nodes())
            .map(|n| energy_density(d, &f.at(n), rep))
            .collect(),
    )
}

/// Energy flux as a field: a degree-1 field of vector components (star) or
/// an `(m-1)`-form (dagger), both with trivial fiber.
pub fn flux_field<D: Density + ?Sized>(d: &D, f: &FieldArgs, rep: Representation) -> FormField {
    let m = d.dim();
    let degree = match rep {
        Representation::Star => 1,
        Representation::Dagger => m - 1,
    };
    let mut out = FormField::zeros(m, degree, 1, f.nodes());
    for n in 0..f.nodes() {
        flux(d, &f.at(n), rep, out.at_mut(n));
    }
    out
}

/// Yang-Mills-Higgs composite: gauge density on `(A, eps, B_A)` plus matter
/// density on `(phi, nu, d^A phi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct YmhDensity {
    pub gauge: QuadraticDensity,
    pub matter: QuadraticDensity,
    pub coupling: LieRepresentation,
}

impl YmhDensity {
    pub fn new(
        gauge: QuadraticDensity,
        matter: QuadraticDensity,
        coupling: LieRepresentation,
    ) -> Result<Self, LagrangianError> {
        if gauge.degree() != 1 || matter.degree() != 0 || gauge.dim() != matter.dim() {
            return Err(LagrangianError::Incompatible(
                "gauge density must act on 1-forms and matter on 0-forms of the same dimension"
                    .into(),
            ));
        }
        if coupling.algebra_dim() != gauge.fiber() || coupling.dim() != matter.fiber() {
            return Err(LagrangianError::Incompatible(format!(
                "representation of a {}-dimensional algebra on R^{} does not fit gauge fiber {} and matter fiber {}",
                coupling.algebra_dim(),
                coupling.dim(),
                gauge.fiber(),
                matter.fiber()
            )));
        }
        Ok(Self {
            gauge,
            matter,
            coupling,
        })
    }

    pub fn evaluate(&self, gauge: &PointArgs, matter: &PointArgs) -> Real {
        self.gauge.evaluate(gauge) + self.matter.evaluate(matter)
    }

    /// `rho*_phi(d_zeta L_mat)` at a point in either representation.
    ///
    /// The fiber action commutes with `Phi`, so the same slotwise map serves
    /// both; `slots` is `m` for star and `m` for dagger (`(m-1)`-forms).
    pub fn cross_term(&self, matter: &PointArgs, rep: Representation, out: &mut [Real]) {
        let m = self.matter.dim();
        let mut dz = vec![0.0; m * self.matter.fiber()];
        match rep {
            Representation::Star => self.matter.star_derivative(Slot::Zeta, matter, &mut dz),
            Representation::Dagger => self.matter.dagger_derivative(Slot::Zeta, matter, &mut dz),
        }
        self.coupling.act_adjoint_point(matter.phi, &dz, m, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_metric(rng: &mut ChaCha8Rng, m: usize) -> PointMetric {
        let mut a = nalgebra::Matrix3::<Real>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = rng.random_range(-0.4..0.4);
            }
        }
        let g = a * a.transpose() + nalgebra::Matrix3::identity();
        PointMetric::from_matrix(m, g).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_state_has_zero_density() {
        let d = matter_density(
            2,
            FiberMetric::identity(2),
            Potential::KleinGordon { mass: 1.0 },
        )
        .unwrap();
        let pm = PointMetric::euclidean(2);
        let z0 = [0.0; 2];
        let z1 = [0.0; 4];
        let p = PointArgs {
            metric: &pm,
            phi: &z0,
            nu: &z0,
            zeta: &z1,
        };
        assert_eq!(d.evaluate(&p), 0.0);
        assert_eq!(energy_density(&d, &p, Representation::Star), 0.0);
    }

    #[test]
    fn unit_kinetic_gives_volume_form() {
        let d = matter_density(3, FiberMetric::identity(1), Potential::Zero).unwrap();
        let pm = PointMetric::euclidean(3);
        let nu = [2f64.sqrt()];
        let p = PointArgs {
            metric: &pm,
            phi: &[0.3],
            nu: &nu,
            zeta: &[0.0; 3],
        };
        assert!((d.evaluate(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (m, k, pot) in [
            (1, 0, Potential::KleinGordon { mass: 0.7 }),
            (
                2,
                0,
                Potential::Higgs {
                    lambda: 0.5,
                    mu: 0.3,
                },
            ),
            (3, 1, Potential::Zero),
            (2, 1, Potential::KleinGordon { mass: 0.2 }),
        ] {
            let kappa = FiberMetric::new(2, vec![2.0, 0.3, 0.3, 1.0]).unwrap();
            let d = QuadraticDensity::new(m, k, kappa, pot).unwrap();
            for _ in 0..20 {
                let pm = random_metric(&mut rng, m);
                let phi = rand_vec(&mut rng, slot_len(&d, Slot::Phi));
                let nu = rand_vec(&mut rng, slot_len(&d, Slot::Nu));
                let zeta = rand_vec(&mut rng, slot_len(&d, Slot::Zeta));
                let p = PointArgs {
                    metric: &pm,
                    phi: &phi,
                    nu: &nu,
                    zeta: &zeta,
                };
                for slot in [Slot::Phi, Slot::Nu, Slot::Zeta] {
                    let len = slot_len(&d, slot);
                    let mut a = vec![0.0; len];
                    let mut f = vec![0.0; len];
                    d.star_derivative(slot, &p, &mut a);
                    fd_star_derivative(&d, slot, &p, &mut f);
                    let scale = a.iter().fold(1e-3_f64, |s, x| s.max(x.abs()));
                    for (x, y) in a.iter().zip(&f) {
                        assert!((x - y).abs() <= 1e-7 * scale, "{slot:?}: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn dagger_is_phi_of_star() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = QuadraticDensity::new(
            3,
            1,
            FiberMetric::identity(3),
            Potential::KleinGordon { mass: 0.4 },
        )
        .unwrap();
        let pm = random_metric(&mut rng, 3);
        let phi = rand_vec(&mut rng, 9);
        let nu = rand_vec(&mut rng, 9);
        let zeta = rand_vec(&mut rng, 9);
        let p = PointArgs {
            metric: &pm,
            phi: &phi,
            nu: &nu,
            zeta: &zeta,
        };
        for slot in [Slot::Phi, Slot::Nu, Slot::Zeta] {
            let len = slot_len(&d, slot);
            let up = slot_degree(1, slot);
            let mut star = vec![0.0; len];
            let mut dag = vec![0.0; len];
            let mut conv = vec![0.0; len];
            d.star_derivative(slot, &p, &mut star);
            d.dagger_derivative(slot, &p, &mut dag);
            phi_point(
                &Basis::new(3, up),
                &Basis::new(3, 3 - up),
                3,
                &star,
                &mut conv,
            );
            for (x, y) in dag.iter().zip(&conv) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn legendre_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = QuadraticDensity::new(
            2,
            1,
            FiberMetric::new(2, vec![1.5, 0.2, 0.2, 0.8]).unwrap(),
            Potential::Zero,
        )
        .unwrap();
        let pm = random_metric(&mut rng, 2);
        let nu = rand_vec(&mut rng, 4);
        let p = PointArgs {
            metric: &pm,
            phi: &[0.0; 4],
            nu: &nu,
            zeta: &[0.0; 2],
        };
        let mut mom = vec![0.0; 4];
        d.star_derivative(Slot::Nu, &p, &mut mom);
        let mut back = vec![0.0; 4];
        d.legendre_inverse(&pm, &[0.0; 4], &[0.0; 2], &mom, &mut back)
            .unwrap();
        let mut newton = vec![0.0; 4];
        newton_legendre(&d, &pm, &[0.0; 4], &[0.0; 2], &mom, &mut newton).unwrap();
        for c in 0..4 {
            assert!((back[c] - nu[c]).abs() < 1e-13);
            assert!((newton[c] - nu[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn ym_energy_is_half_sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let su2 = LieAlgebra::su2();
        let d = ym_density(3, &su2).unwrap();
        let pm = random_metric(&mut rng, 3);
        let eps = rand_vec(&mut rng, 9);
        let b = rand_vec(&mut rng, 9);
        let p = PointArgs {
            metric: &pm,
            phi: &[0.0; 9],
            nu: &eps,
            zeta: &b,
        };
        let id = FiberMetric::identity(3);
        let ee = inner_point(&Basis::new(3, 1), 3, &pm, &id, &eps, &eps);
        let bb = inner_point(&Basis::new(3, 2), 3, &pm, &id, &b, &b);
        let expect = 0.5 * (ee + bb) * pm.sqrt_det;
        let star = energy_density(&d, &p, Representation::Star);
        let dagger = energy_density(&d, &p, Representation::Dagger);
        assert!((star - expect).abs() < 1e-12);
        assert!((dagger - expect).abs() < 1e-12);
        let mut da = vec![0.0; 9];
        d.star_derivative(Slot::Phi, &p, &mut da);
        assert!(da.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matter_flux_matches_componentwise_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = matter_density(2, FiberMetric::identity(1), Potential::Zero).unwrap();
        let pm = PointMetric::euclidean(2);
        let nu = rand_vec(&mut rng, 1);
        let zeta = rand_vec(&mut rng, 2);
        let p = PointArgs {
            metric: &pm,
            phi: &[0.0],
            nu: &nu,
            zeta: &zeta,
        };
        let mut s = [0.0; 2];
        flux(&d, &p, Representation::Dagger, &mut s);
        // -nu * (*zeta) with *dx1 = dx2 and *dx2 = -dx1.
        assert!((s[0] - nu[0] * zeta[1]).abs() < 1e-15);
        assert!((s[1] + nu[0] * zeta[0]).abs() < 1e-15);
        let mut v = [0.0; 2];
        flux(&d, &p, Representation::Star, &mut v);
        assert!((v[0] + nu[0] * zeta[0]).abs() < 1e-15);
        assert_eq!(flux_zero_velocity(&d), 0.0);
    }

    fn flux_zero_velocity(d: &QuadraticDensity) -> Real {
        let pm = PointMetric::euclidean(2);
        let p = PointArgs {
            metric: &pm,
            phi: &[1.0],
            nu: &[0.0],
            zeta: &[0.4, -2.0],
        };
        let mut s = [0.0; 2];
        flux(d, &p, Representation::Star, &mut s);
        s.iter().map(|x| x.abs()).sum()
    }

    #[test]
    fn potential_gradients() {
        let kappa = FiberMetric::new(2, vec![1.0, 0.5, 0.5, 2.0]).unwrap();
        let phi = [0.3, -0.7];
        for pot in [
            Potential::KleinGordon { mass: 1.3 },
            Potential::Higgs {
                lambda: 0.25,
                mu: 1.1,
            },
        ] {
            let mut g = [0.0; 2];
            pot.gradient_fiber(&kappa, &phi, &mut g);
            for a in 0..2 {
                let mut p = phi;
                let h = 1e-6;
                p[a] += h;
                let up = pot.eval_fiber(&kappa, &p);
                p[a] -= 2.0 * h;
                let dn = pot.eval_fiber(&kappa, &p);
                assert!(((up - dn) / (2.0 * h) - g[a]).abs() < 1e-8);
            }
            let mut sharp = [0.0; 2];
            pot.grad_kappa(&kappa, &phi, &mut sharp);
            let mut low = [0.0; 2];
            kappa.lower(&sharp, &mut low);
            assert!((low[0] - g[0]).abs() < 1e-14 && (low[1] - g[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn neutral_coupling_has_zero_cross_term() {
        let su2 = LieAlgebra::su2();
        let ymh = YmhDensity::new(
            ym_density(2, &su2).unwrap(),
            matter_density(2, FiberMetric::identity(2), Potential::Zero).unwrap(),
            LieRepresentation::trivial(3, 2),
        )
        .unwrap();
        let pm = PointMetric::euclidean(2);
        let p = PointArgs {
            metric: &pm,
            phi: &[1.0, 2.0],
            nu: &[0.0; 2],
            zeta: &[0.5, 0.1, -0.3, 0.2],
        };
        let mut out = [1.0; 6];
        ymh.cross_term(&p, Representation::Star, &mut out);
        assert!(out.iter().all(|&x| x == 0.0));
        assert!(YmhDensity::new(
            ym_density(2, &su2).unwrap(),
            matter_density(2, FiberMetric::identity(2), Potential::Zero).unwrap(),
            LieRepresentation::adjoint(&su2),
        )
        .is_err());
    }
}
