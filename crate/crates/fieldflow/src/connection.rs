//! Linear and gauge connections and the covariant calculus built on them.
//!
//! Christoffel coefficients are stored per node as `Gamma^a_{i,b}` so that
//! `(nabla_i xi)^a = d_i xi^a + Gamma^a_{i,b} xi^b`; the dual connection acts
//! on `E*` with `-Gamma^b_{i,a}`.
//!
//! Star tensors of upper degree `k + 1` have a trace of type `(k, m - 1)`,
//! stored as a [`TraceField`]: an `(m-1)`-form whose fiber slot is the pair
//! `(I, a)` of an upper multi-index and a dual fiber index. The covariant
//! divergence is the dual covariant exterior derivative of the trace, where
//! `d(U (x) w) = (-1)^{|U|} U (x) dw` on such tensor-valued forms. With this
//! grading the divergence theorem reads
//!
//! `int chi . d phi + (-1)^k int div chi . phi = oint i*(tr chi) . i*phi`.
//!
//! Codifferentials use the Riemannian sign table
//! `delta = (-1)^{m(k+1)+1} * d *` on `k`-forms, which gives `-* d *` on
//! 1-forms and `(-1)^{m+1} * d *` on 2-forms.

use thiserror::Error;

use crate::exterior::{binom, Basis, ExteriorError, FormField, MultiIndex};
use crate::grid::{FiberMetric, MetricField, RectGrid};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConnectionError {
    #[error("exterior derivative of a degree-{degree} form in dimension {dim}")]
    DegreeOverflow { degree: usize, dim: usize },
    #[error("operation needs positive degree")]
    DegreeZero,
    #[error("curvature needs dimension at least 2 (got {0})")]
    DimensionTooSmall(usize),
    #[error("invalid Lie algebra: {0}")]
    InvalidLieAlgebra(String),
    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
}

/// Christoffel coefficients `Gamma^a_{i,b}` sampled on nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConnection {
    dim: usize,
    fiber: usize,
    nodes: usize,
    gamma: Vec<Real>,
}

impl LinearConnection {
    pub fn zeros(dim: usize, fiber: usize, nodes: usize) -> Self {
        Self {
            dim,
            fiber,
            nodes,
            gamma: vec![0.0; nodes * dim * fiber * fiber],
        }
    }

    /// Samples `f(x, i, a, b) = Gamma^a_{i,b}(x)`.
    pub fn from_fn<F>(grid: &RectGrid, fiber: usize, f: F) -> Self
    where
        F: Fn(&[Real; 3], usize, usize, usize) -> Real,
    {
        let mut c = Self::zeros(grid.dim(), fiber, grid.len());
        for node in 0..grid.len() {
            let x = grid.coords(node);
            for i in 0..grid.dim() {
                for a in 0..fiber {
                    for b in 0..fiber {
                        c.set(node, i, a, b, f(&x, i, a, b));
                    }
                }
            }
        }
        c
    }

    /// Connection induced on a representation space by a gauge potential:
    /// `Gamma^p_{i,q} = (rho_c)^p_q A^c_i`.
    pub fn from_gauge(a: &FormField, rep: &LieRepresentation) -> Result<Self, ConnectionError> {
        if a.degree() != 1 || a.fiber() != rep.algebra_dim() {
            return Err(ConnectionError::Mismatch(format!(
                "gauge potential of degree {} and fiber {} for a representation of a {}-dimensional algebra",
                a.degree(),
                a.fiber(),
                rep.algebra_dim()
            )));
        }
        let m = a.dim();
        let p = rep.dim();
        let mut c = Self::zeros(m, p, a.nodes());
        for node in 0..a.nodes() {
            for i in 0..m {
                for c_idx in 0..rep.algebra_dim() {
                    let ac = a.get(node, i, c_idx);
                    if ac == 0.0 {
                        continue;
                    }
                    for r in 0..p {
                        for q in 0..p {
                            let v = rep.get(c_idx, r, q);
                            if v != 0.0 {
                                let idx = c.index(node, i, r, q);
                                c.gamma[idx] += v * ac;
                            }
                        }
                    }
                }
            }
        }
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fiber(&self) -> usize {
        self.fiber
    }

    #[inline]
    fn index(&self, node: usize, i: usize, a: usize, b: usize) -> usize {
        ((node * self.dim + i) * self.fiber + a) * self.fiber + b
    }

    #[inline]
    pub fn get(&self, node: usize, i: usize, a: usize, b: usize) -> Real {
        self.gamma[self.index(node, i, a, b)]
    }

    pub fn set(&mut self, node: usize, i: usize, a: usize, b: usize, v: Real) {
        let idx = self.index(node, i, a, b);
        self.gamma[idx] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.gamma.iter().all(|&g| g == 0.0)
    }
}

/// Core kernel: covariant exterior derivative of a form whose fiber slot is
/// `(u, a)` with `u < outer` a passive label and `a < conn.fiber()` acted on
/// by the connection (dual connection when `dual`).
fn covariant_d(
    grid: &RectGrid,
    w: &FormField,
    conn: Option<&LinearConnection>,
    dual: bool,
    outer: usize,
    scale: Real,
) -> Result<FormField, ConnectionError> {
    let m = w.dim();
    let k = w.degree();
    if k >= m {
        return Err(ConnectionError::DegreeOverflow { degree: k, dim: m });
    }
    let fiber = w.fiber();
    let n = fiber / outer.max(1);
    if let Some(c) = conn {
        if c.fiber() != n || c.dim() != m {
            return Err(ConnectionError::Mismatch(format!(
                "connection on fiber {} (dim {}) applied to fiber {} (dim {})",
                c.fiber(),
                c.dim(),
                n,
                m
            )));
        }
    }
    let from = w.basis();
    let to = Basis::new(m, k + 1);
    let mut out = FormField::zeros(m, k + 1, fiber, w.nodes());
    let stride = w.stride();
    let data = w.data();
    let mut deriv = vec![0.0; stride];
    for node in 0..w.nodes() {
        for i in 0..m {
            for (c, d) in deriv.iter_mut().enumerate() {
                *d = grid.diff_at(|q| data[q * stride + c], node, i);
            }
            let here = w.at(node);
            for (si, mi) in from.indices().iter().enumerate() {
                let Some((target, sign)) = mi.insert(i) else {
                    continue;
                };
                let so = to.slot(target);
                for u in 0..outer {
                    for a in 0..n {
                        let c = si * fiber + u * n + a;
                        let mut v = deriv[c];
                        if let Some(conn) = conn {
                            for b in 0..n {
                                let cb = si * fiber + u * n + b;
                                v += if dual {
                                    -conn.get(node, i, b, a) * here[cb]
                                } else {
                                    conn.get(node, i, a, b) * here[cb]
                                };
                            }
                        }
                        out.add_at(node, so, u * n + a, scale * sign * v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Covariant exterior derivative `d^nabla` on `E`-valued forms.
pub fn cov_ext_deriv(
    grid: &RectGrid,
    conn: Option<&LinearConnection>,
    w: &FormField,
) -> Result<FormField, ConnectionError> {
    covariant_d(grid, w, conn, false, 1, 1.0)
}

/// Dual covariant exterior derivative `d^{nabla*}` on `E*`-valued forms.
pub fn dual_cov_ext_deriv(
    grid: &RectGrid,
    conn: Option<&LinearConnection>,
    w: &FormField,
) -> Result<FormField, ConnectionError> {
    covariant_d(grid, w, conn, true, 1, 1.0)
}

/// A `(k, m-1)` tensor: `(m-1)`-form components with fiber slot `(I, a)`,
/// `I` an upper multi-index of length `k` and `a` a dual fiber index.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceField {
    pub upper_degree: usize,
    pub fiber: usize,
    pub form: FormField,
}

impl TraceField {
    /// The dual covariant exterior derivative with the graded sign
    /// `(-1)^{upper degree}`, returning a top-degree tensor form.
    pub fn dual_cov_ext_deriv(
        &self,
        grid: &RectGrid,
        conn: Option<&LinearConnection>,
    ) -> Result<TraceField, ConnectionError> {
        let outer = binom(self.form.dim(), self.upper_degree);
        let sign = if self.upper_degree.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        Ok(TraceField {
            upper_degree: self.upper_degree,
            fiber: self.fiber,
            form: covariant_d(grid, &self.form, conn, true, outer, sign)?,
        })
    }

    /// Reinterprets a top-degree tensor form as a star tensor `chi_a^I d_I (x) d^m x`.
    pub fn into_star(self) -> FormField {
        let m = self.form.dim();
        assert_eq!(
            self.form.degree(),
            m,
            "only top-degree tensor forms are densities"
        );
        FormField::from_data(
            m,
            self.upper_degree,
            self.fiber,
            self.form.nodes(),
            self.form.into_data(),
        )
    }

    /// Face part `i*(tr chi)` as a boundary star element (face-chart components).
    ///
    /// Only terms whose form leg is `d^{m-1}_{(a)} x` for the normal axis `a`
    /// survive, and their upper index is tangential.
    pub fn pullback(&self, face_axis: usize, nodes: &[usize]) -> FormField {
        let m = self.form.dim();
        let k = self.upper_degree;
        let n = self.fiber;
        let upper = Basis::new(m, k);
        let forms = Basis::new(m, m - 1);
        let fslot = forms.slot(MultiIndex::single(face_axis).complement(m));
        let fb = Basis::new(m - 1, k);
        let mut out = FormField::zeros(m - 1, k, n, nodes.len());
        for (fs, fmi) in fb.indices().iter().enumerate() {
            let us = upper.slot(fmi.from_face_chart(face_axis));
            for (kf, &node) in nodes.iter().enumerate() {
                for a in 0..n {
                    out.set(kf, fs, a, self.form.get(node, fslot, us * n + a));
                }
            }
        }
        out
    }
}

/// Trace of a star tensor of upper degree `k + 1`:
/// `tr chi = sum_J sum_r (-1)^{r-1} chi^J d_{J_r} (x) d^{m-1}_{(j_r)} x`.
pub fn trace(chi: &FormField) -> Result<TraceField, ConnectionError> {
    let m = chi.dim();
    let kp1 = chi.degree();
    if kp1 == 0 {
        return Err(ConnectionError::DegreeZero);
    }
    let k = kp1 - 1;
    let n = chi.fiber();
    let upper_in = chi.basis();
    let upper_out = Basis::new(m, k);
    let forms = Basis::new(m, m - 1);
    let outer = upper_out.len();
    let mut form = FormField::zeros(m, m - 1, outer * n, chi.nodes());
    for node in 0..chi.nodes() {
        let c = chi.at(node);
        for (sj, mj) in upper_in.indices().iter().enumerate() {
            for (r, j) in mj.axes().enumerate() {
                let pos = if r % 2 == 0 { 1.0 } else { -1.0 };
                let leg = if j % 2 == 0 { 1.0 } else { -1.0 };
                let us = upper_out.slot(mj.remove(j));
                let fs = forms.slot(MultiIndex::single(j).complement(m));
                for a in 0..n {
                    form.add_at(node, fs, us * n + a, pos * leg * c[sj * n + a]);
                }
            }
        }
    }
    Ok(TraceField {
        upper_degree: k,
        fiber: n,
        form,
    })
}

/// Covariant divergence `div chi = d^{nabla*}(tr chi)` of a star tensor of
/// upper degree `k + 1`, returned as a star tensor of upper degree `k`.
pub fn cov_divergence(
    grid: &RectGrid,
    conn: Option<&LinearConnection>,
    chi: &FormField,
) -> Result<FormField, ConnectionError> {
    Ok(trace(chi)?.dual_cov_ext_deriv(grid, conn)?.into_star())
}

/// Direct local formula for the covariant divergence,
/// `(-1)^k sum_r (-1)^{r-1} (d_{j_r} chi^J_a - Gamma^b_{j_r,a} chi^J_b) d_{J_r} (x) d^m x`.
pub fn cov_divergence_local(
    grid: &RectGrid,
    conn: Option<&LinearConnection>,
    chi: &FormField,
) -> Result<FormField, ConnectionError> {
    let m = chi.dim();
    let kp1 = chi.degree();
    if kp1 == 0 {
        return Err(ConnectionError::DegreeZero);
    }
    let k = kp1 - 1;
    let n = chi.fiber();
    let grade = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let upper_in = chi.basis();
    let upper_out = Basis::new(m, k);
    let stride = chi.stride();
    let data = chi.data();
    let mut out = FormField::zeros(m, k, n, chi.nodes());
    for node in 0..chi.nodes() {
        for (sj, mj) in upper_in.indices().iter().enumerate() {
            for (r, j) in mj.axes().enumerate() {
                let pos = if r % 2 == 0 { 1.0 } else { -1.0 };
                let us = upper_out.slot(mj.remove(j));
                for a in 0..n {
                    let c = sj * n + a;
                    let mut v = grid.diff_at(|q| data[q * stride + c], node, j);
                    if let Some(conn) = conn {
                        for b in 0..n {
                            v -= conn.get(node, j, b, a) * data[node * stride + sj * n + b];
                        }
                    }
                    out.add_at(node, us, a, grade * pos * v);
                }
            }
        }
    }
    Ok(out)
}

/// Riemannian codifferential sign `(-1)^{m(k+1)+1}` on `k`-forms.
pub fn codifferential_sign(m: usize, k: usize) -> Real {
    if (m * (k + 1) + 1).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Codifferential `delta = sign * d^nabla *` of a `k`-form, `k >= 1`.
pub fn codifferential(
    grid: &RectGrid,
    metric: &MetricField,
    conn: Option<&LinearConnection>,
    w: &FormField,
) -> Result<FormField, ConnectionError> {
    let k = w.degree();
    if k == 0 {
        return Err(ConnectionError::DegreeZero);
    }
    let m = w.dim();
    let star = crate::exterior::hodge_star(w, metric);
    let d = cov_ext_deriv(grid, conn, &star)?;
    let mut out = crate::exterior::hodge_star(&d, metric);
    out.scale(codifferential_sign(m, k));
    Ok(out)
}

/// Structure constants `f^a_{bc}` of a Lie algebra in a basis where the
/// invariant form used as "Killing form" is `K = -identity`.
#[derive(Clone, Debug, PartialEq)]
pub struct LieAlgebra {
    dim: usize,
    f: Vec<Real>,
}

impl LieAlgebra {
    /// Builds and validates antisymmetry, Jacobi and `K`-invariance.
    pub fn new(dim: usize, f: Vec<Real>) -> Result<Self, ConnectionError> {
        if f.len() != dim * dim * dim {
            return Err(ConnectionError::InvalidLieAlgebra(format!(
                "expected {} structure constants, got {}",
                dim * dim * dim,
                f.len()
            )));
        }
        let lie = Self { dim, f };
        let tol = 1e-12;
        if lie.antisymmetry_defect() > tol {
            return Err(ConnectionError::InvalidLieAlgebra(
                "f^a_bc != -f^a_cb".into(),
            ));
        }
        if lie.jacobi_defect() > tol {
            return Err(ConnectionError::InvalidLieAlgebra(
                "Jacobi identity fails".into(),
            ));
        }
        if lie.invariance_defect() > tol {
            return Err(ConnectionError::InvalidLieAlgebra(
                "structure constants are not invariant for K = -identity".into(),
            ));
        }
        Ok(lie)
    }

    /// The abelian algebra u(1).
    pub fn u1() -> Self {
        Self {
            dim: 1,
            f: vec![0.0],
        }
    }

    /// su(2) with `f^a_{bc} = epsilon_{abc}`.
    pub fn su2() -> Self {
        let mut f = vec![0.0; 27];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    f[(a * 3 + b) * 3 + c] = levi_civita(a, b, c);
                }
            }
        }
        Self { dim: 3, f }
    }

    /// Same dimension with all structure constants zero.
    pub fn abelianized(&self) -> Self {
        Self {
            dim: self.dim,
            f: vec![0.0; self.f.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_abelian(&self) -> bool {
        self.f.iter().all(|&x| x == 0.0)
    }

    #[inline]
    pub fn f(&self, a: usize, b: usize, c: usize) -> Real {
        self.f[(a * self.dim + b) * self.dim + c]
    }

    /// The invariant form `K_ab = -delta_ab`.
    pub fn killing(&self, a: usize, b: usize) -> Real {
        if a == b {
            -1.0
        } else {
            0.0
        }
    }

    /// `[x, y]^a = f^a_{bc} x^b y^c`.
    pub fn bracket(&self, x: &[Real], y: &[Real], out: &mut [Real]) {
        for (a, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut s = 0.0;
            for b in 0..self.dim {
                for c in 0..self.dim {
                    s += self.f(a, b, c) * x[b] * y[c];
                }
            }
            *o = s;
        }
    }

    pub fn antisymmetry_defect(&self) -> Real {
        let n = self.dim;
        let mut worst: Real = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    worst = worst.max((self.f(a, b, c) + self.f(a, c, b)).abs());
                }
            }
        }
        worst
    }

    pub fn jacobi_defect(&self) -> Real {
        let n = self.dim;
        let mut worst: Real = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for e in 0..n {
                        let mut s = 0.0;
                        for d in 0..n {
                            s += self.f(a, b, d) * self.f(d, c, e)
                                + self.f(a, c, d) * self.f(d, e, b)
                                + self.f(a, e, d) * self.f(d, b, c);
                        }
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst
    }

    /// Defect of `f^a_{bc} = -f^c_{ba}`.
    pub fn invariance_defect(&self) -> Real {
        let n = self.dim;
        let mut worst: Real = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    worst = worst.max((self.f(a, b, c) + self.f(c, b, a)).abs());
                }
            }
        }
        worst
    }
}

fn levi_civita(a: usize, b: usize, c: usize) -> Real {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Infinitesimal action `(rho_c)^p_q` of a Lie algebra on a fiber with an
/// invariant metric `kappa`.
#[derive(Clone, Debug, PartialEq)]
pub struct LieRepresentation {
    algebra_dim: usize,
    dim: usize,
    mats: Vec<Real>,
    kappa: FiberMetric,
}

impl LieRepresentation {
    /// Builds and checks `kappa(rho_c u, v) + kappa(u, rho_c v) = 0`.
    pub fn new(
        algebra_dim: usize,
        dim: usize,
        mats: Vec<Real>,
        kappa: FiberMetric,
    ) -> Result<Self, ConnectionError> {
        if mats.len() != algebra_dim * dim * dim || kappa.dim() != dim {
            return Err(ConnectionError::InvalidRepresentation(
                "matrix table or metric has the wrong size".into(),
            ));
        }
        let rep = Self {
            algebra_dim,
            dim,
            mats,
            kappa,
        };
        if rep.invariance_defect() > 1e-12 {
            return Err(ConnectionError::InvalidRepresentation(
                "fiber metric is not invariant".into(),
            ));
        }
        Ok(rep)
    }

    /// Adjoint representation `(rho_c)^a_b = f^a_{cb}` with `kappa = -K`.
    pub fn adjoint(lie: &LieAlgebra) -> Self {
        let n = lie.dim();
        let mut mats = vec![0.0; n * n * n];
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    mats[(c * n + a) * n + b] = lie.f(a, c, b);
                }
            }
        }
        Self {
            algebra_dim: n,
            dim: n,
            mats,
            kappa: FiberMetric::identity(n),
        }
    }

    /// The trivial action on a `dim`-dimensional fiber.
    pub fn trivial(algebra_dim: usize, dim: usize) -> Self {
        Self {
            algebra_dim,
            dim,
            mats: vec![0.0; algebra_dim * dim * dim],
            kappa: FiberMetric::identity(dim),
        }
    }

    /// u(1) acting on a charged field in R^2 by rotation with charge `q`.
    pub fn u1_charged(q: Real) -> Self {
        Self {
            algebra_dim: 1,
            dim: 2,
            mats: vec![0.0, -q, q, 0.0],
            kappa: FiberMetric::identity(2),
        }
    }

    pub fn algebra_dim(&self) -> usize {
        self.algebra_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kappa(&self) -> &FiberMetric {
        &self.kappa
    }

    #[inline]
    pub fn get(&self, c: usize, p: usize, q: usize) -> Real {
        self.mats[(c * self.dim + p) * self.dim + q]
    }

    pub fn is_trivial(&self) -> bool {
        self.mats.iter().all(|&x| x == 0.0)
    }

    pub fn invariance_defect(&self) -> Real {
        let n = self.dim;
        let mut worst: Real = 0.0;
        for c in 0..self.algebra_dim {
            for u in 0..n {
                for v in 0..n {
                    let mut s = 0.0;
                    for p in 0..n {
                        s += self.kappa.get(p, v) * self.get(c, p, u)
                            + self.kappa.get(u, p) * self.get(c, p, v);
                    }
                    worst = worst.max(s.abs());
                }
            }
        }
        worst
    }

    /// `rho_phi(xi)^p = (rho_c)^p_q xi^c phi^q` at a point, slotwise over
    /// `slots` base multi-indices of `xi`.
    pub fn act_point(&self, phi: &[Real], xi: &[Real], slots: usize, out: &mut [Real]) {
        let (na, np) = (self.algebra_dim, self.dim);
        for s in 0..slots {
            for p in 0..np {
                let mut acc = 0.0;
                for c in 0..na {
                    let x = xi[s * na + c];
                    if x == 0.0 {
                        continue;
                    }
                    for q in 0..np {
                        acc += self.get(c, p, q) * x * phi[q];
                    }
                }
                out[s * np + p] = acc;
            }
        }
    }

    /// `rho*_phi(eta)_c = eta_p (rho_c)^p_q phi^q` at a point, slotwise.
    pub fn act_adjoint_point(&self, phi: &[Real], eta: &[Real], slots: usize, out: &mut [Real]) {
        let (na, np) = (self.algebra_dim, self.dim);
        for s in 0..slots {
            for c in 0..na {
                let mut acc = 0.0;
                for p in 0..np {
                    let e = eta[s * np + p];
                    if e == 0.0 {
                        continue;
                    }
                    for q in 0..np {
                        acc += e * self.get(c, p, q) * phi[q];
                    }
                }
                out[s * na + c] = acc;
            }
        }
    }
}

/// `rho_phi(xi)` for a matter 0-form `phi` and a Lie-valued form `xi`.
pub fn rep_action(
    rep: &LieRepresentation,
    phi: &FormField,
    xi: &FormField,
) -> Result<FormField, ConnectionError> {
    if phi.degree() != 0 || phi.fiber() != rep.dim() || xi.fiber() != rep.algebra_dim() {
        return Err(ConnectionError::Mismatch(
            "rep_action operand shapes".into(),
        ));
    }
    let slots = xi.slots();
    let mut out = FormField::zeros(xi.dim(), xi.degree(), rep.dim(), xi.nodes());
    for n in 0..xi.nodes() {
        rep.act_point(phi.at(n), xi.at(n), slots, out.at_mut(n));
    }
    Ok(out)
}

/// `rho*_phi(eta)` for a matter 0-form `phi` and a dual-matter-valued field `eta`.
pub fn rep_action_adjoint(
    rep: &LieRepresentation,
    phi: &FormField,
    eta: &FormField,
) -> Result<FormField, ConnectionError> {
    if phi.degree() != 0 || phi.fiber() != rep.dim() || eta.fiber() != rep.dim() {
        return Err(ConnectionError::Mismatch(
            "rep_action_adjoint operand shapes".into(),
        ));
    }
    let slots = eta.slots();
    let mut out = FormField::zeros(eta.dim(), eta.degree(), rep.algebra_dim(), eta.nodes());
    for n in 0..eta.nodes() {
        rep.act_adjoint_point(phi.at(n), eta.at(n), slots, out.at_mut(n));
    }
    Ok(out)
}

/// A Lie-algebra-valued 1-form in temporal gauge.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeConnection {
    pub potential: FormField,
    pub algebra: LieAlgebra,
}

impl GaugeConnection {
    pub fn new(potential: FormField, algebra: LieAlgebra) -> Result<Self, ConnectionError> {
        if potential.degree() != 1 || potential.fiber() != algebra.dim() {
            return Err(ConnectionError::Mismatch(
                "gauge potential must be a 1-form valued in the algebra".into(),
            ));
        }
        Ok(Self { potential, algebra })
    }

    /// Induced adjoint connection `Gamma^a_{i,b} = f^a_{cb} A^c_i`.
    pub fn adjoint_connection(&self) -> LinearConnection {
        LinearConnection::from_gauge(&self.potential, &LieRepresentation::adjoint(&self.algebra))
            .expect("shapes validated at construction")
    }

    pub fn curvature(&self, grid: &RectGrid) -> Result<FormField, ConnectionError> {
        curvature(grid, &self.potential, &self.algebra)
    }
}

/// Curvature `B_A = dA + 1/2 [A ^ A]`, with sorted components
/// `B^a_{ij} = d_i A^a_j - d_j A^a_i + f^a_{bc} A^b_i A^c_j`.
pub fn curvature(
    grid: &RectGrid,
    a: &FormField,
    lie: &LieAlgebra,
) -> Result<FormField, ConnectionError> {
    let m = a.dim();
    if m < 2 {
        return Err(ConnectionError::DimensionTooSmall(m));
    }
    let mut b = cov_ext_deriv(grid, None, a)?;
    let n = lie.dim();
    let two = Basis::new(m, 2);
    let mut br = vec![0.0; n];
    for node in 0..a.nodes() {
        let here = a.at(node);
        for (s, mi) in two.indices().iter().enumerate() {
            let ij: Vec<usize> = mi.to_vec();
            let (i, j) = (ij[0], ij[1]);
            lie.bracket(
                &here[i * n..(i + 1) * n],
                &here[j * n..(j + 1) * n],
                &mut br,
            );
            for (c, v) in br.iter().enumerate() {
                b.add_at(node, s, c, *v);
            }
        }
    }
    Ok(b)
}
