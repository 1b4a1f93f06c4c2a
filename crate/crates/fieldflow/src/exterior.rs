//! Algebra of bundle-valued forms on a rectangular grid.
//!
//! A [`FormField`] of degree `k` stores the components `phi^a_I` of
//! `phi^a_I dx^I (x) e_a` at every node, one slot per sorted multi-index `I`
//! (lexicographic order) and the fiber index varying fastest. The same
//! container also stores the upper-index components `chi_a^I` of the
//! "star" dual tensors `chi_a^I d_I (x) d^m x (x) e^a`; which reading applies
//! is fixed by context, and [`DualField`] carries an explicit tag.
//!
//! Sign conventions, fixed once here and used everywhere:
//!
//! * `eps(I, J)` is the sign of the permutation sorting the concatenation
//!   `(I, J)`; it is zero when the two overlap.
//! * `Phi(d_I (x) d^m x) = i_{d_I} d^m x = eps(I, I^c) dx^{I^c}`.
//! * Mixed contraction of an upper `(k+1)` tensor with a `k`-form:
//!   `(chi . phi)^j = sum_{J containing j} (-1)^{r-1} chi^J phi_{J without j}`
//!   where `r` is the position of `j` in `J`. With this rule
//!   `i_{chi . phi} d^m x = phi ^ Phi(chi)`.
//! * Hodge star: `(*w)_{I^c} = sqrt|g| eps(I, I^c) w^I`, indices raised with
//!   minors of `g^-1`, so that `a ^ *b = g(a, b) mu_g`.

use std::fmt::Write as _;
use std::io;

use thiserror::Error;

use crate::grid::{BoundaryData, Face, FiberMetric, GridError, MetricField, PointMetric, RectGrid};
use crate::Real;

/// Errors from the form algebra.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExteriorError {
    #[error("multi-index {0:?} is not strictly increasing within 1..=3")]
    InvalidMultiIndex(Vec<usize>),
    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),
    #[error("fiber dimension mismatch: {left} vs {right}")]
    FiberMismatch { left: usize, right: usize },
    #[error("base dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("node count mismatch: {left} vs {right}")]
    NodeMismatch { left: usize, right: usize },
    #[error("representation mismatch: expected {expected:?}, found {found:?}")]
    RepresentationMismatch {
        expected: Representation,
        found: Representation,
    },
    #[error("no boundary part for face {0:?}")]
    MissingFace(Face),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Binomial coefficient for the small sizes used here.
pub const fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r = 1;
    let mut i = 0;
    while i < k {
        r = r * (n - i) / (i + 1);
        i += 1;
    }
    r
}

/// A strictly increasing tuple of axes, stored as a bit set (0-based axes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(u8);

impl MultiIndex {
    pub const EMPTY: MultiIndex = MultiIndex(0);

    /// Builds from 0-based, strictly increasing axes.
    pub fn new(axes: &[usize]) -> Result<Self, ExteriorError> {
        let mut bits = 0u8;
        let mut last: Option<usize> = None;
        for &i in axes {
            if i >= 8 || last.is_some_and(|l| l >= i) {
                return Err(ExteriorError::InvalidMultiIndex(axes.to_vec()));
            }
            bits |= 1 << i;
            last = Some(i);
        }
        Ok(MultiIndex(bits))
    }

    pub fn single(axis: usize) -> Self {
        MultiIndex(1 << axis)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, axis: usize) -> bool {
        self.0 & (1 << axis) != 0
    }

    /// Axes in increasing order.
    pub fn axes(self) -> impl Iterator<Item = usize> {
        (0..8).filter(move |i| self.0 & (1 << i) != 0)
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.axes().collect()
    }

    /// 0-based position of `axis` inside the tuple.
    pub fn position(self, axis: usize) -> Option<usize> {
        self.contains(axis)
            .then(|| (self.0 & ((1u8 << axis) - 1)).count_ones() as usize)
    }

    /// Drops `axis` (the map `I -> I_r`).
    pub fn remove(self, axis: usize) -> MultiIndex {
        MultiIndex(self.0 & !(1 << axis))
    }

    /// Inserts `axis` in front and sorts, returning the sorted index and the
    /// permutation sign; `None` if already present.
    pub fn insert(self, axis: usize) -> Option<(MultiIndex, Real)> {
        if self.contains(axis) {
            return None;
        }
        let below = (self.0 & ((1u8 << axis) - 1)).count_ones();
        let sign = if below.is_multiple_of(2) { 1.0 } else { -1.0 };
        Some((MultiIndex(self.0 | (1 << axis)), sign))
    }

    /// Complement within axes `0..m`.
    pub fn complement(self, m: usize) -> MultiIndex {
        MultiIndex(!self.0 & ((1u8 << m) - 1))
    }

    pub fn union(self, other: MultiIndex) -> MultiIndex {
        MultiIndex(self.0 | other.0)
    }

    /// Relabels a tangential index of a face on `axis` into face-chart axes.
    pub fn to_face_chart(self, axis: usize) -> MultiIndex {
        let low = self.0 & ((1u8 << axis) - 1);
        let high = (self.0 >> (axis + 1)) << axis;
        MultiIndex(low | high)
    }

    /// Inverse of [`MultiIndex::to_face_chart`].
    pub fn from_face_chart(self, axis: usize) -> MultiIndex {
        let low = self.0 & ((1u8 << axis) - 1);
        let high = (self.0 >> axis) << (axis + 1);
        MultiIndex(low | high)
    }
}

/// Sign of the permutation sorting `(I, J)`, or `None` if they overlap.
pub fn merge_sign(i: MultiIndex, j: MultiIndex) -> Option<Real> {
    if i.0 & j.0 != 0 {
        return None;
    }
    let mut inversions = 0u32;
    for a in i.axes() {
        inversions += (j.0 & ((1u8 << a) - 1)).count_ones();
    }
    Some(if inversions.is_multiple_of(2) { 1.0 } else { -1.0 })
}

/// `eps(I, I^c)` within dimension `m`.
pub fn complement_sign(i: MultiIndex, m: usize) -> Real {
    merge_sign(i, i.complement(m)).expect("disjoint by construction")
}

/// Sorted multi-indices of length `k` in `0..m`, with slot lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    dim: usize,
    degree: usize,
    list: Vec<MultiIndex>,
    slot: [u8; 8],
}

impl Basis {
    pub fn new(dim: usize, degree: usize) -> Self {
        assert!(dim <= 3, "dimension {dim} exceeds 3");
        let mut list = Vec::new();
        if degree <= dim {
            let mut combo: Vec<usize> = (0..degree).collect();
            loop {
                list.push(MultiIndex::new(&combo).expect("increasing"));
                let mut i = degree;
                let mut advanced = false;
                while i > 0 {
                    i -= 1;
                    if combo[i] < dim - degree + i {
                        combo[i] += 1;
                        for j in i + 1..degree {
                            combo[j] = combo[j - 1] + 1;
                        }
                        advanced = true;
                        break;
                    }
                }
                if !advanced {
                    break;
                }
            }
        }
        let mut slot = [u8::MAX; 8];
        for (s, mi) in list.iter().enumerate() {
            slot[mi.0 as usize] = s as u8;
        }
        Self {
            dim,
            degree,
            list,
            slot,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.list
    }

    pub fn get(&self, slot: usize) -> MultiIndex {
        self.list[slot]
    }

    #[inline]
    pub fn slot(&self, mi: MultiIndex) -> usize {
        let s = self.slot[mi.0 as usize];
        debug_assert!(s != u8::MAX, "multi-index not in basis");
        s as usize
    }
}

/// A bundle-valued k-form (or upper-index k-tensor density) sampled on nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct FormField {
    dim: usize,
    degree: usize,
    fiber: usize,
    nodes: usize,
    data: Vec<Real>,
}

impl FormField {
    pub fn zeros(dim: usize, degree: usize, fiber: usize, nodes: usize) -> Self {
        assert!(degree <= dim, "degree {degree} exceeds dimension {dim}");
        let len = nodes * binom(dim, degree) * fiber;
        Self {
            dim,
            degree,
            fiber,
            nodes,
            data: vec![0.0; len],
        }
    }

    /// Zero field on a grid.
    pub fn zeros_on(grid: &RectGrid, degree: usize, fiber: usize) -> Self {
        Self::zeros(grid.dim(), degree, fiber, grid.len())
    }

    /// Builds from a flat component vector in storage order.
    pub fn from_data(
        dim: usize,
        degree: usize,
        fiber: usize,
        nodes: usize,
        data: Vec<Real>,
    ) -> Self {
        assert_eq!(data.len(), nodes * binom(dim, degree) * fiber);
        Self {
            dim,
            degree,
            fiber,
            nodes,
            data,
        }
    }

    /// Samples `f(x, I, a)` at every node.
    pub fn from_fn<F>(grid: &RectGrid, degree: usize, fiber: usize, f: F) -> Self
    where
        F: Fn(&[Real; 3], MultiIndex, usize) -> Real,
    {
        let basis = Basis::new(grid.dim(), degree);
        let mut out = Self::zeros_on(grid, degree, fiber);
        for node in 0..grid.len() {
            let x = grid.coords(node);
            for (s, &mi) in basis.indices().iter().enumerate() {
                for a in 0..fiber {
                    out.set(node, s, a, f(&x, mi, a));
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn fiber(&self) -> usize {
        self.fiber
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn slots(&self) -> usize {
        binom(self.dim, self.degree)
    }

    /// Number of components per node.
    pub fn stride(&self) -> usize {
        self.slots() * self.fiber
    }

    pub fn basis(&self) -> Basis {
        Basis::new(self.dim, self.degree)
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    #[inline]
    pub fn get(&self, node: usize, slot: usize, a: usize) -> Real {
        self.data[(node * self.slots() + slot) * self.fiber + a]
    }

    #[inline]
    pub fn set(&mut self, node: usize, slot: usize, a: usize, v: Real) {
        let s = self.slots();
        self.data[(node * s + slot) * self.fiber + a] = v;
    }

    #[inline]
    pub fn add_at(&mut self, node: usize, slot: usize, a: usize, v: Real) {
        let s = self.slots();
        self.data[(node * s + slot) * self.fiber + a] += v;
    }

    /// Components at one node.
    #[inline]
    pub fn at(&self, node: usize) -> &[Real] {
        let st = self.stride();
        &self.data[node * st..(node + 1) * st]
    }

    #[inline]
    pub fn at_mut(&mut self, node: usize) -> &mut [Real] {
        let st = self.stride();
        &mut self.data[node * st..(node + 1) * st]
    }

    pub fn same_shape(&self, other: &FormField) -> bool {
        self.dim == other.dim
            && self.degree == other.degree
            && self.fiber == other.fiber
            && self.nodes == other.nodes
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: Real, other: &FormField) {
        assert!(self.same_shape(other), "shape mismatch in add_scaled");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += s * y;
        }
    }

    pub fn scale(&mut self, s: Real) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn scaled(&self, s: Real) -> FormField {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &FormField) -> Real {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Discrete L2 norm with quadrature weights and Euclidean component sum.
    pub fn l2_norm(&self, grid: &RectGrid) -> Real {
        (0..self.nodes)
            .map(|n| grid.weight(n) * self.at(n).iter().map(|x| x * x).sum::<Real>())
            .sum::<Real>()
            .sqrt()
    }

    /// Copies the values on the listed nodes into a new field of dimension `dim`.
    fn gather(&self, dim: usize, nodes: &[usize]) -> FormField {
        let mut out = FormField::zeros(dim, self.degree, self.fiber, nodes.len());
        for (k, &n) in nodes.iter().enumerate() {
            out.at_mut(k).copy_from_slice(self.at(n));
        }
        out
    }

    /// Writes the field as a CSV snapshot with a self-describing header.
    pub fn write_dump<W: io::Write>(&self, grid: &RectGrid, mut w: W) -> io::Result<()> {
        let shape: Vec<String> = grid.axes().iter().map(|a| a.nodes.to_string()).collect();
        writeln!(w, "# fieldflow form dump")?;
        writeln!(
            w,
            "# m={} k={} n={} N={} ordering=row-major,last-axis-fastest;slots=lexicographic-multi-index;fiber-fastest",
            self.dim,
            self.degree,
            self.fiber,
            shape.join("x")
        )?;
        let basis = self.basis();
        let mut header = String::from("node");
        for i in 0..grid.dim() {
            let _ = write!(header, ",x{}", i + 1);
        }
        for mi in basis.indices() {
            let label: String = mi.axes().map(|a| char::from(b'1' + a as u8)).collect();
            for a in 0..self.fiber {
                let _ = write!(
                    header,
                    ",I{}_a{}",
                    if label.is_empty() {
                        "0".into()
                    } else {
                        label.clone()
                    },
                    a + 1
                );
            }
        }
        writeln!(w, "{header}")?;
        for node in 0..self.nodes {
            let mut line = node.to_string();
            let x = grid.coords(node);
            for xi in x.iter().take(grid.dim()) {
                let _ = write!(line, ",{xi:.17e}");
            }
            for v in self.at(node) {
                let _ = write!(line, ",{v:.17e}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// A scalar multiple of the coordinate top form `d^m x` at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct TopDensity {
    pub values: Vec<Real>,
}

impl TopDensity {
    pub fn new(values: Vec<Real>) -> Self {
        Self { values }
    }

    /// Quadrature over the interior grid.
    pub fn integrate(&self, grid: &RectGrid) -> Real {
        integrate(&self.values, grid)
    }

    /// Quadrature over a face, in the outward orientation.
    pub fn integrate_face(&self, bd: &BoundaryData) -> Real {
        integrate_face(&self.values, bd)
    }
}

/// Quadrature of a coordinate density over the grid.
pub fn integrate(density: &[Real], grid: &RectGrid) -> Real {
    assert_eq!(density.len(), grid.len());
    density
        .iter()
        .enumerate()
        .map(|(n, v)| grid.weight(n) * v)
        .sum()
}

/// Quadrature of a face-chart density over an oriented face.
pub fn integrate_face(density: &[Real], bd: &BoundaryData) -> Real {
    bd.orientation * integrate(density, &bd.grid)
}

/// Which restricted dual representation a field uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Representation {
    /// Upper-index tensor densities `chi_a^I d_I (x) d^m x (x) e^a`.
    Star,
    /// Complementary-degree forms with dual fiber.
    Dagger,
}

/// An element `(alpha, alpha_b)` of a restricted dual space.
#[derive(Clone, Debug, PartialEq)]
pub struct DualField {
    pub rep: Representation,
    pub interior: FormField,
    pub boundary: Vec<(Face, FormField)>,
}

impl DualField {
    /// The zero dual of a degree-`k` primal field with fiber `n`.
    pub fn zeros(rep: Representation, grid: &RectGrid, k: usize, fiber: usize) -> Self {
        let m = grid.dim();
        let interior_degree = match rep {
            Representation::Star => k,
            Representation::Dagger => m - k,
        };
        let boundary = grid
            .faces()
            .into_iter()
            .filter(|_| k < m)
            .map(|face| {
                let n = grid.face_nodes(face).expect("face of grid").len();
                let deg = match rep {
                    Representation::Star => k,
                    Representation::Dagger => m - 1 - k,
                };
                (face, FormField::zeros(m - 1, deg, fiber, n))
            })
            .collect();
        Self {
            rep,
            interior: FormField::zeros_on(grid, interior_degree, fiber),
            boundary,
        }
    }

    /// Degree of the primal field this dual pairs with.
    pub fn primal_degree(&self) -> usize {
        match self.rep {
            Representation::Star => self.interior.degree(),
            Representation::Dagger => self.interior.dim() - self.interior.degree(),
        }
    }

    pub fn face(&self, face: Face) -> Option<&FormField> {
        self.boundary
            .iter()
            .find(|(f, _)| *f == face)
            .map(|(_, v)| v)
    }

    pub fn face_mut(&mut self, face: Face) -> Option<&mut FormField> {
        self.boundary
            .iter_mut()
            .find(|(f, _)| *f == face)
            .map(|(_, v)| v)
    }

    pub fn boundary_is_zero(&self) -> bool {
        self.boundary.iter().all(|(_, f)| f.max_abs() == 0.0)
    }

    pub fn scale(&mut self, s: Real) {
        self.interior.scale(s);
        for (_, f) in &mut self.boundary {
            f.scale(s);
        }
    }

    /// Converts to the other representation (a no-op if already there).
    pub fn to_rep(&self, rep: Representation) -> DualField {
        match (self.rep, rep) {
            (a, b) if a == b => self.clone(),
            (Representation::Star, Representation::Dagger) => phi_iso_dual(self),
            _ => phi_iso_inv_dual(self),
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise kernels.

/// Raises all base indices: `w^I = sum_J det(g^-1[I, J]) w_J`.
pub fn raise_point(basis: &Basis, fiber: usize, pm: &PointMetric, w: &[Real], out: &mut [Real]) {
    transform_point(basis, fiber, w, out, |r, c| pm.inverse_minor(r, c));
}

/// Lowers all base indices with minors of `g`.
pub fn lower_point(basis: &Basis, fiber: usize, pm: &PointMetric, w: &[Real], out: &mut [Real]) {
    transform_point(basis, fiber, w, out, |r, c| pm.metric_minor(r, c));
}

fn transform_point<F: Fn(&[usize], &[usize]) -> Real>(
    basis: &Basis,
    fiber: usize,
    w: &[Real],
    out: &mut [Real],
    minor: F,
) {
    let mut rows = [0usize; 3];
    let mut cols = [0usize; 3];
    let k = basis.degree();
    for (si, mi) in basis.indices().iter().enumerate() {
        for (t, a) in mi.axes().enumerate() {
            rows[t] = a;
        }
        for a in 0..fiber {
            out[si * fiber + a] = 0.0;
        }
        for (sj, mj) in basis.indices().iter().enumerate() {
            for (t, a) in mj.axes().enumerate() {
                cols[t] = a;
            }
            let c = minor(&rows[..k], &cols[..k]);
            if c != 0.0 {
                for a in 0..fiber {
                    out[si * fiber + a] += c * w[sj * fiber + a];
                }
            }
        }
    }
}

/// Hodge star at a point: degree `k` in, degree `m - k` out.
///
/// `orientation` is `+1` for the coordinate orientation and
/// [`Face::orientation`] on boundary faces.
pub fn hodge_point(
    from: &Basis,
    to: &Basis,
    fiber: usize,
    pm: &PointMetric,
    orientation: Real,
    w: &[Real],
    out: &mut [Real],
) {
    let m = from.dim();
    let mut raised = vec![0.0; w.len()];
    raise_point(from, fiber, pm, w, &mut raised);
    let scale = orientation * pm.sqrt_det;
    for (si, mi) in from.indices().iter().enumerate() {
        let comp = mi.complement(m);
        let so = to.slot(comp);
        let sign = complement_sign(*mi, m) * scale;
        for a in 0..fiber {
            out[so * fiber + a] = sign * raised[si * fiber + a];
        }
    }
}

/// `Phi` at a point: upper degree `k` in, form degree `m - k` out.
pub fn phi_point(from: &Basis, to: &Basis, fiber: usize, chi: &[Real], out: &mut [Real]) {
    let m = from.dim();
    for (si, mi) in from.indices().iter().enumerate() {
        let so = to.slot(mi.complement(m));
        let sign = complement_sign(*mi, m);
        for a in 0..fiber {
            out[so * fiber + a] = sign * chi[si * fiber + a];
        }
    }
}

/// Inverse of [`phi_point`]: form degree `m - k` in, upper degree `k` out.
pub fn phi_inv_point(from: &Basis, to: &Basis, fiber: usize, eta: &[Real], out: &mut [Real]) {
    let m = from.dim();
    for (so, mi) in to.indices().iter().enumerate() {
        let si = from.slot(mi.complement(m));
        let sign = complement_sign(*mi, m);
        for a in 0..fiber {
            out[so * fiber + a] = sign * eta[si * fiber + a];
        }
    }
}

/// Full contraction `sum_I sum_a chi_a^I phi^a_I` at a point.
#[inline]
pub fn contract_point(chi: &[Real], phi: &[Real]) -> Real {
    chi.iter().zip(phi).map(|(x, y)| x * y).sum()
}

/// Mixed contraction of an upper `(k+1)` tensor with a `k`-form at a point,
/// returning the `m` vector components.
pub fn contract_mixed_point(
    upper: &Basis,
    lower: &Basis,
    fiber: usize,
    chi: &[Real],
    phi: &[Real],
    out: &mut [Real],
) {
    for o in out.iter_mut() {
        *o = 0.0;
    }
    for (sj, mj) in upper.indices().iter().enumerate() {
        for (r, j) in mj.axes().enumerate() {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            let sl = lower.slot(mj.remove(j));
            let mut acc = 0.0;
            for a in 0..fiber {
                acc += chi[sj * fiber + a] * phi[sl * fiber + a];
            }
            out[j] += sign * acc;
        }
    }
}

/// Graded wedge with fiber contraction: `phi ^ beta` as a multiple of `d^m x`.
pub fn wedge_point(left: &Basis, right: &Basis, fiber: usize, phi: &[Real], beta: &[Real]) -> Real {
    let mut acc = 0.0;
    for (si, mi) in left.indices().iter().enumerate() {
        for (sj, mj) in right.indices().iter().enumerate() {
            if let Some(sign) = merge_sign(*mi, *mj) {
                let mut c = 0.0;
                for a in 0..fiber {
                    c += phi[si * fiber + a] * beta[sj * fiber + a];
                }
                acc += sign * c;
            }
        }
    }
    acc
}

/// Applies a fiber matrix slotwise: `out_{I,a} = sum_b M(a, b) w_{I,b}`.
pub fn fiber_map_point<F: Fn(usize, usize) -> Real>(
    slots: usize,
    fiber: usize,
    w: &[Real],
    out: &mut [Real],
    m: F,
) {
    for s in 0..slots {
        for a in 0..fiber {
            out[s * fiber + a] = (0..fiber).map(|b| m(a, b) * w[s * fiber + b]).sum();
        }
    }
}

/// Fibered inner product `g(alpha, beta)` of two forms at a point with fiber
/// metric `kappa`.
pub fn inner_point(
    basis: &Basis,
    fiber: usize,
    pm: &PointMetric,
    kappa: &FiberMetric,
    alpha: &[Real],
    beta: &[Real],
) -> Real {
    let mut raised = vec![0.0; alpha.len()];
    raise_point(basis, fiber, pm, alpha, &mut raised);
    let mut acc = 0.0;
    for s in 0..basis.len() {
        for a in 0..fiber {
            for b in 0..fiber {
                acc += kappa.get(a, b) * raised[s * fiber + a] * beta[s * fiber + b];
            }
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Field-level operations.

fn check_nodes(a: &FormField, b: &FormField) -> Result<(), ExteriorError> {
    if a.dim() != b.dim() {
        return Err(ExteriorError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.nodes() != b.nodes() {
        return Err(ExteriorError::NodeMismatch {
            left: a.nodes(),
            right: b.nodes(),
        });
    }
    if a.fiber() != b.fiber() {
        return Err(ExteriorError::FiberMismatch {
            left: a.fiber(),
            right: b.fiber(),
        });
    }
    Ok(())
}

/// Result of [`contract_pair`].
#[derive(Clone, Debug, PartialEq)]
pub enum Contraction {
    /// Equal degrees: a scalar density.
    Scalar(TopDensity),
    /// Upper degree one higher: vector components `V^j` of `V (x) d^m x`,
    /// stored as a degree-1 field with trivial fiber.
    Vector(FormField),
}

/// Pointwise contraction of a star-type tensor with a form.
pub fn contract_pair(chi: &FormField, phi: &FormField) -> Result<Contraction, ExteriorError> {
    check_nodes(chi, phi)?;
    let m = chi.dim();
    if chi.degree() == phi.degree() {
        let values = (0..chi.nodes())
            .map(|n| contract_point(chi.at(n), phi.at(n)))
            .collect();
        Ok(Contraction::Scalar(TopDensity::new(values)))
    } else if chi.degree() == phi.degree() + 1 {
        let upper = chi.basis();
        let lower = phi.basis();
        let mut out = FormField::zeros(m, 1, 1, chi.nodes());
        for n in 0..chi.nodes() {
            contract_mixed_point(
                &upper,
                &lower,
                chi.fiber(),
                chi.at(n),
                phi.at(n),
                out.at_mut(n),
            );
        }
        Ok(Contraction::Vector(out))
    } else {
        Err(ExteriorError::DegreeMismatch(format!(
            "contraction of upper degree {} with form degree {}",
            chi.degree(),
            phi.degree()
        )))
    }
}

/// Pointwise graded wedge `phi ^ beta` with fiber contraction.
pub fn wedge_pair(phi: &FormField, beta: &FormField) -> Result<TopDensity, ExteriorError> {
    check_nodes(phi, beta)?;
    if phi.degree() + beta.degree() != phi.dim() {
        return Err(ExteriorError::DegreeMismatch(format!(
            "wedge of degrees {} and {} in dimension {}",
            phi.degree(),
            beta.degree(),
            phi.dim()
        )));
    }
    let left = phi.basis();
    let right = beta.basis();
    let values = (0..phi.nodes())
        .map(|n| wedge_point(&left, &right, phi.fiber(), phi.at(n), beta.at(n)))
        .collect();
    Ok(TopDensity::new(values))
}

/// Hodge star on the interior grid.
pub fn hodge_star(w: &FormField, metric: &MetricField) -> FormField {
    hodge_star_oriented(w, metric, 1.0)
}

/// Hodge star on a face with the outward-induced orientation.
pub fn hodge_star_boundary(w: &FormField, bd: &BoundaryData) -> FormField {
    hodge_star_oriented(w, &bd.metric, bd.orientation)
}

fn hodge_star_oriented(w: &FormField, metric: &MetricField, orientation: Real) -> FormField {
    let m = w.dim();
    assert_eq!(metric.dim(), m, "metric dimension mismatch");
    let from = w.basis();
    let to = Basis::new(m, m - w.degree());
    let mut out = FormField::zeros(m, m - w.degree(), w.fiber(), w.nodes());
    for n in 0..w.nodes() {
        hodge_point(
            &from,
            &to,
            w.fiber(),
            metric.at(n),
            orientation,
            w.at(n),
            out.at_mut(n),
        );
    }
    out
}

/// Direction of a musical map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Musical {
    Sharp,
    Flat,
}

/// Which slots a musical map acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MusicalSlots {
    Base,
    Fiber,
    Both,
}

/// Index raising or lowering on base slots (with `g`) and/or the fiber slot
/// (with `kappa`).
pub fn musical(
    w: &FormField,
    direction: Musical,
    slots: MusicalSlots,
    metric: &MetricField,
    kappa: &FiberMetric,
) -> FormField {
    let basis = w.basis();
    let fiber = w.fiber();
    let mut out = w.clone();
    let mut tmp = vec![0.0; w.stride()];
    for n in 0..w.nodes() {
        let src = w.at(n);
        let dst = out.at_mut(n);
        if matches!(slots, MusicalSlots::Base | MusicalSlots::Both) {
            match direction {
                Musical::Sharp => raise_point(&basis, fiber, metric.at(n), src, &mut tmp),
                Musical::Flat => lower_point(&basis, fiber, metric.at(n), src, &mut tmp),
            }
        } else {
            tmp.copy_from_slice(src);
        }
        if matches!(slots, MusicalSlots::Fiber | MusicalSlots::Both) {
            match direction {
                Musical::Sharp => {
                    fiber_map_point(basis.len(), fiber, &tmp, dst, |a, b| kappa.inv(a, b))
                }
                Musical::Flat => {
                    fiber_map_point(basis.len(), fiber, &tmp, dst, |a, b| kappa.get(a, b))
                }
            }
        } else {
            dst.copy_from_slice(&tmp);
        }
    }
    out
}

/// `Phi` on a field of upper-index tensors.
pub fn phi_iso(chi: &FormField) -> FormField {
    let m = chi.dim();
    let from = chi.basis();
    let to = Basis::new(m, m - chi.degree());
    let mut out = FormField::zeros(m, m - chi.degree(), chi.fiber(), chi.nodes());
    for n in 0..chi.nodes() {
        phi_point(&from, &to, chi.fiber(), chi.at(n), out.at_mut(n));
    }
    out
}

/// Inverse of [`phi_iso`].
pub fn phi_iso_inv(eta: &FormField) -> FormField {
    let m = eta.dim();
    let from = eta.basis();
    let to = Basis::new(m, m - eta.degree());
    let mut out = FormField::zeros(m, m - eta.degree(), eta.fiber(), eta.nodes());
    for n in 0..eta.nodes() {
        phi_inv_point(&from, &to, eta.fiber(), eta.at(n), out.at_mut(n));
    }
    out
}

/// `(Phi, Phi_b)` applied to a star dual.
pub fn phi_iso_dual(d: &DualField) -> DualField {
    assert_eq!(
        d.rep,
        Representation::Star,
        "phi_iso_dual expects a star dual"
    );
    DualField {
        rep: Representation::Dagger,
        interior: phi_iso(&d.interior),
        boundary: d.boundary.iter().map(|(f, v)| (*f, phi_iso(v))).collect(),
    }
}

/// Inverse of [`phi_iso_dual`].
pub fn phi_iso_inv_dual(d: &DualField) -> DualField {
    assert_eq!(
        d.rep,
        Representation::Dagger,
        "phi_iso_inv_dual expects a dagger dual"
    );
    DualField {
        rep: Representation::Star,
        interior: phi_iso_inv(&d.interior),
        boundary: d
            .boundary
            .iter()
            .map(|(f, v)| (*f, phi_iso_inv(v)))
            .collect(),
    }
}

/// Pullback of a form to a face, expressed in face-chart components.
pub fn boundary_pullback(
    w: &FormField,
    grid: &RectGrid,
    face: Face,
) -> Result<FormField, ExteriorError> {
    if w.degree() == w.dim() {
        return Err(ExteriorError::DegreeMismatch(format!(
            "a degree-{} form has no pullback to a {}-dimensional face",
            w.degree(),
            w.dim() - 1
        )));
    }
    let nodes = grid.face_nodes(face)?;
    Ok(pullback_on_nodes(w, face, &nodes))
}

/// Same as [`boundary_pullback`] with precomputed face nodes.
///
/// # Panics
/// If the form has top degree.
pub fn pullback_on_nodes(w: &FormField, face: Face, nodes: &[usize]) -> FormField {
    let m = w.dim();
    let k = w.degree();
    assert!(k < m, "top-degree forms vanish on faces");
    let fiber = w.fiber();
    let vol = w.basis();
    let fb = Basis::new(m - 1, k);
    let mut out = FormField::zeros(m - 1, k, fiber, nodes.len());
    for (fs, fmi) in fb.indices().iter().enumerate() {
        let vs = vol.slot(fmi.from_face_chart(face.axis));
        for (kf, &n) in nodes.iter().enumerate() {
            for a in 0..fiber {
                out.set(kf, fs, a, w.get(n, vs, a));
            }
        }
    }
    out
}

/// Copies the volume values on a face's nodes (no index pullback).
pub fn restrict_to_nodes(w: &FormField, dim: usize, nodes: &[usize]) -> FormField {
    w.gather(dim, nodes)
}

/// Pairing of a restricted dual with a primal form: interior integral plus
/// the sum of oriented face integrals.
pub fn pairing(
    dual: &DualField,
    phi: &FormField,
    grid: &RectGrid,
    boundaries: &[BoundaryData],
) -> Result<Real, ExteriorError> {
    if dual.primal_degree() != phi.degree() {
        return Err(ExteriorError::DegreeMismatch(format!(
            "dual pairs with degree {} but field has degree {}",
            dual.primal_degree(),
            phi.degree()
        )));
    }
    let interior = match dual.rep {
        Representation::Star => match contract_pair(&dual.interior, phi)? {
            Contraction::Scalar(d) => d,
            Contraction::Vector(_) => unreachable!("degrees checked equal"),
        },
        Representation::Dagger => wedge_pair(phi, &dual.interior)?,
    };
    let mut total = interior.integrate(grid);
    for (face, part) in &dual.boundary {
        let bd = boundaries
            .iter()
            .find(|b| b.face == *face)
            .ok_or(ExteriorError::MissingFace(*face))?;
        let pulled = pullback_on_nodes(phi, *face, &bd.nodes);
        let dens = match dual.rep {
            Representation::Star => match contract_pair(part, &pulled)? {
                Contraction::Scalar(d) => d,
                Contraction::Vector(_) => unreachable!("degrees checked equal"),
            },
            Representation::Dagger => wedge_pair(&pulled, part)?,
        };
        total += dens.integrate_face(bd);
    }
    Ok(total)
}
