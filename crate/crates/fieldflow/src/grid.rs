//! Rectangular computational domains in boundary-adapted coordinates.
//!
//! Nodes are stored row-major with the last axis varying fastest. Bounded
//! axes place nodes at `x = j h` for `j = 0..N`, so the domain length is
//! `(N - 1) h` and the two boundary faces sit at `x = 0` and `x = L`.
//! Periodic axes place nodes at `x = j h` with length `N h` and no faces.
//!
//! Orientation of boundary faces follows the outward normal: the face chart
//! uses the remaining axes in increasing order, and a face integral of a chart
//! density is multiplied by [`Face::orientation`] so that Stokes' theorem holds
//! with the outward-normal-first convention. For a 1D rod this gives `+1` at
//! `x = L` and `-1` at `x = 0`.

use nalgebra::{DMatrix, Matrix3};
use thiserror::Error;

use crate::Real;

/// Errors raised while building grids, metrics or boundary data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1, 2 or 3 (got {0})")]
    InvalidDimension(usize),
    #[error("axis {axis} has {nodes} nodes; at least 3 are required")]
    TooFewNodes { axis: usize, nodes: usize },
    #[error("axis {axis} has non-positive spacing {spacing}")]
    NonPositiveSpacing { axis: usize, spacing: Real },
    #[error("metric is not symmetric positive definite at node {node}")]
    MetricNotSpd { node: usize },
    #[error("metric matrix has shape {rows}x{cols}, expected {dim}x{dim}")]
    MetricShape {
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("fiber metric is not symmetric and invertible")]
    FiberMetricSingular,
    #[error("axis {axis} is periodic and has no boundary face")]
    PeriodicFace { axis: usize },
    #[error("axis {axis} is out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },
}

/// Per-axis topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    Periodic,
    Bounded,
}

/// Which end of a bounded axis a face sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    /// The face at `x = 0`.
    Lower,
    /// The face at `x = L`.
    Upper,
}

impl Side {
    /// `-1` for the lower face, `+1` for the upper face.
    pub fn sign(self) -> Real {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

/// A boundary face: one end of a bounded axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn new(axis: usize, side: Side) -> Self {
        Self { axis, side }
    }

    /// Sign relating the face chart orientation to the outward-induced one.
    ///
    /// The oriented boundary volume form is
    /// `orientation * sqrt|g_b| dx^{others}` in face chart coordinates.
    pub fn orientation(&self) -> Real {
        let parity = if self.axis.is_multiple_of(2) { 1.0 } else { -1.0 };
        self.side.sign() * parity
    }

    /// Short label such as `x1_lower` used in CSV headers and configs.
    pub fn label(&self) -> String {
        let side = match self.side {
            Side::Lower => "lower",
            Side::Upper => "upper",
        };
        format!("x{}_{}", self.axis + 1, side)
    }

    /// Parses labels produced by [`Face::label`].
    pub fn parse(label: &str) -> Option<Face> {
        let rest = label.strip_prefix('x')?;
        let (num, side) = rest.split_once('_')?;
        let axis: usize = num.parse().ok()?;
        if axis == 0 {
            return None;
        }
        let side = match side {
            "lower" => Side::Lower,
            "upper" => Side::Upper,
            _ => return None,
        };
        Some(Face::new(axis - 1, side))
    }
}

/// Description of one grid axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisSpec {
    pub nodes: usize,
    pub spacing: Real,
    pub topology: Topology,
}

impl AxisSpec {
    pub fn periodic(nodes: usize, length: Real) -> Self {
        Self {
            nodes,
            spacing: length / nodes as Real,
            topology: Topology::Periodic,
        }
    }

    pub fn bounded(nodes: usize, length: Real) -> Self {
        Self {
            nodes,
            spacing: length / (nodes.saturating_sub(1)).max(1) as Real,
            topology: Topology::Bounded,
        }
    }

    /// Physical length of the axis.
    pub fn length(&self) -> Real {
        match self.topology {
            Topology::Periodic => self.nodes as Real * self.spacing,
            Topology::Bounded => (self.nodes - 1) as Real * self.spacing,
        }
    }
}

/// A rectangular grid of dimension 0 to 3.
///
/// Dimension 0 only arises as the face grid of a 1D domain; it has a single
/// node of unit weight.
#[derive(Clone, Debug, PartialEq)]
pub struct RectGrid {
    axes: Vec<AxisSpec>,
    strides: Vec<usize>,
    len: usize,
}

impl RectGrid {
    /// Builds a grid of dimension 1 to 3.
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self, GridError> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(GridError::InvalidDimension(axes.len()));
        }
        for (axis, spec) in axes.iter().enumerate() {
            if spec.nodes < 3 {
                return Err(GridError::TooFewNodes {
                    axis,
                    nodes: spec.nodes,
                });
            }
            if !(spec.spacing > 0.0) || !spec.spacing.is_finite() {
                return Err(GridError::NonPositiveSpacing {
                    axis,
                    spacing: spec.spacing,
                });
            }
        }
        Ok(Self::from_axes_unchecked(axes))
    }

    /// The zero-dimensional grid with one node.
    pub fn point() -> Self {
        Self::from_axes_unchecked(Vec::new())
    }

    fn from_axes_unchecked(axes: Vec<AxisSpec>) -> Self {
        let m = axes.len();
        let mut strides = vec![1; m];
        for i in (0..m.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].nodes;
        }
        let len = axes.iter().map(|a| a.nodes).product();
        Self { axes, strides, len }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &AxisSpec {
        &self.axes[i]
    }

    pub fn spacing(&self, i: usize) -> Real {
        self.axes[i].spacing
    }

    pub fn min_spacing(&self) -> Real {
        self.axes
            .iter()
            .map(|a| a.spacing)
            .fold(Real::INFINITY, Real::min)
    }

    pub fn stride(&self, i: usize) -> usize {
        self.strides[i]
    }

    /// Flat node index from per-axis indices.
    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Per-axis indices of a node (unused trailing entries are zero).
    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for (i, axis) in self.axes.iter().enumerate() {
            out[i] = (node / self.strides[i]) % axis.nodes;
        }
        out
    }

    /// Coordinate of a node along one axis.
    pub fn coord(&self, node: usize, axis: usize) -> Real {
        ((node / self.strides[axis]) % self.axes[axis].nodes) as Real * self.axes[axis].spacing
    }

    /// Node coordinates (unused trailing entries are zero).
    pub fn coords(&self, node: usize) -> [Real; 3] {
        let mut x = [0.0; 3];
        for (i, xi) in x.iter_mut().enumerate().take(self.dim()) {
            *xi = self.coord(node, i);
        }
        x
    }

    /// Quadrature weight: trapezoid on bounded axes times the cell volume.
    pub fn weight(&self, node: usize) -> Real {
        let mut w = 1.0;
        for (i, axis) in self.axes.iter().enumerate() {
            w *= axis.spacing;
            if axis.topology == Topology::Bounded {
                let j = (node / self.strides[i]) % axis.nodes;
                if j == 0 || j + 1 == axis.nodes {
                    w *= 0.5;
                }
            }
        }
        w
    }

    pub fn weights(&self) -> Vec<Real> {
        (0..self.len).map(|n| self.weight(n)).collect()
    }

    pub fn has_boundary(&self) -> bool {
        self.axes.iter().any(|a| a.topology == Topology::Bounded)
    }

    /// All boundary faces, ordered by axis then side.
    pub fn faces(&self) -> Vec<Face> {
        let mut out = Vec::new();
        for (i, axis) in self.axes.iter().enumerate() {
            if axis.topology == Topology::Bounded {
                out.push(Face::new(i, Side::Lower));
                out.push(Face::new(i, Side::Upper));
            }
        }
        out
    }

    /// Checks that a face lies on a bounded axis of this grid.
    pub fn check_face(&self, face: Face) -> Result<(), GridError> {
        if face.axis >= self.dim() {
            return Err(GridError::AxisOutOfRange {
                axis: face.axis,
                dim: self.dim(),
            });
        }
        if self.axes[face.axis].topology != Topology::Bounded {
            return Err(GridError::PeriodicFace { axis: face.axis });
        }
        Ok(())
    }

    /// The (m-1)-dimensional grid spanned by the tangential axes of a face.
    pub fn face_grid(&self, face: Face) -> Result<RectGrid, GridError> {
        self.check_face(face)?;
        let axes = self
            .axes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != face.axis)
            .map(|(_, a)| a.clone())
            .collect();
        Ok(Self::from_axes_unchecked(axes))
    }

    /// Volume node indices of a face, listed in face-grid order.
    pub fn face_nodes(&self, face: Face) -> Result<Vec<usize>, GridError> {
        let fgrid = self.face_grid(face)?;
        let fixed = match face.side {
            Side::Lower => 0,
            Side::Upper => self.axes[face.axis].nodes - 1,
        };
        let mut out = Vec::with_capacity(fgrid.len());
        for fnode in 0..fgrid.len() {
            let fidx = fgrid.multi_index(fnode);
            let mut idx = [0usize; 3];
            let mut k = 0;
            for (i, slot) in idx.iter_mut().enumerate().take(self.dim()) {
                if i == face.axis {
                    *slot = fixed;
                } else {
                    *slot = fidx[k];
                    k += 1;
                }
            }
            out.push(self.index(&idx[..self.dim()]));
        }
        Ok(out)
    }

    /// Whether a node lies on the given face.
    pub fn on_face(&self, node: usize, face: Face) -> bool {
        let j = (node / self.strides[face.axis]) % self.axes[face.axis].nodes;
        match face.side {
            Side::Lower => j == 0,
            Side::Upper => j + 1 == self.axes[face.axis].nodes,
        }
    }

    /// Finite-difference derivative along `axis` at `node` of the nodal
    /// function `f`.
    ///
    /// Centered second-order differences in the interior, periodic wrap on
    /// periodic axes and second-order one-sided stencils at bounded ends.
    #[inline]
    pub fn diff_at<F: Fn(usize) -> Real>(&self, f: F, node: usize, axis: usize) -> Real {
        let spec = &self.axes[axis];
        let s = self.strides[axis];
        let n = spec.nodes;
        let j = (node / s) % n;
        let inv2h = 0.5 / spec.spacing;
        match spec.topology {
            Topology::Periodic => {
                let up = if j + 1 == n {
                    node + s - n * s
                } else {
                    node + s
                };
                let dn = if j == 0 { node + (n - 1) * s } else { node - s };
                (f(up) - f(dn)) * inv2h
            }
            Topology::Bounded => {
                if j == 0 {
                    (-3.0 * f(node) + 4.0 * f(node + s) - f(node + 2 * s)) * inv2h
                } else if j + 1 == n {
                    (3.0 * f(node) - 4.0 * f(node - s) + f(node - 2 * s)) * inv2h
                } else {
                    (f(node + s) - f(node - s)) * inv2h
                }
            }
        }
    }

    /// Derivative of a scalar nodal array along `axis`.
    pub fn partial_derivative(&self, field: &[Real], axis: usize) -> Vec<Real> {
        assert!(axis < self.dim(), "axis {axis} out of range");
        assert_eq!(field.len(), self.len, "field length mismatch");
        (0..self.len)
            .map(|node| self.diff_at(|k| field[k], node, axis))
            .collect()
    }

    /// Samples a closed-form function at every node.
    pub fn sample<F: Fn(&[Real; 3]) -> Real>(&self, f: F) -> Vec<Real> {
        (0..self.len).map(|n| f(&self.coords(n))).collect()
    }
}

/// Metric data at one node, padded to 3x3 with the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMetric {
    pub dim: usize,
    pub g: Matrix3<Real>,
    pub ginv: Matrix3<Real>,
    pub sqrt_det: Real,
}

impl PointMetric {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            dim,
            g: Matrix3::identity(),
            ginv: Matrix3::identity(),
            sqrt_det: 1.0,
        }
    }

    /// Builds from an m x m symmetric positive definite matrix.
    pub fn from_matrix(dim: usize, g: Matrix3<Real>) -> Option<Self> {
        let mut padded = Matrix3::identity();
        for i in 0..dim {
            for j in 0..dim {
                padded[(i, j)] = g[(i, j)];
            }
        }
        if (padded - padded.transpose()).amax() > 1e-12 * padded.amax().max(1.0) {
            return None;
        }
        let chol = padded.cholesky()?;
        let ginv = chol.inverse();
        let det = padded.determinant();
        if !(det > 0.0) {
            return None;
        }
        Some(Self {
            dim,
            g: padded,
            ginv,
            sqrt_det: det.sqrt(),
        })
    }

    /// Determinant of the inverse-metric minor with rows `rows` and columns `cols`.
    pub fn inverse_minor(&self, rows: &[usize], cols: &[usize]) -> Real {
        minor(&self.ginv, rows, cols)
    }

    /// Determinant of the metric minor with rows `rows` and columns `cols`.
    pub fn metric_minor(&self, rows: &[usize], cols: &[usize]) -> Real {
        minor(&self.g, rows, cols)
    }
}

fn minor(a: &Matrix3<Real>, r: &[usize], c: &[usize]) -> Real {
    match r.len() {
        0 => 1.0,
        1 => a[(r[0], c[0])],
        2 => a[(r[0], c[0])] * a[(r[1], c[1])] - a[(r[0], c[1])] * a[(r[1], c[0])],
        3 => {
            a[(r[0], c[0])]
                * (a[(r[1], c[1])] * a[(r[2], c[2])] - a[(r[1], c[2])] * a[(r[2], c[1])])
                - a[(r[0], c[1])]
                    * (a[(r[1], c[0])] * a[(r[2], c[2])] - a[(r[1], c[2])] * a[(r[2], c[0])])
                + a[(r[0], c[2])]
                    * (a[(r[1], c[0])] * a[(r[2], c[1])] - a[(r[1], c[1])] * a[(r[2], c[0])])
        }
        n => panic!("minor of order {n} not supported"),
    }
}

/// Node-sampled Riemannian metric with cached inverse and volume factor.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    dim: usize,
    points: Vec<PointMetric>,
}

impl MetricField {
    /// The Euclidean metric on a grid.
    pub fn flat(grid: &RectGrid) -> Self {
        Self {
            dim: grid.dim(),
            points: vec![PointMetric::euclidean(grid.dim()); grid.len()],
        }
    }

    /// A constant metric given as an m x m row list.
    pub fn constant(grid: &RectGrid, g: &[Vec<Real>]) -> Result<Self, GridError> {
        let m = grid.dim();
        if g.len() != m || g.iter().any(|row| row.len() != m) {
            return Err(GridError::MetricShape {
                rows: g.len(),
                cols: g.first().map_or(0, |r| r.len()),
                dim: m,
            });
        }
        let mut mat = Matrix3::identity();
        for i in 0..m {
            for j in 0..m {
                mat[(i, j)] = g[i][j];
            }
        }
        let p = PointMetric::from_matrix(m, mat).ok_or(GridError::MetricNotSpd { node: 0 })?;
        Ok(Self {
            dim: m,
            points: vec![p; grid.len()],
        })
    }

    /// Samples a metric field `x -> g(x)`; only the leading m x m block is used.
    pub fn from_fn<F: Fn(&[Real; 3]) -> Matrix3<Real>>(
        grid: &RectGrid,
        f: F,
    ) -> Result<Self, GridError> {
        let m = grid.dim();
        let points = (0..grid.len())
            .map(|node| {
                PointMetric::from_matrix(m, f(&grid.coords(node)))
                    .ok_or(GridError::MetricNotSpd { node })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dim: m, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn at(&self, node: usize) -> &PointMetric {
        &self.points[node]
    }

    pub fn sqrt_det(&self, node: usize) -> Real {
        self.points[node].sqrt_det
    }

    /// Largest characteristic speed `sqrt(lambda_max(g^-1))` over all nodes.
    pub fn max_wave_speed(&self) -> Real {
        self.points
            .iter()
            .map(|p| {
                let mut sub = DMatrix::<Real>::zeros(self.dim, self.dim);
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        sub[(i, j)] = p.ginv[(i, j)];
                    }
                }
                sub.symmetric_eigenvalues().max().sqrt()
            })
            .fold(0.0, Real::max)
    }

    /// Pullback of the metric to a face: drop the normal row and column.
    pub fn restrict_to_face(&self, grid: &RectGrid, face: Face) -> Result<MetricField, GridError> {
        let nodes = grid.face_nodes(face)?;
        let m = self.dim;
        let tangential: Vec<usize> = (0..m).filter(|&i| i != face.axis).collect();
        let points = nodes
            .iter()
            .map(|&node| {
                let g = &self.points[node].g;
                let mut sub = Matrix3::identity();
                for (a, &i) in tangential.iter().enumerate() {
                    for (b, &j) in tangential.iter().enumerate() {
                        sub[(a, b)] = g[(i, j)];
                    }
                }
                PointMetric::from_matrix(m - 1, sub).ok_or(GridError::MetricNotSpd { node })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MetricField { dim: m - 1, points })
    }
}

/// Constant fiber metric `kappa_ab` with cached inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberMetric {
    n: usize,
    kappa: Vec<Real>,
    inverse: Vec<Real>,
    positive_definite: bool,
}

impl FiberMetric {
    pub fn identity(n: usize) -> Self {
        let mut k = vec![0.0; n * n];
        for a in 0..n {
            k[a * n + a] = 1.0;
        }
        Self {
            n,
            kappa: k.clone(),
            inverse: k,
            positive_definite: true,
        }
    }

    /// Builds from a row-major n x n symmetric matrix.
    pub fn new(n: usize, kappa: Vec<Real>) -> Result<Self, GridError> {
        if kappa.len() != n * n {
            return Err(GridError::FiberMetricSingular);
        }
        let mat = DMatrix::from_row_slice(n, n, &kappa);
        if (&mat - mat.transpose()).amax() > 1e-12 * mat.amax().max(1.0) {
            return Err(GridError::FiberMetricSingular);
        }
        let inv = mat
            .clone()
            .try_inverse()
            .ok_or(GridError::FiberMetricSingular)?;
        let positive_definite = mat.clone().cholesky().is_some();
        let mut inverse = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                inverse[a * n + b] = inv[(a, b)];
            }
        }
        Ok(Self {
            n,
            kappa,
            inverse,
            positive_definite,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> Real {
        self.kappa[a * self.n + b]
    }

    #[inline]
    pub fn inv(&self, a: usize, b: usize) -> Real {
        self.inverse[a * self.n + b]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.positive_definite
    }

    /// `kappa_ab v^b`.
    pub fn lower(&self, v: &[Real], out: &mut [Real]) {
        for a in 0..self.n {
            out[a] = (0..self.n).map(|b| self.get(a, b) * v[b]).sum();
        }
    }

    /// `kappa^ab w_b`.
    pub fn raise(&self, w: &[Real], out: &mut [Real]) {
        for a in 0..self.n {
            out[a] = (0..self.n).map(|b| self.inv(a, b) * w[b]).sum();
        }
    }
}

/// Geometry at a face: face grid, induced metric, normal and orientation.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub face: Face,
    /// The (m-1)-dimensional face grid.
    pub grid: RectGrid,
    /// Volume node index of each face node.
    pub nodes: Vec<usize>,
    /// Induced boundary metric `g_b`.
    pub metric: MetricField,
    /// Unit outward normal (contravariant components) at each face node.
    pub normal: Vec<[Real; 3]>,
    /// See [`Face::orientation`].
    pub orientation: Real,
}

/// Builds the induced boundary grid, metric and outward unit normal.
pub fn induced_boundary_data(
    grid: &RectGrid,
    metric: &MetricField,
    face: Face,
) -> Result<BoundaryData, GridError> {
    let fgrid = grid.face_grid(face)?;
    let nodes = grid.face_nodes(face)?;
    let fmetric = metric.restrict_to_face(grid, face)?;
    let a = face.axis;
    let s = face.side.sign();
    let normal = nodes
        .iter()
        .map(|&node| {
            let p = metric.at(node);
            let norm = p.ginv[(a, a)].sqrt();
            let mut n = [0.0; 3];
            for (i, ni) in n.iter_mut().enumerate().take(grid.dim()) {
                *ni = s * p.ginv[(i, a)] / norm;
            }
            n
        })
        .collect();
    Ok(BoundaryData {
        face,
        grid: fgrid,
        nodes,
        metric: fmetric,
        normal,
        orientation: face.orientation(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid2(n: usize, top: (Topology, Topology)) -> RectGrid {
        let mk = |t| match t {
            Topology::Periodic => AxisSpec::periodic(n, 1.0),
            Topology::Bounded => AxisSpec::bounded(n, 1.0),
        };
        RectGrid::new(vec![mk(top.0), mk(top.1)]).unwrap()
    }

    #[test]
    fn periodic_1d_has_no_faces() {
        let g = RectGrid::new(vec![AxisSpec::periodic(16, 1.0)]).unwrap();
        assert!(g.faces().is_empty());
        assert!(!g.has_boundary());
    }

    #[test]
    fn mixed_2d_has_two_faces_on_second_axis() {
        let g = grid2(16, (Topology::Periodic, Topology::Bounded));
        assert_eq!(
            g.faces(),
            vec![Face::new(1, Side::Lower), Face::new(1, Side::Upper)]
        );
        let lower = g.face_nodes(g.faces()[0]).unwrap();
        assert!(lower.iter().all(|&n| g.coord(n, 1) == 0.0));
        let upper = g.face_nodes(g.faces()[1]).unwrap();
        assert!(upper.iter().all(|&n| (g.coord(n, 1) - 1.0).abs() < 1e-14));
    }

    #[test]
    fn constant_metric_volume_factor() {
        let g = grid2(8, (Topology::Bounded, Topology::Bounded));
        let m = MetricField::constant(&g, &[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        for n in 0..g.len() {
            assert_abs_diff_eq!(m.sqrt_det(n), 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn non_spd_metric_reports_node() {
        let g = RectGrid::new(vec![AxisSpec::bounded(5, 1.0)]).unwrap();
        let err = MetricField::from_fn(&g, |x| {
            let mut m = Matrix3::identity();
            m[(0, 0)] = if x[0] > 0.6 { -1.0 } else { 1.0 };
            m
        })
        .unwrap_err();
        assert_eq!(err, GridError::MetricNotSpd { node: 3 });
    }

    #[test]
    fn invalid_spacing_rejected() {
        let err = RectGrid::new(vec![AxisSpec {
            nodes: 4,
            spacing: 0.0,
            topology: Topology::Bounded,
        }])
        .unwrap_err();
        assert!(matches!(err, GridError::NonPositiveSpacing { axis: 0, .. }));
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = grid2(9, (Topology::Periodic, Topology::Bounded));
        let f = vec![3.5; g.len()];
        for axis in 0..2 {
            assert!(g.partial_derivative(&f, axis).iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn derivative_exact_for_linear_on_bounded_axis() {
        let g = grid2(7, (Topology::Bounded, Topology::Bounded));
        let f = g.sample(|x| 2.0 * x[0] - 0.5 * x[1] + 1.0);
        let d0 = g.partial_derivative(&f, 0);
        let d1 = g.partial_derivative(&f, 1);
        for n in 0..g.len() {
            assert_abs_diff_eq!(d0[n], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(d1[n], -0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn periodic_derivative_converges_at_second_order() {
        let err = |n: usize| {
            let g = RectGrid::new(vec![AxisSpec::periodic(n, 1.0)]).unwrap();
            let tau = std::f64::consts::TAU;
            let f = g.sample(|x| (tau * x[0]).sin());
            let d = g.partial_derivative(&f, 0);
            (0..g.len())
                .map(|k| (d[k] - tau * (tau * g.coord(k, 0)).cos()).abs())
                .fold(0.0, f64::max)
        };
        let slope = (err(32) / err(64)).log2();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn periodic_derivative_telescopes() {
        let g = RectGrid::new(vec![AxisSpec::periodic(23, 2.0)]).unwrap();
        let f = g.sample(|x| (x[0] * 1.7).exp().sin());
        let sum: f64 = g.partial_derivative(&f, 0).iter().sum();
        assert!(sum.abs() < 1e-10);
    }

    #[test]
    fn flat_lower_face_normal_points_outward() {
        let g = grid2(6, (Topology::Periodic, Topology::Bounded));
        let m = MetricField::flat(&g);
        let b = induced_boundary_data(&g, &m, Face::new(1, Side::Lower)).unwrap();
        for n in &b.normal {
            assert_eq!(n[..2], [0.0, -1.0]);
        }
        assert_eq!(b.metric.at(0).g[(0, 0)], 1.0);
        assert_eq!(b.grid.dim(), 1);
    }

    #[test]
    fn scaled_upper_face_normal_has_unit_length() {
        let g = grid2(6, (Topology::Periodic, Topology::Bounded));
        let m = MetricField::constant(&g, &[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let b = induced_boundary_data(&g, &m, Face::new(1, Side::Upper)).unwrap();
        for n in &b.normal {
            assert_abs_diff_eq!(n[1], 0.5, epsilon = 1e-14);
            let gnn = 4.0 * n[1] * n[1] + n[0] * n[0];
            assert_abs_diff_eq!(gnn, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn one_dimensional_boundary_is_two_points() {
        let g = RectGrid::new(vec![AxisSpec::bounded(5, 1.0)]).unwrap();
        let faces = g.faces();
        assert_eq!(faces.len(), 2);
        assert_eq!(faces[0].orientation(), -1.0);
        assert_eq!(faces[1].orientation(), 1.0);
        let fg = g.face_grid(faces[1]).unwrap();
        assert_eq!(fg.len(), 1);
        assert_eq!(fg.weight(0), 1.0);
        assert_eq!(g.face_nodes(faces[1]).unwrap(), vec![4]);
    }

    #[test]
    fn periodic_face_is_an_error() {
        let g = grid2(6, (Topology::Periodic, Topology::Bounded));
        assert_eq!(
            g.face_grid(Face::new(0, Side::Lower)).unwrap_err(),
            GridError::PeriodicFace { axis: 0 }
        );
    }

    #[test]
    fn boundary_volume_factor_matches_tangential_determinant() {
        let g = RectGrid::new(vec![
            AxisSpec::bounded(5, 1.0),
            AxisSpec::bounded(5, 1.0),
            AxisSpec::periodic(5, 1.0),
        ])
        .unwrap();
        let m = MetricField::from_fn(&g, |x| {
            Matrix3::new(
                2.0 + x[0],
                0.3,
                0.1,
                0.3,
                1.5,
                0.2 * x[1],
                0.1,
                0.2 * x[1],
                1.0 + x[2],
            )
        })
        .unwrap();
        let face = Face::new(0, Side::Upper);
        let b = induced_boundary_data(&g, &m, face).unwrap();
        for (k, &node) in b.nodes.iter().enumerate() {
            let p = m.at(node);
            let det = p.g[(1, 1)] * p.g[(2, 2)] - p.g[(1, 2)] * p.g[(2, 1)];
            assert_abs_diff_eq!(b.metric.sqrt_det(k), det.sqrt(), epsilon = 1e-13);
        }
    }

    #[test]
    fn inverse_metric_is_inverse() {
        let g = RectGrid::new(vec![AxisSpec::bounded(4, 1.0), AxisSpec::bounded(4, 1.0)]).unwrap();
        let m = MetricField::from_fn(&g, |x| {
            Matrix3::new(1.0 + x[0], 0.4, 0.0, 0.4, 2.0, 0.0, 0.0, 0.0, 1.0)
        })
        .unwrap();
        for n in 0..g.len() {
            let p = m.at(n);
            assert!((p.g * p.ginv - Matrix3::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn face_labels_round_trip() {
        let f = Face::new(2, Side::Lower);
        assert_eq!(Face::parse(&f.label()), Some(f));
        assert_eq!(Face::parse("x0_lower"), None);
    }
}
