//! Tensor fields on the grid: bundles, storage, weighted inner products and
//! norms, and the smeared surface-flux integral.
//!
//! Symmetric 2-tensors are stored as their upper triangle; trace-free ones
//! drop the last diagonal component (it is reconstructed as minus the sum of
//! the stored diagonal). All pointwise pairings contract the full tensor, so
//! off-diagonal components count twice.

use std::sync::Arc;

use crate::domain::{CutoffField, Domain, WeightConfig, Weights};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::profile::smoothstep5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BundleKind {
    Scalar,
    OneForm,
    Sym2,
    Sym2TraceFree,
}

impl BundleKind {
    pub fn label(&self) -> &'static str {
        match self {
            BundleKind::Scalar => "SCALAR",
            BundleKind::OneForm => "ONE_FORM",
            BundleKind::Sym2 => "SYM2",
            BundleKind::Sym2TraceFree => "SYM2_TRACEFREE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleType {
    pub kind: BundleKind,
    pub n: usize,
}

impl BundleType {
    pub fn new(kind: BundleKind, n: usize) -> BundleType {
        BundleType { kind, n }
    }

    pub fn component_count(&self) -> usize {
        match self.kind {
            BundleKind::Scalar => 1,
            BundleKind::OneForm => self.n,
            BundleKind::Sym2 => self.n * (self.n + 1) / 2,
            BundleKind::Sym2TraceFree => self.n * (self.n + 1) / 2 - 1,
        }
    }

    /// Index pairs (i, j), i <= j, of the stored symmetric components in
    /// storage order. For trace-free bundles the last diagonal (n-1, n-1)
    /// is omitted.
    pub fn sym_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.n {
            for j in i..self.n {
                pairs.push((i, j));
            }
        }
        if self.kind == BundleKind::Sym2TraceFree {
            pairs.retain(|&(i, j)| !(i == self.n - 1 && j == self.n - 1));
        }
        pairs
    }
}

/// The three supported first-order operator pairs (P, P*).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// P = d* on one-forms (minus divergence), P* = d on functions.
    Grad,
    /// P = divergence on symmetric 2-tensors, P* the Killing operator
    /// omega -> grad omega + (grad omega)^T.
    Killing,
    /// P = divergence on trace-free symmetric 2-tensors, P* the conformal
    /// Killing (Ahlfors) operator. Requires n >= 3.
    ConfKilling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub n: usize,
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, n: usize) -> Result<OperatorSpec> {
        if !(1..=3).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        if kind == OperatorKind::ConfKilling && n < 3 {
            return Err(Error::UnsupportedOperator(format!(
                "the conformal Killing operator is not underdetermined elliptic for n = {n}; \
                 it requires n >= 3"
            )));
        }
        Ok(OperatorSpec { kind, n })
    }

    /// Bundle of the potential u (domain of P*, codomain of P).
    pub fn potential_bundle(&self) -> BundleType {
        match self.kind {
            OperatorKind::Grad => BundleType::new(BundleKind::Scalar, self.n),
            OperatorKind::Killing | OperatorKind::ConfKilling => {
                BundleType::new(BundleKind::OneForm, self.n)
            }
        }
    }

    /// Bundle of the physical field U (domain of P, codomain of P*).
    pub fn field_bundle(&self) -> BundleType {
        match self.kind {
            OperatorKind::Grad => BundleType::new(BundleKind::OneForm, self.n),
            OperatorKind::Killing => BundleType::new(BundleKind::Sym2, self.n),
            OperatorKind::ConfKilling => BundleType::new(BundleKind::Sym2TraceFree, self.n),
        }
    }

    /// Analytic dimension of ker P* on a connected flat domain.
    pub fn kernel_dim(&self) -> usize {
        match self.kind {
            OperatorKind::Grad => 1,
            OperatorKind::Killing => self.n * (self.n + 1) / 2,
            OperatorKind::ConfKilling => (self.n + 1) * (self.n + 2) / 2,
        }
    }
}

/// A tensor field: one f64 array per independent component, over the whole
/// grid in lexicographic cell order. Cells outside a field's support hold
/// exact zeros; solver outputs are zero off the domain mask by construction.
#[derive(Debug, Clone)]
pub struct TensorField {
    bundle: BundleType,
    grid: Arc<Grid>,
    comps: Vec<Vec<f64>>,
}

impl TensorField {
    pub fn zeros(grid: Arc<Grid>, bundle: BundleType) -> TensorField {
        let total = grid.total_cells();
        TensorField {
            bundle,
            grid,
            comps: vec![vec![0.0; total]; bundle.component_count()],
        }
    }

    /// Builds a field from a per-component function of the cell-center
    /// coordinates, on every grid cell.
    pub fn from_fn(
        grid: Arc<Grid>,
        bundle: BundleType,
        mut f: impl FnMut(usize, &[f64; 3]) -> f64,
    ) -> TensorField {
        let mut out = TensorField::zeros(grid, bundle);
        let g = Arc::clone(&out.grid);
        for (lin, idx) in g.iter_cells() {
            let p = g.center(idx);
            for c in 0..bundle.component_count() {
                out.comps[c][lin] = f(c, &p);
            }
        }
        out
    }

    /// Same as [`Self::from_fn`] but zero outside the domain mask.
    pub fn masked_from_fn(
        domain: &Domain,
        bundle: BundleType,
        mut f: impl FnMut(usize, &[f64; 3]) -> f64,
    ) -> TensorField {
        let grid = domain.grid_arc();
        let mut out = TensorField::zeros(grid, bundle);
        let g = Arc::clone(&out.grid);
        for (lin, idx) in g.iter_cells() {
            if !domain.is_masked(lin) {
                continue;
            }
            let p = g.center(idx);
            for c in 0..bundle.component_count() {
                out.comps[c][lin] = f(c, &p);
            }
        }
        out
    }

    pub fn bundle(&self) -> BundleType {
        self.bundle
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<Grid> {
        Arc::clone(&self.grid)
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comps[c]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.comps
    }

    pub fn same_layout(&self, other: &TensorField) -> bool {
        self.bundle == other.bundle && *self.grid == *other.grid
    }

    /// self += scale * other
    pub fn axpy(&mut self, scale: f64, other: &TensorField) {
        assert!(self.same_layout(other));
        for (a, b) in self.comps.iter_mut().zip(other.comps.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.comps.iter_mut() {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }

    /// Pointwise full-tensor contraction of two fields at a cell.
    #[inline]
    pub fn pointwise_inner(&self, other: &TensorField, lin: usize) -> f64 {
        pointwise_inner_comps(self.bundle, &self.comps, &other.comps, lin)
    }

    /// Pointwise magnitude sqrt(<u,u>) at a cell.
    #[inline]
    pub fn pointwise_norm(&self, lin: usize) -> f64 {
        self.pointwise_inner(self, lin).sqrt()
    }

    /// Expands the symmetric tensor at a cell to a full n x n matrix
    /// (trace-free bundles reconstruct the eliminated diagonal entry).
    pub fn sym_at(&self, lin: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        match self.bundle.kind {
            BundleKind::Sym2 | BundleKind::Sym2TraceFree => {
                for (c, (i, j)) in self.bundle.sym_pairs().into_iter().enumerate() {
                    m[i][j] = self.comps[c][lin];
                    m[j][i] = self.comps[c][lin];
                }
                if self.bundle.kind == BundleKind::Sym2TraceFree {
                    let nn = self.bundle.n - 1;
                    let mut tr = 0.0;
                    for d in 0..nn {
                        tr += m[d][d];
                    }
                    m[nn][nn] = -tr;
                }
            }
            _ => panic!("sym_at on a non-symmetric bundle"),
        }
        m
    }
}

/// Full-contraction pointwise inner product for a bundle, usable on raw
/// component arrays.
#[inline]
pub fn pointwise_inner_comps(
    bundle: BundleType,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    lin: usize,
) -> f64 {
    match bundle.kind {
        BundleKind::Scalar => a[0][lin] * b[0][lin],
        BundleKind::OneForm => {
            let mut s = 0.0;
            for c in 0..bundle.n {
                s += a[c][lin] * b[c][lin];
            }
            s
        }
        BundleKind::Sym2 => {
            let mut s = 0.0;
            for (c, (i, j)) in bundle.sym_pairs().into_iter().enumerate() {
                let mult = if i == j { 1.0 } else { 2.0 };
                s += mult * a[c][lin] * b[c][lin];
            }
            s
        }
        BundleKind::Sym2TraceFree => {
            // full contraction through the expansion: stored diagonals d
            // contribute u_d v_d plus the reconstructed (sum u)(sum v)
            let mut s = 0.0;
            let mut ta = 0.0;
            let mut tb = 0.0;
            for (c, (i, j)) in bundle.sym_pairs().into_iter().enumerate() {
                if i == j {
                    s += a[c][lin] * b[c][lin];
                    ta += a[c][lin];
                    tb += b[c][lin];
                } else {
                    s += 2.0 * a[c][lin] * b[c][lin];
                }
            }
            s + ta * tb
        }
    }
}

/// Weighted inner product sum over masked cells in fixed lexicographic
/// order: sum phi^(2 power) <u, v> psi^2 h^n.
pub fn weighted_inner(
    u: &TensorField,
    v: &TensorField,
    domain: &Domain,
    wc: &WeightConfig,
    power: u32,
) -> Result<f64> {
    let w8 = domain.weights(wc);
    weighted_inner_pre(u, v, domain, &w8, power)
}

/// [`weighted_inner`] against precomputed weights.
pub fn weighted_inner_pre(
    u: &TensorField,
    v: &TensorField,
    domain: &Domain,
    w8: &Weights,
    power: u32,
) -> Result<f64> {
    if !u.same_layout(v) || *u.grid() != *domain.grid() {
        return Err(Error::DomainMismatch);
    }
    let hn = domain.grid().cell_volume();
    let mut acc = 0.0;
    for lin in 0..domain.grid().total_cells() {
        let psi2 = w8.psi_sq[lin];
        if psi2 == 0.0 {
            continue;
        }
        let mut w = psi2;
        for _ in 0..power {
            w *= w8.phi_sq[lin];
        }
        acc += w * u.pointwise_inner(v, lin);
    }
    Ok(acc * hn)
}

/// L^2_psi norm.
pub fn weighted_norm(u: &TensorField, domain: &Domain, wc: &WeightConfig) -> Result<f64> {
    Ok(weighted_inner(u, u, domain, wc, 0)?.sqrt())
}

/// Plain L^2 inner product over the whole grid (h^n-weighted), lexicographic.
pub fn l2_inner(u: &TensorField, v: &TensorField) -> Result<f64> {
    if !u.same_layout(v) {
        return Err(Error::DomainMismatch);
    }
    let hn = u.grid().cell_volume();
    let mut acc = 0.0;
    for lin in 0..u.grid().total_cells() {
        acc += u.pointwise_inner(v, lin);
    }
    Ok(acc * hn)
}

/// Plain L^2 norm restricted to the domain mask.
pub fn l2_norm_masked(u: &TensorField, domain: &Domain) -> f64 {
    let hn = u.grid().cell_volume();
    let mut acc = 0.0;
    for lin in 0..u.grid().total_cells() {
        if domain.is_masked(lin) {
            acc += u.pointwise_inner(u, lin);
        }
    }
    (acc * hn).sqrt()
}

/// Weighted Sobolev norm of order k in {0, 1}:
/// sqrt( sum_{i<=k} |phi^i grad^(i) u|^2_psi ), with the centered-difference
/// gradient applied componentwise.
pub fn sobolev_norm(
    u: &TensorField,
    domain: &Domain,
    wc: &WeightConfig,
    k: usize,
) -> Result<f64> {
    if k > 1 {
        return Err(Error::UnsupportedOrder(k));
    }
    let w8 = domain.weights(wc);
    let mut total = weighted_inner_pre(u, u, domain, &w8, 0)?;
    if k == 1 {
        let grid = u.grid();
        let hn = grid.cell_volume();
        let n = grid.dim();
        let mut acc = 0.0;
        let mut deriv = vec![0.0; grid.total_cells()];
        for comp in u.components() {
            for axis in 0..n {
                crate::ops::centered_diff(grid, comp, axis, &mut deriv);
                for lin in 0..grid.total_cells() {
                    let psi2 = w8.psi_sq[lin];
                    if psi2 == 0.0 {
                        continue;
                    }
                    acc += w8.phi_sq[lin] * psi2 * deriv[lin] * deriv[lin];
                }
            }
        }
        total += acc * hn;
    }
    Ok(total.sqrt())
}

/// Smooth per-cell indicator of the inside of a measuring surface, equal to
/// 1 strictly inside and 0 strictly outside, transitioning over `width`.
#[derive(Debug, Clone)]
pub struct Indicator {
    values: Vec<f64>,
    width: f64,
}

impl Indicator {
    /// Spherical shell indicator: 1 for |p - center| < radius - width/2,
    /// 0 beyond radius + width/2.
    pub fn shell(grid: &Grid, center: [f64; 3], radius: f64, width: f64) -> Indicator {
        let n = grid.dim();
        let mut values = vec![0.0; grid.total_cells()];
        let lo = radius - 0.5 * width;
        for (lin, idx) in grid.iter_cells() {
            let p = grid.center(idx);
            let mut r2 = 0.0;
            for a in 0..n {
                let d = p[a] - center[a];
                r2 += d * d;
            }
            let r = r2.sqrt();
            values[lin] = if r <= lo {
                1.0
            } else if r >= lo + width {
                0.0
            } else {
                1.0 - smoothstep5((r - lo) / width)
            };
        }
        Indicator { values, width }
    }

    /// Reuses a gluing cutoff as the flux indicator (it is 1 on the first
    /// side of the transition and 0 on the second).
    pub fn from_cutoff(chi: &CutoffField) -> Indicator {
        Indicator {
            values: chi.values().to_vec(),
            width: chi.transition_width(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn width(&self) -> f64 {
        self.width
    }
}

/// Discrete divergence-theorem boundary term through the indicator's
/// transition shell:
///
///   sum_cells ind * (<P W, v> - <W, P* v>) h^n .
///
/// With the exact discrete adjoint pair this telescopes to a commutator
/// supported where the indicator varies, so the value is insensitive to
/// field behavior away from the shell.
pub fn surface_flux(
    w: &TensorField,
    v: &TensorField,
    op: OperatorSpec,
    indicator: &Indicator,
) -> Result<f64> {
    let grid = w.grid();
    if w.bundle() != op.field_bundle() {
        return Err(Error::BundleMismatch {
            expected: op.field_bundle(),
            got: w.bundle(),
        });
    }
    if v.bundle() != op.potential_bundle() {
        return Err(Error::BundleMismatch {
            expected: op.potential_bundle(),
            got: v.bundle(),
        });
    }
    let required = 4.0 * grid.h_max();
    if indicator.width < required {
        return Err(Error::IndicatorTooSharp {
            width: indicator.width,
            required,
        });
    }
    let pw = crate::ops::apply_forward(op, w)?;
    let pv = crate::ops::apply_adjoint(op, v)?;
    let hn = grid.cell_volume();
    let mut acc = 0.0;
    for lin in 0..grid.total_cells() {
        let ind = indicator.values[lin];
        if ind == 0.0 {
            continue;
        }
        acc += ind * (pw.pointwise_inner(v, lin) - w.pointwise_inner(&pv, lin));
    }
    Ok(acc * hn)
}
