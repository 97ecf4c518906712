//! Discrete operators: second-order centered differences, the adjoint pair
//! (P, P*) for the three operator kinds, and the cutoff commutator source.
//!
//! P is the exact discrete adjoint of the P* stencil under the unweighted
//! cell-sum pairing with zero extension, so summation-by-parts identities
//! hold to rounding. For the Killing pair this makes P twice the bare
//! divergence (the adjoint of omega -> grad omega + (grad omega)^T); for the
//! conformal Killing pair the 1/2-normalized symmetrization makes P exactly
//! the bare divergence on trace-free tensors.

use rayon::prelude::*;

use crate::domain::CutoffField;
use crate::error::{Error, Result};
use crate::fields::{BundleKind, OperatorKind, OperatorSpec, TensorField};
use crate::grid::Grid;

/// out[c] = (src[c + e_axis] - src[c - e_axis]) / (2 h_axis), with zero
/// extension beyond the grid edge. Parallel over first-axis slabs with
/// disjoint writes; bitwise deterministic for any thread count.
pub fn centered_diff(grid: &Grid, src: &[f64], axis: usize, out: &mut [f64]) {
    let cells = *grid.cells();
    let (c0, c1, c2) = (cells[0], cells[1], cells[2]);
    let slab = c1 * c2;
    let inv2h = 0.5 / grid.spacing()[axis];
    out.par_chunks_mut(slab).enumerate().for_each(|(i, slice)| {
        for j in 0..c1 {
            for k in 0..c2 {
                let l = j * c2 + k;
                let gl = i * slab + l;
                let (up, dn) = match axis {
                    0 => (
                        if i + 1 < c0 { src[gl + slab] } else { 0.0 },
                        if i > 0 { src[gl - slab] } else { 0.0 },
                    ),
                    1 => (
                        if j + 1 < c1 { src[gl + c2] } else { 0.0 },
                        if j > 0 { src[gl - c2] } else { 0.0 },
                    ),
                    _ => (
                        if k + 1 < c2 { src[gl + 1] } else { 0.0 },
                        if k > 0 { src[gl - 1] } else { 0.0 },
                    ),
                };
                slice[l] = (up - dn) * inv2h;
            }
        }
    });
}

fn check_bundle(field: &TensorField, expected: crate::fields::BundleType) -> Result<()> {
    if field.bundle() != expected {
        return Err(Error::BundleMismatch {
            expected,
            got: field.bundle(),
        });
    }
    Ok(())
}

/// Applies P* (the overdetermined side): gradient, Killing operator, or
/// conformal Killing operator.
pub fn apply_adjoint(op: OperatorSpec, u: &TensorField) -> Result<TensorField> {
    check_bundle(u, op.potential_bundle())?;
    let grid = u.grid();
    let n = op.n;
    let out_bundle = op.field_bundle();
    let mut out = TensorField::zeros(u.grid_arc(), out_bundle);
    let total = grid.total_cells();
    let mut buf_a = vec![0.0; total];
    let mut buf_b = vec![0.0; total];
    match op.kind {
        OperatorKind::Grad => {
            for a in 0..n {
                centered_diff(grid, u.component(0), a, out.component_mut(a));
            }
        }
        OperatorKind::Killing => {
            for (c, (i, j)) in out_bundle.sym_pairs().into_iter().enumerate() {
                centered_diff(grid, u.component(j), i, &mut buf_a);
                centered_diff(grid, u.component(i), j, &mut buf_b);
                let dst = out.component_mut(c);
                for l in 0..total {
                    dst[l] = buf_a[l] + buf_b[l];
                }
            }
        }
        OperatorKind::ConfKilling => {
            // divergence term shared by the diagonal entries
            let mut div = vec![0.0; total];
            for a in 0..n {
                centered_diff(grid, u.component(a), a, &mut buf_a);
                for l in 0..total {
                    div[l] += buf_a[l];
                }
            }
            let inv_n = 1.0 / n as f64;
            for (c, (i, j)) in out_bundle.sym_pairs().into_iter().enumerate() {
                if i == j {
                    centered_diff(grid, u.component(i), i, &mut buf_a);
                    let dst = out.component_mut(c);
                    for l in 0..total {
                        dst[l] = buf_a[l] - inv_n * div[l];
                    }
                } else {
                    centered_diff(grid, u.component(j), i, &mut buf_a);
                    centered_diff(grid, u.component(i), j, &mut buf_b);
                    let dst = out.component_mut(c);
                    for l in 0..total {
                        dst[l] = 0.5 * (buf_a[l] + buf_b[l]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Applies P, the exact discrete adjoint of [`apply_adjoint`] under the
/// unweighted zero-extended pairing.
pub fn apply_forward(op: OperatorSpec, w: &TensorField) -> Result<TensorField> {
    check_bundle(w, op.field_bundle())?;
    let grid = w.grid();
    let n = op.n;
    let mut out = TensorField::zeros(w.grid_arc(), op.potential_bundle());
    let total = grid.total_cells();
    let mut buf = vec![0.0; total];
    match op.kind {
        OperatorKind::Grad => {
            let dst = out.component_mut(0);
            for a in 0..n {
                centered_diff(grid, w.component(a), a, &mut buf);
                for l in 0..total {
                    dst[l] -= buf[l];
                }
            }
        }
        OperatorKind::Killing | OperatorKind::ConfKilling => {
            let factor = if op.kind == OperatorKind::Killing {
                2.0
            } else {
                1.0
            };
            // storage lookup for the expanded tensor
            let pairs = w.bundle().sym_pairs();
            let comp_of = |i: usize, j: usize| -> Option<usize> {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                pairs.iter().position(|&p| p == (a, b))
            };
            // reconstructed last diagonal for trace-free storage
            let last_diag: Option<Vec<f64>> = if w.bundle().kind == BundleKind::Sym2TraceFree {
                let mut v = vec![0.0; total];
                for (c, (i, j)) in pairs.iter().enumerate() {
                    if i == j {
                        let src = w.component(c);
                        for l in 0..total {
                            v[l] -= src[l];
                        }
                    }
                }
                Some(v)
            } else {
                None
            };
            for j in 0..n {
                for i in 0..n {
                    let src: &[f64] = match comp_of(i, j) {
                        Some(c) => w.component(c),
                        None => last_diag.as_deref().expect("eliminated diagonal"),
                    };
                    centered_diff(grid, src, i, &mut buf);
                    let dst = out.component_mut(j);
                    for l in 0..total {
                        dst[l] -= factor * buf[l];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The order-zero commutator source -[P, chi] applied to a field, with the
/// analytic cutoff gradient. For a field D in P's domain this equals the
/// divergence that interpolation T = chi V + (1 - chi) W picks up from the
/// cutoff, evaluated without stencil truncation tails:
///
///   grad:          f = <grad chi, D>
///   killing:       f_j = 2 sum_i (grad chi)_i D_ij
///   conf killing:  f_j = sum_i (grad chi)_i D_ij
///
/// The result is supported exactly in the transition shell.
pub fn cutoff_commutator_source(
    op: OperatorSpec,
    chi: &CutoffField,
    delta: &TensorField,
) -> Result<TensorField> {
    check_bundle(delta, op.field_bundle())?;
    let grid = delta.grid();
    let n = op.n;
    let mut out = TensorField::zeros(delta.grid_arc(), op.potential_bundle());
    let (lo, hi) = chi.transition();
    let center = chi.center();
    for (lin, idx) in grid.iter_cells() {
        let p = grid.center(idx);
        let mut r2 = 0.0;
        for a in 0..n {
            let d = p[a] - center[a];
            r2 += d * d;
        }
        let r = r2.sqrt();
        if r <= lo || r >= hi {
            continue;
        }
        let g = chi.grad_at(&p);
        match op.kind {
            OperatorKind::Grad => {
                let mut s = 0.0;
                for a in 0..n {
                    s += g[a] * delta.component(a)[lin];
                }
                out.component_mut(0)[lin] = s;
            }
            OperatorKind::Killing | OperatorKind::ConfKilling => {
                let factor = if op.kind == OperatorKind::Killing {
                    2.0
                } else {
                    1.0
                };
                let m = delta.sym_at(lin);
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += g[i] * m[i][j];
                    }
                    out.component_mut(j)[lin] = factor * s;
                }
            }
        }
    }
    Ok(out)
}
