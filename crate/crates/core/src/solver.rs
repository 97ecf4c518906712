//! The weighted variational solve: projected conjugate gradient on the
//! discrete normal operator L = psi^-2 P psi^2 phi^2 P* in the psi inner
//! product, the compact-support pipeline, the asymptotic-inequality constant
//! estimator, and decay diagnostics.
//!
//! The solve works in "flat" form throughout: for a residual r in the psi
//! metric the stored array is rho = psi^2 r, so no division by a degenerate
//! weight ever happens inside the iteration. Pairings then reduce to plain
//! cell sums: <r, z>_psi = h^n sum rho . z.

use std::sync::Arc;

use crate::domain::{Domain, WeightConfig};
use crate::error::{Error, Result};
use crate::fields::{l2_norm_masked, OperatorKind, OperatorSpec, TensorField};
use crate::kernel::{build_kernel_basis, KernelBasis};
use crate::ops::{apply_adjoint, apply_forward};

/// Dynamic-range cut applied to the solve weight psi^2 phi^2 relative to its
/// maximum. Cells below the cut are frozen (unknowns fixed to zero): the
/// exact potential there needs more dynamic range than f64 carries, and
/// their contribution to every reported quantity is below 1e-6 relative.
const WEIGHT_RANGE_CUT: f64 = 1e-12;

/// Same cut for the Jacobi diagonal: unknowns whose total coupling is more
/// than twelve decades below the strongest are frozen rather than left as
/// near-decoupled slow modes.
const DIAG_RANGE_CUT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    Diagonal,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolveConfig {
    pub rel_tolerance: f64,
    /// 0 selects the default of 10x the unknown count.
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
    /// Record the CG energy functional per iteration (diagnostics).
    #[serde(default)]
    pub record_energy: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            rel_tolerance: 1e-8,
            max_iterations: 0,
            preconditioner: Preconditioner::Diagonal,
            record_energy: false,
        }
    }
}

/// Outcome diagnostics of a solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final relative residual in the psi norm.
    pub final_rel_residual: f64,
    /// Projection coefficients <f, v_i>_L2 removed from the right-hand side.
    pub kernel_coefficients: Vec<f64>,
    /// |P U - f|_L2 / |f|_L2 over the domain mask.
    pub forward_residual: f64,
    /// Fitted decay rate of U, when enough levels are usable.
    pub decay_slope: Option<f64>,
    /// Whether the requested tolerance was reached. A datum with a genuine
    /// kernel-flux residue stalls at a floor instead: the frozen boundary
    /// layer cannot transport the residue's flux.
    pub converged: bool,
    /// CG energy functional per iteration; empty unless requested.
    pub energy_trace: Vec<f64>,
}

/// Solution triple of the projected solve.
pub struct Solution {
    /// Minimizer u of the weighted normal equations (potential bundle).
    pub potential: TensorField,
    /// Physical field U = psi^2 phi^2 P* u (field bundle).
    pub field: TensorField,
    pub report: SolveReport,
}

/// Per-solve discrete setup: cut weights, active unknowns, Jacobi diagonal.
pub(crate) struct SolveSpace {
    op: OperatorSpec,
    grid: Arc<Grid>,
    hn: f64,
    psi: Vec<f64>,
    psi_sq: Vec<f64>,
    /// Cut solve weight psi^2 phi^2 (zero below the dynamic-range cut).
    w_cut: Vec<f64>,
    /// Active unknowns per potential component.
    act: Vec<Vec<bool>>,
    /// Jacobi diagonal of the normal operator per potential component.
    diag: Vec<Vec<f64>>,
    pub unknowns: usize,
}

use crate::grid::Grid;

impl SolveSpace {
    pub(crate) fn new(op: OperatorSpec, domain: &Domain, wc: &WeightConfig) -> SolveSpace {
        Self::with_region(op, domain, wc, None)
    }

    /// Restricts the active set to cells with x < collar_width when given.
    fn with_region(
        op: OperatorSpec,
        domain: &Domain,
        wc: &WeightConfig,
        collar_width: Option<f64>,
    ) -> SolveSpace {
        let grid = domain.grid_arc();
        let total = grid.total_cells();
        let w8 = domain.weights(wc);
        let mut w_raw = vec![0.0; total];
        let mut wmax = 0.0f64;
        for lin in 0..total {
            let w = w8.psi_sq[lin] * w8.phi_sq[lin];
            w_raw[lin] = w;
            wmax = wmax.max(w);
        }
        let thr = (WEIGHT_RANGE_CUT * wmax).max(f64::MIN_POSITIVE);
        let mut w_cut = w_raw;
        for w in w_cut.iter_mut() {
            if *w < thr {
                *w = 0.0;
            }
        }
        let diag = jacobi_diagonal(op, &grid, &w_cut);
        let mut dmax = 0.0f64;
        for comp in &diag {
            for &d in comp {
                dmax = dmax.max(d);
            }
        }
        let dthr = (DIAG_RANGE_CUT * dmax).max(f64::MIN_POSITIVE);
        let nc = op.potential_bundle().component_count();
        let mut act = vec![vec![false; total]; nc];
        let mut unknowns = 0;
        for lin in 0..total {
            if w_cut[lin] == 0.0 || w8.psi_sq[lin] == 0.0 {
                continue;
            }
            if let Some(cw) = collar_width {
                if domain.x()[lin] >= cw {
                    continue;
                }
            }
            for c in 0..nc {
                if diag[c][lin] >= dthr {
                    act[c][lin] = true;
                    unknowns += 1;
                }
            }
        }
        let psi: Vec<f64> = w8.psi_sq.iter().map(|v| v.sqrt()).collect();
        SolveSpace {
            op,
            hn: grid.cell_volume(),
            grid,
            psi,
            psi_sq: w8.psi_sq,
            w_cut,
            act,
            diag,
            unknowns,
        }
    }

    fn zeros_potential(&self) -> TensorField {
        TensorField::zeros(Arc::clone(&self.grid), self.op.potential_bundle())
    }

    /// ell = P (w_cut . P* p): the flat form of the normal operator.
    fn matvec(&self, p: &TensorField) -> TensorField {
        let mut w = apply_adjoint(self.op, p).expect("bundle fixed by construction");
        for comp in w.components_mut() {
            for (v, wc) in comp.iter_mut().zip(self.w_cut.iter()) {
                *v *= wc;
            }
        }
        apply_forward(self.op, &w).expect("bundle fixed by construction")
    }

    /// Physical field from a potential: U = w_cut . P* u.
    fn field_of(&self, u: &TensorField) -> TensorField {
        let mut w = apply_adjoint(self.op, u).expect("bundle fixed by construction");
        for comp in w.components_mut() {
            for (v, wc) in comp.iter_mut().zip(self.w_cut.iter()) {
                *v *= wc;
            }
        }
        w
    }

    /// h^n sum over active entries of a . b (plain potential-bundle sum).
    fn dot(&self, a: &TensorField, b: &TensorField) -> f64 {
        let mut acc = 0.0;
        for c in 0..a.components().len() {
            let (ac, bc) = (a.component(c), b.component(c));
            for lin in 0..ac.len() {
                acc += ac[lin] * bc[lin];
            }
        }
        acc * self.hn
    }

    /// psi-norm of a flat-form residual: sqrt(h^n sum_act (rho/psi)^2).
    fn flat_residual_norm(&self, rho: &TensorField) -> f64 {
        let mut acc = 0.0;
        for c in 0..rho.components().len() {
            let rc = rho.component(c);
            for lin in 0..rc.len() {
                if self.act[c][lin] {
                    let q = rc[lin] / self.psi[lin];
                    acc += q * q;
                }
            }
        }
        (acc * self.hn).sqrt()
    }

    /// Preconditioner application, active entries only.
    fn precondition(&self, rho: &TensorField, which: Preconditioner) -> TensorField {
        let mut z = self.zeros_potential();
        for c in 0..z.components().len() {
            let src = rho.component(c);
            let act = &self.act[c];
            let diag = &self.diag[c];
            let dst = z.component_mut(c);
            match which {
                Preconditioner::None => {
                    for lin in 0..src.len() {
                        if act[lin] {
                            dst[lin] = src[lin] / self.psi_sq[lin];
                        }
                    }
                }
                Preconditioner::Diagonal => {
                    for lin in 0..src.len() {
                        if act[lin] {
                            dst[lin] = src[lin] / diag[lin];
                        }
                    }
                }
            }
        }
        z
    }

    /// Projects (on active entries) off the span of psi-orthonormal members.
    fn project(&self, v: &mut TensorField, members: &[TensorField]) {
        for m in members {
            let mut c = 0.0;
            for k in 0..v.components().len() {
                let (vc, mc) = (v.component(k), m.component(k));
                for lin in 0..vc.len() {
                    c += vc[lin] * mc[lin] * self.psi_sq[lin];
                }
            }
            c *= self.hn;
            for k in 0..v.components().len() {
                let act = &self.act[k];
                let mc = m.component(k);
                let vc = v.component_mut(k);
                for lin in 0..vc.len() {
                    if act[lin] {
                        vc[lin] -= c * mc[lin];
                    }
                }
            }
        }
    }

    /// Masks a flat vector to the active set.
    fn gate(&self, v: &mut TensorField) {
        for c in 0..v.components().len() {
            let act = &self.act[c];
            let vc = v.component_mut(c);
            for lin in 0..vc.len() {
                if !act[lin] {
                    vc[lin] = 0.0;
                }
            }
        }
    }
}

/// Computes the diagonal of S^T W S per potential component, where S is the
/// P* stencil and W the cut solve weight. Derived from the stencil
/// coefficients and the full-contraction metric:
///   grad:          sum_a (w+ + w-)_a / (4 h_a^2)
///   killing:       sum_{i!=j} (w+ + w-)_i / (2 h_i^2) + (w+ + w-)_j / h_j^2
///   conf killing:  sum_{i!=j} (w+ + w-)_i / (8 h_i^2) + (w+ + w-)_j / (6 h_j^2)
fn jacobi_diagonal(op: OperatorSpec, grid: &Grid, w_cut: &[f64]) -> Vec<Vec<f64>> {
    let n = op.n;
    let total = grid.total_cells();
    let h = grid.spacing();
    // neighbor sums (w+ + w-) per axis
    let mut nbsum = vec![vec![0.0; total]; n];
    for (axis, dst) in nbsum.iter_mut().enumerate() {
        for (lin, idx) in grid.iter_cells() {
            let mut s = 0.0;
            if let Some(nb) = grid.neighbor(idx, axis, 1) {
                s += w_cut[nb];
            }
            if let Some(nb) = grid.neighbor(idx, axis, -1) {
                s += w_cut[nb];
            }
            dst[lin] = s;
        }
    }
    let nc = op.potential_bundle().component_count();
    let mut diag = vec![vec![0.0; total]; nc];
    for (j, dst) in diag.iter_mut().enumerate() {
        for lin in 0..total {
            let mut d = 0.0;
            for i in 0..n {
                let hi2 = h[i] * h[i];
                let coeff = match op.kind {
                    OperatorKind::Grad => 0.25,
                    OperatorKind::Killing => {
                        if i == j {
                            1.0
                        } else {
                            0.5
                        }
                    }
                    OperatorKind::ConfKilling => {
                        if i == j {
                            1.0 / 6.0
                        } else {
                            0.125
                        }
                    }
                };
                d += coeff * nbsum[i][lin] / hi2;
            }
            dst[lin] = d;
        }
    }
    diag
}

struct CgOutcome {
    u: TensorField,
    iterations: usize,
    rel_residual: f64,
    converged: bool,
    energy_trace: Vec<f64>,
}

/// Projected preconditioned CG on the active set, in flat form. `f` is the
/// physical right-hand side already projected off the kernel (flat form of
/// the psi-metric datum).
fn cg(
    space: &SolveSpace,
    f_projected: &TensorField,
    members: &[TensorField],
    cfg: &SolveConfig,
) -> CgOutcome {
    cg_floored(space, f_projected, members, cfg, 0.0)
}

/// `datum_floor` is the psi-norm of the unprojected datum; a projected datum
/// below 1e-13 of it is rounding dust from the projection itself (the datum
/// was entirely kernel) and the solution is zero.
fn cg_floored(
    space: &SolveSpace,
    f_projected: &TensorField,
    members: &[TensorField],
    cfg: &SolveConfig,
    datum_floor: f64,
) -> CgOutcome {
    let mut rho = f_projected.clone();
    space.gate(&mut rho);
    let gn = space.flat_residual_norm(&rho);
    let mut u = space.zeros_potential();
    let mut energy_trace = Vec::new();
    if gn <= 1e-13 * datum_floor {
        return CgOutcome {
            u,
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
            energy_trace,
        };
    }
    let max_iter = if cfg.max_iterations == 0 {
        10 * space.unknowns.max(1)
    } else {
        cfg.max_iterations
    };
    let mut z = space.precondition(&rho, cfg.preconditioner);
    space.project(&mut z, members);
    let mut p = z.clone();
    let mut rz = space.dot(&rho, &z);
    let mut rel = 1.0;
    let mut converged = false;
    let mut it = 0;
    // stagnation watchdog: a residual that stops improving sits on the
    // frozen-layer floor and will not move in any number of iterations
    let mut best_rel = f64::INFINITY;
    let mut stalled_for = 0usize;
    while it < max_iter {
        it += 1;
        let ell = space.matvec(&p);
        let pap = space.dot(&ell, &p);
        if !(pap > 0.0) {
            // curvature lost to rounding; nothing further to extract
            break;
        }
        let alpha = rz / pap;
        u.axpy(alpha, &p);
        {
            // rho -= alpha * ell on active entries
            for c in 0..rho.components().len() {
                let act = &space.act[c];
                let ec = ell.component(c);
                let rc = rho.component_mut(c);
                for lin in 0..rc.len() {
                    if act[lin] {
                        rc[lin] -= alpha * ec[lin];
                    }
                }
            }
        }
        if cfg.record_energy {
            // E = 1/2 <L u, u>_psi - <g, u>_psi = -h^n/2 sum (f + rho) . u
            let mut acc = 0.0;
            for c in 0..u.components().len() {
                let (fc, rc, uc) = (
                    f_projected.component(c),
                    rho.component(c),
                    u.component(c),
                );
                for lin in 0..uc.len() {
                    if space.act[c][lin] {
                        acc += (fc[lin] + rc[lin]) * uc[lin];
                    }
                }
            }
            energy_trace.push(-0.5 * space.hn * acc);
        }
        let rn = space.flat_residual_norm(&rho);
        rel = rn / gn;
        if rel <= cfg.rel_tolerance {
            converged = true;
            break;
        }
        if rel < best_rel * (1.0 - 1e-3) {
            best_rel = rel;
            stalled_for = 0;
        } else {
            stalled_for += 1;
            if stalled_for >= 300 {
                break;
            }
        }
        let mut z_new = space.precondition(&rho, cfg.preconditioner);
        space.project(&mut z_new, members);
        let rz_new = space.dot(&rho, &z_new);
        let beta = rz_new / rz;
        rz = rz_new;
        // p = z + beta p
        for c in 0..p.components().len() {
            let zc = z_new.component(c);
            let pc = p.component_mut(c);
            for lin in 0..pc.len() {
                pc[lin] = zc[lin] + beta * pc[lin];
            }
        }
        z = z_new;
        let _ = &z;
    }
    space.project(&mut u, members);
    CgOutcome {
        u,
        iterations: it,
        rel_residual: rel,
        converged,
        energy_trace,
    }
}

/// Applies the normal operator L = psi^-2 P psi^2 phi^2 P* as the
/// psi-adjoint composition; the division is taken only where psi^2 is a
/// positive normal number (elsewhere the output is zero by the freeze
/// convention).
pub fn apply_normal_operator(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
    u: &TensorField,
) -> Result<TensorField> {
    if u.bundle() != op.potential_bundle() {
        return Err(Error::BundleMismatch {
            expected: op.potential_bundle(),
            got: u.bundle(),
        });
    }
    let w8 = domain.weights(wc);
    let mut w = apply_adjoint(op, u)?;
    for comp in w.components_mut() {
        for (lin, v) in comp.iter_mut().enumerate() {
            *v *= w8.psi_sq[lin] * w8.phi_sq[lin];
        }
    }
    let mut out = apply_forward(op, &w)?;
    for comp in out.components_mut() {
        for (lin, v) in comp.iter_mut().enumerate() {
            if w8.psi_sq[lin] > 0.0 {
                *v /= w8.psi_sq[lin];
            } else {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// The projected weighted solve: removes the kernel component of the
/// psi^-2-weighted datum (recording the coefficients <f, v_i>_L2), runs
/// projected CG, and returns the minimizer u plus the physical field
/// U = psi^2 phi^2 P* u, which vanishes on frozen cells and outside the
/// domain by construction.
pub fn solve_projected(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
    f: &TensorField,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let basis = build_kernel_basis(op, domain, wc)?;
    solve_projected_with_basis(op, domain, wc, f, &basis, cfg)
}

pub fn solve_projected_with_basis(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
    f: &TensorField,
    basis: &KernelBasis,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let sol = solve_projected_lenient(op, domain, wc, f, basis, cfg)?;
    if !sol.report.converged {
        return Err(Error::NoConvergence(Box::new(sol.report)));
    }
    Ok(sol)
}

/// Like [`solve_projected_with_basis`] but returns the best-effort solution
/// when the tolerance is unreachable (a datum with kernel-flux residue
/// stalls at a floor; the report's `converged` flag records it).
pub fn solve_projected_lenient(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
    f: &TensorField,
    basis: &KernelBasis,
    cfg: &SolveConfig,
) -> Result<Solution> {
    if f.bundle() != op.potential_bundle() {
        return Err(Error::BundleMismatch {
            expected: op.potential_bundle(),
            got: f.bundle(),
        });
    }
    let space = SolveSpace::new(op, domain, wc);
    let hn = space.hn;
    let datum_floor = {
        let mut gated = f.clone();
        space.gate(&mut gated);
        space.flat_residual_norm(&gated)
    };
    // kernel coefficients <g, v_i>_psi = <f, v_i>_L2 and the flat projected
    // datum f - sum c_i psi^2 v_i
    let mut f_proj = f.clone();
    let mut coeffs = Vec::with_capacity(basis.len());
    for v in basis.members() {
        let mut c = 0.0;
        for k in 0..f.components().len() {
            let (fc, vc) = (f.component(k), v.component(k));
            for lin in 0..fc.len() {
                c += fc[lin] * vc[lin];
            }
        }
        c *= hn;
        coeffs.push(c);
        for k in 0..f_proj.components().len() {
            let vc = v.component(k);
            let dst = f_proj.component_mut(k);
            for lin in 0..dst.len() {
                dst[lin] -= c * space.psi_sq[lin] * vc[lin];
            }
        }
    }
    let out = cg_floored(&space, &f_proj, basis.members(), cfg, datum_floor);
    let field = space.field_of(&out.u);
    let fwd = apply_forward(op, &field)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..f.components().len() {
        let (fc, pc) = (f.component(k), fwd.component(k));
        for lin in 0..fc.len() {
            if domain.is_masked(lin) {
                let d = pc[lin] - fc[lin];
                num += d * d;
                den += fc[lin] * fc[lin];
            }
        }
    }
    let forward_residual = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    let decay_slope = decay_fit(&field, domain, wc).ok();
    let report = SolveReport {
        iterations: out.iterations,
        final_rel_residual: out.rel_residual,
        kernel_coefficients: coeffs,
        forward_residual,
        decay_slope,
        converged: out.converged,
        energy_trace: out.energy_trace,
    };
    Ok(Solution {
        potential: out.u,
        field,
        report,
    })
}

/// Compact-support pipeline: checks the compatibility integrals
/// <f, v_i>_L2 against tol = 1e-8 |f| |v_i|, then solves. The returned U is
/// exactly zero outside the domain and on frozen cells.
pub fn solve_compact_support(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
    f: &TensorField,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let basis = build_kernel_basis(op, domain, wc)?;
    let f_norm = l2_norm_masked(f, domain);
    for (i, v) in basis.members().iter().enumerate() {
        let c = crate::fields::l2_inner(f, v)?;
        let tol = 1e-8 * f_norm * l2_norm_masked(v, domain);
        if c.abs() > tol {
            return Err(Error::IncompatibleSource {
                index: i,
                value: c,
                tol,
            });
        }
    }
    solve_projected_with_basis(op, domain, wc, f, &basis, cfg)
}

/// Estimates the smallest Rayleigh quotient |phi P* u|^2_psi / |u|^2_psi
/// over fields supported in the boundary collar {x < collar_width} and
/// psi-orthogonal to the restricted kernel, by inverse-power iteration with
/// seeded random starts. The asymptotic-inequality constant is then
/// C ~ lambda^(-1/2).
pub fn estimate_api_constant(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
    collar_width: f64,
    sample_count: usize,
) -> Result<f64> {
    let space = SolveSpace::with_region(op, domain, wc, Some(collar_width));
    if space.unknowns == 0 {
        return Err(Error::EmptyCollar(collar_width));
    }
    // kernel restrictions to the collar, re-orthonormalized there
    let mut members: Vec<TensorField> = Vec::new();
    for g in crate::kernel::analytic_generators(op, domain) {
        let mut m = g;
        space.gate(&mut m);
        // Gram-Schmidt against the previously kept members
        for _ in 0..2 {
            let prev = std::mem::take(&mut members);
            for q in &prev {
                let mut c = 0.0;
                for k in 0..m.components().len() {
                    let (mc, qc) = (m.component(k), q.component(k));
                    for lin in 0..mc.len() {
                        c += mc[lin] * qc[lin] * space.psi_sq[lin];
                    }
                }
                c *= space.hn;
                m.axpy(-c, q);
            }
            members = prev;
        }
        let nrm = psi_norm(&space, &m);
        if nrm > 1e-14 {
            m.scale(1.0 / nrm);
            members.push(m);
        }
    }
    // modest inner accuracy: the Rayleigh quotient converges quadratically
    // in the iterate error, and the minimum is taken over many samples
    let cfg = SolveConfig {
        rel_tolerance: 1e-5,
        max_iterations: 1200,
        preconditioner: Preconditioner::Diagonal,
        record_energy: false,
    };
    let mut lambda_min = f64::INFINITY;
    for sample in 0..sample_count {
        // ungated random modes: the boundary collar is exactly where
        // interior-windowed fields vanish, so gate to the active set instead
        let mut x = crate::synth::random_smooth_field(
            domain.grid_arc(),
            op.potential_bundle(),
            0xA91 + sample as u64,
            0,
        );
        space.gate(&mut x);
        space.project(&mut x, &members);
        let nrm = psi_norm(&space, &x);
        if nrm == 0.0 {
            continue;
        }
        x.scale(1.0 / nrm);
        lambda_min = lambda_min.min(rayleigh(&space, &x));
        for _step in 0..3 {
            // inverse iteration: solve L y = x in the psi metric, i.e. flat
            // datum psi^2 x
            let mut rhs = x.clone();
            for c in 0..rhs.components().len() {
                let dst = rhs.component_mut(c);
                for lin in 0..dst.len() {
                    dst[lin] *= space.psi_sq[lin];
                }
            }
            let out = cg(&space, &rhs, &members, &cfg);
            let mut y = out.u;
            space.project(&mut y, &members);
            let ny = psi_norm(&space, &y);
            if ny == 0.0 {
                break;
            }
            y.scale(1.0 / ny);
            lambda_min = lambda_min.min(rayleigh(&space, &y));
            x = y;
        }
    }
    if !lambda_min.is_finite() {
        return Err(Error::EmptyCollar(collar_width));
    }
    Ok(lambda_min)
}

fn psi_norm(space: &SolveSpace, v: &TensorField) -> f64 {
    let mut acc = 0.0;
    for c in 0..v.components().len() {
        let vc = v.component(c);
        for lin in 0..vc.len() {
            acc += vc[lin] * vc[lin] * space.psi_sq[lin];
        }
    }
    (acc * space.hn).sqrt()
}

fn rayleigh(space: &SolveSpace, v: &TensorField) -> f64 {
    // |phi P* v|^2_psi via the cut weight = h^n sum w_cut (P* v)^2
    let w = apply_adjoint(space.op, v).expect("bundle fixed");
    let mut num = 0.0;
    let bundle = w.bundle();
    for lin in 0..space.w_cut.len() {
        if space.w_cut[lin] == 0.0 {
            continue;
        }
        num += space.w_cut[lin]
            * crate::fields::pointwise_inner_comps(bundle, w.components(), w.components(), lin);
    }
    num *= space.hn;
    let den = psi_norm(space, v).powi(2);
    num / den
}

/// Fits the decay rate of max |U| per boundary-distance level against the
/// weight envelope x^(2(a-n+m)) e^(-s_hat/x): regresses
/// log M - 2(a-n+m) log x on -1/x over levels with M > 1e-250 and returns
/// the slope s_hat. The abscissa uses the x of the arg-max cell per level.
pub fn decay_fit(u: &TensorField, domain: &Domain, wc: &WeightConfig) -> Result<f64> {
    let grid = domain.grid();
    let h = grid.h_max();
    let n = grid.dim() as i32;
    let power = 2 * (wc.a as i32 - n + wc.m as i32);
    let mut xmax = 0.0f64;
    for lin in 0..grid.total_cells() {
        if domain.is_masked(lin) {
            xmax = xmax.max(domain.x()[lin]);
        }
    }
    let nlev = (xmax / h).floor() as usize + 1;
    let mut level_max = vec![0.0f64; nlev];
    let mut level_x = vec![0.0f64; nlev];
    for lin in 0..grid.total_cells() {
        if !domain.is_masked(lin) {
            continue;
        }
        let x = domain.x()[lin];
        let k = ((x / h).floor() as usize).min(nlev - 1);
        let mag = u.pointwise_norm(lin);
        if mag > level_max[k] {
            level_max[k] = mag;
            level_x[k] = x;
        }
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for k in 0..nlev {
        if level_max[k] > 1e-250 {
            let x = level_x[k];
            ys.push(level_max[k].ln() - power as f64 * x.ln());
            ts.push(-1.0 / x);
        }
    }
    if ts.len() < 4 {
        return Err(Error::InsufficientDecayData(ts.len()));
    }
    // simple least squares for y = c + s t
    let m = ts.len() as f64;
    let tbar = ts.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in ts.iter().zip(ys.iter()) {
        num += (t - tbar) * (y - ybar);
        den += (t - tbar) * (t - tbar);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, Shape};
    use crate::fields::{weighted_inner, weighted_norm};
    use crate::synth::{bump_source_1d, random_smooth_masked};

    fn interval_512() -> Domain {
        // 576 cells over a padded box so the unit interval spans 512 cells
        let g = Grid::new(1, &[(-0.0625, 1.0625)], &[576]).unwrap();
        build_domain(
            Shape::Ball {
                center: [0.5, 0.0, 0.0],
                radius: 0.5,
            },
            g,
        )
        .unwrap()
    }

    #[test]
    fn zero_source_returns_zero_in_zero_iterations() {
        let d = interval_512();
        let wc = WeightConfig::default_for_dim(1);
        let op = OperatorSpec::new(OperatorKind::Grad, 1).unwrap();
        let f = TensorField::zeros(d.grid_arc(), op.potential_bundle());
        let sol = solve_projected(op, &d, &wc, &f, &SolveConfig::default()).unwrap();
        assert_eq!(sol.report.iterations, 0);
        assert_eq!(weighted_norm(&sol.field, &d, &wc).unwrap(), 0.0);
    }

    #[test]
    fn weighted_kernel_datum_projects_to_zero_solve() {
        // datum whose psi^-2-weighted form is the first basis member:
        // f = psi^2 v_0 gives coefficients (1, 0, ...) and a zero solution
        let d = interval_512();
        let wc = WeightConfig::default_for_dim(1);
        let op = OperatorSpec::new(OperatorKind::Grad, 1).unwrap();
        let basis = build_kernel_basis(op, &d, &wc).unwrap();
        let w8 = d.weights(&wc);
        let mut f = basis.members()[0].clone();
        for c in 0..f.components().len() {
            let dst = f.component_mut(c);
            for lin in 0..dst.len() {
                dst[lin] *= w8.psi_sq[lin];
            }
        }
        let sol = solve_projected(op, &d, &wc, &f, &SolveConfig::default()).unwrap();
        assert!((sol.report.kernel_coefficients[0] - 1.0).abs() < 1e-10);
        assert_eq!(sol.report.iterations, 0);
        assert!(weighted_norm(&sol.field, &d, &wc).unwrap() <= 1e-12);
    }

    #[test]
    fn one_dimensional_bump_oracle() {
        let d = interval_512();
        let wc = WeightConfig::default_for_dim(1);
        let op = OperatorSpec::new(OperatorKind::Grad, 1).unwrap();
        let (f, u_exact) = bump_source_1d(d.grid_arc(), 0.5, 0.25);
        let sol = solve_compact_support(op, &d, &wc, &f, &SolveConfig::default()).unwrap();
        let mut diff = sol.field.clone();
        diff.axpy(-1.0, &u_exact);
        let err = l2_norm_masked(&diff, &d) / l2_norm_masked(&u_exact, &d);
        assert!(err < 1.2e-4, "rel L2 error {err}");
        assert!(sol.report.final_rel_residual <= 1e-8);
    }

    #[test]
    fn incompatible_source_rejected() {
        let d = interval_512();
        let wc = WeightConfig::default_for_dim(1);
        let op = OperatorSpec::new(OperatorKind::Grad, 1).unwrap();
        // a one-signed bump has nonzero mean against the constant kernel
        let f = TensorField::masked_from_fn(&d, op.potential_bundle(), |_, p| {
            crate::profile::bump((p[0] - 0.5) / 0.2)
        });
        assert!(matches!(
            solve_compact_support(op, &d, &wc, &f, &SolveConfig::default()),
            Err(Error::IncompatibleSource { .. })
        ));
    }

    #[test]
    fn normal_operator_is_psi_self_adjoint_and_positive() {
        let g = Grid::new(2, &[(-1.0, 1.0); 2], &[48; 2]).unwrap();
        let d = build_domain(
            Shape::Ball {
                center: [0.0; 3],
                radius: 0.8,
            },
            g,
        )
        .unwrap();
        let wc = WeightConfig::default_for_dim(2);
        let op = OperatorSpec::new(OperatorKind::Grad, 2).unwrap();
        let u = random_smooth_masked(&d, op.potential_bundle(), 3);
        let w = random_smooth_masked(&d, op.potential_bundle(), 4);
        let lu = apply_normal_operator(op, &d, &wc, &u).unwrap();
        let lw = apply_normal_operator(op, &d, &wc, &w).unwrap();
        let a = weighted_inner(&lu, &w, &d, &wc, 0).unwrap();
        let b = weighted_inner(&u, &lw, &d, &wc, 0).unwrap();
        let nu = weighted_norm(&u, &d, &wc).unwrap();
        let nw = weighted_norm(&w, &d, &wc).unwrap();
        assert!((a - b).abs() <= 1e-12 * nu * nw, "{a} vs {b}");
        // <L u, u>_psi = |phi P* u|^2_psi >= 0
        let quad = weighted_inner(&lu, &u, &d, &wc, 0).unwrap();
        let du = apply_adjoint(op, &u).unwrap();
        let direct = weighted_inner(&du, &du, &d, &wc, 1).unwrap();
        assert!(quad >= 0.0);
        assert!((quad - direct).abs() <= 1e-12 * direct.abs().max(1e-300));
    }

    #[test]
    fn cg_energy_is_monotone() {
        let d = interval_512();
        let wc = WeightConfig::default_for_dim(1);
        let op = OperatorSpec::new(OperatorKind::Grad, 1).unwrap();
        let (f, _) = bump_source_1d(d.grid_arc(), 0.5, 0.25);
        let cfg = SolveConfig {
            record_energy: true,
            ..SolveConfig::default()
        };
        let sol = solve_compact_support(op, &d, &wc, &f, &cfg).unwrap();
        let tr = &sol.report.energy_trace;
        assert!(tr.len() > 2);
        let scale = tr.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        for w in tr.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-10 * scale,
                "energy increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn solution_stays_kernel_orthogonal_and_supported() {
        let d = interval_512();
        let wc = WeightConfig::default_for_dim(1);
        let op = OperatorSpec::new(OperatorKind::Grad, 1).unwrap();
        let basis = build_kernel_basis(op, &d, &wc).unwrap();
        let (f, _) = bump_source_1d(d.grid_arc(), 0.5, 0.25);
        let sol = solve_compact_support(op, &d, &wc, &f, &SolveConfig::default()).unwrap();
        let un = weighted_norm(&sol.potential, &d, &wc).unwrap();
        for v in basis.members() {
            let c = weighted_inner(&sol.potential, v, &d, &wc, 0).unwrap();
            assert!(c.abs() <= 1e-8 * un);
        }
        for lin in 0..d.grid().total_cells() {
            if !d.is_masked(lin) {
                assert_eq!(sol.field.component(0)[lin], 0.0);
            }
        }
    }

    #[test]
    fn decay_fit_recovers_synthetic_rate() {
        let g = Grid::new(2, &[(-1.0, 1.0); 2], &[192; 2]).unwrap();
        let d = build_domain(
            Shape::Ball {
                center: [0.0; 3],
                radius: 0.85,
            },
            g,
        )
        .unwrap();
        let wc = WeightConfig::default_for_dim(2);
        let power = 2 * (wc.a as i32 - 2 + 1);
        let u = TensorField::masked_from_fn(
            &d,
            crate::fields::BundleType::new(crate::fields::BundleKind::Scalar, 2),
            |_, p| {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                let x: f64 = 0.85 - r;
                if x <= 0.0 {
                    0.0
                } else {
                    x.powi(power) * (-2.0 / x).exp()
                }
            },
        );
        let s = decay_fit(&u, &d, &wc).unwrap();
        assert!((s - 2.0).abs() < 0.1, "fitted {s}");
        // scaling U leaves the slope unchanged
        let mut u2 = u.clone();
        u2.scale(10.0);
        let s2 = decay_fit(&u2, &d, &wc).unwrap();
        assert!((s - s2).abs() < 1e-9);
    }
}
