//! Gluing two kernel elements across an annular region: cutoff
//! interpolation, flux bookkeeping, the compactly supported correction, and
//! flux matching against a parameterized family of outer solutions.

use nalgebra::{DMatrix, DVector};

use crate::domain::{CutoffField, Domain, WeightConfig};
use crate::error::{Error, Result};
use crate::fields::{Indicator, OperatorSpec, TensorField};
use crate::kernel::{build_kernel_basis, flux_functionals, FluxReport, KernelBasis};
use crate::ops::{apply_forward, cutoff_commutator_source};
use crate::solver::{solve_projected_lenient, SolveConfig, SolveReport};

/// Inputs of a gluing run: fields V (inner) and W (outer) defined on their
/// portions of the grid, the gluing region Omega, the cutoff, and the kernel
/// basis on Omega.
#[derive(Clone)]
pub struct GluingProblem {
    pub op: OperatorSpec,
    pub v: TensorField,
    pub w: TensorField,
    pub domain: Domain,
    pub chi: CutoffField,
    pub basis: KernelBasis,
}

impl GluingProblem {
    pub fn new(
        op: OperatorSpec,
        v: TensorField,
        w: TensorField,
        domain: Domain,
        chi: CutoffField,
        wc: &WeightConfig,
    ) -> Result<GluingProblem> {
        if !v.same_layout(&w) || *v.grid() != *domain.grid() {
            return Err(Error::DomainMismatch);
        }
        if v.bundle() != op.field_bundle() {
            return Err(Error::BundleMismatch {
                expected: op.field_bundle(),
                got: v.bundle(),
            });
        }
        let basis = build_kernel_basis(op, &domain, wc)?;
        Ok(GluingProblem {
            op,
            v,
            w,
            domain,
            chi,
            basis,
        })
    }
}

/// Flux and solve diagnostics of a gluing run.
#[derive(Debug, Clone)]
pub struct GluingReport {
    pub flux_v: FluxReport,
    pub flux_w: FluxReport,
    /// flux_w - flux_v per kernel member; its vanishing is the flux
    /// condition for an exact gluing.
    pub flux_mismatch: Vec<f64>,
    pub solve_report: SolveReport,
    /// |P(T + U)|_L2 over the gluing region.
    pub glued_divergence_residual: f64,
}

/// T = chi V + (1 - chi) W, bitwise equal to V where chi = 1 and to W where
/// chi = 0.
pub fn interpolate(problem: &GluingProblem) -> Result<TensorField> {
    let grid = problem.v.grid();
    // the transition must lie inside the gluing region: V and W are only
    // guaranteed meaningful there
    for lin in 0..grid.total_cells() {
        let c = problem.chi.value(lin);
        if c > 0.0 && c < 1.0 && !problem.domain.is_masked(lin) {
            return Err(Error::MissingData(format!(
                "cutoff transition leaves the gluing region at cell {lin}"
            )));
        }
    }
    let mut t = TensorField::zeros(problem.v.grid_arc(), problem.v.bundle());
    for c in 0..t.bundle().component_count() {
        let (vc, wc_) = (problem.v.component(c), problem.w.component(c));
        let dst = t.component_mut(c);
        for lin in 0..dst.len() {
            let chi = problem.chi.value(lin);
            dst[lin] = if chi == 1.0 {
                vc[lin]
            } else if chi == 0.0 {
                wc_[lin]
            } else {
                chi * vc[lin] + (1.0 - chi) * wc_[lin]
            };
        }
    }
    Ok(t)
}

/// Glues V and W: measures both fluxes through the transition shell, solves
/// for the compactly supported correction U of the interpolation divergence,
/// and returns T + U with the full report. A flux mismatch is reported, not
/// fatal: the returned field then carries the corresponding weighted kernel
/// residue in its divergence.
pub fn glue(
    problem: &GluingProblem,
    wc: &WeightConfig,
    cfg: &SolveConfig,
) -> Result<(TensorField, GluingReport)> {
    let t = interpolate(problem)?;
    let indicator = Indicator::from_cutoff(&problem.chi);
    let (lo, hi) = problem.chi.transition();
    let label = format!("shell r in [{lo}, {hi}]");
    let flux_v = flux_functionals(&problem.v, &problem.basis, problem.op, &indicator, &label)?;
    let flux_w = flux_functionals(&problem.w, &problem.basis, problem.op, &indicator, &label)?;
    let flux_mismatch: Vec<f64> = flux_w
        .coefficients
        .iter()
        .zip(flux_v.coefficients.iter())
        .map(|(w, v)| w - v)
        .collect();
    // The interpolation divergence P T = [P, chi](V - W) is an order-zero
    // bilinear in grad chi; evaluating it with the analytic cutoff gradient
    // keeps the source supported exactly in the transition shell, where the
    // weighted datum is integrable.
    let mut delta = problem.v.clone();
    delta.axpy(-1.0, &problem.w);
    let f = cutoff_commutator_source(problem.op, &problem.chi, &delta)?;
    let sol = solve_projected_lenient(problem.op, &problem.domain, wc, &f, &problem.basis, cfg)?;
    let mut glued = t;
    glued.axpy(1.0, &sol.field);
    let div = apply_forward(problem.op, &glued)?;
    let glued_divergence_residual = crate::fields::l2_norm_masked(&div, &problem.domain);
    Ok((
        glued,
        GluingReport {
            flux_v,
            flux_w,
            flux_mismatch,
            solve_report: sol.report,
            glued_divergence_residual,
        },
    ))
}

/// Truncation: glue with W = 0 over a default transition centered in the
/// gluing region (at least a third of it, widened to cover the 4-cell flux
/// shell on coarse grids). Succeeds with small kernel coefficients exactly
/// when all fluxes of V vanish.
pub fn truncate(
    op: OperatorSpec,
    v: &TensorField,
    domain: &Domain,
    wc: &WeightConfig,
    cfg: &SolveConfig,
) -> Result<(TensorField, GluingReport)> {
    let (blo, bhi) = domain
        .gluing_bounds()
        .ok_or_else(|| Error::InvalidCollars("truncation needs a two-boundary domain".into()))?;
    let span = bhi - blo;
    let width = (span / 3.0)
        .max(4.5 * domain.grid().h_max())
        .min(0.8 * span);
    let mid = 0.5 * (blo + bhi);
    let chi = crate::domain::build_cutoff(domain, (mid - 0.5 * width, mid + 0.5 * width))?;
    let w = TensorField::zeros(v.grid_arc(), v.bundle());
    let problem = GluingProblem::new(op, v.clone(), w, domain.clone(), chi, wc)?;
    glue(&problem, wc, cfg)
}

/// Result of matching the outer family against the inner fluxes.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FluxMatchOutcome {
    pub parameters: Vec<f64>,
    /// Euclidean residual of the least-squares flux system.
    pub residual: f64,
}

/// Chooses coefficients c so that W = sum c_l W_l reproduces the fluxes of
/// V against every kernel member: solves the least-squares system
/// M c = flux(V) with M[i][l] = flux(W_l, v_i). Returns the coefficients and
/// the updated problem with the matched W.
pub fn flux_match(
    problem: &GluingProblem,
    family: &[TensorField],
) -> Result<(FluxMatchOutcome, GluingProblem)> {
    let k = problem.basis.len();
    if family.len() < k {
        return Err(Error::FamilyDegenerate(f64::INFINITY));
    }
    let indicator = Indicator::from_cutoff(&problem.chi);
    let (lo, hi) = problem.chi.transition();
    let label = format!("shell r in [{lo}, {hi}]");
    let flux_v = flux_functionals(&problem.v, &problem.basis, problem.op, &indicator, &label)?;
    let mut m = DMatrix::zeros(k, family.len());
    for (l, wl) in family.iter().enumerate() {
        let fw = flux_functionals(wl, &problem.basis, problem.op, &indicator, &label)?;
        for i in 0..k {
            m[(i, l)] = fw.coefficients[i];
        }
    }
    let b = DVector::from_vec(flux_v.coefficients.clone());
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    // the system must determine all k flux targets
    let srank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > smax * 1e-12)
        .count();
    if srank < k {
        let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        return Err(Error::FamilyDegenerate(if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        }));
    }
    let cond = smax
        / svd
            .singular_values
            .iter()
            .cloned()
            .filter(|&s| s > 0.0)
            .fold(f64::MAX, f64::min);
    if cond > 1e12 {
        return Err(Error::FamilyDegenerate(cond));
    }
    let c = svd
        .solve(&b, smax * 1e-14)
        .map_err(|_| Error::FamilyDegenerate(cond))?;
    let residual = (&m * &c - &b).norm();
    let mut w_new = TensorField::zeros(problem.v.grid_arc(), problem.v.bundle());
    for (l, wl) in family.iter().enumerate() {
        w_new.axpy(c[l], wl);
    }
    let mut matched = problem.clone();
    matched.w = w_new;
    Ok((
        FluxMatchOutcome {
            parameters: c.iter().cloned().collect(),
            residual,
        },
        matched,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_cutoff, build_domain, Shape};
    use crate::fields::OperatorKind;
    use crate::grid::Grid;
    use crate::synth::{coulomb_field, smoothed_coulomb_field};

    fn setup(cells: usize) -> (OperatorSpec, Domain, CutoffField, WeightConfig) {
        let g = Grid::new(3, &[(-2.5, 2.5); 3], &[cells; 3]).unwrap();
        let d = build_domain(
            Shape::Annulus {
                center: [0.0; 3],
                r_in: 1.0,
                r_out: 2.0,
            },
            g,
        )
        .unwrap();
        let chi = build_cutoff(&d, (1.2, 1.8)).unwrap();
        let wc = WeightConfig::default_for_dim(3);
        let op = OperatorSpec::new(OperatorKind::Grad, 3).unwrap();
        (op, d, chi, wc)
    }

    #[test]
    fn interpolation_is_bitwise_outside_transition() {
        let (op, d, chi, wc) = setup(24);
        let v = smoothed_coulomb_field(d.grid_arc(), [0.1, 0.0, 0.0], 1.0, 0.4);
        let w = coulomb_field(d.grid_arc(), [0.0; 3], 1.0);
        let p = GluingProblem::new(op, v.clone(), w.clone(), d.clone(), chi.clone(), &wc).unwrap();
        let t = interpolate(&p).unwrap();
        for (lin, idx) in d.grid().iter_cells() {
            let q = d.grid().center(idx);
            let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            for c in 0..3 {
                if r <= 1.2 {
                    assert_eq!(t.component(c)[lin], v.component(c)[lin]);
                } else if r >= 1.8 {
                    assert_eq!(t.component(c)[lin], w.component(c)[lin]);
                }
            }
        }
    }

    #[test]
    fn interpolation_of_equal_fields_is_identity() {
        let (op, d, chi, wc) = setup(40);
        let v = coulomb_field(d.grid_arc(), [0.0; 3], 1.0);
        let p = GluingProblem::new(op, v.clone(), v.clone(), d, chi.clone(), &wc).unwrap();
        let t = interpolate(&p).unwrap();
        for c in 0..3 {
            for lin in 0..t.component(c).len() {
                let chi_v = chi.value(lin);
                if chi_v == 0.0 || chi_v == 1.0 {
                    assert_eq!(t.component(c)[lin], v.component(c)[lin]);
                } else {
                    // chi v + (1-chi) v agrees with v up to one rounding
                    let rel = (t.component(c)[lin] - v.component(c)[lin]).abs();
                    assert!(rel <= 1e-15 * v.component(c)[lin].abs());
                }
            }
        }
    }

    #[test]
    fn self_gluing_needs_no_correction() {
        let (op, d, chi, wc) = setup(48);
        let v = coulomb_field(d.grid_arc(), [0.0; 3], 1.0);
        let p = GluingProblem::new(op, v.clone(), v.clone(), d.clone(), chi, &wc).unwrap();
        let cfg = SolveConfig::default();
        let (glued, rep) = glue(&p, &wc, &cfg).unwrap();
        // delta = 0 makes the source identically zero
        assert_eq!(rep.solve_report.iterations, 0);
        for c in 0..3 {
            for lin in 0..glued.component(c).len() {
                let chi_v = p.chi.value(lin);
                if chi_v == 0.0 || chi_v == 1.0 {
                    assert_eq!(glued.component(c)[lin], v.component(c)[lin]);
                } else {
                    let diff = (glued.component(c)[lin] - v.component(c)[lin]).abs();
                    assert!(diff <= 1e-15 * v.component(c)[lin].abs());
                }
            }
        }
        for m in rep.flux_mismatch {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn flux_match_single_charge_family() {
        let (op, d, chi, wc) = setup(40);
        // inner charge 0.7, family = { E_1 }: expect coefficient 0.7
        let v = smoothed_coulomb_field(d.grid_arc(), [0.0; 3], 0.7, 0.4);
        let w = TensorField::zeros(d.grid_arc(), op.field_bundle());
        let p = GluingProblem::new(op, v, w, d.clone(), chi, &wc).unwrap();
        let family = vec![coulomb_field(d.grid_arc(), [0.0; 3], 1.0)];
        let (outcome, matched) = flux_match(&p, &family).unwrap();
        assert!(
            (outcome.parameters[0] - 0.7).abs() < 0.014,
            "matched {:?}",
            outcome.parameters
        );
        assert!(outcome.residual.abs() < 1e-10);
        // the matched problem carries W = 0.7 E_1
        let e1 = &family[0];
        for lin in (0..matched.w.component(0).len()).step_by(97) {
            assert!(
                (matched.w.component(0)[lin] - 0.7 * e1.component(0)[lin]).abs() < 1e-12
            );
        }
    }

    #[test]
    fn flux_match_underdetermined_family_is_consistent() {
        let (op, d, chi, wc) = setup(40);
        let v = smoothed_coulomb_field(d.grid_arc(), [0.0; 3], 0.5, 0.4);
        let w = TensorField::zeros(d.grid_arc(), op.field_bundle());
        let p = GluingProblem::new(op, v, w, d.clone(), chi, &wc).unwrap();
        // two-member family of proportional fields is rank one but still
        // consistent for a one-dimensional kernel
        let family = vec![
            coulomb_field(d.grid_arc(), [0.0; 3], 1.0),
            coulomb_field(d.grid_arc(), [0.0; 3], 2.0),
        ];
        let (outcome, matched) = flux_match(&p, &family).unwrap();
        assert!(outcome.residual.abs() < 1e-10);
        // matched W must carry total charge 0.5: its flux equals V's
        let ind = Indicator::from_cutoff(&matched.chi);
        let fv = flux_functionals(&matched.v, &matched.basis, op, &ind, "s").unwrap();
        let fw = flux_functionals(&matched.w, &matched.basis, op, &ind, "s").unwrap();
        assert!((fv.coefficients[0] - fw.coefficients[0]).abs() < 1e-9);
    }

    #[test]
    fn degenerate_family_rejected() {
        let (op, d, chi, wc) = setup(40);
        let v = coulomb_field(d.grid_arc(), [0.0; 3], 1.0);
        let w = TensorField::zeros(d.grid_arc(), op.field_bundle());
        let p = GluingProblem::new(op, v, w, d.clone(), chi, &wc).unwrap();
        // family of zero fields has zero flux rank
        let family = vec![TensorField::zeros(d.grid_arc(), op.field_bundle())];
        assert!(matches!(
            flux_match(&p, &family),
            Err(Error::FamilyDegenerate(_))
        ));
    }
}
