//! Analytic kernel bases of P* on flat domains, weighted orthonormalization,
//! projection, a numeric kernel-dimension cross-check, and the per-member
//! flux functionals.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::{Domain, WeightConfig, Weights};
use crate::error::{Error, Result};
use crate::fields::{
    weighted_inner_pre, BundleType, Indicator, OperatorKind, OperatorSpec, TensorField,
};
use crate::ops::apply_adjoint;
use crate::synth::random_smooth_masked;

/// psi-orthonormal basis of ker P* on the domain.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    op: OperatorSpec,
    members: Vec<TensorField>,
    gram_log: DMatrix<f64>,
}

impl KernelBasis {
    pub fn op(&self) -> OperatorSpec {
        self.op
    }

    pub fn members(&self) -> &[TensorField] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Gram matrix of the raw analytic generators in L^2_psi, kept for
    /// diagnostics.
    pub fn gram_log(&self) -> &DMatrix<f64> {
        &self.gram_log
    }
}

/// Flux functionals p_i of a field against each basis member through a
/// measuring shell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FluxReport {
    pub coefficients: Vec<f64>,
    pub surface_label: String,
}

/// Evaluates the flat-space analytic generators of ker P* on the masked
/// cells, in a fixed order: constants (grad); translations then rotations
/// (Killing); translations, rotations, dilation, special conformal
/// (conformal Killing).
pub fn analytic_generators(op: OperatorSpec, domain: &Domain) -> Vec<TensorField> {
    let n = op.n;
    let bundle = op.potential_bundle();
    let mut gens: Vec<TensorField> = Vec::new();
    let constant = |value: f64| move |_: usize, _: &[f64; 3]| value;
    match op.kind {
        OperatorKind::Grad => {
            gens.push(TensorField::masked_from_fn(domain, bundle, constant(1.0)));
        }
        OperatorKind::Killing | OperatorKind::ConfKilling => {
            // translations: omega = dx^a
            for a in 0..n {
                gens.push(TensorField::masked_from_fn(domain, bundle, move |c, _| {
                    if c == a {
                        1.0
                    } else {
                        0.0
                    }
                }));
            }
            // rotations: omega = x_a dx^b - x_b dx^a
            for a in 0..n {
                for b in (a + 1)..n {
                    gens.push(TensorField::masked_from_fn(domain, bundle, move |c, p| {
                        if c == b {
                            p[a]
                        } else if c == a {
                            -p[b]
                        } else {
                            0.0
                        }
                    }));
                }
            }
            if op.kind == OperatorKind::ConfKilling {
                // dilation: omega = sum x_a dx^a
                gens.push(TensorField::masked_from_fn(domain, bundle, |c, p| p[c]));
                // special conformal: omega_j = |x|^2 delta_jk - 2 x_k x_j
                for k in 0..n {
                    gens.push(TensorField::masked_from_fn(domain, bundle, move |c, p| {
                        let r2: f64 = p[..n].iter().map(|v| v * v).sum();
                        let base = if c == k { r2 } else { 0.0 };
                        base - 2.0 * p[k] * p[c]
                    }));
                }
            }
        }
    }
    debug_assert_eq!(gens.len(), op.kernel_dim());
    gens
}

/// Builds the psi-orthonormal kernel basis by modified Gram-Schmidt in
/// L^2_psi over the analytic generators.
pub fn build_kernel_basis(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
) -> Result<KernelBasis> {
    if !domain.is_connected() {
        return Err(Error::DisconnectedDomain);
    }
    wc.validate()?;
    let w8 = domain.weights(wc);
    let mut members = analytic_generators(op, domain);
    let k = members.len();
    let mut gram = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let g = weighted_inner_pre(&members[i], &members[j], domain, &w8, 0)?;
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let eig = SymmetricEigen::new(gram.clone());
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(max_ev > 0.0) || min_ev < 1e-10 * max_ev {
        return Err(Error::DegenerateBasis(min_ev / max_ev));
    }
    // modified Gram-Schmidt with one re-orthogonalization pass
    for i in 0..k {
        for _pass in 0..2 {
            for j in 0..i {
                let (head, tail) = members.split_at_mut(i);
                let c = weighted_inner_pre(&tail[0], &head[j], domain, &w8, 0)?;
                tail[0].axpy(-c, &head[j]);
            }
        }
        let nrm = weighted_inner_pre(&members[i], &members[i], domain, &w8, 0)?.sqrt();
        members[i].scale(1.0 / nrm);
    }
    Ok(KernelBasis {
        op,
        members,
        gram_log: gram,
    })
}

/// Removes the L^2_psi projection onto the kernel: returns
/// (f - sum c_i v_i, [c_i]) with c_i = <f, v_i>_psi.
pub fn project_off(
    f: &TensorField,
    basis: &KernelBasis,
    domain: &Domain,
    wc: &WeightConfig,
) -> Result<(TensorField, Vec<f64>)> {
    let w8 = domain.weights(wc);
    project_off_pre(f, basis, domain, &w8)
}

pub fn project_off_pre(
    f: &TensorField,
    basis: &KernelBasis,
    domain: &Domain,
    w8: &Weights,
) -> Result<(TensorField, Vec<f64>)> {
    let mut out = f.clone();
    let mut coeffs = Vec::with_capacity(basis.len());
    for v in basis.members() {
        let c = weighted_inner_pre(&out, v, domain, w8, 0)?;
        out.axpy(-c, v);
        coeffs.push(c);
    }
    Ok((out, coeffs))
}

/// Counts near-kernel directions of phi P* by assembling Rayleigh quotients
/// |phi P* v|^2_psi / |v|^2_psi on the span of the analytic generators plus
/// seeded random smooth fields, and counting generalized eigenvalues below
/// tau(h) = 10 h^2.
pub fn numeric_kernel_dim(
    op: OperatorSpec,
    domain: &Domain,
    wc: &WeightConfig,
    candidate_count: usize,
) -> Result<usize> {
    let dim = op.kernel_dim();
    let count = candidate_count.max(dim + 5);
    let w8 = domain.weights(wc);
    let mut cands = analytic_generators(op, domain);
    for extra in 0..(count - dim) {
        cands.push(random_smooth_masked(
            domain,
            op.potential_bundle(),
            0x6b64 + extra as u64,
        ));
    }
    // A_ij = <phi P* v_i, phi P* v_j>_psi, B_ij = <v_i, v_j>_psi
    let adjoints: Vec<TensorField> = cands
        .iter()
        .map(|v| apply_adjoint(op, v))
        .collect::<Result<_>>()?;
    let k = cands.len();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let aij = weighted_inner_pre(&adjoints[i], &adjoints[j], domain, &w8, 1)?;
            let bij = weighted_inner_pre(&cands[i], &cands[j], domain, &w8, 0)?;
            a[(i, j)] = aij;
            a[(j, i)] = aij;
            b[(i, j)] = bij;
            b[(j, i)] = bij;
        }
    }
    // whiten B, dropping numerically null candidate directions
    let eig_b = SymmetricEigen::new(b);
    let bmax = eig_b.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut cols = Vec::new();
    for (i, &ev) in eig_b.eigenvalues.iter().enumerate() {
        if ev > 1e-12 * bmax {
            cols.push((i, ev));
        }
    }
    let m = cols.len();
    let mut q = DMatrix::zeros(k, m);
    for (jj, &(i, ev)) in cols.iter().enumerate() {
        let scale = 1.0 / ev.sqrt();
        for r in 0..k {
            q[(r, jj)] = eig_b.eigenvectors[(r, i)] * scale;
        }
    }
    let c = q.transpose() * a * q;
    let eig_c = SymmetricEigen::new(c);
    let tau = 10.0 * domain.grid().h_max().powi(2);
    Ok(eig_c.eigenvalues.iter().filter(|&&l| l < tau).count())
}

/// Pairs a field with every basis member through the measuring shell.
pub fn flux_functionals(
    t: &TensorField,
    basis: &KernelBasis,
    op: OperatorSpec,
    indicator: &Indicator,
    label: &str,
) -> Result<FluxReport> {
    let mut coefficients = Vec::with_capacity(basis.len());
    for v in basis.members() {
        coefficients.push(crate::fields::surface_flux(t, v, op, indicator)?);
    }
    Ok(FluxReport {
        coefficients,
        surface_label: label.to_string(),
    })
}

/// Convenience: bundle of the basis members.
pub fn basis_bundle(basis: &KernelBasis) -> BundleType {
    basis.op.potential_bundle()
}
