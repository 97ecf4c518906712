//! Computational domains: masked grids with an analytic boundary-distance
//! function, the degenerate boundary weights, and smooth cutoff functions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::profile::{smoothstep5, smoothstep5_deriv};

/// Analytic shapes with exact Euclidean distance to the boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ball {
        center: [f64; 3],
        radius: f64,
    },
    Annulus {
        center: [f64; 3],
        r_in: f64,
        r_out: f64,
    },
    /// A ball with a smaller (strictly interior) ball removed.
    BallDifference {
        center: [f64; 3],
        radius: f64,
        hole_center: [f64; 3],
        hole_radius: f64,
    },
}

fn dist(p: &[f64; 3], c: &[f64; 3], n: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..n {
        let d = p[a] - c[a];
        s += d * d;
    }
    s.sqrt()
}

impl Shape {
    /// Distance to the boundary, positive inside the shape.
    pub fn inner_distance(&self, p: &[f64; 3], n: usize) -> f64 {
        match self {
            Shape::Ball { center, radius } => radius - dist(p, center, n),
            Shape::Annulus { center, r_in, r_out } => {
                let r = dist(p, center, n);
                (r - r_in).min(r_out - r)
            }
            Shape::BallDifference {
                center,
                radius,
                hole_center,
                hole_radius,
            } => {
                let outer = radius - dist(p, center, n);
                let hole = dist(p, hole_center, n) - hole_radius;
                outer.min(hole)
            }
        }
    }

    /// Axis-aligned bounding interval of the closed shape along `axis`.
    fn bounds(&self, axis: usize) -> (f64, f64) {
        match self {
            Shape::Ball { center, radius } | Shape::BallDifference { center, radius, .. } => {
                (center[axis] - radius, center[axis] + radius)
            }
            Shape::Annulus { center, r_out, .. } => (center[axis] - r_out, center[axis] + r_out),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Shape::Ball { radius, .. } => {
                if *radius <= 0.0 {
                    return Err(Error::ShapeTooLarge);
                }
            }
            Shape::Annulus { r_in, r_out, .. } => {
                if !(0.0 < *r_in && *r_in < *r_out) {
                    return Err(Error::ShapeTooLarge);
                }
            }
            Shape::BallDifference {
                center,
                radius,
                hole_center,
                hole_radius,
            } => {
                if *hole_radius <= 0.0 || *radius <= 0.0 {
                    return Err(Error::ShapeTooLarge);
                }
                let sep = dist(center, hole_center, 3);
                if sep + hole_radius >= *radius {
                    return Err(Error::ShapeTooLarge);
                }
            }
        }
        Ok(())
    }
}

/// Which boundary component a feature is attached to in a two-sided domain.
/// `First` is the component the gluing cutoff equals 1 near (the inner sphere
/// for annuli, the hole for ball differences); `Second` is the other one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    First,
    Second,
}

/// Weight parameters. With boundary distance x the weights are
/// phi = x^2, psi = x^(2a-n) exp(-s/x), varphi = x^(2a) exp(-s/x).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightConfig {
    pub a: u32,
    pub s: f64,
    pub m: u32,
    pub underflow_floor: f64,
}

impl WeightConfig {
    pub fn new(a: u32, s: f64) -> Result<WeightConfig> {
        let wc = WeightConfig {
            a,
            s,
            m: 1,
            underflow_floor: 1e-300,
        };
        wc.validate()?;
        Ok(wc)
    }

    /// Defaults for dimension n: a = ceil(n/2), s = 1.
    pub fn default_for_dim(n: usize) -> WeightConfig {
        WeightConfig {
            a: n.div_ceil(2) as u32,
            s: 1.0,
            m: 1,
            underflow_floor: 1e-300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s <= 0.0 {
            return Err(Error::UnsupportedOperator(
                "weight decay rate s must be positive".into(),
            ));
        }
        if self.a < 1 {
            return Err(Error::UnsupportedOperator("weight exponent a must be >= 1".into()));
        }
        if self.m != 1 {
            return Err(Error::UnsupportedOperator(
                "only first-order operators (m = 1) are supported".into(),
            ));
        }
        if !(self.underflow_floor > 0.0) {
            return Err(Error::UnsupportedOperator(
                "underflow floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Masked grid domain with the exact boundary distance per cell.
#[derive(Debug, Clone)]
pub struct Domain {
    grid: Arc<Grid>,
    shape: Shape,
    mask: Vec<bool>,
    /// Boundary distance at cell centers; 0 on unmasked cells (storage
    /// convention, not a statement about the continuum distance).
    x: Vec<f64>,
    masked_count: usize,
}

/// Builds a domain from an analytic shape. The shape must fit inside the grid
/// extents with a margin of at least two cells on every axis.
pub fn build_domain(shape: Shape, grid: Grid) -> Result<Domain> {
    shape.validate()?;
    let n = grid.dim();
    for a in 0..n {
        let (lo, hi) = grid.extents()[a];
        let h = grid.spacing()[a];
        let (smin, smax) = shape.bounds(a);
        if smin < lo + 2.0 * h || smax > hi - 2.0 * h {
            return Err(Error::ShapeTooLarge);
        }
    }
    let total = grid.total_cells();
    let mut mask = vec![false; total];
    let mut x = vec![0.0; total];
    let mut masked_count = 0;
    for (lin, idx) in grid.iter_cells() {
        let p = grid.center(idx);
        let d = shape.inner_distance(&p, n);
        if d > 0.0 {
            mask[lin] = true;
            x[lin] = d;
            masked_count += 1;
        }
    }
    Ok(Domain {
        grid: Arc::new(grid),
        shape,
        mask,
        x,
        masked_count,
    })
}

impl Domain {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<Grid> {
        Arc::clone(&self.grid)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn masked_count(&self) -> usize {
        self.masked_count
    }

    pub fn is_masked(&self, lin: usize) -> bool {
        self.mask[lin]
    }

    /// Whether the domain is connected (single analytic piece).
    pub fn is_connected(&self) -> bool {
        match self.shape {
            Shape::Ball { .. } => true,
            // A 1D annulus or ball difference is a pair of disjoint intervals.
            Shape::Annulus { .. } | Shape::BallDifference { .. } => self.grid.dim() >= 2,
        }
    }

    /// Boundary components with their gluing side.
    pub fn boundary_sides(&self) -> Vec<BoundarySide> {
        match self.shape {
            Shape::Ball { .. } => vec![BoundarySide::Second],
            Shape::Annulus { .. } | Shape::BallDifference { .. } => {
                vec![BoundarySide::First, BoundarySide::Second]
            }
        }
    }

    /// Center of the radial coordinate used for cutoffs and flux shells:
    /// distance from this point parameterizes the way from the `First`
    /// boundary component to the `Second`. None for single-boundary shapes.
    pub fn gluing_center(&self) -> Option<[f64; 3]> {
        match self.shape {
            Shape::Ball { .. } => None,
            Shape::Annulus { center, .. } => Some(center),
            Shape::BallDifference { hole_center, .. } => Some(hole_center),
        }
    }

    /// Admissible open interval for the gluing coordinate (radius from
    /// [`Self::gluing_center`]) strictly inside the domain.
    pub fn gluing_bounds(&self) -> Option<(f64, f64)> {
        match self.shape {
            Shape::Ball { .. } => None,
            Shape::Annulus { r_in, r_out, .. } => Some((r_in, r_out)),
            Shape::BallDifference {
                center,
                radius,
                hole_center,
                hole_radius,
            } => {
                let sep = dist(&center, &hole_center, self.grid.dim());
                Some((hole_radius, radius - sep))
            }
        }
    }

    /// Evaluates (phi, psi, varphi) at a masked cell; values below the
    /// underflow floor are clamped to zero.
    pub fn eval_weights(&self, wc: &WeightConfig, idx: [usize; 3]) -> Result<(f64, f64, f64)> {
        wc.validate()?;
        let lin = self.grid.linear(idx);
        if !self.mask[lin] {
            return Err(Error::OutsideDomain);
        }
        let n = self.grid.dim() as i32;
        let x = self.x[lin];
        let clamp = |v: f64| if v < wc.underflow_floor { 0.0 } else { v };
        let phi = clamp(x * x);
        let e = (-wc.s / x).exp();
        let psi = clamp(x.powi(2 * wc.a as i32 - n) * e);
        let varphi = clamp(x.powi(2 * wc.a as i32) * e);
        Ok((phi, psi, varphi))
    }

    /// Precomputes per-cell weight arrays for a weight configuration.
    pub fn weights(&self, wc: &WeightConfig) -> Weights {
        let n = self.grid.dim() as i32;
        let total = self.grid.total_cells();
        let mut psi_sq = vec![0.0; total];
        let mut phi_sq = vec![0.0; total];
        for lin in 0..total {
            if !self.mask[lin] {
                continue;
            }
            let x = self.x[lin];
            let psi = x.powi(2 * wc.a as i32 - n) * (-wc.s / x).exp();
            let psi = if psi < wc.underflow_floor { 0.0 } else { psi };
            let p2 = psi * psi;
            // Keep psi^2 a normal double so 1/psi^2 and residual quotients
            // stay representable.
            psi_sq[lin] = if p2 >= f64::MIN_POSITIVE { p2 } else { 0.0 };
            phi_sq[lin] = x * x * x * x;
        }
        Weights { psi_sq, phi_sq }
    }
}

/// Per-cell weight arrays: psi^2 (zero off-mask and where clamped) and
/// phi^2 = x^4 (zero off-mask).
#[derive(Debug, Clone)]
pub struct Weights {
    pub psi_sq: Vec<f64>,
    pub phi_sq: Vec<f64>,
}

impl Weights {
    /// psi^2 phi^(2m) with m = 1, the multiplier that turns the potential
    /// gradient into the physical field.
    pub fn solve_weight(&self, lin: usize) -> f64 {
        self.psi_sq[lin] * self.phi_sq[lin]
    }
}

/// Smooth cutoff over the whole grid: 1 on the `First`-boundary side of the
/// transition interval, 0 on the `Second` side, quintic smoothstep between,
/// as a function of the radial gluing coordinate.
#[derive(Debug, Clone)]
pub struct CutoffField {
    values: Vec<f64>,
    center: [f64; 3],
    lo: f64,
    hi: f64,
    n: usize,
}

/// Builds the gluing cutoff for a two-boundary domain. `transition = (lo,
/// hi)` is the interval of the gluing coordinate over which the cutoff falls
/// from 1 to 0; the collars [bound_lo, lo] and [hi, bound_hi] must both be
/// nonempty so the cutoff is constant near each boundary component.
pub fn build_cutoff(domain: &Domain, transition: (f64, f64)) -> Result<CutoffField> {
    let (lo, hi) = transition;
    let center = domain
        .gluing_center()
        .ok_or_else(|| Error::InvalidCollars("domain has a single boundary component".into()))?;
    let (blo, bhi) = domain.gluing_bounds().unwrap();
    if !(blo < lo && lo < hi && hi < bhi) {
        return Err(Error::InvalidCollars(format!(
            "transition [{lo}, {hi}] must lie strictly inside ({blo}, {bhi})"
        )));
    }
    let grid = domain.grid();
    let n = grid.dim();
    let mut values = vec![0.0; grid.total_cells()];
    for (lin, idx) in grid.iter_cells() {
        let p = grid.center(idx);
        let r = dist(&p, &center, n);
        values[lin] = chi_profile(r, lo, hi);
    }
    Ok(CutoffField {
        values,
        center,
        lo,
        hi,
        n,
    })
}

#[inline]
fn chi_profile(r: f64, lo: f64, hi: f64) -> f64 {
    if r <= lo {
        1.0
    } else if r >= hi {
        0.0
    } else {
        1.0 - smoothstep5((r - lo) / (hi - lo))
    }
}

impl CutoffField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, lin: usize) -> f64 {
        self.values[lin]
    }

    pub fn transition(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn transition_width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    /// Cutoff value as a function of the gluing coordinate.
    pub fn profile(&self, r: f64) -> f64 {
        chi_profile(r, self.lo, self.hi)
    }

    /// Analytic gradient of the cutoff at a point (zero outside the
    /// transition shell).
    pub fn grad_at(&self, p: &[f64; 3]) -> [f64; 3] {
        let r = dist(p, &self.center, self.n);
        if r <= self.lo || r >= self.hi || r == 0.0 {
            return [0.0; 3];
        }
        let w = self.hi - self.lo;
        let dchi = -smoothstep5_deriv((r - self.lo) / w) / w;
        let mut g = [0.0; 3];
        for a in 0..self.n {
            g[a] = dchi * (p[a] - self.center[a]) / r;
        }
        g
    }
}
