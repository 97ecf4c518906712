//! Smooth transition profiles used for cutoffs, flux indicators and
//! manufactured fields.

/// Quintic smoothstep: C^2, S(0)=0, S(1)=1, S'(1/2)=15/8 (peak slope).
#[inline]
pub fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    ((6.0 * t - 15.0) * t + 10.0) * t * t * t
}

/// Derivative of [`smoothstep5`] with respect to t (zero outside [0,1]).
#[inline]
pub fn smoothstep5_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// Seventh-order smoothstep: C^3 at both ends. Used where second-order
/// stencil consistency needs three continuous derivatives across the joint.
#[inline]
pub fn smoothstep7(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    let t4 = t * t * t * t;
    t4 * (35.0 - 84.0 * t + 70.0 * t * t - 20.0 * t * t * t)
}

#[inline]
pub fn smoothstep7_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let omt = 1.0 - t;
    140.0 * t * t * t * omt * omt * omt
}

/// C-infinity bump exp(-1/(1-t^2)) on (-1,1), zero outside.
#[inline]
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Derivative of [`bump`] with respect to t.
#[inline]
pub fn bump_deriv(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let d = 1.0 - t * t;
        (-1.0 / d).exp() * (-2.0 * t / (d * d))
    }
}
