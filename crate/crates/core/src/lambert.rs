//! Real branches of the Lambert W function.
//!
//! `W(x)` solves `w * exp(w) = x`. On `[-1/e, 0)` there are two real
//! solutions: the principal branch `W0 >= -1` and the lower branch
//! `W-1 <= -1`. Both are refined with Halley's method from a branch-specific
//! starting point.
//!
//! [`lambert_wm1_neg_exp`] evaluates `W-1(-exp(u))` without ever forming
//! `exp(u)`, which matters when the argument underflows.

use crate::error::{Error, Result};
use crate::num::Real;

const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WBranch {
    /// `W0`, defined on `[-1/e, inf)`, values `>= -1`.
    Principal,
    /// `W-1`, defined on `[-1/e, 0)`, values `<= -1`.
    MinusOne,
}

impl WBranch {
    fn name(self) -> &'static str {
        match self {
            WBranch::Principal => "W0",
            WBranch::MinusOne => "W-1",
        }
    }
}

fn step_tolerance<F: Real>() -> F {
    F::max(F::lit(1e-14), F::epsilon() * F::lit(8.0))
}

/// `sqrt(2 (1 + e x))`, clamped at the branch point.
fn branch_distance<F: Real>(x: F) -> F {
    let t = F::one() + F::E() * x;
    (F::lit(2.0) * t.max(F::zero())).sqrt()
}

fn initial_guess<F: Real>(branch: WBranch, x: F) -> F {
    let one = F::one();
    let near_branch_point = x < F::lit(-0.25);
    match branch {
        WBranch::Principal if near_branch_point => {
            let p = branch_distance(x);
            -one + p - p * p / F::lit(3.0) + F::lit(11.0 / 72.0) * p * p * p
        }
        WBranch::Principal if x <= F::E() => {
            let l = x.ln_1p();
            l * (one - l.ln_1p() / (F::lit(2.0) + l))
        }
        WBranch::Principal => {
            let l1 = x.ln();
            let l2 = l1.ln();
            l1 - l2 + l2 / l1
        }
        WBranch::MinusOne if near_branch_point => {
            let p = branch_distance(x);
            -one - p - p * p / F::lit(3.0) - F::lit(11.0 / 72.0) * p * p * p
        }
        WBranch::MinusOne => {
            let l1 = (-x).ln();
            let l2 = (-l1).ln();
            l1 - l2 + l2 / l1
        }
    }
}

/// Evaluates `W(x)` on the requested real branch.
pub fn lambert_w<F: Real>(branch: WBranch, x: F) -> Result<F> {
    let branch_point = -F::one() / F::E();
    let in_domain = match branch {
        WBranch::Principal => x >= branch_point && x.is_finite(),
        WBranch::MinusOne => x >= branch_point && x < F::zero(),
    };
    if !in_domain {
        return Err(Error::Domain {
            branch: branch.name(),
            x: x.to_f64().unwrap_or(f64::NAN),
        });
    }
    if x == F::zero() {
        return Ok(F::zero());
    }
    let mut w = initial_guess(branch, x);
    if branch_distance(x) == F::zero() {
        return Ok(-F::one());
    }

    let two = F::lit(2.0);
    let fn_floor = F::epsilon() * two * x.abs().max(F::min_positive_value());
    for _ in 0..MAX_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= fn_floor {
            return Ok(clamp_to_branch(branch, w));
        }
        let wp1 = w + F::one();
        let denom = ew * wp1 - (w + two) * f / (two * wp1);
        let delta = f / denom;
        if !delta.is_finite() {
            return Ok(clamp_to_branch(branch, w));
        }
        w = w - delta;
        if delta.abs() <= step_tolerance::<F>() * (F::one() + w.abs()) {
            return Ok(clamp_to_branch(branch, w));
        }
    }
    Err(Error::Convergence("Lambert W Halley iteration"))
}

fn clamp_to_branch<F: Real>(branch: WBranch, w: F) -> F {
    match branch {
        WBranch::Principal => w.max(-F::one()),
        WBranch::MinusOne => w.min(-F::one()),
    }
}

/// `W-1(-exp(u))` for `u <= -1`, solved in log form: `ln(-w) + w = u`.
pub fn lambert_wm1_neg_exp<F: Real>(u: F) -> Result<F> {
    let one = F::one();
    if !(u <= -one) {
        return Err(Error::Domain {
            branch: "W-1(-exp(u))",
            x: u.to_f64().unwrap_or(f64::NAN),
        });
    }
    if u == -one {
        return Ok(-one);
    }
    if u == F::neg_infinity() {
        return Ok(F::neg_infinity());
    }

    // p = sqrt(2 (1 + e * (-exp(u)))) without cancellation
    let p = (-F::lit(2.0) * (u + one).exp_m1()).sqrt();
    let mut w = if p < F::lit(1.25) {
        -one - p - p * p / F::lit(3.0) - F::lit(11.0 / 72.0) * p * p * p
    } else {
        let mut w = u - (-u).ln();
        for _ in 0..4 {
            w = u - (-w).ln();
        }
        w
    };
    if w > -one {
        w = -one - F::epsilon();
    }

    let two = F::lit(2.0);
    for _ in 0..MAX_ITERATIONS {
        let g = (-w).ln() + w - u;
        if g == F::zero() {
            return Ok(w);
        }
        // g' = (w + 1) / w, g'' = -1 / w^2
        let g1 = (w + one) / w;
        let g2 = -one / (w * w);
        let newton = g / g1;
        let delta = newton / (one - newton * g2 / (two * g1));
        if !delta.is_finite() {
            return Ok(w);
        }
        w = (w - delta).min(-one);
        if delta.abs() <= step_tolerance::<F>() * (one + w.abs()) {
            return Ok(w);
        }
    }
    Err(Error::Convergence("log-domain W-1 Halley iteration"))
}
