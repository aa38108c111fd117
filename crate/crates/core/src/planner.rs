//! Draft-length planning.
//!
//! With per-position acceptance rate `alpha` and relative per-token cost
//! `L = b + c` (uplink transmission plus drafting, both in units of one target
//! model step), one draft-verify round of length `gamma` emits
//! `(1 - alpha^(gamma+1)) / (1 - alpha)` tokens on average and costs
//! `(1 + gamma L)` target steps. Their ratio is the speedup over running the
//! target model alone.
//!
//! The continuous maximizer has a closed form through the lower Lambert W
//! branch; [`odld`] rounds it to the better neighbouring integer and [`as2`]
//! decides whether speculative decoding is worth running at all.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lambert::lambert_wm1_neg_exp;
use crate::num::Real;

/// Expected tokens emitted per round.
pub fn expected_tokens<F: Real>(alpha: F, gamma: u32) -> F {
    if alpha >= F::one() {
        return F::count(gamma as usize + 1);
    }
    (F::one() - alpha.powi(gamma as i32 + 1)) / (F::one() - alpha)
}

/// Throughput of draft-verify decoding relative to the standalone target model.
pub fn speedup<F: Real>(alpha: F, gamma: u32, latency: F) -> F {
    let g = F::count(gamma as usize);
    if alpha >= F::one() {
        return (g + F::one()) / (F::one() + g * latency);
    }
    (F::one() - alpha.powi(gamma as i32 + 1)) / ((F::one() + g * latency) * (F::one() - alpha))
}

/// Continuous stationary point of [`speedup`] in `gamma`. May be below 1.
pub fn gamma_zero<F: Real>(alpha: F, latency: F) -> Result<F> {
    if !(alpha > F::zero() && alpha < F::one()) {
        return Err(Error::Domain {
            branch: "alpha in (0, 1)",
            x: alpha.to_f64().unwrap_or(f64::NAN),
        });
    }
    if !(latency > F::zero() && latency < F::one()) {
        return Err(Error::Domain {
            branch: "L in (0, 1)",
            x: latency.to_f64().unwrap_or(f64::NAN),
        });
    }
    let ln_alpha = alpha.ln();
    let inv_l = F::one() / latency;
    // W-1(-(1/e) alpha^(1/L - 1)) = W-1(-exp(u))
    let u = -F::one() + (inv_l - F::one()) * ln_alpha;
    let w = lambert_wm1_neg_exp(u)?;
    Ok((w + F::one()) / ln_alpha - inv_l)
}

/// Numerator of `dS/dgamma` up to a positive factor; zero at [`gamma_zero`].
pub fn critical_numerator<F: Real>(alpha: F, gamma: F, latency: F) -> F {
    let a = alpha.powf(gamma + F::one());
    -a * alpha.ln() * (F::one() + latency * gamma) - latency * (F::one() - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    #[serde(rename = "DSD")]
    Dsd,
    #[serde(rename = "standalone")]
    Standalone,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dsd => "DSD",
            Mode::Standalone => "standalone",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Validated `(alpha, b, c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerInput<F> {
    alpha: F,
    b: F,
    c: F,
}

impl<F: Real> PlannerInput<F> {
    pub fn new(alpha: F, b: F, c: F) -> Result<Self> {
        if !(alpha > F::zero() && alpha < F::one()) {
            return Err(Error::InvalidInput(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        if !(b > F::zero() && b.is_finite()) {
            return Err(Error::InvalidInput(format!("b = {b} must be positive")));
        }
        if !(c > F::zero() && c.is_finite()) {
            return Err(Error::InvalidInput(format!("c = {c} must be positive")));
        }
        Ok(Self { alpha, b, c })
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }

    pub fn b(&self) -> F {
        self.b
    }

    pub fn c(&self) -> F {
        self.c
    }

    pub fn latency(&self) -> F {
        self.b + self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plan<F> {
    pub mode: Mode,
    pub gamma_star: u32,
    pub s_star: F,
    /// `NaN` when `L >= 1` (no stationary point is computed).
    pub gamma_zero: F,
}

fn odld_latency<F: Real>(alpha: F, latency: F) -> Result<(u32, F, F)> {
    let g0 = gamma_zero(alpha, latency)?;
    if g0 < F::one() {
        return Ok((1, speedup(alpha, 1, latency), g0));
    }
    let floor = g0.floor().to_u32().unwrap_or(u32::MAX);
    let ceil = g0.ceil().to_u32().unwrap_or(u32::MAX);
    let s_floor = speedup(alpha, floor, latency);
    let s_ceil = speedup(alpha, ceil, latency);
    // equal throughput goes to the shorter draft
    if s_floor < s_ceil {
        Ok((ceil, s_ceil, g0))
    } else {
        Ok((floor, s_floor, g0))
    }
}

/// Optimal draft length for `b + c < 1`: returns `(gamma_star, s_star)`.
pub fn odld<F: Real>(alpha: F, b: F, c: F) -> Result<(u32, F)> {
    let input = PlannerInput::new(alpha, b, c)?;
    let (g, s, _) = odld_latency(input.alpha, input.latency())?;
    Ok((g, s))
}

/// Chooses between speculative decoding and the standalone target model.
///
/// Falls back to standalone when `b + c >= 1` or when the best achievable
/// speedup is below one.
pub fn as2<F: Real>(input: &PlannerInput<F>) -> Plan<F> {
    plan_for_latency(input.alpha, input.latency())
}

pub(crate) fn plan_for_latency<F: Real>(alpha: F, latency: F) -> Plan<F> {
    if latency >= F::one() {
        return Plan {
            mode: Mode::Standalone,
            gamma_star: 1,
            s_star: speedup(alpha, 1, latency),
            gamma_zero: F::nan(),
        };
    }
    let (gamma_star, s_star, g0) =
        odld_latency(alpha, latency).expect("alpha and L validated by caller");
    let mode = if s_star < F::one() {
        Mode::Standalone
    } else {
        Mode::Dsd
    };
    Plan {
        mode,
        gamma_star,
        s_star,
        gamma_zero: g0,
    }
}

/// Exhaustive argmax of [`speedup`] over `1..=gamma_max`, smallest on ties.
pub fn brute_force_gamma<F: Real>(alpha: F, latency: F, gamma_max: u32) -> u32 {
    let mut best = 1;
    let mut best_s = speedup(alpha, 1, latency);
    for g in 2..=gamma_max.max(1) {
        let s = speedup(alpha, g, latency);
        if s > best_s {
            best = g;
            best_s = s;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow<F> {
    pub alpha: F,
    #[serde(rename = "L")]
    pub latency: F,
    pub plan: Plan<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint<F> {
    pub alpha: F,
    #[serde(rename = "L")]
    pub latency: F,
    pub gamma: u32,
    pub s_inf: F,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable<F> {
    pub rows: Vec<SweepRow<F>>,
    pub curves: Vec<CurvePoint<F>>,
}

/// Plans every `(alpha, L)` cell, sorted by `(alpha, L)`.
///
/// With `curve_gamma_max = Some(n)` the per-cell speedup curve for
/// `gamma = 1..=n` is included.
pub fn sweep_table<F: Real>(alphas: &[F], latencies: &[F], curve_gamma_max: Option<u32>) -> Result<SweepTable<F>> {
    for &a in alphas {
        if !(a > F::zero() && a < F::one()) {
            return Err(Error::InvalidInput(format!("alpha = {a} must lie in (0, 1)")));
        }
    }
    for &l in latencies {
        if !(l > F::zero() && l.is_finite()) {
            return Err(Error::InvalidInput(format!("L = {l} must be positive")));
        }
    }
    let mut alphas = alphas.to_vec();
    let mut latencies = latencies.to_vec();
    let by_value = |a: &F, b: &F| a.partial_cmp(b).expect("finite");
    alphas.sort_by(by_value);
    latencies.sort_by(by_value);

    let mut table = SweepTable::default();
    for &alpha in &alphas {
        for &latency in &latencies {
            table.rows.push(SweepRow {
                alpha,
                latency,
                plan: plan_for_latency(alpha, latency),
            });
            if let Some(n) = curve_gamma_max {
                table.curves.extend((1..=n).map(|gamma| CurvePoint {
                    alpha,
                    latency,
                    gamma,
                    s_inf: speedup(alpha, gamma, latency),
                }));
            }
        }
    }
    Ok(table)
}
