//! Probability-vector arithmetic over a shared vocabulary.
//!
//! [`Distribution`] is a dense probability vector, [`SparseTopK`] is the
//! truncated, renormalized top-K form that travels on the uplink, and
//! [`LogitVector`] is the raw model output both are derived from.
//!
//! Ties (argmax, top-K selection, sparse entry order) always resolve to the
//! lowest token id.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::num::Real;

/// Index into the vocabulary.
pub type TokenId = u32;

/// Allowed deviation of a probability vector's sum from 1.
pub fn sum_tolerance<F: Real>() -> F {
    F::max(F::lit(1e-9), F::epsilon() * F::lit(64.0))
}

/// Unnormalized log-scores over the vocabulary. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector<F> {
    logits: Vec<F>,
}

impl<F: Real> LogitVector<F> {
    pub fn new(logits: Vec<F>) -> Result<Self> {
        if logits.is_empty() {
            return invalid("logit vector is empty");
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return invalid(format!("logit {i} is not finite"));
        }
        Ok(Self { logits })
    }

    pub fn as_slice(&self) -> &[F] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &l) in self.logits.iter().enumerate().skip(1) {
            if l > self.logits[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Adds `shift` to every logit.
    pub fn shifted(&self, shift: F) -> Self {
        Self {
            logits: self.logits.iter().map(|&l| l + shift).collect(),
        }
    }
}

/// Dense probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<F> {
    probs: Vec<F>,
}

impl<F: Real> Distribution<F> {
    pub fn new(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("distribution is empty");
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= F::zero())) {
            return invalid(format!("probability {i} is negative or not finite"));
        }
        let sum = kahan_sum(probs.iter().copied());
        if (sum - F::one()).abs() > sum_tolerance() {
            return invalid(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights. Fails if they are all zero.
    pub fn from_weights(weights: Vec<F>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= F::zero())) {
            return invalid("weights must be finite and non-negative");
        }
        let total = kahan_sum(weights.iter().copied());
        if total <= F::zero() {
            return invalid("weights are identically zero");
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn one_hot(vocab_size: usize, token: TokenId) -> Self {
        let mut probs = vec![F::zero(); vocab_size];
        probs[token as usize] = F::one();
        Self { probs }
    }

    pub fn uniform(vocab_size: usize) -> Self {
        let p = F::one() / F::count(vocab_size);
        Self {
            probs: vec![p; vocab_size],
        }
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> F {
        self.probs.get(token as usize).copied().unwrap_or_else(F::zero)
    }

    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

/// Top-K truncation of a distribution with renormalized probabilities.
///
/// Entries are sorted by probability, descending. Tokens not listed carry zero
/// mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTopK<F> {
    entries: Vec<(TokenId, F)>,
    vocab_size: usize,
}

impl<F: Real> SparseTopK<F> {
    /// Validates ids, order and normalization of pre-built entries.
    pub fn from_entries(entries: Vec<(TokenId, F)>, vocab_size: usize) -> Result<Self> {
        if entries.is_empty() {
            return invalid("sparse distribution has no entries");
        }
        if entries.len() > vocab_size {
            return invalid("more sparse entries than vocabulary tokens");
        }
        let mut seen = vec![false; vocab_size];
        for &(id, p) in &entries {
            let slot = seen
                .get_mut(id as usize)
                .ok_or_else(|| Error::InvalidInput(format!("token id {id} >= vocab size {vocab_size}")))?;
            if *slot {
                return invalid(format!("token id {id} listed twice"));
            }
            *slot = true;
            if !(p.is_finite() && p >= F::zero()) {
                return invalid(format!("probability of token {id} is negative or not finite"));
            }
        }
        if entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return invalid("sparse entries are not sorted by descending probability");
        }
        let sum = kahan_sum(entries.iter().map(|e| e.1));
        if (sum - F::one()).abs() > sum_tolerance() {
            return invalid(format!("sparse probabilities sum to {sum}, not 1"));
        }
        Ok(Self { entries, vocab_size })
    }

    pub fn entries(&self) -> &[(TokenId, F)] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Probability of `token`, zero outside the support.
    pub fn prob(&self, token: TokenId) -> F {
        self.entries
            .iter()
            .find(|e| e.0 == token)
            .map_or_else(F::zero, |e| e.1)
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.entries.iter().any(|e| e.0 == token)
    }

    pub fn densify(&self) -> Distribution<F> {
        densify(self)
    }
}

/// Sources that can be sampled by inverse CDF in storage order.
pub trait Categorical<F> {
    fn for_each_entry(&self, f: &mut dyn FnMut(TokenId, F) -> bool);
}

impl<F: Real> Categorical<F> for Distribution<F> {
    fn for_each_entry(&self, f: &mut dyn FnMut(TokenId, F) -> bool) {
        for (i, &p) in self.probs.iter().enumerate() {
            if !f(i as TokenId, p) {
                break;
            }
        }
    }
}

impl<F: Real> Categorical<F> for SparseTopK<F> {
    fn for_each_entry(&self, f: &mut dyn FnMut(TokenId, F) -> bool) {
        for &(id, p) in &self.entries {
            if !f(id, p) {
                break;
            }
        }
    }
}

/// Temperature softmax. `temp == 0` is greedy: one-hot at the argmax.
pub fn softmax_temp<F: Real>(logits: &LogitVector<F>, temp: F) -> Result<Distribution<F>> {
    if !(temp.is_finite() && temp >= F::zero()) {
        return invalid(format!("temperature {temp} must be finite and >= 0"));
    }
    if temp == F::zero() {
        return Ok(Distribution::one_hot(logits.len(), logits.argmax()));
    }
    let l = logits.as_slice();
    let max = l[logits.argmax() as usize];
    let weights: Vec<F> = l.iter().map(|&x| ((x - max) / temp).exp()).collect();
    Distribution::from_weights(weights)
}

/// Keeps the `k` largest logits and applies softmax (temperature 1) to them only.
pub fn top_k_sparsify<F: Real>(logits: &LogitVector<F>, k: usize) -> Result<SparseTopK<F>> {
    let n = logits.len();
    if k == 0 || k > n {
        return invalid(format!("top-k size {k} outside 1..={n}"));
    }
    let l = logits.as_slice();
    let by_logit = |a: &usize, b: &usize| -> Ordering {
        l[*b].partial_cmp(&l[*a]).unwrap_or(Ordering::Equal).then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.select_nth_unstable_by(k - 1, by_logit);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_logit);

    let max = l[idx[0]];
    let weights: Vec<F> = idx.iter().map(|&i| (l[i] - max).exp()).collect();
    let total = kahan_sum(weights.iter().copied());
    let mut entries: Vec<(TokenId, F)> = idx
        .iter()
        .zip(&weights)
        .map(|(&i, &w)| (i as TokenId, w / total))
        .collect();
    // exp can collapse distinct logits onto one probability
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(SparseTopK {
        entries,
        vocab_size: n,
    })
}

pub fn densify<F: Real>(sparse: &SparseTopK<F>) -> Distribution<F> {
    let mut probs = vec![F::zero(); sparse.vocab_size];
    for &(id, p) in &sparse.entries {
        probs[id as usize] = p;
    }
    Distribution { probs }
}

fn check_len<F: Real>(a: &Distribution<F>, b: &Distribution<F>) -> Result<()> {
    if a.len() != b.len() {
        return invalid(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok(())
}

/// `norm(max(0, P - Q))`, the law of the corrective token after a rejection.
pub fn residual<F: Real>(target: &Distribution<F>, draft: &Distribution<F>) -> Result<Distribution<F>> {
    check_len(target, draft)?;
    let pos: Vec<F> = target
        .probs
        .iter()
        .zip(&draft.probs)
        .map(|(&p, &q)| (p - q).max(F::zero()))
        .collect();
    let total = kahan_sum(pos.iter().copied());
    if total <= F::zero() {
        return Err(Error::DegenerateResidual);
    }
    Ok(Distribution {
        probs: pos.into_iter().map(|w| w / total).collect(),
    })
}

/// Acceptance rate `sum_x min(p(x), q(x))`.
pub fn analytic_alpha<F: Real>(target: &Distribution<F>, draft: &Distribution<F>) -> Result<F> {
    check_len(target, draft)?;
    let alpha = kahan_sum(target.probs.iter().zip(&draft.probs).map(|(&p, &q)| p.min(q)));
    Ok(alpha.min(F::one()))
}

pub fn tv_distance<F: Real>(a: &Distribution<F>, b: &Distribution<F>) -> Result<F> {
    check_len(a, b)?;
    let l1 = kahan_sum(a.probs.iter().zip(&b.probs).map(|(&x, &y)| (x - y).abs()));
    Ok(l1 / F::lit(2.0))
}

/// Inverse-CDF lookup for a uniform `u` in `[0, 1)`.
///
/// Returns the first entry (in storage order) with positive mass whose
/// cumulative probability exceeds `u`; if rounding leaves the total short of
/// `u`, the last entry with positive mass.
pub fn sample_with_uniform<F: Real, D: Categorical<F> + ?Sized>(dist: &D, u: F) -> TokenId {
    let mut cum = F::zero();
    let mut last_positive = None;
    let mut chosen = None;
    dist.for_each_entry(&mut |id, p| {
        if p > F::zero() {
            cum = cum + p;
            last_positive = Some(id);
            if u < cum {
                chosen = Some(id);
                return false;
            }
        }
        true
    });
    chosen
        .or(last_positive)
        .expect("a validated distribution has positive mass")
}

/// Draws one token; consumes exactly one uniform from `rng`.
pub fn sample<F: Real, D: Categorical<F> + ?Sized, R: Rng + ?Sized>(dist: &D, rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    sample_with_uniform(dist, F::lit(u))
}

pub(crate) fn kahan_sum<F: Real>(values: impl IntoIterator<Item = F>) -> F {
    let mut sum = F::zero();
    let mut comp = F::zero();
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
