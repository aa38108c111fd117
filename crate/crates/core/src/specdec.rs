//! Draft-verify protocol between an on-device drafter and an edge verifier.
//!
//! The drafter samples `gamma` tokens autoregressively from the top-K
//! truncation of its own distribution and ships the tokens together with
//! their sparse distributions. The verifier walks the draft in order,
//! accepting each token with probability `min(1, p/q)`; at the first
//! rejection it emits a corrective token drawn from `norm(max(0, P - Y))`, and
//! if everything is accepted it emits a bonus token from the next target
//! distribution.
//!
//! Uniform draws are consumed in a fixed order: one per drafted token on the
//! drafter side; on the verifier side one per examined position, then one for
//! the corrective or bonus token.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::{
    analytic_alpha, densify, residual, sample, sample_with_uniform, softmax_temp, top_k_sparsify,
    Distribution, LogitVector, SparseTopK, TokenId,
};

/// A language model reduced to its next-token logits.
pub trait TokenModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Must be deterministic in `context` and return `vocab_size` logits.
    fn next_logits(&self, context: &[TokenId]) -> LogitVector;
}

impl<M: TokenModel + ?Sized> TokenModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logits(&self, context: &[TokenId]) -> LogitVector {
        (**self).next_logits(context)
    }
}

/// What the device sends on the uplink for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftPacket {
    pub draft_tokens: Vec<TokenId>,
    pub dists: Vec<SparseTopK>,
    pub k: usize,
}

impl DraftPacket {
    pub fn gamma(&self) -> usize {
        self.draft_tokens.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.dists.first().map_or(0, SparseTopK::vocab_size)
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.draft_tokens.is_empty() {
            return invalid("draft packet has gamma = 0");
        }
        if self.dists.len() != self.draft_tokens.len() {
            return invalid("one sparse distribution per draft token is required");
        }
        for (i, (tok, dist)) in self.draft_tokens.iter().zip(&self.dists).enumerate() {
            if dist.vocab_size() != vocab_size {
                return invalid(format!("position {i}: vocab size {} != {vocab_size}", dist.vocab_size()));
            }
            if dist.k() != self.k {
                return invalid(format!("position {i}: {} entries, expected k = {}", dist.k(), self.k));
            }
            if !dist.contains(*tok) {
                return invalid(format!("position {i}: draft token {tok} outside its sparse support"));
            }
        }
        Ok(())
    }
}

/// Verifier verdict for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyOutcome {
    pub accepted_count: usize,
    /// Accepted draft prefix followed by one corrective or bonus token.
    pub emitted_tokens: Vec<TokenId>,
    /// 1-based position of the final emitted token, `accepted_count + 1`.
    pub position_j: usize,
    pub bonus: bool,
}

impl VerifyOutcome {
    pub fn final_token(&self) -> TokenId {
        *self.emitted_tokens.last().expect("at least one emitted token")
    }
}

/// Acceptance policy. Only `Standard` preserves the target distribution;
/// `AcceptAll` exists as a negative control for equivalence checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptRule {
    #[default]
    Standard,
    AcceptAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub packet: DraftPacket,
    pub outcome: VerifyOutcome,
    pub accept_flags: Vec<bool>,
    pub draft_uniforms: Vec<f64>,
    pub verify_uniforms: Vec<f64>,
}

/// Accept iff `p >= q` or `u < p / q`.
pub fn accept_decision(p: f64, q: f64, u: f64) -> Result<bool> {
    if !(q > 0.0) {
        return invalid(format!("draft probability q = {q} must be positive"));
    }
    if !(p >= 0.0) {
        return invalid(format!("target probability p = {p} must be non-negative"));
    }
    Ok(p >= q || u < p / q)
}

fn logits_checked<M: TokenModel + ?Sized>(model: &M, context: &[TokenId]) -> Result<LogitVector> {
    let logits = model.next_logits(context);
    if logits.len() != model.vocab_size() {
        return invalid(format!(
            "model returned {} logits for vocab size {}",
            logits.len(),
            model.vocab_size()
        ));
    }
    Ok(logits)
}

/// Drafts `gamma` tokens, recording the uniforms consumed.
pub fn draft_round_traced<M, R>(
    slm: &M,
    prefix: &[TokenId],
    gamma: usize,
    k: usize,
    rng: &mut R,
) -> Result<(DraftPacket, Vec<f64>)>
where
    M: TokenModel + ?Sized,
    R: Rng + ?Sized,
{
    if gamma == 0 {
        return invalid("gamma must be at least 1");
    }
    if k == 0 || k > slm.vocab_size() {
        return invalid(format!("k = {k} outside 1..={}", slm.vocab_size()));
    }
    let mut context = prefix.to_vec();
    let mut packet = DraftPacket {
        draft_tokens: Vec::with_capacity(gamma),
        dists: Vec::with_capacity(gamma),
        k,
    };
    let mut uniforms = Vec::with_capacity(gamma);
    for _ in 0..gamma {
        let sparse = top_k_sparsify(&logits_checked(slm, &context)?, k)?;
        let u: f64 = rng.gen();
        let token = sample_with_uniform(&sparse, u);
        uniforms.push(u);
        context.push(token);
        packet.draft_tokens.push(token);
        packet.dists.push(sparse);
    }
    Ok((packet, uniforms))
}

pub fn draft_round<M, R>(slm: &M, prefix: &[TokenId], gamma: usize, k: usize, rng: &mut R) -> Result<DraftPacket>
where
    M: TokenModel + ?Sized,
    R: Rng + ?Sized,
{
    draft_round_traced(slm, prefix, gamma, k, rng).map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    Accept,
    Reject { corrective: TokenId },
}

/// Verifies one drafted token against the target distribution.
///
/// Draws one uniform for the accept test and, on rejection, one more for the
/// corrective token. Both are appended to `uniforms`.
pub fn judge_position<R: Rng + ?Sized>(
    target: &Distribution,
    draft: &SparseTopK,
    token: TokenId,
    rule: AcceptRule,
    rng: &mut R,
    uniforms: &mut Vec<f64>,
) -> Result<Judgement> {
    let q = draft.prob(token);
    let p = target.prob(token);
    let u: f64 = rng.gen();
    uniforms.push(u);
    let accepted = match rule {
        AcceptRule::Standard => accept_decision(p, q, u)?,
        AcceptRule::AcceptAll => true,
    };
    if accepted {
        return Ok(Judgement::Accept);
    }
    let adjusted = residual(target, &densify(draft))?;
    let v: f64 = rng.gen();
    uniforms.push(v);
    Ok(Judgement::Reject {
        corrective: sample_with_uniform(&adjusted, v),
    })
}

/// Full verifier pass with an explicit acceptance rule and audit output.
pub fn verify_round_traced<M, R>(
    llm: &M,
    prefix: &[TokenId],
    packet: &DraftPacket,
    target_temp: f64,
    rule: AcceptRule,
    rng: &mut R,
) -> Result<(VerifyOutcome, Vec<bool>, Vec<f64>)>
where
    M: TokenModel + ?Sized,
    R: Rng + ?Sized,
{
    packet.validate(llm.vocab_size())?;
    let mut context = prefix.to_vec();
    let mut flags = Vec::with_capacity(packet.gamma());
    let mut uniforms = Vec::with_capacity(packet.gamma() + 1);
    let mut emitted = Vec::with_capacity(packet.gamma() + 1);

    for (&token, dist) in packet.draft_tokens.iter().zip(&packet.dists) {
        let target = softmax_temp(&logits_checked(llm, &context)?, target_temp)?;
        match judge_position(&target, dist, token, rule, rng, &mut uniforms)? {
            Judgement::Accept => {
                flags.push(true);
                emitted.push(token);
                context.push(token);
            }
            Judgement::Reject { corrective } => {
                flags.push(false);
                let accepted_count = emitted.len();
                emitted.push(corrective);
                let outcome = VerifyOutcome {
                    accepted_count,
                    emitted_tokens: emitted,
                    position_j: accepted_count + 1,
                    bonus: false,
                };
                return Ok((outcome, flags, uniforms));
            }
        }
    }

    let target = softmax_temp(&logits_checked(llm, &context)?, target_temp)?;
    let u: f64 = rng.gen();
    uniforms.push(u);
    emitted.push(sample_with_uniform(&target, u));
    let accepted_count = packet.gamma();
    let outcome = VerifyOutcome {
        accepted_count,
        emitted_tokens: emitted,
        position_j: accepted_count + 1,
        bonus: true,
    };
    Ok((outcome, flags, uniforms))
}

pub fn verify_round<M, R>(
    llm: &M,
    prefix: &[TokenId],
    packet: &DraftPacket,
    target_temp: f64,
    rng: &mut R,
) -> Result<VerifyOutcome>
where
    M: TokenModel + ?Sized,
    R: Rng + ?Sized,
{
    verify_round_traced(llm, prefix, packet, target_temp, AcceptRule::Standard, rng).map(|(o, _, _)| o)
}

/// Protocol parameters for [`run_episode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub gamma: usize,
    pub k: usize,
    pub target_temp: f64,
    pub rule: AcceptRule,
}

/// Runs `n_rounds` draft-verify rounds, growing the shared context with each
/// round's emitted tokens.
pub fn run_episode<S, L, R>(
    slm: &S,
    llm: &L,
    prefix: &[TokenId],
    cfg: EpisodeConfig,
    n_rounds: usize,
    rng: &mut R,
) -> Result<Vec<RoundTrace>>
where
    S: TokenModel + ?Sized,
    L: TokenModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut traces = Vec::with_capacity(n_rounds);
    for_each_round(slm, llm, prefix, cfg, n_rounds, rng, |t| traces.push(t))?;
    Ok(traces)
}

/// Streaming form of [`run_episode`]: hands each trace to `on_round` instead
/// of collecting them.
pub fn for_each_round<S, L, R, F>(
    slm: &S,
    llm: &L,
    prefix: &[TokenId],
    cfg: EpisodeConfig,
    n_rounds: usize,
    rng: &mut R,
    mut on_round: F,
) -> Result<()>
where
    S: TokenModel + ?Sized,
    L: TokenModel + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(RoundTrace),
{
    if slm.vocab_size() != llm.vocab_size() {
        return invalid(format!(
            "drafter vocab {} != target vocab {}",
            slm.vocab_size(),
            llm.vocab_size()
        ));
    }
    let mut context = prefix.to_vec();
    for _ in 0..n_rounds {
        let (packet, draft_uniforms) = draft_round_traced(slm, &context, cfg.gamma, cfg.k, rng)?;
        let (outcome, accept_flags, verify_uniforms) =
            verify_round_traced(llm, &context, &packet, cfg.target_temp, cfg.rule, rng)?;
        context.extend_from_slice(&outcome.emitted_tokens);
        on_round(RoundTrace {
            packet,
            outcome,
            accept_flags,
            draft_uniforms,
            verify_uniforms,
        });
    }
    Ok(())
}

/// Law of the token emitted at a single position when the drafter proposes
/// from `draft` and the verifier targets `target`:
/// `min(p, d) + (1 - alpha) * norm(max(0, p - d))`.
pub fn single_position_law(target: &Distribution, draft: &Distribution) -> Result<Distribution> {
    let alpha = analytic_alpha(target, draft)?;
    let overlap: Vec<f64> = target
        .probs()
        .iter()
        .zip(draft.probs())
        .map(|(&p, &d)| p.min(d))
        .collect();
    let law = match residual(target, draft) {
        Ok(res) => overlap
            .iter()
            .zip(res.probs())
            .map(|(&m, &r)| m + (1.0 - alpha) * r)
            .collect(),
        Err(Error::DegenerateResidual) => overlap,
        Err(e) => return Err(e),
    };
    Distribution::from_weights(law)
}

/// Samples one drafted token from `draft` and runs it through the verifier;
/// returns the emitted token.
pub fn emit_single_position<R: Rng + ?Sized>(
    target: &Distribution,
    draft: &SparseTopK,
    rule: AcceptRule,
    rng: &mut R,
) -> Result<TokenId> {
    let token = sample(draft, rng);
    let mut scratch = Vec::new();
    Ok(match judge_position(target, draft, token, rule, rng, &mut scratch)? {
        Judgement::Accept => token,
        Judgement::Reject { corrective } => corrective,
    })
}
