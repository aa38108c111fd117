//! Synthetic drafter/target pairs and the Monte Carlo harness.
//!
//! A [`SyntheticPairSpec`] fully determines a pair of [`SyntheticModel`]s:
//! target logits are standard normal draws, drafter logits mix them with an
//! independent normal draw, `lambda * target + (1 - lambda) * noise`, so
//! `lambda = 1` gives identical models. `Static` pairs ignore the context;
//! `Markov` pairs condition on the previous token (an empty context uses the
//! row of token 0).
//!
//! Experiments are split into replications of at most
//! [`ROUNDS_PER_REPLICATION`] rounds, each an independent episode from an
//! empty prefix with its own rng seeded by [`replication_seed`]. Everything
//! aggregated is an integer count, so results do not depend on scheduling.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::planner::{plan_for_latency, speedup, Mode};
use crate::specdec::{
    draft_round, for_each_round, verify_round_traced, AcceptRule, EpisodeConfig, TokenModel,
};
use crate::transport::{ideal_uplink_bits, latency_params, ChannelConfig, LatencyParams};
use crate::{analytic_alpha, softmax_temp, top_k_sparsify, tv_distance, Distribution, LogitVector, TokenId};

pub const SCHEMA_VERSION: u32 = 1;
pub const ROUNDS_PER_REPLICATION: usize = 1000;
const SAMPLES_PER_REPLICATION: usize = 4096;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` of an experiment seeded with `seed`.
pub fn replication_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    #[default]
    Static,
    Markov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPairSpec {
    pub vocab_size: usize,
    pub kind: PairKind,
    /// Logit-space weight of the target in the drafter, in `[0, 1]`.
    pub overlap_lambda: f64,
    pub target_temp: f64,
    pub seed: u64,
}

impl SyntheticPairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.vocab_size > u32::MAX as usize {
            return invalid(format!("vocab_size = {} must be at least 2", self.vocab_size));
        }
        if !(0.0..=1.0).contains(&self.overlap_lambda) {
            return invalid(format!("overlap_lambda = {} must lie in [0, 1]", self.overlap_lambda));
        }
        if !(self.target_temp >= 0.0 && self.target_temp.is_finite()) {
            return invalid(format!("target_temp = {} must be >= 0", self.target_temp));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    vocab_size: usize,
    kind: PairKind,
    rows: Vec<Vec<f64>>,
}

impl SyntheticModel {
    pub fn context_row(&self, context: &[TokenId]) -> usize {
        match self.kind {
            PairKind::Static => 0,
            PairKind::Markov => context.last().map_or(0, |&t| t as usize),
        }
    }

    pub fn row_logits(&self, row: usize) -> LogitVector {
        LogitVector::new(self.rows[row].clone()).expect("finite by construction")
    }

    pub fn num_contexts(&self) -> usize {
        self.rows.len()
    }
}

impl TokenModel for SyntheticModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, context: &[TokenId]) -> LogitVector {
        self.row_logits(self.context_row(context))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub spec: SyntheticPairSpec,
    pub slm: SyntheticModel,
    pub llm: SyntheticModel,
}

impl SyntheticPair {
    /// Target distribution for a context row.
    pub fn target_dist(&self, row: usize) -> Result<Distribution> {
        softmax_temp(&self.llm.row_logits(row), self.spec.target_temp)
    }

    /// Densified top-`k` drafter distribution for a context row.
    pub fn draft_dist(&self, row: usize, k: usize) -> Result<Distribution> {
        Ok(top_k_sparsify(&self.slm.row_logits(row), k)?.densify())
    }

    /// `sum min(p, y)` averaged uniformly over context rows.
    pub fn analytic_alpha(&self, k: usize) -> Result<f64> {
        let n = self.llm.num_contexts();
        let mut total = 0.0;
        for row in 0..n {
            total += analytic_alpha(&self.target_dist(row)?, &self.draft_dist(row, k)?)?;
        }
        Ok(total / n as f64)
    }
}

pub fn make_pair(spec: &SyntheticPairSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let contexts = match spec.kind {
        PairKind::Static => 1,
        PairKind::Markov => spec.vocab_size,
    };
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut target_rows = Vec::with_capacity(contexts);
    let mut draft_rows = Vec::with_capacity(contexts);
    for _ in 0..contexts {
        let target = draw(spec.vocab_size);
        let noise = draw(spec.vocab_size);
        let lambda = spec.overlap_lambda;
        let draft = target
            .iter()
            .zip(&noise)
            .map(|(&t, &z)| if lambda == 1.0 { t } else { lambda * t + (1.0 - lambda) * z })
            .collect();
        target_rows.push(target);
        draft_rows.push(draft);
    }
    let model = |rows| SyntheticModel {
        vocab_size: spec.vocab_size,
        kind: spec.kind,
        rows,
    };
    Ok(SyntheticPair {
        spec: *spec,
        slm: model(draft_rows),
        llm: model(target_rows),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub rounds: u64,
    pub gamma: usize,
    pub k: usize,
    pub total_tokens: u64,
    /// Accepted draft tokens over examined draft positions.
    pub empirical_alpha: f64,
    /// Acceptance rate at each draft position, conditional on reaching it.
    pub empirical_alpha_by_position: Vec<f64>,
    pub mean_tokens_per_round: f64,
    pub simulated_wall_time: f64,
    pub throughput: f64,
    pub standalone_throughput: f64,
    pub measured_speedup: f64,
    /// Count-weighted mean over contexts of the TV distance between the
    /// empirical next-token frequencies and the target distribution.
    pub tv_next_token: f64,
    pub latency: LatencyParams,
    pub round_time: f64,
}

#[derive(Debug, Default)]
struct Tally {
    rounds: u64,
    tokens: u64,
    attempts: Vec<u64>,
    accepts: Vec<u64>,
    transitions: BTreeMap<(usize, TokenId), u64>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.rounds += other.rounds;
        self.tokens += other.tokens;
        if self.attempts.len() < other.attempts.len() {
            self.attempts.resize(other.attempts.len(), 0);
            self.accepts.resize(other.accepts.len(), 0);
        }
        for (i, (a, c)) in other.attempts.iter().zip(&other.accepts).enumerate() {
            self.attempts[i] += a;
            self.accepts[i] += c;
        }
        for (key, n) in other.transitions {
            *self.transitions.entry(key).or_default() += n;
        }
        self
    }
}

fn run_replication(pair: &SyntheticPair, cfg: EpisodeConfig, rounds: usize, seed: u64) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally {
        attempts: vec![0; cfg.gamma],
        accepts: vec![0; cfg.gamma],
        ..Tally::default()
    };
    let mut context: Vec<TokenId> = Vec::new();
    for_each_round(&pair.slm, &pair.llm, &[], cfg, rounds, &mut rng, |trace| {
        tally.rounds += 1;
        tally.tokens += trace.outcome.emitted_tokens.len() as u64;
        for (i, &ok) in trace.accept_flags.iter().enumerate() {
            tally.attempts[i] += 1;
            tally.accepts[i] += ok as u64;
        }
        for &tok in &trace.outcome.emitted_tokens {
            let row = pair.llm.context_row(&context);
            *tally.transitions.entry((row, tok)).or_default() += 1;
            context.push(tok);
        }
    })?;
    Ok(tally)
}

fn replicate<T, F>(total: usize, per: usize, seed: u64, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let reps = total.div_ceil(per);
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let n = per.min(total - i * per);
            job(n, replication_seed(seed, i as u64))
        })
        .collect()
}

fn tv_from_transitions(pair: &SyntheticPair, transitions: &BTreeMap<(usize, TokenId), u64>) -> Result<f64> {
    let mut by_row: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for (&(row, tok), &n) in transitions {
        by_row.entry(row).or_insert_with(|| vec![0; pair.spec.vocab_size])[tok as usize] += n;
    }
    let total: u64 = transitions.values().sum();
    let mut weighted = 0.0;
    for (row, counts) in by_row {
        let n: u64 = counts.iter().sum();
        let emp = Distribution::from_weights(counts.iter().map(|&c| c as f64).collect())?;
        weighted += n as f64 * tv_distance(&emp, &pair.target_dist(row)?)?;
    }
    Ok(if total == 0 { 0.0 } else { weighted / total as f64 })
}

fn check_channel(spec: &SyntheticPairSpec, channel: &ChannelConfig) -> Result<()> {
    channel.validate()?;
    if channel.vocab_size != spec.vocab_size {
        return invalid(format!(
            "channel vocab {} != model vocab {}",
            channel.vocab_size, spec.vocab_size
        ));
    }
    Ok(())
}

/// Simulates `n_rounds` draft-verify rounds and charges each one
/// `gamma (t_slm + T_V(k)) + t_llm` seconds (plus the verdict downlink when
/// enabled).
pub fn monte_carlo(
    spec: &SyntheticPairSpec,
    gamma: usize,
    k: usize,
    channel: &ChannelConfig,
    n_rounds: usize,
    seed: u64,
) -> Result<Metrics> {
    let pair = make_pair(spec)?;
    monte_carlo_pair(&pair, gamma, k, channel, n_rounds, seed)
}

pub fn monte_carlo_pair(
    pair: &SyntheticPair,
    gamma: usize,
    k: usize,
    channel: &ChannelConfig,
    n_rounds: usize,
    seed: u64,
) -> Result<Metrics> {
    check_channel(&pair.spec, channel)?;
    if n_rounds == 0 {
        return invalid("n_rounds must be at least 1");
    }
    if gamma == 0 {
        return invalid("gamma must be at least 1");
    }
    let latency = latency_params(channel, k)?;
    let cfg = EpisodeConfig {
        gamma,
        k,
        target_temp: pair.spec.target_temp,
        rule: AcceptRule::Standard,
    };
    let tally = replicate(n_rounds, ROUNDS_PER_REPLICATION, seed, |n, s| run_replication(pair, cfg, n, s))?
        .into_iter()
        .fold(Tally::default(), Tally::merge);

    let t_v = ideal_uplink_bits(1, k, channel)? as f64 / channel.uplink_rate;
    let round_time = gamma as f64 * (channel.t_slm + t_v) + channel.t_llm + channel.downlink_time();
    let rounds = tally.rounds;
    let wall = rounds as f64 * round_time;
    let throughput = tally.tokens as f64 / wall;
    let standalone = 1.0 / channel.t_llm;
    let attempts: u64 = tally.attempts.iter().sum();
    let accepts: u64 = tally.accepts.iter().sum();
    let by_position = tally
        .attempts
        .iter()
        .zip(&tally.accepts)
        .map(|(&a, &c)| if a == 0 { 0.0 } else { c as f64 / a as f64 })
        .collect();

    Ok(Metrics {
        schema_version: SCHEMA_VERSION,
        rounds,
        gamma,
        k,
        total_tokens: tally.tokens,
        empirical_alpha: if attempts == 0 { 0.0 } else { accepts as f64 / attempts as f64 },
        empirical_alpha_by_position: by_position,
        mean_tokens_per_round: tally.tokens as f64 / rounds as f64,
        simulated_wall_time: wall,
        throughput,
        standalone_throughput: standalone,
        measured_speedup: throughput / standalone,
        tv_next_token: tv_from_transitions(pair, &tally.transitions)?,
        latency,
        round_time,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GammaChoice {
    /// Plan `gamma` per K from the measured acceptance rate.
    Auto,
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSweepRow {
    pub k: usize,
    pub alpha_k: f64,
    #[serde(rename = "L")]
    pub latency: f64,
    pub gamma: usize,
    pub mode: Mode,
    pub predicted_s: f64,
    pub measured_s: f64,
    pub mean_tokens_per_round: f64,
}

/// For each K: measures the acceptance rate with a single-position pilot run,
/// chooses `gamma`, simulates, and reports predicted against measured speedup.
///
/// Rows are sorted by `(k, gamma)`.
pub fn k_sweep(
    spec: &SyntheticPairSpec,
    gammas: &GammaChoice,
    ks: &[usize],
    channel: &ChannelConfig,
    n_rounds: usize,
    seed: u64,
) -> Result<Vec<KSweepRow>> {
    let pair = make_pair(spec)?;
    check_channel(spec, channel)?;
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::new();
    for k in ks {
        let k_seed = mix64(seed ^ mix64(k as u64));
        let pilot = monte_carlo_pair(&pair, 1, k, channel, n_rounds, k_seed)?;
        let alpha_k = pilot.empirical_alpha;
        let latency = pilot.latency.l;
        let planned = plan_for_latency(alpha_k.clamp(1e-9, 1.0 - 1e-9), latency);
        let (mode, candidates) = match gammas {
            GammaChoice::Auto => (Some(planned.mode), vec![planned.gamma_star as usize]),
            GammaChoice::List(list) => {
                let mut list = list.clone();
                list.sort_unstable();
                list.dedup();
                (None, list)
            }
        };
        for gamma in candidates {
            if gamma == 0 {
                return invalid("gamma must be at least 1");
            }
            let run = monte_carlo_pair(&pair, gamma, k, channel, n_rounds, mix64(k_seed ^ gamma as u64))?;
            let predicted = speedup(alpha_k, gamma as u32, latency);
            rows.push(KSweepRow {
                k,
                alpha_k,
                latency,
                gamma,
                mode: mode.unwrap_or(if predicted < 1.0 { Mode::Standalone } else { Mode::Dsd }),
                predicted_s: predicted,
                measured_s: run.measured_speedup,
                mean_tokens_per_round: run.mean_tokens_per_round,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub schema_version: u32,
    pub vocab_size: usize,
    pub gamma: usize,
    pub k: usize,
    pub n_samples: u64,
    pub target_temp: f64,
    pub tv: f64,
    pub threshold: f64,
    /// Greedy target: PASS means every emitted token was the argmax.
    pub greedy: bool,
    pub pass: bool,
    pub target: Vec<f64>,
    pub empirical: Vec<f64>,
}

/// Checks that the first token emitted by the protocol from an empty prefix
/// follows the target distribution.
///
/// PASS iff `TV <= 3 sqrt(|V| / n)`; with a greedy target, iff every draw
/// returned the argmax.
pub fn equivalence_report(
    spec: &SyntheticPairSpec,
    gamma: usize,
    k: usize,
    n_samples: usize,
    seed: u64,
    rule: AcceptRule,
) -> Result<EquivalenceReport> {
    let pair = make_pair(spec)?;
    if n_samples == 0 {
        return invalid("n_samples must be at least 1");
    }
    let target = pair.target_dist(pair.llm.context_row(&[]))?;
    let vocab = spec.vocab_size;
    let counts = replicate(n_samples, SAMPLES_PER_REPLICATION, seed, |n, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut counts = vec![0u64; vocab];
        for _ in 0..n {
            let packet = draft_round(&pair.slm, &[], gamma, k, &mut rng)?;
            let (outcome, _, _) = verify_round_traced(&pair.llm, &[], &packet, spec.target_temp, rule, &mut rng)?;
            counts[outcome.emitted_tokens[0] as usize] += 1;
        }
        Ok(counts)
    })?
    .into_iter()
    .fold(vec![0u64; vocab], |mut acc, c| {
        acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        acc
    });

    let empirical = Distribution::from_weights(counts.iter().map(|&c| c as f64).collect())?;
    let tv = tv_distance(&empirical, &target)?;
    let threshold = 3.0 * (vocab as f64 / n_samples as f64).sqrt();
    let greedy = spec.target_temp == 0.0;
    let pass = if greedy {
        counts[target.argmax() as usize] == n_samples as u64
    } else {
        tv <= threshold
    };
    Ok(EquivalenceReport {
        schema_version: SCHEMA_VERSION,
        vocab_size: vocab,
        gamma,
        k,
        n_samples: n_samples as u64,
        target_temp: spec.target_temp,
        tv,
        threshold,
        greedy,
        pass,
        target: target.probs().to_vec(),
        empirical: empirical.probs().to_vec(),
    })
}
