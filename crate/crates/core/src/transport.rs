//! Uplink/downlink accounting and the TK-SLT wire format.
//!
//! Two notions of size coexist here. [`ideal_uplink_bits`] is the idealized
//! payload the latency model charges for (probability bits, optionally plus
//! index bits). [`encode_draft`] produces the actual byte-aligned packet,
//! which is larger because ids are plain `u32`.
//!
//! Draft packet layout, little-endian:
//!
//! ```text
//! "TKSL" | version u8 = 1 | flags u8 (bit0: 32-bit probs) | vocab_size u32 | gamma u16 | k u16
//! gamma x ( draft_token u32 | k x ( token_id u32 | prob f16 or f32 ) )
//! ```
//!
//! Verdict layout: `position_j u16 | final_token u32 | accepted_count u16`.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::specdec::{DraftPacket, VerifyOutcome};
use crate::{SparseTopK, TokenId};

pub const MAGIC: [u8; 4] = *b"TKSL";
pub const VERSION: u8 = 1;
const FLAG_PROB32: u8 = 0b1;
const HEADER_LEN: usize = 14;
pub const VERDICT_LEN: usize = 8;

/// Bits per verdict on the downlink: final token plus position.
pub const DOWNLINK_VERDICT_BITS: u64 = 32 + 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Uplink rate, bits per second.
    pub uplink_rate: f64,
    /// Downlink rate, bits per second.
    pub downlink_rate: f64,
    /// Bits per transmitted probability, 16 or 32.
    pub prob_bits: u32,
    pub vocab_size: usize,
    /// Seconds per target-model step.
    pub t_llm: f64,
    /// Seconds per drafter step.
    pub t_slm: f64,
    pub include_index_bits: bool,
    pub include_downlink: bool,
}

impl ChannelConfig {
    /// Channel whose full-vocabulary relative costs are `b_full` (uplink)
    /// and `c` (drafting), given the target step time.
    pub fn from_ratios(vocab_size: usize, prob_bits: u32, b_full: f64, c: f64, t_llm: f64) -> Result<Self> {
        if !(b_full > 0.0 && c > 0.0 && t_llm > 0.0) {
            return invalid("b_full, c and t_llm must be positive");
        }
        let full_bits = vocab_size as f64 * prob_bits as f64;
        let cfg = Self {
            uplink_rate: full_bits / (b_full * t_llm),
            downlink_rate: 50e6,
            prob_bits,
            vocab_size,
            t_llm,
            t_slm: c * t_llm,
            include_index_bits: false,
            include_downlink: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 32k vocabulary, FP16 probabilities over a 50 Mbit/s uplink, with the
    /// target step chosen so that `b_full = 0.23` and `c = 0.07`.
    pub fn reference_32k() -> Self {
        let t_v = 32_000.0 * 16.0 / 50e6;
        let t_llm = t_v / 0.23;
        Self {
            uplink_rate: 50e6,
            downlink_rate: 50e6,
            prob_bits: 16,
            vocab_size: 32_000,
            t_llm,
            t_slm: 0.07 * t_llm,
            include_index_bits: false,
            include_downlink: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.uplink_rate) || !positive(self.downlink_rate) {
            return invalid("link rates must be positive");
        }
        if !positive(self.t_llm) || !positive(self.t_slm) {
            return invalid("model step times must be positive");
        }
        if self.prob_bits != 16 && self.prob_bits != 32 {
            return invalid(format!("prob_bits = {} must be 16 or 32", self.prob_bits));
        }
        if self.vocab_size < 1 || self.vocab_size > u32::MAX as usize {
            return invalid("vocab_size must fit in u32 and be positive");
        }
        Ok(())
    }

    /// Bits needed to address one vocabulary entry.
    pub fn index_bits(&self) -> u64 {
        (self.vocab_size.max(2) as u64 - 1).ilog2() as u64 + 1
    }

    /// Seconds spent returning one verdict; zero unless `include_downlink`.
    pub fn downlink_time(&self) -> f64 {
        if self.include_downlink {
            DOWNLINK_VERDICT_BITS as f64 / self.downlink_rate
        } else {
            0.0
        }
    }
}

/// Relative per-token costs with respect to one target-model step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyParams {
    /// Uplink transmission of one token's distribution.
    pub b: f64,
    /// One drafter step.
    pub c: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

/// Idealized uplink payload for `gamma` drafted tokens with top-`k` sparsity.
pub fn ideal_uplink_bits(gamma: usize, k: usize, cfg: &ChannelConfig) -> Result<u64> {
    if k == 0 || k > cfg.vocab_size {
        return invalid(format!("k = {k} outside 1..={}", cfg.vocab_size));
    }
    let per_entry = cfg.prob_bits as u64 + if cfg.include_index_bits { cfg.index_bits() } else { 0 };
    Ok(gamma as u64 * k as u64 * per_entry)
}

pub fn latency_params(cfg: &ChannelConfig, k: usize) -> Result<LatencyParams> {
    cfg.validate()?;
    let t_v = ideal_uplink_bits(1, k, cfg)? as f64 / cfg.uplink_rate;
    let b = t_v / cfg.t_llm;
    let c = cfg.t_slm / cfg.t_llm;
    Ok(LatencyParams { b, c, l: b + c })
}

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::MalformedPacket(msg.into()))
}

pub fn encode_draft(packet: &DraftPacket, cfg: &ChannelConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    packet.validate(cfg.vocab_size)?;
    let gamma = u16::try_from(packet.gamma()).or_else(|_| invalid("gamma does not fit in u16"))?;
    let k = u16::try_from(packet.k).or_else(|_| invalid("k does not fit in u16"))?;
    let width = cfg.prob_bits as usize / 8;

    let mut out = Vec::with_capacity(HEADER_LEN + packet.gamma() * (4 + packet.k * (4 + width)));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(if cfg.prob_bits == 32 { FLAG_PROB32 } else { 0 });
    out.extend_from_slice(&(cfg.vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&gamma.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    for (&token, dist) in packet.draft_tokens.iter().zip(&packet.dists) {
        out.extend_from_slice(&token.to_le_bytes());
        for &(id, p) in dist.entries() {
            out.extend_from_slice(&id.to_le_bytes());
            if cfg.prob_bits == 32 {
                out.extend_from_slice(&(p as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&f16::from_f64(p).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let Some(slice) = self.buf.get(self.pos..end) else {
            return malformed(format!("truncated at byte {} (need {N} more)", self.pos));
        };
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
}

/// Parses a draft packet. Probabilities are renormalized after dequantization.
pub fn decode_draft(bytes: &[u8], cfg: &ChannelConfig) -> Result<DraftPacket> {
    cfg.validate()?;
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take::<4>()? != MAGIC {
        return malformed("bad magic");
    }
    let version = r.u8()?;
    if version != VERSION {
        return malformed(format!("unsupported version {version}"));
    }
    let flags = r.u8()?;
    if flags & !FLAG_PROB32 != 0 {
        return malformed(format!("unknown flag bits {flags:#04x}"));
    }
    let prob32 = flags & FLAG_PROB32 != 0;
    if prob32 != (cfg.prob_bits == 32) {
        return malformed("probability width disagrees with channel config");
    }
    let vocab = r.u32()? as usize;
    if vocab != cfg.vocab_size {
        return malformed(format!("vocab size {vocab} != configured {}", cfg.vocab_size));
    }
    let gamma = r.u16()? as usize;
    let k = r.u16()? as usize;
    if gamma == 0 {
        return malformed("gamma = 0");
    }
    if k == 0 || k > vocab {
        return malformed(format!("k = {k} outside 1..={vocab}"));
    }
    let width = if prob32 { 4 } else { 2 };
    let expected = HEADER_LEN + gamma * (4 + k * (4 + width));
    if bytes.len() < expected {
        return malformed(format!("truncated: {} bytes, expected {expected}", bytes.len()));
    }
    if bytes.len() > expected {
        return malformed(format!("{} trailing bytes", bytes.len() - expected));
    }

    let check_id = |id: TokenId| -> Result<TokenId> {
        if (id as usize) < vocab {
            Ok(id)
        } else {
            malformed(format!("token id {id} >= vocab size {vocab}"))
        }
    };
    let mut packet = DraftPacket {
        draft_tokens: Vec::with_capacity(gamma),
        dists: Vec::with_capacity(gamma),
        k,
    };
    for pos in 0..gamma {
        let draft = check_id(r.u32()?)?;
        let mut entries = Vec::with_capacity(k);
        for _ in 0..k {
            let id = check_id(r.u32()?)?;
            let p = if prob32 {
                f32::from_le_bytes(r.take()?) as f64
            } else {
                f16::from_le_bytes(r.take()?).to_f64()
            };
            if !(p.is_finite() && p >= 0.0) {
                return malformed(format!("position {pos}: invalid probability {p}"));
            }
            entries.push((id, p));
        }
        let sum: f64 = entries.iter().map(|e| e.1).sum();
        if !(0.98..=1.02).contains(&sum) {
            return malformed(format!("position {pos}: probabilities sum to {sum}"));
        }
        for e in &mut entries {
            e.1 /= sum;
        }
        let dist = SparseTopK::from_entries(entries, vocab)
            .map_err(|e| Error::MalformedPacket(format!("position {pos}: {e}")))?;
        if !dist.contains(draft) {
            return malformed(format!("position {pos}: draft token {draft} outside sparse support"));
        }
        packet.draft_tokens.push(draft);
        packet.dists.push(dist);
    }
    Ok(packet)
}

/// The downlink message: enough for the device to rebuild the outcome from
/// its own draft.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub position_j: u16,
    pub final_token: TokenId,
    pub accepted_count: u16,
}

impl Verdict {
    pub fn from_outcome(outcome: &VerifyOutcome) -> Result<Self> {
        let accepted_count =
            u16::try_from(outcome.accepted_count).or_else(|_| invalid("accepted_count does not fit in u16"))?;
        let position_j = u16::try_from(outcome.position_j).or_else(|_| invalid("position_j does not fit in u16"))?;
        Ok(Self {
            position_j,
            final_token: outcome.final_token(),
            accepted_count,
        })
    }

    /// Rebuilds the full outcome from the device-side copy of the draft.
    pub fn to_outcome(&self, packet: &DraftPacket) -> Result<VerifyOutcome> {
        let n = self.accepted_count as usize;
        if n > packet.gamma() {
            return malformed(format!("accepted_count {n} exceeds gamma {}", packet.gamma()));
        }
        let mut emitted = packet.draft_tokens[..n].to_vec();
        emitted.push(self.final_token);
        Ok(VerifyOutcome {
            accepted_count: n,
            emitted_tokens: emitted,
            position_j: n + 1,
            bonus: n == packet.gamma(),
        })
    }
}

pub fn encode_verdict(outcome: &VerifyOutcome) -> Result<Vec<u8>> {
    let v = Verdict::from_outcome(outcome)?;
    let mut out = Vec::with_capacity(VERDICT_LEN);
    out.extend_from_slice(&v.position_j.to_le_bytes());
    out.extend_from_slice(&v.final_token.to_le_bytes());
    out.extend_from_slice(&v.accepted_count.to_le_bytes());
    Ok(out)
}

pub fn decode_verdict(bytes: &[u8]) -> Result<Verdict> {
    if bytes.len() != VERDICT_LEN {
        return malformed(format!("verdict is {} bytes, expected {VERDICT_LEN}", bytes.len()));
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    let v = Verdict {
        position_j: r.u16()?,
        final_token: r.u32()?,
        accepted_count: r.u16()?,
    };
    if v.position_j as u32 != v.accepted_count as u32 + 1 {
        return malformed("position_j must equal accepted_count + 1");
    }
    Ok(v)
}
