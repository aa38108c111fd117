//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::f64::consts::E;
use std::time::{Duration, Instant};

use dsd_core::planner::critical_numerator;
use dsd_core::simkit::{k_sweep, make_pair, monte_carlo, GammaChoice, PairKind, SyntheticPairSpec};
use dsd_core::specdec::{emit_single_position, single_position_law, AcceptRule, DraftPacket};
use dsd_core::transport::{
    decode_draft, encode_draft, ideal_uplink_bits, latency_params, ChannelConfig,
};
use dsd_core::{
    as2, brute_force_gamma, expected_tokens, gamma_zero, lambert_w, lambert_wm1_neg_exp, odld, softmax_temp,
    speedup, sweep_table, top_k_sparsify, tv_distance, Distribution, LogitVector, Mode, PlannerInput, WBranch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn draft_length_grid() -> Check {
    let alphas = [0.4, 0.6, 0.8];
    let ls = [0.01, 0.1, 0.2, 0.4, 0.6];
    let expected = [[4, 2, 1, 1, 1], [7, 3, 2, 1, 1], [14, 6, 4, 2, 1]];
    let table = sweep_table(&alphas, &ls, None).map_err(|e| e.to_string())?;
    ensure(table.rows.len() == 15, || format!("{} rows", table.rows.len()))?;
    for (i, &a) in alphas.iter().enumerate() {
        for (j, &l) in ls.iter().enumerate() {
            let row = &table.rows[i * ls.len() + j];
            ensure(row.alpha == a && row.latency == l, || "row order".into())?;
            ensure(row.plan.gamma_star == expected[i][j], || {
                format!("alpha={a} L={l}: gamma*={} expected {}", row.plan.gamma_star, expected[i][j])
            })?;
            let standalone = l == 0.6 && a < 0.7;
            ensure((row.plan.mode == Mode::Standalone) == standalone, || {
                format!("alpha={a} L={l}: mode {} (S*={})", row.plan.mode, row.plan.s_star)
            })?;
        }
    }
    Ok("15/15 cells, standalone at (0.4,0.6) and (0.6,0.6)".into())
}

fn latency_row() -> Check {
    let cfg = ChannelConfig::reference_32k();
    let ks = [3, 32, 320, 3200, 32_000];
    let want = [0.0700, 0.0702, 0.0723, 0.093, 0.300];
    let mut got = Vec::new();
    for (&k, &w) in ks.iter().zip(&want) {
        let l = latency_params(&cfg, k).map_err(|e| e.to_string())?.l;
        ensure((l - w).abs() <= 0.0005, || format!("K={k}: L={l:.5} expected {w}"))?;
        got.push(format!("{l:.4}"));
    }
    Ok(format!("L = [{}]", got.join(", ")))
}

fn payload() -> Check {
    let bits = ideal_uplink_bits(1, 32_000, &ChannelConfig::reference_32k()).map_err(|e| e.to_string())?;
    ensure(bits == 512_000, || format!("{bits} bits"))?;
    Ok(format!("{bits} bits per token (~500 kbit)"))
}

fn random_logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> LogitVector {
    LogitVector::new((0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn one_step_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE0E0);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=16);
        let temp = rng.gen_range(0.25..3.0);
        let target = softmax_temp(&random_logits(&mut rng, n, 4.0), temp).unwrap();
        let drafter = random_logits(&mut rng, n, 4.0);
        for k in 1..=n {
            let y = top_k_sparsify(&drafter, k).unwrap().densify();
            let law = single_position_law(&target, &y).map_err(|e| e.to_string())?;
            for (a, b) in law.probs().iter().zip(target.probs()) {
                worst = worst.max((a - b).abs());
            }
            cases += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;

    let n_mc = 200_000;
    let mut worst_tv = 0.0f64;
    for _ in 0..5 {
        let n = rng.gen_range(4..=16);
        let k = rng.gen_range(1..=n);
        let target = softmax_temp(&random_logits(&mut rng, n, 3.0), 1.0).unwrap();
        let sparse = top_k_sparsify(&random_logits(&mut rng, n, 3.0), k).unwrap();
        let mut counts = vec![0.0; n];
        for _ in 0..n_mc {
            let t = emit_single_position(&target, &sparse, AcceptRule::Standard, &mut rng)
                .map_err(|e| e.to_string())?;
            counts[t as usize] += 1.0;
        }
        let emp = Distribution::from_weights(counts).unwrap();
        worst_tv = worst_tv.max(tv_distance(&emp, &target).unwrap());
    }
    ensure(worst_tv <= 0.01, || format!("Monte Carlo TV {worst_tv}"))?;
    Ok(format!("{cases} (pair, K) cases, max |law - P| = {worst:.1e}; MC TV max {worst_tv:.4}"))
}

fn acceptance_rate_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1FA);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let vocab = rng.gen_range(4..=64);
        let spec = SyntheticPairSpec {
            vocab_size: vocab,
            kind: PairKind::Static,
            overlap_lambda: rng.gen_range(0.0..1.0),
            target_temp: rng.gen_range(0.5..2.0),
            seed: rng.gen(),
        };
        let k = rng.gen_range(1..=vocab);
        let channel = ChannelConfig::from_ratios(vocab, 16, 0.23, 0.07, 0.05).unwrap();
        let analytic = make_pair(&spec).unwrap().analytic_alpha(k).unwrap();
        let m = monte_carlo(&spec, 1, k, &channel, 100_000, i).map_err(|e| e.to_string())?;
        let d = (m.empirical_alpha - analytic).abs();
        worst = worst.max(d);
        ensure(d <= 0.01, || {
            format!("spec {i}: empirical {} vs analytic {analytic}", m.empirical_alpha)
        })?;
    }
    Ok(format!("20 specs, max |alpha_emp - alpha| = {worst:.4}"))
}

fn expected_tokens_law() -> Check {
    let spec = SyntheticPairSpec {
        vocab_size: 32,
        kind: PairKind::Static,
        overlap_lambda: 0.6,
        target_temp: 1.0,
        seed: 6,
    };
    let k = 16;
    let channel = ChannelConfig::from_ratios(32, 16, 0.23, 0.07, 0.05).unwrap();
    let alpha = make_pair(&spec).unwrap().analytic_alpha(k).unwrap();
    let mut parts = Vec::new();
    for gamma in [1, 2, 4, 8] {
        let m = monte_carlo(&spec, gamma, k, &channel, 50_000, 60 + gamma as u64).map_err(|e| e.to_string())?;
        let want = expected_tokens(alpha, gamma as u32);
        let rel = (m.mean_tokens_per_round / want - 1.0).abs();
        ensure(rel <= 0.01, || {
            format!("gamma={gamma}: {} vs {want} (rel {rel:.4})", m.mean_tokens_per_round)
        })?;
        parts.push(format!("g{gamma} {rel:.4}"));
    }
    Ok(format!("alpha={alpha:.4}, rel errors [{}]", parts.join(", ")))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(move |i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
}

fn lambert_numerics() -> Check {
    let bp = 1.0 / E;
    let residual_ok = |branch, x: f64| -> Result<f64, String> {
        let w = lambert_w(branch, x).map_err(|e| format!("x={x}: {e}"))?;
        let r = (w * w.exp() - x).abs();
        let tol = 1e-12 * x.abs().max(1e-30);
        ensure(r <= tol, || format!("{branch:?} x={x:e}: residual {r:e}"))?;
        match branch {
            WBranch::Principal => ensure(w >= -1.0, || format!("W0({x}) = {w}"))?,
            WBranch::MinusOne => ensure(w <= -1.0, || format!("W-1({x}) = {w}"))?,
        }
        Ok(r / x.abs().max(1e-30))
    };
    let mut worst = 0.0f64;
    let mut points = 0;
    // principal: approach to the branch point, then positive axis
    for off in log_grid(1e-15, bp, 500) {
        worst = worst.max(residual_ok(WBranch::Principal, -bp + off)?);
        points += 1;
    }
    for x in log_grid(1e-300, 1e300, 500) {
        worst = worst.max(residual_ok(WBranch::Principal, x)?);
        points += 1;
    }
    // lower branch: approach to the branch point, then towards 0-
    for off in log_grid(1e-15, 0.3, 500) {
        worst = worst.max(residual_ok(WBranch::MinusOne, -bp + off)?);
        points += 1;
    }
    for mag in log_grid(1e-300, 0.06, 500) {
        worst = worst.max(residual_ok(WBranch::MinusOne, -mag)?);
        points += 1;
    }
    let at_bp = lambert_w(WBranch::MinusOne, -bp).map_err(|e| e.to_string())?;
    ensure((at_bp + 1.0).abs() <= 1e-8, || format!("W-1(-1/e) = {at_bp}"))?;

    let mut agree = 0.0f64;
    for du in log_grid(1e-8, 699.0, 1000) {
        let u = -1.0 - du;
        let a = lambert_wm1_neg_exp(u).map_err(|e| e.to_string())?;
        let b = lambert_w(WBranch::MinusOne, -u.exp()).map_err(|e| e.to_string())?;
        agree = agree.max((a - b).abs());
    }
    ensure(agree <= 1e-9, || format!("log-form disagreement {agree:e}"))?;
    Ok(format!(
        "{points} grid points, max relative residual {worst:.1e}; W-1(-1/e) = {at_bp}; log-form agreement {agree:.1e}"
    ))
}

fn odld_vs_brute_force() -> Check {
    let ls = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let mut cells = 0;
    let mut boundary = 0;
    for i in 1..=19 {
        let alpha = i as f64 * 0.05;
        for &l in &ls {
            let (g, _) = odld(alpha, l / 2.0, l / 2.0).map_err(|e| e.to_string())?;
            let bf = brute_force_gamma(alpha, l, 200);
            ensure(g == bf, || format!("alpha={alpha} L={l}: odld {g} vs brute force {bf}"))?;
            let g0 = gamma_zero(alpha, l).unwrap();
            if g0 < 1.0 {
                boundary += 1;
            } else {
                let num = critical_numerator(alpha, g0, l).abs();
                ensure(num <= 1e-9, || format!("alpha={alpha} L={l}: numerator {num:e}"))?;
            }
            cells += 1;
        }
    }
    ensure(cells >= 200 && boundary > 0, || format!("{cells} cells, {boundary} boundary"))?;
    Ok(format!("{cells}/{cells} cells agree ({boundary} with gamma0 < 1)"))
}

fn speedup_curve_shape() -> Check {
    let curve = |a: f64, l: f64| (1..=200).map(|g| speedup(a, g, l)).collect::<Vec<_>>();
    let c = curve(0.8, 0.01);
    let peak = c
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > c[best] { i } else { best });
    ensure(peak + 1 == 14, || format!("peak at gamma={}", peak + 1))?;
    ensure(c[..=peak].windows(2).all(|w| w[0] < w[1]), || "not increasing before peak".into())?;
    ensure(c[peak..].windows(2).all(|w| w[0] > w[1]), || "not decreasing after peak".into())?;

    let d = curve(0.4, 0.6);
    ensure(d.windows(2).all(|w| w[0] > w[1]), || "alpha=0.4 L=0.6 not decreasing".into())?;
    ensure(d[0] == 0.875 && d[0] < 1.0, || format!("S(1) = {}", d[0]))?;
    let plan = as2(&PlannerInput::new(0.4, 0.3, 0.3).map_err(|e| e.to_string())?);
    ensure(plan.mode == Mode::Standalone, || "expected standalone".into())?;
    Ok(format!("peak S(14) = {:.4}; S(1) at (0.4, 0.6) = {}", c[peak], d[0]))
}

/// Reference spec: a flat 256-token vocabulary where the drafter shares half
/// of its logits with the target. Small K truncates target mass away, large K
/// pays for the uplink.
pub fn interior_optimum_spec() -> SyntheticPairSpec {
    SyntheticPairSpec {
        vocab_size: 256,
        kind: PairKind::Static,
        overlap_lambda: 0.5,
        target_temp: 1.0,
        seed: 2025,
    }
}

fn k_sweep_interior_optimum() -> Check {
    let spec = interior_optimum_spec();
    let channel = ChannelConfig::from_ratios(spec.vocab_size, 16, 0.23, 0.07, 0.05).unwrap();
    let ks = [1, 2, 4, 8, 16, 32, 64, 128, 256];
    let rows = k_sweep(&spec, &GammaChoice::Auto, &ks, &channel, 20_000, 10).map_err(|e| e.to_string())?;
    for r in &rows {
        let rel = (r.predicted_s / r.measured_s - 1.0).abs();
        ensure(rel <= 0.05, || format!("K={}: predicted {} vs measured {}", r.k, r.predicted_s, r.measured_s))?;
    }
    let best = rows
        .iter()
        .max_by(|a, b| a.measured_s.partial_cmp(&b.measured_s).unwrap())
        .unwrap();
    ensure(best.k > ks[0] && best.k < ks[ks.len() - 1], || {
        format!("measured optimum at boundary K={}", best.k)
    })?;
    Ok(format!(
        "measured optimum K={} (S={:.3}, gamma*={}, alpha_K={:.3}); predicted within 5% on all {} rows",
        best.k,
        best.measured_s,
        best.gamma,
        best.alpha_k,
        rows.len()
    ))
}

const GOLDEN_PACKET_HEX: &str =
    "544b534c0100100000000200020009000000090000007f3802000000013704000000020000005b38040000004a37";

fn golden_packet_bytes() -> Vec<u8> {
    use dsd_core::specdec::{draft_round, TokenModel};
    struct Golden(Vec<f64>);
    impl TokenModel for Golden {
        fn vocab_size(&self) -> usize {
            self.0.len()
        }
        fn next_logits(&self, ctx: &[u32]) -> LogitVector {
            let shift = ctx.len() as f64 * 0.37;
            LogitVector::new(self.0.iter().enumerate().map(|(i, l)| l + (i as f64 * shift).sin()).collect()).unwrap()
        }
    }
    let model = Golden((0..16).map(|i| ((i * 7) % 16) as f64 * 0.25).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let packet = draft_round(&model, &[], 2, 2, &mut rng).unwrap();
    let cfg = ChannelConfig::from_ratios(16, 16, 0.23, 0.07, 0.05).unwrap();
    encode_draft(&packet, &cfg).unwrap()
}

fn wire_codec() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    let mut worst = 0.0f64;
    for case in 0..10_000 {
        let vocab = rng.gen_range(2..=512);
        let k = rng.gen_range(1..=vocab.min(64));
        let gamma = rng.gen_range(1..=8);
        let prob_bits = if rng.gen_bool(0.5) { 16 } else { 32 };
        let cfg = ChannelConfig::from_ratios(vocab, prob_bits, 0.23, 0.07, 0.05).unwrap();
        let scale = rng.gen_range(0.1..10.0);
        let mut packet = DraftPacket {
            draft_tokens: Vec::new(),
            dists: Vec::new(),
            k,
        };
        for _ in 0..gamma {
            let sparse = top_k_sparsify(&random_logits(&mut rng, vocab, scale), k).unwrap();
            packet.draft_tokens.push(sparse.entries()[rng.gen_range(0..k)].0);
            packet.dists.push(sparse);
        }
        let bytes = encode_draft(&packet, &cfg).map_err(|e| format!("case {case}: {e}"))?;
        let back = decode_draft(&bytes, &cfg).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back.draft_tokens == packet.draft_tokens && back.k == k, || format!("case {case}: header"))?;
        for (a, b) in packet.dists.iter().zip(&back.dists) {
            for (x, y) in a.entries().iter().zip(b.entries()) {
                ensure(x.0 == y.0, || format!("case {case}: ids differ"))?;
                worst = worst.max((x.1 - y.1).abs());
            }
        }
    }
    ensure(worst <= 1e-3, || format!("max drift {worst:e}"))?;
    let hex: String = golden_packet_bytes().iter().map(|b| format!("{b:02x}")).collect();
    ensure(hex == GOLDEN_PACKET_HEX, || format!("golden packet changed: {hex}"))?;
    Ok(format!("10000 roundtrips, max drift {worst:.1e}; golden packet stable"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "optimal draft length grid", budget: Duration::from_secs(1), run: draft_length_grid },
        Criterion { id: 2, name: "latency row at 32k vocabulary", budget: Duration::from_secs(1), run: latency_row },
        Criterion { id: 3, name: "uplink payload per token", budget: Duration::from_secs(1), run: payload },
        Criterion { id: 4, name: "one-step exactness", budget: Duration::from_secs(120), run: one_step_exactness },
        Criterion { id: 5, name: "acceptance-rate oracle", budget: Duration::from_secs(60), run: acceptance_rate_oracle },
        Criterion { id: 6, name: "expected tokens per round", budget: Duration::from_secs(120), run: expected_tokens_law },
        Criterion { id: 7, name: "Lambert W numerics", budget: Duration::from_secs(1), run: lambert_numerics },
        Criterion { id: 8, name: "ODLD vs brute force", budget: Duration::from_secs(5), run: odld_vs_brute_force },
        Criterion { id: 9, name: "speedup curve shape", budget: Duration::from_secs(1), run: speedup_curve_shape },
        Criterion { id: 10, name: "interior optimum over K", budget: Duration::from_secs(300), run: k_sweep_interior_optimum },
        Criterion { id: 11, name: "wire codec", budget: Duration::from_secs(10), run: wire_codec },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();

    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str()) || *f == c.id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > c.budget => Err(format!("took {elapsed:.2?}, budget {:?}", c.budget)),
            other => other,
        };
        match result {
            Ok(detail) => println!("[PASS] AC{:<2} {} ({elapsed:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("[FAIL] AC{:<2} {} ({elapsed:.2?}): {why}", c.id, c.name);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
