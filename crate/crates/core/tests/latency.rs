use dsd_core::planner::PlannerInput;
use dsd_core::transport::{latency_params, ChannelConfig};
use dsd_core::{as2, speedup, Mode};
use proptest::prelude::*;

proptest! {
    #[test]
    fn latency_is_affine_in_k(vocab in 2usize..100_000, frac in 0.0f64..1.0, b_full in 0.01f64..2.0, c in 0.01f64..0.9) {
        let cfg = ChannelConfig::from_ratios(vocab, 16, b_full, c, 0.05).unwrap();
        let k = 1 + ((vocab - 1) as f64 * frac) as usize;
        let p = latency_params(&cfg, k).unwrap();
        let want = c + b_full * k as f64 / vocab as f64;
        prop_assert!((p.l - want).abs() <= 1e-12 * (1.0 + want));
        prop_assert!((p.c - c).abs() <= 1e-12);
    }

    #[test]
    fn plan_never_worse_than_standalone(alpha in 0.01f64..0.99, b in 0.001f64..0.6, c in 0.001f64..0.6) {
        let plan = as2(&PlannerInput::new(alpha, b, c).unwrap());
        match plan.mode {
            Mode::Dsd => prop_assert!(plan.s_star >= 1.0),
            Mode::Standalone => prop_assert!(speedup(alpha, plan.gamma_star.max(1), b + c) < 1.0 || b + c >= 1.0),
        }
    }
}

#[test]
fn index_bits_add_to_payload() {
    let mut cfg = ChannelConfig::reference_32k();
    let plain = latency_params(&cfg, 100).unwrap().b;
    cfg.include_index_bits = true;
    let with_idx = latency_params(&cfg, 100).unwrap().b;
    assert!((with_idx / plain - (16.0 + 15.0) / 16.0).abs() < 1e-12);
}

#[test]
fn serialized_params_use_latency_key() {
    let p = latency_params(&ChannelConfig::reference_32k(), 32).unwrap();
    let v = serde_json::to_value(p).unwrap();
    assert!((v["L"].as_f64().unwrap() - 0.0702).abs() < 5e-4);
    assert!(v.get("l").is_none());
}
