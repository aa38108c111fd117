use dsd_core::specdec::{DraftPacket, VerifyOutcome};
use dsd_core::transport::{decode_draft, decode_verdict, encode_draft, encode_verdict, ChannelConfig};
use dsd_core::{top_k_sparsify, LogitVector};
use proptest::prelude::*;

fn packet_strategy() -> impl Strategy<Value = (DraftPacket, ChannelConfig)> {
    (2usize..64, 1usize..6, any::<bool>()).prop_flat_map(|(vocab, gamma, fp32)| {
        let logits = prop::collection::vec(prop::collection::vec(-8.0f64..8.0, vocab), gamma);
        (1..=vocab, logits, prop::collection::vec(any::<prop::sample::Index>(), gamma)).prop_map(
            move |(k, rows, picks)| {
                let dists: Vec<_> = rows
                    .into_iter()
                    .map(|r| top_k_sparsify(&LogitVector::new(r).unwrap(), k).unwrap())
                    .collect();
                let draft_tokens = dists.iter().zip(&picks).map(|(d, i)| d.entries()[i.index(k)].0).collect();
                let cfg = ChannelConfig::from_ratios(vocab, if fp32 { 32 } else { 16 }, 0.23, 0.07, 0.05).unwrap();
                (DraftPacket { draft_tokens, dists, k }, cfg)
            },
        )
    })
}

proptest! {
    #[test]
    fn draft_roundtrip((packet, cfg) in packet_strategy()) {
        let bytes = encode_draft(&packet, &cfg).unwrap();
        let width = cfg.prob_bits as usize / 8;
        prop_assert_eq!(bytes.len(), 14 + packet.gamma() * (4 + packet.k * (4 + width)));
        let back = decode_draft(&bytes, &cfg).unwrap();
        prop_assert_eq!(&back.draft_tokens, &packet.draft_tokens);
        let tol = if cfg.prob_bits == 32 { 1e-6 } else { 1e-3 };
        for (a, b) in packet.dists.iter().zip(&back.dists) {
            prop_assert_eq!(a.k(), b.k());
            for (x, y) in a.entries().iter().zip(b.entries()) {
                prop_assert_eq!(x.0, y.0);
                prop_assert!((x.1 - y.1).abs() <= tol);
            }
        }
    }

    #[test]
    fn corrupted_bytes_never_panic((packet, cfg) in packet_strategy(), pos in any::<prop::sample::Index>(), byte in any::<u8>(), cut in any::<bool>()) {
        let mut bytes = encode_draft(&packet, &cfg).unwrap();
        let i = pos.index(bytes.len());
        if cut {
            bytes.truncate(i);
            prop_assert!(decode_draft(&bytes, &cfg).is_err());
        } else {
            bytes[i] = byte;
            let _ = decode_draft(&bytes, &cfg);
        }
    }

    #[test]
    fn verdict_roundtrip(tokens in prop::collection::vec(0u32..1000, 1..9)) {
        let outcome = VerifyOutcome {
            accepted_count: tokens.len() - 1,
            position_j: tokens.len(),
            emitted_tokens: tokens.clone(),
            bonus: false,
        };
        let bytes = encode_verdict(&outcome).unwrap();
        prop_assert_eq!(bytes.len(), 8);
        let v = decode_verdict(&bytes).unwrap();
        prop_assert_eq!(v.final_token, *tokens.last().unwrap());
        prop_assert_eq!(v.accepted_count as usize, tokens.len() - 1);
    }
}
