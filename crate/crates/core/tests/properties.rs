//! Property tests for the grammar, masking, reward placement, and scorer
//! invariants.

use proptest::prelude::*;

use colab_forge::rewards::{
    combine, efficiency_penalty, place_per_token_rewards, PlacementMode, RewardComponents,
    RewardWeights,
};
use colab_forge::metrics::token_f1;
use colab_forge::trajectory::{
    parse, serialize, tokenize_with_mask, Segment, SegmentKind, Trajectory, Vocab,
};

/// Block text: symbols drawn from a fixed lexicon so everything tokenizes.
fn symbol_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["alpha", "beta", "gamma", "delta", "x1", "y2"]), 0..4)
        .prop_map(|words| words.join(" "))
}

fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
    (0usize..4, prop::collection::vec(symbol_text(), 16))
        .prop_map(|(n_requests, mut texts)| {
            let mut take = || texts.pop().unwrap_or_default();
            let mut segments = Vec::new();
            segments.push(Segment::new(SegmentKind::Think, take()));
            for _ in 0..n_requests {
                segments.push(Segment::new(SegmentKind::Message, take()));
                segments.push(Segment::new(SegmentKind::AgentReply, take()));
                segments.push(Segment::new(SegmentKind::Think, take()));
            }
            segments.push(Segment::new(SegmentKind::Answer, take()));
            Trajectory::new(segments)
        })
}

fn lexicon_vocab() -> Vocab {
    Vocab::new(["alpha", "beta", "gamma", "delta", "x1", "y2"])
}

proptest! {
    #[test]
    fn round_trip_identity(t in arb_trajectory()) {
        let raw = serialize(&t).unwrap();
        prop_assert_eq!(parse(&raw).unwrap(), t);
    }

    #[test]
    fn parse_is_stable_under_reserialization(t in arb_trajectory()) {
        let raw = serialize(&t).unwrap();
        let t1 = parse(&raw).unwrap();
        let raw2 = serialize(&t1).unwrap();
        prop_assert_eq!(raw, raw2);
    }

    #[test]
    fn mask_partition_is_exactly_the_reply_spans(t in arb_trajectory()) {
        let tt = tokenize_with_mask(&t, &lexicon_vocab()).unwrap();
        // Zero mask positions are exactly the union of agent-reply spans.
        let mut expect = vec![1u8; tt.tokens.len()];
        for &(kind, start, end) in &tt.segment_spans {
            if kind == SegmentKind::AgentReply {
                for m in &mut expect[start..end] {
                    *m = 0;
                }
            }
        }
        prop_assert_eq!(&tt.mask, &expect);
        prop_assert!(tt.masked_len() >= 1);
        // Spans are contiguous and cover all tokens.
        let mut pos = 0;
        for &(_, start, end) in &tt.segment_spans {
            prop_assert_eq!(start, pos);
            prop_assert!(end > start);
            pos = end;
        }
        prop_assert_eq!(pos, tt.tokens.len());
    }

    #[test]
    fn placement_conserves_total(
        t in arb_trajectory(),
        quality in 0u8..2,
        feedback in 0u8..2,
        leak in 0u8..2,
        n_r_penalty in 0usize..9,
        alpha in 0.0f64..1.0,
        beta in 0.0f64..1.0,
        process in any::<bool>(),
    ) {
        let tt = tokenize_with_mask(&t, &lexicon_vocab()).unwrap();
        let components = RewardComponents {
            r_format: 0.0,
            r_quality: f64::from(quality),
            r_feedback: -f64::from(feedback),
            r_privacy: -f64::from(leak),
            r_efficiency: efficiency_penalty(false, n_r_penalty, 8).unwrap(),
        };
        let rb = combine(components, RewardWeights { alpha, beta });
        let mode = if process { PlacementMode::ProcessPlaced } else { PlacementMode::TerminalOnly };
        let first_need = (feedback == 1 && t.n_requests() > 0).then_some(0);
        let rewards = place_per_token_rewards(&tt, &rb, mode, first_need);
        let sum: f64 = rewards.iter().sum();
        prop_assert!((sum - rb.total).abs() < 1e-12);
        for (i, &r) in rewards.iter().enumerate() {
            if r != 0.0 {
                prop_assert_eq!(tt.mask[i], 1, "reward on masked token only");
            }
        }
    }

    #[test]
    fn weight_linearity_of_total(
        alpha in 0.0f64..2.0,
        beta in 0.0f64..2.0,
        quality in 0u8..2,
        leak in 0u8..2,
        eff_steps in 0usize..9,
    ) {
        let c = RewardComponents {
            r_format: 0.0,
            r_quality: f64::from(quality),
            r_feedback: 0.0,
            r_privacy: -f64::from(leak),
            r_efficiency: efficiency_penalty(false, eff_steps, 8).unwrap(),
        };
        let total = combine(c, RewardWeights { alpha, beta }).total;
        let base = combine(c, RewardWeights { alpha: 0.0, beta: 0.0 }).total;
        prop_assert!((total - (base + alpha * c.r_privacy + beta * c.r_efficiency)).abs() < 1e-12);
    }

    #[test]
    fn token_f1_axioms(a in "[a-d ]{0,16}", b in "[a-d ]{0,16}") {
        let ab: f64 = token_f1(&a, &b);
        let ba: f64 = token_f1(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-12, "symmetry");
        prop_assert!((0.0..=1.0).contains(&ab), "range");
        let aa: f64 = token_f1(&a, &a);
        if !colab_forge::textnorm::normalize(&a).is_empty() {
            prop_assert_eq!(aa, 1.0, "identity");
        }
    }
}

#[test]
fn easy_query_cliff() {
    // For easy queries the efficiency penalty jumps from 0 to -1 with no
    // intermediate values.
    assert_eq!(efficiency_penalty::<f64>(true, 0, 8).unwrap(), 0.0);
    for n_r in 1..=8 {
        assert_eq!(efficiency_penalty::<f64>(true, n_r, 8).unwrap(), -1.0);
    }
}
