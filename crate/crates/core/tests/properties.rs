//! Property tests for the contracts that must hold on all inputs.

use proptest::prelude::*;

use marketsim_core::backend::{
    parse_retail, Backend, DialogueRole, MockBehavior, ModelPool, RetailDecision,
};
use marketsim_core::money::Money;
use marketsim_core::prompt::shuffle_candidates;
use marketsim_core::wholesale::{role_for_round, run_dialogue, RoleTemplates};

proptest! {
    #[test]
    fn money_round_trips_exactly(cents in -1_000_000_000i64..1_000_000_000i64) {
        let m = Money::from_cents(cents);
        let text = m.to_string();
        let back: Money = text.parse().unwrap();
        prop_assert_eq!(m, back);
    }

    #[test]
    fn shuffle_is_a_permutation(len in 1usize..12, seed in any::<u64>()) {
        let items: Vec<usize> = (0..len).collect();
        let (shuffled, permutation) = shuffle_candidates(&items, seed);
        let mut sorted = shuffled.clone();
        sorted.sort_unstable();
        prop_assert_eq!(&sorted, &items);
        let mut perm_sorted = permutation.clone();
        perm_sorted.sort_unstable();
        prop_assert_eq!(&perm_sorted, &items);
        for (new_idx, old_idx) in permutation.iter().enumerate() {
            prop_assert_eq!(shuffled[new_idx], items[*old_idx]);
        }
        // Replay determinism.
        let (again, perm_again) = shuffle_candidates(&items, seed);
        prop_assert_eq!(shuffled, again);
        prop_assert_eq!(permutation, perm_again);
    }

    #[test]
    fn retail_decision_render_parse_round_trip(
        buy in any::<bool>(),
        pick in 0usize..3,
        quantity in 1u32..10_000,
    ) {
        let ids: std::collections::BTreeSet<String> =
            ["A-1", "B-2", "C-3"].iter().map(|s| s.to_string()).collect();
        let decision = if buy {
            RetailDecision::purchase(["A-1", "B-2", "C-3"][pick], quantity)
        } else {
            RetailDecision::no_purchase()
        };
        let (parsed, _) = parse_retail(&decision.render(), &ids).unwrap();
        prop_assert_eq!(parsed, decision);
    }

    /// Dialogue protocol over every round count in [4, 20]: history length,
    /// role schedule, and the append-only prefix property.
    #[test]
    fn dialogue_protocol_holds_for_all_round_counts(n in 4usize..=20) {
        let pool = ModelPool::single(Backend::mock(
            "roles",
            MockBehavior::WholesaleRole { proposal: None },
        ));
        let templates = RoleTemplates::default();
        let state = run_dialogue("background text", n, &pool, &templates).unwrap();
        prop_assert_eq!(state.history.len(), n + 1);
        prop_assert_eq!(state.history[0].0, DialogueRole::Background);
        for round in 1..=n {
            prop_assert_eq!(state.history[round].0, role_for_round(round, n));
        }
        prop_assert_eq!(state.history[1].0, DialogueRole::Dealer);
        prop_assert_eq!(state.history[2].0, DialogueRole::Service);
        prop_assert_eq!(state.history[3].0, DialogueRole::Manufacturer);
        prop_assert_eq!(state.history[n].0, DialogueRole::Dealer);
        // Rounds 4..n-1 cycle dealer -> service -> manufacturer.
        for round in 4..n {
            let expected = match (round - 4) % 3 {
                0 => DialogueRole::Dealer,
                1 => DialogueRole::Service,
                _ => DialogueRole::Manufacturer,
            };
            prop_assert_eq!(state.history[round].0, expected);
        }
    }
}
