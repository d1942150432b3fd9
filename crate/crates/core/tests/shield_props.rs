mod common;

use common::{random_action, random_context, submasks};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semadapt::shield::{is_feasible, project, ShieldConfig};
use semadapt::{Action, Primitive};

fn configs() -> [ShieldConfig; 2] {
    [ShieldConfig::default(), ShieldConfig::reversed()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn projection_is_feasible_and_idempotent(seed in any::<u64>(), n in prop::sample::select(vec![1usize, 2, 4, 8, 16])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx = random_context(n, &mut rng);
        let proposed = random_action(n, &mut rng);
        for cfg in configs() {
            let (once, _) = project(&ctx, &proposed, &cfg).unwrap();
            prop_assert!(is_feasible(&ctx, &once).unwrap());
            let (twice, report) = project(&ctx, &once, &cfg).unwrap();
            prop_assert_eq!(&twice, &once);
            prop_assert!(!report.intervened());
        }
    }

    #[test]
    fn projection_only_removes_ues(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx = random_context(n, &mut rng);
        let proposed = random_action(n, &mut rng);
        let (out, report) = project(&ctx, &proposed, &ShieldConfig::default()).unwrap();
        for i in out.scheduled() {
            prop_assert!(proposed.mask()[i]);
        }
        if out.primitive() == proposed.primitive() {
            prop_assert_eq!(report.drops() + out.scheduled_count(), proposed.scheduled_count());
        }
    }

    #[test]
    fn primitive_kept_whenever_a_feasible_submask_exists(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx = random_context(n, &mut rng);
        let proposed = random_action(n, &mut rng);
        let any_feasible = submasks(proposed.mask())
            .into_iter()
            .any(|m| is_feasible(&ctx, &Action::new(proposed.primitive(), m)).unwrap());
        for cfg in configs() {
            let (out, _) = project(&ctx, &proposed, &cfg).unwrap();
            if any_feasible {
                prop_assert_eq!(out.primitive(), proposed.primitive());
                prop_assert!(!out.is_empty());
            } else if !proposed.is_empty() {
                prop_assert_ne!(out.primitive(), proposed.primitive());
            }
        }
    }

    #[test]
    fn fallback_follows_the_ladder(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx = random_context(n, &mut rng);
        let proposed = random_action(n, &mut rng);
        for cfg in configs() {
            let (out, report) = project(&ctx, &proposed, &cfg).unwrap();
            let ladder = cfg.ladder();
            let start = ladder.iter().position(|p| *p == proposed.primitive()).unwrap();
            // Each skipped rung admits no feasible sub-mask.
            for (k, p) in report.fallbacks.iter().enumerate() {
                prop_assert!(*p == Primitive::NoOp || ladder.get(start + 1 + k) == Some(p));
            }
            let skipped = std::iter::once(proposed.primitive()).chain(report.fallbacks.iter().copied());
            for p in skipped.filter(|p| *p != out.primitive()) {
                let feasible = submasks(proposed.mask()).into_iter().any(|m| is_feasible(&ctx, &Action::new(p, m)).unwrap());
                prop_assert!(!feasible, "{p} was skipped although feasible");
            }
        }
    }
}

#[test]
fn empty_proposal_is_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ctx = random_context(4, &mut rng);
    for p in Primitive::ALL {
        let a = Action::new(p, vec![false; 4]);
        let (out, report) = project(&ctx, &a, &ShieldConfig::default()).unwrap();
        assert_eq!(out, a);
        assert!(!report.intervened());
    }
}
