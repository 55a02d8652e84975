mod common;

use common::{stream, stream_violations, vocab_embedder};
use proptest::prelude::*;
use unitrec::unit_store::{restore, snapshot, update_profile, UnitConfig, UserProfile};

fn small_groups() -> UnitConfig {
    UnitConfig {
        keep_per_group: 3,
        big_threshold: 3,
        ..UnitConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn invariants_hold_on_random_streams(s in stream(40, 120)) {
        let errs = stream_violations(&s, &UnitConfig::default(), &vocab_embedder());
        prop_assert!(errs.is_empty(), "{errs:?}");
    }

    #[test]
    fn invariants_hold_under_tight_pruning(s in stream(60, 150), tau in 0.3f64..0.9) {
        let cfg = UnitConfig { tau, ..small_groups() };
        let errs = stream_violations(&s, &cfg, &vocab_embedder());
        prop_assert!(errs.is_empty(), "{errs:?}");
    }

    #[test]
    fn snapshots_round_trip(s in stream(30, 60)) {
        let e = vocab_embedder();
        let mut p = UserProfile::new("u");
        for d in &s {
            let _ = update_profile(&mut p, d, &e, &UnitConfig::default());
        }
        prop_assert_eq!(restore(&snapshot(&p)).unwrap(), p);
    }
}
