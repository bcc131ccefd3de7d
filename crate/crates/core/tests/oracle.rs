mod support;

use kneesim_core::analysis::spatiotemporal;
use kneesim_core::model::ParticipantProfile;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{close, oracle, random_record};

proptest! {
    #[test]
    fn library_matches_brute_force(seed in any::<u64>()) {
        let rec = random_record(&mut ChaCha8Rng::seed_from_u64(seed));
        let got = spatiotemporal(&rec, &ParticipantProfile::default()).ok();
        let expected = oracle::spatiotemporal(&rec);
        prop_assert_eq!(got.is_some(), expected.is_some());
        if let (Some(g), Some(e)) = (got, expected) {
            prop_assert!(close(g.speed, e.speed));
            prop_assert!(close(g.cadence, e.cadence));
            prop_assert!(close(g.left.step_time.mean, e.left.step_time.0));
            prop_assert!(close(g.right.step_length.sd, e.right.step_length.1));
            prop_assert!(close(g.left.stance_pct.mean, e.left.stance_pct.0));
            for (a, b) in g.symmetry.as_array().into_iter().zip(e.si) {
                prop_assert!(close(a, b), "{} vs {}", a, b);
            }
        }
    }
}

#[test]
fn hand_built_record_matches_oracle_exactly() {
    use kneesim_core::model::Side;
    use kneesim_core::plant::{Footfall, WalkwayRecord};
    let f = |t: f64, x: f64, side| Footfall {
        t_contact: t,
        t_liftoff: t + 0.7,
        x,
        y: if side == Side::Left { -0.05 } else { 0.07 },
        side,
    };
    let rec = WalkwayRecord {
        footfalls: vec![
            f(0.0, 0.0, Side::Left),
            f(0.58, 0.61, Side::Right),
            f(1.2, 1.3, Side::Left),
            f(1.78, 1.91, Side::Right),
            f(2.4, 2.6, Side::Left),
            f(2.98, 3.21, Side::Right),
        ],
    };
    let g = spatiotemporal(&rec, &ParticipantProfile::default()).unwrap();
    let e = oracle::spatiotemporal(&rec).unwrap();
    assert!(close(g.symmetry.step_time, 0.58 / 0.62));
    assert!(close(g.symmetry.step_time, e.si[0]));
    assert!(close(g.left.step_width.mean, 0.12));
}
