use std::collections::VecDeque;

use bsac::{seeded_rng, ReplayBuffer, Tensor, Transition};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn record(i: usize) -> Transition {
    Transition {
        state: Tensor::vector(vec![i as f64]),
        action: Tensor::vector(vec![(i as f64).sin()]),
        reward: i as f64,
        next_state: Tensor::vector(vec![i as f64 + 0.5]),
        done: i % 5 == 0,
    }
}

#[test]
fn sampling_is_uniform_over_slots() {
    let slots = 100;
    let mut buf = ReplayBuffer::new(slots, 1, 1).unwrap();
    // overfill so the ring has wrapped
    for i in 0..slots + 37 {
        buf.push(record(i)).unwrap();
    }
    let mut counts = vec![0u64; slots + 37];
    let mut rng = seeded_rng(2024);
    let draws = 1_000_000;
    let mut done = 0;
    while done < draws {
        for t in buf.sample(100, &mut rng).unwrap() {
            counts[t.reward as usize] += 1;
        }
        done += 100;
    }
    assert!(counts[..37].iter().all(|&c| c == 0), "evicted records were sampled");
    let expected = draws as f64 / slots as f64;
    let chi2: f64 = counts[37..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = ChiSquared::new((slots - 1) as f64).unwrap().sf(chi2);
    assert!(p > 0.001, "chi2 {chi2}, p {p}");
}

proptest! {
    #[test]
    fn ring_matches_a_queue_model(capacity in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(capacity, 1, 1).unwrap();
        let mut model = VecDeque::new();
        for i in 0..pushes {
            buf.push(record(i)).unwrap();
            model.push_back(record(i));
            if model.len() > capacity {
                model.pop_front();
            }
            prop_assert_eq!(buf.len(), model.len());
        }
        let stored: Vec<_> = buf.iter().cloned().collect();
        prop_assert_eq!(stored, Vec::from(model));
    }

    #[test]
    fn samples_are_exact_copies_of_pushed_records(capacity in 4usize..30, pushes in 4usize..80, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(capacity, 1, 1).unwrap();
        for i in 0..pushes {
            buf.push(record(i)).unwrap();
        }
        let lo = pushes.saturating_sub(capacity);
        for t in buf.sample(4, &mut seeded_rng(seed)).unwrap() {
            let i = t.reward as usize;
            prop_assert!(i >= lo && i < pushes);
            let want = record(i);
            prop_assert_eq!(t.state.data()[0].to_bits(), want.state.data()[0].to_bits());
            prop_assert_eq!(t.action.data()[0].to_bits(), want.action.data()[0].to_bits());
            prop_assert_eq!(t, want);
        }
    }
}
