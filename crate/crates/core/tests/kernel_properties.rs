use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tal_core::kernel::{
    q_from_convolution, update_batched, update_plain, update_tal, Exponent, MemoryKernel, Polarity,
    PolaritySequence, QState, TabulatedKernel,
};
use tal_core::stream::{random_dominance_pair, verify_imbalance_pair};

const LAMBDAS: [f64; 5] = [0.5, 0.9, 0.99, 0.995, 0.999];

fn polarity(b: bool) -> Polarity {
    if b {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #[test]
    fn recursion_matches_convolution(
        bits in prop::collection::vec(any::<bool>(), 1..600),
        li in 0usize..5,
    ) {
        let kernel = MemoryKernel::new(LAMBDAS[li]).unwrap();
        let seq = PolaritySequence::new(0, bits.iter().copied().map(polarity).collect());
        let mut s = QState::zeros(1);
        for p in seq.values() {
            s = update_plain(&s, &kernel, &[*p]).unwrap();
        }
        let direct: f64 = q_from_convolution(&kernel, &seq).unwrap();
        prop_assert!(relative_error(s.values()[0], direct) < 1e-10);
    }

    #[test]
    fn attenuated_update_preserves_range(
        bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 1..400),
        li in 0usize..5,
        r in 1.0f64..6.0,
    ) {
        let kernel = MemoryKernel::new(LAMBDAS[li]).unwrap();
        let e = Exponent::new(r).unwrap();
        let mut s = QState::zeros(3);
        for step in &bits {
            let pol: Vec<Polarity> = step.iter().copied().map(polarity).collect();
            s = update_tal(&s, &kernel, e, &pol).unwrap();
            for &q in s.values() {
                prop_assert!(q >= 0.0 && q < kernel.q_max());
            }
        }
    }

    #[test]
    fn batched_unit_batch_equals_single_step(
        q in prop::collection::vec(0.0f64..1.0, 4),
        label in 0usize..4,
        li in 0usize..5,
        r in 1.0f64..4.0,
    ) {
        let kernel = MemoryKernel::new(LAMBDAS[li]).unwrap();
        let e = Exponent::new(r).unwrap();
        let s = QState::from_values(q.iter().map(|x| x * kernel.q_max() * 0.999).collect()).unwrap();
        let mut counts = vec![0; 4];
        counts[label] = 1;
        let pol: Vec<Polarity> = (0..4).map(|k| polarity(k == label)).collect();
        prop_assert_eq!(
            update_batched(&s, &kernel, e, &counts, 1).unwrap(),
            update_tal(&s, &kernel, e, &pol).unwrap()
        );
    }

    #[test]
    fn dominance_implies_ordering(seed in any::<u64>(), len in 2usize..300, frac in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positives = ((len as f64 * frac) as usize).clamp(1, len);
        let (a, b) = random_dominance_pair(&mut rng, len, positives).unwrap();
        for &lambda in &[0.9, 0.99] {
            let kernel = MemoryKernel::new(lambda).unwrap();
            let v = verify_imbalance_pair(&kernel, &a, &b).unwrap();
            prop_assert!(v.dominance_held);
            prop_assert!(v.consistent(true));
            prop_assert!(v.identity_error < 1e-10);
            prop_assert_eq!(v.q_a <= v.q_b, v.phi_a <= v.phi_b);
        }
    }
}

#[test]
fn all_negative_stays_exactly_zero() {
    for &lambda in &LAMBDAS {
        let kernel = MemoryKernel::new(lambda).unwrap();
        let e = Exponent::new(1.0).unwrap();
        let mut s = QState::zeros(2);
        for _ in 0..5000 {
            s = update_tal(&s, &kernel, e, &[Polarity::Negative, Polarity::Negative]).unwrap();
            assert_eq!(s.values(), &[0.0, 0.0]);
        }
    }
}

#[test]
fn all_positive_monotone_below_q_max() {
    let kernel = MemoryKernel::new(0.999).unwrap();
    let e = Exponent::new(2.0).unwrap();
    let mut s = QState::zeros(1);
    let mut prev = 0.0f64;
    for n in 1..=1000 {
        s = update_tal(&s, &kernel, e, &[Polarity::Positive]).unwrap();
        let q = s.values()[0];
        assert!(q > prev && q < kernel.q_max());
        assert!((q - kernel.saturation_curve(n)).abs() < 1e-12);
        prev = q;
    }
}

#[test]
fn plain_recursion_long_random_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for &lambda in &LAMBDAS {
        let kernel = MemoryKernel::new(lambda).unwrap();
        let seq = PolaritySequence::new(0, (0..10_000).map(|_| polarity(rng.random())).collect());
        let mut s = QState::zeros(1);
        for p in seq.values() {
            s = update_plain(&s, &kernel, &[*p]).unwrap();
        }
        let direct: f64 = q_from_convolution(&kernel, &seq).unwrap();
        assert!(relative_error(s.values()[0], direct) < 1e-10);
    }
}

#[test]
fn tal_random_streams_three_classes() {
    let kernel = MemoryKernel::new(0.995).unwrap();
    let e = Exponent::new(1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = QState::zeros(3);
    for _ in 0..10_000 {
        let pol: Vec<Polarity> = (0..3).map(|_| polarity(rng.random())).collect();
        s = update_tal(&s, &kernel, e, &pol).unwrap();
        assert!(s.values().iter().all(|&q| (0.0..kernel.q_max()).contains(&q)));
    }
}

#[test]
fn non_exponential_kernel_obeys_ordering() {
    // Linear ramp kernel: strictly decreasing over its support.
    let weights: Vec<f64> = (0..64).map(|n| 1.0 - n as f64 / 64.0).collect();
    let kernel = TabulatedKernel::new(weights).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (a, b) = random_dominance_pair(&mut rng, 64, 20).unwrap();
        let v = verify_imbalance_pair::<f64, _>(&kernel, &a, &b).unwrap();
        assert!(v.consistent(true));
        assert!(v.identity_error < 1e-10);
    }
}
