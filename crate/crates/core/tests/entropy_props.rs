mod common;

use common::{counts_of, entropy_oracle};
use proptest::prelude::*;
use qmc_core::entropy::{
    analyze_i8, entropy_bits, excess_kurtosis, histogram, ideal_compressed_size, Histogram,
};
use qmc_core::tensorio::SynthRng;
use qmc_core::Error;

fn arb_counts() -> impl Strategy<Value = [u64; 256]> {
    prop::collection::vec(prop_oneof![3 => Just(0u64), 1 => 0u64..1_000_000], 256)
        .prop_filter("non-empty", |v| v.iter().any(|&c| c > 0))
        .prop_map(|v| v.try_into().unwrap())
}

proptest! {
    #[test]
    fn matches_oracle(c in arb_counts()) {
        let h = Histogram::from_counts(c).unwrap();
        let (a, b) = (entropy_bits(&h), entropy_oracle(&c));
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        prop_assert!((0.0..=8.0).contains(&a));
    }

    #[test]
    fn permutation_invariant(c in arb_counts(), shift in 0usize..256) {
        let mut p = c;
        p.rotate_left(shift);
        let (a, b) = (
            entropy_bits(&Histogram::from_counts(c).unwrap()),
            entropy_bits(&Histogram::from_counts(p).unwrap()),
        );
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn scale_invariant(c in arb_counts(), k in 2u64..50) {
        let scaled = c.map(|v| v * k);
        let (a, b) = (
            entropy_bits(&Histogram::from_counts(c).unwrap()),
            entropy_bits(&Histogram::from_counts(scaled).unwrap()),
        );
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn uniform_over_support_is_maximal(k in 1usize..=256, n in 1u64..1000, seed in any::<u64>()) {
        let mut c = [0u64; 256];
        c[..k].fill(n);
        let flat = entropy_bits(&Histogram::from_counts(c).unwrap());
        prop_assert!((flat - (k as f64).log2()).abs() < 1e-12);
        // Moving mass between two support symbols can only lower entropy.
        if k >= 2 && n >= 2 {
            let mut rng = SynthRng::new(seed);
            let i = rng.bounded(k as u64) as usize;
            let j = (i + 1 + rng.bounded(k as u64 - 1) as usize) % k;
            let d = 1 + rng.bounded(n - 1);
            c[i] -= d;
            c[j] += d;
            prop_assert!(entropy_bits(&Histogram::from_counts(c).unwrap()) < flat);
        }
    }

    #[test]
    fn ideal_size_is_ceiling(data in prop::collection::vec(any::<u8>(), 1..4000)) {
        let h = histogram(&data).unwrap();
        let bits = entropy_oracle(&counts_of(&data)) * data.len() as f64;
        let size = ideal_compressed_size(&h) as f64;
        prop_assert!(size * 8.0 >= bits - 1e-6 && size * 8.0 < bits + 8.0 + 1e-6);
    }
}

#[test]
fn basic_examples() {
    let h = histogram(&[0, 0, 1]).unwrap();
    assert_eq!((h.counts()[0], h.counts()[1], h.total()), (2, 1, 3));

    let h = histogram(b"aabc").unwrap();
    assert!((entropy_bits(&h) - 1.5).abs() < 1e-15);
    assert_eq!(ideal_compressed_size(&h), 1);

    assert!(matches!(histogram(&[]), Err(Error::Validation(_))));
    assert!(matches!(Histogram::from_counts([0; 256]), Err(Error::Validation(_))));
}

#[test]
fn exact_extremes() {
    let all: Vec<u8> = (0..=255u8).cycle().take(256 * 40).collect();
    assert_eq!(entropy_bits(&histogram(&all).unwrap()), 8.0);
    assert_eq!(entropy_bits(&histogram(&[7u8; 999]).unwrap()), 0.0);
    assert_eq!(ideal_compressed_size(&histogram(&[9u8; 1000]).unwrap()), 0);
    let one_each: Vec<u8> = (0..1024).map(|i| i as u8).collect();
    assert_eq!(ideal_compressed_size(&histogram(&one_each).unwrap()), 1024);
}

#[test]
fn kurtosis_examples() {
    let mut rng = SynthRng::new(42);
    let g: Vec<f64> = (0..1_000_000).map(|_| rng.gaussian()).collect();
    let k = excess_kurtosis(&g).unwrap();
    assert!(k.abs() < 0.05, "{k}");

    let two_point: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
    assert!((excess_kurtosis(&two_point).unwrap() + 2.0).abs() < 1e-12);

    assert!(excess_kurtosis(&[1.0; 10]).is_err());
    assert!(excess_kurtosis(&[1.0, 2.0]).is_err());

    let r = analyze_i8(&[3i8; 100]).unwrap();
    assert_eq!((r.entropy_bits, r.excess_kurtosis, r.ideal_size_bytes), (0.0, None, 0));
}
