//! Statistical properties of the fusion machine checked against analytic
//! oracles over many seeded runs.

use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use stochastic_disparity::machine::{build_machine, run_machine, FusionSpec};
use stochastic_disparity::model::PixelLikelihoods;
use stochastic_disparity::reference::{classify, reference_pixel, PixelClass};
use stochastic_disparity::stochastic::DEFAULT_MAX_CYCLES;

fn winners(spec: &FusionSpec, n_max: u32, seeds: std::ops::Range<u64>) -> Vec<usize> {
    let mut counts = vec![0; spec.width()];
    for seed in seeds {
        let mut m = build_machine(spec, n_max, seed).unwrap();
        let r = run_machine(&mut m, DEFAULT_MAX_CYCLES).unwrap();
        counts[r.winner().unwrap()] += 1;
    }
    counts
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, j| if v[j] > v[b] { j } else { b })
}

fn random_spec(rng: &mut Xoshiro256PlusPlus, m: usize, n: usize) -> FusionSpec {
    let terms = (0..n)
        .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
        .collect();
    FusionSpec::uniform(m, terms).unwrap()
}

#[test]
fn agreement_with_argmax_grows_with_counter_size() {
    let specs = [
        FusionSpec::uniform(4, vec![vec![0.9, 0.7, 0.5, 0.3], vec![0.6, 0.5, 0.4, 0.2]]).unwrap(),
        FusionSpec::uniform(3, vec![vec![0.3, 0.25, 0.1]]).unwrap(),
    ];
    for spec in &specs {
        let best = argmax(&spec.output_p_values());
        let rates: Vec<f64> = [1, 16, 256]
            .iter()
            .map(|&n| winners(spec, n, 0..1000)[best] as f64 / 1000.0)
            .collect();
        assert!(rates.windows(2).all(|w| w[0] <= w[1]), "{rates:?}");
        assert!(rates[2] > 0.9, "{rates:?}");
    }
}

#[test]
fn term_order_does_not_change_winner_distribution() {
    let spec = FusionSpec::uniform(
        3,
        vec![vec![0.8, 0.6, 0.7], vec![0.5, 0.9, 0.6], vec![0.7, 0.6, 0.8]],
    )
    .unwrap();
    let permuted = spec.permute_terms(&[2, 0, 1]).unwrap();
    for (a, b) in spec.output_p_values().iter().zip(permuted.output_p_values()) {
        assert!((a - b).abs() < 1e-12);
    }
    let a = winners(&spec, 4, 0..1000);
    let b = winners(&permuted, 4, 10_000..11_000);
    // chi-square test of homogeneity on the 2 x M table
    let mut stat = 0.0;
    let mut dof = 0;
    for j in 0..3 {
        let col = (a[j] + b[j]) as f64;
        if col == 0.0 {
            continue;
        }
        dof += 1;
        for obs in [a[j], b[j]] {
            let expected = col / 2.0;
            stat += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 {stat} p {p} {a:?} {b:?}");
}

#[test]
fn worked_disparity_pixel_matches_reference() {
    let px = PixelLikelihoods {
        x: 2,
        y: 0,
        terms: vec![[0.9, 0.8, 0.7], [1.0, 1.0, 0.9], [0.3, 0.3, 0.3]],
        nomatch: 0.01,
    };
    let reference = reference_pixel(&px);
    assert_eq!(reference.class, PixelClass::Matched(1));
    let spec = px.fusion_spec().unwrap();
    assert_eq!((spec.width(), spec.term_count()), (4, 3));
    let hits = winners(&spec, 64, 0..100)[1];
    assert!(hits >= 95, "{hits}");
}

#[test]
fn modal_winner_equals_argmax_for_small_machines() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(77);
    let mut checked = 0;
    while checked < 12 {
        let m = rng.random_range(2..=5);
        let n = rng.random_range(1..=3);
        let spec = random_spec(&mut rng, m, n);
        let p = spec.output_p_values();
        let mut sorted = p.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        // skip near ties, where the mode is decided by noise
        if sorted[0] < 1.1 * sorted[1] || sorted[0] < 0.05 {
            continue;
        }
        let counts = winners(&spec, 256, 0..1000);
        let mode = (0..m).fold(0, |b, j| if counts[j] > counts[b] { j } else { b });
        let terms: Vec<f64> = p.clone();
        assert_eq!(classify(&terms, 0.0).0, PixelClass::Matched(argmax(&p)));
        assert_eq!(mode, argmax(&p), "{p:?} {counts:?}");
        checked += 1;
    }
}
