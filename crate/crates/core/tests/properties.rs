use proptest::prelude::*;

use protogan::cgan::interpolate;
use protogan::config::Config;
use protogan::data::{sample_k_shots, split_classes};
use protogan::diffcore::Matrix;
use protogan::evalharness::{harmonic_mean, Stat};
use protogan::rng::derive_seed;
use protogan::synth::{prune, SyntheticSample};

fn samples(losses: &[f64]) -> Vec<SyntheticSample> {
    losses
        .iter()
        .enumerate()
        .map(|(i, &l)| SyntheticSample {
            features: vec![i as f64],
            class: 0,
            recon_loss: l,
            index: i,
        })
        .collect()
}

proptest! {
    #[test]
    fn prune_keeps_the_ceiling_and_the_lowest_losses(
        // coarse grid so ties are common
        losses in prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 10.0), 0..60),
        fraction in 0.01f64..=1.0,
    ) {
        let kept = prune(samples(&losses), fraction).unwrap();
        let n = losses.len();
        prop_assert_eq!(kept.len(), (fraction * n as f64).ceil() as usize);

        let kept_idx: Vec<usize> = kept.iter().map(|s| s.index).collect();
        let discarded: Vec<f64> = (0..n)
            .filter(|i| !kept_idx.contains(i))
            .map(|i| losses[i])
            .collect();
        let max_kept = kept.iter().map(|s| s.recon_loss).fold(f64::NEG_INFINITY, f64::max);
        let min_discarded = discarded.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(max_kept <= min_discarded);
        for w in kept.windows(2) {
            prop_assert!((w[0].recon_loss, w[0].index) < (w[1].recon_loss, w[1].index));
        }
    }

    #[test]
    fn prune_rejects_fractions_outside_the_unit_interval(f in prop_oneof![-5.0f64..=0.0, 1.0001f64..5.0]) {
        prop_assert!(prune(samples(&[0.1, 0.2]), f).is_err());
    }

    #[test]
    fn harmonic_mean_lies_between_min_and_mean(s in 0.0f64..=100.0, n in 0.0f64..=100.0) {
        let h = harmonic_mean(s, n).unwrap();
        prop_assert!(h <= (s + n) / 2.0 + 1e-12);
        prop_assert!(h + 1e-12 >= s.min(n));
        prop_assert_eq!(h, harmonic_mean(n, s).unwrap());
    }

    #[test]
    fn stat_is_order_invariant(mut v in prop::collection::vec(-100.0f64..100.0, 1..30), seed: u64) {
        let a = Stat::of(&v).unwrap();
        let k = (seed % v.len() as u64) as usize;
        v.rotate_left(k);
        v.reverse();
        let b = Stat::of(&v).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.std >= 0.0);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a.mean >= lo - 1e-9 && a.mean <= hi + 1e-9);
    }

    #[test]
    fn interpolation_hits_both_endpoints(
        real in prop::collection::vec(-10.0f64..10.0, 6),
        fake in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        let r = Matrix::from_vec(2, 3, real).unwrap();
        let f = Matrix::from_vec(2, 3, fake).unwrap();
        let out = interpolate(&r, &f, &[1.0, 0.0]);
        prop_assert_eq!(out.row(0), r.row(0));
        prop_assert_eq!(out.row(1), f.row(1));
    }

    #[test]
    fn class_split_is_disjoint_and_sized(
        n_labels in 2usize..20,
        seed: u64,
        frac in 0.0f64..1.0,
    ) {
        let labels: Vec<usize> = (0..n_labels).collect();
        let n_seen = ((n_labels as f64 * frac) as usize).min(n_labels - 1);
        let n_novel = n_labels - n_seen;
        let (seen, novel) = split_classes(&labels, n_seen, n_novel, seed).unwrap();
        prop_assert_eq!(seen.len(), n_seen);
        prop_assert_eq!(novel.len(), n_novel);
        prop_assert!(seen.iter().all(|s| !novel.contains(s)));
        prop_assert!(split_classes(&labels, n_seen, n_novel + 1, seed).is_err());
    }

    #[test]
    fn shots_partition_the_class(size in 2usize..40, seed: u64, kf in 0.0f64..1.0) {
        let k = 1 + ((size - 1) as f64 * kf) as usize % (size - 1);
        let items: Vec<usize> = (0..size).collect();
        let (shots, held) = sample_k_shots(&items, k, seed).unwrap();
        prop_assert_eq!(shots.len(), k);
        prop_assert_eq!(shots.len() + held.len(), size);
        let mut all: Vec<usize> = shots.iter().chain(&held).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn config_echo_round_trips(
        epochs in 1usize..500,
        lr in 1e-5f64..1.0,
        keep in 0.01f64..=1.0,
        prune_on: bool,
        shots in prop::collection::vec(1usize..10, 1..4),
    ) {
        let mut cfg = Config::default();
        cfg.set("gan.epochs", &epochs.to_string()).unwrap();
        cfg.set("gan.learning_rate", &lr.to_string()).unwrap();
        cfg.set("synth.keep_fraction", &keep.to_string()).unwrap();
        cfg.set("synth.prune", &prune_on.to_string()).unwrap();
        let shots_text: Vec<String> = shots.iter().map(|s| s.to_string()).collect();
        cfg.set("run.shots", &shots_text.join(",")).unwrap();
        let mut back = Config::default();
        back.apply_text(&cfg.echo_text()).unwrap();
        prop_assert_eq!(back.echo(), cfg.echo());
    }

    #[test]
    fn derived_seeds_differ_by_purpose_and_index(master: u64, i in 0u64..1000) {
        prop_assert_ne!(derive_seed(master, "run", i), derive_seed(master, "run", i + 1));
        prop_assert_ne!(derive_seed(master, "run", i), derive_seed(master, "cgan", i));
        prop_assert_eq!(derive_seed(master, "run", i), derive_seed(master, "run", i));
    }
}
