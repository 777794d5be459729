use std::collections::HashSet;
use std::sync::OnceLock;

use brainstate::datagen::{
    find_input_range_with, generate_dataset, generate_offgrid_testset, grid, split_sizes, Generated, SweepConfig,
};
use brainstate::dataset::{mean_std, Dataset, SplitKind, Stats, WINDOW_LEN};
use brainstate::model::layout::N_TARGET;
use brainstate::Error;
use proptest::prelude::*;

fn config(seed: u64) -> SweepConfig {
    SweepConfig {
        tau_grid: grid(&[0.01, 0.02], &[0.02, 0.03]),
        seed,
        ..SweepConfig::default()
    }
}

/// 4 pairs × 25 inputs × 10 windows = 1,000 windows when every draw passes the gate.
fn thousand() -> &'static Generated {
    static CELL: OnceLock<Generated> = OnceLock::new();
    CELL.get_or_init(|| generate_dataset(&config(11), 25, 10).unwrap())
}

fn total(ds: &Dataset) -> usize {
    ds.train.len() + ds.val.len() + ds.test.len()
}

#[test]
fn thousand_windows_split_eight_one_one() {
    let ds = &thousand().dataset;
    assert_eq!(total(ds), 1000);
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (800, 100, 100));
    assert_eq!(ds.window_len, WINDOW_LEN);
    assert_eq!(thousand().ranges().len(), 4);
}

#[test]
fn training_split_is_standardized() {
    let tr = &thousand().dataset.train;
    let (m, s) = mean_std(tr.obs.iter().copied());
    assert!(m.abs() <= 0.05 && (s - 1.0).abs() <= 0.05, "obs {m} {s}");
    for j in 0..N_TARGET {
        let (m, s) = mean_std(tr.targets.iter().skip(j).step_by(N_TARGET).copied());
        assert!(m.abs() <= 0.05 && (s - 1.0).abs() <= 0.05, "target {j}: {m} {s}");
    }
}

#[test]
fn stats_come_from_the_training_split_only() {
    let ds = &thousand().dataset;
    let st = &ds.stats;
    let raw_obs: Vec<f64> = ds.train.obs.iter().map(|&y| st.destandardize_obs(y)).collect();
    let raw_targets: Vec<f64> = ds.train.targets.chunks_exact(N_TARGET).flat_map(|r| st.destandardize_target(r)).collect();
    let again = Stats::from_raw(&raw_obs, &raw_targets).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    assert!(close(again.obs_mean, st.obs_mean) && close(again.obs_std, st.obs_std));
    for j in 0..N_TARGET {
        assert!(close(again.target_mean[j], st.target_mean[j]), "mean {j}");
        assert!(close(again.target_std[j], st.target_std[j]), "std {j}");
    }
    // Held-out splits are not re-standardized on their own.
    let (m, _) = mean_std(ds.test.obs.iter().copied());
    assert!(m != 0.0);
}

#[test]
fn no_window_appears_in_two_splits() {
    let ds = &thousand().dataset;
    let mut seen = HashSet::new();
    for kind in SplitKind::ALL {
        for info in &ds.split(kind).info {
            assert!(seen.insert((info.recording, info.window)), "{info:?} duplicated");
        }
    }
    assert_eq!(seen.len(), 1000);
}

#[test]
fn save_and_load_are_bit_exact() {
    let ds = &thousand().dataset;
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    for kind in SplitKind::ALL {
        let (a, b) = (ds.split(kind), back.split(kind));
        assert_eq!(a.info, b.info);
        assert!(a.obs.iter().zip(&b.obs).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.targets.iter().zip(&b.targets).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!((a.obs.len(), a.targets.len()), (b.obs.len(), b.targets.len()));
    }
    let bits = |s: &Stats| {
        let mut v = vec![s.obs_mean.to_bits(), s.obs_std.to_bits()];
        v.extend(s.target_mean.iter().chain(&s.target_std).map(|x| x.to_bits()));
        v
    };
    assert_eq!(bits(&ds.stats), bits(&back.stats));
    assert_eq!(ds.provenance, back.provenance);
}

#[test]
fn loader_rejects_other_format_versions() {
    let dir = tempfile::tempdir().unwrap();
    thousand().dataset.save(dir.path()).unwrap();
    let meta = dir.path().join("meta.json");
    let text = std::fs::read_to_string(&meta).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["format_version"] = serde_json::json!(999);
    std::fs::write(&meta, v.to_string()).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Format(_))));
}

#[test]
fn same_seed_gives_same_split_membership() {
    let a = generate_dataset(&config(5), 2, 3).unwrap();
    let b = generate_dataset(&config(5), 2, 3).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&config(6), 2, 3).unwrap();
    let key = |g: &Generated| g.dataset.train.info.iter().map(|i| (i.recording, i.window)).collect::<Vec<_>>();
    assert_ne!(key(&a), key(&c));
}

#[test]
fn sweep_abandons_after_exactly_fifteen_failed_increases() {
    let cfg = config(0);
    let never = find_input_range_with(0.05, 0.05, &cfg, |_, _| Ok(false)).unwrap();
    assert!(never.range.is_none());
    // The starting input plus fifteen increases.
    assert_eq!(never.attempts.len(), 1 + 15);
    assert!(never.attempts.windows(2).all(|w| w[1].u > w[0].u));

    let mut calls = 0;
    let once = find_input_range_with(0.05, 0.05, &cfg, |_, _| {
        calls += 1;
        Ok((4..=6).contains(&calls))
    })
    .unwrap();
    let r = once.range.unwrap();
    assert_eq!(once.attempts.len(), 6 + 15);
    assert_eq!((r.u_lo, r.u_hi), (once.attempts[3].u, once.attempts[5].u));

    let errors = find_input_range_with(0.05, 0.05, &cfg, |_, _| Err(Error::InvalidParameter("boom".into()))).unwrap();
    assert_eq!(errors.attempts.len(), 16);
    assert!(errors.attempts.iter().all(|a| a.error.is_some()));
}

#[test]
fn offgrid_set_avoids_training_pairs_and_reuses_training_stats() {
    let cfg = SweepConfig {
        tau_grid: grid(&[0.01, 0.02, 0.03], &[0.02, 0.03]),
        seed: 9,
        ..SweepConfig::default()
    };
    let train = generate_dataset(&cfg, 1, 2).unwrap();
    let off = generate_offgrid_testset(&cfg, &train.dataset.stats, 1, 2).unwrap();
    assert_eq!(off.dataset.stats, train.dataset.stats);
    assert!(off.dataset.train.is_empty() && off.dataset.val.is_empty());
    assert!(!off.dataset.test.is_empty());
    for s in &off.sweeps {
        assert!(!cfg.tau_grid.contains(&(s.tau_e, s.tau_i)));
        assert!((0.01..=0.06).contains(&s.tau_e) && (0.01..=0.06).contains(&s.tau_i));
    }
    for info in &off.dataset.test.info {
        assert!(!cfg.tau_grid.contains(&(info.tau_e, info.tau_i)));
    }
}

proptest! {
    #[test]
    fn split_sizes_partition_every_count(n in 0usize..100_000) {
        let (tr, va, te) = split_sizes(n);
        prop_assert_eq!(tr + va + te, n);
        prop_assert_eq!(va, n / 10);
        prop_assert_eq!(te, n / 10);
    }
}
