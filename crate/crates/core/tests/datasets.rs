mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use rwmu_core::datasets::{count_windows, mix, sample_windows, save, DatasetMeta, Episode, OfflineDataset};
use rwmu_core::envs::EnvKind;
use rwmu_core::rng;

/// Episodes of the given lengths whose observation encodes
/// `(episode, frame)` so sampled windows can be located exactly.
fn tagged(lengths: &[usize]) -> OfflineDataset {
    let episodes = lengths
        .iter()
        .enumerate()
        .map(|(e, &len)| {
            let mut ep = Episode::new(4, 1, &[e as f64, 0.0, 0.0, 0.0]);
            for t in 0..len {
                ep.push(&[t as f64], &[e as f64, (t + 1) as f64, 0.0, 0.0], 0.5, t + 1 == len, false);
            }
            ep
        })
        .collect();
    let meta = DatasetMeta {
        env_kind: EnvKind::Pendulum,
        env_hash: "test".into(),
        policy_tag: "tagged".into(),
        seed: 0,
        transitions: 0,
        mix_ratio: None,
        hash: String::new(),
    };
    OfflineDataset::new(meta, 4, 1, episodes).unwrap()
}

/// Upper chi-square quantile by the Wilson-Hilferty approximation.
fn chi2_critical(dof: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * dof);
    dof * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn window_starts_are_uniform() {
    let ds = tagged(&[6, 9, 13, 7, 20]);
    let (m, n) = (3, 2);
    let k = count_windows(&ds, m, n);
    assert_eq!(k, [6usize, 9, 13, 7, 20].iter().map(|l| l + 2 - 5).sum::<usize>());
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    let mut r = rng::rng(21);
    let draws = 100_000;
    for _ in 0..draws / 1_000 {
        let b = sample_windows(&ds, m, n, 1_000, 2, 1.0, &mut r).unwrap();
        for s in b.starts {
            *counts.entry(s).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), k, "every valid start should be hit");
    let expected = draws as f64 / k as f64;
    let stat: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // z = 3.09 is the one-sided 0.1% point of the standard normal
    let critical = chi2_critical((k - 1) as f64, 3.09);
    assert!(stat < critical, "chi-square {stat:.1} exceeds {critical:.1} with {} dof", k - 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windows_stay_inside_their_episode(
        lengths in prop::collection::vec(1usize..15, 1..6),
        m in 1usize..5,
        n in 1usize..4,
        seed in any::<u64>(),
    ) {
        let ds = tagged(&lengths);
        let expected: usize = lengths.iter().map(|&l| (l + 2).saturating_sub(m + n)).sum();
        prop_assert_eq!(count_windows(&ds, m, n), expected);
        let mut r = rng::rng(seed);
        match sample_windows(&ds, m, n, 8, 2, 1.0, &mut r) {
            Err(e) => prop_assert!(expected == 0, "unexpected error {}", e),
            Ok(b) => {
                prop_assert!(expected > 0);
                for (row, &(e, start)) in b.starts.iter().enumerate() {
                    prop_assert!(start + m + n <= lengths[e] + 1);
                    for k in 0..m {
                        let o = b.history_obs[k].row_slice(row);
                        prop_assert_eq!((o[0], o[1]), (e as f64, (start + k) as f64));
                    }
                    for k in 0..n {
                        let o = b.future_obs[k].row_slice(row);
                        prop_assert_eq!((o[0], o[1]), (e as f64, (start + m + k) as f64));
                    }
                }
            }
        }
    }
}

#[test]
fn file_size_matches_the_layout() {
    let (_, ds) = common::point_mass_data(900, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.rwd");
    save(&ds, &path).unwrap();
    let meta_len = serde_json::to_vec(&ds.meta).unwrap().len();
    let (od, ad) = (ds.obs_dim(), ds.act_dim());
    let payload: usize = ds.episodes().iter().map(|e| (e.len() + 1) * od + e.len() * ad + 3 * e.len()).sum();
    let expected = 9 + 4 + 4 + 8 + 8 + meta_len + 8 * ds.episodes().len() + 8 * payload;
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected);
}

#[test]
fn mixtures_draw_whole_episodes_from_both_sides() {
    let sim = tagged(&[10; 30]);
    let real = tagged(&[10; 30]);
    let m = mix(&sim, &real, 150, 50, 4).unwrap();
    assert_eq!(m.transitions(), 200);
    assert_eq!(m.meta.mix_ratio, Some((0.75, 0.25)));
    assert!(mix(&sim, &real, 400, 50, 4).is_err());
}
