use rand::seq::SliceRandom;

use super::{DatasetMeta, Episode, OfflineDataset};
use crate::error::{Error, Result};
use crate::rng;

/// Whole episodes drawn in a seeded random order until `count` transitions
/// are covered.
fn subsample(ds: &OfflineDataset, count: usize, seed: u64, label: &str) -> Result<Vec<Episode>> {
    if count > ds.transitions() {
        return Err(Error::Size(format!(
            "{label}: asked for {count} transitions, only {} available",
            ds.transitions()
        )));
    }
    let mut order: Vec<usize> = (0..ds.episodes().len()).collect();
    order.shuffle(&mut rng::rng(rng::child(seed, label)));
    let mut out = Vec::new();
    let mut taken = 0;
    for i in order {
        if taken >= count {
            break;
        }
        taken += ds.episodes()[i].len();
        out.push(ds.episodes()[i].clone());
    }
    Ok(out)
}

/// Episode-preserving blend of a simulated and a real dataset. Each side
/// contributes whole episodes until its transition count is reached, so
/// it may overshoot by less than one episode.
pub fn mix(sim: &OfflineDataset, real: &OfflineDataset, sim_count: usize, real_count: usize, seed: u64) -> Result<OfflineDataset> {
    if sim.obs_dim() != real.obs_dim() || sim.act_dim() != real.act_dim() {
        return Err(Error::Dimension("sim and real datasets have different dimensions".into()));
    }
    let total = sim_count + real_count;
    if total == 0 {
        return Err(Error::Size("mixture is empty".into()));
    }
    let mut episodes = subsample(sim, sim_count, seed, "sim")?;
    episodes.extend(subsample(real, real_count, seed, "real")?);
    let meta = DatasetMeta {
        env_kind: sim.meta.env_kind,
        env_hash: format!("{}+{}", sim.meta.env_hash, real.meta.env_hash),
        policy_tag: format!("mix({}|{})", sim.meta.policy_tag, real.meta.policy_tag),
        seed,
        transitions: 0,
        mix_ratio: Some((sim_count as f64 / total as f64, real_count as f64 / total as f64)),
        hash: String::new(),
    };
    OfflineDataset::new(meta, sim.obs_dim(), sim.act_dim(), episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::window::tests::tagged;

    #[test]
    fn one_sided_mixtures_and_ratio() {
        let sim = tagged(&[10; 10]);
        let real = tagged(&[7; 10]);
        let only_sim = mix(&sim, &real, 30, 0, 1).unwrap();
        assert!(only_sim.episodes().iter().all(|e| e.len() == 10));
        assert_eq!(only_sim.transitions(), 30);
        let only_real = mix(&sim, &real, 0, 20, 1).unwrap();
        assert!(only_real.episodes().iter().all(|e| e.len() == 7));
        assert_eq!(only_real.transitions(), 21);
        let m = mix(&sim, &real, 80, 20, 1).unwrap();
        assert_eq!(m.meta.mix_ratio, Some((0.8, 0.2)));
    }

    #[test]
    fn insufficient_data_is_a_size_error() {
        let sim = tagged(&[10; 2]);
        assert!(matches!(mix(&sim, &sim, 21, 0, 1), Err(Error::Size(_))));
    }

    #[test]
    fn included_episodes_are_intact() {
        let sim = tagged(&[12, 15, 9, 30]);
        let real = tagged(&[5, 6]);
        let m = mix(&sim, &real, 40, 6, 3).unwrap();
        for e in m.episodes() {
            let src = if e.len() < 7 { &real } else { &sim };
            assert!(src.episodes().contains(e));
        }
    }
}
