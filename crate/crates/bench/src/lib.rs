//! Fixtures shared by the criterion benchmarks in `benches/`.

use rwmu_core::datasets::{collect, OfflineDataset};
use rwmu_core::envs::EnvConfig;
use rwmu_core::mopo::{NetConfig, PolicyNet};
use rwmu_core::world_model::{WorldModel, WorldModelConfig};

/// A point-mass dataset collected by an untrained policy.
pub fn dataset(transitions: usize) -> (EnvConfig, OfflineDataset) {
    let env = EnvConfig::point_mass();
    let policy = PolicyNet::for_env(&env, NetConfig::default(), 1);
    let ds = collect(&env, &policy, transitions, 0.1, 2, "bench").expect("collection succeeds");
    (env, ds)
}

/// The quick-preset world-model shape on `ds`.
pub fn model(ds: &OfflineDataset) -> WorldModel {
    let cfg = WorldModelConfig { gru_hidden: vec![32], head_hidden: vec![32], ..WorldModelConfig::default() };
    WorldModel::for_dataset(cfg, ds, 3).expect("valid config")
}
