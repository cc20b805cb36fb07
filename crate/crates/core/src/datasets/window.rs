use rand::Rng as _;

use super::OfflineDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;

/// A batch of `(M, N)` training windows, stored time-major: element `k`
/// of each vector is a `[batch, dim]` matrix for that time step.
///
/// Step `k` of the forecast predicts `future_obs[k]` from the previous
/// frame and the action taken there (`history_act[M-1]` for `k = 0`,
/// `future_act[k-1]` afterwards). The final future action has no
/// successor frame and is zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub history_obs: Vec<Tensor>,
    pub history_act: Vec<Tensor>,
    pub future_obs: Vec<Tensor>,
    pub future_act: Vec<Tensor>,
    /// Failure flag of the transition producing `future_obs[k]`, `[batch, 1]`.
    pub future_failure: Vec<Tensor>,
    /// Bootstrap inclusion mask, `[batch, B]` with entries in {0, 1}.
    pub mask: Tensor,
    /// `(episode, first frame)` of every window.
    pub starts: Vec<(usize, usize)>,
}

impl WindowBatch {
    pub fn batch(&self) -> usize {
        self.starts.len()
    }

    pub fn history(&self) -> usize {
        self.history_obs.len()
    }

    pub fn horizon(&self) -> usize {
        self.future_obs.len()
    }
}

/// Valid window starts in an episode with `frames` observations.
fn starts_in(frames: usize, span: usize) -> usize {
    (frames + 1).saturating_sub(span)
}

/// Total number of valid `(M, N)` window starts in the dataset. A window
/// covers `M + N` consecutive observation frames of one episode.
pub fn count_windows(ds: &OfflineDataset, history: usize, horizon: usize) -> usize {
    ds.episodes().iter().map(|e| starts_in(e.frames(), history + horizon)).sum()
}

/// Draws `batch` windows uniformly over all valid start positions, with a
/// per-window Bernoulli(`keep_prob`) inclusion mask for each of `heads`
/// ensemble members.
pub fn sample_windows(
    ds: &OfflineDataset,
    history: usize,
    horizon: usize,
    batch: usize,
    heads: usize,
    keep_prob: f64,
    rng: &mut Rng,
) -> Result<WindowBatch> {
    if history == 0 || horizon == 0 || batch == 0 || heads == 0 {
        return Err(Error::Config("history, horizon, batch and heads must be positive".into()));
    }
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(Error::Config(format!("bootstrap keep probability {keep_prob} outside [0, 1]")));
    }
    let span = history + horizon;
    let mut cumulative = Vec::with_capacity(ds.episodes().len());
    let mut total = 0;
    for e in ds.episodes() {
        total += starts_in(e.frames(), span);
        cumulative.push(total);
    }
    if total == 0 {
        return Err(Error::Size(format!("no episode has the {span} frames a window needs")));
    }
    let starts: Vec<(usize, usize)> = (0..batch)
        .map(|_| {
            let i = rng.random_range(0..total);
            let ep = cumulative.partition_point(|&c| c <= i);
            let before = if ep == 0 { 0 } else { cumulative[ep - 1] };
            (ep, i - before)
        })
        .collect();
    let mask: Vec<f64> =
        (0..batch * heads).map(|_| if rng.random_bool(keep_prob) { 1.0 } else { 0.0 }).collect();
    Ok(gather(ds, &starts, history, horizon, Tensor::from_raw(vec![batch, heads], mask)))
}

/// Assembles the windows beginning at the given `(episode, frame)` starts.
pub(crate) fn gather(
    ds: &OfflineDataset,
    starts: &[(usize, usize)],
    history: usize,
    horizon: usize,
    mask: Tensor,
) -> WindowBatch {
    let (od, ad) = (ds.obs_dim(), ds.act_dim());
    let b = starts.len();
    let frame = |k: usize| {
        let mut obs = Vec::with_capacity(b * od);
        let mut act = Vec::with_capacity(b * ad);
        let mut fail = Vec::with_capacity(b);
        for &(e, s) in starts {
            let ep = &ds.episodes()[e];
            let t = s + k;
            obs.extend_from_slice(ep.obs(t));
            if t < ep.len() && k + 1 < history + horizon {
                act.extend_from_slice(ep.action(t));
            } else {
                act.extend(std::iter::repeat_n(0.0, ad));
            }
            fail.push(if t > 0 && ep.failures[t - 1] { 1.0 } else { 0.0 });
        }
        (
            Tensor::from_raw(vec![b, od], obs),
            Tensor::from_raw(vec![b, ad], act),
            Tensor::from_raw(vec![b, 1], fail),
        )
    };
    let mut out = WindowBatch {
        history_obs: Vec::with_capacity(history),
        history_act: Vec::with_capacity(history),
        future_obs: Vec::with_capacity(horizon),
        future_act: Vec::with_capacity(horizon),
        future_failure: Vec::with_capacity(horizon),
        mask,
        starts: starts.to_vec(),
    };
    for k in 0..history + horizon {
        let (o, a, f) = frame(k);
        if k < history {
            out.history_obs.push(o);
            out.history_act.push(a);
        } else {
            out.future_obs.push(o);
            out.future_act.push(a);
            out.future_failure.push(f);
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::datasets::{DatasetMeta, Episode};
    use crate::envs::EnvKind;
    use crate::rng;

    /// Episodes whose observation frames encode `(episode, t)`.
    pub(crate) fn tagged(lengths: &[usize]) -> OfflineDataset {
        let episodes = lengths
            .iter()
            .enumerate()
            .map(|(e, &len)| {
                let tag = |t: usize| vec![e as f64, t as f64, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
                let mut ep = Episode::new(8, 2, &tag(0));
                for t in 0..len {
                    ep.push(&[t as f64, 0.0], &tag(t + 1), 0.0, t + 1 == len, false);
                }
                ep
            })
            .collect();
        let meta = DatasetMeta {
            env_kind: EnvKind::PointMass,
            env_hash: String::new(),
            policy_tag: "tagged".into(),
            seed: 0,
            transitions: 0,
            mix_ratio: None,
            hash: String::new(),
        };
        OfflineDataset::new(meta, 8, 2, episodes).unwrap()
    }

    #[test]
    fn exact_length_episode_has_one_start() {
        // M + N frames = M + N - 1 transitions
        let ds = tagged(&[39, 39]);
        assert_eq!(count_windows(&ds, 32, 8), 2);
        let mut r = rng::rng(1);
        let w = sample_windows(&ds, 32, 8, 16, 5, 0.8, &mut r).unwrap();
        assert!(w.starts.iter().all(|&(_, s)| s == 0));
        assert_eq!((w.history(), w.horizon()), (32, 8));
        assert_eq!(w.history_obs[0].shape(), &[16, 8]);
        assert_eq!(w.future_act[7].data(), &[0.0; 32][..]);
    }

    #[test]
    fn too_short_is_a_size_error() {
        let ds = tagged(&[10, 20]);
        let mut r = rng::rng(1);
        assert!(matches!(sample_windows(&ds, 32, 8, 4, 5, 0.8, &mut r), Err(Error::Size(_))));
    }

    #[test]
    fn frames_are_consecutive() {
        let ds = tagged(&[60]);
        let mut r = rng::rng(2);
        let w = sample_windows(&ds, 4, 3, 8, 2, 0.5, &mut r).unwrap();
        for (i, &(_, s)) in w.starts.iter().enumerate() {
            for k in 0..4 {
                assert_eq!(w.history_obs[k].row_slice(i)[1], (s + k) as f64);
                assert_eq!(w.history_act[k].row_slice(i)[0], (s + k) as f64);
            }
            for k in 0..3 {
                assert_eq!(w.future_obs[k].row_slice(i)[1], (s + 4 + k) as f64);
            }
        }
        assert!(w.mask.data().iter().all(|&m| m == 0.0 || m == 1.0));
    }
}
