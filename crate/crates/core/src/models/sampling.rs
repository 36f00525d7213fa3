//! Frame-index selection strategies.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dot, Embedder, ModelError, VideoInstance};

/// Index of the central keyframe, `⌊L / 2⌋` (frame 100 of 200).
pub fn keyframe_index(seq_len: usize) -> usize {
    seq_len / 2
}

/// Hybrid sampler parameters: `k` frames, a window of `±halfwidth` around
/// the keyframe and the probability mass the window gets in the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridSampler {
    pub k: usize,
    pub halfwidth: usize,
    pub center_bias: f64,
}

impl Default for HybridSampler {
    fn default() -> Self {
        Self {
            k: 32,
            halfwidth: 16,
            center_bias: 0.6,
        }
    }
}

impl HybridSampler {
    pub fn sample<R: Rng + ?Sized>(&self, seq_len: usize, rng: &mut R) -> Result<Vec<usize>, ModelError> {
        sample_indices_hybrid(seq_len, self.k, self.halfwidth, self.center_bias, rng)
    }
}

/// Two-stage sampler biased toward the central window.
///
/// Stage one draws `⌈2k/3⌉` indices uniformly without replacement from the
/// window `[m - w, m + w]` (all of it if the window is smaller). Stage two
/// fills the remaining slots one at a time: with probability `center_bias`
/// from the unused window positions, otherwise from the unused positions
/// outside it; an exhausted region defers to the other. The result is sorted.
pub fn sample_indices_hybrid<R: Rng + ?Sized>(
    seq_len: usize,
    k: usize,
    halfwidth: usize,
    center_bias: f64,
    rng: &mut R,
) -> Result<Vec<usize>, ModelError> {
    if k == 0 || k > seq_len {
        return Err(ModelError::InvalidArgument(format!(
            "cannot sample {k} distinct frames from {seq_len}"
        )));
    }
    if !(0.0..=1.0).contains(&center_bias) {
        return Err(ModelError::InvalidArgument("center_bias must lie in [0, 1]".into()));
    }
    let mid = keyframe_index(seq_len);
    if halfwidth > mid || mid + halfwidth >= seq_len {
        return Err(ModelError::InvalidArgument(format!(
            "window ±{halfwidth} around frame {mid} does not fit in {seq_len} frames"
        )));
    }
    let lo = mid - halfwidth;
    let window_len = 2 * halfwidth + 1;

    let first = (2 * k).div_ceil(3).min(window_len);
    let mut taken = vec![false; seq_len];
    for i in index::sample(rng, window_len, first) {
        taken[lo + i] = true;
    }

    let in_window = |i: usize| (lo..=mid + halfwidth).contains(&i);
    for _ in first..k {
        let free_inside: Vec<usize> = (lo..=mid + halfwidth).filter(|&i| !taken[i]).collect();
        let free_outside: Vec<usize> = (0..seq_len).filter(|&i| !taken[i] && !in_window(i)).collect();
        let pick_inside = match (free_inside.is_empty(), free_outside.is_empty()) {
            (false, false) => rng.random_bool(center_bias),
            (false, true) => true,
            (true, _) => false,
        };
        let pool = if pick_inside { &free_inside } else { &free_outside };
        taken[pool[rng.random_range(0..pool.len())]] = true;
    }
    Ok((0..seq_len).filter(|&i| taken[i]).collect())
}

/// `k` evenly spaced indices, `⌊i · L / k⌋` for `i = 0..k`.
pub fn sample_indices_equidistant(seq_len: usize, k: usize) -> Result<Vec<usize>, ModelError> {
    if k == 0 || k > seq_len {
        return Err(ModelError::InvalidArgument(format!(
            "equidistant sampling needs 1 <= k <= {seq_len}, got {k}"
        )));
    }
    Ok((0..k).map(|i| i * seq_len / k).collect())
}

/// The keyframe plus the `k - 1` frames whose embeddings are most similar
/// to the keyframe's embedding, ties going to the lower index. Sorted.
pub fn select_frames_by_similarity<E: Embedder + ?Sized>(
    instance: &VideoInstance,
    embedder: &E,
    k: usize,
) -> Result<Vec<usize>, ModelError> {
    let len = instance.len();
    if k == 0 || k > len {
        return Err(ModelError::InvalidArgument(format!(
            "cannot select {k} frames from a {len}-frame video"
        )));
    }
    let key = keyframe_index(len);
    let reference = embedder.embed(&instance.frames[key]);
    let mut scored: Vec<(usize, f64)> = (0..len)
        .filter(|&i| i != key)
        .map(|i| (i, dot(&embedder.embed(&instance.frames[i]), &reference)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = scored.into_iter().take(k - 1).map(|(i, _)| i).collect();
    chosen.push(key);
    chosen.sort_unstable();
    Ok(chosen)
}
