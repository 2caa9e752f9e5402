use rand::seq::index;

use crate::rng::rng_from;

/// Uniformly random subset of `round(fraction · count)` layer positions (at
/// least one), sorted ascending. A fraction of 1 selects every layer without
/// drawing from the generator.
pub fn select_layers(layer_count: usize, fraction: f64, seed: u64) -> Vec<usize> {
    if layer_count == 0 {
        return Vec::new();
    }
    let k = ((fraction * layer_count as f64).round() as usize).clamp(1, layer_count);
    if k == layer_count {
        return (0..layer_count).collect();
    }
    let mut rng = rng_from(seed);
    let mut picked = index::sample(&mut rng, layer_count, k).into_vec();
    picked.sort_unstable();
    picked
}
