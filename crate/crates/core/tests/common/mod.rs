#![allow(dead_code)]

use cran_core::model::{draw_block, realization_rng, ChannelRealization};
use rand::Rng;

/// Random channel in normalized units with per-(user, RAP) gains drawn
/// log-uniformly from [0.05, 20] and budgets from [0.5, 3].
pub fn random_channel(seed: u64, l: usize, nc: usize, k: usize, n: usize) -> ChannelRealization {
    let mut rng = realization_rng(seed, 0);
    let blocks = (0..k)
        .map(|_| {
            (0..l)
                .map(|_| {
                    let g = 10f64.powf(rng.random_range(-1.3..1.3));
                    draw_block(g, n, nc, &mut rng)
                })
                .collect()
        })
        .collect();
    let budgets = (0..l).map(|_| rng.random_range(0.5..3.0)).collect();
    ChannelRealization::from_blocks(nc, blocks, budgets, 1.0).unwrap()
}

/// Channel with identical blocks at every RAP.
pub fn identical_raps(seed: u64, l: usize, nc: usize, k: usize, n: usize) -> ChannelRealization {
    let mut rng = realization_rng(seed, 0);
    let per_user: Vec<_> = (0..k).map(|_| draw_block(1.0, n, nc, &mut rng)).collect();
    let blocks = per_user.iter().map(|b| vec![b.clone(); l]).collect();
    ChannelRealization::from_blocks(nc, blocks, vec![1.0; l], 1.0).unwrap()
}
