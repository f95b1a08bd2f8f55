use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kspace::{ComplexGrid, MultiCoilKSpace, SliceStack, C64};

pub fn random_multicoil(coils: usize, rows: usize, cols: usize, seed: u64) -> MultiCoilKSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = (0..coils)
        .map(|_| {
            ComplexGrid::from_fn(rows, cols, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
        })
        .collect();
    MultiCoilKSpace::new(grids).unwrap()
}

pub fn random_stack(b: usize, coils: usize, rows: usize, cols: usize, seed: u64) -> SliceStack {
    SliceStack::new(
        (0..b)
            .map(|s| random_multicoil(coils, rows, cols, seed * 1000 + s as u64))
            .collect(),
    )
    .unwrap()
}
