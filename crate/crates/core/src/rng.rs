//! Named random streams derived from one run seed.
//!
//! Each stream is a ChaCha20 generator seeded with the run seed and set to
//! its own stream id, so changing how many draws one consumer makes never
//! shifts the values another consumer sees.

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::MultiViewLatent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Scene,
    Eps,
    EpsShared,
    Timesteps,
    Denoiser,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Scene => 1,
            Stream::Eps => 2,
            Stream::EpsShared => 3,
            Stream::Timesteps => 4,
            Stream::Denoiser => 5,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Standard-normal `[N, C, H, W]` stack.
pub fn gaussian_stack<R: rand::Rng + ?Sized>(rng: &mut R, shape: [usize; 4]) -> MultiViewLatent {
    let data = Array4::from_shape_simple_fn(shape, || StandardNormal.sample(rng));
    MultiViewLatent::new(data).expect("normal samples are finite")
}

/// One standard-normal `[C, H, W]` slice replicated across `n_views`.
pub fn shared_gaussian_stack<R: rand::Rng + ?Sized>(
    rng: &mut R,
    shape: [usize; 4],
) -> MultiViewLatent {
    let [n, c, h, w] = shape;
    let slice = Array3::from_shape_simple_fn((c, h, w), || StandardNormal.sample(rng));
    MultiViewLatent::replicate(&slice, n).expect("valid shape")
}
