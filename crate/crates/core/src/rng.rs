//! Reproducible random streams.
//!
//! Every consumer derives its generator from one master seed plus a stream
//! id. ChaCha is counter based, so distinct stream ids give independent
//! sequences that can be consumed in any order or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs an experiment tag and an index (stratum, replicate, ...) into a
/// stream id.
pub fn stream_id(tag: u32, index: u32) -> u64 {
    ((tag as u64) << 32) | index as u64
}

/// Writes a uniformly distributed unit vector into `out`.
pub fn unit_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            s += *v * *v;
        }
        if s > 1e-300 {
            let inv = 1.0 / s.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}
