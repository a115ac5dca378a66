//! Deterministic, splittable random streams.
//!
//! Every stochastic component takes an explicit rng; nothing reads ambient
//! state. Per-sample streams are derived from `(run seed, sample index)` so
//! the i-th sample sees identical randomness regardless of which sampler
//! consumes it.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The rng used throughout; ChaCha gives portable, seedable streams.
pub type Stream = ChaCha8Rng;

/// SplitMix64 mixing step; used to decorrelate derived seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for the `index`-th sample of a run. Identical across sampler
/// kinds by construction.
pub fn sample_stream(seed: u64, index: u64) -> Stream {
    let mixed = splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)));
    Stream::seed_from_u64(mixed)
}

/// Stream for run-level setup work (e.g. data-variance calibration),
/// decoupled from the per-sample streams.
pub fn setup_stream(seed: u64, label: u64) -> Stream {
    let mixed = splitmix64(splitmix64(seed).wrapping_add(label) ^ 0xa076_1d64_78bd_642f);
    Stream::seed_from_u64(mixed)
}

/// Fills an array of the given shape with standard-normal draws in
/// row-major order.
pub fn normal_array(rng: &mut Stream, shape: &[usize]) -> ArrayD<f64> {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/len agree")
}

/// Standard-normal vector draw.
pub fn normal_vec(rng: &mut Stream, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fingerprint of the first few draws of a stream; cheap check that two
/// streams are identical without storing them.
pub fn stream_fingerprint(stream: &Stream) -> u64 {
    let mut probe = stream.clone();
    let mut acc = 0xcbf2_9ce4_8422_2325u64;
    for _ in 0..8 {
        let bits = f64::to_bits(probe.sample(StandardNormal));
        acc = (acc ^ bits).wrapping_mul(0x0000_0100_0000_01b3);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_streams_are_deterministic() {
        let mut a = sample_stream(7, 3);
        let mut b = sample_stream(7, 3);
        let xa: Vec<f64> = normal_vec(&mut a, 16);
        let xb: Vec<f64> = normal_vec(&mut b, 16);
        assert_eq!(xa, xb);
    }

    #[test]
    fn sample_streams_differ_across_indices_and_seeds() {
        let fp = |seed, idx| stream_fingerprint(&sample_stream(seed, idx));
        assert_ne!(fp(7, 0), fp(7, 1));
        assert_ne!(fp(7, 0), fp(8, 0));
    }

    #[test]
    fn normal_array_is_row_major_of_stream_draws() {
        let mut rng = sample_stream(1, 0);
        let arr = normal_array(&mut rng, &[2, 3]);
        let mut rng2 = sample_stream(1, 0);
        let flat = normal_vec(&mut rng2, 6);
        assert_eq!(arr.as_slice().unwrap(), &flat[..]);
    }
}
