use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Scenario;

const SCENARIO_STREAM: u64 = 0;
const EPISODE_STREAM: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derived_rng(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)));
    rng.set_stream(stream);
    rng
}

/// Generator for the `index`-th random scenario under a master seed.
///
/// The same index gives the same draws at every sweep point, so neighbouring
/// points share their scenarios.
pub fn scenario_rng(seed: u64, index: u64) -> ChaCha8Rng {
    derived_rng(seed, index, SCENARIO_STREAM)
}

/// Generator for the channel and task draws of the `index`-th scenario.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    derived_rng(seed, index, EPISODE_STREAM)
}

/// Random scenario with `p = u / Σu` and `γ = Γ v / Σv` for i.i.d. uniform `u`, `v`.
pub fn generate_scenario<R: Rng + ?Sized>(
    rng: &mut R,
    tasks: usize,
    total_size: f64,
    m: u32,
    latency: usize,
    prefetch_slots: usize,
) -> Result<Scenario> {
    let u: Vec<f64> = (0..tasks).map(|_| rng.sample(Open01)).collect();
    let v: Vec<f64> = (0..tasks).map(|_| rng.sample(Open01)).collect();
    let su: f64 = u.iter().sum();
    let sv: f64 = v.iter().sum();
    let probs = u.iter().map(|x| x / su).collect();
    let sizes = v.iter().map(|x| x / sv * total_size).collect();
    Scenario::new(m, latency, prefetch_slots, probs, sizes)
}
