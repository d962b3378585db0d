//! Counter-based noise for the particle updates. Each Gaussian draw is a pure
//! function of (seed, step, particle, coordinate), so parallel execution over
//! particles is bit-reproducible regardless of thread count or schedule.

/// SplitMix64 finalizer over a combined counter.
fn mix(seed: u64, step: u64, particle: u64, lane: u64) -> u64 {
    let mut z = seed;
    for word in [step, particle, lane] {
        z = z.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(word);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

/// Uniform in the open interval (0, 1) from a mixed 64-bit word.
fn uniform_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal draw for one coordinate of one particle at one step.
/// Box-Muller on two independent counter lanes; stateless and exact to
/// floating-point rounding.
pub fn standard_normal(seed: u64, step: u64, particle: u64, coord: u64) -> f64 {
    let u1 = uniform_open(mix(seed, step, particle, 2 * coord));
    let u2 = uniform_open(mix(seed, step, particle, 2 * coord + 1));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The full noise vector for one particle at one step.
pub fn normal_vector(seed: u64, step: u64, particle: u64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| standard_normal(seed, step, particle, k as u64))
        .collect()
}
