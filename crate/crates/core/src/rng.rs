//! Keyed counter-based random numbers.
//!
//! Every uniform draw is a pure function of the key
//! `(seed, path_id, step, component)`: there is no generator state, so paths
//! can be simulated in any order, on any number of workers, and a given key
//! always yields the same draw. The mapping hashes the key words through
//! three rounds of the splitmix64 finaliser and takes the top 53 bits as a
//! uniform in `[0, 1)`.
//!
//! Discrete increments are obtained from the uniform by threshold maps with
//! half-open cells (a value equal to a threshold belongs to the upper cell):
//!
//! ```text
//! sign:        u < 1/2  -> -1,            else +1
//! three-point: u < 1/6  -> -sqrt(3),  u < 5/6 -> 0,  else +sqrt(3)
//! ```
//!
//! The three-point law has P(+-sqrt 3) = 1/6 and P(0) = 2/3, matching the
//! moments E xi = E xi^3 = 0, E xi^2 = 1, E xi^4 = 3 required by second-order
//! weak schemes.

/// Disjoint seed domains. Training and testing paths must never share draws,
/// so all public entry points derive their working seed from a master seed
/// and a domain tag before any key is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedDomain {
    /// Paths used to fit regression coefficients.
    Train,
    /// Fresh paths used by estimators.
    Test,
    /// Auxiliary draws (probe points, diagnostics).
    Probe,
}

const DOMAIN_TAGS: [u64; 3] = [
    0x7472_6169_6e5f_7467, // "train_tg"
    0x7465_7374_5f74_6167, // "test_tag"
    0x7072_6f62_655f_7467, // "probe_tg"
];

/// splitmix64 finaliser: a bijective 64-bit mixer with full avalanche.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the working seed for a domain from a master seed.
pub fn domain_seed(master: u64, domain: SeedDomain) -> u64 {
    mix64(master.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ DOMAIN_TAGS[domain as usize])
}

/// Derive an independent master seed for repetition `rep` of a sweep.
pub fn rep_seed(master: u64, rep: u64) -> u64 {
    mix64(mix64(master ^ 0x7265_705f_7365_6564).wrapping_add(rep))
}

/// Uniform draw in `[0, 1)` for one key. Pure and stateless.
#[inline]
pub fn uniform(seed: u64, path_id: u64, step: u32, component: u32) -> f64 {
    let mut h = mix64(seed ^ 0x6b65_7965_645f_7531);
    h = mix64(h ^ path_id);
    h = mix64(h ^ (((step as u64) << 32) | component as u64));
    // Top 53 bits, scaled to [0, 1).
    (h >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Map a uniform to a Rademacher sign: -1 on `[0, 1/2)`, +1 on `[1/2, 1)`.
#[inline]
pub fn sign_from_uniform(u: f64) -> i8 {
    if u < 0.5 {
        -1
    } else {
        1
    }
}

/// Map a uniform to the three-point code {-1, 0, +1}, where the code scales
/// sqrt(3): -1 on `[0, 1/6)`, 0 on `[1/6, 5/6)`, +1 on `[5/6, 1)`.
#[inline]
pub fn three_point_from_uniform(u: f64) -> i8 {
    if u < 1.0 / 6.0 {
        -1
    } else if u < 5.0 / 6.0 {
        0
    } else {
        1
    }
}
