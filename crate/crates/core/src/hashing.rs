//! Stable hashing helpers.
//!
//! Everything persisted or compared across runs (group ids, hashed features,
//! derived seeds) goes through these functions instead of `std::hash`, whose
//! output is not guaranteed stable between compiler releases.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer. Good avalanche, bijective on u64.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hash a string under a seed.
pub fn seeded_str_hash(seed: u64, s: &str) -> u64 {
    splitmix64(fnv1a64(s.as_bytes()) ^ splitmix64(seed))
}

/// Counter-mode seed derivation: child seeds of one root seed never collide
/// for distinct counters.
pub fn derive_seed(root: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(root) ^ counter.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Uniform value in [0, 1) from a hash.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Signed feature hashing of weighted tokens into `dim` buckets. Not normalized.
pub fn hash_tokens<'a, I>(tokens: I, dim: usize, seed: u64) -> Vec<f64>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut v = vec![0.0; dim];
    if dim == 0 {
        return v;
    }
    for (tok, w) in tokens {
        let h = seeded_str_hash(seed, tok);
        let idx = (h % dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * w;
    }
    v
}

/// In-place L2 normalization; zero vectors are left untouched.
pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Lower-cased alphanumeric tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}
