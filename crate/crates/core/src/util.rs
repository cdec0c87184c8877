//! Small deterministic helpers shared across modules.

/// Total-order wrapper for f64 map/set keys. Normalizes -0.0 to 0.0 so the
/// two zeros collide; NaN sorts last (callers exclude missing beforehand).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrdF64(f64);

impl OrdF64 {
    pub fn new(v: f64) -> OrdF64 {
        OrdF64(if v == 0.0 { 0.0 } else { v })
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// FNV-1a 64-bit hash; fixed offset/prime so hashed interaction buckets are
/// identical across machines and runs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 step, used to derive per-step seeds from a master seed.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Indices that sort `values` ascending; ties keep original order.
pub fn stable_argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordf64_normalizes_negative_zero() {
        assert_eq!(OrdF64::new(-0.0), OrdF64::new(0.0));
        assert!(OrdF64::new(-1.0) < OrdF64::new(1.0));
        assert!(OrdF64::new(f64::NEG_INFINITY) < OrdF64::new(0.0));
    }

    #[test]
    fn fnv_known_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn argsort_stable_on_ties() {
        assert_eq!(stable_argsort(&[2.0, 1.0, 2.0, 0.0]), vec![3, 1, 0, 2]);
    }
}
