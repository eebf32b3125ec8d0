//! Deterministic derivation of disjoint RNG streams from one base seed.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `tag` of `base`. Different tags give
/// statistically independent ChaCha streams.
pub fn derive(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag.wrapping_mul(0xA24B_AED4_963E_E407)))
}

/// Two-level derivation for per-item streams inside a tagged family.
pub fn derive2(base: u64, tag: u64, item: u64) -> u64 {
    derive(derive(base, tag), item)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_tags_and_items() {
        let a = derive(42, 0);
        let b = derive(42, 1);
        let c = derive(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive2(42, 0, 0), derive2(42, 0, 1));
        assert_ne!(derive2(42, 0, 1), derive2(42, 1, 0));
    }
}
