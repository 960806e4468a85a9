//! Seed derivation shared by every randomised stage.

/// One step of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a label; stable across platforms and releases.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for a named stage, independent of the order in which stages run.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ label_hash(label))
}

/// Seed for the `index`-th independent chunk or sub-task of a stage.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate_streams() {
        assert_ne!(derive_seed(42, "gcomp"), derive_seed(42, "psm"));
        assert_eq!(derive_seed(42, "gcomp"), derive_seed(42, "gcomp"));
        assert_ne!(sub_seed(7, 0), sub_seed(7, 1));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(label_hash(""), 0xCBF2_9CE4_8422_2325);
        assert_eq!(label_hash("a"), 0xAF63_DC4C_8601_EC8C);
    }
}
