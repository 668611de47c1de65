//! Seed derivation. Every stage and utterance gets its own stream derived
//! from the global seed, so partial reruns reproduce the same values.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag)
}

/// FNV-1a over the label, folded into `seed`.
pub fn derive_str(seed: u64, label: &str) -> u64 {
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    derive(seed, h)
}
