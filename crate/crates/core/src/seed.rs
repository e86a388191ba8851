//! Per-component seeds derived from one master seed.
//!
//! `derive_seed(master, label)` hashes `label` with FNV-1a, xors it into the
//! master seed and finishes with the SplitMix64 mixer. Labels used by the
//! pipeline: `split`, `encoder`, `heads`, `shuffle`, `synth`, and
//! `fewshot/<k>/<rep>` (then `encoder`, `heads`, `shuffle`, `sample` under it).

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label.as_bytes()))
}
