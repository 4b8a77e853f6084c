//! Parameter count of a detector config from per-layer formulas, independent
//! of the tensor store.

#![allow(dead_code)]

use spoofbench_core::detector::DetectorConfig;

/// Pinned total for the shipped default config.
pub const DEFAULT_PARAMETER_COUNT: usize = 3_921_826;

/// Parameter total computed from layer formulas alone, without touching the
/// store: conv = c_out * c_in / groups * k * k (+ c_out with bias), BN = 4c.
pub fn shape_oracle(cfg: &DetectorConfig) -> usize {
    let conv = |ci: usize, co: usize, k: usize, g: usize, bias: bool| co * (ci / g) * k * k + if bias { co } else { 0 };
    let bn = |c: usize| 4 * c;
    let k = cfg.cot_kernel;
    let mut total = 0;
    let mut prev = 1;
    for s in 0..4 {
        let c = cfg.stage_channels[s];
        total += conv(prev, c, if s == 0 { 3 } else { 2 }, 1, false) + bn(c);
        for b in 0..cfg.blocks_per_stage[s] {
            let mid = 2 * c / cfg.cot_reduction;
            total += 2 * (conv(c, c, 3, 1, false) + bn(c));
            total += conv(c, c, k, cfg.cot_groups, false) + bn(c);
            total += conv(c, c, 1, 1, false) + bn(c);
            total += conv(2 * c, mid, 1, 1, false) + bn(mid);
            total += conv(mid, k * k * cfg.cot_heads, 1, 1, true);
            if b == 0 {
                total += conv(c, c, 1, 1, false) + bn(c);
            }
        }
        prev = c;
    }
    let d = cfg.stage_channels[3];
    let a = cfg.pool_attention_dim;
    total + a * d + a + a + cfg.n_classes * 2 * d + cfg.n_classes
}

