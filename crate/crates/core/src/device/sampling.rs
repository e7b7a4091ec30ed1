use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::op::{ConvOp, LinearOp, OpDescriptor, OpKind, CONV_KERNEL_SIZES, CONV_STRIDES};

/// Inclusive FLOP window for evaluation ops.
pub const EVAL_FLOPS_RANGE: (u128, u128) = (4_000_000, 1_000_000_000);

const MAX_DRAWS_PER_OP: usize = 1000;

fn interval_dim(rng: &mut impl Rng) -> u32 {
    let k = rng.random_range(2..=9u32);
    rng.random_range(1u32 << k..=1u32 << (k + 1))
}

/// Random training configurations. Each dimension picks an octave
/// `[2^k, 2^(k+1)]` with `k` uniform in `2..=9`, then a uniform integer in it.
/// Duplicate configurations and convs whose input is smaller than the kernel
/// are redrawn.
pub fn sample_training_ops(count: usize, kind: OpKind, seed: u64) -> Result<Vec<OpDescriptor>> {
    if count == 0 {
        return Err(Error::contract("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(MAX_DRAWS_PER_OP);
    let mut draws = 0usize;
    while out.len() < count {
        draws += 1;
        if draws > budget {
            return Err(Error::contract(format!(
                "could not draw {count} distinct {kind} configurations"
            )));
        }
        let op: Option<OpDescriptor> = match kind {
            OpKind::Linear => {
                let (l, ci, co) = (interval_dim(&mut rng), interval_dim(&mut rng), interval_dim(&mut rng));
                LinearOp::new(l, ci, co).ok().map(Into::into)
            }
            OpKind::Conv => {
                let h = interval_dim(&mut rng);
                let w = interval_dim(&mut rng);
                let ci = interval_dim(&mut rng);
                let co = interval_dim(&mut rng);
                let k = CONV_KERNEL_SIZES[rng.random_range(0..CONV_KERNEL_SIZES.len())];
                let s = CONV_STRIDES[rng.random_range(0..CONV_STRIDES.len())];
                ConvOp::new(h, w, ci, co, k, s).ok().map(Into::into)
            }
        };
        if let Some(op) = op {
            if seen.insert(op) {
                out.push(op);
            }
        }
    }
    Ok(out)
}

/// `{i * 2^j | 4 <= i <= 6, 2 <= j <= 9}`, ascending.
pub fn linear_eval_dims() -> Vec<u32> {
    let mut dims: Vec<u32> = (4..=6u32)
        .flat_map(|i| (2..=9u32).map(move |j| i << j))
        .collect();
    dims.sort_unstable();
    dims.dedup();
    dims
}

fn in_eval_range(op: &OpDescriptor) -> bool {
    let f = op.flops();
    f >= EVAL_FLOPS_RANGE.0 && f <= EVAL_FLOPS_RANGE.1
}

fn linear_eval_ops() -> Vec<OpDescriptor> {
    let dims = linear_eval_dims();
    let mut out = Vec::new();
    for &l in &dims {
        for &ci in &dims {
            for &co in &dims {
                let op: OpDescriptor = LinearOp::new(l, ci, co).expect("positive dims").into();
                if in_eval_range(&op) {
                    out.push(op);
                }
            }
        }
    }
    out
}

/// Four-stage hierarchy; each stage halves the square resolution and doubles
/// channel counts. Channel bases are divided by 1, 1, 4, 8 for K = 1, 3, 5, 7.
/// Configurations with input smaller than the kernel are not valid convs and
/// are skipped.
fn conv_eval_ops() -> Vec<OpDescriptor> {
    const RESOLUTIONS: [u32; 4] = [64, 56, 48, 40];
    const CHANNEL_BASES: [u32; 5] = [256, 320, 384, 448, 512];
    const DIVISORS: [u32; 4] = [1, 1, 4, 8];
    let mut out = Vec::new();
    for stage in 0..4u32 {
        for &r in &RESOLUTIONS {
            let hw = r >> stage;
            for (&k, &div) in CONV_KERNEL_SIZES.iter().zip(&DIVISORS) {
                for &s in &CONV_STRIDES {
                    for &ci in &CHANNEL_BASES {
                        for &co in &CHANNEL_BASES {
                            let c_in = (ci / div) << stage;
                            let c_out = (co / div) << stage;
                            let Ok(op) = ConvOp::new(hw, hw, c_in, c_out, k, s) else {
                                continue;
                            };
                            let op = op.into();
                            if in_eval_range(&op) {
                                out.push(op);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// The fixed evaluation grid for `kind`, in deterministic enumeration order.
pub fn sample_eval_ops(kind: OpKind) -> Vec<OpDescriptor> {
    match kind {
        OpKind::Linear => linear_eval_ops(),
        OpKind::Conv => conv_eval_ops(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_stay_in_octave_range() {
        let ops = sample_training_ops(2000, OpKind::Conv, 3).unwrap();
        for op in &ops {
            let OpDescriptor::Conv(c) = op else { panic!() };
            for d in [c.h_in(), c.w_in(), c.c_in(), c.c_out()] {
                assert!((4..=1024).contains(&d), "{d}");
            }
        }
    }

    #[test]
    fn octave_draw_bounds() {
        // Fixing k = 5 means the draw is over [32, 64].
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let v = rng.random_range(1u32 << 5..=1u32 << 6);
            assert!((32..=64).contains(&v));
        }
    }

    #[test]
    fn training_sampling_is_seeded() {
        let a = sample_training_ops(500, OpKind::Linear, 9).unwrap();
        let b = sample_training_ops(500, OpKind::Linear, 9).unwrap();
        let c = sample_training_ops(500, OpKind::Linear, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 500);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 500);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(sample_training_ops(0, OpKind::Linear, 0).is_err());
    }

    #[test]
    fn linear_grid_has_24_dims() {
        let dims = linear_eval_dims();
        assert_eq!(dims.len(), 24);
        assert_eq!(dims.first(), Some(&16));
        assert_eq!(dims.last(), Some(&3072));
    }

    #[test]
    fn eval_ops_respect_flops_window() {
        for kind in [OpKind::Linear, OpKind::Conv] {
            for op in sample_eval_ops(kind) {
                let f = op.flops();
                assert!((4_000_000..=1_000_000_000).contains(&f));
            }
        }
    }
}
