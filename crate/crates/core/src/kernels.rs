//! Unoptimized numeric reference kernels.
//!
//! These exist to show that splitting a layer along output channels, and
//! running one half with a different convolution algorithm, reproduces the
//! unpartitioned result. Layouts are row-major: activations `[H, W, C]`,
//! linear weights `[C_in, C_out]`, conv weights `[K, K, C_in, C_out]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::op::{split, ChannelPartition, OpDescriptor};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract(format!("tensor dims must be positive: {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::contract(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("tensor values must be finite"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Entries drawn from N(0, 1).
    pub fn random_normal<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v as f32
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn scale(&self, a: f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.dims != other.dims {
            return Err(Error::contract(format!(
                "shape mismatch: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Keep `range` along the last axis.
    pub fn slice_last(&self, range: std::ops::Range<usize>) -> Result<Tensor> {
        let last = *self.dims.last().expect("tensor has at least one dim");
        if range.start >= range.end || range.end > last {
            return Err(Error::contract(format!(
                "slice {range:?} out of bounds for last axis {last}"
            )));
        }
        let width = range.end - range.start;
        let mut data = Vec::with_capacity(self.data.len() / last * width);
        for chunk in self.data.chunks(last) {
            data.extend_from_slice(&chunk[range.clone()]);
        }
        let mut dims = self.dims.clone();
        *dims.last_mut().unwrap() = width;
        Ok(Tensor { dims, data })
    }

    /// Concatenate along the last axis; leading dims must agree.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("nothing to concatenate"))?;
        let lead = &first.dims[..first.dims.len() - 1];
        for p in parts {
            if &p.dims[..p.dims.len() - 1] != lead {
                return Err(Error::contract("leading dims differ in concat"));
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = parts.iter().map(|p| *p.dims.last().unwrap()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let w = *p.dims.last().unwrap();
                data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        let mut dims = lead.to_vec();
        dims.push(total);
        Ok(Tensor { dims, data })
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.dims.len() != rank {
        return Err(Error::contract(format!(
            "{what} must have rank {rank}, got dims {:?}",
            t.dims
        )));
    }
    Ok(())
}

/// `Y = X W`, summing over `k` in ascending order.
pub fn linear_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    expect_rank(x, 2, "linear input")?;
    expect_rank(w, 2, "linear weights")?;
    let (l, c_in) = (x.dims[0], x.dims[1]);
    let (w_in, c_out) = (w.dims[0], w.dims[1]);
    if c_in != w_in {
        return Err(Error::contract(format!(
            "inner dimensions differ: X is {l}x{c_in}, W is {w_in}x{c_out}"
        )));
    }
    let mut y = vec![0.0f32; l * c_out];
    for i in 0..l {
        for j in 0..c_out {
            let mut acc = 0.0f32;
            for k in 0..c_in {
                acc += x.data[i * c_in + k] * w.data[k * c_out + j];
            }
            y[i * c_out + j] = acc;
        }
    }
    Tensor::new(vec![l, c_out], y)
}

struct ConvShape {
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
}

fn conv_shape(x: &Tensor, w: &Tensor) -> Result<ConvShape> {
    expect_rank(x, 3, "conv input")?;
    expect_rank(w, 4, "conv weights")?;
    let (h, wd, c_in) = (x.dims[0], x.dims[1], x.dims[2]);
    let (k, k2, w_in, c_out) = (w.dims[0], w.dims[1], w.dims[2], w.dims[3]);
    if k != k2 || k % 2 == 0 {
        return Err(Error::contract(format!("filter must be odd and square, got {k}x{k2}")));
    }
    if w_in != c_in {
        return Err(Error::contract(format!(
            "filter expects {w_in} input channels, input has {c_in}"
        )));
    }
    Ok(ConvShape {
        h,
        w: wd,
        c_in,
        c_out,
        k,
    })
}

/// Zero-padded "same"-style convolution. Output pixel `(i, j)` is centred on
/// input pixel `(i*S, j*S)`; taps outside the input contribute 0.
pub fn conv_forward_direct(x: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor> {
    let s = conv_shape(x, w)?;
    if stride == 0 {
        return Err(Error::contract("stride must be positive"));
    }
    let (h_out, w_out) = (s.h / stride, s.w / stride);
    if h_out == 0 || w_out == 0 {
        return Err(Error::contract("input too small for stride"));
    }
    let r = (s.k / 2) as isize;
    let mut y = vec![0.0f32; h_out * w_out * s.c_out];
    for i in 0..h_out {
        for j in 0..w_out {
            let out = &mut y[(i * w_out + j) * s.c_out..(i * w_out + j + 1) * s.c_out];
            for (co, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for di in 0..s.k {
                    let ii = (i * stride) as isize + di as isize - r;
                    if ii < 0 || ii >= s.h as isize {
                        continue;
                    }
                    for dj in 0..s.k {
                        let jj = (j * stride) as isize + dj as isize - r;
                        if jj < 0 || jj >= s.w as isize {
                            continue;
                        }
                        let xb = (ii as usize * s.w + jj as usize) * s.c_in;
                        let wb = (di * s.k + dj) * s.c_in;
                        for ci in 0..s.c_in {
                            acc += x.data[xb + ci] * w.data[(wb + ci) * s.c_out + co];
                        }
                    }
                }
                *o = acc;
            }
        }
    }
    Tensor::new(vec![h_out, w_out, s.c_out], y)
}

// F(2x2, 3x3) transforms.
const BT: [[f32; 4]; 4] = [
    [1.0, 0.0, -1.0, 0.0],
    [0.0, 1.0, 1.0, 0.0],
    [0.0, -1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, -1.0],
];
const G: [[f32; 3]; 4] = [
    [1.0, 0.0, 0.0],
    [0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.0, 0.0, 1.0],
];
const AT: [[f32; 4]; 2] = [[1.0, 1.0, 1.0, 0.0], [0.0, 1.0, -1.0, -1.0]];

/// Winograd F(2x2, 3x3) convolution, stride 1 only. Odd output extents are
/// handled by computing full 2x2 tiles over a zero-padded input and cropping.
pub fn conv_forward_winograd(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let s = conv_shape(x, w)?;
    if s.k != 3 {
        return Err(Error::UnsupportedKernel(format!(
            "winograd F(2x2,3x3) needs K=3, got K={}",
            s.k
        )));
    }
    let (h_out, w_out) = (s.h, s.w);
    let (tiles_y, tiles_x) = (h_out.div_ceil(2), w_out.div_ceil(2));

    // U[c_in][c_out] = G g G^T, a 4x4 block per filter slice.
    let mut u = vec![[[0.0f32; 4]; 4]; s.c_in * s.c_out];
    for ci in 0..s.c_in {
        for co in 0..s.c_out {
            let g = |a: usize, b: usize| w.data[((a * 3 + b) * s.c_in + ci) * s.c_out + co];
            let mut gg = [[0.0f32; 3]; 4];
            for (r, row) in gg.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (0..3).map(|t| G[r][t] * g(t, c)).sum();
                }
            }
            let block = &mut u[ci * s.c_out + co];
            for (r, row) in block.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (0..3).map(|t| gg[r][t] * G[c][t]).sum();
                }
            }
        }
    }

    let mut y = vec![0.0f32; h_out * w_out * s.c_out];
    let mut v = vec![[[0.0f32; 4]; 4]; s.c_in];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            // V[c_in] = B^T d B for the 4x4 input patch anchored at (2ty-1, 2tx-1).
            for (ci, vb) in v.iter_mut().enumerate() {
                let mut d = [[0.0f32; 4]; 4];
                for (a, row) in d.iter_mut().enumerate() {
                    let ii = (2 * ty + a) as isize - 1;
                    if ii < 0 || ii >= s.h as isize {
                        continue;
                    }
                    for (b, val) in row.iter_mut().enumerate() {
                        let jj = (2 * tx + b) as isize - 1;
                        if jj < 0 || jj >= s.w as isize {
                            continue;
                        }
                        *val = x.data[(ii as usize * s.w + jj as usize) * s.c_in + ci];
                    }
                }
                let mut bd = [[0.0f32; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        bd[r][c] = (0..4).map(|t| BT[r][t] * d[t][c]).sum();
                    }
                }
                for r in 0..4 {
                    for c in 0..4 {
                        vb[r][c] = (0..4).map(|t| bd[r][t] * BT[c][t]).sum();
                    }
                }
            }
            for co in 0..s.c_out {
                let mut m = [[0.0f32; 4]; 4];
                for (ci, vb) in v.iter().enumerate() {
                    let ub = &u[ci * s.c_out + co];
                    for r in 0..4 {
                        for c in 0..4 {
                            m[r][c] += ub[r][c] * vb[r][c];
                        }
                    }
                }
                let mut am = [[0.0f32; 4]; 2];
                for r in 0..2 {
                    for c in 0..4 {
                        am[r][c] = (0..4).map(|t| AT[r][t] * m[t][c]).sum();
                    }
                }
                for r in 0..2 {
                    let oi = 2 * ty + r;
                    if oi >= h_out {
                        continue;
                    }
                    for c in 0..2 {
                        let oj = 2 * tx + c;
                        if oj >= w_out {
                            continue;
                        }
                        y[(oi * w_out + oj) * s.c_out + co] =
                            (0..4).map(|t| am[r][t] * AT[c][t]).sum();
                    }
                }
            }
        }
    }
    Tensor::new(vec![h_out, w_out, s.c_out], y)
}

/// Convolution algorithm used for one side of a co-executed conv.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvAlgorithm {
    #[default]
    Direct,
    Winograd,
}

fn run_side(
    op: &OpDescriptor,
    x: &Tensor,
    w: &Tensor,
    algo: ConvAlgorithm,
) -> Result<Tensor> {
    match op {
        OpDescriptor::Linear(_) => linear_forward(x, w),
        OpDescriptor::Conv(c) => match algo {
            ConvAlgorithm::Direct => conv_forward_direct(x, w, c.s() as usize),
            ConvAlgorithm::Winograd => {
                if c.s() != 1 {
                    return Err(Error::UnsupportedKernel(format!(
                        "winograd needs stride 1, got S={}",
                        c.s()
                    )));
                }
                conv_forward_winograd(x, w)
            }
        },
    }
}

fn check_operands(op: &OpDescriptor, x: &Tensor, w: &Tensor) -> Result<()> {
    let (want_x, want_w): (Vec<usize>, Vec<usize>) = match op {
        OpDescriptor::Linear(l) => (
            vec![l.l() as usize, l.c_in() as usize],
            vec![l.c_in() as usize, l.c_out() as usize],
        ),
        OpDescriptor::Conv(c) => (
            vec![c.h_in() as usize, c.w_in() as usize, c.c_in() as usize],
            vec![c.k() as usize, c.k() as usize, c.c_in() as usize, c.c_out() as usize],
        ),
    };
    if x.dims != want_x || w.dims != want_w {
        return Err(Error::contract(format!(
            "operands {:?} / {:?} do not match {op}",
            x.dims, w.dims
        )));
    }
    Ok(())
}

/// Run the CPU slice and the GPU slice on their own weight columns and
/// concatenate along the output-channel axis.
pub fn coexec_forward(
    op: &OpDescriptor,
    partition: ChannelPartition,
    x: &Tensor,
    w: &Tensor,
    cpu_algo: ConvAlgorithm,
    gpu_algo: ConvAlgorithm,
) -> Result<Tensor> {
    check_operands(op, x, w)?;
    let sides = split(op, partition)?;
    let mut parts = Vec::with_capacity(2);
    if let Some(cpu_op) = sides.cpu {
        let r = partition.cpu_channels();
        let wc = w.slice_last(r.start as usize..r.end as usize)?;
        parts.push(run_side(&cpu_op, x, &wc, cpu_algo)?);
    }
    if let Some(gpu_op) = sides.gpu {
        let r = partition.gpu_channels();
        let wg = w.slice_last(r.start as usize..r.end as usize)?;
        parts.push(run_side(&gpu_op, x, &wg, gpu_algo)?);
    }
    Tensor::concat_last(&parts.iter().collect::<Vec<_>>())
}
