//! Dense activation volumes and the three layer primitives of the VGG prefix:
//! same-padded 3×3 convolution, ReLU and 2×2 max pooling.
//!
//! Convolution accumulates in `f32` with a fixed reduction order: for every
//! output element the products are summed over input channels, then kernel
//! rows, then kernel columns, starting from zero, and the bias is added last.
//! The order does not depend on tiling, so outputs are bit-reproducible.

use crate::error::{Error, Result};

/// Channel-major `(c, y, x)` activation volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor {channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at offset {pos}")));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel's spatial grid, row-major.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Weights of one convolution layer, kernel stored `(out, in, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerWeights {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayerWeights {
    pub fn new(
        name: impl Into<String>,
        dims: [usize; 4],
        kernel: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let [out_channels, in_channels, kernel_h, kernel_w] = dims;
        let name = name.into();
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if kernel.len() != expected {
            return Err(Error::Shape(format!(
                "layer {name}: kernel {out_channels}x{in_channels}x{kernel_h}x{kernel_w} needs {expected} values, got {}",
                kernel.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "layer {name}: bias length {} != out_channels {out_channels}",
                bias.len()
            )));
        }
        Ok(ConvLayerWeights {
            name,
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            kernel,
            bias,
        })
    }

    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.kernel[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

// Output positions handled per im2col tile, and the register block sizes.
const TILE: usize = 64;
const BLOCK_OUT: usize = 4;
const BLOCK_POS: usize = 16;

/// Stride-1 convolution with zero padding `kernel/2` on every side, so the
/// output keeps the input's spatial size.
pub fn conv2d(input: &Tensor, w: &ConvLayerWeights) -> Result<Tensor> {
    if input.channels != w.in_channels {
        return Err(Error::Shape(format!(
            "layer {}: expects {} input channels, got {}",
            w.name, w.in_channels, input.channels
        )));
    }
    if w.kernel_h.is_multiple_of(2) || w.kernel_w.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "layer {}: same padding needs odd kernel dims, got {}x{}",
            w.name, w.kernel_h, w.kernel_w
        )));
    }
    let (height, width) = (input.height, input.width);
    let positions = height * width;
    let reduce = w.in_channels * w.kernel_h * w.kernel_w;
    let out_channels = w.out_channels;
    let out_padded = out_channels.div_ceil(BLOCK_OUT) * BLOCK_OUT;

    // Weights repacked as [out_block][k][BLOCK_OUT] so the inner loop reads
    // them contiguously; rows past out_channels are zero.
    let mut packed = vec![0.0f32; out_padded * reduce];
    for o in 0..out_channels {
        let (blk, lane) = (o / BLOCK_OUT, o % BLOCK_OUT);
        let row = &w.kernel[o * reduce..(o + 1) * reduce];
        for (k, &v) in row.iter().enumerate() {
            packed[(blk * reduce + k) * BLOCK_OUT + lane] = v;
        }
    }

    let mut out = vec![0.0f32; out_channels * positions];
    let mut col = vec![0.0f32; reduce * TILE];
    let mut p0 = 0;
    while p0 < positions {
        let valid = TILE.min(positions - p0);
        im2col_tile(input, w.kernel_h, w.kernel_w, p0, valid, &mut col);
        for blk in 0..out_padded / BLOCK_OUT {
            let wblk = &packed[blk * reduce * BLOCK_OUT..(blk + 1) * reduce * BLOCK_OUT];
            for jb in (0..TILE).step_by(BLOCK_POS) {
                if jb >= valid {
                    break;
                }
                let acc = micro_kernel(wblk, &col, jb, reduce);
                for (lane, acc_row) in acc.iter().enumerate() {
                    let o = blk * BLOCK_OUT + lane;
                    if o >= out_channels {
                        break;
                    }
                    let bias = w.bias[o];
                    let n = BLOCK_POS.min(valid - jb);
                    let dst = &mut out[o * positions + p0 + jb..][..n];
                    for (d, &a) in dst.iter_mut().zip(acc_row) {
                        *d = a + bias;
                    }
                }
            }
        }
        p0 += valid;
    }

    if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "layer {}: non-finite output at offset {pos}",
            w.name
        )));
    }
    Ok(Tensor {
        channels: out_channels,
        height,
        width,
        data: out,
    })
}

#[inline(always)]
fn micro_kernel(
    wblk: &[f32],
    col: &[f32],
    jb: usize,
    reduce: usize,
) -> [[f32; BLOCK_POS]; BLOCK_OUT] {
    let mut acc = [[0.0f32; BLOCK_POS]; BLOCK_OUT];
    for k in 0..reduce {
        let c: &[f32; BLOCK_POS] = col[k * TILE + jb..k * TILE + jb + BLOCK_POS]
            .try_into()
            .unwrap();
        let wv: &[f32; BLOCK_OUT] = wblk[k * BLOCK_OUT..(k + 1) * BLOCK_OUT].try_into().unwrap();
        for r in 0..BLOCK_OUT {
            for j in 0..BLOCK_POS {
                acc[r][j] += wv[r] * c[j];
            }
        }
    }
    acc
}

/// Fills `col[k * TILE + t]` with the padded input value feeding reduction
/// index `k = (i, ky, kx)` at output position `p0 + t`. Positions past
/// `valid` are zeroed.
fn im2col_tile(input: &Tensor, kh: usize, kw: usize, p0: usize, valid: usize, col: &mut [f32]) {
    let (height, width) = (input.height as isize, input.width as isize);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut k = 0;
    for i in 0..input.channels {
        let plane = input.channel(i);
        for ky in 0..kh as isize {
            for kx in 0..kw as isize {
                let dst = &mut col[k * TILE..(k + 1) * TILE];
                let mut y = (p0 / input.width) as isize;
                let mut x = (p0 % input.width) as isize;
                for d in dst.iter_mut().take(valid) {
                    let sy = y + ky - ph;
                    let sx = x + kx - pw;
                    *d = if sy >= 0 && sy < height && sx >= 0 && sx < width {
                        plane[(sy * width + sx) as usize]
                    } else {
                        0.0
                    };
                    x += 1;
                    if x == width {
                        x = 0;
                        y += 1;
                    }
                }
                dst[valid..].fill(0.0);
                k += 1;
            }
        }
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// 2×2 max pooling with stride 2; an odd trailing row or column is dropped.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    if input.height < 2 || input.width < 2 {
        return Err(Error::Shape(format!(
            "max pooling needs at least 2x2 input, got {}x{}",
            input.height, input.width
        )));
    }
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut data = Vec::with_capacity(input.channels * oh * ow);
    for c in 0..input.channels {
        let plane = input.channel(c);
        for y in 0..oh {
            let r0 = &plane[2 * y * input.width..];
            let r1 = &plane[(2 * y + 1) * input.width..];
            for x in 0..ow {
                let m = r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1]);
                data.push(m);
            }
        }
    }
    Ok(Tensor {
        channels: input.channels,
        height: oh,
        width: ow,
        data,
    })
}
