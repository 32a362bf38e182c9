//! The VGG19 prefix up to `conv5_1`: layer plan, GBWV weight files,
//! input preprocessing and the tapped forward pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, maxpool2, relu_in_place, ConvLayerWeights, Tensor};

/// Per-channel (R, G, B) means subtracted from 0–255 pixel values.
pub const CHANNEL_MEANS: [f32; 3] = [123.68, 116.779, 103.939];

/// Smallest accepted input side; keeps `conv5_1` at least 2×2.
pub const MIN_INPUT_SIDE: u32 = 32;

/// One step of the fixed layer plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Index into [`CONV_LAYERS`], always followed by a ReLU.
    Conv(usize),
    MaxPool,
}

/// `(name, in_channels, out_channels)` of the 13 prefix convolutions.
pub const CONV_LAYERS: [(&str, usize, usize); 13] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("conv4_1", 256, 512),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv4_4", 512, 512),
    ("conv5_1", 512, 512),
];

pub const PLAN: [Stage; 17] = [
    Stage::Conv(0),
    Stage::Conv(1),
    Stage::MaxPool,
    Stage::Conv(2),
    Stage::Conv(3),
    Stage::MaxPool,
    Stage::Conv(4),
    Stage::Conv(5),
    Stage::Conv(6),
    Stage::Conv(7),
    Stage::MaxPool,
    Stage::Conv(8),
    Stage::Conv(9),
    Stage::Conv(10),
    Stage::Conv(11),
    Stage::MaxPool,
    Stage::Conv(12),
];

/// A layer whose post-ReLU output can be exported. Ordered by depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tap {
    Conv1_1,
    Conv2_1,
    Conv3_1,
    Conv4_1,
    Conv5_1,
}

impl Tap {
    pub const ALL: [Tap; 5] = [Tap::Conv1_1, Tap::Conv2_1, Tap::Conv3_1, Tap::Conv4_1, Tap::Conv5_1];

    /// 1 for `conv1_1` through 5 for `conv5_1`.
    pub fn depth(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_depth(depth: u8) -> Option<Tap> {
        Tap::ALL.get(usize::from(depth).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        CONV_LAYERS[self.conv_index()].0
    }

    pub fn channels(self) -> usize {
        CONV_LAYERS[self.conv_index()].2
    }

    fn conv_index(self) -> usize {
        match self {
            Tap::Conv1_1 => 0,
            Tap::Conv2_1 => 2,
            Tap::Conv3_1 => 4,
            Tap::Conv4_1 => 8,
            Tap::Conv5_1 => 12,
        }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tap::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tap layer {s:?}")))
    }
}

/// Immutable weights for the 13 prefix convolutions in plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct VggPrefixModel {
    convs: Vec<ConvLayerWeights>,
}

impl VggPrefixModel {
    /// Validates names and shapes against the fixed layer plan. Layers may be
    /// supplied in any order; they are keyed by name.
    pub fn from_layers(layers: Vec<ConvLayerWeights>) -> Result<Self> {
        let mut by_name: BTreeMap<String, ConvLayerWeights> = BTreeMap::new();
        for layer in layers {
            let Some(&(_, inp, out)) = CONV_LAYERS.iter().find(|(n, _, _)| *n == layer.name) else {
                return Err(Error::Format(format!("unexpected layer {:?}", layer.name)));
            };
            if (layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w) != (out, inp, 3, 3) {
                return Err(Error::Format(format!(
                    "layer {}: dims {}x{}x{}x{}, expected {out}x{inp}x3x3",
                    layer.name, layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w
                )));
            }
            let name = layer.name.clone();
            if by_name.insert(name.clone(), layer).is_some() {
                return Err(Error::Format(format!("duplicate layer {name:?}")));
            }
        }
        let mut convs = Vec::with_capacity(CONV_LAYERS.len());
        for (name, _, _) in CONV_LAYERS {
            match by_name.remove(name) {
                Some(l) => convs.push(l),
                None => return Err(Error::IncompleteModel(format!("missing layer {name}"))),
            }
        }
        Ok(VggPrefixModel { convs })
    }

    pub fn layers(&self) -> &[ConvLayerWeights] {
        &self.convs
    }

    /// Deterministic He-uniform weights derived from `seed` with splitmix64.
    /// Not a trained network: used for tests, benchmarks and fixture
    /// generation, where both sides must regenerate identical weights.
    ///
    /// Value `j` of layer `l` (kernel values first, then biases) is
    /// `(2u - 1) * bound` with `u = (splitmix64((seed << 40) ^ (l << 32) ^ j) >> 11) / 2^53`,
    /// `bound = sqrt(6 / (in * 9))` for kernels and `0.05` for biases.
    pub fn synthetic(seed: u64) -> Self {
        let convs = CONV_LAYERS
            .iter()
            .enumerate()
            .map(|(l, &(name, inp, out))| {
                let base = (seed << 40) ^ ((l as u64) << 32);
                let uniform = |j: usize| {
                    let u = (splitmix64(base ^ j as u64) >> 11) as f64 / (1u64 << 53) as f64;
                    2.0 * u - 1.0
                };
                let klen = out * inp * 9;
                let bound = (6.0 / (inp * 9) as f64).sqrt();
                let kernel = (0..klen).map(|j| (uniform(j) * bound) as f32).collect();
                let bias = (0..out).map(|o| (uniform(klen + o) * 0.05) as f32).collect();
                ConvLayerWeights::new(name, [out, inp, 3, 3], kernel, bias).expect("plan dims")
            })
            .collect();
        VggPrefixModel { convs }
    }

    /// Runs the plan up to the deepest requested tap and returns the post-ReLU
    /// activation of every requested tap.
    pub fn forward_with_taps(&self, input: &Tensor, taps: &[Tap]) -> Result<BTreeMap<Tap, Tensor>> {
        if input.channels() != 3 {
            return Err(Error::Shape(format!(
                "network input needs 3 channels, got {}",
                input.channels()
            )));
        }
        let wanted: BTreeSet<Tap> = taps.iter().copied().collect();
        let mut result = BTreeMap::new();
        let Some(&deepest) = wanted.last() else {
            return Ok(result);
        };
        let mut x = input.clone();
        for stage in PLAN {
            match stage {
                Stage::Conv(idx) => {
                    x = conv2d(&x, &self.convs[idx])?;
                    relu_in_place(&mut x);
                    if let Some(&tap) = wanted.iter().find(|t| t.conv_index() == idx) {
                        result.insert(tap, x.clone());
                        if tap == deepest {
                            break;
                        }
                    }
                }
                Stage::MaxPool => x = maxpool2(&x)?,
            }
        }
        Ok(result)
    }

    /// Tap lookup by layer name.
    pub fn forward_with_named_taps<S: AsRef<str>>(
        &self,
        input: &Tensor,
        taps: &[S],
    ) -> Result<BTreeMap<Tap, Tensor>> {
        let taps = taps
            .iter()
            .map(|s| s.as_ref().parse())
            .collect::<Result<Vec<Tap>>>()?;
        self.forward_with_taps(input, &taps)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Converts an 8-bit RGB raster into a mean-subtracted channel-first tensor.
/// No resizing: the prefix is fully convolutional.
pub fn preprocess(image: &RgbImage) -> Result<Tensor> {
    let (w, h) = image.dimensions();
    if w < MIN_INPUT_SIDE || h < MIN_INPUT_SIDE {
        return Err(Error::Input(format!(
            "image is {w}x{h}, minimum is {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"
        )));
    }
    let plane = (w * h) as usize;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f32::from(px[c]) - CHANNEL_MEANS[c];
        }
    }
    Tensor::new(3, h as usize, w as usize, data)
}

const GBWV_MAGIC: &[u8; 4] = b"GBWV";
const GBWV_VERSION: u32 = 1;

pub fn load_weights(path: impl AsRef<Path>) -> Result<VggPrefixModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

pub fn decode_weights(bytes: &[u8]) -> Result<VggPrefixModel> {
    let mut r = crate::wire::Reader::new(bytes);
    if r.bytes(4)? != GBWV_MAGIC {
        return Err(Error::Format("bad magic, expected GBWV".into()));
    }
    let version = r.u32()?;
    if version != GBWV_VERSION {
        return Err(Error::Format(format!("unsupported GBWV version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(CONV_LAYERS.len()));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let klen = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("layer {name}: kernel dims overflow")))?;
        let kernel = r.f32s(klen)?;
        let bias_len = r.u32()? as usize;
        let bias = r.f32s(bias_len)?;
        let layer = ConvLayerWeights::new(name, dims, kernel, bias)
            .map_err(|e| Error::Format(e.to_string()))?;
        layers.push(layer);
    }
    r.finish()?;
    VggPrefixModel::from_layers(layers)
}

pub fn encode_weights(model: &VggPrefixModel) -> Vec<u8> {
    let mut w = crate::wire::Writer::default();
    w.bytes(GBWV_MAGIC);
    w.u32(GBWV_VERSION);
    w.u32(model.convs.len() as u32);
    for l in &model.convs {
        w.u16(l.name.len() as u16);
        w.bytes(l.name.as_bytes());
        for d in [l.out_channels, l.in_channels, l.kernel_h, l.kernel_w] {
            w.u32(d as u32);
        }
        w.f32s(&l.kernel);
        w.u32(l.bias.len() as u32);
        w.f32s(&l.bias);
    }
    w.into_inner()
}

pub fn save_weights(model: &VggPrefixModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(model)).map_err(|e| Error::io(path, e))
}
