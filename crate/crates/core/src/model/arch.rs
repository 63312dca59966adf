//! The 80-layer recolorization network as a declarative table: a four-stage
//! U-Net (layers 0-50) followed by a residual refinement stage (51-79).

use crate::nn::ConvSpec;

/// What a layer computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOp {
    LInput,
    AbInput,
    Conv(ConvSpec),
    Relu,
    MaxPool { kernel: usize, stride: usize },
    TransposedConv(ConvSpec),
    Concat,
    Add,
}

impl LayerOp {
    pub fn name(&self) -> &'static str {
        match self {
            LayerOp::LInput => "L input",
            LayerOp::AbInput => "AB input",
            LayerOp::Conv(_) => "convolution",
            LayerOp::Relu => "relu",
            LayerOp::MaxPool { .. } => "maxpool",
            LayerOp::TransposedConv(_) => "transposed conv",
            LayerOp::Concat => "concatenation",
            LayerOp::Add => "addition",
        }
    }

    pub fn conv_spec(&self) -> Option<&ConvSpec> {
        match self {
            LayerOp::Conv(s) | LayerOp::TransposedConv(s) => Some(s),
            _ => None,
        }
    }
}

/// Where a layer's input comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    /// Network input; no upstream layer.
    External,
    /// Output of a single earlier layer.
    Layer(usize),
    /// Channel-axis concatenation of earlier layers, in order.
    Concat(Vec<usize>),
    /// Elementwise sum of earlier layers.
    Sum(Vec<usize>),
}

impl Source {
    pub fn layers(&self) -> &[usize] {
        match self {
            Source::External => &[],
            Source::Layer(i) => std::slice::from_ref(i),
            Source::Concat(v) | Source::Sum(v) => v,
        }
    }
}

/// One row of the architecture table, with the spatial size and channel
/// counts it declares for a 320x320 input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub op: LayerOp,
    pub x_in: Option<usize>,
    pub x_out: usize,
    pub c_in: Option<usize>,
    pub c_out: usize,
    pub data_from: Source,
}

/// Input side length the declared `x_in` / `x_out` values refer to.
pub const REFERENCE_SIZE: usize = 320;
pub const LAYER_COUNT: usize = 80;
/// Index of the layer producing the U-Net's AB estimate.
pub const UNET_OUTPUT: usize = 50;
/// Index of the final layer; its output is `(L, A, B)`.
pub const OUTPUT_LAYER: usize = 79;

fn conv(ci: usize, co: usize, k: usize, p: usize, d: usize) -> LayerOp {
    LayerOp::Conv(ConvSpec::new(ci, co, k, p).with_dilation(d))
}

fn tconv(ci: usize, co: usize) -> LayerOp {
    LayerOp::TransposedConv(ConvSpec::new(ci, co, 2, 0).with_stride(2))
}

const POOL: LayerOp = LayerOp::MaxPool { kernel: 2, stride: 2 };

/// The full table. Two channel counts are easy to get wrong: layer 51
/// concatenates 1 + 2 + 2 channels, so it emits 5 (layer 52 expects 5), and
/// layer 77 is a ReLU between two 256-channel layers, so it carries 256.
pub fn crayon_layers() -> Vec<LayerSpec> {
    use LayerOp::{Add, Concat, Relu};
    use Source::{External, Layer};

    let row = |index: usize, op: LayerOp, x_in: Option<usize>, x_out: usize, c_in: Option<usize>, c_out: usize, data_from: Source| {
        LayerSpec {
            index,
            op,
            x_in,
            x_out,
            c_in,
            c_out,
            data_from,
        }
    };
    let cat = |v: &[usize]| Source::Concat(v.to_vec());
    let sum = |v: &[usize]| Source::Sum(v.to_vec());
    let s = Some;

    vec![
        row(0, LayerOp::LInput, None, 320, None, 1, External),
        row(1, LayerOp::AbInput, None, 320, None, 2, External),
        // Encoder stage 1
        row(2, conv(3, 64, 3, 1, 1), s(320), 320, s(3), 64, cat(&[0, 1])),
        row(3, Relu, s(320), 320, s(64), 64, Layer(2)),
        row(4, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(3)),
        row(5, Relu, s(320), 320, s(64), 64, Layer(4)),
        row(6, POOL, s(320), 160, s(64), 64, Layer(5)),
        // Encoder stage 2
        row(7, conv(64, 128, 3, 1, 1), s(160), 160, s(64), 128, Layer(6)),
        row(8, Relu, s(160), 160, s(128), 128, Layer(7)),
        row(9, conv(128, 128, 3, 1, 1), s(160), 160, s(128), 128, Layer(8)),
        row(10, Relu, s(160), 160, s(128), 128, Layer(9)),
        row(11, POOL, s(160), 80, s(128), 128, Layer(10)),
        // Encoder stage 3
        row(12, conv(128, 256, 3, 1, 1), s(80), 80, s(128), 256, Layer(11)),
        row(13, Relu, s(80), 80, s(256), 256, Layer(12)),
        row(14, conv(256, 256, 3, 1, 1), s(80), 80, s(256), 256, Layer(13)),
        row(15, Relu, s(80), 80, s(256), 256, Layer(14)),
        row(16, POOL, s(80), 40, s(256), 256, Layer(15)),
        // Bottleneck
        row(17, conv(256, 512, 3, 1, 1), s(40), 40, s(256), 512, Layer(16)),
        row(18, Relu, s(40), 40, s(512), 512, Layer(17)),
        row(19, conv(512, 512, 3, 1, 1), s(40), 40, s(512), 512, Layer(18)),
        row(20, Relu, s(40), 40, s(512), 512, Layer(19)),
        // Dilated block
        row(21, conv(512, 512, 3, 2, 2), s(40), 40, s(512), 512, Layer(20)),
        row(22, Relu, s(40), 40, s(512), 512, Layer(21)),
        row(23, conv(512, 512, 3, 2, 2), s(40), 40, s(512), 512, Layer(22)),
        row(24, Relu, s(40), 40, s(512), 512, Layer(23)),
        row(25, conv(512, 512, 3, 2, 2), s(40), 40, s(512), 512, Layer(24)),
        row(26, Relu, s(40), 40, s(512), 512, Layer(25)),
        row(27, conv(512, 512, 3, 2, 2), s(40), 40, s(512), 512, Layer(26)),
        row(28, Relu, s(40), 40, s(512), 512, Layer(27)),
        row(29, conv(512, 512, 3, 2, 2), s(40), 40, s(512), 512, Layer(28)),
        row(30, Relu, s(40), 40, s(512), 512, Layer(29)),
        row(31, conv(512, 512, 3, 2, 2), s(40), 40, s(512), 512, Layer(30)),
        row(32, Relu, s(40), 40, s(512), 512, Layer(31)),
        row(33, conv(512, 512, 3, 1, 1), s(40), 40, s(512), 512, Layer(32)),
        row(34, Relu, s(40), 40, s(512), 512, Layer(33)),
        // Decoder stage 3
        row(35, tconv(512, 256), s(40), 80, s(512), 256, Layer(34)),
        row(36, Relu, s(80), 80, s(256), 256, Layer(35)),
        row(37, Concat, s(80), 80, s(256 + 256), 512, cat(&[15, 36])),
        row(38, conv(512, 256, 3, 1, 1), s(80), 80, s(512), 256, Layer(37)),
        row(39, Relu, s(80), 80, s(256), 256, Layer(38)),
        // Decoder stage 2
        row(40, tconv(256, 128), s(80), 160, s(256), 128, Layer(39)),
        row(41, Relu, s(160), 160, s(128), 128, Layer(40)),
        row(42, Concat, s(160), 160, s(128 + 128), 256, cat(&[10, 41])),
        row(43, conv(256, 128, 3, 1, 1), s(160), 160, s(256), 128, Layer(42)),
        row(44, Relu, s(160), 160, s(128), 128, Layer(43)),
        // Decoder stage 1
        row(45, tconv(128, 128), s(160), 320, s(128), 128, Layer(44)),
        row(46, Relu, s(320), 320, s(128), 128, Layer(45)),
        row(47, Concat, s(320), 320, s(64 + 128), 192, cat(&[5, 46])),
        row(48, conv(192, 128, 3, 1, 1), s(320), 320, s(192), 128, Layer(47)),
        row(49, Relu, s(320), 320, s(128), 128, Layer(48)),
        row(50, conv(128, 2, 1, 0, 1), s(320), 320, s(128), 2, Layer(49)),
        // Residual stage: re-inject L and the hints next to the U-Net estimate.
        row(51, Concat, s(320), 320, s(1 + 2 + 2), 5, cat(&[0, 1, 50])),
        row(52, conv(5, 64, 3, 1, 1), s(320), 320, s(5), 64, Layer(51)),
        row(53, Relu, s(320), 320, s(64), 64, Layer(52)),
        row(54, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(53)),
        row(55, Relu, s(320), 320, s(64), 64, Layer(54)),
        row(56, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(55)),
        row(57, Relu, s(320), 320, s(64), 64, Layer(56)),
        row(58, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(57)),
        row(59, Relu, s(320), 320, s(64), 64, Layer(58)),
        row(60, Add, s(320), 320, s(64 + 64), 64, sum(&[54, 59])),
        row(61, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(60)),
        row(62, Relu, s(320), 320, s(64), 64, Layer(61)),
        row(63, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(62)),
        row(64, Relu, s(320), 320, s(64), 64, Layer(63)),
        row(65, Add, s(320), 320, s(64 + 64), 64, sum(&[60, 64])),
        row(66, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(65)),
        row(67, Relu, s(320), 320, s(64), 64, Layer(66)),
        row(68, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(67)),
        row(69, Relu, s(320), 320, s(64), 64, Layer(68)),
        row(70, Add, s(320), 320, s(64 + 64), 64, sum(&[65, 69])),
        row(71, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(70)),
        row(72, Relu, s(320), 320, s(64), 64, Layer(71)),
        row(73, conv(64, 64, 3, 1, 1), s(320), 320, s(64), 64, Layer(72)),
        row(74, Relu, s(320), 320, s(64), 64, Layer(73)),
        row(75, Add, s(320), 320, s(64 + 64), 64, sum(&[70, 74])),
        row(76, conv(64, 256, 3, 1, 1), s(320), 320, s(64), 256, Layer(75)),
        row(77, Relu, s(320), 320, s(256), 256, Layer(76)),
        row(78, conv(256, 2, 3, 1, 1), s(320), 320, s(256), 2, Layer(77)),
        row(79, Concat, s(320), 320, s(1 + 2), 3, cat(&[0, 78])),
    ]
}
