//! U-Net-256 generator and 70x70 PatchGAN discriminator.

use tch::nn::{self, ModuleT};
use tch::Tensor;

pub const UNET_DEPTH: usize = 8;
/// Decoder stages (counted from the outermost) that apply dropout while training.
const DROPOUT_STAGES: std::ops::RangeInclusive<usize> = 4..=6;
const DROPOUT: f64 = 0.5;
const SLOPE: f64 = 0.2;

pub(crate) fn leaky(x: &Tensor) -> Tensor {
    x.maximum(&(x * SLOPE))
}

fn init_conv() -> nn::Init {
    nn::Init::Randn { mean: 0.0, stdev: 0.02 }
}

fn bn(p: nn::Path, c: i64) -> nn::BatchNorm {
    nn::batch_norm2d(
        p,
        c,
        nn::BatchNormConfig {
            ws_init: nn::Init::Randn { mean: 1.0, stdev: 0.02 },
            bs_init: nn::Init::Const(0.0),
            ..Default::default()
        },
    )
}

/// Channel count of each encoder stage for base width `ngf`.
pub fn unet_channels(ngf: i64) -> [i64; UNET_DEPTH] {
    [ngf, 2 * ngf, 4 * ngf, 8 * ngf, 8 * ngf, 8 * ngf, 8 * ngf, 8 * ngf]
}

#[derive(Debug)]
struct Down {
    conv: nn::Conv2D,
    bn: Option<nn::BatchNorm>,
}

#[derive(Debug)]
struct Up {
    conv: nn::ConvTranspose2D,
    bn: Option<nn::BatchNorm>,
    dropout: bool,
}

/// Eight stride-2 encoder stages down to a 1x1 bottleneck, mirrored decoder,
/// skip connection from encoder stage k to decoder stage k, tanh output.
#[derive(Debug)]
pub struct Generator {
    downs: Vec<Down>,
    ups: Vec<Up>,
}

impl Generator {
    pub fn new(p: &nn::Path, c_in: i64, c_out: i64, ngf: i64) -> Self {
        let chans = unet_channels(ngf);
        let mut downs = Vec::with_capacity(UNET_DEPTH);
        let mut prev = c_in;
        for (i, &c) in chans.iter().enumerate() {
            let cfg = nn::ConvConfig {
                stride: 2,
                padding: 1,
                bias: false,
                ws_init: init_conv(),
                ..Default::default()
            };
            let norm = i != 0 && i != UNET_DEPTH - 1;
            downs.push(Down {
                conv: nn::conv2d(p / format!("down{i}"), prev, c, 4, cfg),
                bn: norm.then(|| bn(p / format!("down{i}_bn"), c)),
            });
            prev = c;
        }
        let mut ups = Vec::with_capacity(UNET_DEPTH);
        for i in 0..UNET_DEPTH {
            let c_in_up = if i == UNET_DEPTH - 1 { chans[i] } else { 2 * chans[i] };
            let c_out_up = if i == 0 { c_out } else { chans[i - 1] };
            let cfg = nn::ConvTransposeConfig {
                stride: 2,
                padding: 1,
                bias: i == 0,
                ws_init: init_conv(),
                ..Default::default()
            };
            ups.push(Up {
                conv: nn::conv_transpose2d(p / format!("up{i}"), c_in_up, c_out_up, 4, cfg),
                bn: (i != 0).then(|| bn(p / format!("up{i}_bn"), c_out_up)),
                dropout: DROPOUT_STAGES.contains(&i),
            });
        }
        Generator { downs, ups }
    }

    /// Bottleneck activation for a given input, shape `[N, 8*ngf, H/256, W/256]`.
    pub fn encode(&self, x: &Tensor, train: bool) -> Vec<Tensor> {
        let mut skips = Vec::with_capacity(UNET_DEPTH);
        let mut h = x.shallow_clone();
        for (i, d) in self.downs.iter().enumerate() {
            if i > 0 {
                h = leaky(&h);
            }
            h = h.apply(&d.conv);
            if let Some(b) = &d.bn {
                h = h.apply_t(b, train);
            }
            skips.push(h.shallow_clone());
        }
        skips
    }
}

impl ModuleT for Generator {
    fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        let skips = self.encode(x, train);
        let mut h = skips[UNET_DEPTH - 1].shallow_clone();
        for i in (0..UNET_DEPTH).rev() {
            let inp = if i == UNET_DEPTH - 1 {
                h
            } else {
                Tensor::cat(&[&h, &skips[i]], 1)
            };
            let up = &self.ups[i];
            h = inp.relu().apply(&up.conv);
            if let Some(b) = &up.bn {
                h = h.apply_t(b, train);
            }
            if up.dropout {
                h = h.dropout(DROPOUT, train);
            }
        }
        h.tanh()
    }
}

/// (kernel, stride, padding) of each discriminator convolution.
pub const PATCH_LAYERS: [(i64, i64, i64); 5] = [(4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1)];

/// Side of the input window seen by one output unit of a conv stack.
pub fn receptive_field(layers: &[(i64, i64, i64)]) -> i64 {
    layers.iter().rev().fold(1, |r, &(k, s, _)| r * s + (k - s))
}

/// Output side for input side `n`.
pub fn output_size(layers: &[(i64, i64, i64)], n: i64) -> i64 {
    layers.iter().fold(n, |n, &(k, s, p)| (n + 2 * p - k) / s + 1)
}

/// Inclusive input range covered by output unit `i` along one axis.
pub fn field_of(layers: &[(i64, i64, i64)], i: i64) -> (i64, i64) {
    let (mut jump, mut start) = (1i64, 0i64);
    for &(_, s, p) in layers {
        start -= p * jump;
        jump *= s;
    }
    let r = receptive_field(layers);
    (start + i * jump, start + i * jump + r - 1)
}

/// C64-C128-C256-C512 PatchGAN with a sigmoid score per patch. Takes the
/// source and the (real or translated) target concatenated on channels.
#[derive(Debug)]
pub struct Discriminator {
    convs: Vec<nn::Conv2D>,
    bns: Vec<Option<nn::BatchNorm>>,
}

impl Discriminator {
    pub fn new(p: &nn::Path, c_in: i64, ndf: i64) -> Self {
        let chans = [ndf, 2 * ndf, 4 * ndf, 8 * ndf, 1];
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut prev = c_in;
        for (i, (&c, &(k, s, pad))) in chans.iter().zip(PATCH_LAYERS.iter()).enumerate() {
            let norm = i != 0 && i != chans.len() - 1;
            let cfg = nn::ConvConfig {
                stride: s,
                padding: pad,
                bias: !norm,
                ws_init: init_conv(),
                ..Default::default()
            };
            convs.push(nn::conv2d(p / format!("conv{i}"), prev, c, k, cfg));
            bns.push(norm.then(|| bn(p / format!("conv{i}_bn"), c)));
            prev = c;
        }
        Discriminator { convs, bns }
    }
}

impl ModuleT for Discriminator {
    fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        let last = self.convs.len() - 1;
        let mut h = x.shallow_clone();
        for (i, (c, b)) in self.convs.iter().zip(&self.bns).enumerate() {
            h = h.apply(c);
            if let Some(b) = b {
                h = h.apply_t(b, train);
            }
            if i != last {
                h = leaky(&h);
            }
        }
        h.sigmoid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{Device, Kind};

    #[test]
    fn receptive_field_is_70() {
        assert_eq!(receptive_field(&PATCH_LAYERS), 70);
        assert_eq!(output_size(&PATCH_LAYERS, 256), 30);
        assert_eq!(field_of(&PATCH_LAYERS, 0), (-23, 46));
        assert_eq!(field_of(&PATCH_LAYERS, 29), (209, 278));
    }

    #[test]
    fn shapes_and_range() {
        tch::manual_seed(0);
        let vs = nn::VarStore::new(Device::Cpu);
        let g = Generator::new(&(vs.root() / "g"), 3, 1, 4);
        let d = Discriminator::new(&(vs.root() / "d"), 4, 4);
        let x = Tensor::randn([2, 3, 256, 256], (Kind::Float, Device::Cpu)) * 3.0;
        for train in [true, false] {
            let y = g.forward_t(&x, train);
            assert_eq!(y.size(), vec![2, 1, 256, 256]);
            assert!(y.abs().max().double_value(&[]) <= 1.0);
            let s = d.forward_t(&Tensor::cat(&[&x, &y], 1), train);
            assert_eq!(s.size(), vec![2, 1, 30, 30]);
        }
        let bottleneck = g.encode(&x, false).pop().unwrap();
        assert_eq!(bottleneck.size(), vec![2, 32, 1, 1]);
    }

    #[test]
    fn full_width_bottleneck_is_512() {
        assert_eq!(unet_channels(64)[UNET_DEPTH - 1], 512);
    }
}
