//! Conditional-adversarial spectrum translation (pix2pix style).

mod loss;
mod net;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ocular_core::dataset::Spectrum;
use ocular_core::Raster;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, ModuleT, OptimizerConfig};
use tch::{Device, Kind, Tensor};

pub use loss::{adversarial_term, discriminator_loss, generator_loss, l1_term, LOG_EPS};
pub use net::{
    field_of, output_size, receptive_field, unet_channels, Discriminator, Generator, PATCH_LAYERS, UNET_DEPTH,
};

use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::convert::{raster_to_tensor, stack_u8, tensor_to_raster, u8_to_unit};
use crate::error::{NetError, Result};
use loss::scalar;

pub const IMAGE_SIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Vis2Nir,
    Nir2Vis,
    Nir2Gray,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Vis2Nir, Direction::Nir2Vis, Direction::Nir2Gray];

    pub fn source(self) -> Spectrum {
        match self {
            Direction::Vis2Nir => Spectrum::Vis,
            Direction::Nir2Vis | Direction::Nir2Gray => Spectrum::Nir,
        }
    }

    pub fn target(self) -> Spectrum {
        match self {
            Direction::Vis2Nir => Spectrum::Nir,
            Direction::Nir2Vis => Spectrum::Vis,
            Direction::Nir2Gray => Spectrum::Gray,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Vis2Nir => "vis2nir",
            Direction::Nir2Vis => "nir2vis",
            Direction::Nir2Gray => "nir2gray",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| NetError::Config(format!("unknown direction {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorConfig {
    pub direction: Direction,
    #[serde(default = "default_lambda")]
    pub lambda_l1: f64,
    #[serde(default = "default_lr")]
    pub learn_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Generator base width; 64 gives the 512-channel bottleneck.
    #[serde(default = "default_width")]
    pub ngf: i64,
    #[serde(default = "default_width")]
    pub ndf: i64,
}

fn default_lambda() -> f64 {
    100.0
}
fn default_lr() -> f64 {
    2e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_batch() -> usize {
    1
}
fn default_width() -> i64 {
    64
}

impl TranslatorConfig {
    pub fn new(direction: Direction, epochs: usize) -> Self {
        TranslatorConfig {
            direction,
            lambda_l1: default_lambda(),
            learn_rate: default_lr(),
            adam_beta1: default_beta1(),
            batch_size: default_batch(),
            epochs,
            seed: 0,
            ngf: default_width(),
            ndf: default_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NetError::Config(m.into()));
        if !(self.lambda_l1 > 0.0 && self.lambda_l1.is_finite()) {
            return bad("lambda_l1 must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learn_rate > 0.0) {
            return bad("learn_rate must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) {
            return bad("adam_beta1 must be in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.ngf < 1 || self.ndf < 1 {
            return bad("network widths must be positive");
        }
        Ok(())
    }

    fn c_in(&self) -> i64 {
        self.direction.source().channels() as i64
    }

    fn c_out(&self) -> i64 {
        self.direction.target().channels() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adversarial: f64,
    pub g_l1: f64,
    /// Mean absolute error on held-out pairs in [-1, 1] units, eval mode.
    pub heldout_l1: Option<f64>,
}

/// Generator and discriminator with their config and training history.
pub struct Translator {
    pub config: TranslatorConfig,
    pub history: Vec<EpochStats>,
    g_vs: nn::VarStore,
    d_vs: nn::VarStore,
    generator: Generator,
    discriminator: Discriminator,
}

impl fmt::Debug for Translator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Translator")
            .field("config", &self.config)
            .field("epochs_trained", &self.history.len())
            .finish()
    }
}

fn check_image(img: &Raster, spectrum: Spectrum, role: &str) -> Result<()> {
    if img.width() != IMAGE_SIDE || img.height() != IMAGE_SIDE || img.channels() != spectrum.channels() {
        return Err(NetError::Shape(format!(
            "{role} must be {IMAGE_SIDE}x{IMAGE_SIDE}x{} ({spectrum}), got {}",
            spectrum.channels(),
            img.shape_string()
        )));
    }
    Ok(())
}

impl Translator {
    /// Fresh networks initialized from `config.seed`.
    pub fn new(config: TranslatorConfig) -> Result<Self> {
        config.validate()?;
        tch::manual_seed(config.seed as i64);
        let g_vs = nn::VarStore::new(Device::Cpu);
        let d_vs = nn::VarStore::new(Device::Cpu);
        let generator = Generator::new(&(g_vs.root() / "generator"), config.c_in(), config.c_out(), config.ngf);
        let discriminator =
            Discriminator::new(&(d_vs.root() / "discriminator"), config.c_in() + config.c_out(), config.ndf);
        Ok(Translator {
            config,
            history: Vec::new(),
            g_vs,
            d_vs,
            generator,
            discriminator,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    /// Deterministic inference: dropout off, batch norm on running statistics.
    pub fn translate(&self, img: &Raster, source: Spectrum) -> Result<Raster> {
        if source != self.config.direction.source() {
            return Err(NetError::DirectionMismatch {
                expected: self.config.direction.source(),
                actual: source,
            });
        }
        check_image(img, source, "translator input")?;
        let out = tch::no_grad(|| self.generator.forward_t(&raster_to_tensor(img), false));
        tensor_to_raster(&out)
    }

    /// Mean |G(x) - y| over pairs, eval mode, [-1, 1] units.
    pub fn mean_l1(&self, pairs: &[(Raster, Raster)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(NetError::EmptyDataset("no pairs to evaluate".into()));
        }
        let mut total = 0.0;
        for chunk in pairs.chunks(8) {
            let src = u8_to_unit(&stack_u8(&chunk.iter().map(|p| &p.0).collect::<Vec<_>>())?);
            let tgt = u8_to_unit(&stack_u8(&chunk.iter().map(|p| &p.1).collect::<Vec<_>>())?);
            let fake = tch::no_grad(|| self.generator.forward_t(&src, false));
            total += scalar(&(fake - tgt).abs().mean(Kind::Double)) * chunk.len() as f64;
        }
        Ok(total / pairs.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ArchiveWriter::new();
        w.json("config.json", &self.config)?;
        w.json("history.json", &self.history)?;
        w.vars("generator.ot", &self.g_vs)?;
        w.vars("discriminator.ot", &self.d_vs)?;
        w.write(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = ArchiveReader::open(path.as_ref())?;
        let config: TranslatorConfig = r.json("config.json")?;
        let mut t = Translator::new(config)?;
        t.history = r.json("history.json")?;
        r.load_vars("generator.ot", &mut t.g_vs)?;
        r.load_vars("discriminator.ot", &mut t.d_vs)?;
        Ok(t)
    }
}

fn check_pairs(pairs: &[(Raster, Raster)], dir: Direction) -> Result<()> {
    for (s, t) in pairs {
        check_image(s, dir.source(), "source")?;
        check_image(t, dir.target(), "target")?;
    }
    Ok(())
}

/// Alternating D/G Adam updates over seed-shuffled mini-batches. `heldout`
/// pairs (may be empty) are scored after every epoch.
pub fn train_translator(
    train: &[(Raster, Raster)],
    heldout: &[(Raster, Raster)],
    config: &TranslatorConfig,
) -> Result<Translator> {
    config.validate()?;
    if train.is_empty() {
        return Err(NetError::EmptyDataset("translator needs at least one aligned pair".into()));
    }
    check_pairs(train, config.direction)?;
    check_pairs(heldout, config.direction)?;

    let mut t = Translator::new(config.clone())?;
    let adam = nn::Adam {
        beta1: config.adam_beta1,
        beta2: 0.999,
        wd: 0.0,
        eps: 1e-8,
        amsgrad: false,
    };
    let mut opt_g = adam.build(&t.g_vs, config.learn_rate)?;
    let mut opt_d = adam.build(&t.d_vs, config.learn_rate)?;
    let src = stack_u8(&train.iter().map(|p| &p.0).collect::<Vec<_>>())?;
    let tgt = stack_u8(&train.iter().map(|p| &p.1).collect::<Vec<_>>())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<i64> = (0..train.len() as i64).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sd, mut sa, mut sl, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let idx = Tensor::from_slice(idx);
            let x = u8_to_unit(&src.index_select(0, &idx));
            let y = u8_to_unit(&tgt.index_select(0, &idx));

            let fake = t.generator.forward_t(&x, true);
            let d_real = t.discriminator.forward_t(&Tensor::cat(&[&x, &y], 1), true);
            let d_fake = t.discriminator.forward_t(&Tensor::cat(&[&x, &fake.detach()], 1), true);
            let loss_d = discriminator_loss(&d_real, &d_fake)?;
            opt_d.backward_step(&loss_d);

            let d_fake = t.discriminator.forward_t(&Tensor::cat(&[&x, &fake], 1), true);
            let adv = adversarial_term(&d_fake);
            let l1 = l1_term(&fake, &y)?;
            let loss_g = &adv + &l1 * config.lambda_l1;
            opt_g.backward_step(&loss_g);

            let (vd, va, vl) = (scalar(&loss_d), scalar(&adv), scalar(&l1));
            if !(vd.is_finite() && va.is_finite() && vl.is_finite()) {
                return Err(NetError::NonFiniteLoss {
                    epoch,
                    batch,
                    detail: format!("d_loss={vd} g_adversarial={va} g_l1={vl}"),
                });
            }
            let m = idx.size()[0] as usize;
            sd += vd * m as f64;
            sa += va * m as f64;
            sl += vl * m as f64;
            n += m;
        }
        let heldout_l1 = if heldout.is_empty() {
            None
        } else {
            Some(t.mean_l1(heldout)?)
        };
        let stats = EpochStats {
            epoch,
            d_loss: sd / n as f64,
            g_adversarial: sa / n as f64,
            g_l1: sl / n as f64,
            heldout_l1,
        };
        log::info!(
            "{} epoch {epoch}/{}: D {:.4} G_adv {:.4} L1 {:.4} heldout {:?}",
            config.direction,
            config.epochs,
            stats.d_loss,
            stats.g_adversarial,
            stats.g_l1,
            stats.heldout_l1
        );
        t.history.push(stats);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_channels() {
        assert_eq!(Direction::Vis2Nir.source().channels(), 3);
        assert_eq!(Direction::Nir2Gray.target(), Spectrum::Gray);
        assert_eq!("NIR2VIS".parse::<Direction>().unwrap(), Direction::Nir2Vis);
        assert!("gray2nir".parse::<Direction>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TranslatorConfig::new(Direction::Vis2Nir, 0);
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.validate().unwrap();
        c.lambda_l1 = 0.0;
        assert!(c.validate().is_err());
        c.lambda_l1 = 100.0;
        c.adam_beta1 = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let cfg = TranslatorConfig {
            ngf: 2,
            ndf: 2,
            ..TranslatorConfig::new(Direction::Nir2Gray, 1)
        };
        assert!(matches!(train_translator(&[], &[], &cfg), Err(NetError::EmptyDataset(_))));
        let bad = (Raster::zeros(256, 256, 3), Raster::zeros(256, 256, 1));
        assert!(matches!(train_translator(&[bad], &[], &cfg), Err(NetError::Shape(_))));
        let t = Translator::new(cfg).unwrap();
        assert!(matches!(
            t.translate(&Raster::zeros(256, 256, 3), Spectrum::Vis),
            Err(NetError::DirectionMismatch { .. })
        ));
        assert!(t.translate(&Raster::zeros(128, 128, 1), Spectrum::Nir).is_err());
    }
}
