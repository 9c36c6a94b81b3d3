//! Adversarial and L1 objectives of the conditional GAN.

use tch::{Kind, Tensor};

use crate::error::{NetError, Result};

/// Probabilities are clamped to `[LOG_EPS, 1 - LOG_EPS]` before the log.
pub const LOG_EPS: f64 = 1e-7;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.size() != b.size() {
        return Err(NetError::Shape(format!("{what}: {:?} vs {:?}", a.size(), b.size())));
    }
    Ok(())
}

fn safe_log(p: &Tensor) -> Tensor {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS).log()
}

/// `mean(-[log D(x,y) + log(1 - D(x,G(x)))]) / 2`.
pub fn discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    same_shape(d_real, d_fake, "discriminator maps")?;
    let kind = d_real.kind();
    let real = safe_log(d_real);
    let fake = safe_log(&(1.0 - d_fake));
    Ok(-(real + fake).mean(kind) / 2.0)
}

/// Non-saturating adversarial term `-mean(log D(x,G(x)))`.
pub fn adversarial_term(d_fake: &Tensor) -> Tensor {
    -safe_log(d_fake).mean(d_fake.kind())
}

/// `mean(|target - fake|)`.
pub fn l1_term(fake: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(fake, target, "generated image")?;
    Ok((target - fake).abs().mean(fake.kind()))
}

/// Adversarial term plus `lambda_l1` times the L1 term.
pub fn generator_loss(d_fake: &Tensor, fake: &Tensor, target: &Tensor, lambda_l1: f64) -> Result<Tensor> {
    Ok(adversarial_term(d_fake) + l1_term(fake, target)? * lambda_l1)
}

pub(crate) fn scalar(t: &Tensor) -> f64 {
    t.to_kind(Kind::Double).double_value(&[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Device;

    fn full(v: f64, shape: &[i64]) -> Tensor {
        Tensor::full(shape, v, (Kind::Double, Device::Cpu))
    }

    #[test]
    fn discriminator_hand_values() {
        let s = [1, 1, 30, 30];
        let perfect = discriminator_loss(&full(1.0 - LOG_EPS, &s), &full(LOG_EPS, &s)).unwrap();
        assert!(scalar(&perfect) < 1e-6);
        let half = discriminator_loss(&full(0.5, &s), &full(0.5, &s)).unwrap();
        assert!((scalar(&half) - std::f64::consts::LN_2).abs() < 1e-12);
        let bad = discriminator_loss(&full(LOG_EPS, &s), &full(0.5, &s)).unwrap();
        assert!(scalar(&bad) >= (1.0 / LOG_EPS).ln() / 2.0);
        assert!(discriminator_loss(&full(0.5, &[1, 1, 30, 30]), &full(0.5, &[1, 1, 29, 30])).is_err());
    }

    #[test]
    fn generator_hand_values() {
        let img = [1, 1, 8, 8];
        let d = full(0.5, &[1, 1, 30, 30]);
        let g = generator_loss(&d, &full(-1.0, &img), &full(1.0, &img), 100.0).unwrap();
        assert!((scalar(&g) - (200.0 + std::f64::consts::LN_2)).abs() < 1e-9);
        let x = full(0.3, &img);
        let perfect = generator_loss(&full(1.0 - LOG_EPS, &[1, 1, 30, 30]), &x, &x, 100.0).unwrap();
        assert!(scalar(&perfect) < 1e-6);
        let pure = generator_loss(&d, &full(-1.0, &img), &full(1.0, &img), 0.0).unwrap();
        assert_eq!(scalar(&pure), scalar(&adversarial_term(&d)));
        assert!(generator_loss(&d, &full(0.0, &img), &full(0.0, &[1, 1, 8, 7]), 1.0).is_err());
    }
}
