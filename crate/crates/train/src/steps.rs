//! Loss evaluation and back-propagation for one batch, generic over the
//! scalar type so the same code serves training and gradient checks.

use refinegan_core::losses::{
    bce_loss, bce_loss_grad, d_loss, d_loss_grad, fn_mask, fp_mask, g_adv_loss, g_adv_loss_grad, l1_loss,
    l1_loss_grad, seg_loss, LossWeights,
};
use refinegan_nets::{Network, NormStats, Scalar, Tensor};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    pub adv: f64,
    pub l1: f64,
    pub total: f64,
}

fn pair<T: Scalar>(x: &Tensor<T>, seg: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(Tensor::concat_channels(x, seg)?)
}

/// Discriminator objective on one batch. Zeroes and fills the
/// discriminator's gradients; the generator is only evaluated.
pub fn discriminator_pass<T: Scalar>(
    g: &mut Network<T>,
    d: &mut Network<T>,
    x: &Tensor<T>,
    truth: &Tensor<T>,
) -> Result<f64> {
    let fake = g.forward(x, &NormStats::Batch, false)?.output;
    d.zero_grad();
    let d_real = d.forward(&pair(x, truth)?, &NormStats::Batch, true)?.output;
    // The real and fake halves of the gradient are independent of each other.
    let (g_real, _) = d_loss_grad(d_real.data(), d_real.data())?;
    d.backward(&Tensor::new(d_real.shape(), g_real)?)?;
    let d_fake = d.forward(&pair(x, &fake)?, &NormStats::Batch, true)?.output;
    let (_, g_fake) = d_loss_grad(d_real.data(), d_fake.data())?;
    d.backward(&Tensor::new(d_fake.shape(), g_fake)?)?;
    Ok(d_loss(d_real.data(), d_fake.data())?)
}

/// Generator objective `g_adv + lambda * l1` on one batch. Zeroes and fills
/// the generator's gradients; the discriminator's gradients are overwritten
/// with values that must not be applied.
pub fn generator_pass<T: Scalar>(
    g: &mut Network<T>,
    d: &mut Network<T>,
    x: &Tensor<T>,
    truth: &Tensor<T>,
    weights: &LossWeights,
) -> Result<GeneratorLoss> {
    g.zero_grad();
    let p = g.forward(x, &NormStats::Batch, true)?.output;
    let d_fake = d.forward(&pair(x, &p)?, &NormStats::Batch, true)?.output;
    let adv = g_adv_loss(d_fake.data())?;
    let l1 = l1_loss(p.data(), truth.data())?;
    let d_in = d.backward(&Tensor::new(d_fake.shape(), g_adv_loss_grad(d_fake.data())?)?)?;
    let (_, mut dp) = d_in.split_channels(x.channels());
    let lambda = T::lit(weights.lambda_l1);
    for (a, b) in dp.data_mut().iter_mut().zip(l1_loss_grad(p.data(), truth.data())?) {
        *a = *a + lambda * b;
    }
    g.backward(&dp)?;
    Ok(GeneratorLoss { adv, l1, total: seg_loss(adv, l1, weights) })
}

/// Hard one-hot prediction: argmax over classes, or a 0.5 threshold for a
/// single channel.
pub fn binarize<T: Scalar>(p: &Tensor<T>) -> Tensor<T> {
    let c = p.channels();
    let half = T::lit(0.5);
    let mut out = Tensor::zeros(p.shape());
    for (o, px) in out.data_mut().chunks_exact_mut(c).zip(p.data().chunks_exact(c)) {
        if c == 1 {
            o[0] = if px[0] > half { T::one() } else { T::zero() };
        } else {
            let mut best = 0;
            for k in 1..c {
                if px[k] > px[best] {
                    best = k;
                }
            }
            o[best] = T::one();
        }
    }
    out
}

/// Refinement targets: false-positive masks followed by false-negative
/// masks of the binarized prediction `pred`, per class.
pub fn refinement_targets<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<Tensor<T>> {
    let hard = binarize(pred);
    let fp = Tensor::new(truth.shape(), fp_mask(truth.data(), hard.data())?)?;
    let fn_ = Tensor::new(truth.shape(), fn_mask(truth.data(), hard.data())?)?;
    Ok(Tensor::concat_channels(&fp, &fn_)?)
}

/// Refinement input: image channels followed by generator probabilities.
pub fn refinement_input<T: Scalar>(x: &Tensor<T>, probs: &Tensor<T>) -> Result<Tensor<T>> {
    pair(x, probs)
}

/// Binary cross entropy of the refinement network against the error masks
/// of the frozen generator. Zeroes and fills the refinement gradients only.
pub fn refinement_pass<T: Scalar>(
    g: &mut Network<T>,
    r: &mut Network<T>,
    x: &Tensor<T>,
    truth: &Tensor<T>,
) -> Result<f64> {
    let p = g.forward(x, &NormStats::Batch, false)?.output;
    let target = refinement_targets(&p, truth)?;
    r.zero_grad();
    let out = r.forward(&refinement_input(x, &p)?, &NormStats::Batch, true)?.output;
    let loss = bce_loss(out.data(), target.data())?;
    r.backward(&Tensor::new(out.shape(), bce_loss_grad(out.data(), target.data())?)?)?;
    Ok(loss)
}
