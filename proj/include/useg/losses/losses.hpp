#pragma once

#include "useg/core/ops.hpp"

namespace useg {

/// Relative weights of the stage-1 objective terms and the Dice epsilon.
template <class S>
struct LossWeights {
  S lambda_cycle = S(10);
  S lambda_adv = S(1);
  S lambda_vae = S(1);
  S epsilon = S(1e-5);
};

/// Adversarial label convention. The default follows the printed least-squares
/// objective: the discriminator drives real inputs toward 0 and fakes toward
/// 1, so LOWER patch scores mean "more real". Quality-score ranking and
/// sample selection depend on this; the flipped variant exists for
/// experimentation only.
enum class AdvLabels { kRealZeroFakeOne, kRealOneFakeZero };

/// L1 reconstruction distance, averaged over every entry.
template <class S>
Var<S> cycle_loss(const Var<S>& original, const Var<S>& reconstructed) {
  return mean(abs_(sub(reconstructed, original)));
}

template <class S>
Var<S> mse_loss(const Var<S>& a, const Var<S>& b) {
  return mean(square(sub(a, b)));
}

/// Least-squares discriminator loss over patch (or scalar) scores.
template <class S>
Var<S> lsgan_d_loss(const Var<S>& d_real, const Var<S>& d_fake,
                    AdvLabels labels = AdvLabels::kRealZeroFakeOne) {
  if (labels == AdvLabels::kRealZeroFakeOne)
    return add(mean(square(rsub(d_fake, S(1)))), mean(square(d_real)));
  return add(mean(square(d_fake)), mean(square(rsub(d_real, S(1)))));
}

/// Least-squares generator loss: push fakes toward the real label.
template <class S>
Var<S> lsgan_g_loss(const Var<S>& d_fake, AdvLabels labels = AdvLabels::kRealZeroFakeOne) {
  if (labels == AdvLabels::kRealZeroFakeOne) return mean(square(d_fake));
  return mean(square(rsub(d_fake, S(1))));
}

/// Latent-space adversarial losses share the least-squares structure.
template <class S>
Var<S> vae_adv_loss_d(const Var<S>& z_real_scores, const Var<S>& z_fake_scores,
                      AdvLabels labels = AdvLabels::kRealZeroFakeOne) {
  return lsgan_d_loss(z_real_scores, z_fake_scores, labels);
}

template <class S>
Var<S> vae_adv_loss_g(const Var<S>& z_fake_scores, AdvLabels labels = AdvLabels::kRealZeroFakeOne) {
  return lsgan_g_loss(z_fake_scores, labels);
}

/// KL(N(mean, exp(logvar)) || N(0, I)), summed over latent dims and averaged
/// over the batch: 1/2 sum(exp(logvar) + mean^2 - 1 - logvar).
template <class S>
Var<S> kl_standard_normal(const Var<S>& mean_v, const Var<S>& logvar_v) {
  Var<S> terms = sub(add_scalar(add(exp_(logvar_v), square(mean_v)), S(-1)), logvar_v);
  return scale(mean(sum_per_sample(terms)), S(0.5));
}

/// VAE pretraining objective: pixel MSE plus kl_weight * KL.
template <class S>
Var<S> vae_pretrain_loss(const Var<S>& mask, const Var<S>& reconstruction, const Var<S>& mean_v,
                         const Var<S>& logvar_v, S kl_weight) {
  return add(mse_loss(reconstruction, mask), scale(kl_standard_normal(mean_v, logvar_v), kl_weight));
}

/// Shared weighted soft-Dice core, per sample then averaged over the batch:
///   1 - (2*sum(w*p*g) + eps) / (sum(w*(p+g)) + eps)
/// The plain Dice loss routes through here with w = 1, so the two losses are
/// bit-identical when the weights are all ones.
template <class S>
Var<S> weighted_dice_core(const Var<S>& pred, const Var<S>& target, const Var<S>& weights,
                          S eps = S(1e-5)) {
  Var<S> num = sum_per_sample(mul(weights, mul(pred, target)));
  Var<S> den = sum_per_sample(mul(weights, add(pred, target)));
  Var<S> ratio = div(add_scalar(scale(num, S(2)), eps), add_scalar(den, eps));
  return mean(rsub(ratio, S(1)));
}

template <class S>
Var<S> dice_loss(const Var<S>& pred, const Var<S>& target, S eps = S(1e-5)) {
  return weighted_dice_core(pred, target, constant(Tensor<S>::full(pred->value.shape(), S(1))),
                            eps);
}

/// Per-pixel weights w = 1 - |p - g|, computed from the current values and
/// treated as constants: gradients do not flow through w. Letting them flow
/// would reward increasing |p - g| to shrink the weights.
template <class S>
Tensor<S> noise_weights(const Var<S>& pred, const Var<S>& target) {
  return Tensor<S>::from_flat(pred->value.shape(),
                              S(1) - (pred->value.flat() - target->value.flat()).abs());
}

template <class S>
Var<S> noise_weighted_dice_loss(const Var<S>& pred, const Var<S>& target, S eps = S(1e-5)) {
  return weighted_dice_core(pred, target, constant(noise_weights(pred, target)), eps);
}

}  // namespace useg
