#include "mms/losses.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "mms/error.hpp"
#include "mms/ops.hpp"

MMS_BEGIN_NAMESPACE

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::WeightedBCE: return "bce";
    case LossKind::SoftIoU: return "iou";
    case LossKind::BCEPlusLogDice: return "bce_iou";
    case LossKind::Dice: return "dice";
    case LossKind::TverskyFocal: return "tversky_focal";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& text) {
  for (LossKind k : {LossKind::WeightedBCE, LossKind::SoftIoU, LossKind::BCEPlusLogDice,
                     LossKind::Dice, LossKind::TverskyFocal}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("unknown loss '" + text + "' (expected bce|iou|bce_iou|dice|tversky_focal)");
}

void LossParams::validate() const {
  if (!(eps > 0)) throw ConfigError("loss eps must be > 0");
  if (!(tversky_alpha + tversky_beta > 0)) throw ConfigError("tversky alpha + beta must be > 0");
  if (tversky_alpha < 0 || tversky_beta < 0) throw ConfigError("tversky alpha/beta must be >= 0");
  if (!(tversky_gamma > 0)) throw ConfigError("tversky gamma must be > 0");
}

void require_binary(const Tensor& target) {
  for (Scalar v : target.data()) {
    if (v != Scalar(0) && v != Scalar(1)) {
      throw DataError("segmentation target is not binary (found " + std::to_string(v) + ")");
    }
  }
}

Scalar positive_weight(const Tensor& target, bool invert) {
  double object = 0.0;
  for (Scalar v : target.data()) object += v;
  const double background = static_cast<double>(target.size()) - object;
  if (background == 0.0 || object == 0.0) {
    spdlog::warn("weighted BCE: target has {} object and {} background pixels; positive weight "
                 "clamped",
                 object, background);
  }
  double ratio;
  if (invert) {
    ratio = object == 0.0 ? 1e3 : background / object;
  } else {
    ratio = background == 0.0 ? 1e3 : object / background;
  }
  return static_cast<Scalar>(std::clamp(ratio, 1e-3, 1e3));
}

SoftOverlap soft_overlap(Tape& tape, Var pred, Var target) {
  const Var product = ops::mul(tape, target, pred);
  const Var x = ops::sum(tape, product);
  const Var u = ops::sum(tape, ops::sub(tape, ops::add(tape, target, pred), product));
  return {x, u};
}

namespace {

Var clamp_probs(Tape& tape, Var pred) {
  return ops::clamp(tape, pred, static_cast<Scalar>(kProbClamp),
                    static_cast<Scalar>(1.0 - kProbClamp));
}

Var target_var(Tape& tape, Var pred, const Tensor& target) {
  if (tape.shape(pred) != target.shape()) {
    throw DimensionError("loss: prediction " + shape_str(tape.shape(pred)) + " vs target " +
                         shape_str(target.shape()));
  }
  require_binary(target);
  return tape.constant(target);
}

Var one_minus(Tape& tape, Var x) { return ops::add_scalar(tape, ops::scale(tape, x, Scalar(-1)), Scalar(1)); }

Var iou_from_overlap(Tape& tape, const SoftOverlap& o, Scalar eps) {
  return ops::div(tape, ops::add_scalar(tape, o.intersection, eps),
                  ops::add_scalar(tape, o.union_, eps));
}

}  // namespace

Var weighted_bce(Tape& tape, Var pred, const Tensor& target, bool invert_pos_weight) {
  const Var y = target_var(tape, pred, target);
  const Scalar p_pos = positive_weight(target, invert_pos_weight);
  const Var p = clamp_probs(tape, pred);
  const Var pos = ops::scale(tape, ops::mul(tape, y, ops::log(tape, p)), p_pos);
  const Var neg = ops::mul(tape, one_minus(tape, y), ops::log(tape, one_minus(tape, p)));
  return ops::scale(tape, ops::mean(tape, ops::add(tape, pos, neg)), Scalar(-1));
}

Var soft_iou(Tape& tape, Var pred, const Tensor& target, Scalar eps) {
  const Var y = target_var(tape, pred, target);
  return iou_from_overlap(tape, soft_overlap(tape, pred, y), eps);
}

Var bce_plus_log_dice(Tape& tape, Var pred, const Tensor& target, Scalar eps,
                      bool invert_pos_weight) {
  const Var bce = weighted_bce(tape, pred, target, invert_pos_weight);
  const Var iou = soft_iou(tape, pred, target, eps);
  const Var dice = ops::div(tape, ops::scale(tape, iou, Scalar(2)), ops::add_scalar(tape, iou, Scalar(1)));
  return ops::sub(tape, bce, ops::log(tape, dice));
}

Var dice_loss(Tape& tape, Var pred, const Tensor& target, Scalar eps) {
  const Var y = target_var(tape, pred, target);
  const SoftOverlap o = soft_overlap(tape, pred, y);
  const Var num = ops::add_scalar(tape, ops::scale(tape, o.intersection, Scalar(2)), eps);
  const Var den = ops::add_scalar(tape, ops::add(tape, o.intersection, o.union_), eps);
  return one_minus(tape, ops::div(tape, num, den));
}

Var tversky_focal_loss(Tape& tape, Var pred, const Tensor& target, Scalar alpha, Scalar beta,
                       Scalar gamma, Scalar eps) {
  const Var y = target_var(tape, pred, target);
  const Var x = ops::sum(tape, ops::mul(tape, y, pred));
  const Var fp = ops::sum(tape, ops::mul(tape, one_minus(tape, y), pred));
  const Var fn = ops::sum(tape, ops::mul(tape, y, one_minus(tape, pred)));
  const Var den = ops::add_scalar(
      tape, ops::add(tape, x, ops::add(tape, ops::scale(tape, fp, alpha), ops::scale(tape, fn, beta))),
      eps);
  const Var ti = ops::div(tape, ops::add_scalar(tape, x, eps), den);
  // 1 - TI can round to a tiny negative value at a perfect prediction.
  const Var gap = ops::clamp(tape, one_minus(tape, ti), Scalar(0), Scalar(1));
  return ops::pow_scalar(tape, gap, gamma);
}

Var compute_loss(Tape& tape, Var pred, const Tensor& target, const LossParams& params) {
  switch (params.kind) {
    case LossKind::WeightedBCE: return weighted_bce(tape, pred, target, params.invert_pos_weight);
    case LossKind::SoftIoU: return one_minus(tape, soft_iou(tape, pred, target, params.eps));
    case LossKind::BCEPlusLogDice:
      return bce_plus_log_dice(tape, pred, target, params.eps, params.invert_pos_weight);
    case LossKind::Dice: return dice_loss(tape, pred, target, params.eps);
    case LossKind::TverskyFocal:
      return tversky_focal_loss(tape, pred, target, params.tversky_alpha, params.tversky_beta,
                                params.tversky_gamma, params.eps);
  }
  throw ConfigError("unhandled loss kind");
}

double eval_iou(const Tensor& pred, const Tensor& target, double threshold) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("eval_iou: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  if (pred.size() == 0) throw DimensionError("eval_iou: empty input");
  // Leading axis is the image index; everything else is one image.
  const std::size_t images = pred.rank() >= 3 ? pred.dim(0) : 1;
  const std::size_t per_image = pred.size() / images;
  double total = 0.0;
  for (std::size_t n = 0; n < images; ++n) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
      const bool p = static_cast<double>(pred[i]) >= threshold;
      const bool t = target[i] > Scalar(0.5);
      inter += (p && t) ? 1 : 0;
      uni += (p || t) ? 1 : 0;
    }
    total += uni == 0 ? 100.0 : 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(images);
}

MMS_END_NAMESPACE
