#pragma once

#include "mms/abi.hpp"

#include <string>

#include "mms/tape.hpp"

MMS_BEGIN_NAMESPACE

enum class LossKind { WeightedBCE, SoftIoU, BCEPlusLogDice, Dice, TverskyFocal };

std::string to_string(LossKind kind);
// "bce" | "iou" | "bce_iou" | "dice" | "tversky_focal"
LossKind parse_loss_kind(const std::string& text);

struct LossParams {
  LossKind kind = LossKind::WeightedBCE;
  Scalar eps = Scalar(1e-6);
  Scalar tversky_alpha = Scalar(0.3);
  Scalar tversky_beta = Scalar(0.7);
  Scalar tversky_gamma = Scalar(0.75);
  // Use background/object instead of object/background as the positive weight.
  bool invert_pos_weight = false;

  void validate() const;
};

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

// Object/background pixel ratio of a binary target, clamped to [1e-3, 1e3].
// Logs a warning when the clamp engages because the target has no background.
Scalar positive_weight(const Tensor& target, bool invert = false);

// Throws DataError when the target holds values outside {0,1}.
void require_binary(const Tensor& target);

// Soft intersection X = sum(y*p) and union U = sum(y + p - y*p) over all pixels.
struct SoftOverlap {
  Var intersection;
  Var union_;
};
SoftOverlap soft_overlap(Tape& tape, Var pred, Var target);

// Mean over pixels of -(p_pos*y*log(p) + (1-y)*log(1-p)).
Var weighted_bce(Tape& tape, Var pred, const Tensor& target, bool invert_pos_weight = false);
// (X + eps) / (U + eps). The loss is 1 - IoU.
Var soft_iou(Tape& tape, Var pred, const Tensor& target, Scalar eps);
// BCE - log(2 IoU / (IoU + 1)).
Var bce_plus_log_dice(Tape& tape, Var pred, const Tensor& target, Scalar eps,
                      bool invert_pos_weight = false);
// 1 - (2X + eps) / (X + U + eps).
Var dice_loss(Tape& tape, Var pred, const Tensor& target, Scalar eps);
// (1 - TI)^gamma with TI = (X + eps) / (X + alpha*FP + beta*FN + eps).
Var tversky_focal_loss(Tape& tape, Var pred, const Tensor& target, Scalar alpha, Scalar beta,
                       Scalar gamma, Scalar eps);

Var compute_loss(Tape& tape, Var pred, const Tensor& target, const LossParams& params);

// Mean over images of the exact IoU (percent) after thresholding.
// An image with empty target and empty prediction scores 100.
double eval_iou(const Tensor& pred, const Tensor& target, double threshold = 0.5);

MMS_END_NAMESPACE
