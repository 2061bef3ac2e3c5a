#pragma once

// Boundary regression, confidence scoring and IoU regression heads over the
// fused per-frame features, their losses, and ranked inference.

#include <vector>

#include "memground/interval.hpp"
#include "memground/params.hpp"
#include "memground/tensor.hpp"

namespace memground {

// Width-3 temporal convolution with zero padding of one frame on each side.
// weight rows are laid out [x(t-1) ; x(t) ; x(t+1)].
struct Conv1dParams {
  Tensor weight;  // 3*in x out
  Tensor bias;    // 1 x out

  static Conv1dParams create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                             Eigen::Index out, Rng& rng);
};

Tensor conv1d(const Tensor& x, const Conv1dParams& p);

struct HeadParams {
  std::vector<Conv1dParams> boundary;    // in -> H -> 2
  std::vector<Conv1dParams> confidence;  // in -> H -> 1
  std::vector<Conv1dParams> iou;         // in -> H -> H -> 1

  static HeadParams create(ParamStore& store, Eigen::Index in, Eigen::Index hidden, Rng& rng);
};

struct HeadOutputs {
  Tensor offsets;            // T x 2, (d_s, d_e) >= 0 through softplus
  Tensor confidence_logits;  // T x 1
  Tensor iou;                // T x 1, unclamped; clamp to [0,1] when scoring
};

HeadOutputs heads_forward(const Tensor& features, const HeadParams& p);

// Per-frame supervision derived from a ground-truth interval.
struct FrameTargets {
  Eigen::Index frames = 0;
  int gt_start = 0;
  int gt_end = 0;
  Matrix indicator;  // T x 1, 1 inside [gt_start, gt_end]
  Matrix offsets;    // T x 2, (t - gt_start, gt_end - t) on positive frames, else 0
  Matrix confidence; // T x 1, equal to indicator

  Eigen::Index positives() const { return gt_end - gt_start + 1; }
  Interval gt() const { return {static_cast<double>(gt_start), static_cast<double>(gt_end)}; }
};

// Throws InputError unless 0 <= gt_start <= gt_end <= frames - 1.
FrameTargets make_targets(Eigen::Index frames, int gt_start, int gt_end);

// [t - d_s, t + d_e] clamped to [0, frames - 1].
Interval decode_box(Eigen::Index t, double d_start, double d_end, Eigen::Index frames);

// Mean over positive frames of SmoothL1(d, d_hat) - ln IoU(decoded boxes);
// the intersection is floored at kIntersectionFloor before the logarithm.
inline constexpr double kIntersectionFloor = 1e-6;
Tensor boundary_loss(const Tensor& offsets, const FrameTargets& targets);

// Sum over all frames of BCE(c_t, sigmoid(logit_t)), divided by the positive count.
Tensor confidence_loss(const Tensor& logits, const FrameTargets& targets);

// Mean over frames of SmoothL1(i_t, i_hat_t), with i_t the IoU between the
// box decoded from the (constant) predicted offsets and the ground truth.
Tensor iou_loss(const Tensor& iou_pred, const Matrix& offsets, const FrameTargets& targets);

struct LossWeights {
  double boundary = 1.0;
  double confidence = 1.0;
  double iou = 1.0;
};

struct LossBreakdown {
  Tensor total;
  double boundary = 0.0;
  double confidence = 0.0;
  double iou = 0.0;
};

// Weighted multi-task loss. Throws ConfigError for a negative weight.
LossBreakdown total_loss(const HeadOutputs& out, const FrameTargets& targets, const LossWeights& w);

struct Prediction {
  Interval interval;
  double score = 0.0;
};

using PredictionSet = std::vector<Prediction>;

inline constexpr double kNmsThreshold = 0.5;

// Greedy temporal NMS: candidates visited by descending score (ties by lower
// index); a candidate is dropped if its IoU with any kept one is >= threshold.
// Returns at most `limit` survivors in visiting order.
PredictionSet temporal_nms(const std::vector<Prediction>& candidates, std::size_t limit,
                           double threshold = kNmsThreshold);

// Scores every frame's decoded box by sigmoid(logit) * clamp(iou, 0, 1)
// and returns the top `n` after NMS.
PredictionSet infer_top_n(const Matrix& offsets, const Matrix& confidence_logits,
                          const Matrix& iou, std::size_t n);

}  // namespace memground
