#include "memground/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "memground/errors.hpp"

namespace memground {

Conv1dParams Conv1dParams::create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                                  Eigen::Index out, Rng& rng) {
  Conv1dParams p;
  p.weight = store.add_uniform(prefix + ".weight", 3 * in, out, 3 * in, rng);
  p.bias = store.add_uniform(prefix + ".bias", 1, out, 3 * in, rng);
  return p;
}

Tensor conv1d(const Tensor& x, const Conv1dParams& p) {
  if (3 * x.cols() != p.weight.rows()) {
    throw DimensionError("conv1d: input " + x.shape_string() + " vs kernel " + p.weight.shape_string());
  }
  const Tensor taps[] = {shift_rows(x, -1), x, shift_rows(x, 1)};
  return add_row(matmul(concat_cols(taps), p.weight), p.bias);
}

HeadParams HeadParams::create(ParamStore& store, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  HeadParams p;
  p.boundary.push_back(Conv1dParams::create(store, "head.boundary.0", in, hidden, rng));
  p.boundary.push_back(Conv1dParams::create(store, "head.boundary.1", hidden, 2, rng));
  p.confidence.push_back(Conv1dParams::create(store, "head.confidence.0", in, hidden, rng));
  p.confidence.push_back(Conv1dParams::create(store, "head.confidence.1", hidden, 1, rng));
  p.iou.push_back(Conv1dParams::create(store, "head.iou.0", in, hidden, rng));
  p.iou.push_back(Conv1dParams::create(store, "head.iou.1", hidden, hidden, rng));
  p.iou.push_back(Conv1dParams::create(store, "head.iou.2", hidden, 1, rng));
  return p;
}

namespace {

Tensor conv_stack(const Tensor& x, const std::vector<Conv1dParams>& layers) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = conv1d(h, layers[i]);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

Matrix column(Eigen::Index rows, double v) { return Matrix::Constant(rows, 1, v); }

}  // namespace

HeadOutputs heads_forward(const Tensor& features, const HeadParams& p) {
  if (features.rows() < 1) throw DimensionError("heads_forward: empty feature sequence");
  return {softplus(conv_stack(features, p.boundary)), conv_stack(features, p.confidence),
          conv_stack(features, p.iou)};
}

FrameTargets make_targets(Eigen::Index frames, int gt_start, int gt_end) {
  if (frames < 1 || gt_start < 0 || gt_start > gt_end || gt_end > frames - 1) {
    throw InputError("make_targets: ground truth [" + std::to_string(gt_start) + ", " +
                     std::to_string(gt_end) + "] invalid for " + std::to_string(frames) + " frames");
  }
  FrameTargets t;
  t.frames = frames;
  t.gt_start = gt_start;
  t.gt_end = gt_end;
  t.indicator = Matrix::Zero(frames, 1);
  t.offsets = Matrix::Zero(frames, 2);
  for (int f = gt_start; f <= gt_end; ++f) {
    t.indicator(f, 0) = 1.0;
    t.offsets(f, 0) = f - gt_start;
    t.offsets(f, 1) = gt_end - f;
  }
  t.confidence = t.indicator;
  return t;
}

Interval decode_box(Eigen::Index t, double d_start, double d_end, Eigen::Index frames) {
  const double hi = static_cast<double>(frames - 1);
  const double tt = static_cast<double>(t);
  return {std::clamp(tt - d_start, 0.0, hi), std::clamp(tt + d_end, 0.0, hi)};
}

Tensor boundary_loss(const Tensor& offsets, const FrameTargets& targets) {
  if (offsets.rows() != targets.frames || offsets.cols() != 2) {
    throw DimensionError("boundary_loss: offsets " + offsets.shape_string() + " for " +
                         std::to_string(targets.frames) + " frames");
  }
  const Eigen::Index tp = targets.positives();
  if (tp < 1) throw InputError("boundary_loss: sample has no positive frames");

  // Positive frames are the contiguous block [gt_start, gt_end].
  const Tensor pred = slice_rows(offsets, targets.gt_start, tp);
  const Tensor goal = Tensor::constant(targets.offsets.middleRows(targets.gt_start, tp));
  const Tensor regression = sum(smooth_l1(goal, pred));

  Matrix pos(tp, 1);
  for (Eigen::Index i = 0; i < tp; ++i) pos(i, 0) = static_cast<double>(targets.gt_start + i);
  const double hi = static_cast<double>(targets.frames - 1);
  const Tensor t = Tensor::constant(pos);
  const Tensor start_hat = clamp(sub(t, slice_cols(pred, 0, 1)), 0.0, hi);
  const Tensor end_hat = clamp(add(t, slice_cols(pred, 1, 1)), 0.0, hi);
  const Tensor start = Tensor::constant(column(tp, targets.gt_start));
  const Tensor end = Tensor::constant(column(tp, targets.gt_end));

  const double inf = std::numeric_limits<double>::infinity();
  const Tensor inter = clamp(sub(minimum(end, end_hat), maximum(start, start_hat)), kIntersectionFloor, inf);
  const Tensor uni = clamp(sub(maximum(end, end_hat), minimum(start, start_hat)), kIntersectionFloor, inf);
  // -ln(inter / union)
  const Tensor iou_term = sum(sub(log(uni), log(inter)));
  return scale(add(regression, iou_term), 1.0 / static_cast<double>(tp));
}

Tensor confidence_loss(const Tensor& logits, const FrameTargets& targets) {
  if (logits.rows() != targets.frames || logits.cols() != 1) {
    throw DimensionError("confidence_loss: logits " + logits.shape_string() + " for " +
                         std::to_string(targets.frames) + " frames");
  }
  return scale(sum(bce_with_logits(logits, targets.confidence)),
               1.0 / static_cast<double>(targets.positives()));
}

Tensor iou_loss(const Tensor& iou_pred, const Matrix& offsets, const FrameTargets& targets) {
  if (iou_pred.rows() != targets.frames || iou_pred.cols() != 1 || offsets.rows() != targets.frames) {
    throw DimensionError("iou_loss: predictions " + iou_pred.shape_string() + " for " +
                         std::to_string(targets.frames) + " frames");
  }
  Matrix labels(targets.frames, 1);
  for (Eigen::Index t = 0; t < targets.frames; ++t) {
    labels(t, 0) = interval_iou(decode_box(t, offsets(t, 0), offsets(t, 1), targets.frames), targets.gt());
  }
  return scale(sum(smooth_l1(Tensor::constant(labels), iou_pred)),
               1.0 / static_cast<double>(targets.frames));
}

LossBreakdown total_loss(const HeadOutputs& out, const FrameTargets& targets, const LossWeights& w) {
  if (w.boundary < 0 || w.confidence < 0 || w.iou < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  const Tensor lb = boundary_loss(out.offsets, targets);
  const Tensor lc = confidence_loss(out.confidence_logits, targets);
  const Tensor li = iou_loss(out.iou, out.offsets.value(), targets);
  LossBreakdown r;
  r.boundary = lb.item();
  r.confidence = lc.item();
  r.iou = li.item();
  r.total = add(add(scale(lb, w.boundary), scale(lc, w.confidence)), scale(li, w.iou));
  return r;
}

PredictionSet temporal_nms(const std::vector<Prediction>& candidates, std::size_t limit, double threshold) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].score > candidates[b].score;
  });
  PredictionSet kept;
  for (std::size_t idx : order) {
    if (kept.size() >= limit) break;
    const auto& c = candidates[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Prediction& k) {
      return interval_iou(k.interval, c.interval) >= threshold;
    });
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

PredictionSet infer_top_n(const Matrix& offsets, const Matrix& confidence_logits, const Matrix& iou,
                          std::size_t n) {
  if (n < 1) throw InputError("infer_top_n: n must be at least 1");
  const Eigen::Index frames = offsets.rows();
  if (offsets.cols() != 2 || confidence_logits.rows() != frames || iou.rows() != frames) {
    throw DimensionError("infer_top_n: head outputs disagree on frame count");
  }
  std::vector<Prediction> candidates;
  candidates.reserve(static_cast<std::size_t>(frames));
  for (Eigen::Index t = 0; t < frames; ++t) {
    const double conf = 1.0 / (1.0 + std::exp(-confidence_logits(t, 0)));
    const double score = conf * std::clamp(iou(t, 0), 0.0, 1.0);
    candidates.push_back({decode_box(t, offsets(t, 0), offsets(t, 1), frames), score});
  }
  return temporal_nms(candidates, n);
}

}  // namespace memground
