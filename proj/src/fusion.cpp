#include "memground/fusion.hpp"

#include "memground/errors.hpp"

namespace memground {

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kFull: return "full";
    case FusionMode::kInterOnly: return "inter-only";
    case FusionMode::kNoCalibration: return "no-calibration";
    case FusionMode::kNoSelf: return "no-self";
  }
  return "full";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "full") return FusionMode::kFull;
  if (s == "inter-only") return FusionMode::kInterOnly;
  if (s == "no-calibration") return FusionMode::kNoCalibration;
  if (s == "no-self") return FusionMode::kNoSelf;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

std::string to_string(CalibrationWiring w) {
  return w == CalibrationWiring::kGlobalQueries ? "global-queries" : "enhanced-queries";
}

CalibrationWiring parse_calibration_wiring(const std::string& s) {
  if (s == "global-queries") return CalibrationWiring::kGlobalQueries;
  if (s == "enhanced-queries") return CalibrationWiring::kEnhancedQueries;
  throw ConfigError("unknown calibration wiring '" + s + "'");
}

FusionParams FusionParams::create(ParamStore& store, const FusionConfig& cfg, Rng& rng) {
  const Eigen::Index d = cfg.dim, w = cfg.latent;
  FusionParams p;
  p.proj_video_tilde = store.add_uniform("fusion.proj_video_tilde", 2 * d, w, 2 * d, rng);
  p.proj_query_tilde = store.add_uniform("fusion.proj_query_tilde", 2 * d, w, 2 * d, rng);
  p.proj_video = store.add_uniform("fusion.proj_video", d, w, d, rng);
  p.frame_self = AttentionParams::create(store, "fusion.frame_self", w, w, rng);
  p.word_self = AttentionParams::create(store, "fusion.word_self", w, w, rng);
  p.inter = AttentionParams::create(store, "fusion.inter", w, w, rng);
  p.calibration = AttentionParams::create(store, "fusion.calibration", w, w, rng);
  return p;
}

Tensor build_tilde(const Tensor& first, const Tensor& second) {
  if (first.rows() != second.rows()) {
    throw DimensionError("build_tilde: " + first.shape_string() + " vs " + second.shape_string());
  }
  const Tensor parts[] = {first, second};
  return concat_cols(parts);
}

FusionOutput heterogeneous_attention(const Tensor& video_tilde, const Tensor& query_tilde,
                                     const Tensor& video, const FusionParams& p,
                                     const FusionConfig& cfg) {
  if (video_tilde.cols() != 2 * cfg.dim || query_tilde.cols() != 2 * cfg.dim ||
      video.cols() != cfg.dim || video.rows() != video_tilde.rows()) {
    throw DimensionError("heterogeneous_attention: inputs " + video_tilde.shape_string() + ", " +
                         query_tilde.shape_string() + ", " + video.shape_string() +
                         " do not match D=" + std::to_string(cfg.dim));
  }
  const Tensor vt = matmul(video_tilde, p.proj_video_tilde);
  const Tensor qt = matmul(query_tilde, p.proj_query_tilde);
  const Tensor v = matmul(video, p.proj_video);

  FusionOutput out;
  std::vector<Tensor> streams;
  // Disabled units contribute zero blocks so F keeps its T x 3D' layout.
  const Tensor zeros = Tensor::constant(Matrix::Zero(video.rows(), cfg.latent));

  // Word-word relations feed the value path of the frame-word unit.
  Tensor word_values = qt;
  if (cfg.uses_self()) {
    AttentionResult frames = self_attention(vt, p.frame_self);
    AttentionResult words = self_attention(qt, p.word_self);
    streams.push_back(frames.output);
    out.attention_maps.push_back(frames.weights);
    out.attention_maps.push_back(words.weights);
    word_values = words.output;
  } else {
    streams.push_back(zeros);
  }

  AttentionResult inter = attend(vt, qt, word_values, p.inter);
  streams.push_back(inter.output);
  out.attention_maps.push_back(inter.weights);

  if (cfg.uses_calibration()) {
    AttentionResult cal = cfg.wiring == CalibrationWiring::kGlobalQueries
                              ? attend(v, vt, vt, p.calibration)
                              : attend(vt, v, v, p.calibration);
    streams.push_back(cal.output);
    out.attention_maps.push_back(cal.weights);
  } else {
    streams.push_back(zeros);
  }

  out.features = concat_cols(streams);
  return out;
}

}  // namespace memground
