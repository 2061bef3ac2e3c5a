#pragma once

// Heterogeneous attention: frame-frame self-attention, frame-word
// inter-attention and calibration of the memory-enhanced frames by the
// original video features, concatenated per frame.

#include <string>
#include <vector>

#include "memground/attention.hpp"
#include "memground/params.hpp"
#include "memground/tensor.hpp"

namespace memground {

// Which attention units contribute to F.
enum class FusionMode {
  kFull,           // self + inter + calibration
  kInterOnly,      // inter
  kNoCalibration,  // self + inter
  kNoSelf,         // inter + calibration
};

// Who supplies the queries of the calibration unit.
enum class CalibrationWiring {
  kGlobalQueries,    // projected V queries, projected V~ keys/values
  kEnhancedQueries,  // projected V~ queries, projected V keys/values
};

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(CalibrationWiring w);
CalibrationWiring parse_calibration_wiring(const std::string& s);

struct FusionConfig {
  Eigen::Index dim = 32;     // D
  Eigen::Index latent = 32;  // D'
  FusionMode mode = FusionMode::kFull;
  CalibrationWiring wiring = CalibrationWiring::kGlobalQueries;

  bool uses_self() const { return mode == FusionMode::kFull || mode == FusionMode::kNoCalibration; }
  bool uses_calibration() const { return mode == FusionMode::kFull || mode == FusionMode::kNoSelf; }
  // Width of F; units switched off by the mode are zero blocks.
  Eigen::Index output_width() const { return 3 * latent; }
};

struct FusionParams {
  Tensor proj_video_tilde;  // 2D x D'
  Tensor proj_query_tilde;  // 2D x D'
  Tensor proj_video;        // D x D'
  AttentionParams frame_self;
  AttentionParams word_self;
  AttentionParams inter;
  AttentionParams calibration;

  static FusionParams create(ParamStore& store, const FusionConfig& cfg, Rng& rng);
};

struct FusionOutput {
  Tensor features;                      // F, T x cfg.output_width()
  std::vector<Tensor> attention_maps;   // every softmax map used, for inspection
};

// Per-position column concatenation [first ; second].
Tensor build_tilde(const Tensor& first, const Tensor& second);

FusionOutput heterogeneous_attention(const Tensor& video_tilde, const Tensor& query_tilde,
                                     const Tensor& video, const FusionParams& p,
                                     const FusionConfig& cfg);

}  // namespace memground
