#pragma once

// End-to-end grounding network: encoders -> cross-modal alignment ->
// (optional) persistent memory -> heterogeneous attention -> heads.

#include <cstdint>
#include <memory>
#include <optional>

#include "memground/alignment.hpp"
#include "memground/encoders.hpp"
#include "memground/fusion.hpp"
#include "memground/grounding.hpp"
#include "memground/membank.hpp"
#include "memground/params.hpp"
#include "memground/synthdata.hpp"

namespace memground {

struct ModelConfig {
  EncoderDims encoder;
  Eigen::Index latent_dim = 32;   // D'
  Eigen::Index head_hidden = 32;
  Eigen::Index video_slots = 64;  // L_V
  Eigen::Index query_slots = 64;  // L_Q
  bool memory = true;
  bool shared_memory = true;
  FusionMode fusion = FusionMode::kFull;
  CalibrationWiring calibration = CalibrationWiring::kGlobalQueries;
  LossWeights loss;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ForwardTrace {
  Tensor video;  // V
  Tensor query;  // Q
  Adjacency adjacency;
  Aligned aligned;
  std::optional<Enhanced> enhanced;
  Tensor video_tilde;
  Tensor query_tilde;
  FusionOutput fusion;
  HeadOutputs heads;
};

class GroundingModel {
 public:
  explicit GroundingModel(const ModelConfig& cfg);

  GroundingModel(const GroundingModel&) = delete;
  GroundingModel& operator=(const GroundingModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // nullptr when memory is disabled.
  MemorySystem* memory() { return memory_.get(); }
  const MemorySystem* memory() const { return memory_.get(); }

  // Training mode writes to memory during forward; evaluation mode only reads.
  void set_mode(Mode m);
  Mode mode() const { return mode_; }

  ForwardTrace forward(const GroundingSample& sample);
  LossBreakdown loss(const GroundingSample& sample);
  // Forward without recording a tape; must be in evaluation mode.
  PredictionSet predict(const GroundingSample& sample, std::size_t top_n);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  EncoderParams encoder_;
  AlignmentParams alignment_;
  std::unique_ptr<MemorySystem> memory_;
  FusionConfig fusion_cfg_;
  FusionParams fusion_;
  HeadParams heads_;
  Mode mode_ = Mode::kTraining;
};

}  // namespace memground
