#pragma once

// Training/evaluation pipeline: run configuration, Adam, checkpoints,
// prediction dumps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "memground/eval.hpp"
#include "memground/model.hpp"
#include "memground/synthdata.hpp"

namespace memground {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 16;
  int epochs = 30;
};

struct RunConfig {
  CorpusConfig corpus;
  // Model dimensions (D, D', head width, L_V, L_Q) and ablation switches.
  Eigen::Index model_dim = 32;
  Eigen::Index latent_dim = 32;
  Eigen::Index head_hidden = 32;
  Eigen::Index video_slots = 64;
  Eigen::Index query_slots = 64;
  bool memory = true;
  bool shared_memory = true;
  FusionMode fusion = FusionMode::kFull;
  CalibrationWiring calibration = CalibrationWiring::kGlobalQueries;
  LossWeights loss;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  std::size_t top_n = 5;

  void validate() const;
  ModelConfig model_config() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// Adam with bias-corrected first and second moments.
class Adam {
 public:
  Adam(const ParamStore& params, const OptimizerConfig& cfg);

  void step(ParamStore& params);
  std::uint64_t steps() const { return step_; }

  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_steps(std::uint64_t s) { step_ = s; }

 private:
  OptimizerConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::uint64_t step_ = 0;
};

// Everything needed to resume training bit-identically.
class TrainingState {
 public:
  explicit TrainingState(const RunConfig& cfg);

  RunConfig config;
  GroundingModel model;
  Adam optimizer;
  Rng shuffle_rng;
  int epochs_done = 0;
  double best_val_recall = -1.0;
  double best_val_loss = 0.0;
  std::vector<LossPoint> loss_curve;

  void save(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  // Throws InputError if the stream is not a compatible checkpoint.
  static std::unique_ptr<TrainingState> load(std::istream& is);
  static std::unique_ptr<TrainingState> load(const std::filesystem::path& path);
};

struct TrainOptions {
  // Write best/final checkpoints and the loss CSV under config.output_dir.
  bool write_files = false;
  bool verbose = false;
  // Stop after this many epochs in total (defaults to config epochs).
  std::optional<int> stop_after;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_recall = 0.0;
};

// Runs the remaining epochs on `corpus`. Throws NumericError naming the
// batch when a loss turns non-finite.
void train(TrainingState& state, const Corpus& corpus, const TrainOptions& opts = {});

struct EvalResult {
  MetricsReport report;
  std::vector<PredictionSet> predictions;
  std::vector<const GroundingSample*> samples;
  double mean_loss = 0.0;
};

// Evaluation-mode pass (no memory writes) over one split.
EvalResult evaluate(GroundingModel& model, const Corpus& corpus, Split split, std::size_t top_n,
                    std::span<const RecallKey> grid);

// One JSON object per line: {"id", "rare", "gt": [s, e],
// "predictions": [{"interval": [s, e], "score": x}, ...]}.
void write_prediction_dump(const EvalResult& r, std::ostream& os);

struct DumpRecord {
  int id = 0;
  bool rare = false;
  Interval gt;
  PredictionSet predictions;
};
std::vector<DumpRecord> read_prediction_dump(std::istream& is);
MetricsReport report_from_dump(const std::vector<DumpRecord>& records, std::span<const RecallKey> grid);

void write_loss_csv(const std::vector<LossPoint>& curve, std::ostream& os);

}  // namespace memground
