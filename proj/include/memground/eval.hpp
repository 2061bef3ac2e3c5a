#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "memground/grounding.hpp"
#include "memground/interval.hpp"
#include "memground/tensor.hpp"

namespace memground {

// "R@n, IoU=m": percentage of samples for which at least one of the first n
// predictions has IoU with the ground truth strictly greater than m.
// A sample with no predictions counts as a miss (see empty_prediction_warnings()).
double recall_at(std::span<const PredictionSet> predictions, std::span<const Interval> gts,
                 std::size_t n, double m);

std::size_t empty_prediction_warnings();

struct RecallKey {
  std::size_t n = 1;
  double m = 0.5;
};

// The grid reported by default: n in {1, 5} x m in {0.5, 0.7}.
std::vector<RecallKey> default_recall_grid();

struct RecallEntry {
  std::size_t n = 1;
  double m = 0.5;
  double overall = 0.0;
  std::optional<double> rare;    // absent when no sample is rare
  std::optional<double> common;  // absent when every sample is rare
};

struct LossPoint {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_recall = 0.0;  // R@1, IoU=0.5 on the validation split
};

struct MetricsReport {
  std::string split;
  std::size_t total = 0;
  std::size_t rare_count = 0;
  std::size_t common_count = 0;
  std::vector<RecallEntry> entries;
  std::vector<LossPoint> loss_curve;

  const RecallEntry& at(std::size_t n, double m) const;
};

MetricsReport breakdown(std::span<const PredictionSet> predictions, std::span<const Interval> gts,
                        const std::vector<bool>& rare, std::span<const RecallKey> grid);

nlohmann::json to_json(const MetricsReport& r);
// Rows "n,m,split,recall" with split in {overall, rare, common}; absent
// partitions are written as NA.
void write_metrics_csv(const MetricsReport& r, std::ostream& os);

// Mean-centred slots projected onto the two leading principal directions,
// each direction signed so its first nonzero component is positive.
// Identical slots give an all-zero projection (and count a warning).
// Throws InputError for fewer than two slots.
Matrix memory_projection(const Matrix& slots);
std::size_t rank_zero_projection_warnings();

void write_projection_csv(const Matrix& projection, std::ostream& os);

}  // namespace memground
