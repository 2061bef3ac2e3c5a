#include "memground/eval.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>

#include <Eigen/Eigenvalues>

#include "memground/errors.hpp"

namespace memground {

namespace {

std::atomic<std::size_t> g_empty_predictions{0};
std::atomic<std::size_t> g_rank_zero{0};

}  // namespace

std::size_t empty_prediction_warnings() { return g_empty_predictions.load(); }
std::size_t rank_zero_projection_warnings() { return g_rank_zero.load(); }

double recall_at(std::span<const PredictionSet> predictions, std::span<const Interval> gts,
                 std::size_t n, double m) {
  if (predictions.size() != gts.size()) {
    throw DimensionError("recall_at: " + std::to_string(predictions.size()) + " prediction sets for " +
                         std::to_string(gts.size()) + " ground truths");
  }
  if (gts.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto& preds = predictions[i];
    if (preds.empty()) {
      g_empty_predictions.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    const std::size_t k = std::min(n, preds.size());
    for (std::size_t j = 0; j < k; ++j) {
      if (interval_iou(preds[j].interval, gts[i]) > m) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gts.size());
}

std::vector<RecallKey> default_recall_grid() { return {{1, 0.5}, {1, 0.7}, {5, 0.5}, {5, 0.7}}; }

const RecallEntry& MetricsReport::at(std::size_t n, double m) const {
  for (const auto& e : entries) {
    if (e.n == n && std::abs(e.m - m) < 1e-12) return e;
  }
  throw InputError("metrics report has no entry for R@" + std::to_string(n));
}

MetricsReport breakdown(std::span<const PredictionSet> predictions, std::span<const Interval> gts,
                        const std::vector<bool>& rare, std::span<const RecallKey> grid) {
  if (rare.size() != gts.size() || predictions.size() != gts.size()) {
    throw DimensionError("breakdown: predictions, ground truths and rare flags differ in length");
  }
  std::vector<PredictionSet> rare_preds, common_preds;
  std::vector<Interval> rare_gts, common_gts;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (rare[i]) {
      rare_preds.push_back(predictions[i]);
      rare_gts.push_back(gts[i]);
    } else {
      common_preds.push_back(predictions[i]);
      common_gts.push_back(gts[i]);
    }
  }
  MetricsReport r;
  r.total = gts.size();
  r.rare_count = rare_gts.size();
  r.common_count = common_gts.size();
  for (const auto& key : grid) {
    RecallEntry e;
    e.n = key.n;
    e.m = key.m;
    e.overall = recall_at(predictions, gts, key.n, key.m);
    if (!rare_gts.empty()) e.rare = recall_at(rare_preds, rare_gts, key.n, key.m);
    if (!common_gts.empty()) e.common = recall_at(common_preds, common_gts, key.n, key.m);
    r.entries.push_back(e);
  }
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["counts"] = {{"total", r.total}, {"rare", r.rare_count}, {"common", r.common_count}};
  auto& recalls = j["recall"] = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::json row{{"n", e.n}, {"m", e.m}, {"overall", e.overall}};
    row["rare"] = e.rare ? nlohmann::json(*e.rare) : nlohmann::json(nullptr);
    row["common"] = e.common ? nlohmann::json(*e.common) : nlohmann::json(nullptr);
    recalls.push_back(row);
  }
  auto& curve = j["loss_curve"] = nlohmann::json::array();
  for (const auto& p : r.loss_curve) {
    curve.push_back({{"epoch", p.epoch},
                     {"train_loss", p.train_loss},
                     {"val_loss", p.val_loss},
                     {"val_r1_iou05", p.val_recall}});
  }
  return j;
}

void write_metrics_csv(const MetricsReport& r, std::ostream& os) {
  os << "n,m,split,recall\n";
  os << std::setprecision(17);
  auto put = [&](const RecallEntry& e, const char* split, const std::optional<double>& v) {
    os << e.n << "," << e.m << "," << split << ",";
    if (v) {
      os << *v;
    } else {
      os << "NA";
    }
    os << "\n";
  };
  for (const auto& e : r.entries) {
    put(e, "overall", e.overall);
    put(e, "rare", e.rare);
    put(e, "common", e.common);
  }
}

Matrix memory_projection(const Matrix& slots) {
  if (slots.rows() < 2) throw InputError("memory_projection: need at least two slots");
  const RowVector mu = slots.colwise().mean();
  const Matrix centred = slots.rowwise() - mu;
  Matrix out = Matrix::Zero(slots.rows(), 2);
  // Spread at rounding level counts as identical slots.
  const double scale = std::max(1.0, slots.cwiseAbs().maxCoeff());
  if (centred.cwiseAbs().maxCoeff() <= 1e-12 * scale) {
    g_rank_zero.fetch_add(1, std::memory_order_relaxed);
    return out;
  }
  const Eigen::MatrixXd cov = centred.transpose() * centred;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come back ascending.
  const Eigen::Index d = cov.rows();
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
    Eigen::VectorXd dir = eig.eigenvectors().col(d - 1 - k);
    for (Eigen::Index i = 0; i < dir.size(); ++i) {
      if (std::abs(dir(i)) > 1e-12) {
        if (dir(i) < 0) dir = -dir;
        break;
      }
    }
    out.col(k) = centred * dir;
  }
  return out;
}

void write_projection_csv(const Matrix& projection, std::ostream& os) {
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < projection.rows(); ++i) {
    os << projection(i, 0) << "," << projection(i, 1) << "\n";
  }
}

}  // namespace memground
