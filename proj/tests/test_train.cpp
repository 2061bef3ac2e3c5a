#include <cmath>
#include <sstream>

#include "doctest.h"
#include "memground/errors.hpp"
#include "memground/grad_check.hpp"
#include "memground/train.hpp"
#include "grad_suite.hpp"
#include "test_util.hpp"

using namespace memground;

namespace {

RunConfig small_run(int train, int val, int test, bool memory = true) {
  RunConfig c;
  c.corpus.num_train = train;
  c.corpus.num_val = val;
  c.corpus.num_test = test;
  c.corpus.seed = 21;
  c.memory = memory;
  c.optimizer.batch_size = 4;
  c.optimizer.epochs = 3;
  c.seed = 5;
  return c;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  const auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!testutil::bit_equal(ta[i].value(), tb[i].value())) return false;
  }
  return true;
}

bool same_banks(const GroundingModel& a, const GroundingModel& b) {
  if (!a.memory() || !b.memory()) return !a.memory() && !b.memory();
  const auto& ba = a.memory()->banks();
  const auto& bb = b.memory()->banks();
  if (ba.size() != bb.size()) return false;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (!testutil::bit_equal(ba[i].slots(), bb[i].slots())) return false;
  }
  return true;
}

bool same_curves(const std::vector<LossPoint>& a, const std::vector<LossPoint>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].epoch != b[i].epoch || a[i].train_loss != b[i].train_loss || a[i].val_loss != b[i].val_loss ||
        a[i].val_recall != b[i].val_recall) {
      return false;
    }
  }
  return true;
}

bool same_predictions(const std::vector<PredictionSet>& a, const std::vector<PredictionSet>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      if (!(a[i][j].interval == b[i][j].interval) || a[i][j].score != b[i][j].score) return false;
    }
  }
  return true;
}

std::vector<Matrix> bank_slots(const GroundingModel& m) {
  std::vector<Matrix> out;
  for (const auto& b : m.memory()->banks()) out.push_back(b.slots());
  return out;
}

// Recall when each predicted box keeps its length but lands at a uniformly
// random position inside the video.
double random_placement_recall(const EvalResult& r, std::size_t n, double m, int reps, std::mt19937_64& g) {
  long hits = 0;
  for (int rep = 0; rep < reps; ++rep) {
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const GroundingSample& s = *r.samples[i];
      const double hi = double(s.frame_count() - 1);
      const Interval gt{double(s.gt_start), double(s.gt_end)};
      bool any = false;
      for (std::size_t k = 0; k < r.predictions[i].size() && k < n; ++k) {
        const double len = std::min(r.predictions[i][k].interval.length(), hi);
        const double start = std::uniform_real_distribution<double>(0.0, hi - len)(g);
        any = any || interval_iou({start, start + len}, gt) > m;
      }
      hits += any ? 1 : 0;
    }
  }
  return 100.0 * double(hits) / double(reps * static_cast<long>(r.samples.size()));
}

}  // namespace

TEST_CASE("zero learning rate freezes parameters but not memory") {
  RunConfig cfg = small_run(12, 0, 0);
  cfg.optimizer.learning_rate = 0.0;
  cfg.optimizer.epochs = 1;
  const Corpus corpus = generate_corpus(cfg.corpus);
  TrainingState st(cfg);
  TrainingState reference(cfg);
  const auto before = bank_slots(st.model);
  train(st, corpus);
  CHECK(same_params(st.model.params(), reference.model.params()));
  const auto after = bank_slots(st.model);
  bool changed = false;
  for (std::size_t i = 0; i < before.size(); ++i) changed = changed || !testutil::bit_equal(before[i], after[i]);
  CHECK(changed);
}

TEST_CASE("same seed gives bit-identical loss curves and weights") {
  const RunConfig cfg = small_run(16, 8, 0);
  const Corpus corpus = generate_corpus(cfg.corpus);
  TrainingState a(cfg), b(cfg);
  train(a, corpus);
  train(b, corpus);
  REQUIRE(a.loss_curve.size() == 3);
  CHECK(same_curves(a.loss_curve, b.loss_curve));
  CHECK(same_params(a.model.params(), b.model.params()));
  CHECK(same_banks(a.model, b.model));
}

TEST_CASE("resuming from a checkpoint matches uninterrupted training") {
  for (bool memory : {true, false}) {
    CAPTURE(memory);
    const RunConfig cfg = small_run(16, 8, 0, memory);
    const Corpus corpus = generate_corpus(cfg.corpus);
    TrainingState full(cfg);
    train(full, corpus);

    TrainingState first(cfg);
    train(first, corpus, {.stop_after = 1});
    REQUIRE(first.epochs_done == 1);
    std::stringstream buffer;
    first.save(buffer);
    const auto resumed = TrainingState::load(buffer);
    train(*resumed, corpus);

    CHECK(resumed->epochs_done == 3);
    CHECK(same_curves(resumed->loss_curve, full.loss_curve));
    CHECK(same_params(resumed->model.params(), full.model.params()));
    CHECK(same_banks(resumed->model, full.model));
    CHECK(resumed->optimizer.steps() == full.optimizer.steps());
  }
}

TEST_CASE("checkpoints reject foreign or truncated input") {
  const RunConfig cfg = small_run(4, 0, 0);
  TrainingState st(cfg);
  std::stringstream buffer;
  st.save(buffer);
  const std::string bytes = buffer.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(TrainingState::load(truncated), InputError);
  std::istringstream junk("not a checkpoint at all");
  CHECK_THROWS_AS(TrainingState::load(junk), InputError);
}

TEST_CASE("evaluation is read-only and repeatable") {
  const RunConfig cfg = small_run(16, 12, 0);
  const Corpus corpus = generate_corpus(cfg.corpus);
  TrainingState st(cfg);
  train(st, corpus, {.stop_after = 1});
  const auto banks = bank_slots(st.model);
  const auto grid = default_recall_grid();
  const EvalResult a = evaluate(st.model, corpus, Split::kVal, 5, grid);
  const EvalResult b = evaluate(st.model, corpus, Split::kVal, 5, grid);
  CHECK(same_predictions(a.predictions, b.predictions));
  CHECK(a.mean_loss == b.mean_loss);
  REQUIRE(a.report.entries.size() == b.report.entries.size());
  for (std::size_t i = 0; i < a.report.entries.size(); ++i) {
    CHECK(a.report.entries[i].overall == b.report.entries[i].overall);
  }
  const auto after = bank_slots(st.model);
  for (std::size_t i = 0; i < banks.size(); ++i) CHECK(testutil::bit_equal(banks[i], after[i]));
  for (const auto& p : a.predictions) CHECK(p.size() <= 5);
}

TEST_CASE("evaluation report satisfies the weighted-mean identity") {
  const RunConfig cfg = small_run(40, 60, 0);
  const Corpus corpus = generate_corpus(cfg.corpus);
  TrainingState st(cfg);
  const EvalResult r = evaluate(st.model, corpus, Split::kVal, 5, default_recall_grid());
  CHECK(r.report.total == 60);
  CHECK(r.report.rare_count + r.report.common_count == 60);
  for (const auto& e : r.report.entries) {
    const double mean = (e.rare.value_or(0.0) * double(r.report.rare_count) +
                         e.common.value_or(0.0) * double(r.report.common_count)) /
                        double(r.report.total);
    CHECK(std::abs(mean - e.overall) <= 1e-9);
  }
}

TEST_CASE("an untrained model scores near the random-placement baseline") {
  const RunConfig cfg = small_run(20, 400, 0);
  const Corpus corpus = generate_corpus(cfg.corpus);
  TrainingState st(cfg);
  const EvalResult r = evaluate(st.model, corpus, Split::kVal, 5, default_recall_grid());
  std::mt19937_64 g(99);
  for (const RecallKey& k : default_recall_grid()) {
    const double baseline = random_placement_recall(r, k.n, k.m, 200, g);
    const double got = r.report.at(k.n, k.m).overall;
    MESSAGE("R@" << k.n << ",IoU=" << k.m << ": untrained " << got << " random " << baseline);
    CHECK(std::abs(got - baseline) <= 10.0);
  }
}

TEST_CASE("evaluating a missing split is an input error") {
  const RunConfig cfg = small_run(4, 2, 0);
  const Corpus corpus = generate_corpus(cfg.corpus);
  TrainingState st(cfg);
  CHECK_THROWS_AS(evaluate(st.model, corpus, Split::kTest, 5, default_recall_grid()), InputError);
  CHECK_THROWS_AS(parse_split("holdout"), InputError);
}

TEST_CASE("run config JSON roundtrips and rejects bad input") {
  RunConfig c;
  c.memory = false;
  c.fusion = FusionMode::kNoSelf;
  c.optimizer.learning_rate = 0.25;
  c.corpus.zipf_exponent = 0.7;
  c.video_slots = 9;
  c.seed = 77;
  nlohmann::json j = c;
  const RunConfig d = j.get<RunConfig>();
  CHECK(nlohmann::json(d) == j);
  CHECK(!d.memory);
  CHECK(d.fusion == FusionMode::kNoSelf);
  CHECK(d.video_slots == 9);

  CHECK_THROWS_AS(nlohmann::json({{"colour", "blue"}}).get<RunConfig>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"optimizer", {{"momentum", 0.9}}}}).get<RunConfig>(), ConfigError);
  const RunConfig partial = nlohmann::json({{"seed", 3}}).get<RunConfig>();
  CHECK(partial.seed == 3);
  CHECK(partial.model_dim == RunConfig{}.model_dim);

  RunConfig bad;
  bad.optimizer.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.loss.iou = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.model_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.json"), ConfigError);
}

TEST_CASE("prediction dumps roundtrip into the same report") {
  const RunConfig cfg = small_run(8, 30, 0);
  const Corpus corpus = generate_corpus(cfg.corpus);
  TrainingState st(cfg);
  const auto grid = default_recall_grid();
  const EvalResult r = evaluate(st.model, corpus, Split::kVal, 5, grid);
  std::stringstream dump;
  write_prediction_dump(r, dump);
  const auto records = read_prediction_dump(dump);
  REQUIRE(records.size() == r.samples.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].id == r.samples[i]->id);
    CHECK(records[i].rare == r.samples[i]->rare);
    CHECK(same_predictions({records[i].predictions}, {r.predictions[i]}));
  }
  const MetricsReport again = report_from_dump(records, grid);
  for (std::size_t i = 0; i < again.entries.size(); ++i) {
    CHECK(again.entries[i].overall == r.report.entries[i].overall);
    CHECK(again.entries[i].rare == r.report.entries[i].rare);
    CHECK(again.entries[i].common == r.report.entries[i].common);
  }
}

TEST_CASE("grad_check through the full loss on a small instance") {
  for (const auto& c : gradsuite::gradient_cases("model")) {
    CAPTURE(c.name);
    CHECK(c.run() <= gradsuite::kTolerance);
  }
}
