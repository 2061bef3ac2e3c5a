#include "memground/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "memground/binary_io.hpp"
#include "memground/errors.hpp"

namespace memground {

namespace {

constexpr std::string_view kCheckpointMagic = "MGCHKPNT";
constexpr std::uint32_t kCheckpointVersion = 1;

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw ConfigError("unknown config key '" + where + "." + k + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  corpus.validate();
  model_config().validate();
  if (optimizer.epochs < 1) throw ConfigError("optimizer.epochs must be >= 1");
  if (optimizer.batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("optimizer.learning_rate must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be > 0");
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.encoder.vocab_size = corpus.vocab_size;
  m.encoder.raw_dim = corpus.feature_dim;
  m.encoder.input_dim = model_dim;
  m.encoder.model_dim = model_dim;
  m.latent_dim = latent_dim;
  m.head_hidden = head_hidden;
  m.video_slots = video_slots;
  m.query_slots = query_slots;
  m.memory = memory;
  m.shared_memory = shared_memory;
  m.fusion = fusion;
  m.calibration = calibration;
  m.loss = loss;
  m.seed = seed;
  return m;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"corpus", c.corpus},
      {"model",
       {{"model_dim", c.model_dim},
        {"latent_dim", c.latent_dim},
        {"head_hidden", c.head_hidden},
        {"video_slots", c.video_slots},
        {"query_slots", c.query_slots}}},
      {"ablation",
       {{"memory", c.memory},
        {"shared_memory", c.shared_memory},
        {"fusion", to_string(c.fusion)},
        {"calibration", to_string(c.calibration)}}},
      {"loss", {{"boundary", c.loss.boundary}, {"confidence", c.loss.confidence}, {"iou", c.loss.iou}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon},
        {"batch_size", c.optimizer.batch_size},
        {"epochs", c.optimizer.epochs}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"top_n", c.top_n}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  try {
    reject_unknown(j, {"corpus", "model", "ablation", "loss", "optimizer", "seed", "output_dir", "top_n"}, "config");
    RunConfig d;
    if (j.contains("corpus")) {
      reject_unknown(j["corpus"],
                     {"num_train", "num_val", "num_test", "min_frames", "max_frames", "min_words", "max_words",
                      "vocab_size", "feature_dim", "zipf_exponent", "noise", "rare_threshold", "seed"},
                     "corpus");
      c.corpus = j["corpus"].get<CorpusConfig>();
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      reject_unknown(m, {"model_dim", "latent_dim", "head_hidden", "video_slots", "query_slots"}, "model");
      c.model_dim = m.value("model_dim", d.model_dim);
      c.latent_dim = m.value("latent_dim", d.latent_dim);
      c.head_hidden = m.value("head_hidden", d.head_hidden);
      c.video_slots = m.value("video_slots", d.video_slots);
      c.query_slots = m.value("query_slots", d.query_slots);
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      reject_unknown(a, {"memory", "shared_memory", "fusion", "calibration"}, "ablation");
      c.memory = a.value("memory", d.memory);
      c.shared_memory = a.value("shared_memory", d.shared_memory);
      c.fusion = parse_fusion_mode(a.value("fusion", to_string(d.fusion)));
      c.calibration = parse_calibration_wiring(a.value("calibration", to_string(d.calibration)));
    }
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      reject_unknown(l, {"boundary", "confidence", "iou"}, "loss");
      c.loss.boundary = l.value("boundary", d.loss.boundary);
      c.loss.confidence = l.value("confidence", d.loss.confidence);
      c.loss.iou = l.value("iou", d.loss.iou);
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      reject_unknown(o, {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs"}, "optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", d.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", d.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", d.optimizer.beta2);
      c.optimizer.epsilon = o.value("epsilon", d.optimizer.epsilon);
      c.optimizer.batch_size = o.value("batch_size", d.optimizer.batch_size);
      c.optimizer.epochs = o.value("epochs", d.optimizer.epochs);
    }
    c.seed = j.value("seed", d.seed);
    c.output_dir = j.value("output_dir", d.output_dir);
    c.top_n = j.value("top_n", d.top_n);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Adam::Adam(const ParamStore& params, const OptimizerConfig& cfg) : cfg_(cfg) {
  for (const auto& [name, t] : params.entries()) {
    m_.push_back(Matrix::Zero(t.rows(), t.cols()));
    v_.push_back(Matrix::Zero(t.rows(), t.cols()));
  }
}

void Adam::step(ParamStore& params) {
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  std::size_t i = 0;
  for (auto& [name, t] : params.entries()) {
    Tensor p = t;
    const Matrix& g = p.grad();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const auto update = (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.epsilon);
    p.mutable_value().array() -= cfg_.learning_rate * update;
    ++i;
  }
}

// ---------------------------------------------------------------------------

TrainingState::TrainingState(const RunConfig& cfg)
    : config(cfg),
      model((cfg.validate(), cfg.model_config())),
      optimizer(model.params(), cfg.optimizer),
      shuffle_rng(mix_seed(cfg.seed, 0x73687566ULL)) {}

void TrainingState::save(std::ostream& os) const {
  binio::put_magic(os, kCheckpointMagic);
  binio::put_u32(os, kCheckpointVersion);
  binio::put_string(os, nlohmann::json(config).dump());
  binio::put_u32(os, static_cast<std::uint32_t>(epochs_done));
  binio::put_f64(os, best_val_recall);
  binio::put_f64(os, best_val_loss);
  std::ostringstream rng_state;
  rng_state << shuffle_rng;
  binio::put_string(os, rng_state.str());

  const Adam& opt = optimizer;
  binio::put_u64(os, opt.steps());
  const auto& entries = model.params().entries();
  binio::put_u64(os, entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    binio::put_string(os, entries[i].first);
    binio::put_matrix(os, entries[i].second.value());
    binio::put_matrix(os, opt.first_moments()[i]);
    binio::put_matrix(os, opt.second_moments()[i]);
  }

  binio::put_u64(os, loss_curve.size());
  for (const auto& p : loss_curve) {
    binio::put_u32(os, static_cast<std::uint32_t>(p.epoch));
    binio::put_f64(os, p.train_loss);
    binio::put_f64(os, p.val_loss);
    binio::put_f64(os, p.val_recall);
  }

  const MemorySystem* mem = model.memory();
  binio::put_u64(os, mem ? mem->banks().size() : 0);
  if (mem) {
    for (const auto& b : mem->banks()) b.save(os);
  }
}

void TrainingState::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  save(os);
}

std::unique_ptr<TrainingState> TrainingState::load(std::istream& is) {
  binio::expect_magic(is, kCheckpointMagic);
  const auto version = binio::get_u32(is);
  if (version != kCheckpointVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
  RunConfig cfg;
  try {
    cfg = nlohmann::json::parse(binio::get_string(is)).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw InputError(std::string("checkpoint config rejected: ") + e.what());
  }
  auto st = std::make_unique<TrainingState>(cfg);
  st->epochs_done = static_cast<int>(binio::get_u32(is));
  st->best_val_recall = binio::get_f64(is);
  st->best_val_loss = binio::get_f64(is);
  std::istringstream rng_state(binio::get_string(is));
  rng_state >> st->shuffle_rng;
  if (!rng_state) throw InputError("checkpoint rng state is corrupt");

  st->optimizer.set_steps(binio::get_u64(is));
  const auto& entries = st->model.params().entries();
  if (binio::get_u64(is) != entries.size()) throw InputError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string name = binio::get_string(is, 4096);
    if (name != entries[i].first) throw InputError("checkpoint parameter '" + name + "' out of order");
    Tensor t = entries[i].second;
    Matrix value = binio::get_matrix(is);
    Matrix m = binio::get_matrix(is);
    Matrix v = binio::get_matrix(is);
    if (value.rows() != t.rows() || value.cols() != t.cols() || m.rows() != t.rows() ||
        m.cols() != t.cols() || v.rows() != t.rows() || v.cols() != t.cols()) {
      throw InputError("checkpoint parameter '" + name + "' has the wrong shape");
    }
    t.mutable_value() = std::move(value);
    st->optimizer.first_moments()[i] = std::move(m);
    st->optimizer.second_moments()[i] = std::move(v);
  }

  const auto points = binio::get_u64(is);
  if (points > 1000000) throw InputError("checkpoint loss curve is too long");
  for (std::uint64_t k = 0; k < points; ++k) {
    LossPoint p;
    p.epoch = static_cast<int>(binio::get_u32(is));
    p.train_loss = binio::get_f64(is);
    p.val_loss = binio::get_f64(is);
    p.val_recall = binio::get_f64(is);
    st->loss_curve.push_back(p);
  }

  const auto n_banks = binio::get_u64(is);
  MemorySystem* mem = st->model.memory();
  if (n_banks != (mem ? mem->banks().size() : 0)) throw InputError("checkpoint memory bank count mismatch");
  for (std::uint64_t k = 0; k < n_banks; ++k) {
    MemoryBank b = MemoryBank::load(is);
    auto& target = mem->banks()[k];
    if (b.domain() != target.domain() || b.slot_count() != target.slot_count() || b.dim() != target.dim()) {
      throw InputError("checkpoint memory bank " + std::to_string(k) + " does not match the model");
    }
    target = std::move(b);
  }
  st->model.set_mode(Mode::kTraining);
  return st;
}

std::unique_ptr<TrainingState> TrainingState::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path.string());
  return load(is);
}

// ---------------------------------------------------------------------------

void write_loss_csv(const std::vector<LossPoint>& curve, std::ostream& os) {
  os << "epoch,train_loss,val_loss,val_r1_iou05\n" << std::setprecision(17);
  for (const auto& p : curve) {
    os << p.epoch << "," << p.train_loss << "," << p.val_loss << "," << p.val_recall << "\n";
  }
}

void train(TrainingState& state, const Corpus& corpus, const TrainOptions& opts) {
  const auto train_set = corpus.split(Split::kTrain);
  if (train_set.empty()) throw InputError("train: corpus has no training samples");
  if (corpus.config.vocab_size != state.config.corpus.vocab_size ||
      corpus.config.feature_dim != state.config.corpus.feature_dim) {
    throw ConfigError("train: corpus vocabulary/feature width differs from the run config");
  }
  const int last = std::min(opts.stop_after.value_or(state.config.optimizer.epochs), state.config.optimizer.epochs);
  const std::size_t batch = static_cast<std::size_t>(state.config.optimizer.batch_size);
  const std::filesystem::path out_dir = state.config.output_dir;
  if (opts.write_files) std::filesystem::create_directories(out_dir);
  const RecallKey r1[] = {{1, 0.5}};

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = state.epochs_done; epoch < last; ++epoch) {
    state.model.set_mode(Mode::kTraining);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += batch, ++b) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      state.model.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const GroundingSample& s = *train_set[order[k]];
        LossBreakdown l = state.model.loss(s);
        const double v = l.total.item();
        if (!std::isfinite(v)) {
          clear_tape();
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", batch " << b << " (sample ids:";
          for (std::size_t q = start; q < end; ++q) msg << " " << train_set[order[q]]->id;
          msg << ")";
          if (opts.write_files) {
            std::ofstream diag(out_dir / "nonfinite_batch.json");
            nlohmann::json d{{"epoch", epoch}, {"batch", b}, {"sample_id", s.id},
                             {"boundary", l.boundary}, {"confidence", l.confidence}, {"iou", l.iou}};
            diag << d.dump(2) << "\n";
          }
          throw NumericError(msg.str());
        }
        loss_sum += v;
        backward(scale(l.total, inv));
      }
      state.optimizer.step(state.model.params());
    }

    LossPoint point;
    point.epoch = epoch + 1;
    point.train_loss = loss_sum / static_cast<double>(train_set.size());
    if (!corpus.split(Split::kVal).empty()) {
      EvalResult v = evaluate(state.model, corpus, Split::kVal, 1, r1);
      point.val_loss = v.mean_loss;
      point.val_recall = v.report.entries.front().overall;
    }
    state.loss_curve.push_back(point);
    state.epochs_done = epoch + 1;
    state.model.set_mode(Mode::kTraining);
    if (opts.verbose) {
      std::cerr << "epoch " << point.epoch << " train_loss " << point.train_loss << " val_loss "
                << point.val_loss << " val_R@1,IoU=0.5 " << point.val_recall << "\n";
    }
    const bool better = point.val_recall > state.best_val_recall ||
                        (point.val_recall == state.best_val_recall && point.val_loss < state.best_val_loss);
    if (better) {
      state.best_val_recall = point.val_recall;
      state.best_val_loss = point.val_loss;
      if (opts.write_files) state.save(out_dir / "best.ckpt");
    }
  }
  if (opts.write_files) {
    state.save(out_dir / "final.ckpt");
    std::ofstream csv(out_dir / "loss.csv");
    write_loss_csv(state.loss_curve, csv);
  }
}

EvalResult evaluate(GroundingModel& model, const Corpus& corpus, Split split, std::size_t top_n,
                    std::span<const RecallKey> grid) {
  EvalResult r;
  r.samples = corpus.split(split);
  if (r.samples.empty()) throw InputError("evaluate: split '" + to_string(split) + "' has no samples");
  const Mode previous = model.mode();
  model.set_mode(Mode::kEvaluation);
  std::vector<Interval> gts;
  std::vector<bool> rare;
  double loss_sum = 0.0;
  {
    NoGradGuard guard;
    for (const GroundingSample* s : r.samples) {
      const HeadOutputs h = model.forward(*s).heads;
      const FrameTargets targets = make_targets(s->frame_count(), s->gt_start, s->gt_end);
      loss_sum += total_loss(h, targets, model.config().loss).total.item();
      r.predictions.push_back(
          infer_top_n(h.offsets.value(), h.confidence_logits.value(), h.iou.value(), top_n));
      gts.push_back(targets.gt());
      rare.push_back(s->rare);
    }
  }
  model.set_mode(previous);
  r.mean_loss = loss_sum / static_cast<double>(r.samples.size());
  r.report = breakdown(r.predictions, gts, rare, grid);
  r.report.split = to_string(split);
  return r;
}

void write_prediction_dump(const EvalResult& r, std::ostream& os) {
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto* s = r.samples[i];
    nlohmann::json rec;
    rec["id"] = s->id;
    rec["rare"] = s->rare;
    rec["gt"] = {s->gt_start, s->gt_end};
    auto& preds = rec["predictions"] = nlohmann::json::array();
    for (const auto& p : r.predictions[i]) {
      preds.push_back({{"interval", {p.interval.start, p.interval.end}}, {"score", p.score}});
    }
    os << rec.dump() << "\n";
  }
}

std::vector<DumpRecord> read_prediction_dump(std::istream& is) {
  std::vector<DumpRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DumpRecord r;
      r.id = j.at("id").get<int>();
      r.rare = j.at("rare").get<bool>();
      r.gt = {j.at("gt").at(0).get<double>(), j.at("gt").at(1).get<double>()};
      for (const auto& p : j.at("predictions")) {
        r.predictions.push_back(
            {{p.at("interval").at(0).get<double>(), p.at("interval").at(1).get<double>()}, p.at("score").get<double>()});
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("prediction dump line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

MetricsReport report_from_dump(const std::vector<DumpRecord>& records, std::span<const RecallKey> grid) {
  std::vector<PredictionSet> preds;
  std::vector<Interval> gts;
  std::vector<bool> rare;
  for (const auto& r : records) {
    preds.push_back(r.predictions);
    gts.push_back(r.gt);
    rare.push_back(r.rare);
  }
  return breakdown(preds, gts, rare, grid);
}

}  // namespace memground
