// memground: command-line front end for corpus generation, training,
// evaluation, ablations and memory inspection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "memground/errors.hpp"
#include "memground/eval.hpp"
#include "memground/train.hpp"

namespace fs = std::filesystem;
using namespace memground;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> memory;
  std::optional<std::string> fusion;
  std::optional<std::string> out;
  std::string corpus;
  std::string split = "test";
  std::optional<std::size_t> topn;
  std::string checkpoint;
  std::string snapshot;
  std::string bank;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Seed override");
  cmd->add_option("--epochs", o.epochs, "Epoch count override")->check(CLI::PositiveNumber);
  cmd->add_option("--memory", o.memory, "Memory module")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--fusion", o.fusion, "Fusion variant")
      ->check(CLI::IsMember({"full", "inter-only", "no-calibration", "no-self"}));
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--corpus", o.corpus, "Corpus file (generated from the config when absent)");
}

RunConfig resolve_config(const Options& o, bool seed_is_corpus_seed = false) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    if (seed_is_corpus_seed) {
      cfg.corpus.seed = *o.seed;
    } else {
      cfg.seed = *o.seed;
    }
  }
  if (o.epochs) cfg.optimizer.epochs = *o.epochs;
  if (o.memory) cfg.memory = *o.memory == "on";
  if (o.fusion) cfg.fusion = parse_fusion_mode(*o.fusion);
  if (o.out) cfg.output_dir = *o.out;
  if (o.topn) cfg.top_n = *o.topn;
  cfg.validate();
  return cfg;
}

Corpus obtain_corpus(const Options& o, const RunConfig& cfg) {
  if (!o.corpus.empty()) return load_corpus(fs::path(o.corpus));
  return generate_corpus(cfg.corpus);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << *v;
  return ss.str();
}

int cmd_gen_corpus(const Options& o) {
  const RunConfig cfg = resolve_config(o, true);
  const fs::path path = o.corpus.empty() ? fs::path(cfg.output_dir) / "corpus.bin" : fs::path(o.corpus);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const Corpus c = generate_corpus(cfg.corpus);
  save_corpus(c, path);
  std::size_t rare = 0;
  for (const auto& s : c.samples) rare += s.rare ? 1 : 0;
  std::cout << "wrote " << c.samples.size() << " samples (" << rare << " rare) to " << path.string() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const Corpus corpus = obtain_corpus(o, cfg);
  fs::create_directories(cfg.output_dir);
  write_json(fs::path(cfg.output_dir) / "config.json", nlohmann::json(cfg));
  TrainingState state(cfg);
  TrainOptions opts;
  opts.write_files = true;
  opts.verbose = !o.quiet;
  train(state, corpus, opts);
  const auto& last = state.loss_curve.back();
  std::cout << "trained " << state.epochs_done << " epochs; final train loss " << last.train_loss
            << ", best val R@1,IoU=0.5 " << state.best_val_recall << "\n"
            << "checkpoints and loss.csv in " << cfg.output_dir << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const fs::path out = o.out ? fs::path(*o.out) : fs::path("run");
  const fs::path ckpt = o.checkpoint.empty() ? out / "best.ckpt" : fs::path(o.checkpoint);
  auto state = TrainingState::load(ckpt);
  const std::size_t topn = o.topn.value_or(state->config.top_n);
  if (topn < 1) throw ConfigError("--topn must be >= 1");
  const Corpus corpus = obtain_corpus(o, state->config);
  const auto grid = default_recall_grid();
  EvalResult r = evaluate(state->model, corpus, parse_split(o.split), topn, grid);
  r.report.loss_curve = state->loss_curve;
  fs::create_directories(out);
  write_json(out / ("metrics_" + o.split + ".json"), to_json(r.report));
  {
    std::ofstream csv(out / ("metrics_" + o.split + ".csv"));
    write_metrics_csv(r.report, csv);
  }
  {
    std::ofstream dump(out / ("predictions_" + o.split + ".jsonl"));
    write_prediction_dump(r, dump);
  }
  std::cout << "split " << o.split << ": " << r.report.total << " samples (" << r.report.rare_count
            << " rare)\n";
  for (const auto& e : r.report.entries) {
    std::cout << "  R@" << e.n << ",IoU=" << e.m << "  overall " << fmt(e.overall) << "  rare " << fmt(e.rare)
              << "  common " << fmt(e.common) << "\n";
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig base = resolve_config(o);
  const Corpus corpus = obtain_corpus(o, base);
  struct Row {
    std::string name;
    bool memory;
    FusionMode fusion;
  };
  const std::vector<Row> rows = {{"full model", true, FusionMode::kFull},
                                 {"w/o memory", false, FusionMode::kFull},
                                 {"inter-attention only", true, FusionMode::kInterOnly},
                                 {"w/o calibration", true, FusionMode::kNoCalibration},
                                 {"w/o self-attention", true, FusionMode::kNoSelf}};
  const auto grid = default_recall_grid();
  fs::create_directories(base.output_dir);
  std::ofstream csv(fs::path(base.output_dir) / "ablation.csv");
  csv << "variant,memory,fusion,n,m,overall,rare,common\n" << std::setprecision(17);
  std::ostringstream table;
  table << "| variant | memory | fusion | R@1,0.5 | R@1,0.7 | R@5,0.5 | R@5,0.7 | rare R@1,0.5 | common R@1,0.5 |\n"
        << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& row : rows) {
    RunConfig cfg = base;
    cfg.memory = row.memory;
    cfg.fusion = row.fusion;
    TrainingState state(cfg);
    TrainOptions opts;
    opts.verbose = !o.quiet;
    if (!o.quiet) std::cerr << "== " << row.name << "\n";
    train(state, corpus, opts);
    const EvalResult r = evaluate(state.model, corpus, parse_split(o.split), cfg.top_n, grid);
    table << "| " << row.name << " | " << (row.memory ? "on" : "off") << " | " << to_string(row.fusion);
    for (const auto& e : r.report.entries) {
      table << " | " << fmt(e.overall);
      csv << row.name << "," << (row.memory ? "on" : "off") << "," << to_string(row.fusion) << "," << e.n << ","
          << e.m << "," << e.overall << "," << (e.rare ? std::to_string(*e.rare) : "NA") << ","
          << (e.common ? std::to_string(*e.common) : "NA") << "\n";
    }
    const auto& r1 = r.report.at(1, 0.5);
    table << " | " << fmt(r1.rare) << " | " << fmt(r1.common) << " |\n";
  }
  std::cout << table.str();
  std::ofstream(fs::path(base.output_dir) / "ablation.md") << table.str();
  return 0;
}

int cmd_export_memory(const Options& o) {
  const fs::path out = o.out ? fs::path(*o.out) : fs::path("run");
  const fs::path ckpt = o.checkpoint.empty() ? out / "best.ckpt" : fs::path(o.checkpoint);
  auto state = TrainingState::load(ckpt);
  const MemorySystem* mem = state->model.memory();
  if (!mem) throw ConfigError("checkpoint was trained with memory off; nothing to export");
  fs::create_directories(out);
  const auto names = mem->bank_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const fs::path path = out / ("memory_" + names[i] + ".bin");
    mem->banks()[i].save(path);
    std::cout << "wrote " << path.string() << " (" << mem->banks()[i].slot_count() << "x"
              << mem->banks()[i].dim() << ")\n";
  }
  return 0;
}

int cmd_project_memory(const Options& o) {
  const fs::path out = o.out ? fs::path(*o.out) : fs::path("run");
  MemoryBank bank = [&] {
    if (!o.snapshot.empty()) return MemoryBank::load(fs::path(o.snapshot));
    const fs::path ckpt = o.checkpoint.empty() ? out / "best.ckpt" : fs::path(o.checkpoint);
    auto state = TrainingState::load(ckpt);
    const MemorySystem* mem = state->model.memory();
    if (!mem) throw ConfigError("checkpoint was trained with memory off; nothing to project");
    const auto names = mem->bank_names();
    const std::string want = o.bank.empty() ? names.front() : o.bank;
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == want) return mem->banks()[i];
    }
    throw ConfigError("unknown bank '" + want + "'");
  }();
  fs::create_directories(out);
  const std::string stem = o.bank.empty() ? to_string(bank.domain()) : o.bank;
  const fs::path path = out / ("projection_" + stem + ".csv");
  std::ofstream os(path);
  write_projection_csv(memory_projection(bank.slots()), os);
  std::cout << "wrote " << path.string() << " (" << bank.slot_count() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-guided temporal sentence grounding on synthetic corpora"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus file");
  add_run_flags(gen, o);

  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoints and loss.csv");
  add_run_flags(tr, o);
  tr->add_flag("--quiet", o.quiet, "Suppress per-epoch logging");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  add_run_flags(ev, o);
  ev->add_option("--split", o.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--topn", o.topn, "Predictions kept per sample")->check(CLI::PositiveNumber);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default: <out>/best.ckpt)");

  auto* ab = app.add_subcommand("ablate", "Train and compare the memory/fusion ablation variants");
  add_run_flags(ab, o);
  ab->add_option("--split", o.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  ab->add_option("--topn", o.topn, "Predictions kept per sample")->check(CLI::PositiveNumber);
  ab->add_flag("--quiet", o.quiet, "Suppress per-epoch logging");

  auto* ex = app.add_subcommand("export-memory", "Write memory bank snapshots from a checkpoint");
  ex->add_option("--out", o.out, "Output directory");
  ex->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default: <out>/best.ckpt)");

  auto* pm = app.add_subcommand("project-memory", "PCA-project memory slots to 2-D (CSV)");
  pm->add_option("--out", o.out, "Output directory");
  pm->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default: <out>/best.ckpt)");
  pm->add_option("--snapshot", o.snapshot, "Memory snapshot file")->check(CLI::ExistingFile);
  pm->add_option("--bank", o.bank, "Bank name within the checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_corpus(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*ab) return cmd_ablate(o);
    if (*ex) return cmd_export_memory(o);
    if (*pm) return cmd_project_memory(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
