#pragma once

// Synthetic grounding corpus with a Zipf-distributed vocabulary.
//
// Every word owns a unit-norm concept vector. Frames inside the target
// interval are noisy means of the query's concepts; the frames left and
// right of it are noisy means of two distractor word sets disjoint from the
// query. Locating the interval therefore requires matching words to frame
// content, and the heavy Zipf tail produces words seen only a handful of
// times in training (the rare cases).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "memground/params.hpp"
#include "memground/tensor.hpp"

namespace memground {

struct CorpusConfig {
  int num_train = 2000;
  int num_val = 400;
  int num_test = 400;
  int min_frames = 16;
  int max_frames = 32;
  int min_words = 3;
  int max_words = 6;
  int vocab_size = 200;
  int feature_dim = 32;
  double zipf_exponent = 1.1;
  double noise = 0.1;
  int rare_threshold = 10;
  std::uint64_t seed = 1;

  int total() const { return num_train + num_val + num_test; }
  // Throws ConfigError on empty ranges, W < 2, max_words > W, threshold < 1, ...
  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

enum class Split : std::uint32_t { kTrain = 0, kVal = 1, kTest = 2 };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct GroundingSample {
  int id = 0;
  Split split = Split::kTrain;
  Matrix frames;           // T x feature_dim
  std::vector<int> words;  // N word ids
  int gt_start = 0;
  int gt_end = 0;
  bool rare = false;

  int frame_count() const { return static_cast<int>(frames.rows()); }
  int word_count() const { return static_cast<int>(words.size()); }
};

struct Vocabulary {
  Matrix concepts;                    // W x feature_dim, unit-norm rows
  std::vector<double> probabilities;  // Zipf law over ranks; id r has rank r + 1
  std::vector<std::int64_t> frequency;  // training-split occurrence counts

  std::uint64_t checksum() const;
};

// P(rank r) proportional to r^-s for r = 1..W.
std::vector<double> zipf_probabilities(int vocab_size, double exponent);

Vocabulary make_vocabulary(const CorpusConfig& cfg);

// N distinct word ids drawn from the Zipf law (sequential draws without
// replacement). Throws ConfigError if n exceeds the vocabulary.
std::vector<int> sample_words(const std::vector<double>& probabilities, int n, Rng& rng);
// Same, but never returns an id in `excluded`.
std::vector<int> sample_words_excluding(const std::vector<double>& probabilities, int n,
                                        const std::vector<int>& excluded, Rng& rng);

GroundingSample generate_sample(const CorpusConfig& cfg, const Vocabulary& vocab, Rng& rng);

struct Corpus {
  CorpusConfig config;
  Vocabulary vocab;
  std::vector<GroundingSample> samples;

  std::vector<const GroundingSample*> split(Split s) const;
};

// Generates all samples (per-sample seeds derived from cfg.seed and the
// sample id) and labels rarity.
Corpus generate_corpus(const CorpusConfig& cfg);

// Counts word occurrences over the training split, stores them in
// vocab.frequency, and flags every sample (all splits) that contains a word
// with training count below cfg.rare_threshold. Throws InputError on an
// empty corpus.
void label_rarity(Corpus& corpus);

void save_corpus(const Corpus& corpus, std::ostream& os);
Corpus load_corpus(std::istream& is);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace memground
