#include "memground/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "memground/binary_io.hpp"
#include "memground/errors.hpp"

namespace memground {

namespace {

constexpr std::string_view kCorpusMagic = "MGCORPUS";
constexpr std::uint32_t kCorpusVersion = 1;
constexpr std::uint64_t kVocabSalt = 0x766f636162ULL;
constexpr std::uint64_t kSampleSalt = 0x73616d706c65ULL;

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

void CorpusConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("corpus config: " + m); };
  if (num_train < 1) fail("num_train must be >= 1");
  if (num_val < 0 || num_test < 0) fail("split sizes must be >= 0");
  if (min_frames < 2 || max_frames < min_frames) fail("frame range must satisfy 2 <= min <= max");
  if (min_words < 1 || max_words < min_words) fail("word range must satisfy 1 <= min <= max");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (max_words > vocab_size) fail("max_words exceeds vocab_size");
  if (3 * max_words > vocab_size) fail("vocab_size too small for query plus two distractor sets");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (!(zipf_exponent >= 0.0) || !std::isfinite(zipf_exponent)) fail("zipf_exponent must be >= 0");
  if (!(noise >= 0.0) || !std::isfinite(noise)) fail("noise must be >= 0");
  if (rare_threshold < 1) fail("rare_threshold must be >= 1");
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"num_train", c.num_train},         {"num_val", c.num_val},
                     {"num_test", c.num_test},           {"min_frames", c.min_frames},
                     {"max_frames", c.max_frames},       {"min_words", c.min_words},
                     {"max_words", c.max_words},         {"vocab_size", c.vocab_size},
                     {"feature_dim", c.feature_dim},     {"zipf_exponent", c.zipf_exponent},
                     {"noise", c.noise},                 {"rare_threshold", c.rare_threshold},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  CorpusConfig d;
  c.num_train = j.value("num_train", d.num_train);
  c.num_val = j.value("num_val", d.num_val);
  c.num_test = j.value("num_test", d.num_test);
  c.min_frames = j.value("min_frames", d.min_frames);
  c.max_frames = j.value("max_frames", d.max_frames);
  c.min_words = j.value("min_words", d.min_words);
  c.max_words = j.value("max_words", d.max_words);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  c.noise = j.value("noise", d.noise);
  c.rare_threshold = j.value("rare_threshold", d.rare_threshold);
  c.seed = j.value("seed", d.seed);
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw InputError("unknown split '" + s + "'");
}

std::uint64_t Vocabulary::checksum() const {
  // FNV-1a over the IEEE bytes of the concept matrix.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(concepts.data());
  const std::size_t n = sizeof(double) * static_cast<std::size_t>(concepts.size());
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> zipf_probabilities(int vocab_size, double exponent) {
  if (vocab_size < 1) throw ConfigError("zipf_probabilities: empty vocabulary");
  std::vector<double> p(static_cast<std::size_t>(vocab_size));
  double total = 0.0;
  for (int r = 1; r <= vocab_size; ++r) {
    p[static_cast<std::size_t>(r - 1)] = std::pow(static_cast<double>(r), -exponent);
    total += p[static_cast<std::size_t>(r - 1)];
  }
  for (auto& v : p) v /= total;
  return p;
}

Vocabulary make_vocabulary(const CorpusConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, kVocabSalt));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vocabulary v;
  v.concepts.resize(cfg.vocab_size, cfg.feature_dim);
  for (Eigen::Index w = 0; w < v.concepts.rows(); ++w) {
    double norm = 0.0;
    while (norm < 1e-6) {
      for (Eigen::Index k = 0; k < v.concepts.cols(); ++k) v.concepts(w, k) = normal(rng);
      norm = v.concepts.row(w).norm();
    }
    v.concepts.row(w) /= norm;
  }
  v.probabilities = zipf_probabilities(cfg.vocab_size, cfg.zipf_exponent);
  v.frequency.assign(static_cast<std::size_t>(cfg.vocab_size), 0);
  return v;
}

std::vector<int> sample_words_excluding(const std::vector<double>& probabilities, int n,
                                        const std::vector<int>& excluded, Rng& rng) {
  const int vocab = static_cast<int>(probabilities.size());
  if (vocab < 2) throw ConfigError("sample_words: vocabulary needs at least 2 words");
  if (n < 0 || n + static_cast<int>(excluded.size()) > vocab) {
    throw ConfigError("sample_words: cannot draw " + std::to_string(n) + " distinct words from " +
                      std::to_string(vocab));
  }
  std::vector<double> weights = probabilities;
  for (int e : excluded) weights[static_cast<std::size_t>(e)] = 0.0;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::discrete_distribution<int> dist(weights.begin(), weights.end());
    const int w = dist(rng);
    out.push_back(w);
    weights[static_cast<std::size_t>(w)] = 0.0;
  }
  return out;
}

std::vector<int> sample_words(const std::vector<double>& probabilities, int n, Rng& rng) {
  return sample_words_excluding(probabilities, n, {}, rng);
}

GroundingSample generate_sample(const CorpusConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  GroundingSample s;
  const int frames = uniform_int(rng, cfg.min_frames, cfg.max_frames);
  const int n_words = uniform_int(rng, cfg.min_words, cfg.max_words);
  const int len = uniform_int(rng, ceil_div(frames, 8), ceil_div(frames, 2));
  s.gt_start = uniform_int(rng, 0, frames - len);
  s.gt_end = s.gt_start + len - 1;
  s.words = sample_words(vocab.probabilities, n_words, rng);

  std::vector<int> taken = s.words;
  auto mixture = [&](const std::vector<int>& ids) {
    RowVector m = RowVector::Zero(vocab.concepts.cols());
    for (int id : ids) m += vocab.concepts.row(id);
    return RowVector(m / static_cast<double>(ids.size()));
  };
  const RowVector target = mixture(s.words);
  const auto left_ids = sample_words_excluding(vocab.probabilities,
                                               uniform_int(rng, cfg.min_words, cfg.max_words), taken, rng);
  taken.insert(taken.end(), left_ids.begin(), left_ids.end());
  const auto right_ids = sample_words_excluding(vocab.probabilities,
                                                uniform_int(rng, cfg.min_words, cfg.max_words), taken, rng);
  const RowVector left = mixture(left_ids);
  const RowVector right = mixture(right_ids);

  std::normal_distribution<double> noise(0.0, 1.0);
  s.frames.resize(frames, cfg.feature_dim);
  for (int t = 0; t < frames; ++t) {
    const RowVector& base = t < s.gt_start ? left : (t > s.gt_end ? right : target);
    for (int k = 0; k < cfg.feature_dim; ++k) {
      // Skip the draw entirely when noiseless so sigma = 0 is exact.
      s.frames(t, k) = base(k) + (cfg.noise > 0.0 ? cfg.noise * noise(rng) : 0.0);
    }
  }
  return s;
}

std::vector<const GroundingSample*> Corpus::split(Split sp) const {
  std::vector<const GroundingSample*> out;
  for (const auto& s : samples) {
    if (s.split == sp) out.push_back(&s);
  }
  return out;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus c;
  c.config = cfg;
  c.vocab = make_vocabulary(cfg);
  c.samples.reserve(static_cast<std::size_t>(cfg.total()));
  for (int id = 0; id < cfg.total(); ++id) {
    Rng rng(mix_seed(cfg.seed ^ kSampleSalt, static_cast<std::uint64_t>(id)));
    GroundingSample s = generate_sample(cfg, c.vocab, rng);
    s.id = id;
    s.split = id < cfg.num_train ? Split::kTrain
                                 : (id < cfg.num_train + cfg.num_val ? Split::kVal : Split::kTest);
    c.samples.push_back(std::move(s));
  }
  label_rarity(c);
  return c;
}

void label_rarity(Corpus& corpus) {
  if (corpus.samples.empty()) throw InputError("label_rarity: empty corpus");
  auto& freq = corpus.vocab.frequency;
  freq.assign(static_cast<std::size_t>(corpus.config.vocab_size), 0);
  for (const auto& s : corpus.samples) {
    if (s.split != Split::kTrain) continue;
    for (int w : s.words) ++freq[static_cast<std::size_t>(w)];
  }
  for (auto& s : corpus.samples) {
    s.rare = std::any_of(s.words.begin(), s.words.end(), [&](int w) {
      return freq[static_cast<std::size_t>(w)] < corpus.config.rare_threshold;
    });
  }
}

void save_corpus(const Corpus& corpus, std::ostream& os) {
  nlohmann::json header;
  header["version"] = kCorpusVersion;
  header["config"] = corpus.config;
  header["vocab_checksum"] = corpus.vocab.checksum();
  header["num_samples"] = corpus.samples.size();

  binio::put_magic(os, kCorpusMagic);
  binio::put_u32(os, kCorpusVersion);
  binio::put_string(os, header.dump());
  binio::put_u64(os, corpus.samples.size());
  for (const auto& s : corpus.samples) {
    binio::put_u64(os, static_cast<std::uint64_t>(s.id));
    binio::put_u32(os, static_cast<std::uint32_t>(s.split));
    binio::put_u32(os, static_cast<std::uint32_t>(s.frame_count()));
    binio::put_u32(os, static_cast<std::uint32_t>(s.word_count()));
    for (int w : s.words) binio::put_u32(os, static_cast<std::uint32_t>(w));
    binio::put_u32(os, static_cast<std::uint32_t>(s.gt_start));
    binio::put_u32(os, static_cast<std::uint32_t>(s.gt_end));
    binio::put_u32(os, s.rare ? 1u : 0u);
    for (Eigen::Index i = 0; i < s.frames.size(); ++i) binio::put_f64(os, s.frames.data()[i]);
  }
}

Corpus load_corpus(std::istream& is) {
  binio::expect_magic(is, kCorpusMagic);
  const auto version = binio::get_u32(is);
  if (version != kCorpusVersion) throw InputError("unsupported corpus version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(binio::get_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("corpus header is not valid JSON: ") + e.what());
  }
  Corpus c;
  c.config = header.at("config").get<CorpusConfig>();
  c.config.validate();
  c.vocab = make_vocabulary(c.config);
  if (header.at("vocab_checksum").get<std::uint64_t>() != c.vocab.checksum()) {
    throw InputError("corpus vocabulary checksum mismatch");
  }
  const auto count = binio::get_u64(is);
  if (count != header.at("num_samples").get<std::uint64_t>()) {
    throw InputError("corpus sample count disagrees with header");
  }
  c.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    GroundingSample s;
    s.id = static_cast<int>(binio::get_u64(is));
    const auto split = binio::get_u32(is);
    if (split > 2) throw InputError("corpus record has unknown split");
    s.split = static_cast<Split>(split);
    const auto frames = binio::get_u32(is);
    const auto words = binio::get_u32(is);
    if (frames < 1 || words < 1 || frames > 100000 || words > 100000) {
      throw InputError("corpus record has invalid sizes");
    }
    for (std::uint32_t k = 0; k < words; ++k) {
      const auto w = binio::get_u32(is);
      if (w >= static_cast<std::uint32_t>(c.config.vocab_size)) throw InputError("corpus word id out of range");
      s.words.push_back(static_cast<int>(w));
    }
    s.gt_start = static_cast<int>(binio::get_u32(is));
    s.gt_end = static_cast<int>(binio::get_u32(is));
    if (s.gt_start > s.gt_end || s.gt_end >= static_cast<int>(frames)) {
      throw InputError("corpus record has invalid ground truth");
    }
    s.rare = binio::get_u32(is) != 0;
    s.frames.resize(frames, c.config.feature_dim);
    for (Eigen::Index k = 0; k < s.frames.size(); ++k) s.frames.data()[k] = binio::get_f64(is);
    c.samples.push_back(std::move(s));
  }
  // Recomputes the frequency table; flags must agree with the stored ones.
  std::vector<bool> stored;
  for (const auto& s : c.samples) stored.push_back(s.rare);
  label_rarity(c);
  for (std::size_t k = 0; k < c.samples.size(); ++k) {
    if (c.samples[k].rare != stored[k]) throw InputError("corpus rarity flags are inconsistent");
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  save_corpus(corpus, os);
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open corpus " + path.string());
  return load_corpus(is);
}

}  // namespace memground
