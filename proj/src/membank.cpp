#include "memground/membank.hpp"

#include <cmath>
#include <fstream>

#include "memground/binary_io.hpp"
#include "memground/errors.hpp"

namespace memground {

namespace {

constexpr std::string_view kSnapshotMagic = "MGMEMSNP";
constexpr std::uint32_t kSnapshotVersion = 1;

}  // namespace

std::string to_string(Domain d) { return d == Domain::kVideo ? "video" : "query"; }

MemoryBank::MemoryBank(Domain domain, Eigen::Index slots, Eigen::Index dim, std::uint64_t seed)
    : domain_(domain), seed_(seed) {
  if (slots < 1 || dim < 1) throw ConfigError("memory bank needs at least one slot and one feature");
  Rng rng(seed);
  slots_ = uniform_matrix(slots, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
}

MemoryBank MemoryBank::from_slots(Domain domain, Matrix slots, std::uint64_t write_count,
                                  std::uint64_t seed) {
  if (slots.rows() < 1 || slots.cols() < 1) throw ConfigError("memory bank needs a nonempty slot matrix");
  MemoryBank b;
  b.domain_ = domain;
  b.slots_ = std::move(slots);
  b.write_count_ = write_count;
  b.seed_ = seed;
  return b;
}

RowVector MemoryBank::addressing(const RowVector& key) const {
  if (key.size() != dim()) {
    throw DimensionError("addressing: key width " + std::to_string(key.size()) +
                         " vs bank width " + std::to_string(dim()));
  }
  if (!key.allFinite()) throw NumericError("addressing: non-finite key");
  RowVector sims(slot_count());
  for (Eigen::Index l = 0; l < slot_count(); ++l) {
    sims(l) = cosine_sim(std::span<const double>(key.data(), static_cast<std::size_t>(key.size())),
                         std::span<const double>(slots_.row(l).data(), static_cast<std::size_t>(dim())));
  }
  const double m = sims.maxCoeff();
  RowVector w = (sims.array() - m).exp().matrix();
  return w / w.sum();
}

void MemoryBank::update(const RowVector& weights, const RowVector& write_value, const RowVector& erase) {
  if (mode_ != Mode::kTraining) throw ModeError("memory update attempted in evaluation mode");
  if (weights.size() != slot_count() || write_value.size() != dim() || erase.size() != dim()) {
    throw DimensionError("update: weights/value/erase sizes do not match the bank");
  }
  if (!write_value.allFinite() || !erase.allFinite() || !weights.allFinite()) {
    ++skipped_updates_;
    return;
  }
  // Row l is scaled by (1 - w_l e) then shifted by w_l u.
  const Matrix keep = Matrix::Ones(slot_count(), dim()) - weights.transpose() * erase;
  slots_ = slots_.cwiseProduct(keep) + weights.transpose() * write_value;
  ++write_count_;
}

RowVector MemoryBank::read(const RowVector& key) const { return addressing(key) * slots_; }

void MemoryBank::save(std::ostream& os) const {
  binio::put_magic(os, kSnapshotMagic);
  binio::put_u32(os, kSnapshotVersion);
  binio::put_u32(os, static_cast<std::uint32_t>(domain_));
  binio::put_u64(os, static_cast<std::uint64_t>(slot_count()));
  binio::put_u64(os, static_cast<std::uint64_t>(dim()));
  binio::put_u64(os, write_count_);
  binio::put_u64(os, seed_);
  for (Eigen::Index i = 0; i < slots_.size(); ++i) binio::put_f64(os, slots_.data()[i]);
}

MemoryBank MemoryBank::load(std::istream& is) {
  binio::expect_magic(is, kSnapshotMagic);
  const auto version = binio::get_u32(is);
  if (version != kSnapshotVersion) {
    throw InputError("unsupported memory snapshot version " + std::to_string(version));
  }
  const auto domain = binio::get_u32(is);
  if (domain > 1) throw InputError("memory snapshot has unknown domain tag");
  const auto l = binio::get_u64(is);
  const auto d = binio::get_u64(is);
  if (l == 0 || d == 0 || l > (1u << 20) || d > (1u << 20)) {
    throw InputError("memory snapshot has invalid shape");
  }
  const auto writes = binio::get_u64(is);
  const auto seed = binio::get_u64(is);
  Matrix slots(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < slots.size(); ++i) slots.data()[i] = binio::get_f64(is);
  return from_slots(static_cast<Domain>(domain), std::move(slots), writes, seed);
}

void MemoryBank::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  save(os);
}

MemoryBank MemoryBank::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open memory snapshot " + path.string());
  return load(is);
}

bool operator==(const MemoryBank& a, const MemoryBank& b) {
  return a.domain_ == b.domain_ && a.write_count_ == b.write_count_ && a.seed_ == b.seed_ &&
         a.slots_.rows() == b.slots_.rows() && a.slots_.cols() == b.slots_.cols() &&
         std::memcmp(a.slots_.data(), b.slots_.data(),
                     sizeof(double) * static_cast<std::size_t>(a.slots_.size())) == 0;
}

// ---------------------------------------------------------------------------

Tensor address(const Tensor& keys, const Matrix& slots) {
  return row_softmax(cosine_rows(keys, slots));
}

Tensor read_memory(const Tensor& keys, const Matrix& slots) {
  return slot_read(keys, slots);
}

void write_pair(MemoryBank& bank, const WriteItem& native, const WriteItem& aligned) {
  if (bank.mode() != Mode::kTraining) throw ModeError("memory write attempted in evaluation mode");
  bank.update(bank.addressing(native.key), native.value, native.erase);
  bank.update(bank.addressing(aligned.key), aligned.value, aligned.erase);
}

void write_pair_video(MemoryBank& bank, const WriteItem& frame, const WriteItem& query_per_frame) {
  write_pair(bank, frame, query_per_frame);
}

void write_pair_query(MemoryBank& bank, const WriteItem& word, const WriteItem& video_per_word) {
  write_pair(bank, word, video_per_word);
}

RoleProjection RoleProjection::create(ParamStore& store, const std::string& prefix, Eigen::Index dim,
                                      Rng& rng) {
  RoleProjection p;
  p.read_key = store.add_uniform(prefix + ".read_key", dim, dim, dim, rng);
  p.write_key = store.add_uniform(prefix + ".write_key", dim, dim, dim, rng);
  p.erase = store.add_uniform(prefix + ".erase", dim, dim, dim, rng);
  p.write_value = store.add_uniform(prefix + ".write_value", dim, dim, dim, rng);
  return p;
}

WriteItem ProjectedRole::write_item(Eigen::Index pos) const {
  return {write_key.value().row(pos), write_value.value().row(pos), erase.value().row(pos)};
}

ProjectedRole project(const Tensor& features, const RoleProjection& p) {
  return {matmul(features, p.read_key), matmul(features, p.write_key),
          sigmoid(matmul(features, p.erase)), matmul(features, p.write_value)};
}

MemoryProjections MemoryProjections::create(ParamStore& store, Eigen::Index dim, Rng& rng) {
  MemoryProjections p;
  p.frame = RoleProjection::create(store, "mem.video.frame", dim, rng);
  p.query_per_frame = RoleProjection::create(store, "mem.video.query_per_frame", dim, rng);
  p.word = RoleProjection::create(store, "mem.query.word", dim, rng);
  p.video_per_word = RoleProjection::create(store, "mem.query.video_per_word", dim, rng);
  return p;
}

// ---------------------------------------------------------------------------

MemorySystem::MemorySystem(const MemoryConfig& cfg, ParamStore& store, Rng& rng)
    : cfg_(cfg), proj_(MemoryProjections::create(store, cfg.dim, rng)) {
  if (cfg.shared) {
    banks_.emplace_back(Domain::kVideo, cfg.video_slots, cfg.dim, mix_seed(cfg.seed, 0));
    banks_.emplace_back(Domain::kQuery, cfg.query_slots, cfg.dim, mix_seed(cfg.seed, 1));
  } else {
    banks_.emplace_back(Domain::kVideo, cfg.video_slots, cfg.dim, mix_seed(cfg.seed, 0));
    banks_.emplace_back(Domain::kVideo, cfg.video_slots, cfg.dim, mix_seed(cfg.seed, 2));
    banks_.emplace_back(Domain::kQuery, cfg.query_slots, cfg.dim, mix_seed(cfg.seed, 1));
    banks_.emplace_back(Domain::kQuery, cfg.query_slots, cfg.dim, mix_seed(cfg.seed, 3));
  }
}

std::vector<std::string> MemorySystem::bank_names() const {
  if (cfg_.shared) return {"video", "query"};
  return {"video.frame", "video.query_per_frame", "query.word", "query.video_per_word"};
}

void MemorySystem::set_mode(Mode m) {
  mode_ = m;
  for (auto& b : banks_) b.set_mode(m);
}

MemoryBank& MemorySystem::bank_for(Domain d, bool aligned_role) {
  const std::size_t base = d == Domain::kVideo ? 0 : (cfg_.shared ? 1 : 2);
  return banks_[base + ((!cfg_.shared && aligned_role) ? 1 : 0)];
}

Enhanced MemorySystem::enhance(const EnhanceInputs& in) {
  const Eigen::Index t_len = in.video.rows();
  const Eigen::Index n_len = in.query.rows();
  if (in.query_per_frame.rows() != t_len || in.video_per_word.rows() != n_len) {
    throw DimensionError("enhance: aligned features do not match sequence lengths");
  }
  for (const Tensor* t : {&in.video, &in.query_per_frame, &in.query, &in.video_per_word}) {
    if (t->cols() != cfg_.dim) {
      throw DimensionError("enhance: feature " + t->shape_string() + " vs memory width " +
                           std::to_string(cfg_.dim));
    }
  }

  const ProjectedRole frame = project(in.video, proj_.frame);
  const ProjectedRole qpf = project(in.query_per_frame, proj_.query_per_frame);
  const ProjectedRole word = project(in.query, proj_.word);
  const ProjectedRole vpw = project(in.video_per_word, proj_.video_per_word);

  MemoryBank& video_native = bank_for(Domain::kVideo, false);
  MemoryBank& video_aligned = bank_for(Domain::kVideo, true);
  MemoryBank& query_native = bank_for(Domain::kQuery, false);
  MemoryBank& query_aligned = bank_for(Domain::kQuery, true);

  if (mode_ == Mode::kEvaluation) {
    return {read_memory(frame.read_key, video_native.slots()),
            read_memory(qpf.read_key, video_aligned.slots()),
            read_memory(word.read_key, query_native.slots()),
            read_memory(vpw.read_key, query_aligned.slots())};
  }

  auto run_domain = [](Eigen::Index len, const ProjectedRole& native, const ProjectedRole& aligned,
                       MemoryBank& native_bank, MemoryBank& aligned_bank,
                       std::vector<Tensor>& native_reads, std::vector<Tensor>& aligned_reads) {
    for (Eigen::Index p = 0; p < len; ++p) {
      if (&native_bank == &aligned_bank) {
        write_pair(native_bank, native.write_item(p), aligned.write_item(p));
      } else {
        const WriteItem a = native.write_item(p), b = aligned.write_item(p);
        native_bank.update(native_bank.addressing(a.key), a.value, a.erase);
        aligned_bank.update(aligned_bank.addressing(b.key), b.value, b.erase);
      }
      native_reads.push_back(read_memory(row(native.read_key, p), native_bank.slots()));
      aligned_reads.push_back(read_memory(row(aligned.read_key, p), aligned_bank.slots()));
    }
  };

  std::vector<Tensor> v_reads, qpf_reads, q_reads, vpw_reads;
  run_domain(t_len, frame, qpf, video_native, video_aligned, v_reads, qpf_reads);
  run_domain(n_len, word, vpw, query_native, query_aligned, q_reads, vpw_reads);
  return {concat_rows(v_reads), concat_rows(qpf_reads), concat_rows(q_reads), concat_rows(vpw_reads)};
}

}  // namespace memground
