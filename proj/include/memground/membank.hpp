#pragma once

// Persistent domain-specific memories.
//
// A MemoryBank is an L x D slot matrix that survives across training
// batches. Slots are addressed by a softmax over cosine similarities and
// updated with an erase/write rule; every update is applied outside the
// differentiation tape, so stored slots carry no gradient history. Reads are
// differentiable with respect to the key only.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "memground/params.hpp"
#include "memground/tensor.hpp"

namespace memground {

enum class Domain : std::uint32_t { kVideo = 0, kQuery = 1 };
enum class Mode { kTraining, kEvaluation };

std::string to_string(Domain d);

class MemoryBank {
 public:
  // Slots initialised uniformly in [-1/sqrt(D), 1/sqrt(D)] from `seed`.
  MemoryBank(Domain domain, Eigen::Index slots, Eigen::Index dim, std::uint64_t seed);
  static MemoryBank from_slots(Domain domain, Matrix slots, std::uint64_t write_count,
                               std::uint64_t seed);

  Domain domain() const { return domain_; }
  Eigen::Index slot_count() const { return slots_.rows(); }
  Eigen::Index dim() const { return slots_.cols(); }
  const Matrix& slots() const { return slots_; }
  std::uint64_t write_count() const { return write_count_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t skipped_updates() const { return skipped_updates_; }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  // softmax_l cos(key, m_l). A degenerate key yields uniform weights.
  RowVector addressing(const RowVector& key) const;

  // m_l <- w_l u + m_l * (1 - w_l e) for every slot. Non-finite u/e skip the
  // update and bump skipped_updates(). Throws ModeError in evaluation mode.
  void update(const RowVector& weights, const RowVector& write_value, const RowVector& erase);

  // sum_l w_l m_l with w = addressing(key).
  RowVector read(const RowVector& key) const;

  // Snapshot container; see README for the byte layout.
  void save(std::ostream& os) const;
  static MemoryBank load(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);

  friend bool operator==(const MemoryBank& a, const MemoryBank& b);

 private:
  MemoryBank() = default;

  Domain domain_ = Domain::kVideo;
  Matrix slots_;
  std::uint64_t write_count_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t skipped_updates_ = 0;
  Mode mode_ = Mode::kTraining;
};

// Differentiable addressing of key rows (P x D) against constant slots:
// P x L, each row a distribution.
Tensor address(const Tensor& keys, const Matrix& slots);
// Differentiable read: address(keys, slots) * slots, P x D.
Tensor read_memory(const Tensor& keys, const Matrix& slots);

// One write: addressing key, write value u, erase value e (all 1 x D).
struct WriteItem {
  RowVector key;
  RowVector value;
  RowVector erase;
};

// Two sequential updates, native feature first and aligned cross-modal
// partner second; the second addressing sees the intermediate state.
// Video domain: (v_t, q_hat_t). Query domain: (q_n, v_hat_n).
// Throws ModeError in evaluation mode.
void write_pair(MemoryBank& bank, const WriteItem& native, const WriteItem& aligned);
void write_pair_video(MemoryBank& bank, const WriteItem& frame, const WriteItem& query_per_frame);
void write_pair_query(MemoryBank& bank, const WriteItem& word, const WriteItem& video_per_word);

// Linear maps turning one feature role into read key, write key, erase
// value (through a sigmoid) and write value. All D x D.
struct RoleProjection {
  Tensor read_key, write_key, erase, write_value;

  static RoleProjection create(ParamStore& store, const std::string& prefix, Eigen::Index dim,
                               Rng& rng);
};

struct ProjectedRole {
  Tensor read_key;     // P x D
  Tensor write_key;    // P x D
  Tensor erase;        // P x D, in (0,1)
  Tensor write_value;  // P x D

  WriteItem write_item(Eigen::Index pos) const;
};

ProjectedRole project(const Tensor& features, const RoleProjection& p);

struct MemoryProjections {
  RoleProjection frame;            // v_t
  RoleProjection query_per_frame;  // q_hat_t
  RoleProjection word;             // q_n
  RoleProjection video_per_word;   // v_hat_n

  static MemoryProjections create(ParamStore& store, Eigen::Index dim, Rng& rng);
};

struct MemoryConfig {
  Eigen::Index dim = 32;
  Eigen::Index video_slots = 64;
  Eigen::Index query_slots = 64;
  // One bank per domain shared by both roles; otherwise each role owns a bank.
  bool shared = true;
  std::uint64_t seed = 7;
};

struct EnhanceInputs {
  Tensor video;            // V, T x D
  Tensor query_per_frame;  // Q_hat, T x D
  Tensor query;            // Q, N x D
  Tensor video_per_word;   // V_hat, N x D
};

struct Enhanced {
  Tensor video;            // (v_t)'
  Tensor query_per_frame;  // (q_hat_t)'
  Tensor query;            // (q_n)'
  Tensor video_per_word;   // (v_hat_n)'
};

// Both domains' banks plus their projections.
class MemorySystem {
 public:
  MemorySystem(const MemoryConfig& cfg, ParamStore& store, Rng& rng);

  void set_mode(Mode m);
  Mode mode() const { return mode_; }
  const MemoryConfig& config() const { return cfg_; }

  // Training: per position, write the pair then read both roles; frames in
  // ascending t, then words in ascending n. Evaluation: read only.
  Enhanced enhance(const EnhanceInputs& in);

  const MemoryProjections& projections() const { return proj_; }

  // Banks in canonical order: shared -> [video, query];
  // separate -> [video.frame, video.query_per_frame, query.word, query.video_per_word].
  std::vector<MemoryBank>& banks() { return banks_; }
  const std::vector<MemoryBank>& banks() const { return banks_; }
  std::vector<std::string> bank_names() const;

 private:
  MemoryBank& bank_for(Domain d, bool aligned_role);

  MemoryConfig cfg_;
  MemoryProjections proj_;
  std::vector<MemoryBank> banks_;
  Mode mode_ = Mode::kTraining;
};

}  // namespace memground
