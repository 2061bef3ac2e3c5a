#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "memground/tensor.hpp"

namespace memground {

using Rng = std::mt19937_64;

// Ordered registry of named trainable tensors. Insertion order is the
// canonical order used by the optimizer and checkpoints.
class ParamStore {
 public:
  Tensor add(const std::string& name, Matrix init);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                     Eigen::Index fan_in, Rng& rng);

  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// splitmix64 finaliser over (base, salt); used to derive independent
// per-component and per-sample seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

}  // namespace memground
