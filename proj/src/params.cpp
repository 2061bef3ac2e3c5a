#include "memground/params.hpp"

#include <cmath>

#include "memground/errors.hpp"

namespace memground {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Tensor ParamStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor t = Tensor::parameter(std::move(init));
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                               Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return add(name, uniform_matrix(rows, cols, bound, rng));
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back(t);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

}  // namespace memground
