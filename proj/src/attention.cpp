#include "memground/attention.hpp"

#include <cmath>

namespace memground {

AttentionParams AttentionParams::create(ParamStore& store, const std::string& prefix,
                                        Eigen::Index in_dim, Eigen::Index width, Rng& rng) {
  AttentionParams p;
  p.wq = store.add_uniform(prefix + ".wq", in_dim, width, in_dim, rng);
  p.wk = store.add_uniform(prefix + ".wk", in_dim, width, in_dim, rng);
  p.wv = store.add_uniform(prefix + ".wv", in_dim, width, in_dim, rng);
  return p;
}

AttentionResult attend(const Tensor& query_src, const Tensor& key_src, const Tensor& value_src,
                       const AttentionParams& p) {
  Tensor q = matmul(query_src, p.wq);
  Tensor k = matmul(key_src, p.wk);
  Tensor v = matmul(value_src, p.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p.width()));
  Tensor w = row_softmax(scale(matmul(q, transpose(k)), inv_sqrt));
  return {matmul(w, v), w};
}

}  // namespace memground
