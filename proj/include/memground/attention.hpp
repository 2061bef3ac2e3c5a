#pragma once

#include <string>

#include "memground/params.hpp"
#include "memground/tensor.hpp"

namespace memground {

// Query/key/value projections of one single-head dot-product attention unit.
struct AttentionParams {
  Tensor wq, wk, wv;

  static AttentionParams create(ParamStore& store, const std::string& prefix, Eigen::Index in_dim,
                                Eigen::Index width, Rng& rng);
  Eigen::Index width() const { return wq.cols(); }
};

struct AttentionResult {
  Tensor output;   // S x width
  Tensor weights;  // S x R, row-stochastic
};

// softmax((Xq Wq)(Xk Wk)^T / sqrt(width)) (Xv Wv), where Xq is S x in and
// Xk, Xv are R x in.
AttentionResult attend(const Tensor& query_src, const Tensor& key_src, const Tensor& value_src,
                       const AttentionParams& p);

inline AttentionResult self_attention(const Tensor& x, const AttentionParams& p) {
  return attend(x, x, x, p);
}

}  // namespace memground
