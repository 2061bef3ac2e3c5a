#pragma once

#include "memground/params.hpp"
#include "memground/tensor.hpp"

namespace memground {

// Cross-modal graph alignment weights. All four maps are D x D.
struct AlignmentParams {
  Tensor phi_video;  // projects frame features before the similarity
  Tensor phi_query;  // projects word features before the similarity
  Tensor w_video;    // applied to the frame aggregate in V_hat
  Tensor w_query;    // applied to the word aggregate in Q_hat

  static AlignmentParams create(ParamStore& store, Eigen::Index dim, Rng& rng);
};

struct Adjacency {
  Tensor frame_to_word;  // A1, T x N, rows sum to 1 over words
  Tensor word_to_frame;  // A2, N x T, rows sum to 1 over frames
};

struct Aligned {
  Tensor video_per_word;   // V_hat, N x D
  Tensor query_per_frame;  // Q_hat, T x D
};

// a = phi1(V) phi2(Q)^T computed once; A1 = softmax over words of a,
// A2 = softmax over frames of a^T.
Adjacency cross_modal_adjacency(const Tensor& video, const Tensor& query, const AlignmentParams& p);

// V_hat = A2 V W_V, Q_hat = A1 Q W_Q.
Aligned align(const Tensor& video, const Tensor& query, const Adjacency& adj,
              const AlignmentParams& p);

}  // namespace memground
