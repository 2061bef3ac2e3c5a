#include "memground/alignment.hpp"

#include "memground/errors.hpp"

namespace memground {

AlignmentParams AlignmentParams::create(ParamStore& store, Eigen::Index dim, Rng& rng) {
  AlignmentParams p;
  p.phi_video = store.add_uniform("align.phi_video", dim, dim, dim, rng);
  p.phi_query = store.add_uniform("align.phi_query", dim, dim, dim, rng);
  p.w_video = store.add_uniform("align.w_video", dim, dim, dim, rng);
  p.w_query = store.add_uniform("align.w_query", dim, dim, dim, rng);
  return p;
}

Adjacency cross_modal_adjacency(const Tensor& video, const Tensor& query, const AlignmentParams& p) {
  if (video.cols() != query.cols()) {
    throw DimensionError("cross_modal_adjacency: video " + video.shape_string() + " vs query " +
                         query.shape_string());
  }
  Tensor sim = matmul(matmul(video, p.phi_video), transpose(matmul(query, p.phi_query)));
  return {row_softmax(sim), row_softmax(transpose(sim))};
}

Aligned align(const Tensor& video, const Tensor& query, const Adjacency& adj,
              const AlignmentParams& p) {
  if (adj.frame_to_word.rows() != video.rows() || adj.frame_to_word.cols() != query.rows() ||
      adj.word_to_frame.rows() != query.rows() || adj.word_to_frame.cols() != video.rows()) {
    throw DimensionError("align: adjacency " + adj.frame_to_word.shape_string() + "/" +
                         adj.word_to_frame.shape_string() + " inconsistent with video " +
                         video.shape_string() + " and query " + query.shape_string());
  }
  return {matmul(matmul(adj.word_to_frame, video), p.w_video),
          matmul(matmul(adj.frame_to_word, query), p.w_query)};
}

}  // namespace memground
