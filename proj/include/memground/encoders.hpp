#pragma once

#include <span>
#include <string>

#include "memground/attention.hpp"
#include "memground/params.hpp"
#include "memground/tensor.hpp"

namespace memground {

struct EncoderDims {
  Eigen::Index vocab_size = 200;
  Eigen::Index raw_dim = 32;    // synthetic frame feature width
  Eigen::Index input_dim = 32;  // embedding / frame projection width
  Eigen::Index model_dim = 32;  // D; each LSTM direction uses D/2
};

// One LSTM direction. Gate blocks are laid out [input, forget, cell, output].
struct LstmParams {
  Tensor w_input;      // in x 4H
  Tensor w_recurrent;  // H x 4H
  Tensor bias;         // 1 x 4H

  static LstmParams create(ParamStore& store, const std::string& prefix, Eigen::Index in_dim,
                           Eigen::Index hidden, Rng& rng);
  Eigen::Index hidden() const { return w_recurrent.rows(); }
};

struct SequenceEncoderParams {
  AttentionParams attention;
  LstmParams forward;
  LstmParams backward;
};

struct EncoderParams {
  Tensor embed_table;  // vocab x D_in
  Tensor frame_proj;   // D_raw x D_in
  SequenceEncoderParams video;
  SequenceEncoderParams query;

  static EncoderParams create(ParamStore& store, const EncoderDims& dims, Rng& rng);
};

// Runs one LSTM direction over the rows of x (S x in) from zero state;
// returns the S x H hidden states in position order.
Tensor lstm_pass(const Tensor& x, const LstmParams& p, bool reverse);

// Per-position concatenation [forward h_t ; backward h_t], S x 2H.
Tensor bilstm(const Tensor& x, const LstmParams& fwd, const LstmParams& bwd);

// frames (T x D_raw) -> projection -> self-attention -> BiLSTM -> T x D.
Tensor encode_video(const Matrix& frames, const EncoderParams& p);
// word ids -> embedding -> self-attention -> BiLSTM -> N x D.
// Throws InputError for ids outside the vocabulary.
Tensor encode_query(std::span<const int> words, const EncoderParams& p);

}  // namespace memground
