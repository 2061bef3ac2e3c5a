#include "memground/encoders.hpp"

#include <vector>

#include "memground/errors.hpp"

namespace memground {

LstmParams LstmParams::create(ParamStore& store, const std::string& prefix, Eigen::Index in_dim,
                              Eigen::Index hidden, Rng& rng) {
  LstmParams p;
  p.w_input = store.add_uniform(prefix + ".w_input", in_dim, 4 * hidden, in_dim, rng);
  p.w_recurrent = store.add_uniform(prefix + ".w_recurrent", hidden, 4 * hidden, hidden, rng);
  p.bias = store.add_uniform(prefix + ".bias", 1, 4 * hidden, hidden, rng);
  return p;
}

EncoderParams EncoderParams::create(ParamStore& store, const EncoderDims& dims, Rng& rng) {
  if (dims.model_dim % 2 != 0) throw ConfigError("encoder model_dim must be even");
  const Eigen::Index h = dims.model_dim / 2;
  EncoderParams p;
  p.embed_table = store.add_uniform("enc.embed_table", dims.vocab_size, dims.input_dim,
                                    dims.input_dim, rng);
  p.frame_proj = store.add_uniform("enc.frame_proj", dims.raw_dim, dims.input_dim, dims.raw_dim, rng);
  for (auto [side, seq] : {std::pair{"video", &p.video}, std::pair{"query", &p.query}}) {
    const std::string base = std::string("enc.") + side;
    seq->attention = AttentionParams::create(store, base + ".attn", dims.input_dim, dims.input_dim, rng);
    seq->forward = LstmParams::create(store, base + ".lstm_fwd", dims.input_dim, h, rng);
    seq->backward = LstmParams::create(store, base + ".lstm_bwd", dims.input_dim, h, rng);
  }
  return p;
}

Tensor lstm_pass(const Tensor& x, const LstmParams& p, bool reverse) {
  const Eigen::Index steps = x.rows();
  const Eigen::Index h = p.hidden();
  if (x.cols() != p.w_input.rows()) {
    throw DimensionError("lstm_pass: input width " + std::to_string(x.cols()) +
                         " does not match weights " + p.w_input.shape_string());
  }
  // Input contributions for all steps in one product.
  Tensor gates_in = add_row(matmul(x, p.w_input), p.bias);

  std::vector<Tensor> outputs(static_cast<std::size_t>(steps));
  Tensor hidden, cell;
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    Tensor pre = row(gates_in, t);
    if (hidden.defined()) pre = add(pre, matmul(hidden, p.w_recurrent));
    Tensor in_gate = sigmoid(slice_cols(pre, 0, h));
    Tensor forget_gate = sigmoid(slice_cols(pre, h, h));
    Tensor candidate = tanh(slice_cols(pre, 2 * h, h));
    Tensor out_gate = sigmoid(slice_cols(pre, 3 * h, h));
    Tensor written = mul(in_gate, candidate);
    cell = cell.defined() ? add(mul(forget_gate, cell), written) : written;
    hidden = mul(out_gate, tanh(cell));
    outputs[static_cast<std::size_t>(t)] = hidden;
  }
  return concat_rows(outputs);
}

Tensor bilstm(const Tensor& x, const LstmParams& fwd, const LstmParams& bwd) {
  const Tensor parts[] = {lstm_pass(x, fwd, false), lstm_pass(x, bwd, true)};
  return concat_cols(parts);
}

namespace {

Tensor encode_sequence(const Tensor& x, const SequenceEncoderParams& p) {
  Tensor attended = self_attention(x, p.attention).output;
  return bilstm(attended, p.forward, p.backward);
}

}  // namespace

Tensor encode_video(const Matrix& frames, const EncoderParams& p) {
  if (frames.rows() < 1) throw InputError("encode_video: video has no frames");
  if (frames.cols() != p.frame_proj.rows()) {
    throw DimensionError("encode_video: frame width " + std::to_string(frames.cols()) +
                         " does not match projection " + p.frame_proj.shape_string());
  }
  return encode_sequence(matmul(Tensor::constant(frames), p.frame_proj), p.video);
}

Tensor encode_query(std::span<const int> words, const EncoderParams& p) {
  if (words.empty()) throw InputError("encode_query: query has no words");
  return encode_sequence(gather_rows(p.embed_table, words), p.query);
}

}  // namespace memground
