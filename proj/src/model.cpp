#include "memground/model.hpp"

#include "memground/errors.hpp"

namespace memground {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (encoder.vocab_size < 1 || encoder.raw_dim < 1 || encoder.input_dim < 1) fail("dims must be positive");
  if (encoder.model_dim < 2 || encoder.model_dim % 2 != 0) fail("model_dim must be positive and even");
  if (latent_dim < 1 || head_hidden < 1) fail("latent_dim and head_hidden must be positive");
  if (memory && (video_slots < 1 || query_slots < 1)) fail("memory slot counts must be positive");
  if (loss.boundary < 0 || loss.confidence < 0 || loss.iou < 0) fail("loss weights must be nonnegative");
}

GroundingModel::GroundingModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(cfg.seed, 0x6d6f64656cULL));
  const Eigen::Index d = cfg.encoder.model_dim;
  encoder_ = EncoderParams::create(params_, cfg.encoder, rng);
  alignment_ = AlignmentParams::create(params_, d, rng);
  if (cfg.memory) {
    MemoryConfig mc;
    mc.dim = d;
    mc.video_slots = cfg.video_slots;
    mc.query_slots = cfg.query_slots;
    mc.shared = cfg.shared_memory;
    mc.seed = mix_seed(cfg.seed, 0x6d656dULL);
    memory_ = std::make_unique<MemorySystem>(mc, params_, rng);
  }
  fusion_cfg_.dim = d;
  fusion_cfg_.latent = cfg.latent_dim;
  fusion_cfg_.mode = cfg.fusion;
  fusion_cfg_.wiring = cfg.calibration;
  fusion_ = FusionParams::create(params_, fusion_cfg_, rng);
  heads_ = HeadParams::create(params_, fusion_cfg_.output_width(), cfg.head_hidden, rng);
}

void GroundingModel::set_mode(Mode m) {
  mode_ = m;
  if (memory_) memory_->set_mode(m);
}

ForwardTrace GroundingModel::forward(const GroundingSample& sample) {
  ForwardTrace tr;
  tr.video = encode_video(sample.frames, encoder_);
  tr.query = encode_query(sample.words, encoder_);
  tr.adjacency = cross_modal_adjacency(tr.video, tr.query, alignment_);
  tr.aligned = align(tr.video, tr.query, tr.adjacency, alignment_);
  if (memory_) {
    tr.enhanced = memory_->enhance(
        {tr.video, tr.aligned.query_per_frame, tr.query, tr.aligned.video_per_word});
    tr.video_tilde = build_tilde(tr.enhanced->video, tr.enhanced->query_per_frame);
    tr.query_tilde = build_tilde(tr.enhanced->query, tr.enhanced->video_per_word);
  } else {
    tr.video_tilde = build_tilde(tr.video, tr.aligned.query_per_frame);
    tr.query_tilde = build_tilde(tr.query, tr.aligned.video_per_word);
  }
  tr.fusion = heterogeneous_attention(tr.video_tilde, tr.query_tilde, tr.video, fusion_, fusion_cfg_);
  tr.heads = heads_forward(tr.fusion.features, heads_);
  return tr;
}

LossBreakdown GroundingModel::loss(const GroundingSample& sample) {
  const FrameTargets targets = make_targets(sample.frame_count(), sample.gt_start, sample.gt_end);
  return total_loss(forward(sample).heads, targets, cfg_.loss);
}

PredictionSet GroundingModel::predict(const GroundingSample& sample, std::size_t top_n) {
  if (mode_ != Mode::kEvaluation) throw ModeError("predict requires evaluation mode");
  NoGradGuard guard;
  const HeadOutputs h = forward(sample).heads;
  return infer_top_n(h.offsets.value(), h.confidence_logits.value(), h.iou.value(), top_n);
}

}  // namespace memground
