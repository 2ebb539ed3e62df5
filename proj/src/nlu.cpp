#include "compslu/nlu.hpp"

#include <vector>

#include "compslu/errors.hpp"

namespace compslu {

HeadKind parse_head_kind(const std::string& name) {
  if (name == "crf") return HeadKind::Crf;
  if (name == "token") return HeadKind::Token;
  throw ConfigError("unknown head kind '" + name + "' (expected crf or token)");
}

std::string to_string(HeadKind kind) { return kind == HeadKind::Crf ? "crf" : "token"; }

void NluConfig::validate() const {
  if (heads == 0 || dm % heads != 0) {
    throw ConfigError("nlu: model width " + std::to_string(dm) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (layers == 0) throw ConfigError("nlu: needs at least one layer");
  if (num_tags < 2) throw ConfigError("nlu: tag vocabulary must have at least two tags");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("nlu: dropout must lie in [0, 1)");
}

HeadDecode token_head_decode(const Tensor& emissions) {
  NoGradGuard guard;
  const auto lp = log_softmax(emissions);
  const auto n = emissions.rows(), k = emissions.cols();
  HeadDecode out;
  out.tags.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (lp.at(i, j) > lp.at(i, best)) best = j;
    }
    out.tags[i] = static_cast<int>(best);
    out.log_likelihood += lp.at(i, best);
  }
  return out;
}

HeadDecode crf_head_decode(const Tensor& emissions, const crf::CrfParams& params) {
  NoGradGuard guard;
  auto v = crf::viterbi_decode(emissions, params);
  const double ll = crf::sequence_log_likelihood(emissions, params, v.path);
  return {std::move(v.path), ll};
}

NluEncoder::NluEncoder(ParameterStore& store, const std::string& prefix, const NluConfig& config)
    : dm_(config.dm), speech_attention_(config.speech_attention) {
  for (std::size_t i = 0; i < config.layers; ++i) {
    blocks_.emplace_back(store, prefix + "/block" + std::to_string(i), config.dm, config.heads,
                         config.ff_dim, config.speech_attention);
  }
  final_norm_ = LayerNorm(store, prefix + "/final_norm", config.dm);
}

NluNet::NluNet(ParameterStore& store, const std::string& prefix, NluConfig config)
    : config_(config) {
  config_.validate();
  encoder_ = NluEncoder(store, prefix, config_);
  emission_ = Linear(store, prefix + "/emission", config_.dm, config_.num_tags);
  if (config_.head == HeadKind::Crf) {
    crf_ = crf::CrfParams::create(store, prefix + "/crf", config_.num_tags);
  }
}

Tensor NluEncoder::operator()(const Tensor& h_asr, const Tensor* speech,
                              const ForwardContext& ctx) const {
  if (!h_asr.defined() || h_asr.ndim() != 2) {
    throw ValidationError("encode_nlu: expected an N x dm matrix of decoder states");
  }
  if (h_asr.cols() != dm_) {
    throw DimensionError("encode_nlu: state width " + std::to_string(h_asr.cols()) +
                         " but nlu expects " + std::to_string(dm_));
  }
  const Tensor* memory = nullptr;
  if (speech_attention_) {
    if (speech == nullptr || !speech->defined()) {
      throw ConfigError("encode_nlu: speech attention is on but no speech states were given");
    }
    memory = speech;
  }
  auto h = ctx.apply_dropout(h_asr);
  for (const auto& block : blocks_) h = block(h, nullptr, memory, ctx);
  return final_norm_(h);
}

Tensor NluNet::head_loss(const Tensor& h_nlu, std::span<const int> gold) const {
  if (gold.size() != h_nlu.rows()) {
    throw AlignmentError("head_loss: " + std::to_string(gold.size()) + " tags for " +
                         std::to_string(h_nlu.rows()) + " positions");
  }
  for (int t : gold) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.num_tags) {
      throw VocabularyError("head_loss: tag " + std::to_string(t) + " out of range");
    }
  }
  const auto em = emissions(h_nlu);
  if (config_.head == HeadKind::Crf) return crf::nll_loss(em, crf_, gold);
  const std::vector<long> targets(gold.begin(), gold.end());
  // summed like the CRF loss so both heads optimize -log P(Y) on one scale
  return scale(softmax_cross_entropy(em, targets), static_cast<double>(targets.size()));
}

HeadDecode NluNet::head_decode(const Tensor& h_nlu) const {
  NoGradGuard guard;
  const auto em = emissions(h_nlu);
  return config_.head == HeadKind::Crf ? crf_head_decode(em, crf_) : token_head_decode(em);
}

}  // namespace compslu
