#pragma once

#include <string>
#include <vector>

#include "compslu/crf.hpp"
#include "compslu/nn.hpp"
#include "compslu/tagging.hpp"
#include "compslu/tensor.hpp"

namespace compslu {

enum class HeadKind { Crf, Token };

HeadKind parse_head_kind(const std::string& name);
std::string to_string(HeadKind kind);

struct NluConfig {
  std::size_t layers = 1;
  std::size_t dm = 32;
  std::size_t heads = 4;
  std::size_t ff_dim = 64;
  double dropout = 0.1;
  bool speech_attention = true;
  HeadKind head = HeadKind::Crf;
  std::size_t num_tags = 0;  // |L''|

  void validate() const;
};

struct HeadDecode {
  TagSequence tags;
  double log_likelihood = 0.0;
};

/// Per-position argmax; the score is the summed log-softmax of the chosen
/// tags (unnormalized by length).
HeadDecode token_head_decode(const Tensor& emissions);
HeadDecode crf_head_decode(const Tensor& emissions, const crf::CrfParams& params);

/// Transformer encoder over decoder states with optional cross-attention to
/// speech states. No positional encoding: the decoder states already carry
/// position.
class NluEncoder {
 public:
  NluEncoder() = default;
  NluEncoder(ParameterStore& store, const std::string& prefix, const NluConfig& config);

  /// `speech` is required iff speech attention is on; ignored otherwise.
  Tensor operator()(const Tensor& h_asr, const Tensor* speech, const ForwardContext& ctx) const;

 private:
  std::size_t dm_ = 0;
  bool speech_attention_ = false;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
};

/// NluEncoder followed by a linear emission layer and a CRF or per-position
/// softmax head.
class NluNet {
 public:
  NluNet() = default;
  NluNet(ParameterStore& store, const std::string& prefix, NluConfig config);

  /// `speech` is required iff speech attention is on; ignored otherwise.
  Tensor encode(const Tensor& h_asr, const Tensor* speech, const ForwardContext& ctx = {}) const {
    return encoder_(h_asr, speech, ctx);
  }
  Tensor emissions(const Tensor& h_nlu) const { return emission_(h_nlu); }
  /// -log P(gold) summed over positions, for either head.
  Tensor head_loss(const Tensor& h_nlu, std::span<const int> gold) const;
  HeadDecode head_decode(const Tensor& h_nlu) const;

  const NluConfig& config() const { return config_; }
  const crf::CrfParams& crf_params() const { return crf_; }

 private:
  NluConfig config_;
  NluEncoder encoder_;
  Linear emission_;
  crf::CrfParams crf_;
};

}  // namespace compslu
