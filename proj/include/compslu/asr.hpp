#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "compslu/nn.hpp"
#include "compslu/tensor.hpp"

namespace compslu {

using TokenIds = std::vector<long>;

/// Token inventory shared by every decoder. Layout: 0 = BOS, 1 = EOS, then
/// plain subtokens, then entity markers in a reserved tail so that a
/// transcript-only decoder can use the prefix [0, num_plain()).
class Vocabulary {
 public:
  static constexpr long kBos = 0;
  static constexpr long kEos = 1;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> plain, std::vector<std::string> markers);

  /// One token per line; markers are recognized by their bracket form.
  static Vocabulary read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_plain() const { return num_plain_; }
  bool contains(std::string_view token) const;
  long id(std::string_view token) const;  // throws VocabularyError
  const std::string& token(long id) const;

  TokenIds encode(std::span<const std::string> tokens) const;
  /// Drops BOS/EOS.
  std::vector<std::string> decode(std::span<const long> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::size_t num_plain_ = 2;
  std::unordered_map<std::string, long> index_;
};

struct SpeechEncoderConfig {
  std::size_t input_dim = 16;
  std::size_t layers = 2;
  std::size_t dm = 32;
  std::size_t heads = 4;
  std::size_t ff_dim = 64;
  double dropout = 0.1;
  bool positional_encoding = true;

  void validate() const;
};

struct DecoderConfig {
  std::size_t layers = 1;
  std::size_t dm = 32;
  std::size_t heads = 4;
  std::size_t ff_dim = 64;
  double dropout = 0.1;
  std::size_t vocab_size = 0;       // output classes
  std::size_t max_decode_length = 40;  // emitted tokens, EOS included

  void validate() const;
};

class SpeechEncoder {
 public:
  SpeechEncoder() = default;
  SpeechEncoder(ParameterStore& store, const std::string& prefix, SpeechEncoderConfig config);

  /// X is T x input_dim; returns T x dm.
  Tensor encode(const Tensor& frames, const ForwardContext& ctx = {}) const;
  const SpeechEncoderConfig& config() const { return config_; }

 private:
  SpeechEncoderConfig config_;
  Linear input_proj_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
};

struct DecodeStep {
  std::vector<double> hidden;     // dm, state at the last prefix position
  std::vector<double> log_probs;  // vocab_size
};

/// Autoregressive transformer decoder with cross-attention to an encoder
/// memory. Row i of `forward` is the state after consuming prefix[i].
class TokenDecoder {
 public:
  TokenDecoder() = default;
  TokenDecoder(ParameterStore& store, const std::string& prefix, DecoderConfig config);

  struct Output {
    Tensor hidden;  // n x dm
    Tensor logits;  // n x vocab
  };
  Output forward(const Tensor& memory, std::span<const long> prefix,
                 const ForwardContext& ctx = {}) const;

  DecodeStep decode_step(const Tensor& memory, std::span<const long> prefix) const;

  /// Mean cross-entropy of BOS-started, EOS-terminated `target` under
  /// teacher forcing.
  Tensor teacher_forced_nll(const Tensor& memory, std::span<const long> target,
                            const ForwardContext& ctx = {}) const;

  /// States for `tokens` (no BOS/EOS), one row per token: N x dm.
  Tensor force_decode(const Tensor& memory, std::span<const long> tokens,
                      const ForwardContext& ctx = {}) const;

  const DecoderConfig& config() const { return config_; }

 private:
  void check_ids(std::span<const long> ids) const;

  DecoderConfig config_;
  Embedding embed_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
  Linear out_proj_;
};

struct Hypothesis {
  TokenIds tokens{Vocabulary::kBos};  // BOS + emitted tokens, EOS excluded
  double log_prob = 0.0;
  std::vector<std::vector<double>> hidden_trace;  // one state per emitted non-EOS token
  std::vector<double> entropies;                  // per decoding step
  bool finished = false;
  bool ended_with_eos = false;

  /// Emitted tokens without BOS.
  TokenIds output() const { return TokenIds(tokens.begin() + 1, tokens.end()); }
  /// Emitted length including EOS when present.
  std::size_t length() const { return tokens.size() - 1 + (ended_with_eos ? 1 : 0); }
  Tensor trace_tensor(std::size_t dm) const;
};

struct BeamConfig {
  std::size_t beam = 5;
  double length_penalty = 0.0;
};

double ranking_score(const Hypothesis& h, double length_penalty);

/// Returns finished hypotheses ranked best first. BOS is never emitted.
std::vector<Hypothesis> beam_search(const TokenDecoder& decoder, const Tensor& memory,
                                    const BeamConfig& config);

}  // namespace compslu
