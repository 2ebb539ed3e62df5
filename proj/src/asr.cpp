#include "compslu/asr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "compslu/errors.hpp"
#include "compslu/tagging.hpp"

namespace compslu {

namespace {

constexpr std::string_view kBosSymbol = "[bos]";
constexpr std::string_view kEosSymbol = "[eos]";

void check_width(std::size_t dm, std::size_t heads, std::size_t layers, double dropout,
                 const char* what) {
  if (heads == 0 || dm % heads != 0) {
    throw ConfigError(std::string(what) + ": model width " + std::to_string(dm) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (layers == 0) throw ConfigError(std::string(what) + ": needs at least one layer");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError(std::string(what) + ": dropout must lie in [0, 1)");
  }
}

double entropy_of(std::span<const double> log_probs) {
  double h = 0.0;
  for (double lp : log_probs) {
    if (std::isfinite(lp)) h -= std::exp(lp) * lp;
  }
  return h;
}

}  // namespace

// --- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> plain, std::vector<std::string> markers) {
  tokens_.emplace_back(kBosSymbol);
  tokens_.emplace_back(kEosSymbol);
  for (auto& t : plain) {
    if (is_marker(t)) throw ValidationError("vocabulary: marker '" + t + "' listed as plain");
    tokens_.push_back(std::move(t));
  }
  num_plain_ = tokens_.size();
  for (auto& m : markers) {
    if (!is_marker(m)) throw ValidationError("vocabulary: '" + m + "' is not a marker");
    tokens_.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ValidationError("vocabulary: empty token");
    if (!index_.emplace(tokens_[i], static_cast<long>(i)).second) {
      throw ValidationError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::string> plain, markers;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    (is_marker(line) ? markers : plain).push_back(line);
  }
  return Vocabulary(std::move(plain), std::move(markers));
}

void Vocabulary::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

long Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) throw VocabularyError("token '" + std::string(token) + "' is not in the vocabulary");
  return it->second;
}

const std::string& Vocabulary::token(long id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " out of range [0, " +
                          std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenIds Vocabulary::encode(std::span<const std::string> tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const long> ids) const {
  std::vector<std::string> out;
  for (long id : ids) {
    if (id == kBos || id == kEos) continue;
    out.push_back(token(id));
  }
  return out;
}

// --- configs ------------------------------------------------------------------

void SpeechEncoderConfig::validate() const {
  check_width(dm, heads, layers, dropout, "speech encoder");
  if (input_dim == 0) throw ConfigError("speech encoder: input dimension must be positive");
}

void DecoderConfig::validate() const {
  check_width(dm, heads, layers, dropout, "decoder");
  if (vocab_size < 3) throw ConfigError("decoder: vocabulary needs BOS, EOS and one token");
  if (max_decode_length < 2) throw ConfigError("decoder: max decode length must be at least 2");
}

// --- SpeechEncoder ----------------------------------------------------------

SpeechEncoder::SpeechEncoder(ParameterStore& store, const std::string& prefix,
                             SpeechEncoderConfig config)
    : config_(config) {
  config_.validate();
  input_proj_ = Linear(store, prefix + "/input", config_.input_dim, config_.dm);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    blocks_.emplace_back(store, prefix + "/block" + std::to_string(i), config_.dm,
                         config_.heads, config_.ff_dim, false);
  }
  final_norm_ = LayerNorm(store, prefix + "/final_norm", config_.dm);
}

Tensor SpeechEncoder::encode(const Tensor& frames, const ForwardContext& ctx) const {
  if (!frames.defined() || frames.ndim() != 2) {
    throw ValidationError("encode_speech: expected a non-empty T x d frame matrix");
  }
  if (frames.cols() != config_.input_dim) {
    throw DimensionError("encode_speech: frame dimension " + std::to_string(frames.cols()) +
                         " but encoder expects " + std::to_string(config_.input_dim));
  }
  for (double v : frames.data()) {
    if (!std::isfinite(v)) throw ValidationError("encode_speech: non-finite frame value");
  }
  auto h = input_proj_(frames);
  if (config_.positional_encoding) h = add(h, positional_encoding(h.rows(), config_.dm));
  h = ctx.apply_dropout(h);
  for (const auto& block : blocks_) h = block(h, nullptr, nullptr, ctx);
  return final_norm_(h);
}

// --- TokenDecoder -------------------------------------------------------------

TokenDecoder::TokenDecoder(ParameterStore& store, const std::string& prefix,
                           DecoderConfig config)
    : config_(config) {
  config_.validate();
  embed_ = Embedding(store, prefix + "/embed", config_.vocab_size, config_.dm);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    blocks_.emplace_back(store, prefix + "/block" + std::to_string(i), config_.dm,
                         config_.heads, config_.ff_dim, true);
  }
  final_norm_ = LayerNorm(store, prefix + "/final_norm", config_.dm);
  out_proj_ = Linear(store, prefix + "/out", config_.dm, config_.vocab_size);
}

void TokenDecoder::check_ids(std::span<const long> ids) const {
  for (long id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw VocabularyError("token id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(config_.vocab_size) + ")");
    }
  }
}

TokenDecoder::Output TokenDecoder::forward(const Tensor& memory, std::span<const long> prefix,
                                           const ForwardContext& ctx) const {
  if (prefix.empty() || prefix.front() != Vocabulary::kBos) {
    throw ValidationError("decoder prefix must start with BOS");
  }
  if (prefix.size() - 1 > config_.max_decode_length) {
    throw LengthError("decoder prefix of " + std::to_string(prefix.size() - 1) +
                      " tokens exceeds max decode length " +
                      std::to_string(config_.max_decode_length));
  }
  check_ids(prefix);
  const auto n = prefix.size();
  auto h = scale(embed_(prefix), std::sqrt(static_cast<double>(config_.dm)));
  h = ctx.apply_dropout(add(h, positional_encoding(n, config_.dm)));
  const auto mask = AttentionMask::causal(n);
  for (const auto& block : blocks_) h = block(h, &mask, &memory, ctx);
  h = final_norm_(h);
  return {h, out_proj_(h)};
}

DecodeStep TokenDecoder::decode_step(const Tensor& memory, std::span<const long> prefix) const {
  NoGradGuard guard;
  const auto out = forward(memory, prefix);
  const auto last = out.hidden.rows() - 1;
  const auto row_logits = slice_rows(out.logits, last, last + 1);
  const auto lp = log_softmax(row_logits);
  const auto hd = out.hidden.data();
  DecodeStep step;
  step.hidden.assign(hd.begin() + static_cast<std::ptrdiff_t>(last * config_.dm),
                     hd.begin() + static_cast<std::ptrdiff_t>((last + 1) * config_.dm));
  step.log_probs.assign(lp.data().begin(), lp.data().end());
  return step;
}

Tensor TokenDecoder::teacher_forced_nll(const Tensor& memory, std::span<const long> target,
                                        const ForwardContext& ctx) const {
  if (target.size() < 2 || target.front() != Vocabulary::kBos ||
      target.back() != Vocabulary::kEos) {
    throw ValidationError("teacher forcing target must be BOS ... EOS");
  }
  check_ids(target);
  const auto out = forward(memory, target.first(target.size() - 1), ctx);
  return softmax_cross_entropy(out.logits, target.subspan(1));
}

Tensor TokenDecoder::force_decode(const Tensor& memory, std::span<const long> tokens,
                                  const ForwardContext& ctx) const {
  if (tokens.empty()) throw ValidationError("force_decode: empty token sequence");
  check_ids(tokens);
  TokenIds prefix{Vocabulary::kBos};
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  const auto out = forward(memory, prefix, ctx);
  return slice_rows(out.hidden, 1, prefix.size());
}

// --- beam search -----------------------------------------------------------------

Tensor Hypothesis::trace_tensor(std::size_t dm) const {
  std::vector<double> flat;
  flat.reserve(hidden_trace.size() * dm);
  for (const auto& row : hidden_trace) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from_data({hidden_trace.size(), dm}, std::move(flat));
}

double ranking_score(const Hypothesis& h, double length_penalty) {
  if (length_penalty == 0.0) return h.log_prob;
  return h.log_prob / std::pow(static_cast<double>(std::max<std::size_t>(1, h.length())),
                               length_penalty);
}

std::vector<Hypothesis> beam_search(const TokenDecoder& decoder, const Tensor& memory,
                                    const BeamConfig& config) {
  if (config.beam == 0) throw ConfigError("beam size must be at least 1");
  const auto max_len = decoder.config().max_decode_length;
  const auto vocab = static_cast<long>(decoder.config().vocab_size);

  struct Candidate {
    std::size_t parent;
    long token;
    double log_prob;
  };
  const auto seq_less = [](const TokenIds& a, long ta, const TokenIds& b, long tb) {
    const auto cmp = std::lexicographical_compare_three_way(a.begin(), a.end(), b.begin(), b.end());
    if (cmp != 0) return cmp < 0;
    return ta < tb;
  };

  std::vector<Hypothesis> active(1), finished;
  std::vector<DecodeStep> steps;
  while (!active.empty()) {
    steps.clear();
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < active.size(); ++i) {
      steps.push_back(decoder.decode_step(memory, active[i].tokens));
      const auto& lp = steps.back().log_probs;
      for (long t = 0; t < vocab; ++t) {
        if (t == Vocabulary::kBos) continue;
        cands.push_back({i, t, active[i].log_prob + lp[static_cast<std::size_t>(t)]});
      }
    }
    // Active prefixes share a length, so ordering by (prefix, token) is the
    // lexicographic order of the extended sequences.
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return seq_less(active[a.parent].tokens, a.token, active[b.parent].tokens, b.token);
    });
    if (cands.size() > config.beam) cands.resize(config.beam);

    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      const auto& parent = active[c.parent];
      const auto& step = steps[c.parent];
      Hypothesis h;
      h.tokens = parent.tokens;
      h.log_prob = c.log_prob;
      h.hidden_trace = parent.hidden_trace;
      if (parent.tokens.size() > 1) h.hidden_trace.push_back(step.hidden);
      h.entropies = parent.entropies;
      h.entropies.push_back(entropy_of(step.log_probs));
      if (c.token == Vocabulary::kEos) {
        h.finished = h.ended_with_eos = true;
        finished.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(c.token);
      if (h.tokens.size() - 1 == max_len) {
        // Truncated: one more pass yields the state after the last token.
        h.hidden_trace.push_back(decoder.decode_step(memory, h.tokens).hidden);
        h.finished = true;
        finished.push_back(std::move(h));
        continue;
      }
      next.push_back(std::move(h));
    }
    active = std::move(next);

    if (config.length_penalty == 0.0 && !finished.empty() && !active.empty()) {
      // Appending tokens never raises a log-probability.
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_finished = std::max(best_finished, f.log_prob);
      double best_active = -std::numeric_limits<double>::infinity();
      for (const auto& a : active) best_active = std::max(best_active, a.log_prob);
      if (best_finished >= best_active) break;
    }
  }

  std::stable_sort(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = ranking_score(a, config.length_penalty);
    const double sb = ranking_score(b, config.length_penalty);
    if (sa != sb) return sa > sb;
    return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(),
                                        b.tokens.end());
  });
  return finished;
}

}  // namespace compslu
