#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "compslu/tensor.hpp"

namespace compslu {

enum class Init { XavierUniform, Zeros, Ones };

/// Named, creation-ordered collection of trainable leaves. Names are
/// slash-separated paths (e.g. "asr/decoder/block0/self_attn/q/weight").
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor create(const std::string& name, Shape shape, Init init);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::vector<Tensor> with_prefix(const std::string& prefix) const;

  void zero_grad();
  std::size_t num_scalars() const;

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct ForwardContext {
  bool train = false;
  double dropout = 0.0;
  DropoutStream* stream = nullptr;

  Tensor apply_dropout(const Tensor& x) const {
    if (!train || dropout <= 0.0 || stream == nullptr) return x;
    return compslu::dropout(x, dropout, true, *stream);
  }
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& prefix, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, 1e-5); }
};

struct Embedding {
  Tensor table;  // vocab x dim

  Embedding() = default;
  Embedding(ParameterStore& store, const std::string& prefix, std::size_t vocab,
            std::size_t dim);
  Tensor operator()(std::span<const long> ids) const { return embedding_lookup(table, ids); }
};

/// Scaled dot-product attention over `heads` slices of the projected
/// inputs, concatenated and projected back to the model width.
struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear query_proj, key_proj, value_proj, out_proj;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& prefix, std::size_t dm,
                     std::size_t heads);

  /// `mask` may be null (every key visible).
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                    const AttentionMask* mask, const ForwardContext& ctx) const;
};

Tensor multi_head_attention(const MultiHeadAttention& attn, const Tensor& query,
                            const Tensor& key, const Tensor& value,
                            const AttentionMask* mask, const ForwardContext& ctx = {});

struct FeedForward {
  Linear in, out;

  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& prefix, std::size_t dm,
              std::size_t hidden);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
};

/// Pre-norm transformer block: self-attention, optional cross-attention to
/// an external memory, then a feed-forward sublayer; residual around each.
struct TransformerBlock {
  LayerNorm self_norm;
  MultiHeadAttention self_attn;
  bool has_cross = false;
  LayerNorm cross_norm;
  MultiHeadAttention cross_attn;
  LayerNorm ff_norm;
  FeedForward ff;

  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& prefix, std::size_t dm,
                   std::size_t heads, std::size_t ff_dim, bool cross);

  Tensor operator()(const Tensor& x, const AttentionMask* self_mask, const Tensor* memory,
                    const ForwardContext& ctx) const;
};

/// Sinusoidal absolute position table, `length` x `dm`.
Tensor positional_encoding(std::size_t length, std::size_t dm);

}  // namespace compslu
