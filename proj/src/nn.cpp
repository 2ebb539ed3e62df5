#include "compslu/nn.hpp"

#include <cmath>

#include "compslu/errors.hpp"

namespace compslu {

Tensor ParameterStore::create(const std::string& name, Shape shape, Init init) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  auto t = Tensor::zeros(shape, true);
  auto d = t.mutable_data();
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      for (auto& v : d) v = 1.0;
      break;
    case Init::XavierUniform: {
      const double fan_in = static_cast<double>(shape.size() == 2 ? shape[0] : 1);
      const double fan_out = static_cast<double>(shape.back());
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : d) v = dist(rng_);
      break;
    }
  }
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ConfigError("unknown parameter: " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::vector<Tensor> ParameterStore::with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : entries_)
    if (n.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

Linear::Linear(ParameterStore& store, const std::string& prefix, std::size_t in,
               std::size_t out)
    : weight(store.create(prefix + "/weight", {in, out}, Init::XavierUniform)),
      bias(store.create(prefix + "/bias", {out}, Init::Zeros)) {}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& prefix, std::size_t dim)
    : gamma(store.create(prefix + "/gamma", {dim}, Init::Ones)),
      beta(store.create(prefix + "/beta", {dim}, Init::Zeros)) {}

Embedding::Embedding(ParameterStore& store, const std::string& prefix, std::size_t vocab,
                     std::size_t dim)
    : table(store.create(prefix + "/table", {vocab, dim}, Init::XavierUniform)) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& prefix,
                                       std::size_t dm, std::size_t h)
    : heads(h) {
  if (h == 0 || dm % h != 0) {
    throw ConfigError("attention width " + std::to_string(dm) + " is not divisible by " +
                      std::to_string(h) + " heads");
  }
  query_proj = Linear(store, prefix + "/query", dm, dm);
  key_proj = Linear(store, prefix + "/key", dm, dm);
  value_proj = Linear(store, prefix + "/value", dm, dm);
  out_proj = Linear(store, prefix + "/out", dm, dm);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key,
                                      const Tensor& value, const AttentionMask* mask,
                                      const ForwardContext& ctx) const {
  const auto dm = query.cols();
  if (dm % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dm) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (key.rows() != value.rows()) {
    throw DimensionError("attention: key " + shape_str(key.shape()) + " and value " +
                         shape_str(value.shape()) + " lengths differ");
  }
  const auto lq = query.rows(), lk = key.rows();
  AttentionMask visible;
  if (mask == nullptr) {
    visible = AttentionMask::all(lq, lk);
    mask = &visible;
  }
  if (mask->rows != lq || mask->cols != lk) {
    throw DimensionError("attention: mask [" + std::to_string(mask->rows) + "x" +
                         std::to_string(mask->cols) + "] for " + std::to_string(lq) +
                         " queries and " + std::to_string(lk) + " keys");
  }
  const auto q = query_proj(query);
  const auto k = key_proj(key);
  const auto v = value_proj(value);
  const auto dh = dm / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> outs;
  outs.reserve(heads);
  std::size_t fallback = 0;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    const auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    const auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto weights = masked_softmax(scale(matmul_nt(qh, kh), inv_sqrt), *mask);
    fallback = std::max(fallback, mask->fallback_rows);
    weights = ctx.apply_dropout(weights);
    outs.push_back(matmul(weights, vh));
  }
  mask->fallback_rows = fallback;
  const auto merged = heads == 1 ? outs[0] : concat_cols(outs);
  return out_proj(merged);
}

Tensor multi_head_attention(const MultiHeadAttention& attn, const Tensor& query,
                            const Tensor& key, const Tensor& value,
                            const AttentionMask* mask, const ForwardContext& ctx) {
  return attn(query, key, value, mask, ctx);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& prefix, std::size_t dm,
                         std::size_t hidden)
    : in(store, prefix + "/in", dm, hidden), out(store, prefix + "/out", hidden, dm) {}

Tensor FeedForward::operator()(const Tensor& x, const ForwardContext& ctx) const {
  return out(ctx.apply_dropout(relu(in(x))));
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& prefix,
                                   std::size_t dm, std::size_t heads, std::size_t ff_dim,
                                   bool cross)
    : self_norm(store, prefix + "/self_norm", dm),
      self_attn(store, prefix + "/self_attn", dm, heads),
      has_cross(cross) {
  if (cross) {
    cross_norm = LayerNorm(store, prefix + "/cross_norm", dm);
    cross_attn = MultiHeadAttention(store, prefix + "/cross_attn", dm, heads);
  }
  ff_norm = LayerNorm(store, prefix + "/ff_norm", dm);
  ff = FeedForward(store, prefix + "/ff", dm, ff_dim);
}

Tensor TransformerBlock::operator()(const Tensor& x, const AttentionMask* self_mask,
                                    const Tensor* memory, const ForwardContext& ctx) const {
  auto h = self_norm(x);
  auto y = add(x, ctx.apply_dropout(self_attn(h, h, h, self_mask, ctx)));
  if (has_cross) {
    if (memory == nullptr || !memory->defined()) {
      throw ConfigError("cross-attention block called without a memory");
    }
    const auto c = cross_norm(y);
    y = add(y, ctx.apply_dropout(cross_attn(c, *memory, *memory, nullptr, ctx)));
  }
  return add(y, ctx.apply_dropout(ff(ff_norm(y), ctx)));
}

Tensor positional_encoding(std::size_t length, std::size_t dm) {
  std::vector<double> pe(length * dm);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dm; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(dm);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe[pos * dm + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_data({length, dm}, std::move(pe));
}

}  // namespace compslu
