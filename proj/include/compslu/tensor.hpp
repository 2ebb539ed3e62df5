#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace compslu {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

/// One vertex of the computation graph. Parents always carry smaller ids
/// than their children, so sorting by id is a valid topological order.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first use; logically zero before
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::uint64_t id = 0;
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Differentiable dense array of 64-bit floats (row-major). Copies share the
/// underlying node; use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  std::uint64_t id() const;

  void zero_grad();
  /// Reverse-mode sweep from this scalar; accumulates into every reachable
  /// node that requires a gradient.
  void backward();

  /// New leaf holding a copy of the data; no graph history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds a graph node. Used by the op implementations here and by fused
/// ops elsewhere (e.g. the CRF partition function).
Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward_fn);

/// Boolean Lq x Lk attention mask; `allowed(i, j)` false means key j is
/// hidden from query i.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;
  /// Number of rows that had no allowed key and fell back to uniform
  /// attention during the last masked_softmax using this mask.
  mutable std::size_t fallback_rows = 0;

  static AttentionMask causal(std::size_t n);
  static AttentionMask all(std::size_t rows, std::size_t cols);
  bool is_allowed(std::size_t r, std::size_t c) const {
    return allowed[r * cols + c] != 0;
  }
};

/// Counter-based dropout noise: the k-th draw depends only on (seed, k).
class DropoutStream {
 public:
  explicit DropoutStream(std::uint64_t seed = 0) : seed_(seed) {}
  double next_uniform();
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a[m x n] + bias[n] broadcast over rows.
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Stable log-sum-exp along `axis` (0 or 1 for matrices, 0 for vectors).
Tensor logsumexp(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor masked_softmax(const Tensor& x, const AttentionMask& mask);

inline constexpr long kNoIgnoreIndex = -1;
/// Mean negative log-softmax over rows whose target differs from
/// `ignore_index`. Returns 0 when every row is ignored.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const long> targets,
                             long ignore_index = kNoIgnoreIndex);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, std::span<const long> ids);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor dropout(const Tensor& x, double p, bool train, DropoutStream& stream);

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of x at the given flat offsets (repeats allowed).
Tensor gather_sum(const Tensor& x, std::span<const std::size_t> flat_indices);

}  // namespace compslu
