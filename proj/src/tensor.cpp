#include "compslu/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "compslu/errors.hpp"

namespace compslu {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local bool t_grad_enabled = true;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Accumulate into a parent's gradient if it participates in backprop.
inline double* grad_of(detail::Node& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  if (!p.requires_grad) return nullptr;
  return p.grad_buffer().data();
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
  }
  const auto n = shape_numel(shape);
  auto node = new_node(std::move(shape), std::vector<double>(n, 0.0));
  node->requires_grad = requires_grad;
  return from_node(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = new_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return from_node(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  return 1;
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
std::uint64_t Tensor::id() const { return node_->id; }

void Tensor::zero_grad() {
  auto& g = node_->grad_buffer();
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::backward() {
  if (size() != 1) {
    throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::vector<detail::Node*> stack{node_.get()};
  std::vector<std::uint64_t> seen;
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    auto it = std::lower_bound(seen.begin(), seen.end(), n->id);
    if (it != seen.end() && *it == n->id) continue;
    seen.insert(it, n->id);
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  node_->grad_buffer()[0] += 1.0;
  for (auto* n : order) {
    n->grad_buffer();
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward_fn) {
  auto node = new_node(std::move(shape), std::move(data));
  if (t_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor::from_node(std::move(node));
}

// ---------------------------------------------------------------------------
// Masks and dropout noise

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m;
  m.rows = m.cols = n;
  m.allowed.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.allowed[i * n + j] = 1;
  }
  return m;
}

AttentionMask AttentionMask::all(std::size_t rows, std::size_t cols) {
  AttentionMask m;
  m.rows = rows;
  m.cols = cols;
  m.allowed.assign(rows * cols, 1);
  return m;
}

double DropoutStream::next_uniform() {
  // splitmix64 of (seed, counter)
  std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (++counter_);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* G = self.grad.data();
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    if (double* gA = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = G + i * n;
          const double* brow = B + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          gA[i * k + p] += acc;
        }
      }
    }
    if (double* gB = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          double* gbrow = gB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * n + j] = acc;
    }
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* G = self.grad.data();
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    if (double* gA = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gA[i * k + p] += g * B[j * k + p];
        }
      }
    }
    if (double* gB = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gB[j * k + p] += g * A[i * k + p];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const double* A = a.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_op_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * B[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * A[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_op_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_rowwise");
  const auto m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_rowwise: bias " + shape_str(bias.shape()) +
                         " does not broadcast over " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bd[j];
  return make_op_result(a.shape(), std::move(out), {a, bias}, [m, n](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_op_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      const auto& x = self.parents[0]->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (x[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalizers

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  std::size_t outer = 0, len = 0, stride = 0, inner = 0;
  Shape out_shape;
  if (x.ndim() == 1 && axis == 0) {
    outer = 1; len = x.shape()[0]; stride = 1; inner = 1;
  } else if (x.ndim() == 2 && axis == 1) {
    outer = x.rows(); len = x.cols(); stride = 1; inner = 1;
    out_shape = {x.rows()};
  } else if (x.ndim() == 2 && axis == 0) {
    outer = 1; len = x.rows(); stride = x.cols(); inner = x.cols();
    out_shape = {x.cols()};
  } else {
    throw DimensionError("logsumexp: invalid axis " + std::to_string(axis) +
                         " for shape " + shape_str(x.shape()));
  }
  if (len == 0) throw DimensionError("logsumexp: empty axis");
  const auto xd = x.data();
  // element (o, k, i) lives at o*len*inner + k*stride + i
  const std::size_t count = outer * inner;
  std::vector<double> out(count);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = kNegInf;
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, xd[base + k * stride]);
      double s = 0.0;
      if (mx == kNegInf) {
        out[o * inner + i] = kNegInf;
        continue;
      }
      for (std::size_t k = 0; k < len; ++k) s += std::exp(xd[base + k * stride] - mx);
      out[o * inner + i] = mx + std::log(s);
    }
  }
  return make_op_result(out_shape, std::move(out), {x},
                        [outer, len, stride, inner](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const auto& xd = self.parents[0]->data;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const double lse = self.data[o * inner + i];
        const double go = self.grad[o * inner + i];
        if (lse == kNegInf) continue;
        const std::size_t base = o * len * inner + i;
        for (std::size_t k = 0; k < len; ++k) {
          g[base + k * stride] += go * std::exp(xd[base + k * stride] - lse);
        }
      }
    }
  });
}

namespace {

void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = kNegInf;
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    s += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= s;
}

// dx = y * (dy - <dy, y>)
void softmax_row_backward(const double* y, const double* gy, double* gx, std::size_t n) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
}

}  // namespace

Tensor log_softmax(const Tensor& x) {
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  return make_op_result(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        g[i * n + j] += self.grad[i * n + j] - std::exp(self.data[i * n + j]) * gs;
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) softmax_row(x.data().data() + i * n, out.data() + i * n, n);
  return make_op_result(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i) {
      softmax_row_backward(self.data.data() + i * n, self.grad.data() + i * n, g + i * n, n);
    }
  });
}

Tensor masked_softmax(const Tensor& x, const AttentionMask& mask) {
  require_2d(x, "masked_softmax");
  const auto m = x.rows(), n = x.cols();
  if (mask.rows != m || mask.cols != n) {
    throw DimensionError("masked_softmax: mask [" + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + "] does not match scores " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.size(), 0.0);
  const auto xd = x.data();
  mask.fallback_rows = 0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = kNegInf;
    std::size_t visible = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.is_allowed(i, j)) {
        mx = std::max(mx, xd[i * n + j]);
        ++visible;
      }
    }
    if (visible == 0) {
      ++mask.fallback_rows;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = 1.0 / static_cast<double>(n);
      continue;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask.is_allowed(i, j)) continue;
      out[i * n + j] = std::exp(xd[i * n + j] - mx);
      s += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.is_allowed(i, j)) out[i * n + j] /= s;
    }
  }
  // Fallback rows are constant in x, so they pass no gradient.
  std::vector<std::uint8_t> live(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) any = any || mask.is_allowed(i, j);
    live[i] = any;
  }
  return make_op_result(x.shape(), std::move(out), {x},
                        [m, n, live = std::move(live)](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i) {
      if (!live[i]) continue;
      softmax_row_backward(self.data.data() + i * n, self.grad.data() + i * n, g + i * n, n);
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const long> targets,
                             long ignore_index) {
  const auto m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  std::size_t active = 0;
  for (auto t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= n) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                       " outside [0," + std::to_string(n) + ")");
    }
    ++active;
  }
  const auto xd = logits.data();
  std::vector<double> probs(m * n, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == ignore_index) continue;
    const double* row = xd.data() + i * n;
    softmax_row(row, probs.data() + i * n, n);
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    loss += mx + std::log(s) - row[targets[i]];
  }
  const double denom = active ? static_cast<double>(active) : 1.0;
  loss = active ? loss / denom : 0.0;
  std::vector<long> tg(targets.begin(), targets.end());
  return make_op_result({}, {loss}, {logits},
                        [m, n, denom, ignore_index, tg = std::move(tg),
                         probs = std::move(probs)](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const double go = self.grad[0] / denom;
    for (std::size_t i = 0; i < m; ++i) {
      if (tg[i] == ignore_index) continue;
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += go * probs[i * n + j];
      g[i * n + tg[i]] -= go;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " for input " + shape_str(x.shape()));
  }
  std::vector<double> xhat(x.size()), out(x.size()), inv_std(m);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xd[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xd[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xd[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gd[j] + bd[j];
    }
  }
  return make_op_result(x.shape(), std::move(out), {x, gamma, beta},
                        [m, n, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](detail::Node& self) {
    const auto& gd = self.parents[1]->data;
    const double* G = self.grad.data();
    if (double* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = G[i * n + j] * gd[j];
          s1 += dxh;
          s2 += dxh * xhat[i * n + j];
        }
        const double nn = static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = G[i * n + j] * gd[j];
          gx[i * n + j] += inv_std[i] / nn * (nn * dxh - s1 - xhat[i * n + j] * s2);
        }
      }
    }
    if (double* gg = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += G[i * n + j] * xhat[i * n + j];
    }
    if (double* gb = grad_of(self, 2)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += G[i * n + j];
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const long> ids) {
  require_2d(table, "embedding_lookup");
  const auto v = table.rows(), d = table.cols();
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " outside [0," +
                       std::to_string(v) + ")");
    }
    std::copy_n(td.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<long> idv(ids.begin(), ids.end());
  return make_op_result({ids.size(), d}, std::move(out), {table},
                        [d, idv = std::move(idv)](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idv[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_rowwise(matmul(x, weight), bias);
}

Tensor dropout(const Tensor& x, double p, bool train, DropoutStream& stream) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const double keep = 1.0 - p;
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = stream.next_uniform() < keep ? 1.0 / keep : 0.0;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op_result(x.shape(), std::move(out), {x},
                        [mask = std::move(mask)](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Slicing

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_cols");
  const auto m = x.rows(), n = x.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  const auto w = end - begin;
  std::vector<double> out(m * w);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xd.data() + i * n + begin, w, out.data() + i * w);
  return make_op_result({m, w}, std::move(out), {x}, [m, n, w, begin](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_rows");
  const auto m = x.rows(), n = x.cols();
  if (begin >= end || end > m) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin() + begin * n, x.data().begin() + end * n);
  return make_op_result({end - begin, n}, std::move(out), {x},
                        [n, begin](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const auto m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pd.data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return make_op_result({m, total}, std::move(out), parts,
                        [m, total, widths = std::move(widths)](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const auto n = parts[0].cols();
  std::vector<std::size_t> sizes;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    sizes.push_back(p.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const auto m = out.size() / n;
  return make_op_result({m, n}, std::move(out), parts,
                        [sizes = std::move(sizes)](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (double* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op_result({}, {s}, {x}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      const auto n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor gather_sum(const Tensor& x, std::span<const std::size_t> flat_indices) {
  double s = 0.0;
  const auto xd = x.data();
  for (auto i : flat_indices) {
    if (i >= xd.size()) {
      throw IndexError("gather_sum: offset " + std::to_string(i) + " outside tensor " +
                       shape_str(x.shape()));
    }
    s += xd[i];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  return make_op_result({}, {s}, {x}, [idx = std::move(idx)](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (auto i : idx) g[i] += self.grad[0];
    }
  });
}

}  // namespace compslu
