#include "compslu/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "compslu/errors.hpp"

namespace compslu::crf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_shapes(const Tensor& em, const CrfParams& p) {
  const auto k = p.num_tags();
  if (em.ndim() != 2 || em.cols() != k) {
    throw DimensionError("CRF emissions " + shape_str(em.shape()) + " do not match " +
                         std::to_string(k) + " tags");
  }
  if (p.transitions.rows() != k || p.transitions.cols() != k || p.end.size() != k) {
    throw DimensionError("CRF transitions " + shape_str(p.transitions.shape()) +
                         " are not square over " + std::to_string(k) + " tags");
  }
}

void check_tags(std::span<const int> tags, std::size_t n, std::size_t k) {
  if (tags.size() != n) {
    throw DimensionError("CRF tag sequence of length " + std::to_string(tags.size()) +
                         " for " + std::to_string(n) + " positions");
  }
  for (int t : tags) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw IndexError("CRF tag " + std::to_string(t) + " outside [0," + std::to_string(k) + ")");
    }
  }
}

double lse(const double* v, std::size_t n) {
  double mx = kNegInf;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

// alpha[l][j]: log-sum of scores of prefixes ending in tag j at position l,
// including em[l][j].
std::vector<double> forward_table(const double* em, const double* trans, const double* start,
                                  std::size_t n, std::size_t k) {
  std::vector<double> alpha(n * k);
  for (std::size_t j = 0; j < k; ++j) alpha[j] = start[j] + em[j];
  std::vector<double> buf(k);
  for (std::size_t l = 1; l < n; ++l) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < k; ++i) buf[i] = alpha[(l - 1) * k + i] + trans[i * k + j];
      alpha[l * k + j] = lse(buf.data(), k) + em[l * k + j];
    }
  }
  return alpha;
}

// beta[l][i]: log-sum of scores of suffixes after position l given tag i,
// including the end score.
std::vector<double> backward_table(const double* em, const double* trans, const double* end,
                                   std::size_t n, std::size_t k) {
  std::vector<double> beta(n * k);
  for (std::size_t i = 0; i < k; ++i) beta[(n - 1) * k + i] = end[i];
  std::vector<double> buf(k);
  for (std::size_t l = n - 1; l-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j)
        buf[j] = trans[i * k + j] + em[(l + 1) * k + j] + beta[(l + 1) * k + j];
      beta[l * k + i] = lse(buf.data(), k);
    }
  }
  return beta;
}

}  // namespace

CrfParams CrfParams::create(ParameterStore& store, const std::string& prefix, std::size_t k) {
  return {store.create(prefix + "/transitions", {k, k}, Init::Zeros),
          store.create(prefix + "/start", {k}, Init::Zeros),
          store.create(prefix + "/end", {k}, Init::Zeros)};
}

CrfParams CrfParams::zeros(std::size_t k) {
  return {Tensor::zeros({k, k}), Tensor::zeros({k}), Tensor::zeros({k})};
}

Tensor sequence_score(const Tensor& emissions, const CrfParams& params,
                      std::span<const int> tags) {
  check_shapes(emissions, params);
  const auto n = emissions.rows(), k = params.num_tags();
  check_tags(tags, n, k);
  std::vector<std::size_t> em_idx(n), tr_idx;
  for (std::size_t l = 0; l < n; ++l) em_idx[l] = l * k + static_cast<std::size_t>(tags[l]);
  for (std::size_t l = 1; l < n; ++l)
    tr_idx.push_back(static_cast<std::size_t>(tags[l - 1]) * k + static_cast<std::size_t>(tags[l]));
  const std::size_t first = static_cast<std::size_t>(tags.front());
  const std::size_t last = static_cast<std::size_t>(tags.back());
  auto score = add(gather_sum(emissions, em_idx),
                   add(gather_sum(params.start, std::span(&first, 1)),
                       gather_sum(params.end, std::span(&last, 1))));
  if (!tr_idx.empty()) score = add(score, gather_sum(params.transitions, tr_idx));
  return score;
}

Tensor log_partition(const Tensor& emissions, const CrfParams& params) {
  check_shapes(emissions, params);
  const auto n = emissions.rows(), k = params.num_tags();
  const auto alpha = forward_table(emissions.data().data(), params.transitions.data().data(),
                                   params.start.data().data(), n, k);
  std::vector<double> last(k);
  for (std::size_t j = 0; j < k; ++j) last[j] = alpha[(n - 1) * k + j] + params.end.data()[j];
  const double log_z = lse(last.data(), k);

  return make_op_result(
      {}, {log_z}, {emissions, params.transitions, params.start, params.end},
      [n, k, alpha](detail::Node& self) {
        const double g = self.grad[0];
        const double log_z = self.data[0];
        const double* em = self.parents[0]->data.data();
        const double* trans = self.parents[1]->data.data();
        const double* end = self.parents[3]->data.data();
        const auto beta = backward_table(em, trans, end, n, k);
        auto grad_of = [&self](std::size_t i) -> double* {
          auto& p = *self.parents[i];
          return p.requires_grad ? p.grad_buffer().data() : nullptr;
        };
        if (double* ge = grad_of(0)) {
          for (std::size_t i = 0; i < n * k; ++i) ge[i] += g * std::exp(alpha[i] + beta[i] - log_z);
        }
        if (double* gs = grad_of(2)) {
          for (std::size_t j = 0; j < k; ++j) gs[j] += g * std::exp(alpha[j] + beta[j] - log_z);
        }
        if (double* gend = grad_of(3)) {
          for (std::size_t j = 0; j < k; ++j) {
            const auto idx = (n - 1) * k + j;
            gend[j] += g * std::exp(alpha[idx] + beta[idx] - log_z);
          }
        }
        if (double* gt = grad_of(1)) {
          for (std::size_t l = 1; l < n; ++l) {
            for (std::size_t i = 0; i < k; ++i) {
              const double a = alpha[(l - 1) * k + i];
              for (std::size_t j = 0; j < k; ++j) {
                gt[i * k + j] +=
                    g * std::exp(a + trans[i * k + j] + em[l * k + j] + beta[l * k + j] - log_z);
              }
            }
          }
        }
      });
}

Tensor nll_loss(const Tensor& emissions, const CrfParams& params, std::span<const int> gold) {
  return sub(log_partition(emissions, params), sequence_score(emissions, params, gold));
}

ViterbiResult viterbi_decode(const Tensor& emissions, const CrfParams& params) {
  check_shapes(emissions, params);
  const auto n = emissions.rows(), k = params.num_tags();
  const double* em = emissions.data().data();
  const double* trans = params.transitions.data().data();
  std::vector<double> score(k), next(k);
  std::vector<int> back(n * k, 0);
  for (std::size_t j = 0; j < k; ++j) score[j] = params.start.data()[j] + em[j];
  for (std::size_t l = 1; l < n; ++l) {
    for (std::size_t j = 0; j < k; ++j) {
      double best = kNegInf;
      int arg = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const double s = score[i] + trans[i * k + j];
        if (s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      next[j] = best + em[l * k + j];
      back[l * k + j] = arg;
    }
    std::swap(score, next);
  }
  double best = kNegInf;
  int arg = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double s = score[j] + params.end.data()[j];
    if (s > best) {
      best = s;
      arg = static_cast<int>(j);
    }
  }
  ViterbiResult r;
  r.score = best;
  r.path.assign(n, 0);
  r.path[n - 1] = arg;
  for (std::size_t l = n - 1; l > 0; --l) r.path[l - 1] = back[l * k + r.path[l]];
  return r;
}

double sequence_log_likelihood(const Tensor& emissions, const CrfParams& params,
                               std::span<const int> tags) {
  NoGradGuard guard;
  return sequence_score(emissions, params, tags).item() - log_partition(emissions, params).item();
}

}  // namespace compslu::crf
