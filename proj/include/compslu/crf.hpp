#pragma once

#include <span>
#include <string>

#include "compslu/nn.hpp"
#include "compslu/tagging.hpp"
#include "compslu/tensor.hpp"

namespace compslu::crf {

/// Linear-chain potentials over K tags: transitions[i][j] scores i -> j.
struct CrfParams {
  Tensor transitions;  // K x K
  Tensor start;        // K
  Tensor end;          // K

  std::size_t num_tags() const { return start.size(); }

  /// Zero-initialized trainable parameters under `prefix`.
  static CrfParams create(ParameterStore& store, const std::string& prefix, std::size_t k);
  /// Fixed (non-trainable) zero parameters.
  static CrfParams zeros(std::size_t k);
};

/// Global score start[y_0] + sum_l em[l][y_l] + sum_{l>0} T[y_{l-1}][y_l] + end[y_N-1].
Tensor sequence_score(const Tensor& emissions, const CrfParams& params,
                      std::span<const int> tags);

/// log of the sum over all K^N tag sequences of exp(score), by the forward
/// recursion. Differentiable; the backward pass uses forward-backward
/// marginals.
Tensor log_partition(const Tensor& emissions, const CrfParams& params);

/// -log P(gold | emissions) = log_partition - sequence_score.
Tensor nll_loss(const Tensor& emissions, const CrfParams& params, std::span<const int> gold);

struct ViterbiResult {
  TagSequence path;
  double score = 0.0;
};

/// Exact argmax; ties resolve toward the lower tag index.
ViterbiResult viterbi_decode(const Tensor& emissions, const CrfParams& params);

/// sequence_score - log_partition, evaluated without recording a graph.
double sequence_log_likelihood(const Tensor& emissions, const CrfParams& params,
                               std::span<const int> tags);

}  // namespace compslu::crf
