#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "compslu/tagging.hpp"

namespace compslu {

struct EditCounts {
  std::size_t subs = 0;
  std::size_t ins = 0;
  std::size_t dels = 0;

  std::size_t total() const { return subs + ins + dels; }
  bool operator==(const EditCounts&) const = default;
};

/// Uniform-cost Levenshtein alignment. Among minimal alignments the
/// backtrace prefers match/substitution, then deletion, then insertion.
EditCounts edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp);
EditCounts edit_distance(std::string_view ref, std::string_view hyp);

/// Edits / max(1, len(ref)).
double wer(std::span<const std::string> ref, std::span<const std::string> hyp);
/// Character level over space-joined text, spaces included.
double cer(std::string_view ref, std::string_view hyp);

/// Lowercases and collapses runs of whitespace to one space.
std::string normalize_mention(std::string_view text);

struct F1Counts {
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;

  /// Precision/recall are 0 when their denominator is 0, except that an
  /// empty gold and empty prediction set scores 1 throughout.
  double precision() const;
  double recall() const;
  double f1() const;
  F1Counts& operator+=(const F1Counts& o);
};

enum class MatchMode { Full, LabelOnly };

using SpanCorpus = std::vector<std::vector<EntitySpan>>;
using TranscriptCorpus = std::vector<std::vector<std::string>>;

/// Per-utterance multiset matching, micro-aggregated.
F1Counts micro_f1(const SpanCorpus& gold, const SpanCorpus& pred, MatchMode mode);
F1Counts utterance_f1(std::span<const EntitySpan> gold, std::span<const EntitySpan> pred,
                      MatchMode mode);

struct SluScore {
  F1Counts word;  // fractional true positives from word credit
  F1Counts chars;  // fractional true positives from character credit
  double f1() const { return 0.5 * (word.f1() + chars.f1()); }
};

/// Label-matched spans are paired greedily by descending character credit
/// (ties: lower gold index, then lower prediction index). Each pair earns
/// word credit max(0, 1 - WER) and char credit max(0, 1 - CER) on the
/// normalized mentions; the SLU score is the mean of the two F1 values.
SluScore slu_f1(const SpanCorpus& gold, const SpanCorpus& pred);
SluScore utterance_slu(std::span<const EntitySpan> gold, std::span<const EntitySpan> pred);

struct ScoreReport {
  std::size_t n_utterances = 0;
  double wer = 0.0;
  double cer = 0.0;
  F1Counts exact;
  F1Counts label;
  SluScore slu;

  double f1() const { return exact.f1(); }
  double precision() const { return exact.precision(); }
  double recall() const { return exact.recall(); }
  double label_f1() const { return label.f1(); }
  double slu_f1() const { return slu.f1(); }

  /// Aligned human-readable report.
  std::string to_text() const;
  /// One key=value pair per line.
  std::string to_key_values() const;
};

/// Corpus WER/CER use total edits over total reference length (floored
/// at 1).
ScoreReport score_corpus(const TranscriptCorpus& gold_words, const SpanCorpus& gold_spans,
                         const TranscriptCorpus& hyp_words, const SpanCorpus& pred_spans);

struct ErrorQuadrants {
  std::size_t asr_ok_entity_ok = 0;
  std::size_t asr_ok_entity_bad = 0;
  std::size_t asr_bad_entity_ok = 0;
  std::size_t asr_bad_entity_bad = 0;

  std::size_t total() const {
    return asr_ok_entity_ok + asr_ok_entity_bad + asr_bad_entity_ok + asr_bad_entity_bad;
  }
  bool operator==(const ErrorQuadrants&) const = default;
  std::string to_table() const;
};

ErrorQuadrants error_quadrants(const TranscriptCorpus& gold_words, const SpanCorpus& gold_spans,
                               const TranscriptCorpus& hyp_words, const SpanCorpus& pred_spans);

/// Full-mode FP + FN for one utterance.
std::size_t span_error_count(std::span<const EntitySpan> gold, std::span<const EntitySpan> pred);

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;  // two-sided, Student t with n - 2 degrees of freedom
  std::size_t n = 0;
};

Correlation pearson(std::span<const double> x, std::span<const double> y);

/// Correlates -log-likelihood with per-utterance span errors.
Correlation likelihood_error_correlation(std::span<const double> log_likelihoods,
                                         std::span<const double> error_counts);

/// Fixed-point rendering with `digits` decimals.
std::string format_fixed(double value, int digits);

}  // namespace compslu
