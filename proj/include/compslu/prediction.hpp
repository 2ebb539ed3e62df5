#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "compslu/metrics.hpp"
#include "compslu/synth.hpp"
#include "compslu/tagging.hpp"

namespace compslu {

enum class PredictionSource { Beam, Injected, GroundTruth };

PredictionSource parse_prediction_source(const std::string& name);
std::string to_string(PredictionSource source);

/// One system output. Every pipeline emits this record, and scoring reads
/// nothing else.
struct Prediction {
  std::string id;
  std::vector<std::string> words;      // hypothesis transcript
  std::vector<std::string> subtokens;  // transcript tokenization the labels were computed on
  std::vector<EntitySpan> spans;
  double log_likelihood = 0.0;
  PredictionSource source = PredictionSource::Beam;
  bool empty_output = false;       // decoder ended immediately
  std::size_t malformed_markers = 0;  // dropped by the enriched-sequence parser

  /// Throws ValidationError unless every span lies within `words`.
  void validate() const;
  bool operator==(const Prediction&) const = default;
};

/// One JSON object per line, in the order given.
std::string to_json_line(const Prediction& p);
Prediction prediction_from_json_line(const std::string& line);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

/// Pairs predictions with gold utterances by id; both sides must cover the
/// same ids. Returns predictions in the gold order.
std::vector<Prediction> align_predictions(const std::vector<Example>& gold,
                                          const std::vector<Prediction>& preds);

ScoreReport score_predictions(const std::vector<Example>& gold,
                              const std::vector<Prediction>& preds);
ErrorQuadrants quadrants_for(const std::vector<Example>& gold,
                             const std::vector<Prediction>& preds);
Correlation correlation_for(const std::vector<Example>& gold,
                            const std::vector<Prediction>& preds);

}  // namespace compslu
