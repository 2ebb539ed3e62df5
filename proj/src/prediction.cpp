#include "compslu/prediction.hpp"

#include <fstream>
#include <map>

#include "json.hpp"

#include "compslu/errors.hpp"

namespace compslu {

PredictionSource parse_prediction_source(const std::string& name) {
  if (name == "beam") return PredictionSource::Beam;
  if (name == "injected") return PredictionSource::Injected;
  if (name == "ground-truth-transcript") return PredictionSource::GroundTruth;
  throw ValidationError("unknown prediction source '" + name + "'");
}

std::string to_string(PredictionSource source) {
  switch (source) {
    case PredictionSource::Beam: return "beam";
    case PredictionSource::Injected: return "injected";
    case PredictionSource::GroundTruth: return "ground-truth-transcript";
  }
  return "beam";
}

void Prediction::validate() const {
  for (const auto& s : spans) {
    if (s.start > s.end || s.end >= words.size()) {
      throw ValidationError("prediction " + id + ": span [" + std::to_string(s.start) + ", " +
                            std::to_string(s.end) + "] outside a transcript of " +
                            std::to_string(words.size()) + " words");
    }
  }
}

std::string to_json_line(const Prediction& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["source"] = to_string(p.source);
  j["words"] = p.words;
  j["subtokens"] = p.subtokens;
  auto spans = nlohmann::ordered_json::array();
  for (const auto& s : p.spans) {
    spans.push_back({{"label", s.label}, {"start", s.start}, {"end", s.end}, {"mention", s.mention}});
  }
  j["spans"] = spans;
  j["log_likelihood"] = p.log_likelihood;
  j["empty_output"] = p.empty_output;
  j["malformed_markers"] = p.malformed_markers;
  return j.dump();
}

Prediction prediction_from_json_line(const std::string& line) {
  Prediction p;
  try {
    const auto j = nlohmann::json::parse(line);
    p.id = j.at("id").get<std::string>();
    p.source = parse_prediction_source(j.at("source").get<std::string>());
    p.words = j.at("words").get<std::vector<std::string>>();
    p.subtokens = j.value("subtokens", std::vector<std::string>{});
    for (const auto& s : j.at("spans")) {
      p.spans.push_back({s.at("label").get<std::string>(), s.at("start").get<std::size_t>(),
                         s.at("end").get<std::size_t>(), s.value("mention", std::string{})});
    }
    p.log_likelihood = j.at("log_likelihood").get<double>();
    p.empty_output = j.value("empty_output", false);
    p.malformed_markers = j.value("malformed_markers", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed prediction record: ") + e.what());
  }
  p.validate();
  attach_mentions(p.spans, p.words);
  return p;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : preds) out << to_json_line(p) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(prediction_from_json_line(line));
    } catch (const Error& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Prediction> align_predictions(const std::vector<Example>& gold,
                                          const std::vector<Prediction>& preds) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.id, &p).second) throw DataError("duplicate prediction for " + p.id);
  }
  if (by_id.size() != gold.size()) {
    throw DataError(std::to_string(preds.size()) + " predictions for " +
                    std::to_string(gold.size()) + " utterances");
  }
  std::vector<Prediction> out;
  out.reserve(gold.size());
  for (const auto& g : gold) {
    const auto it = by_id.find(g.id);
    if (it == by_id.end()) throw DataError("no prediction for utterance " + g.id);
    out.push_back(*it->second);
  }
  return out;
}

namespace {

struct Columns {
  TranscriptCorpus gold_words, hyp_words;
  SpanCorpus gold_spans, pred_spans;
};

Columns columns(const std::vector<Example>& gold, const std::vector<Prediction>& preds) {
  const auto aligned = align_predictions(gold, preds);
  Columns c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    c.gold_words.push_back(gold[i].words);
    c.gold_spans.push_back(gold[i].spans);
    c.hyp_words.push_back(aligned[i].words);
    c.pred_spans.push_back(aligned[i].spans);
  }
  return c;
}

}  // namespace

ScoreReport score_predictions(const std::vector<Example>& gold,
                              const std::vector<Prediction>& preds) {
  const auto c = columns(gold, preds);
  return score_corpus(c.gold_words, c.gold_spans, c.hyp_words, c.pred_spans);
}

ErrorQuadrants quadrants_for(const std::vector<Example>& gold,
                             const std::vector<Prediction>& preds) {
  const auto c = columns(gold, preds);
  return error_quadrants(c.gold_words, c.gold_spans, c.hyp_words, c.pred_spans);
}

Correlation correlation_for(const std::vector<Example>& gold,
                            const std::vector<Prediction>& preds) {
  const auto aligned = align_predictions(gold, preds);
  std::vector<double> ll, errors;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ll.push_back(aligned[i].log_likelihood);
    errors.push_back(static_cast<double>(span_error_count(gold[i].spans, aligned[i].spans)));
  }
  return likelihood_error_correlation(ll, errors);
}

}  // namespace compslu
