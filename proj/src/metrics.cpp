#include "compslu/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "compslu/errors.hpp"

namespace compslu {

namespace {

template <typename Seq>
EditCounts levenshtein(const Seq& a, const Seq& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  const auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) d[at(i, 0)] = i;
  for (std::size_t j = 0; j <= m; ++j) d[at(0, j)] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[at(i - 1, j - 1)] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[at(i, j)] = std::min({diag, d[at(i - 1, j)] + 1, d[at(i, j - 1)] + 1});
    }
  }
  EditCounts c;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = a[i - 1] == b[j - 1];
      if (d[at(i, j)] == d[at(i - 1, j - 1)] + (same ? 0 : 1)) {
        if (!same) ++c.subs;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && d[at(i, j)] == d[at(i - 1, j)] + 1) {
      ++c.dels;
      --i;
    } else {
      ++c.ins;
      --j;
    }
  }
  return c;
}

std::string join(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

void require_parallel(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DataError(std::string(what) + ": " + std::to_string(a) + " gold utterances but " +
                    std::to_string(b) + " predictions");
  }
}

}  // namespace

EditCounts edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
  return levenshtein(ref, hyp);
}

EditCounts edit_distance(std::string_view ref, std::string_view hyp) {
  return levenshtein(ref, hyp);
}

double wer(std::span<const std::string> ref, std::span<const std::string> hyp) {
  return static_cast<double>(edit_distance(ref, hyp).total()) /
         static_cast<double>(std::max<std::size_t>(1, ref.size()));
}

double cer(std::string_view ref, std::string_view hyp) {
  return static_cast<double>(edit_distance(ref, hyp).total()) /
         static_cast<double>(std::max<std::size_t>(1, ref.size()));
}

std::string normalize_mention(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

// --- F1 ---------------------------------------------------------------------

double F1Counts::precision() const {
  if (tp + fp == 0.0) return (fn == 0.0) ? 1.0 : 0.0;
  return tp / (tp + fp);
}

double F1Counts::recall() const {
  if (tp + fn == 0.0) return (fp == 0.0) ? 1.0 : 0.0;
  return tp / (tp + fn);
}

double F1Counts::f1() const {
  const double p = precision(), r = recall();
  return (p + r == 0.0) ? 0.0 : 2.0 * p * r / (p + r);
}

F1Counts& F1Counts::operator+=(const F1Counts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

F1Counts utterance_f1(std::span<const EntitySpan> gold, std::span<const EntitySpan> pred,
                      MatchMode mode) {
  const auto key = [mode](const EntitySpan& s) {
    return mode == MatchMode::Full ? s.label + '\x1f' + normalize_mention(s.mention) : s.label;
  };
  std::map<std::string, long> counts;
  for (const auto& s : gold) ++counts[key(s)];
  double tp = 0.0;
  for (const auto& s : pred) {
    auto it = counts.find(key(s));
    if (it != counts.end() && it->second > 0) {
      --it->second;
      tp += 1.0;
    }
  }
  return {tp, static_cast<double>(pred.size()) - tp, static_cast<double>(gold.size()) - tp};
}

F1Counts micro_f1(const SpanCorpus& gold, const SpanCorpus& pred, MatchMode mode) {
  require_parallel(gold.size(), pred.size(), "micro_f1");
  F1Counts total;
  for (std::size_t i = 0; i < gold.size(); ++i) total += utterance_f1(gold[i], pred[i], mode);
  return total;
}

SluScore utterance_slu(std::span<const EntitySpan> gold, std::span<const EntitySpan> pred) {
  struct Pair {
    std::size_t g, p;
    double word, chars;
  };
  std::vector<Pair> pairs;
  for (std::size_t g = 0; g < gold.size(); ++g) {
    const auto gm = normalize_mention(gold[g].mention);
    const auto gw = split_words(gm);
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (gold[g].label != pred[p].label) continue;
      const auto pm = normalize_mention(pred[p].mention);
      const auto pw = split_words(pm);
      pairs.push_back({g, p, std::max(0.0, 1.0 - wer(gw, pw)), std::max(0.0, 1.0 - cer(gm, pm))});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.chars > b.chars; });
  std::vector<bool> used_g(gold.size()), used_p(pred.size());
  double word_tp = 0.0, char_tp = 0.0;
  for (const auto& pr : pairs) {
    if (used_g[pr.g] || used_p[pr.p]) continue;
    used_g[pr.g] = used_p[pr.p] = true;
    word_tp += pr.word;
    char_tp += pr.chars;
  }
  const double np = static_cast<double>(pred.size()), ng = static_cast<double>(gold.size());
  return {{word_tp, np - word_tp, ng - word_tp}, {char_tp, np - char_tp, ng - char_tp}};
}

SluScore slu_f1(const SpanCorpus& gold, const SpanCorpus& pred) {
  require_parallel(gold.size(), pred.size(), "slu_f1");
  SluScore total;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto u = utterance_slu(gold[i], pred[i]);
    total.word += u.word;
    total.chars += u.chars;
  }
  return total;
}

// --- reports ------------------------------------------------------------------

std::string format_fixed(double value, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << value;
  return os.str();
}

ScoreReport score_corpus(const TranscriptCorpus& gold_words, const SpanCorpus& gold_spans,
                         const TranscriptCorpus& hyp_words, const SpanCorpus& pred_spans) {
  require_parallel(gold_words.size(), hyp_words.size(), "score_corpus");
  require_parallel(gold_spans.size(), pred_spans.size(), "score_corpus");
  require_parallel(gold_words.size(), gold_spans.size(), "score_corpus");
  ScoreReport r;
  r.n_utterances = gold_words.size();
  std::size_t word_edits = 0, word_ref = 0, char_edits = 0, char_ref = 0;
  for (std::size_t i = 0; i < gold_words.size(); ++i) {
    word_edits += edit_distance(gold_words[i], hyp_words[i]).total();
    word_ref += gold_words[i].size();
    const auto g = join(gold_words[i]), h = join(hyp_words[i]);
    char_edits += edit_distance(std::string_view(g), std::string_view(h)).total();
    char_ref += g.size();
  }
  r.wer = static_cast<double>(word_edits) / static_cast<double>(std::max<std::size_t>(1, word_ref));
  r.cer = static_cast<double>(char_edits) / static_cast<double>(std::max<std::size_t>(1, char_ref));
  r.exact = micro_f1(gold_spans, pred_spans, MatchMode::Full);
  r.label = micro_f1(gold_spans, pred_spans, MatchMode::LabelOnly);
  r.slu = slu_f1(gold_spans, pred_spans);
  return r;
}

std::string ScoreReport::to_text() const {
  std::ostringstream os;
  const auto row = [&os](const std::string& name, const std::string& value) {
    os << std::left << std::setw(16) << name << value << '\n';
  };
  row("utterances", std::to_string(n_utterances));
  row("WER", format_fixed(100.0 * wer, 2) + " %");
  row("CER", format_fixed(100.0 * cer, 2) + " %");
  row("F1", format_fixed(100.0 * f1(), 2));
  row("  precision", format_fixed(100.0 * precision(), 2));
  row("  recall", format_fixed(100.0 * recall(), 2));
  row("Label-F1", format_fixed(100.0 * label_f1(), 2));
  row("SLU-F1", format_fixed(100.0 * slu_f1(), 2));
  row("  word-F1", format_fixed(100.0 * slu.word.f1(), 2));
  row("  char-F1", format_fixed(100.0 * slu.chars.f1(), 2));
  return os.str();
}

std::string ScoreReport::to_key_values() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "n_utterances=" << n_utterances << '\n'
     << "wer=" << wer << '\n'
     << "cer=" << cer << '\n'
     << "f1=" << f1() << '\n'
     << "precision=" << precision() << '\n'
     << "recall=" << recall() << '\n'
     << "tp=" << exact.tp << '\n'
     << "fp=" << exact.fp << '\n'
     << "fn=" << exact.fn << '\n'
     << "label_f1=" << label_f1() << '\n'
     << "label_tp=" << label.tp << '\n'
     << "label_fp=" << label.fp << '\n'
     << "label_fn=" << label.fn << '\n'
     << "slu_f1=" << slu_f1() << '\n'
     << "slu_word_f1=" << slu.word.f1() << '\n'
     << "slu_char_f1=" << slu.chars.f1() << '\n'
     << "slu_word_tp=" << slu.word.tp << '\n'
     << "slu_char_tp=" << slu.chars.tp << '\n';
  return os.str();
}

// --- error analysis -----------------------------------------------------------

std::size_t span_error_count(std::span<const EntitySpan> gold, std::span<const EntitySpan> pred) {
  const auto c = utterance_f1(gold, pred, MatchMode::Full);
  return static_cast<std::size_t>(c.fp + c.fn);
}

ErrorQuadrants error_quadrants(const TranscriptCorpus& gold_words, const SpanCorpus& gold_spans,
                               const TranscriptCorpus& hyp_words, const SpanCorpus& pred_spans) {
  require_parallel(gold_words.size(), hyp_words.size(), "error_quadrants");
  require_parallel(gold_spans.size(), pred_spans.size(), "error_quadrants");
  require_parallel(gold_words.size(), gold_spans.size(), "error_quadrants");
  ErrorQuadrants q;
  for (std::size_t i = 0; i < gold_words.size(); ++i) {
    const bool asr_ok = normalize_mention(join(gold_words[i])) == normalize_mention(join(hyp_words[i]));
    const bool ent_ok = span_error_count(gold_spans[i], pred_spans[i]) == 0;
    if (asr_ok) {
      ++(ent_ok ? q.asr_ok_entity_ok : q.asr_ok_entity_bad);
    } else {
      ++(ent_ok ? q.asr_bad_entity_ok : q.asr_bad_entity_bad);
    }
  }
  return q;
}

std::string ErrorQuadrants::to_table() const {
  std::ostringstream os;
  const auto n = static_cast<double>(std::max<std::size_t>(1, total()));
  const auto cell = [&](std::size_t c) {
    std::ostringstream s;
    s << c << " (" << format_fixed(100.0 * static_cast<double>(c) / n, 1) << "%)";
    return s.str();
  };
  os << std::left << std::setw(14) << "" << std::setw(20) << "Entity correct"
     << "Entity incorrect\n";
  os << std::setw(14) << "ASR correct" << std::setw(20) << cell(asr_ok_entity_ok)
     << cell(asr_ok_entity_bad) << '\n';
  os << std::setw(14) << "ASR incorrect" << std::setw(20) << cell(asr_bad_entity_ok)
     << cell(asr_bad_entity_bad) << '\n';
  os << "total " << total() << '\n';
  return os.str();
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("pearson: variates differ in length");
  if (x.size() < 3) throw ValidationError("pearson: needs at least 3 observations");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw UndefinedCorrelationError("correlation undefined: a variate has zero variance");
  }
  Correlation c;
  c.n = x.size();
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = n - 2.0;
  if (std::abs(c.r) >= 1.0) {
    c.p_value = 0.0;
  } else {
    const double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
    const boost::math::students_t dist(df);
    c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return c;
}

Correlation likelihood_error_correlation(std::span<const double> log_likelihoods,
                                         std::span<const double> error_counts) {
  std::vector<double> neg(log_likelihoods.size());
  std::transform(log_likelihoods.begin(), log_likelihoods.end(), neg.begin(),
                 [](double v) { return -v; });
  return pearson(neg, error_counts);
}

}  // namespace compslu
