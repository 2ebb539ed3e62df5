// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 when
// every selected criterion passes or is listed in --expected-failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "compslu/crf.hpp"
#include "compslu/errors.hpp"
#include "compslu/metrics.hpp"
#include "compslu/nlu.hpp"
#include "compslu/parallel.hpp"
#include "compslu/pipelines.hpp"
#include "oracles.hpp"

using namespace compslu;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) { return format_fixed(v, digits); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + fmt(x, 3);
  return "[" + s + "]";
}

// ---------------------------------------------------------------------------
// 1. CRF exactness

Outcome crf_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst_z = 0.0, worst_score = 0.0;
  std::size_t path_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = oracle::random_crf(rng, 1 + rng() % 6, 1 + rng() % 5);
    const auto em = Tensor::from_data({c.n, c.k}, c.em);
    const crf::CrfParams p{Tensor::from_data({c.k, c.k}, c.trans), Tensor::from_data({c.k}, c.start),
                           Tensor::from_data({c.k}, c.end)};
    worst_z = std::max(worst_z, std::abs(crf::log_partition(em, p).item() -
                                         oracle::crf_brute_log_partition(c)));
    const auto [path, score] = oracle::crf_brute_argmax(c);
    const auto v = crf::viterbi_decode(em, p);
    path_mismatch += v.path != TagSequence(path.begin(), path.end());
    worst_score = std::max(worst_score, std::abs(v.score - score));
  }
  const double t = seconds_since(t0);
  return {worst_z <= 1e-8 && worst_score <= 1e-8 && path_mismatch == 0 && t < 10.0,
          "200 instances, max |logZ err| " + sci(worst_z) + ", path mismatches " +
              std::to_string(path_mismatch) + ", " + fmt(t, 2) + "s"};
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness

struct GradCase {
  std::string name;
  std::function<double(std::mt19937_64&, std::size_t, std::size_t)> check;
};

/// Uniform values kept at least `gap` away from zero (for relu kinks).
Tensor away_from_zero(std::mt19937_64& rng, Shape shape, double gap = 1e-2) {
  auto t = oracle::random_tensor(rng, std::move(shape));
  for (auto& x : t.mutable_data()) {
    if (std::abs(x) < gap) x = x < 0 ? x - gap : x + gap;
  }
  return t;
}

std::vector<GradCase> grad_cases() {
  using oracle::gradient_check;
  using oracle::random_tensor;
  using oracle::weighted_sum;
  std::vector<GradCase> cs;
  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> op) {
    cs.push_back({name, [op](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                    auto a = random_tensor(rng, {r, c});
                    return gradient_check([&] { return weighted_sum(op(a), 1); }, {a});
                  }});
  };
  auto binary = [&](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    cs.push_back({name, [op](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                    auto a = random_tensor(rng, {r, c});
                    auto b = random_tensor(rng, {r, c});
                    return gradient_check([&] { return weighted_sum(op(a, b), 2); }, {a, b});
                  }});
  };
  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("matmul_nt", [](const Tensor& a, const Tensor& b) { return matmul_nt(a, b); });
  binary("concat_cols", [](const Tensor& a, const Tensor& b) { return concat_cols({a, b}); });
  binary("concat_rows", [](const Tensor& a, const Tensor& b) { return concat_rows({a, b}); });
  unary("scale", [](const Tensor& a) { return scale(a, -1.7); });
  unary("transpose", [](const Tensor& a) { return transpose(a); });
  unary("reshape", [](const Tensor& a) { return reshape(a, {a.size()}); });
  unary("logsumexp0", [](const Tensor& a) { return logsumexp(a, 0); });
  unary("logsumexp1", [](const Tensor& a) { return logsumexp(a, 1); });
  unary("log_softmax", [](const Tensor& a) { return log_softmax(a); });
  unary("softmax", [](const Tensor& a) { return softmax(a); });
  unary("slice_cols", [](const Tensor& a) { return slice_cols(a, a.cols() / 2, a.cols()); });
  unary("slice_rows", [](const Tensor& a) { return slice_rows(a, 0, (a.rows() + 1) / 2); });
  unary("sum", [](const Tensor& a) { return sum(a); });
  unary("mean", [](const Tensor& a) { return mean(a); });
  cs.push_back({"relu", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto a = away_from_zero(rng, {r, c});
                  return gradient_check([&] { return weighted_sum(relu(a), 3); }, {a});
                }});
  cs.push_back({"matmul", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto a = random_tensor(rng, {r, c});
                  auto b = random_tensor(rng, {c, 1 + rng() % 4});
                  return gradient_check([&] { return weighted_sum(matmul(a, b), 4); }, {a, b});
                }});
  cs.push_back({"add_rowwise", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto a = random_tensor(rng, {r, c});
                  auto b = random_tensor(rng, {c});
                  return gradient_check([&] { return weighted_sum(add_rowwise(a, b), 5); }, {a, b});
                }});
  cs.push_back({"linear", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto x = random_tensor(rng, {r, c});
                  const std::size_t out = 1 + rng() % 4;
                  auto w = random_tensor(rng, {c, out});
                  auto b = random_tensor(rng, {out});
                  return gradient_check([&] { return weighted_sum(linear(x, w, b), 6); }, {x, w, b});
                }});
  cs.push_back({"layer_norm", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto x = random_tensor(rng, {r, c + 1});
                  auto g = random_tensor(rng, {c + 1}, 0.5, 1.5);
                  auto b = random_tensor(rng, {c + 1});
                  return gradient_check([&] { return weighted_sum(layer_norm(x, g, b), 7); }, {x, g, b});
                }});
  cs.push_back({"masked_softmax", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto a = random_tensor(rng, {r, c});
                  auto mask = AttentionMask::all(r, c);
                  for (auto& m : mask.allowed) m = rng() % 3 != 0;
                  return gradient_check([&] { return weighted_sum(masked_softmax(a, mask), 8); }, {a});
                }});
  cs.push_back({"softmax_cross_entropy", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto a = random_tensor(rng, {r, c});
                  std::vector<long> t(r);
                  for (auto& v : t) v = rng() % 4 == 0 ? -1 : static_cast<long>(rng() % c);
                  return gradient_check([&] { return softmax_cross_entropy(a, t, -1); }, {a});
                }});
  cs.push_back({"embedding_lookup", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto table = random_tensor(rng, {r + 1, c});
                  std::vector<long> ids(1 + rng() % 5);
                  for (auto& v : ids) v = static_cast<long>(rng() % (r + 1));
                  return gradient_check([&] { return weighted_sum(embedding_lookup(table, ids), 9); },
                                        {table});
                }});
  cs.push_back({"gather_sum", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto a = random_tensor(rng, {r, c});
                  std::vector<std::size_t> idx(1 + rng() % 6);
                  for (auto& v : idx) v = rng() % a.size();
                  return gradient_check([&] { return gather_sum(a, idx); }, {a});
                }});
  cs.push_back({"dropout", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  auto a = random_tensor(rng, {r, c});
                  const std::uint64_t seed = rng();
                  return gradient_check(
                      [&] {
                        DropoutStream s(seed);  // same mask on every evaluation
                        return weighted_sum(dropout(a, 0.3, true, s), 10);
                      },
                      {a});
                }});
  cs.push_back({"attention", [](std::mt19937_64& rng, std::size_t r, std::size_t c) {
                  const std::size_t heads = 1 + rng() % 2;
                  const std::size_t dm = 2 * heads * (1 + c % 2);
                  ParameterStore store(rng());
                  MultiHeadAttention attn(store, "a", dm, heads);
                  auto q = random_tensor(rng, {r, dm});
                  auto kv = random_tensor(rng, {1 + rng() % 4, dm});
                  std::vector<Tensor> in{q, kv, attn.query_proj.weight, attn.key_proj.weight,
                                         attn.value_proj.weight, attn.out_proj.weight,
                                         attn.out_proj.bias};
                  return gradient_check(
                      [&] { return weighted_sum(attn(q, kv, kv, nullptr, {}), 11); }, in);
                }});
  for (HeadKind head : {HeadKind::Crf, HeadKind::Token}) {
    cs.push_back({"head_loss:" + to_string(head), [head](std::mt19937_64& rng, std::size_t r,
                                                        std::size_t c) {
                    NluConfig cfg;
                    cfg.layers = 1;
                    cfg.dm = 4;
                    cfg.heads = 2;
                    cfg.ff_dim = 8;
                    cfg.dropout = 0.0;
                    cfg.head = head;
                    cfg.num_tags = 2 + c % 4;
                    ParameterStore store(rng());
                    NluNet net(store, "n", cfg);
                    std::vector<Tensor> in{store.get("n/emission/weight"), store.get("n/emission/bias")};
                    if (head == HeadKind::Crf) {
                      for (const char* n : {"n/crf/transitions", "n/crf/start", "n/crf/end"}) {
                        for (auto& v : store.get(n).mutable_data()) v = std::uniform_real_distribution<>(-1, 1)(rng);
                        in.push_back(store.get(n));
                      }
                    }
                    auto h = random_tensor(rng, {r, 4});
                    auto s = random_tensor(rng, {1 + rng() % 3, 4});
                    in.push_back(h);
                    in.push_back(s);
                    std::vector<int> gold(r);
                    for (auto& g : gold) g = static_cast<int>(rng() % cfg.num_tags);
                    return gradient_check([&] { return net.head_loss(net.encode(h, &s), gold); }, in);
                  }});
  }
  return cs;
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = grad_cases();
  std::mt19937_64 rng(202);
  std::map<std::string, double> worst;
  for (int shape = 0; shape < 50; ++shape) {
    const std::size_t r = 1 + rng() % 4, c = 1 + rng() % 5;
    for (const auto& gc : cases) {
      std::mt19937_64 local(rng());
      worst[gc.name] = std::max(worst[gc.name], gc.check(local, r, c));
    }
  }
  const double t = seconds_since(t0);
  auto it = std::max_element(worst.begin(), worst.end(),
                             [](const auto& a, const auto& b) { return a.second < b.second; });
  const bool ok = it->second < 1e-4 && t < 60.0;
  return {ok, std::to_string(cases.size()) + " ops x 50 shapes, worst rel err " +
                  sci(it->second) + " (" + it->first + "), " + fmt(t, 1) + "s"};
}

// ---------------------------------------------------------------------------
// 3. Beam-search exactness

Outcome beam_exactness() {
  std::size_t agree = 0;
  double worst = 0.0;
  for (std::uint64_t m = 0; m < 20; ++m) {
    ParameterStore store(300 + m);
    SpeechEncoderConfig ec;
    ec.input_dim = 3;
    ec.layers = 1;
    ec.dm = 8;
    ec.heads = 2;
    ec.ff_dim = 16;
    ec.dropout = 0.0;
    SpeechEncoder enc(store, "enc", ec);
    DecoderConfig dc;
    dc.layers = 1;
    dc.dm = 8;
    dc.heads = 2;
    dc.ff_dim = 16;
    dc.dropout = 0.0;
    dc.vocab_size = 4;
    dc.max_decode_length = 3;
    TokenDecoder dec(store, "dec", dc);
    for (auto& x : store.get("dec/out/weight").mutable_data()) x *= 3.0;  // peakier distributions
    std::mt19937_64 rng(m);
    const auto h = enc.encode(oracle::random_tensor(rng, {3, 3}, -1, 1, false));
    const auto best = oracle::exhaustive_best_sequence(4, 3, [&](const std::vector<long>& p) {
      NoGradGuard g;
      const auto lp = log_softmax(dec.forward(h, p).logits);
      const auto row = lp.rows() - 1;
      return std::vector<double>(lp.data().begin() + static_cast<long>(row * 4),
                                 lp.data().begin() + static_cast<long>((row + 1) * 4));
    });
    // 3^3 + 3^2 + 3 + 1 live prefixes at most: 64 covers every sequence
    const auto beams = beam_search(dec, h, {64, 0.0});
    agree += !beams.empty() && beams[0].output() == best.tokens &&
             beams[0].ended_with_eos == best.ended_with_eos;
    if (!beams.empty()) worst = std::max(worst, std::abs(beams[0].log_prob - best.log_prob));
  }
  return {agree == 20 && worst < 1e-10,
          std::to_string(agree) + "/20 models match exhaustive argmax, max |logp err| " +
              sci(worst)};
}

// ---------------------------------------------------------------------------
// 4. Tagging totality and round trips

Outcome tagging_properties() {
  const LabelSet labels({"PER", "LOC", "TIME"});
  const SubwordSplitter splitter;
  const auto table = SubwordSplitter::piece_table();
  std::mt19937_64 rng(404);
  std::size_t failures = 0, thrown = 0;
  constexpr int kCases = 1000;

  auto random_words = [&](std::size_t n) {
    std::vector<std::string> ws(n);
    for (auto& w : ws) {
      for (std::size_t p = 1 + rng() % 3; p > 0; --p) w += table[rng() % table.size()];
    }
    return ws;
  };
  auto random_spans = [&](const std::vector<std::string>& ws) {
    std::vector<EntitySpan> spans;
    for (std::size_t i = 0; i < ws.size();) {
      if (rng() % 3 == 0) {
        const auto end = std::min(ws.size() - 1, i + rng() % 3);
        spans.push_back({labels.base()[rng() % 3], i, end, join_words(ws, i, end)});
        i = end + 1;
      } else {
        ++i;
      }
    }
    return spans;
  };

  for (int k = 0; k < kCases; ++k) {
    try {
      // spans <-> BIO
      const auto ws = random_words(1 + rng() % 8);
      const auto spans = random_spans(ws);
      failures += bio_to_spans(labels, spans_to_bio(labels, spans, ws.size()), ws) != spans;
      // arbitrary BIO decodes to spans the encoder accepts
      TagSequence noise(rng() % 9);
      for (auto& t : noise) t = static_cast<int>(rng() % labels.num_bio());
      spans_to_bio(labels, bio_to_spans(labels, noise), noise.size());
      // subtoken alignment
      const auto tok = splitter.tokenize(ws);
      TagSequence word_tags(ws.size());
      for (auto& t : word_tags) t = static_cast<int>(rng() % labels.num_bio());
      const auto aligned = align_to_subtokens(labels, word_tags, tok);
      const auto back = collapse_from_subtokens(labels, aligned, tok);
      failures += aligned.size() != tok.num_subtokens() || back.word_tags != word_tags ||
                  back.ignored_non_first != 0 || detokenize(tok.subtokens) != ws;
      // enriched codec
      const auto parsed = parse_enriched_sequence(build_enriched_sequence(ws, spans));
      failures += parsed.words != ws || parsed.spans != spans || parsed.malformed != 0;
    } catch (const std::exception&) {
      ++thrown;
    }
    // fuzz: token soup never throws and yields in-range spans
    try {
      std::vector<std::string> soup(rng() % 12);
      const std::vector<std::string> pool{"a", "b", "<PER>", "</PER>", "<LOC>", "</LOC>", "<", ">",
                                          "</>", "<TIME>", "</TIME>"};
      for (auto& t : soup) t = pool[rng() % pool.size()];
      const auto p = parse_enriched_sequence(soup);
      for (const auto& s : p.spans) failures += s.end >= p.words.size() || s.start > s.end;
    } catch (const std::exception&) {
      ++thrown;
    }
  }

  const std::vector<std::string> labels_only{"<PER>", "</PER>", "<LOC>", "<TIME>", "</TIME>", "</LOC>"};
  const auto corrupt = parse_enriched_sequence(labels_only);
  const bool corrupt_ok = corrupt.spans.empty() && corrupt.words.empty();
  return {failures == 0 && thrown == 0 && corrupt_ok,
          std::to_string(kCases) + " cases per property, failures " + std::to_string(failures) +
              ", exceptions " + std::to_string(thrown) + ", labels-only input -> " +
              std::to_string(corrupt.spans.size()) + " spans"};
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

F1Counts naive_counts(const SpanCorpus& gold, const SpanCorpus& pred, bool label_only) {
  F1Counts c;
  for (std::size_t u = 0; u < gold.size(); ++u) {
    std::vector<bool> used(gold[u].size());
    for (const auto& p : pred[u]) {
      bool hit = false;
      for (std::size_t g = 0; g < gold[u].size() && !hit; ++g) {
        if (used[g] || gold[u][g].label != p.label) continue;
        if (!label_only && normalize_mention(gold[u][g].mention) != normalize_mention(p.mention))
          continue;
        used[g] = hit = true;
      }
      (hit ? c.tp : c.fp) += 1.0;
    }
    c.fn += static_cast<double>(std::count(used.begin(), used.end(), false));
  }
  return c;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(505);
  std::size_t edit_bad = 0, f1_bad = 0, slu_bad = 0, quad_bad = 0;
  for (int k = 0; k < 500; ++k) {
    std::vector<std::string> a(rng() % 9), b(rng() % 9);
    for (auto& x : a) x = std::string(1, static_cast<char>('a' + rng() % 4));
    for (auto& x : b) x = std::string(1, static_cast<char>('a' + rng() % 4));
    const auto words = oracle::edit_distance_recursive(a, b);
    edit_bad += wer(a, b) != static_cast<double>(words) / static_cast<double>(std::max<std::size_t>(1, a.size()));
    std::string s, t;
    for (std::size_t i = rng() % 12; i > 0; --i) s += "ab c"[rng() % 4];
    for (std::size_t i = rng() % 12; i > 0; --i) t += "ab c"[rng() % 4];
    const auto chars = oracle::edit_distance_recursive(std::vector<char>(s.begin(), s.end()),
                                                       std::vector<char>(t.begin(), t.end()));
    edit_bad += cer(s, t) != static_cast<double>(chars) / static_cast<double>(std::max<std::size_t>(1, s.size()));
  }
  const std::vector<std::string> labels{"PER", "LOC", "TIME"};
  const std::vector<std::string> mentions{"a", "b", "a b", "c"};
  for (int k = 0; k < 300; ++k) {
    const std::size_t n = 1 + rng() % 5;
    SpanCorpus gold(n), pred(n), exact(n);
    TranscriptCorpus gw(n), hw(n);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t j = rng() % 4; j > 0; --j) gold[u].push_back({labels[rng() % 3], 0, 0, mentions[rng() % 4]});
      for (std::size_t j = rng() % 4; j > 0; --j) pred[u].push_back({labels[rng() % 3], 0, 0, mentions[rng() % 4]});
      for (const auto& g : gold[u]) {
        if (rng() % 2) exact[u].push_back(g);
      }
      gw[u] = {"x", "y"};
      hw[u] = rng() % 2 ? gw[u] : std::vector<std::string>{"x"};
    }
    for (auto mode : {MatchMode::Full, MatchMode::LabelOnly}) {
      const auto got = micro_f1(gold, pred, mode);
      const auto want = naive_counts(gold, pred, mode == MatchMode::LabelOnly);
      f1_bad += got.tp != want.tp || got.fp != want.fp || got.fn != want.fn;
    }
    slu_bad += std::abs(slu_f1(gold, exact).f1() - micro_f1(gold, exact, MatchMode::Full).f1()) > 1e-12;
    quad_bad += error_quadrants(gw, gold, hw, pred).total() != n;
  }
  return {edit_bad + f1_bad + slu_bad + quad_bad == 0,
          "WER/CER mismatches " + std::to_string(edit_bad) + "/1000, F1 count mismatches " +
              std::to_string(f1_bad) + "/600, SLU-F1 reduction mismatches " + std::to_string(slu_bad) +
              "/300, quadrant partition failures " + std::to_string(quad_bad) + "/300"};
}

// ---------------------------------------------------------------------------
// 6-10. Trained systems on the default synthetic corpus

struct Variant {
  std::string name;
  SystemKind kind;
  bool speech_attention;
  HeadKind head;
};

const std::vector<Variant> kVariants{
    {"compositional", SystemKind::Compositional, true, HeadKind::Crf},
    {"compositional/no-speech-attention", SystemKind::Compositional, false, HeadKind::Crf},
    {"compositional/token-head", SystemKind::Compositional, true, HeadKind::Token},
    {"direct", SystemKind::Direct, true, HeadKind::Crf},
    {"cascaded", SystemKind::Cascaded, true, HeadKind::Crf},
};

struct RunResult {
  ScoreReport beam;
  ScoreReport gold;  // not filled for direct
  ErrorQuadrants quadrants;
  double r = std::nan("");
  ProbeReport probe;  // compositional only
};

struct Matrix {
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::vector<RunResult>> runs;  // variant -> per seed

  std::vector<double> collect(const std::string& v, const std::function<double(const RunResult&)>& f) const {
    std::vector<double> out;
    for (const auto& r : runs.at(v)) out.push_back(f(r));
    return out;
  }
};

Matrix train_matrix(const std::vector<std::uint64_t>& seeds, std::size_t workers) {
  const auto corpus = generate_corpus(SynthConfig{});
  const auto& train = corpus.split("train");
  const auto& test = corpus.split("test");
  Matrix m;
  m.seeds = seeds;
  for (const auto& v : kVariants) {
    for (auto seed : seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      SystemConfig sc;
      sc.system = v.kind;
      sc.nlu.speech_attention = v.speech_attention;
      sc.nlu.head = v.head;
      sc.encoder.input_dim = train.front().frame_dim;
      TrainConfig tc;
      tc.seed = seed;
      SluSystem system(sc, corpus.labels, corpus.vocab, seed);
      train_system(system, train, tc);
      RunResult r;
      if (v.kind == SystemKind::Compositional && v.speech_attention && v.head == HeadKind::Crf) {
        r.probe = probe_subnets(system, test, workers);
        r.gold = score_predictions(test, r.probe.gold_transcript);
      } else {
        r.probe.beam = decode_corpus(system, test, DecodeMode::Beam, workers);
        if (v.kind != SystemKind::Direct) {
          r.gold = score_predictions(test, decode_corpus(system, test, DecodeMode::GoldTranscript, workers));
        }
      }
      r.beam = score_predictions(test, r.probe.beam);
      r.quadrants = quadrants_for(test, r.probe.beam);
      try {
        r.r = correlation_for(test, r.probe.beam).r;
      } catch (const UndefinedCorrelationError&) {
      }
      std::printf("  trained %-36s seed %llu: WER %s F1 %s Label-F1 %s (%.0fs)\n", v.name.c_str(),
                  static_cast<unsigned long long>(seed), fmt(r.beam.wer).c_str(), fmt(r.beam.f1()).c_str(),
                  fmt(r.beam.label_f1()).c_str(), seconds_since(t0));
      std::fflush(stdout);
      m.runs[v.name].push_back(std::move(r));
    }
  }
  return m;
}

Outcome trend_ordering(const Matrix& m) {
  const auto f1 = [](const RunResult& r) { return r.beam.f1(); };
  const auto comp = m.collect("compositional", f1), direct = m.collect("direct", f1),
             cascade = m.collect("cascaded", f1);
  const double c = median(comp), d = median(direct), k = median(cascade);
  return {c >= d && d >= k && (c - k) >= 0.02,
          "median F1 compositional " + fmt(c) + " " + list(comp) + ", direct " + fmt(d) + " " +
              list(direct) + ", cascaded " + fmt(k) + " " + list(cascade) + ", gap " +
              fmt(100.0 * (c - k), 2) + " points"};
}

Outcome speech_attention(const Matrix& m) {
  const auto lf = [](const RunResult& r) { return r.beam.label_f1(); };
  const auto wer = m.collect("compositional", [](const RunResult& r) { return r.probe.asr_wer; });
  const auto on = m.collect("compositional", lf), off = m.collect("compositional/no-speech-attention", lf);
  std::size_t rec_on = 0, rec_off = 0;
  for (const auto& r : m.runs.at("compositional")) rec_on += r.quadrants.asr_bad_entity_ok;
  for (const auto& r : m.runs.at("compositional/no-speech-attention")) rec_off += r.quadrants.asr_bad_entity_ok;
  const double w = median(wer);
  return {w >= 0.10 && w <= 0.30 && median(on) >= median(off) && rec_on >= rec_off,
          "probe WER " + fmt(w) + " " + list(wer) + ", median Label-F1 on " + fmt(median(on)) + " " +
              list(on) + " vs off " + fmt(median(off)) + " " + list(off) +
              ", (ASR wrong, entity right) recoveries on " + std::to_string(rec_on) + " vs off " +
              std::to_string(rec_off)};
}

Outcome injection(const Matrix& m) {
  const auto beam = m.collect("compositional", [](const RunResult& r) { return r.beam.f1(); });
  const auto gold = m.collect("compositional", [](const RunResult& r) { return r.gold.f1(); });
  std::vector<double> gain;
  for (std::size_t i = 0; i < beam.size(); ++i) gain.push_back(gold[i] - beam[i]);
  return {median(gain) >= 0.05, "gold-transcript F1 " + list(gold) + " vs beam F1 " + list(beam) +
                                    ", median gain " + fmt(100.0 * median(gain), 2) + " points"};
}

Outcome probes(const Matrix& m) {
  bool ok = true;
  std::string d;
  for (std::size_t i = 0; i < m.seeds.size(); ++i) {
    const auto& p = m.runs.at("compositional")[i].probe;
    ok = ok && std::isfinite(p.asr_wer) && !p.gold_transcript.empty() && p.nlu_f1 >= p.end_to_end_f1;
    d += (d.empty() ? "" : "; ") + std::string("seed ") + std::to_string(m.seeds[i]) + ": WER " +
         fmt(p.asr_wer) + ", NLU F1 " + fmt(p.nlu_f1) + " >= E2E F1 " + fmt(p.end_to_end_f1);
  }
  return {ok, d};
}

Outcome confidence(const Matrix& m) {
  const auto rr = [](const RunResult& r) { return r.r; };
  const auto crf_r = m.collect("compositional", rr), tok_r = m.collect("compositional/token-head", rr);
  const double c = median(crf_r), t = median(tok_r);
  return {c > t && t > 0.0, "median r CRF head " + fmt(c) + " " + list(crf_r) + " vs token head " +
                                fmt(t) + " " + list(tok_r)};
}

// ---------------------------------------------------------------------------
// 11. Determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(std::size_t workers) {
  const auto root = fs::temp_directory_path() / "compslu_acceptance_determinism";
  fs::remove_all(root);
  SynthConfig sc;
  sc.n_train = 200;
  sc.n_dev = 20;
  sc.n_test = 40;
  std::vector<std::string> corpus_bytes, dump_bytes;
  std::vector<double> step0;
  for (int run = 0; run < 2; ++run) {
    const auto dir = root / ("run" + std::to_string(run));
    const auto corpus = generate_corpus(sc);
    write_corpus(corpus, dir);
    std::string bytes;
    for (const char* f : {"train.meta", "train.frames", "dev.meta", "dev.frames", "test.meta",
                          "test.frames", "labels.txt", "vocab.txt"}) {
      bytes += slurp(dir / f);
    }
    corpus_bytes.push_back(bytes);

    const auto loaded = read_corpus(dir);
    SystemConfig cfg;
    cfg.encoder.input_dim = sc.frame_dim;
    TrainConfig tc;
    tc.max_steps = 30;
    SluSystem system(cfg, loaded.labels, loaded.vocab, tc.seed);
    step0.push_back(initial_loss(system, loaded.split("train"), tc).total);
    train_system(system, loaded.split("train"), tc);
    // the second run decodes with a different worker count
    write_predictions(dir / "predictions.jsonl",
                      decode_corpus(system, loaded.split("test"), DecodeMode::Beam, run == 0 ? 1 : workers));
    dump_bytes.push_back(slurp(dir / "predictions.jsonl"));
  }
  const bool ok = corpus_bytes[0] == corpus_bytes[1] && step0[0] == step0[1] &&
                  dump_bytes[0] == dump_bytes[1] && !dump_bytes[0].empty();
  fs::remove_all(root);
  return {ok, std::string("corpus files ") + (corpus_bytes[0] == corpus_bytes[1] ? "identical" : "differ") +
                  ", step-0 loss " + std::to_string(step0[0]) + " vs " + std::to_string(step0[1]) +
                  ", decode dumps " + (dump_bytes[0] == dump_bytes[1] ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compslu acceptance suite"};
  std::vector<int> only;
  std::size_t workers = default_workers();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  app.add_option("--only", only, "Run only these criteria (1-11)")->delimiter(',');
  app.add_option("--workers", workers, "Decode threads");
  std::vector<int> expected;
  app.add_option("--seeds", seeds, "Training seeds for criteria 6-10")->delimiter(',');
  app.add_option("--expected-failures", expected,
                 "Criteria whose failure is reported but does not fail the run")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> known(expected.begin(), expected.end());
  const auto want = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  std::vector<std::pair<int, std::string>> names{
      {1, "CRF exactness"},          {2, "gradient correctness"},  {3, "beam-search exactness"},
      {4, "tagging properties"},     {5, "metric oracles"},        {6, "end-to-end ordering"},
      {7, "speech-attention recovery"}, {8, "transcript injection"}, {9, "transparency probes"},
      {10, "confidence correlation"}, {11, "determinism"}};

  std::optional<Matrix> matrix;
  const auto trained = [&]() -> const Matrix& {
    if (!matrix) {
      std::printf("training %zu systems on the default synthetic corpus...\n", kVariants.size() * seeds.size());
      std::fflush(stdout);
      matrix = train_matrix(seeds, workers);
    }
    return *matrix;
  };

  const std::map<int, std::function<Outcome()>> checks{
      {1, crf_exactness},
      {2, gradient_correctness},
      {3, beam_exactness},
      {4, tagging_properties},
      {5, metric_oracles},
      {6, [&] { return trend_ordering(trained()); }},
      {7, [&] { return speech_attention(trained()); }},
      {8, [&] { return injection(trained()); }},
      {9, [&] { return probes(trained()); }},
      {10, [&] { return confidence(trained()); }},
      {11, [&] { return determinism(workers); }},
  };

  std::size_t failed = 0, failed_known = 0, ran = 0;
  for (const auto& [id, name] : names) {
    if (!want(id)) continue;
    Outcome o;
    try {
      o = checks.at(id)();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    const bool is_known = known.count(id) > 0;
    if (!o.pass) (is_known ? failed_known : failed) += 1;
    char line[96];
    std::snprintf(line, sizeof line, "[%s] %2d %-28s", o.pass ? "PASS" : "FAIL", id, name.c_str());
    std::printf("%s %s%s\n", line, o.detail.c_str(), !o.pass && is_known ? " (expected)" : "");
    std::fflush(stdout);
  }
  std::printf("\n%zu/%zu criteria passed", ran - failed - failed_known, ran);
  if (failed_known > 0) std::printf(", %zu expected failure(s)", failed_known);
  std::printf("\n");
  return failed == 0 ? 0 : 1;
}
