#include "compslu/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>

#include "compslu/checkpoint.hpp"
#include "compslu/errors.hpp"
#include "compslu/parallel.hpp"

namespace compslu {

SystemKind parse_system_kind(const std::string& name) {
  if (name == "compositional") return SystemKind::Compositional;
  if (name == "compositional-direct") return SystemKind::CompositionalDirect;
  if (name == "direct") return SystemKind::Direct;
  if (name == "cascaded") return SystemKind::Cascaded;
  throw ConfigError("unknown system '" + name +
                    "' (expected compositional, compositional-direct, direct or cascaded)");
}

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::Compositional: return "compositional";
    case SystemKind::CompositionalDirect: return "compositional-direct";
    case SystemKind::Direct: return "direct";
    case SystemKind::Cascaded: return "cascaded";
  }
  return "compositional";
}

// --- configuration ----------------------------------------------------------------

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  TrainConfig c;
  c.alpha = cfg.get_double("train.alpha", c.alpha);
  auto& o = c.optimizer;
  o.peak_lr = cfg.get_double("train.lr", o.peak_lr);
  o.warmup_steps = cfg.get_size("train.warmup_steps", o.warmup_steps);
  o.schedule = parse_schedule_kind(cfg.get_string("train.schedule", to_string(o.schedule)));
  o.decay = cfg.get_double("train.decay", o.decay);
  o.beta1 = cfg.get_double("train.beta1", o.beta1);
  o.beta2 = cfg.get_double("train.beta2", o.beta2);
  o.eps = cfg.get_double("train.eps", o.eps);
  o.weight_decay = cfg.get_double("train.weight_decay", o.weight_decay);
  o.clip_norm = cfg.get_double("train.clip_norm", o.clip_norm);
  c.batch_size = cfg.get_size("train.batch_size", c.batch_size);
  c.max_steps = cfg.get_size("train.max_steps", c.max_steps);
  c.seed = cfg.get_u64("train.seed", c.seed);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("train.alpha must be >= 0");
  if (!(optimizer.peak_lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (optimizer.clip_norm <= 0.0) throw ConfigError("train.clip_norm must be > 0");
}

SystemConfig::SystemConfig() {
  decoder.max_decode_length = 64;
  nlu_decoder.max_decode_length = 64;
}

SystemConfig SystemConfig::from_config(const KeyValueConfig& cfg) {
  SystemConfig c;
  c.system = parse_system_kind(cfg.get_string("system", to_string(c.system)));
  const auto dm = cfg.get_size("model.dm", c.encoder.dm);
  const double dropout = cfg.get_double("model.dropout", c.encoder.dropout);
  const auto heads = cfg.get_size("model.heads", c.encoder.heads);
  const auto ff = cfg.get_size("model.ff_dim", c.encoder.ff_dim);

  auto& e = c.encoder;
  e.dm = dm;
  e.input_dim = cfg.get_size("encoder.input_dim", e.input_dim);
  e.layers = cfg.get_size("encoder.layers", e.layers);
  e.heads = cfg.get_size("encoder.heads", heads);
  e.ff_dim = cfg.get_size("encoder.ff_dim", ff);
  e.dropout = cfg.get_double("encoder.dropout", dropout);
  e.positional_encoding = cfg.get_bool("encoder.positional_encoding", e.positional_encoding);

  const auto read_decoder = [&](const std::string& p, DecoderConfig& d) {
    d.dm = dm;
    d.layers = cfg.get_size(p + ".layers", d.layers);
    d.heads = cfg.get_size(p + ".heads", heads);
    d.ff_dim = cfg.get_size(p + ".ff_dim", ff);
    d.dropout = cfg.get_double(p + ".dropout", dropout);
    d.max_decode_length = cfg.get_size(p + ".max_length", d.max_decode_length);
  };
  read_decoder("decoder", c.decoder);
  read_decoder("nlu_decoder", c.nlu_decoder);

  auto& n = c.nlu;
  n.dm = dm;
  n.layers = cfg.get_size("nlu.layers", n.layers);
  n.heads = cfg.get_size("nlu.heads", heads);
  n.ff_dim = cfg.get_size("nlu.ff_dim", ff);
  n.dropout = cfg.get_double("nlu.dropout", dropout);
  n.speech_attention = cfg.get_bool("nlu.speech_attention", n.speech_attention);
  n.head = parse_head_kind(cfg.get_string("nlu.head", to_string(n.head)));

  c.beam.beam = cfg.get_size("decode.beam", c.beam.beam);
  c.beam.length_penalty = cfg.get_double("decode.length_penalty", c.beam.length_penalty);
  if (c.beam.beam == 0) throw ConfigError("decode.beam must be >= 1");
  return c;
}

// --- model ------------------------------------------------------------------------

Tokenization tokenization_from_subtokens(const std::vector<std::string>& subtokens) {
  Tokenization tok;
  tok.subtokens = subtokens;
  for (const auto& s : subtokens) {
    const bool continuation = s.rfind(kContinuationPrefix, 0) == 0;
    if (continuation && !tok.words.empty()) {
      tok.words.back() += s.substr(kContinuationPrefix.size());
      tok.first_subtoken.push_back(false);
    } else {
      const auto rest = continuation ? s.substr(kContinuationPrefix.size()) : s;
      tok.words.push_back(rest.empty() ? s : rest);
      tok.first_subtoken.push_back(true);
    }
    tok.word_of_subtoken.push_back(tok.words.size() - 1);
  }
  return tok;
}

SluSystem::SluSystem(SystemConfig config, LabelSet labels, Vocabulary vocab,
                     std::uint64_t init_seed)
    : config_(std::move(config)),
      labels_(std::move(labels)),
      vocab_(std::move(vocab)),
      store_(init_seed) {
  if (labels_.num_base() == 0) throw ConfigError("system needs at least one entity label");
  const auto dm = config_.encoder.dm;
  config_.decoder.dm = config_.nlu.dm = config_.nlu_decoder.dm = dm;
  config_.decoder.vocab_size =
      config_.system == SystemKind::Direct ? vocab_.size() : vocab_.num_plain();
  config_.nlu_decoder.vocab_size = vocab_.size();
  config_.nlu.num_tags = labels_.num_aligned();
  if (config_.system == SystemKind::Cascaded) config_.nlu.speech_attention = false;

  encoder_ = SpeechEncoder(store_, "encoder", config_.encoder);
  switch (config_.system) {
    case SystemKind::Compositional:
      decoder_ = TokenDecoder(store_, "asr", config_.decoder);
      nlu_ = NluNet(store_, "nlu", config_.nlu);
      break;
    case SystemKind::CompositionalDirect:
      decoder_ = TokenDecoder(store_, "asr", config_.decoder);
      nlu_encoder_ = NluEncoder(store_, "nlu", config_.nlu);
      nlu_decoder_ = TokenDecoder(store_, "nlu_decoder", config_.nlu_decoder);
      break;
    case SystemKind::Direct:
      decoder_ = TokenDecoder(store_, "direct", config_.decoder);
      break;
    case SystemKind::Cascaded:
      decoder_ = TokenDecoder(store_, "asr", config_.decoder);
      text_embed_ = Embedding(store_, "text/embed", vocab_.num_plain(), dm);
      nlu_ = NluNet(store_, "nlu", config_.nlu);
      break;
  }
}

std::vector<Tensor> SluSystem::asr_parameters() const {
  if (config_.system == SystemKind::Direct) {
    std::vector<Tensor> all;
    for (const auto& [name, t] : store_.entries()) all.push_back(t);
    return all;
  }
  auto out = store_.with_prefix("encoder/");
  for (auto& t : store_.with_prefix("asr/")) out.push_back(t);
  return out;
}

std::vector<Tensor> SluSystem::nlu_parameters() const {
  std::vector<Tensor> out;
  if (config_.system == SystemKind::Direct) return out;
  for (const auto& [name, t] : store_.entries()) {
    if (name.rfind("encoder/", 0) != 0 && name.rfind("asr/", 0) != 0) out.push_back(t);
  }
  return out;
}

TokenIds SluSystem::transcript_target(const Example& ex) const {
  const auto tok = splitter_.tokenize(ex.words);
  TokenIds ids{Vocabulary::kBos};
  for (long id : vocab_.encode(tok.subtokens)) ids.push_back(id);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

TokenIds SluSystem::enriched_target(const Example& ex) const {
  std::vector<std::string> pieces;
  for (const auto& token : build_enriched_sequence(ex.words, ex.spans)) {
    if (is_marker(token)) {
      pieces.push_back(token);
    } else {
      for (auto& p : splitter_.split(token)) pieces.push_back(std::move(p));
    }
  }
  TokenIds ids{Vocabulary::kBos};
  for (long id : vocab_.encode(pieces)) ids.push_back(id);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

TagSequence SluSystem::subtoken_tags(const Example& ex) const {
  const auto tok = splitter_.tokenize(ex.words);
  const auto word_tags = spans_to_bio(labels_, ex.spans, ex.words.size());
  return align_to_subtokens(labels_, word_tags, tok);
}

Tensor SluSystem::speech_states(const Example& ex, const ForwardContext& ctx) const {
  return encoder_.encode(ex.frame_tensor(), ctx);
}

Tensor SluSystem::text_states(std::span<const long> ids, const ForwardContext& ctx) const {
  const auto dm = config_.nlu.dm;
  auto h = scale(text_embed_(ids), std::sqrt(static_cast<double>(dm)));
  return ctx.apply_dropout(add(h, positional_encoding(ids.size(), dm)));
}

Tensor SluSystem::loss(const Example& ex, double alpha, const LossContext& lc,
                       LossParts* parts) const {
  if (ex.words.empty()) {
    throw DataError("utterance " + ex.id + " has no transcript; joint training needs one");
  }
  const ForwardContext enc_ctx{lc.train, config_.encoder.dropout, lc.asr_stream};
  const ForwardContext dec_ctx{lc.train, config_.decoder.dropout, lc.asr_stream};
  const ForwardContext nlu_ctx{lc.train, config_.nlu.dropout, lc.nlu_stream};
  const ForwardContext nlu_dec_ctx{lc.train, config_.nlu_decoder.dropout, lc.nlu_stream};
  const auto speech = speech_states(ex, enc_ctx);

  // Sequence-level negative log-likelihoods throughout, so the two terms
  // share a scale.
  const auto seq_nll = [](const TokenDecoder& d, const Tensor& memory, const TokenIds& target,
                          const ForwardContext& ctx) {
    return scale(d.teacher_forced_nll(memory, target, ctx), static_cast<double>(target.size() - 1));
  };

  LossParts p;
  Tensor total;
  if (config_.system == SystemKind::Direct) {
    total = seq_nll(decoder_, speech, enriched_target(ex), dec_ctx);
    p.asr = total.item();
  } else {
    const auto target = transcript_target(ex);
    const std::span<const long> ids(target);
    const auto n = target.size() - 2;
    const auto out = decoder_.forward(speech, ids.first(n + 1), dec_ctx);
    const auto l_asr =
        scale(softmax_cross_entropy(out.logits, ids.subspan(1)), static_cast<double>(n + 1));
    p.asr = l_asr.item();
    total = l_asr;
    if (config_.system == SystemKind::Cascaded) {
      const auto h = nlu_.encode(text_states(ids.subspan(1, n), nlu_ctx), nullptr, nlu_ctx);
      const auto l_nlu = nlu_.head_loss(h, subtoken_tags(ex));
      p.nlu = l_nlu.item();
      total = add(total, l_nlu);
    } else if (alpha > 0.0) {
      const auto h_asr = slice_rows(out.hidden, 1, n + 1);
      Tensor l_nlu;
      if (config_.system == SystemKind::Compositional) {
        l_nlu = nlu_.head_loss(nlu_.encode(h_asr, &speech, nlu_ctx), subtoken_tags(ex));
      } else {
        const auto memory = nlu_encoder_(h_asr, &speech, nlu_ctx);
        l_nlu = seq_nll(nlu_decoder_, memory, enriched_target(ex), nlu_dec_ctx);
      }
      p.nlu = l_nlu.item();
      total = add(total, scale(l_nlu, alpha));
    }
  }
  p.total = total.item();
  if (parts) *parts = p;
  return total;
}

Prediction SluSystem::label_subtokens(const Example& ex, const std::vector<std::string>& subtokens,
                                      const Tensor& nlu_input, const Tensor& speech,
                                      PredictionSource source) const {
  Prediction p;
  p.id = ex.id;
  p.source = source;
  p.subtokens = subtokens;
  if (subtokens.empty()) {
    p.empty_output = true;
    return p;
  }
  const auto tok = tokenization_from_subtokens(subtokens);
  p.words = tok.words;
  const auto decoded = nlu_.head_decode(nlu_.encode(nlu_input, &speech));
  const auto collapsed = collapse_from_subtokens(labels_, decoded.tags, tok);
  p.spans = bio_to_spans(labels_, collapsed.word_tags, p.words);
  p.log_likelihood = decoded.log_likelihood;
  p.validate();
  return p;
}

Prediction SluSystem::generate_enriched(const Example& ex, const Tensor& memory,
                                        const TokenDecoder& decoder,
                                        PredictionSource source) const {
  Prediction p;
  p.id = ex.id;
  p.source = source;
  const auto hyps = beam_search(decoder, memory, config_.beam);
  if (hyps.empty() || hyps.front().output().empty()) {
    p.empty_output = true;
    return p;
  }
  const auto tokens = vocab_.decode(hyps.front().output());
  for (const auto& t : tokens) {
    if (!is_marker(t)) p.subtokens.push_back(t);
  }
  auto parsed = parse_enriched_sequence(detokenize(tokens));
  p.words = std::move(parsed.words);
  p.spans = std::move(parsed.spans);
  p.malformed_markers = parsed.malformed;
  p.log_likelihood = hyps.front().log_prob;
  p.validate();
  return p;
}

Prediction SluSystem::predict(const Example& ex) const {
  NoGradGuard guard;
  const auto speech = speech_states(ex, {});
  if (config_.system == SystemKind::Direct) {
    return generate_enriched(ex, speech, decoder_, PredictionSource::Beam);
  }
  const auto hyps = beam_search(decoder_, speech, config_.beam);
  if (hyps.empty() || hyps.front().output().empty()) {
    Prediction p;
    p.id = ex.id;
    p.empty_output = true;
    return p;
  }
  const auto& best = hyps.front();
  const auto ids = best.output();
  const auto subtokens = vocab_.decode(ids);
  switch (config_.system) {
    case SystemKind::Compositional:
      return label_subtokens(ex, subtokens, best.trace_tensor(config_.decoder.dm), speech,
                             PredictionSource::Beam);
    case SystemKind::Cascaded:
      return label_subtokens(ex, subtokens, text_states(ids, {}), speech,
                             PredictionSource::Beam);
    default: {
      const auto memory = nlu_encoder_(best.trace_tensor(config_.decoder.dm), &speech, {});
      return generate_enriched(ex, memory, nlu_decoder_, PredictionSource::Beam);
    }
  }
}

Prediction SluSystem::predict_injected(const Example& ex, const std::vector<std::string>& words,
                                       const std::vector<std::string>& subtokens,
                                       PredictionSource source) const {
  if (config_.system == SystemKind::Direct) {
    throw ConfigError("the direct system has no transcript input to inject into");
  }
  NoGradGuard guard;
  const auto pieces = subtokens.empty() ? splitter_.tokenize(words).subtokens : subtokens;
  if (pieces.empty()) throw ValidationError("injected transcript for " + ex.id + " is empty");
  const auto ids = vocab_.encode(pieces);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 2 || static_cast<std::size_t>(ids[i]) >= vocab_.num_plain()) {
      throw VocabularyError("injected transcript for " + ex.id + " contains '" + pieces[i] +
                            "', which is not a transcript token");
    }
  }
  const auto speech = speech_states(ex, {});
  switch (config_.system) {
    case SystemKind::Compositional:
      return label_subtokens(ex, pieces, decoder_.force_decode(speech, ids), speech, source);
    case SystemKind::Cascaded:
      return label_subtokens(ex, pieces, text_states(ids, {}), speech, source);
    default: {
      const auto memory = nlu_encoder_(decoder_.force_decode(speech, ids), &speech, {});
      return generate_enriched(ex, memory, nlu_decoder_, source);
    }
  }
}

// --- training ---------------------------------------------------------------------

namespace {

/// Epoch-wise shuffled example order.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void check_trainable(const std::vector<Example>& train, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw DataError("training split is empty");
}

}  // namespace

TrainStats train_system(SluSystem& system, const std::vector<Example>& train,
                        const TrainConfig& config, const TrainCallback& callback) {
  check_trainable(train, config);
  BatchSampler sampler(train.size(), config.seed);
  DropoutStream asr_stream(2 * config.seed + 1), nlu_stream(2 * config.seed + 2);
  const LossContext ctx{true, &asr_stream, &nlu_stream};

  // The cascade's halves are independent models, so each gets its own
  // optimizer and clipping.
  std::vector<Adam> optimizers;
  if (system.config().system == SystemKind::Cascaded) {
    optimizers.emplace_back(system.asr_parameters(), config.optimizer);
    optimizers.emplace_back(system.nlu_parameters(), config.optimizer);
  } else {
    std::vector<Tensor> all;
    for (const auto& [name, t] : system.params().entries()) all.push_back(t);
    optimizers.emplace_back(all, config.optimizer);
  }

  TrainStats stats;
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    system.params().zero_grad();
    LossParts mean;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      LossParts parts;
      const auto loss = system.loss(train[sampler.next()], config.alpha, ctx, &parts);
      scale(loss, inv_batch).backward();
      mean.asr += parts.asr * inv_batch;
      mean.nlu += parts.nlu * inv_batch;
      mean.total += parts.total * inv_batch;
    }
    double sq = 0.0;
    for (auto& opt : optimizers) {
      const double n = opt.step();
      sq += n * n;
    }
    stats = {step, mean, std::sqrt(sq)};
    if (callback) callback(stats);
  }
  return stats;
}

LossParts initial_loss(const SluSystem& system, const std::vector<Example>& train,
                       const TrainConfig& config) {
  check_trainable(train, config);
  NoGradGuard guard;
  BatchSampler sampler(train.size(), config.seed);
  DropoutStream asr_stream(2 * config.seed + 1), nlu_stream(2 * config.seed + 2);
  const LossContext ctx{true, &asr_stream, &nlu_stream};
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
  LossParts mean;
  for (std::size_t b = 0; b < config.batch_size; ++b) {
    LossParts parts;
    system.loss(train[sampler.next()], config.alpha, ctx, &parts);
    mean.asr += parts.asr * inv_batch;
    mean.nlu += parts.nlu * inv_batch;
    mean.total += parts.total * inv_batch;
  }
  return mean;
}

// --- corpus-level inference ---------------------------------------------------------

std::vector<Prediction> decode_corpus(const SluSystem& system, const std::vector<Example>& examples,
                                      DecodeMode mode, std::size_t workers,
                                      const std::vector<Prediction>& injected) {
  std::map<std::string, const Prediction*> external;
  if (mode == DecodeMode::Injected) {
    for (const auto& p : injected) external[p.id] = &p;
    for (const auto& ex : examples) {
      if (!external.count(ex.id)) throw DataError("no injected transcript for " + ex.id);
    }
  }
  return parallel_map(examples.size(), workers, [&](std::size_t i) {
    const auto& ex = examples[i];
    switch (mode) {
      case DecodeMode::Beam: return system.predict(ex);
      case DecodeMode::GoldTranscript: return system.predict_gold(ex);
      case DecodeMode::Injected: {
        const auto& src = *external.at(ex.id);
        if (src.empty_output && src.words.empty()) {
          // replaying a dump: an empty hypothesis stays empty
          Prediction p;
          p.id = ex.id;
          p.source = PredictionSource::Injected;
          p.empty_output = true;
          return p;
        }
        return system.predict_injected(ex, src.words, src.subtokens);
      }
    }
    return system.predict(ex);
  });
}

ProbeReport probe_subnets(const SluSystem& system, const std::vector<Example>& examples,
                          std::size_t workers) {
  ProbeReport r;
  r.beam = decode_corpus(system, examples, DecodeMode::Beam, workers);
  r.gold_transcript = decode_corpus(system, examples, DecodeMode::GoldTranscript, workers);
  const auto beam_score = score_predictions(examples, r.beam);
  r.asr_wer = beam_score.wer;
  r.end_to_end_f1 = beam_score.f1();
  r.nlu_f1 = score_predictions(examples, r.gold_transcript).f1();
  return r;
}

// --- checkpoints ------------------------------------------------------------------

void save_system(const std::filesystem::path& dir, const SluSystem& system,
                 const KeyValueConfig& config, std::uint64_t seed, std::uint64_t step) {
  std::filesystem::create_directories(dir);
  const auto text = config.serialize();
  save_checkpoint(dir / "model.ckpt", system.params(), {config.hash(), step, seed, text});
  std::ofstream(dir / "config.txt") << text;
  system.labels().write(dir / "labels.txt");
  system.vocab().write(dir / "vocab.txt");
}

std::unique_ptr<SluSystem> load_system(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "model.ckpt")) {
    throw DataError("no checkpoint at " + (dir / "model.ckpt").string());
  }
  const auto meta = read_checkpoint_meta(dir / "model.ckpt");
  const auto config = KeyValueConfig::parse_file(dir / "config.txt");
  if (config.hash() != meta.config_hash) {
    throw DataError((dir / "config.txt").string() + " does not match the checkpoint it sits beside");
  }
  auto system = std::make_unique<SluSystem>(SystemConfig::from_config(config),
                                            LabelSet::read(dir / "labels.txt"),
                                            Vocabulary::read(dir / "vocab.txt"), meta.seed);
  load_checkpoint(dir / "model.ckpt", system->params());
  return system;
}

}  // namespace compslu
