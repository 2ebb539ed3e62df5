#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "compslu/asr.hpp"
#include "compslu/config.hpp"
#include "compslu/nlu.hpp"
#include "compslu/optim.hpp"
#include "compslu/prediction.hpp"
#include "compslu/synth.hpp"

namespace compslu {

/// Compositional: ASR sub-network whose decoder states feed a tagging NLU.
/// CompositionalDirect: same ASR sub-network, but the NLU generates the
///   enriched transcript from the decoder states.
/// Direct: one encoder-decoder over enriched transcripts.
/// Cascaded: separately trained ASR and text NLU, piped through words.
enum class SystemKind { Compositional, CompositionalDirect, Direct, Cascaded };

SystemKind parse_system_kind(const std::string& name);
std::string to_string(SystemKind kind);

struct TrainConfig {
  double alpha = 0.5;  // NLU loss weight
  OptimizerConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t max_steps = 6000;
  std::uint64_t seed = 1;

  /// Reads `train.*` keys.
  static TrainConfig from_config(const KeyValueConfig& cfg);
  void validate() const;
};

/// Architecture. Vocabulary and tag-set sizes come from the corpus.
struct SystemConfig {
  SystemKind system = SystemKind::Compositional;
  SpeechEncoderConfig encoder;
  DecoderConfig decoder;      // ASR decoder, or the enriched decoder of Direct
  NluConfig nlu;              // tagging NLU, text NLU, or CompositionalDirect's encoder
  DecoderConfig nlu_decoder;  // CompositionalDirect only
  BeamConfig beam;

  SystemConfig();
  /// Reads `system`, `model.*`, `encoder.*`, `decoder.*`, `nlu.*`,
  /// `nlu_decoder.*` and `decode.*` keys.
  static SystemConfig from_config(const KeyValueConfig& cfg);
};

/// Dropout streams for one training step. The ASR and NLU sides draw from
/// separate streams so that NLU-side computation never shifts ASR dropout.
struct LossContext {
  bool train = false;
  DropoutStream* asr_stream = nullptr;
  DropoutStream* nlu_stream = nullptr;
};

struct LossParts {
  double asr = 0.0;
  double nlu = 0.0;
  double total = 0.0;
};

class SluSystem {
 public:
  SluSystem(SystemConfig config, LabelSet labels, Vocabulary vocab, std::uint64_t init_seed);
  SluSystem(const SluSystem&) = delete;
  SluSystem& operator=(const SluSystem&) = delete;

  const SystemConfig& config() const { return config_; }
  const LabelSet& labels() const { return labels_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  /// Speech encoder and transcript decoder; every parameter for Direct.
  std::vector<Tensor> asr_parameters() const;
  /// Everything else.
  std::vector<Tensor> nlu_parameters() const;

  /// Training loss for one utterance: L_asr + alpha * L_nlu (Cascaded adds
  /// its two independent losses with weight 1). With alpha = 0 the NLU side
  /// is not evaluated at all. Throws DataError for an utterance without a
  /// transcript.
  Tensor loss(const Example& ex, double alpha, const LossContext& ctx,
              LossParts* parts = nullptr) const;

  /// Gold targets the model is trained on.
  TokenIds transcript_target(const Example& ex) const;  // BOS subtokens EOS
  TokenIds enriched_target(const Example& ex) const;    // BOS enriched subtokens EOS
  TagSequence subtoken_tags(const Example& ex) const;   // over L''

  /// Beam-searches the speech and labels the result.
  Prediction predict(const Example& ex) const;
  /// Labels an externally supplied transcript with no parameter updates.
  /// `subtokens`, when non-empty, fixes the tokenization of `words`.
  Prediction predict_injected(const Example& ex, const std::vector<std::string>& words,
                              const std::vector<std::string>& subtokens = {},
                              PredictionSource source = PredictionSource::Injected) const;
  Prediction predict_gold(const Example& ex) const {
    return predict_injected(ex, ex.words, {}, PredictionSource::GroundTruth);
  }

 private:
  Tensor speech_states(const Example& ex, const ForwardContext& ctx) const;
  Tensor text_states(std::span<const long> ids, const ForwardContext& ctx) const;
  Prediction label_subtokens(const Example& ex, const std::vector<std::string>& subtokens,
                             const Tensor& nlu_input, const Tensor& speech,
                             PredictionSource source) const;
  Prediction generate_enriched(const Example& ex, const Tensor& memory,
                               const TokenDecoder& decoder, PredictionSource source) const;

  SystemConfig config_;
  LabelSet labels_;
  Vocabulary vocab_;
  SubwordSplitter splitter_;
  ParameterStore store_;
  SpeechEncoder encoder_;
  TokenDecoder decoder_;
  NluNet nlu_;
  NluEncoder nlu_encoder_;
  TokenDecoder nlu_decoder_;
  Embedding text_embed_;
};

/// Word/subtoken view of a decoded subtoken sequence. A continuation piece
/// with no word to attach to starts a new word.
Tokenization tokenization_from_subtokens(const std::vector<std::string>& subtokens);

struct TrainStats {
  std::size_t step = 0;  // 1-based, after the update
  LossParts loss;        // batch mean before the update
  double grad_norm = 0.0;
};

using TrainCallback = std::function<void(const TrainStats&)>;

/// Single-threaded and deterministic given the config. Returns the stats of
/// the last step.
TrainStats train_system(SluSystem& system, const std::vector<Example>& train,
                        const TrainConfig& config, const TrainCallback& callback = {});

/// Batch-mean loss at step 0 (before any update) in training mode.
LossParts initial_loss(const SluSystem& system, const std::vector<Example>& train,
                       const TrainConfig& config);

enum class DecodeMode { Beam, Injected, GoldTranscript };

/// Fans utterances out to `workers` threads; output follows input order.
/// Injected mode takes transcripts from `injected`, matched by id; a record
/// flagged as empty output is replayed as an empty prediction.
std::vector<Prediction> decode_corpus(const SluSystem& system, const std::vector<Example>& examples,
                                      DecodeMode mode, std::size_t workers,
                                      const std::vector<Prediction>& injected = {});

struct ProbeReport {
  double asr_wer = 0.0;        // beam transcripts vs gold
  double nlu_f1 = 0.0;         // tagging given gold transcripts
  double end_to_end_f1 = 0.0;  // tagging given beam transcripts
  std::vector<Prediction> beam;
  std::vector<Prediction> gold_transcript;
};

/// Scores each sub-network in isolation from one checkpoint.
ProbeReport probe_subnets(const SluSystem& system, const std::vector<Example>& examples,
                          std::size_t workers);

/// Checkpoint directory: `model.ckpt`, `config.txt`, `labels.txt`, `vocab.txt`.
void save_system(const std::filesystem::path& dir, const SluSystem& system,
                 const KeyValueConfig& config, std::uint64_t seed, std::uint64_t step);
std::unique_ptr<SluSystem> load_system(const std::filesystem::path& dir);

}  // namespace compslu
