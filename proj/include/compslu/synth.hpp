#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "compslu/asr.hpp"
#include "compslu/config.hpp"
#include "compslu/tagging.hpp"
#include "compslu/tensor.hpp"

namespace compslu {

/// One utterance: frames X (T x d, row-major), words S and gold spans.
struct Example {
  std::string id;
  std::vector<std::string> words;
  std::vector<EntitySpan> spans;
  std::size_t frame_dim = 0;
  std::vector<float> frames;

  std::size_t num_frames() const { return frame_dim ? frames.size() / frame_dim : 0; }
  Tensor frame_tensor() const;
  std::uint64_t frames_checksum() const;
};

inline const std::vector<std::string> kSplitNames{"train", "dev", "test"};

struct Corpus {
  LabelSet labels;
  Vocabulary vocab;
  std::map<std::string, std::vector<Example>> splits;

  const std::vector<Example>& split(const std::string& name) const;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 120;  // distinct words, function and entity
  std::vector<std::string> labels{"PER", "LOC", "TIME", "MEDIA"};
  std::map<std::string, std::vector<std::string>> lexicons;  // empty: generated
  std::vector<std::string> templates;                         // empty: built-in set
  std::size_t min_frames = 2;
  std::size_t max_frames = 4;
  std::size_t frame_dim = 16;
  double noise = 0.7;                 // per-element Gaussian sigma
  double confusable_distance = 0.35;  // perturbation scale between paired signatures
  std::size_t num_confusable_pairs = 16;  // drawn among all word subtokens
  std::vector<std::pair<std::string, std::string>> confusable;  // extra explicit token pairs
  double lexicon_overlap = 1.0;  // share of each lexicon borrowed from the next label
  double label_cue = 1.0;        // scale of a per-label offset on entity frames
  double multiword_prob = 0.3;
  std::size_t n_train = 2000;
  std::size_t n_dev = 300;
  std::size_t n_test = 300;

  /// Reads `synth.*` keys.
  static SynthConfig from_config(const KeyValueConfig& cfg);
  void validate() const;
};

/// Built-in templates; `{LABEL}` marks a slot.
const std::vector<std::string>& default_templates();

Corpus generate_corpus(const SynthConfig& config);

/// Writes `{split}.meta`, `{split}.frames`, `labels.txt` and `vocab.txt`.
///
/// Frames file layout (little-endian):
///   "CSLUFRM1" | u32 version=1 | u32 d | u64 count
///   | count x ( u32 id_len + id | u32 T | T*d f32 )
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
void write_split(const std::vector<Example>& examples, const std::filesystem::path& dir,
                 const std::string& split);

Corpus read_corpus(const std::filesystem::path& dir);
std::vector<Example> read_split(const std::filesystem::path& dir, const std::string& split,
                                const LabelSet& labels);

}  // namespace compslu
