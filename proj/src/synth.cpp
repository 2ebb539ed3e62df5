#include "compslu/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "compslu/binio.hpp"
#include "compslu/errors.hpp"

namespace compslu {

namespace {

constexpr char kFramesMagic[8] = {'C', 'S', 'L', 'U', 'F', 'R', 'M', '1'};
constexpr std::uint32_t kFramesVersion = 1;

// Syllables that entity names are built from.
constexpr std::string_view kSyllables[] = {
    "ka", "ri", "to", "mel", "san", "dor", "vi", "lan", "po", "ne", "zu", "bel",
    "mo", "ra", "tin", "gor", "li", "ven", "sa", "du", "fen", "ro", "mi", "tas",
    "jo", "nar", "be", "ko", "wen", "lu", "qua", "sel", "ti", "vo", "ham", "pel"};

bool is_slot(const std::string& w) { return w.size() > 2 && w.front() == '{' && w.back() == '}'; }
std::string slot_label(const std::string& w) { return w.substr(1, w.size() - 2); }

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string format_id(const std::string& split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", split.c_str(), i);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

}  // namespace

// --- Example / Corpus -----------------------------------------------------------

Tensor Example::frame_tensor() const {
  if (frames.empty() || frame_dim == 0) throw ValidationError("utterance " + id + " has no frames");
  return Tensor::from_data({num_frames(), frame_dim}, std::vector<double>(frames.begin(), frames.end()));
}

std::uint64_t Example::frames_checksum() const {
  std::string bytes;
  bytes.reserve(frames.size() * 4);
  for (float f : frames) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
  }
  return binio::fnv1a(bytes.data(), bytes.size());
}

const std::vector<Example>& Corpus::split(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw DataError("corpus has no split '" + name + "'");
  return it->second;
}

// --- configuration ----------------------------------------------------------------

const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> t{
      "call {PER}",
      "call {PER} at {TIME}",
      "send a message to {PER}",
      "ask {PER} about the meeting",
      "tell {PER} to call me",
      "show me the note from {PER}",
      "remind me to call {PER} at {TIME}",
      "find a table near {LOC}",
      "book a trip to {LOC}",
      "what is the time in {LOC}",
      "turn on the light in {LOC}",
      "book a table in {LOC} for {TIME}",
      "wake me up at {TIME}",
      "set the alarm for {TIME}",
      "remind me at {TIME}",
      "play {MEDIA}",
      "play the song {MEDIA}",
      "play music by {PER}",
      "play {MEDIA} in {LOC}",
      "send {MEDIA} to {PER}",
      "open my list {MEDIA}",
      "please play {MEDIA} at {TIME}",
      // the context alone does not reveal the label
      "tell me about {PER}",
      "tell me about {LOC}",
      "tell me about {TIME}",
      "tell me about {MEDIA}",
      "what about {PER}",
      "what about {LOC}",
      "what about {TIME}",
      "what about {MEDIA}",
      "i need {PER}",
      "i need {LOC}",
      "i need {TIME}",
      "i need {MEDIA}",
  };
  return t;
}

SynthConfig SynthConfig::from_config(const KeyValueConfig& cfg) {
  SynthConfig c;
  c.seed = cfg.get_u64("synth.seed", c.seed);
  c.vocab_size = cfg.get_size("synth.vocab_size", c.vocab_size);
  if (cfg.has("synth.labels")) c.labels = split_list(cfg.get_string("synth.labels", ""), ',');
  for (const auto& key : cfg.keys_with_prefix("synth.lexicon.")) {
    c.lexicons[key.substr(std::string("synth.lexicon.").size())] =
        split_list(cfg.get_string(key, ""), ',');
  }
  for (const auto& key : cfg.keys_with_prefix("synth.template.")) {
    c.templates.push_back(cfg.get_string(key, ""));
  }
  for (const auto& key : cfg.keys_with_prefix("synth.confusable.")) {
    const auto pair = split_list(cfg.get_string(key, ""), '|');
    if (pair.size() != 2) throw ConfigError(key + ": expected 'token|token'");
    c.confusable.emplace_back(pair[0], pair[1]);
  }
  c.min_frames = cfg.get_size("synth.min_frames", c.min_frames);
  c.max_frames = cfg.get_size("synth.max_frames", c.max_frames);
  c.frame_dim = cfg.get_size("synth.frame_dim", c.frame_dim);
  c.noise = cfg.get_double("synth.noise", c.noise);
  c.confusable_distance = cfg.get_double("synth.confusable_distance", c.confusable_distance);
  c.num_confusable_pairs = cfg.get_size("synth.num_confusable_pairs", c.num_confusable_pairs);
  c.lexicon_overlap = cfg.get_double("synth.lexicon_overlap", c.lexicon_overlap);
  c.label_cue = cfg.get_double("synth.label_cue", c.label_cue);
  c.multiword_prob = cfg.get_double("synth.multiword_prob", c.multiword_prob);
  c.n_train = cfg.get_size("synth.n_train", c.n_train);
  c.n_dev = cfg.get_size("synth.n_dev", c.n_dev);
  c.n_test = cfg.get_size("synth.n_test", c.n_test);
  c.validate();
  return c;
}

void SynthConfig::validate() const {
  if (labels.empty()) throw ConfigError("synth: at least one entity label is required");
  if (min_frames < 1 || max_frames < min_frames) {
    throw ConfigError("synth: frames-per-token range must satisfy 1 <= min <= max");
  }
  if (frame_dim == 0) throw ConfigError("synth: frame_dim must be positive");
  if (noise < 0.0) throw ConfigError("synth: noise must be >= 0");
  if (confusable_distance < 0.0) throw ConfigError("synth: confusable_distance must be >= 0");
  if (lexicon_overlap < 0.0 || lexicon_overlap > 1.0) {
    throw ConfigError("synth: lexicon_overlap must lie in [0, 1]");
  }
  if (multiword_prob < 0.0 || multiword_prob > 1.0) {
    throw ConfigError("synth: multiword_prob must lie in [0, 1]");
  }
  if (n_train + n_dev + n_test == 0) throw ConfigError("synth: corpus size must be at least 1");
}

// --- generation ---------------------------------------------------------------

Corpus generate_corpus(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const LabelSet labels(config.labels);
  const auto& templates = config.templates.empty() ? default_templates() : config.templates;

  // Function words come from the templates; every slot label must be known.
  std::set<std::string> function_words;
  std::set<std::string> used_labels;
  for (const auto& t : templates) {
    for (const auto& w : split_words(t)) {
      if (is_slot(w)) {
        const auto label = slot_label(w);
        labels.label_index(label);
        used_labels.insert(label);
      } else {
        function_words.insert(w);
      }
    }
  }

  // Lexicons: configured, or disjoint two-syllable names dealt round-robin.
  std::map<std::string, std::vector<std::string>> lexicons = config.lexicons;
  if (lexicons.empty()) {
    if (config.vocab_size <= function_words.size()) {
      throw ConfigError("synth: vocab_size " + std::to_string(config.vocab_size) +
                        " leaves no room for entity words after " +
                        std::to_string(function_words.size()) + " function words");
    }
    const std::size_t n_entity = config.vocab_size - function_words.size();
    std::vector<std::string> names;
    for (auto a : kSyllables) {
      for (auto b : kSyllables) {
        if (a != b) names.push_back(std::string(a) + std::string(b));
      }
    }
    std::shuffle(names.begin(), names.end(), rng);
    std::size_t k = 0;
    for (const auto& n : names) {
      if (k == n_entity) break;
      if (function_words.count(n)) continue;
      lexicons[config.labels[k % config.labels.size()]].push_back(n);
      ++k;
    }
    if (config.lexicon_overlap > 0.0 && config.labels.size() > 1) {
      const auto original = lexicons;
      for (std::size_t l = 0; l < config.labels.size(); ++l) {
        const auto& donor = original.at(config.labels[(l + 1) % config.labels.size()]);
        const auto n = static_cast<std::size_t>(
            std::round(config.lexicon_overlap * static_cast<double>(donor.size())));
        auto& lex = lexicons[config.labels[l]];
        lex.insert(lex.end(), donor.begin(), donor.begin() + static_cast<long>(std::min(n, donor.size())));
      }
    }
  }
  for (const auto& label : used_labels) {
    if (lexicons[label].empty()) throw ConfigError("synth: empty lexicon for slot {" + label + "}");
  }
  for (const auto& [label, words] : lexicons) {
    labels.label_index(label);
    for (const auto& w : words) {
      if (function_words.count(w)) {
        throw ConfigError("synth: lexicon word '" + w + "' is also a function word");
      }
    }
  }

  // Vocabulary: every subtoken in use plus single-character fallbacks so
  // any lowercase transcript can be tokenized.
  SubwordSplitter splitter;
  std::set<std::string> plain;
  const auto add_word = [&](const std::string& w) {
    for (auto& p : splitter.split(w)) plain.insert(std::move(p));
  };
  for (const auto& w : function_words) add_word(w);
  for (const auto& [label, words] : lexicons) {
    for (const auto& w : words) add_word(w);
  }
  for (char ch = 'a'; ch <= 'z'; ++ch) {
    plain.insert(std::string(1, ch));
    plain.insert(std::string(kContinuationPrefix) + ch);
  }
  std::vector<std::string> markers;
  for (const auto& l : config.labels) {
    markers.push_back(open_marker(l));
    markers.push_back(close_marker(l));
  }
  Vocabulary vocab(std::vector<std::string>(plain.begin(), plain.end()), markers);

  // Acoustic signatures per subtoken, then confusable pairs.
  const auto d = config.frame_dim;
  std::map<std::string, std::vector<double>> signature;
  for (long id = 2; id < static_cast<long>(vocab.num_plain()); ++id) {
    signature[vocab.token(id)] = gaussian_vector(rng, d);
  }
  std::vector<std::pair<std::string, std::string>> pairs = config.confusable;
  if (config.num_confusable_pairs > 0) {
    std::set<std::string> pieces;
    const auto add_pieces = [&](const std::string& w) {
      for (auto& p : splitter.split(w)) pieces.insert(std::move(p));
    };
    for (const auto& w : function_words) add_pieces(w);
    for (const auto& [label, words] : lexicons) {
      for (const auto& w : words) add_pieces(w);
    }
    std::vector<std::string> pool(pieces.begin(), pieces.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i + 1 < pool.size() && pairs.size() < config.confusable.size() + config.num_confusable_pairs; i += 2) {
      pairs.emplace_back(pool[i], pool[i + 1]);
    }
  }
  for (const auto& [a, b] : pairs) {
    if (!signature.count(a) || !signature.count(b)) {
      throw ConfigError("synth: confusable pair " + a + "|" + b + " names an unknown subtoken");
    }
    const auto delta = gaussian_vector(rng, d);
    auto& sb = signature[b];
    const auto& sa = signature[a];
    for (std::size_t i = 0; i < d; ++i) sb[i] = sa[i] + config.confusable_distance * delta[i];
  }
  std::vector<std::vector<double>> cue(config.labels.size());
  for (auto& c : cue) c = gaussian_vector(rng, d);

  Corpus corpus;
  corpus.labels = labels;
  corpus.vocab = vocab;
  std::uniform_int_distribution<std::size_t> n_frames(config.min_frames, config.max_frames);
  std::uniform_int_distribution<std::size_t> pick_template(0, templates.size() - 1);
  std::bernoulli_distribution multiword(config.multiword_prob);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::pair<std::string, std::size_t> sizes[] = {
      {"train", config.n_train}, {"dev", config.n_dev}, {"test", config.n_test}};
  for (const auto& [split, n] : sizes) {
    auto& out = corpus.splits[split];
    for (std::size_t i = 0; i < n; ++i) {
      Example ex;
      ex.id = format_id(split, i);
      ex.frame_dim = d;
      std::vector<int> word_label;  // -1 for function words
      for (const auto& tw : split_words(templates[pick_template(rng)])) {
        if (!is_slot(tw)) {
          ex.words.push_back(tw);
          word_label.push_back(-1);
          continue;
        }
        const auto label = slot_label(tw);
        const auto& lex = lexicons.at(label);
        std::uniform_int_distribution<std::size_t> pick(0, lex.size() - 1);
        const std::size_t len = (lex.size() > 1 && multiword(rng)) ? 2 : 1;
        EntitySpan s{label, ex.words.size(), ex.words.size() + len - 1, ""};
        std::size_t first = pick(rng);
        for (std::size_t k = 0; k < len; ++k) {
          std::size_t idx = first;
          if (k > 0) {
            while ((idx = pick(rng)) == first) {}
          }
          ex.words.push_back(lex[idx]);
          word_label.push_back(static_cast<int>(labels.label_index(label)));
        }
        ex.spans.push_back(s);
      }
      attach_mentions(ex.spans, ex.words);
      for (std::size_t w = 0; w < ex.words.size(); ++w) {
        for (const auto& piece : splitter.split(ex.words[w])) {
          const auto& sig = signature.at(piece);
          const auto count = n_frames(rng);
          for (std::size_t f = 0; f < count; ++f) {
            for (std::size_t j = 0; j < d; ++j) {
              double v = sig[j];
              if (word_label[w] >= 0) v += config.label_cue * cue[static_cast<std::size_t>(word_label[w])][j];
              v += config.noise * noise(rng);
              ex.frames.push_back(static_cast<float>(v));
            }
          }
        }
      }
      out.push_back(std::move(ex));
    }
  }
  return corpus;
}

// --- file I/O -------------------------------------------------------------------

void write_split(const std::vector<Example>& examples, const std::filesystem::path& dir,
                 const std::string& split) {
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir / (split + ".meta"), std::ios::binary);
  std::ofstream frames(dir / (split + ".frames"), std::ios::binary);
  if (!meta || !frames) throw DataError("cannot write split '" + split + "' under " + dir.string());
  const std::uint32_t d = examples.empty() ? 0 : static_cast<std::uint32_t>(examples.front().frame_dim);
  frames.write(kFramesMagic, sizeof kFramesMagic);
  binio::put_u32(frames, kFramesVersion);
  binio::put_u32(frames, d);
  binio::put_u64(frames, examples.size());
  for (const auto& ex : examples) {
    if (ex.frame_dim != d) throw DataError("utterance " + ex.id + " has a different frame dimension");
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["words"] = ex.words;
    auto spans = nlohmann::ordered_json::array();
    for (const auto& s : ex.spans) {
      spans.push_back({{"label", s.label}, {"start", s.start}, {"end", s.end}});
    }
    j["spans"] = spans;
    j["n_frames"] = ex.num_frames();
    j["frames_fnv1a"] = hex64(ex.frames_checksum());
    meta << j.dump() << '\n';

    binio::put_str(frames, ex.id);
    binio::put_u32(frames, static_cast<std::uint32_t>(ex.num_frames()));
    for (float f : ex.frames) binio::put_f32(frames, f);
  }
  if (!meta || !frames) throw DataError("write failed for split '" + split + "'");
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  corpus.labels.write(dir / "labels.txt");
  corpus.vocab.write(dir / "vocab.txt");
  for (const auto& [name, examples] : corpus.splits) write_split(examples, dir, name);
}

std::vector<Example> read_split(const std::filesystem::path& dir, const std::string& split,
                                const LabelSet& labels) {
  const auto frames_path = dir / (split + ".frames");
  std::ifstream frames(frames_path, std::ios::binary);
  if (!frames) throw DataError("cannot open " + frames_path.string());
  char magic[8];
  binio::read_exact(frames, magic, 8, "frames header");
  if (!std::equal(magic, magic + 8, kFramesMagic)) {
    throw DataError(frames_path.string() + " is not a frames file");
  }
  const auto version = binio::get_u32(frames, "frames version");
  if (version != kFramesVersion) {
    throw DataError(frames_path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto d = binio::get_u32(frames, "frame dimension");
  const auto count = binio::get_u64(frames, "record count");
  std::map<std::string, std::vector<float>> by_id;
  for (std::uint64_t r = 0; r < count; ++r) {
    auto id = binio::get_str(frames, 4096, "utterance id");
    const auto t = binio::get_u32(frames, "frame count");
    if (d == 0 || t > (1u << 24)) throw DataError("implausible frame count for utterance " + id);
    std::vector<float> data(static_cast<std::size_t>(t) * d);
    for (auto& f : data) f = binio::get_f32(frames, "frame data");
    by_id[std::move(id)] = std::move(data);
  }

  const auto meta_path = dir / (split + ".meta");
  std::ifstream meta(meta_path);
  if (!meta) throw DataError("cannot open " + meta_path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(meta, line)) {
    ++line_no;
    if (line.empty()) continue;
    Example ex;
    try {
      const auto j = nlohmann::json::parse(line);
      ex.id = j.at("id").get<std::string>();
      ex.words = j.at("words").get<std::vector<std::string>>();
      for (const auto& s : j.at("spans")) {
        ex.spans.push_back({s.at("label").get<std::string>(), s.at("start").get<std::size_t>(),
                            s.at("end").get<std::size_t>(), ""});
      }
      ex.frame_dim = d;
      const auto it = by_id.find(ex.id);
      if (it == by_id.end()) {
        throw DataError(meta_path.string() + ": no frames recorded for utterance " + ex.id);
      }
      ex.frames = std::move(it->second);
      if (ex.num_frames() != j.at("n_frames").get<std::size_t>()) {
        throw DataError("frame count mismatch for utterance " + ex.id);
      }
      if (hex64(ex.frames_checksum()) != j.at("frames_fnv1a").get<std::string>()) {
        throw DataError("frame checksum mismatch for utterance " + ex.id);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(meta_path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    validate_spans(labels, ex.spans, ex.words.size());
    attach_mentions(ex.spans, ex.words);
    out.push_back(std::move(ex));
  }
  return out;
}

Corpus read_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.labels = LabelSet::read(dir / "labels.txt");
  c.vocab = Vocabulary::read(dir / "vocab.txt");
  for (const auto& split : kSplitNames) {
    if (std::filesystem::exists(dir / (split + ".meta"))) {
      c.splits[split] = read_split(dir, split, c.labels);
    }
  }
  return c;
}

}  // namespace compslu
