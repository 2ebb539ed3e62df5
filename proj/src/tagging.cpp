#include "compslu/tagging.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "compslu/errors.hpp"

namespace compslu {

// ---------------------------------------------------------------------------
// LabelSet

LabelSet::LabelSet(std::vector<std::string> base) : base_(std::move(base)) {
  for (std::size_t i = 0; i < base_.size(); ++i) {
    const auto& l = base_[i];
    if (l.empty() || l.find_first_of(" \t\n<>/") != std::string::npos) {
      throw ValidationError("invalid base label '" + l + "'");
    }
    if (l == kOutsideSymbol || l == kNullSymbol) {
      throw ValidationError("base label '" + l + "' collides with a reserved symbol");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (base_[j] == l) throw ValidationError("duplicate base label '" + l + "'");
    }
  }
}

LabelSet LabelSet::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open label file: " + path.string());
  std::vector<std::string> base;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) base.push_back(line);
  }
  return LabelSet(std::move(base));
}

void LabelSet::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write label file: " + path.string());
  for (const auto& l : base_) os << l << '\n';
}

std::size_t LabelSet::label_index(std::string_view label) const {
  for (std::size_t i = 0; i < base_.size(); ++i)
    if (base_[i] == label) return i;
  throw VocabularyError("unknown entity label '" + std::string(label) + "'");
}

std::string LabelSet::symbol(int tag) const {
  if (tag == outside()) return std::string(kOutsideSymbol);
  if (tag == null_tag()) return std::string(kNullSymbol);
  if (tag < 0 || tag > null_tag()) {
    throw VocabularyError("tag index " + std::to_string(tag) + " outside the tag set");
  }
  return base_[label_of(tag)] + (is_begin(tag) ? "_B" : "_I");
}

int LabelSet::tag_id(std::string_view symbol) const {
  if (symbol == kOutsideSymbol) return outside();
  if (symbol == kNullSymbol) return null_tag();
  if (symbol.size() > 2 && symbol[symbol.size() - 2] == '_') {
    const auto kind = symbol.back();
    const auto label = symbol.substr(0, symbol.size() - 2);
    for (std::size_t i = 0; i < base_.size(); ++i) {
      if (base_[i] != label) continue;
      if (kind == 'B') return begin_tag(i);
      if (kind == 'I') return inside_tag(i);
    }
  }
  throw VocabularyError("unknown tag symbol '" + std::string(symbol) + "'");
}

std::string LabelSet::serialize(std::span<const int> tags) const {
  std::string out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i) out += ' ';
    out += symbol(tags[i]);
  }
  return out;
}

TagSequence LabelSet::parse_tags(std::string_view text) const {
  TagSequence tags;
  for (const auto& s : split_words(text)) tags.push_back(tag_id(s));
  return tags;
}

// ---------------------------------------------------------------------------
// Spans and BIO

std::string join_words(std::span<const std::string> words, std::size_t begin,
                       std::size_t end_inclusive) {
  std::string out;
  for (std::size_t i = begin; i <= end_inclusive && i < words.size(); ++i) {
    if (i > begin) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

void attach_mentions(std::vector<EntitySpan>& spans, std::span<const std::string> words) {
  for (auto& s : spans) s.mention = join_words(words, s.start, s.end);
}

namespace {

std::string describe(const EntitySpan& s) {
  return "(" + s.label + "," + std::to_string(s.start) + "," + std::to_string(s.end) + ")";
}

}  // namespace

void validate_spans(const LabelSet& labels, std::span<const EntitySpan> spans,
                    std::size_t n_words) {
  for (const auto& s : spans) {
    labels.label_index(s.label);
    if (s.start > s.end || s.end >= n_words) {
      throw ValidationError("span " + describe(s) + " outside a sentence of " +
                            std::to_string(n_words) + " words");
    }
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (std::size_t j = i + 1; j < spans.size(); ++j) {
      if (spans[i].start <= spans[j].end && spans[j].start <= spans[i].end) {
        throw ValidationError("overlapping spans " + describe(spans[i]) + " and " +
                              describe(spans[j]));
      }
    }
  }
}

TagSequence spans_to_bio(const LabelSet& labels, std::span<const EntitySpan> spans,
                         std::size_t n_words) {
  validate_spans(labels, spans, n_words);
  TagSequence tags(n_words, labels.outside());
  for (const auto& s : spans) {
    const auto k = labels.label_index(s.label);
    tags[s.start] = labels.begin_tag(k);
    for (auto i = s.start + 1; i <= s.end; ++i) tags[i] = labels.inside_tag(k);
  }
  return tags;
}

std::vector<EntitySpan> bio_to_spans(const LabelSet& labels, std::span<const int> tags,
                                     std::span<const std::string> words) {
  std::vector<EntitySpan> spans;
  bool open = false;
  std::size_t open_label = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const int t = tags[i];
    if (t < 0 || t >= labels.null_tag()) {
      throw VocabularyError("tag index " + std::to_string(t) + " is not a BIO tag");
    }
    if (t == labels.outside()) {
      open = false;
      continue;
    }
    const auto k = labels.label_of(t);
    if (labels.is_inside(t) && open && open_label == k) {
      spans.back().end = i;
      continue;
    }
    spans.push_back({labels.base()[k], i, i, {}});
    open = true;
    open_label = k;
  }
  if (!words.empty()) attach_mentions(spans, words);
  return spans;
}

// ---------------------------------------------------------------------------
// Subword splitting

namespace {

// Syllables used by synthetic names plus short whole words.
constexpr std::string_view kPieceTable[] = {
    // syllables
    "ka", "ri", "to", "mel", "san", "dor", "vi", "lan", "po", "ne", "zu", "bel",
    "mo", "ra", "tin", "gor", "li", "ven", "sa", "du", "fen", "ro", "mi", "tas",
    "jo", "nar", "be", "ko", "wen", "lu", "qua", "sel", "ti", "vo", "ham", "pel",
    // short words and word pieces
    "call", "play", "set", "send", "wake", "book", "find", "show", "turn", "on",
    "off", "the", "in", "at", "to", "for", "me", "my", "a", "from", "with",
    "about", "mess", "age", "alarm", "song", "music", "light", "room", "table",
    "meet", "ing", "up", "remind", "what", "is", "and", "please", "list", "trip",
    "next", "ask", "tell", "open", "near", "by", "time", "note", "new", "of",
};

}  // namespace

SubwordSplitter::SubwordSplitter() {
  for (auto p : kPieceTable) {
    if (std::find(pieces_.begin(), pieces_.end(), p) == pieces_.end()) pieces_.emplace_back(p);
  }
  std::stable_sort(pieces_.begin(), pieces_.end(),
                   [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
}

std::span<const std::string_view> SubwordSplitter::piece_table() { return kPieceTable; }

std::vector<std::string> SubwordSplitter::split(std::string_view word) const {
  if (word.empty()) throw ValidationError("cannot split an empty word");
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t take = 0;
    for (const auto& p : pieces_) {
      if (p.size() <= word.size() - pos && word.compare(pos, p.size(), p) == 0) {
        take = p.size();
        break;
      }
    }
    if (take == 0) take = 1;
    std::string piece(word.substr(pos, take));
    out.push_back(pos == 0 ? piece : std::string(kContinuationPrefix) + piece);
    pos += take;
  }
  return out;
}

Tokenization SubwordSplitter::tokenize(std::span<const std::string> words) const {
  Tokenization tok;
  tok.words.assign(words.begin(), words.end());
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto pieces = split(words[w]);
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      tok.subtokens.push_back(pieces[k]);
      tok.word_of_subtoken.push_back(w);
      tok.first_subtoken.push_back(k == 0);
    }
  }
  return tok;
}

std::vector<std::string> detokenize(std::span<const std::string> subtokens) {
  std::vector<std::string> words;
  bool can_attach = false;
  for (const auto& s : subtokens) {
    if (is_marker(s)) {
      words.push_back(s);
      can_attach = false;
      continue;
    }
    if (s.rfind(kContinuationPrefix, 0) == 0) {
      const auto rest = s.substr(kContinuationPrefix.size());
      if (can_attach) {
        words.back() += rest;
      } else if (!rest.empty()) {
        words.push_back(rest);
        can_attach = true;
      }
      continue;
    }
    words.push_back(s);
    can_attach = true;
  }
  return words;
}

TagSequence align_to_subtokens(const LabelSet& labels, std::span<const int> word_tags,
                               const Tokenization& tok) {
  if (word_tags.size() != tok.num_words()) {
    throw AlignmentError("cannot align " + std::to_string(word_tags.size()) + " tags to " +
                         std::to_string(tok.num_words()) + " words");
  }
  TagSequence out(tok.num_subtokens(), labels.null_tag());
  for (std::size_t i = 0; i < tok.num_subtokens(); ++i) {
    if (tok.first_subtoken[i]) out[i] = word_tags[tok.word_of_subtoken[i]];
  }
  return out;
}

CollapseResult collapse_from_subtokens(const LabelSet& labels, std::span<const int> sub_tags,
                                       const Tokenization& tok) {
  if (sub_tags.size() != tok.num_subtokens()) {
    throw AlignmentError("cannot collapse " + std::to_string(sub_tags.size()) + " tags over " +
                         std::to_string(tok.num_subtokens()) + " subtokens");
  }
  CollapseResult r;
  r.word_tags.assign(tok.num_words(), labels.outside());
  for (std::size_t i = 0; i < sub_tags.size(); ++i) {
    const int t = sub_tags[i];
    if (tok.first_subtoken[i]) {
      r.word_tags[tok.word_of_subtoken[i]] = t == labels.null_tag() ? labels.outside() : t;
    } else if (t != labels.null_tag()) {
      ++r.ignored_non_first;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Enriched sequences

bool is_open_marker(std::string_view t) {
  return t.size() > 2 && t.front() == '<' && t.back() == '>' && t[1] != '/';
}

bool is_close_marker(std::string_view t) {
  return t.size() > 3 && t[0] == '<' && t[1] == '/' && t.back() == '>';
}

std::string open_marker(std::string_view label) { return "<" + std::string(label) + ">"; }
std::string close_marker(std::string_view label) { return "</" + std::string(label) + ">"; }

std::string marker_label(std::string_view marker) {
  if (is_close_marker(marker)) return std::string(marker.substr(2, marker.size() - 3));
  if (is_open_marker(marker)) return std::string(marker.substr(1, marker.size() - 2));
  return {};
}

std::vector<std::string> build_enriched_sequence(std::span<const std::string> words,
                                                 std::span<const EntitySpan> spans) {
  std::vector<const EntitySpan*> order;
  for (const auto& s : spans) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const EntitySpan* a, const EntitySpan* b) { return a->start < b->start; });
  std::vector<std::string> out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const bool opens = next < order.size() && order[next]->start == i;
    if (opens) out.push_back(open_marker(order[next]->label));
    out.push_back(words[i]);
    if (next < order.size() && order[next]->end == i) {
      out.push_back(close_marker(order[next]->label));
      ++next;
    }
  }
  return out;
}

ParsedEnriched parse_enriched_sequence(std::span<const std::string> tokens) {
  ParsedEnriched r;
  bool open = false;
  std::string open_label;
  std::size_t open_pos = 0, open_word = 0;
  auto drop = [&r](std::size_t pos) {
    ++r.malformed;
    r.malformed_positions.push_back(pos);
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (is_open_marker(t)) {
      if (open) drop(open_pos);
      open = true;
      open_label = marker_label(t);
      open_pos = i;
      open_word = r.words.size();
    } else if (is_close_marker(t)) {
      const auto label = marker_label(t);
      if (!open || label != open_label) {
        drop(i);
      } else if (r.words.size() == open_word) {
        drop(open_pos);
        drop(i);
        open = false;
      } else {
        r.spans.push_back({label, open_word, r.words.size() - 1, {}});
        open = false;
      }
    } else {
      r.words.push_back(t);
    }
  }
  if (open) drop(open_pos);
  std::sort(r.malformed_positions.begin(), r.malformed_positions.end());
  attach_mentions(r.spans, r.words);
  return r;
}

}  // namespace compslu
