#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace compslu {

/// Tag index sequence. Index meaning is defined by a LabelSet.
using TagSequence = std::vector<int>;

inline constexpr std::string_view kOutsideSymbol = "O";
inline constexpr std::string_view kNullSymbol = "\xE2\x88\x85";  // U+2205 EMPTY SET

/// Base labels L plus the derived BIO set L' and the subtoken-aligned set
/// L'' = L' + {null}. Index layout: 0 = O, 1 + 2k = k_B, 2 + 2k = k_I,
/// 2|L| + 1 = null.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> base);

  /// One base label per line; blank lines ignored.
  static LabelSet read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  const std::vector<std::string>& base() const { return base_; }
  std::size_t num_base() const { return base_.size(); }
  std::size_t num_bio() const { return 2 * base_.size() + 1; }
  std::size_t num_aligned() const { return num_bio() + 1; }

  int outside() const { return 0; }
  int null_tag() const { return static_cast<int>(num_bio()); }
  int begin_tag(std::size_t label) const { return static_cast<int>(1 + 2 * label); }
  int inside_tag(std::size_t label) const { return static_cast<int>(2 + 2 * label); }
  bool is_begin(int tag) const { return tag > 0 && tag < null_tag() && tag % 2 == 1; }
  bool is_inside(int tag) const { return tag > 0 && tag < null_tag() && tag % 2 == 0; }
  std::size_t label_of(int tag) const { return static_cast<std::size_t>((tag - 1) / 2); }

  /// Index of a base label; throws VocabularyError if absent.
  std::size_t label_index(std::string_view label) const;
  /// Symbol of a tag over L''.
  std::string symbol(int tag) const;
  /// Tag over L'' for a symbol; throws VocabularyError if unknown.
  int tag_id(std::string_view symbol) const;

  std::string serialize(std::span<const int> tags) const;
  TagSequence parse_tags(std::string_view text) const;

  bool operator==(const LabelSet& other) const { return base_ == other.base_; }

 private:
  std::vector<std::string> base_;
};

struct EntitySpan {
  std::string label;
  std::size_t start = 0;  // inclusive word index
  std::size_t end = 0;    // inclusive word index
  std::string mention;

  bool operator==(const EntitySpan&) const = default;
};

std::string join_words(std::span<const std::string> words, std::size_t begin,
                       std::size_t end_inclusive);
std::vector<std::string> split_words(std::string_view text);

/// Fills in each span's mention from `words`.
void attach_mentions(std::vector<EntitySpan>& spans, std::span<const std::string> words);

/// Throws ValidationError for out-of-range or overlapping spans and
/// VocabularyError for labels outside `labels`.
void validate_spans(const LabelSet& labels, std::span<const EntitySpan> spans,
                    std::size_t n_words);

TagSequence spans_to_bio(const LabelSet& labels, std::span<const EntitySpan> spans,
                         std::size_t n_words);

/// Total over L' sequences: an I tag that does not continue a run of the
/// same label opens a new span. `words`, when given, supplies mentions.
std::vector<EntitySpan> bio_to_spans(const LabelSet& labels, std::span<const int> tags,
                                     std::span<const std::string> words = {});

/// Word/subtoken view of a sentence. Continuation subtokens carry a
/// leading "##".
struct Tokenization {
  std::vector<std::string> words;
  std::vector<std::string> subtokens;
  std::vector<std::size_t> word_of_subtoken;
  std::vector<bool> first_subtoken;

  std::size_t num_words() const { return words.size(); }
  std::size_t num_subtokens() const { return subtokens.size(); }
};

inline constexpr std::string_view kContinuationPrefix = "##";

/// Deterministic greedy longest-match splitter over a fixed table of
/// syllable-like pieces, falling back to single characters.
class SubwordSplitter {
 public:
  SubwordSplitter();

  std::vector<std::string> split(std::string_view word) const;
  Tokenization tokenize(std::span<const std::string> words) const;
  static std::span<const std::string_view> piece_table();

 private:
  std::vector<std::string> pieces_;  // longest first
};

/// Joins continuation subtokens back into words. Marker tokens are passed
/// through as their own entries; a continuation with nothing to attach to
/// starts a new word.
std::vector<std::string> detokenize(std::span<const std::string> subtokens);

TagSequence align_to_subtokens(const LabelSet& labels, std::span<const int> word_tags,
                               const Tokenization& tok);

struct CollapseResult {
  TagSequence word_tags;
  std::size_t ignored_non_first = 0;  // non-null tags found on non-first subtokens
};

/// Takes each word's first-subtoken tag. A null tag on a first subtoken
/// becomes O.
CollapseResult collapse_from_subtokens(const LabelSet& labels, std::span<const int> sub_tags,
                                       const Tokenization& tok);

// Enriched sequences: words with entity phrases bracketed as <LABEL> ... </LABEL>.

bool is_open_marker(std::string_view token);
bool is_close_marker(std::string_view token);
inline bool is_marker(std::string_view token) {
  return is_open_marker(token) || is_close_marker(token);
}
std::string open_marker(std::string_view label);
std::string close_marker(std::string_view label);
std::string marker_label(std::string_view marker);

std::vector<std::string> build_enriched_sequence(std::span<const std::string> words,
                                                 std::span<const EntitySpan> spans);

struct ParsedEnriched {
  std::vector<std::string> words;
  std::vector<EntitySpan> spans;
  std::size_t malformed = 0;                   // dropped marker count
  std::vector<std::size_t> malformed_positions;  // token offsets of dropped markers
};

/// Never fails. Unmatched, crossed, or empty-bracket markers are dropped
/// and counted.
ParsedEnriched parse_enriched_sequence(std::span<const std::string> tokens);

}  // namespace compslu
