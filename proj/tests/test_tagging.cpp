#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "compslu/errors.hpp"
#include "compslu/tagging.hpp"

using namespace compslu;

namespace {

const LabelSet kLabels({"PER", "LOC", "TIME"});

TagSequence tags(const std::string& s) { return kLabels.parse_tags(s); }

std::vector<std::string> words(const std::string& s) { return split_words(s); }

}  // namespace

TEST(LabelSet, SizesAndReservedSymbols) {
  EXPECT_EQ(kLabels.num_bio(), 7u);
  EXPECT_EQ(kLabels.num_aligned(), 8u);
  EXPECT_EQ(kLabels.symbol(kLabels.null_tag()), std::string(kNullSymbol));
  EXPECT_EQ(kLabels.tag_id("LOC_I"), kLabels.inside_tag(1));
  EXPECT_THROW(kLabels.tag_id("ORG_B"), VocabularyError);
  EXPECT_THROW(LabelSet({"O"}), ValidationError);
  EXPECT_THROW(LabelSet({"PER", "PER"}), ValidationError);
}

TEST(LabelSet, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "compslu_labels.txt";
  kLabels.write(path);
  EXPECT_EQ(LabelSet::read(path), kLabels);
  std::filesystem::remove(path);
}

TEST(SpansToBio, Cases) {
  EXPECT_EQ(spans_to_bio(kLabels, {}, 3), tags("O O O"));
  std::vector<EntitySpan> one{{"PER", 1, 2, ""}};
  EXPECT_EQ(spans_to_bio(kLabels, one, 4), tags("O PER_B PER_I O"));
  std::vector<EntitySpan> adjacent{{"PER", 0, 0, ""}, {"PER", 1, 1, ""}};
  EXPECT_EQ(spans_to_bio(kLabels, adjacent, 2), tags("PER_B PER_B"));
  // the round trip tells adjacent spans apart from one two-word span
  EXPECT_EQ(bio_to_spans(kLabels, tags("PER_B PER_B")).size(), 2u);
  EXPECT_EQ(bio_to_spans(kLabels, tags("PER_B PER_I")).size(), 1u);
}

TEST(SpansToBio, OverlapNamesBothSpans) {
  std::vector<EntitySpan> bad{{"PER", 0, 2, ""}, {"LOC", 2, 3, ""}};
  try {
    spans_to_bio(kLabels, bad, 5);
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(PER,0,2)"), std::string::npos);
    EXPECT_NE(msg.find("(LOC,2,3)"), std::string::npos);
  }
}

TEST(BioToSpans, RepairRule) {
  const auto w = words("a b c d");
  EXPECT_EQ(bio_to_spans(kLabels, tags("O PER_B PER_I O"), w),
            (std::vector<EntitySpan>{{"PER", 1, 2, "b c"}}));
  EXPECT_EQ(bio_to_spans(kLabels, tags("PER_I")), (std::vector<EntitySpan>{{"PER", 0, 0, ""}}));
  EXPECT_EQ(bio_to_spans(kLabels, tags("PER_B LOC_I")),
            (std::vector<EntitySpan>{{"PER", 0, 0, ""}, {"LOC", 1, 1, ""}}));
  EXPECT_THROW(bio_to_spans(kLabels, TagSequence{kLabels.null_tag()}), VocabularyError);
}

TEST(BioToSpans, TotalOnRandomSequences) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> tag(0, static_cast<int>(kLabels.num_bio()) - 1);
  for (int trial = 0; trial < 2000; ++trial) {
    TagSequence t(rng() % 9);
    for (auto& v : t) v = tag(rng);
    const auto spans = bio_to_spans(kLabels, t);
    // decoded spans are always valid input for the encoder
    EXPECT_NO_THROW(spans_to_bio(kLabels, spans, t.size()));
  }
}

TEST(Splitter, SplitsAreLosslessAndMarked) {
  SubwordSplitter splitter;
  const auto pieces = splitter.split("kari");
  EXPECT_EQ(pieces, (std::vector<std::string>{"ka", "##ri"}));
  EXPECT_EQ(splitter.split("playlist"), (std::vector<std::string>{"play", "##list"}));
  EXPECT_EQ(splitter.split("xq"), (std::vector<std::string>{"x", "##q"}));
  const auto tok = splitter.tokenize(words("call kari now"));
  EXPECT_EQ(detokenize(tok.subtokens), tok.words);
  EXPECT_THROW(splitter.split(""), ValidationError);
}

TEST(Alignment, Cases) {
  SubwordSplitter splitter;
  const auto single = splitter.tokenize(words("call me"));
  ASSERT_EQ(single.num_subtokens(), 2u);
  EXPECT_EQ(align_to_subtokens(kLabels, tags("O PER_B"), single), tags("O PER_B"));

  const auto multi = splitter.tokenize(words("playlist"));
  const auto aligned = align_to_subtokens(kLabels, tags("LOC_B"), multi);
  EXPECT_EQ(aligned, (TagSequence{kLabels.tag_id("LOC_B"), kLabels.null_tag()}));
  EXPECT_THROW(align_to_subtokens(kLabels, tags("O O"), multi), AlignmentError);

  auto noisy = aligned;
  noisy[1] = kLabels.tag_id("PER_I");
  const auto collapsed = collapse_from_subtokens(kLabels, noisy, multi);
  EXPECT_EQ(collapsed.word_tags, tags("LOC_B"));
  EXPECT_EQ(collapsed.ignored_non_first, 1u);
}

TEST(Alignment, RoundTripProperty) {
  SubwordSplitter splitter;
  std::mt19937_64 rng(2);
  const auto table = SubwordSplitter::piece_table();
  std::uniform_int_distribution<int> tag(0, static_cast<int>(kLabels.num_bio()) - 1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> ws(1 + rng() % 6);
    for (auto& w : ws) {
      const auto parts = 1 + rng() % 3;
      for (std::size_t p = 0; p < parts; ++p) w += table[rng() % table.size()];
    }
    const auto tok = splitter.tokenize(ws);
    TagSequence t(ws.size());
    for (auto& v : t) v = tag(rng);
    const auto aligned = align_to_subtokens(kLabels, t, tok);
    ASSERT_EQ(aligned.size(), tok.num_subtokens());
    const auto back = collapse_from_subtokens(kLabels, aligned, tok);
    EXPECT_EQ(back.word_tags, t);
    EXPECT_EQ(back.ignored_non_first, 0u);
  }
}

TEST(Enriched, BuildCases) {
  const auto w = words("call john");
  EXPECT_EQ(build_enriched_sequence(w, {}), w);
  std::vector<EntitySpan> s{{"PER", 1, 1, ""}};
  EXPECT_EQ(build_enriched_sequence(w, s), words("call <PER> john </PER>"));
  std::vector<EntitySpan> adj{{"LOC", 1, 1, ""}, {"PER", 0, 0, ""}};
  EXPECT_EQ(build_enriched_sequence(w, adj), words("<PER> call </PER> <LOC> john </LOC>"));
}

TEST(Enriched, ParseCorruptInput) {
  const auto r = parse_enriched_sequence(words("<PER> </LOC> hi"));
  EXPECT_EQ(r.words, words("hi"));
  EXPECT_TRUE(r.spans.empty());
  EXPECT_EQ(r.malformed, 2u);

  // labels only, no words
  const auto markers = words("<PER> </PER> <LOC> <TIME> </TIME> </LOC> </PER>");
  const auto m = parse_enriched_sequence(markers);
  EXPECT_TRUE(m.words.empty());
  EXPECT_TRUE(m.spans.empty());
  EXPECT_EQ(m.malformed, markers.size());
}

TEST(Enriched, RoundTripAndFuzz) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> vocab{"a", "b", "c", "<PER>", "</PER>", "<LOC>", "</LOC>", "<"};
  for (int trial = 0; trial < 1000; ++trial) {
    // well-formed: random spans over random words
    const std::size_t n = 1 + rng() % 7;
    std::vector<std::string> ws(n);
    for (auto& w : ws) w = std::string(1, static_cast<char>('a' + rng() % 5));
    std::vector<EntitySpan> spans;
    for (std::size_t i = 0; i < n;) {
      if (rng() % 3 == 0) {
        const auto len = 1 + rng() % 2;
        const auto end = std::min(n - 1, i + len - 1);
        spans.push_back({kLabels.base()[rng() % 3], i, end, join_words(ws, i, end)});
        i = end + 1;
      } else {
        ++i;
      }
    }
    const auto parsed = parse_enriched_sequence(build_enriched_sequence(ws, spans));
    EXPECT_EQ(parsed.words, ws);
    EXPECT_EQ(parsed.spans, spans);
    EXPECT_EQ(parsed.malformed, 0u);

    // arbitrary token soup never throws and spans stay in range
    std::vector<std::string> soup(rng() % 10);
    for (auto& t : soup) t = vocab[rng() % vocab.size()];
    const auto r = parse_enriched_sequence(soup);
    for (const auto& s : r.spans) EXPECT_LT(s.end, r.words.size());
  }
}
