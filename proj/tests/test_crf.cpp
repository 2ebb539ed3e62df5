#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "compslu/crf.hpp"
#include "compslu/errors.hpp"
#include "oracles.hpp"

using namespace compslu;

namespace {

struct Built {
  Tensor em;
  crf::CrfParams params;
};

Built build(const oracle::CrfInstance& c, bool rg = false) {
  return {Tensor::from_data({c.n, c.k}, c.em, rg),
          {Tensor::from_data({c.k, c.k}, c.trans, rg), Tensor::from_data({c.k}, c.start, rg),
           Tensor::from_data({c.k}, c.end, rg)}};
}

oracle::CrfInstance zero_instance(std::size_t n, std::size_t k) {
  oracle::CrfInstance c;
  c.n = n;
  c.k = k;
  c.em.assign(n * k, 0);
  c.trans.assign(k * k, 0);
  c.start.assign(k, 0);
  c.end.assign(k, 0);
  return c;
}

}  // namespace

TEST(SequenceScore, Cases) {
  auto z = build(zero_instance(3, 3));
  const int path[] = {0, 2, 1};
  EXPECT_EQ(crf::sequence_score(z.em, z.params, path).item(), 0.0);

  auto c = zero_instance(1, 2);
  c.em = {2, 5};
  auto b = build(c);
  const int one[] = {1};
  EXPECT_EQ(crf::sequence_score(b.em, b.params, one).item(), 5.0);

  std::mt19937_64 rng(1);
  const auto r = oracle::random_crf(rng, 3, 3);
  auto rb = build(r);
  const std::vector<int> y{2, 0, 1};
  EXPECT_NEAR(crf::sequence_score(rb.em, rb.params, y).item(), oracle::crf_path_score(r, y),
              1e-12);

  const int short_path[] = {0, 1};
  EXPECT_THROW(crf::sequence_score(rb.em, rb.params, short_path), DimensionError);
}

TEST(LogPartition, Cases) {
  auto z = build(zero_instance(2, 3));
  EXPECT_NEAR(crf::log_partition(z.em, z.params).item(), std::log(9.0), 1e-14);

  std::mt19937_64 rng(2);
  auto one = oracle::random_crf(rng, 1, 4);
  auto b1 = build(one);
  double direct = 0.0;
  for (std::size_t j = 0; j < 4; ++j) direct += std::exp(one.start[j] + one.em[j] + one.end[j]);
  EXPECT_NEAR(crf::log_partition(b1.em, b1.params).item(), std::log(direct), 1e-12);

  const auto big = oracle::random_crf(rng, 4, 5);
  auto bb = build(big);
  EXPECT_NEAR(crf::log_partition(bb.em, bb.params).item(), oracle::crf_brute_log_partition(big),
              1e-8);
}

TEST(LogPartition, MatchesEnumerationOnRandomInstances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = oracle::random_crf(rng, 1 + rng() % 6, 1 + rng() % 5);
    auto b = build(c);
    EXPECT_NEAR(crf::log_partition(b.em, b.params).item(), oracle::crf_brute_log_partition(c),
                1e-8);
  }
}

TEST(NllLoss, Cases) {
  auto z = build(zero_instance(2, 3));
  const int gold[] = {1, 2};
  EXPECT_NEAR(crf::nll_loss(z.em, z.params, gold).item(), std::log(9.0), 1e-14);

  auto c = zero_instance(3, 3);
  const int dominated[] = {2, 0, 1};
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < 3; ++j) c.em[l * 3 + j] = (static_cast<int>(j) == dominated[l]) ? 1e3 : -1e3;
  auto d = build(c);
  const double loss = crf::nll_loss(d.em, d.params, dominated).item();
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-12);
}

TEST(NllLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const auto c = oracle::random_crf(rng, 3, 4);
  auto b = build(c, true);
  const int gold[] = {3, 1, 1};
  const double err = oracle::gradient_check(
      [&] { return crf::nll_loss(b.em, b.params, gold); },
      {b.em, b.params.transitions, b.params.start, b.params.end});
  EXPECT_LT(err, 1e-4);
}

TEST(NllLoss, EmissionGradientIsMarginalMinusGold) {
  std::mt19937_64 rng(5);
  const auto c = oracle::random_crf(rng, 3, 3);
  auto b = build(c, true);
  const std::vector<int> gold{0, 2, 2};
  crf::nll_loss(b.em, b.params, gold).backward();
  // marginals by enumeration
  std::vector<double> marg(c.n * c.k, 0.0);
  const double log_z = oracle::crf_brute_log_partition(c);
  oracle::for_each_path(c.n, c.k, [&](const std::vector<int>& y) {
    const double p = std::exp(oracle::crf_path_score(c, y) - log_z);
    for (std::size_t l = 0; l < c.n; ++l) marg[l * c.k + y[l]] += p;
  });
  for (std::size_t l = 0; l < c.n; ++l) {
    for (std::size_t j = 0; j < c.k; ++j) {
      const double expected = marg[l * c.k + j] - (gold[l] == static_cast<int>(j) ? 1.0 : 0.0);
      EXPECT_NEAR(b.em.grad()[l * c.k + j], expected, 1e-10);
    }
  }
}

TEST(Viterbi, Cases) {
  std::mt19937_64 rng(6);
  const auto one = oracle::random_crf(rng, 1, 4);
  auto b1 = build(one);
  int best = 0;
  for (int j = 1; j < 4; ++j)
    if (one.start[j] + one.em[j] + one.end[j] > one.start[best] + one.em[best] + one.end[best]) best = j;
  EXPECT_EQ(crf::viterbi_decode(b1.em, b1.params).path, (TagSequence{best}));

  auto c = zero_instance(4, 3);
  const std::vector<int> argmax{2, 0, 1, 1};
  for (std::size_t l = 0; l < 4; ++l) c.em[l * 3 + argmax[l]] = 5.0;
  auto b = build(c);
  EXPECT_EQ(crf::viterbi_decode(b.em, b.params).path, argmax);

  const auto r = oracle::random_crf(rng, 5, 4);
  auto br = build(r);
  const auto got = crf::viterbi_decode(br.em, br.params);
  const auto [path, score] = oracle::crf_brute_argmax(r);
  EXPECT_EQ(got.path, path);
  EXPECT_NEAR(got.score, score, 1e-12);
}

TEST(Viterbi, TiesPreferLowerIndex) {
  auto z = build(zero_instance(3, 3));
  EXPECT_EQ(crf::viterbi_decode(z.em, z.params).path, (TagSequence{0, 0, 0}));
}

TEST(SequenceLogLikelihood, NormalizesAndShiftInvariance) {
  auto z = build(zero_instance(2, 3));
  const int y[] = {0, 1};
  EXPECT_NEAR(crf::sequence_log_likelihood(z.em, z.params, y), -std::log(9.0), 1e-14);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = oracle::random_crf(rng, 1 + rng() % 4, 1 + rng() % 4);
    auto b = build(c);
    double total = 0.0;
    oracle::for_each_path(c.n, c.k, [&](const std::vector<int>& path) {
      const double ll = crf::sequence_log_likelihood(b.em, b.params, path);
      EXPECT_LE(ll, 1e-12);
      total += std::exp(ll);
    });
    EXPECT_NEAR(total, 1.0, 1e-8);

    // constant added to one position's emissions
    const auto before = crf::viterbi_decode(b.em, b.params);
    const double z0 = crf::log_partition(b.em, b.params).item();
    auto shifted = c;
    const std::size_t pos = rng() % c.n;
    for (std::size_t j = 0; j < c.k; ++j) shifted.em[pos * c.k + j] += 3.25;
    auto bs = build(shifted);
    EXPECT_NEAR(crf::log_partition(bs.em, bs.params).item(), z0 + 3.25, 1e-10);
    EXPECT_EQ(crf::viterbi_decode(bs.em, bs.params).path, before.path);
    EXPECT_NEAR(crf::sequence_log_likelihood(bs.em, bs.params, before.path),
                crf::sequence_log_likelihood(b.em, b.params, before.path), 1e-10);
  }
}
