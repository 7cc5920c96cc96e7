#include <gtest/gtest.h>

#include <map>
#include <random>

#include "perceivers/masking.hpp"
#include "perceivers/segmentation.hpp"

using namespace perceivers;

namespace {

constexpr Token P = vocab::kPad;

std::vector<Token> ramp(int l) {
  std::vector<Token> s;
  for (int k = 1; k <= l; ++k) s.push_back(Token(k));
  return s;
}

SamplerConfig cfg(int m, int n, SamplerMode mode = SamplerMode::Effective) {
  SamplerConfig c;
  c.m = m;
  c.n = n;
  c.mode = mode;
  return c;
}

// Oracle: every baseline window [s, s+m-1] teaches positions s+m-n+1 .. s+m
// (those inside the sequence); a sequence shorter than m is one window.
std::set<std::int64_t> never_supervised_by_enumeration(std::int64_t l, std::int64_t m, std::int64_t n) {
  std::vector<bool> taught(std::size_t(l) + 2, false);
  const std::int64_t first_last_input = std::min(l, m);
  for (std::int64_t q = first_last_input; q <= l; ++q)
    for (std::int64_t p = q - n + 2; p <= q + 1; ++p)
      if (p >= 2 && p <= l) taught[std::size_t(p)] = true;
  std::set<std::int64_t> out;
  for (std::int64_t p = 2; p <= l; ++p)
    if (!taught[std::size_t(p)]) out.insert(p);
  return out;
}

}  // namespace

TEST(Segmentation, EffectiveEarlyEndpointIsLeftPadded) {
  auto seq = ramp(20);
  auto s = effective_sample_at(seq, cfg(8, 4), 4);
  EXPECT_EQ(s.inputs, (std::vector<Token>{P, P, P, P, P, 1, 2, 3}));
  EXPECT_EQ(s.pad_count, 5);
  EXPECT_EQ(s.target_positions, (std::vector<std::int64_t>{1, 2, 3, 4}));
  EXPECT_EQ(s.targets, (std::vector<Token>{1, 2, 3, 4}));
  EXPECT_EQ(s.ignore, (std::vector<std::uint8_t>{1, 0, 0, 0}));
}

TEST(Segmentation, SingleQueryEndpointTwoSupervisesPositionTwo) {
  auto seq = ramp(20);
  auto s = effective_sample_at(seq, cfg(8, 1), 2);
  EXPECT_EQ(s.inputs, (std::vector<Token>{P, P, P, P, P, P, P, 1}));
  EXPECT_EQ(s.targets, (std::vector<Token>{2}));
  EXPECT_EQ(s.supervised_count(), 1u);
}

TEST(Segmentation, EffectiveLateEndpointIsAFullWindow) {
  auto seq = ramp(20);
  auto s = effective_sample_at(seq, cfg(8, 4), 20);
  EXPECT_EQ(s.inputs, (std::vector<Token>{12, 13, 14, 15, 16, 17, 18, 19}));
  EXPECT_EQ(s.targets, (std::vector<Token>{17, 18, 19, 20}));
  EXPECT_EQ(s.supervised_count(), 4u);
  EXPECT_EQ(s.pad_count, 0);
}

TEST(Segmentation, BaselineWindowShiftsTargetsByOne) {
  auto seq = ramp(20);
  auto s = baseline_sample_at(seq, cfg(8, 4, SamplerMode::Baseline), 3);
  EXPECT_EQ(s.inputs, (std::vector<Token>{3, 4, 5, 6, 7, 8, 9, 10}));
  EXPECT_EQ(s.targets, (std::vector<Token>{8, 9, 10, 11}));
  EXPECT_EQ(s.supervised_count(), 4u);
}

TEST(Segmentation, BaselineShortSequenceIsUsedWhole) {
  auto seq = ramp(5);
  auto s = baseline_sample_at(seq, cfg(8, 4, SamplerMode::Baseline), 1);
  EXPECT_EQ(s.inputs, (std::vector<Token>{P, P, P, 1, 2, 3, 4, 5}));
  EXPECT_EQ(s.target_positions, (std::vector<std::int64_t>{3, 4, 5, 6}));
  EXPECT_EQ(s.ignore, (std::vector<std::uint8_t>{0, 0, 0, 1}));
}

TEST(Segmentation, RangeChecks) {
  auto seq = ramp(20);
  EXPECT_THROW(effective_sample_at(seq, cfg(8, 4), 3), InvalidArgument);
  EXPECT_THROW(effective_sample_at(seq, cfg(8, 4), 21), InvalidArgument);
  EXPECT_THROW(baseline_sample_at(seq, cfg(8, 4, SamplerMode::Baseline), 14), InvalidArgument);
  EXPECT_THROW(cfg(4, 8).validate(), InvalidArgument);
  EXPECT_EQ(min_effective_endpoint(cfg(8, 1)), 2);
}

TEST(Segmentation, EffectiveCoversEveryPositionFromTwo) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = std::uniform_int_distribution<int>(1, 24)(rng);
    const int n = std::uniform_int_distribution<int>(1, m)(rng);
    const int l = std::uniform_int_distribution<int>(std::max(2, n), 90)(rng);
    auto seq = ramp(l);
    auto samples = all_samples(seq, cfg(m, n));
    auto covered = supervised_coverage(samples, l);
    ASSERT_EQ(covered.size(), std::size_t(l - 1)) << "m=" << m << " n=" << n << " l=" << l;
    EXPECT_EQ(*covered.begin(), 2);
    EXPECT_EQ(*covered.rbegin(), l);
  }
}

TEST(Segmentation, BaselineGapMatchesEnumeration) {
  for (int l : {3, 8, 9, 30, 64, 65, 200}) {
    for (auto [m, n] : {std::pair{8, 4}, {16, 1}, {64, 8}, {8, 8}}) {
      auto seq = ramp(l);
      auto samples = all_samples(seq, cfg(m, n, SamplerMode::Baseline));
      auto covered = supervised_coverage(samples, l);
      std::set<std::int64_t> missing;
      for (std::int64_t p = 2; p <= l; ++p)
        if (!covered.count(p)) missing.insert(p);
      EXPECT_EQ(missing, never_supervised_by_enumeration(l, m, n)) << "l=" << l << " m=" << m << " n=" << n;
      EXPECT_EQ(std::int64_t(missing.size()), std::max(0, std::min(m, l) - n)) << "l=" << l;
    }
  }
}

TEST(Segmentation, SupervisedTargetsMatchSourceAndQueriesAreCausal) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const int m = std::uniform_int_distribution<int>(2, 20)(rng);
    const int n = std::uniform_int_distribution<int>(1, m)(rng);
    const int l = std::uniform_int_distribution<int>(std::max(2, n), 60)(rng);
    const auto mode = trial % 2 ? SamplerMode::Baseline : SamplerMode::Effective;
    auto seq = ramp(l);  // token value == absolute position
    const auto visible = final_block_causal(n, m);
    for (const auto& s : all_samples(seq, cfg(m, n, mode))) {
      for (int i = 0; i < n; ++i) {
        if (s.ignore[i]) continue;
        const auto p = s.target_positions[i];
        EXPECT_EQ(s.targets[i], Token(p));
        EXPECT_EQ(s.inputs[m - n + i], Token(p - 1));
        for (int j = 0; j < m; ++j)
          if (visible.at(i, j) && s.inputs[j] != P) {
            EXPECT_LT(s.inputs[j], p);
          }
      }
      for (int j = 0; j < m; ++j) EXPECT_EQ(s.inputs[j] == P, j < s.pad_count);
    }
  }
}

TEST(Segmentation, SequentialEffectiveTilesExactlyOnce) {
  for (int l : {1, 2, 3, 7, 8, 9, 16, 33, 100}) {
    for (auto [m, n] : {std::pair{8, 4}, {8, 1}, {8, 8}, {12, 5}}) {
      auto seq = ramp(l);
      auto samples = effective_samples_sequential(seq, cfg(m, n));
      std::map<std::int64_t, int> hits;
      for (const auto& s : samples)
        for (int i = 0; i < n; ++i)
          if (!s.ignore[i]) ++hits[s.target_positions[i]];
      if (l < n) {
        EXPECT_TRUE(samples.empty());
        continue;
      }
      ASSERT_EQ(hits.size(), std::size_t(l - 1)) << "l=" << l << " m=" << m << " n=" << n;
      for (auto [pos, count] : hits) {
        EXPECT_EQ(count, 1) << pos;
        EXPECT_GE(pos, 2);
        EXPECT_LE(pos, l);
      }
    }
  }
}

TEST(Segmentation, SequentialEndpointsAreMultiplesOfQueryLength) {
  auto seq = ramp(23);
  auto samples = effective_samples_sequential(seq, cfg(8, 4));
  std::vector<std::int64_t> ends;
  for (const auto& s : samples) ends.push_back(s.target_positions.back());
  EXPECT_EQ(ends, (std::vector<std::int64_t>{4, 8, 12, 16, 20, 23}));
}

TEST(Segmentation, SequentialBaselineWalksEveryStart) {
  auto seq = ramp(12);
  auto c = cfg(8, 2, SamplerMode::Baseline);
  SequentialSampler sampler(seq, c);
  int count = 0;
  while (auto s = sampler.next()) {
    ++count;
    EXPECT_EQ(s->inputs.front(), Token(count));
  }
  EXPECT_EQ(count, 5);
}

TEST(Segmentation, RandomSamplersAreSeededAndInRange) {
  auto seq = ramp(50);
  std::mt19937_64 a(9), b(9);
  for (int k = 0; k < 200; ++k) {
    auto sa = effective_sample_random(seq, cfg(8, 4), a);
    auto sb = effective_sample_random(seq, cfg(8, 4), b);
    EXPECT_EQ(sa.inputs, sb.inputs);
    EXPECT_GE(sa.target_positions.back(), 4);
    EXPECT_LE(sa.target_positions.back(), 50);
  }
  std::mt19937_64 c(10);
  for (int k = 0; k < 200; ++k) {
    auto s = baseline_sample(seq, cfg(8, 4, SamplerMode::Baseline), c);
    EXPECT_EQ(s.pad_count, 0);
    EXPECT_LE(s.inputs.back(), 50);
  }
  EXPECT_THROW(effective_sample_random(ramp(3), cfg(8, 4), c), InvalidArgument);
}
