#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "perceivers/analysis.hpp"
#include "support/synthetic.hpp"

using namespace perceivers;

namespace {

std::vector<std::int64_t> synthetic_lengths(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> logn(std::log(15000.0), 0.9);
  std::vector<std::int64_t> out;
  for (int k = 0; k < count; ++k) out.push_back(std::clamp<std::int64_t>(std::llround(logn(rng)), 1, 200000));
  return out;
}

// Counts by position instead of by sequence: a position p in (n, m] is
// non-contributing once for every sequence at least p tokens long.
std::int64_t position_count_oracle(const std::vector<std::int64_t>& lengths, std::int64_t n, std::int64_t m) {
  std::int64_t longest = 0;
  for (auto l : lengths) longest = std::max(longest, l);
  std::vector<std::int64_t> at_least(std::size_t(longest) + 2, 0);
  for (auto l : lengths) at_least[std::size_t(l)] += 1;
  for (std::int64_t p = longest - 1; p >= 1; --p) at_least[std::size_t(p)] += at_least[std::size_t(p) + 1];
  std::int64_t total = 0;
  for (std::int64_t p = n + 1; p <= std::min(m, longest); ++p) total += at_least[std::size_t(p)];
  return total;
}

double direct_autocorrelation(const std::vector<double>& x, std::size_t k) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= double(x.size());
  double num = 0, den = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    den += (x[t] - mean) * (x[t] - mean);
    if (t + k < x.size()) num += (x[t] - mean) * (x[t + k] - mean);
  }
  return num / den;
}

std::vector<MidiNote> evenly_spaced(const std::vector<int>& pitches, double spacing) {
  std::vector<MidiNote> out;
  for (std::size_t k = 0; k < pitches.size(); ++k)
    out.push_back({pitches[k], double(k) * spacing, double(k) * spacing + 0.9 * spacing, 80});
  return out;
}

// Walk over [72, 95] with steps +1..+5 wrapping: never returns to a pitch
// within four notes, so no 4-gram can repeat back to back.
std::vector<int> climbing_walk(std::mt19937_64& rng, int count) {
  std::vector<int> out;
  int p = 72 + synth::uniform_int(rng, 0, 23);
  for (int k = 0; k < count; ++k) {
    out.push_back(p);
    p = 72 + (p - 72 + synth::uniform_int(rng, 1, 5)) % 24;
  }
  return out;
}

}  // namespace

TEST(Efficiency, SingleSequenceExample) {
  const std::vector<std::int64_t> l{5000};
  const auto cell = token_efficiency(l, 1024, 32768);
  EXPECT_EQ(cell.non_contributing, 3976);
  EXPECT_EQ(cell.total, 5000);
  EXPECT_DOUBLE_EQ(cell.rate, 3976.0 / 5000.0);
}

TEST(Efficiency, QueryNotShorterThanContextGivesZero) {
  const auto lengths = synthetic_lengths(1, 50);
  for (std::int64_t n : {1024, 2048, 4096})
    for (std::int64_t m : {256, 512, 1024})
      EXPECT_EQ(token_efficiency(lengths, n, m).non_contributing, 0) << n << " " << m;
}

TEST(Efficiency, MatrixMatchesPositionCountOracle) {
  const auto lengths = synthetic_lengths(7, 1251);
  const auto grid = efficiency_matrix(lengths, kTableLengths, kTableLengths);
  ASSERT_EQ(grid.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const auto& cell = grid[i][j];
      EXPECT_EQ(cell.non_contributing, position_count_oracle(lengths, kTableLengths[i], kTableLengths[j]));
      EXPECT_GE(cell.rate, 0.0);
      EXPECT_LE(cell.rate, 1.0);
    }
}

TEST(Efficiency, DiagonalIsZeroAndMonotone) {
  const auto lengths = synthetic_lengths(9, 300);
  const auto grid = efficiency_matrix(lengths, kTableLengths, kTableLengths);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(grid[i][i].non_contributing, 0);
    for (std::size_t j = 0; j < 6; ++j) {
      if (j + 1 < 6) {
        EXPECT_LE(grid[i][j].non_contributing, grid[i][j + 1].non_contributing);
      }
      if (i + 1 < 6) {
        EXPECT_GE(grid[i][j].non_contributing, grid[i + 1][j].non_contributing);
      }
    }
  }
}

TEST(Efficiency, RejectsNonPositiveLengths) {
  const std::vector<std::int64_t> bad{10, 0};
  EXPECT_THROW(token_efficiency(bad, 1, 4), InvalidArgument);
}

TEST(Autocorrelation, AlternatingSequence) {
  const std::vector<double> x{1, -1, 1, -1, 1, -1};
  EXPECT_NEAR(autocorrelation(x, 1), -5.0 / 6.0, 1e-12);
  EXPECT_NEAR(autocorrelation(x, 1), direct_autocorrelation(x, 1), 1e-15);
}

TEST(Autocorrelation, TwoValuesAtMaximalLag) {
  const std::vector<double> x{3.0, 7.0};
  // deviations -2 and +2: numerator -4, denominator 8
  EXPECT_DOUBLE_EQ(autocorrelation(x, 1), -0.5);
}

TEST(Autocorrelation, MatchesDirectSummationAndStaysInRange) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(std::size_t(synth::uniform_int(rng, 2, 80)));
    for (auto& v : x) v = synth::uniform_real(rng, -5, 5);
    const std::size_t k = std::size_t(synth::uniform_int(rng, 1, int(x.size()) - 1));
    const double r = autocorrelation(x, k);
    EXPECT_NEAR(r, direct_autocorrelation(x, k), 1e-12);
    EXPECT_GE(r, -1.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Autocorrelation, ShiftInvariant) {
  const std::vector<double> x{2, 9, 4, 4, 7, 1, 3};
  std::vector<double> y;
  for (double v : x) y.push_back(v + 1000.0);
  for (std::size_t k = 1; k < x.size(); ++k) EXPECT_NEAR(autocorrelation(x, k), autocorrelation(y, k), 1e-9);
}

TEST(Autocorrelation, ConstantSequenceIsUndefined) {
  const std::vector<double> x(10, 4.0);
  EXPECT_THROW(autocorrelation(x, 1), UndefinedResult);
}

TEST(Autocorrelation, LagOutOfRange) {
  const std::vector<double> x{1, 2, 3};
  EXPECT_THROW(autocorrelation(x, 0), InvalidArgument);
  EXPECT_THROW(autocorrelation(x, 3), InvalidArgument);
}

TEST(Autocorrelation, SeriesHelpers) {
  const std::vector<Token> t{5, 7, 9};
  EXPECT_EQ(token_values(t), (std::vector<double>{5, 7, 9}));
  const auto notes = evenly_spaced({60, 62, 64, 65}, 1.0);
  const auto series = note_count_series(notes, 4);
  EXPECT_EQ(series, (std::vector<double>{1, 1, 1, 1}));
}

TEST(Repetition, FlagsExactPeriodicRuns) {
  const std::vector<int> three{1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4};
  const auto f = repetitive_flags(three, 4, 3);
  EXPECT_EQ(std::count(f.begin(), f.end(), true), 12);
  const std::vector<int> two{1, 2, 3, 4, 1, 2, 3, 4, 9};
  const auto g = repetitive_flags(two, 4, 3);
  EXPECT_EQ(std::count(g.begin(), g.end(), true), 0);
  const std::vector<int> framed{9, 8, 1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4, 7};
  const auto h = repetitive_flags(framed, 4, 3);
  for (std::size_t k = 0; k < framed.size(); ++k) EXPECT_EQ(h[k], k >= 2 && k < 14) << k;
}

TEST(Repetition, PlantedLoopMatchesConstructionAndDominatesWalk) {
  std::mt19937_64 rng(12);
  const auto prefix = climbing_walk(rng, 16);
  const auto suffix = climbing_walk(rng, 16);
  const auto middle = climbing_walk(rng, 48);
  std::vector<int> looped = prefix, plain = prefix;
  for (int r = 0; r < 12; ++r)
    for (int p : {60, 64, 67, 64}) looped.push_back(p);
  plain.insert(plain.end(), middle.begin(), middle.end());
  looped.insert(looped.end(), suffix.begin(), suffix.end());
  plain.insert(plain.end(), suffix.begin(), suffix.end());

  const double spacing = 0.25;
  const auto loop_piece = evenly_spaced(looped, spacing);
  const auto walk_piece = evenly_spaced(plain, spacing);
  const auto loop_density = repetition_density(loop_piece);
  const auto walk_density = repetition_density(walk_piece);

  // Planted oracle: notes 16..63 are the loop; nothing else repeats.
  const double end = loop_piece.back().offset;
  const double width = end / 64.0;
  std::vector<double> expected(64, 0.0);
  for (int k = 16; k < 64; ++k) expected[std::size_t(std::min(63, int(std::floor(loop_piece[k].onset / end * 64))))] += 1.0 / width;
  for (std::size_t s = 0; s < 64; ++s) EXPECT_NEAR(loop_density[s], expected[s], 1e-9) << s;

  double loop_sum = 0, walk_sum = 0;
  int looped_segments = 0;
  for (std::size_t s = 0; s < 64; ++s) {
    EXPECT_EQ(walk_density[s], 0.0);
    if (expected[s] > 0) {
      ++looped_segments;
      EXPECT_GT(loop_density[s], 0.0);
      loop_sum += loop_density[s];
      walk_sum += walk_density[s];
    }
  }
  EXPECT_GT(looped_segments, 30);
  EXPECT_GE(loop_sum, 10.0 * walk_sum);
  EXPECT_GT(loop_sum, 0.0);
}

TEST(Repetition, FewerThanTwelveNotesIsZero) {
  const auto piece = evenly_spaced({60, 64, 67, 64, 60, 64, 67, 64, 60, 64, 67}, 0.5);
  for (double d : repetition_density(piece)) EXPECT_EQ(d, 0.0);
}

TEST(Repetition, StretchingTimeHalvesDensity) {
  std::vector<int> pitches;
  for (int r = 0; r < 12; ++r)
    for (int p : {60, 64, 67, 64}) pitches.push_back(p);
  const auto a = evenly_spaced(pitches, 0.2);
  const auto b = evenly_spaced(pitches, 0.4);
  const auto da = repetition_density(a), db = repetition_density(b);
  for (std::size_t s = 0; s < 64; ++s) EXPECT_NEAR(db[s], da[s] / 2.0, 1e-9);
}

TEST(Repetition, EmptyPieceIsAllZero) {
  const std::vector<MidiNote> none;
  const auto d = repetition_density(none);
  ASSERT_EQ(d.size(), 64u);
  for (double v : d) EXPECT_EQ(v, 0.0);
}
