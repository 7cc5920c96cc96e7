#pragma once

// Corpus diagnostics: ineffective-token accounting, token autocorrelation and
// repetitive-note density.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/midi_io.hpp"

namespace perceivers {

struct EfficiencyCell {
  std::int64_t query_length = 0;
  std::int64_t max_input_length = 0;
  std::int64_t non_contributing = 0;
  std::int64_t total = 0;
  double rate = 0.0;
};

/// Tokens never supervised under baseline slicing: sum of max(0, min(m, l) - n).
inline EfficiencyCell token_efficiency(std::span<const std::int64_t> lengths, std::int64_t n, std::int64_t m) {
  if (n < 1 || m < 1) throw InvalidArgument("query and max input lengths must be positive");
  EfficiencyCell cell{n, m, 0, 0, 0.0};
  for (auto l : lengths) {
    if (l < 1) throw InvalidArgument("sequence lengths must be positive");
    cell.non_contributing += std::max<std::int64_t>(0, std::min(m, l) - n);
    cell.total += l;
  }
  cell.rate = cell.total ? double(cell.non_contributing) / double(cell.total) : 0.0;
  return cell;
}

/// Row per query length, column per max input length.
inline std::vector<std::vector<EfficiencyCell>> efficiency_matrix(std::span<const std::int64_t> lengths,
                                                                  std::span<const std::int64_t> query_lengths,
                                                                  std::span<const std::int64_t> max_lengths) {
  std::vector<std::vector<EfficiencyCell>> grid;
  for (auto n : query_lengths) {
    auto& row = grid.emplace_back();
    for (auto m : max_lengths) row.push_back(token_efficiency(lengths, n, m));
  }
  return grid;
}

inline constexpr std::int64_t kTableLengths[] = {1024, 2048, 4096, 8192, 16384, 32768};

/// Lag-k autocorrelation, normalised by the total variance of the sequence.
inline double autocorrelation(std::span<const double> x, std::size_t k) {
  const std::size_t t = x.size();
  if (t < 2 || k < 1 || k > t - 1) throw InvalidArgument("lag must satisfy 1 <= k <= T-1");
  double mean = 0;
  for (double v : x) mean += v;
  mean /= double(t);
  double den = 0;
  for (double v : x) den += (v - mean) * (v - mean);
  if (den == 0.0) throw UndefinedResult("autocorrelation of a constant sequence is undefined");
  double num = 0;
  for (std::size_t i = k; i < t; ++i) num += (x[i] - mean) * (x[i - k] - mean);
  return num / den;
}

inline std::vector<double> token_values(std::span<const Token> tokens) {
  return {tokens.begin(), tokens.end()};
}

/// Note onsets per window, `segments` equal windows over [0, last offset].
inline std::vector<double> note_count_series(std::span<const MidiNote> notes, int segments = 64);

struct RepetitionConfig {
  int segments = 64;
  int gram = 4;
  int min_repeats = 3;
};

/// Flags notes that sit inside a back-to-back repetition of a pitch n-gram.
/// Notes are taken in (onset, pitch) order; returned flags follow that order.
inline std::vector<bool> repetitive_flags(std::span<const int> pitches, int gram, int min_repeats) {
  if (gram < 1 || min_repeats < 2) throw InvalidArgument("gram must be >= 1 and min_repeats >= 2");
  const std::size_t g = std::size_t(gram), len = pitches.size();
  std::vector<bool> flag(len, false);
  std::size_t j = 0;
  while (j + g < len) {
    if (pitches[j] != pitches[j + g]) {
      ++j;
      continue;
    }
    std::size_t a = j;
    while (j + g < len && pitches[j] == pitches[j + g]) ++j;
    // positions a .. j-1+g form a span with period `gram`
    const std::size_t span = (j - a) + g;
    if (span / g >= std::size_t(min_repeats))
      for (std::size_t k = a; k < a + span; ++k) flag[k] = true;
  }
  return flag;
}

namespace detail {

inline std::vector<MidiNote> onset_ordered(std::span<const MidiNote> notes) {
  std::vector<MidiNote> v(notes.begin(), notes.end());
  std::stable_sort(v.begin(), v.end(), [](const MidiNote& a, const MidiNote& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.pitch < b.pitch;
  });
  return v;
}

inline double piece_end(std::span<const MidiNote> notes) {
  double end = 0;
  for (const auto& n : notes) end = std::max(end, n.offset);
  return end;
}

inline int window_of(double onset, double end, int segments) {
  return std::clamp(int(std::floor(onset / end * segments)), 0, segments - 1);
}

}  // namespace detail

inline std::vector<double> note_count_series(std::span<const MidiNote> notes, int segments) {
  if (segments < 1) throw InvalidArgument("segments must be positive");
  std::vector<double> out(std::size_t(segments), 0.0);
  if (notes.empty()) return out;
  const double end = detail::piece_end(notes);
  if (!(end > 0)) throw InvalidArgument("piece duration must be positive");
  for (const auto& n : notes) out[detail::window_of(n.onset, end, segments)] += 1;
  return out;
}

/// Repetitive notes per second in each of `segments` equal-duration windows.
inline std::vector<double> repetition_density(std::span<const MidiNote> notes, const RepetitionConfig& cfg = {}) {
  if (cfg.segments < 1) throw InvalidArgument("segments must be positive");
  std::vector<double> out(std::size_t(cfg.segments), 0.0);
  if (notes.empty()) return out;
  const double end = detail::piece_end(notes);
  if (!(end > 0)) throw InvalidArgument("piece duration must be positive");
  const auto ordered = detail::onset_ordered(notes);
  std::vector<int> pitches;
  pitches.reserve(ordered.size());
  for (const auto& n : ordered) pitches.push_back(n.pitch);
  const auto flags = repetitive_flags(pitches, cfg.gram, cfg.min_repeats);
  const double width = end / cfg.segments;
  for (std::size_t k = 0; k < ordered.size(); ++k)
    if (flags[k]) out[detail::window_of(ordered[k].onset, end, cfg.segments)] += 1.0 / width;
  return out;
}

}  // namespace perceivers
