#pragma once

// Training-window extraction.
//
// Positions are 1-based over the source sequence x_1..x_l. A sample is fully
// described by the absolute position q of its last input slot: the m input
// slots hold x_{q-m+1}..x_q (positions < 1 are PAD), the final n slots are
// query slots, and the slot at position p predicts x_{p+1}. Targets whose
// query slot is PAD, or that fall past the end of the sequence, are ignored.
// Position 1 is therefore never supervised.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/midi_io.hpp"

namespace perceivers {

enum class SamplerMode { Baseline, Effective };
enum class SamplerAccess { Random, Sequential };

struct SamplerConfig {
  SamplerMode mode = SamplerMode::Effective;
  SamplerAccess access = SamplerAccess::Random;
  int m = 64;  // input slots
  int n = 8;   // query slots
  Token pad_index = vocab::kPad;

  void validate() const {
    if (n < 1 || n > m) throw InvalidArgument("sampler requires 1 <= n <= m");
    if (pad_index != vocab::kPad) throw InvalidArgument("pad_index must be PAD");
  }
};

struct SegmentSample {
  std::vector<Token> inputs;                    // m slots, left-padded
  std::vector<Token> targets;                   // n labels
  std::vector<std::int64_t> target_positions;   // absolute, strictly increasing
  std::vector<std::uint8_t> ignore;             // 1 = contributes no loss
  int pad_count = 0;

  std::size_t supervised_count() const {
    return static_cast<std::size_t>(std::count(ignore.begin(), ignore.end(), 0));
  }
};

/// Builds the sample whose last input slot sits at absolute position `last_input`.
inline SegmentSample sample_ending_at(std::span<const Token> seq, int m, int n,
                                      std::int64_t last_input) {
  const auto l = static_cast<std::int64_t>(seq.size());
  SegmentSample s;
  s.inputs.resize(m, vocab::kPad);
  for (int slot = 0; slot < m; ++slot) {
    std::int64_t pos = last_input - (m - 1) + slot;
    if (pos >= 1 && pos <= l) s.inputs[slot] = seq[pos - 1];
  }
  s.pad_count = static_cast<int>(std::clamp<std::int64_t>(m - last_input, 0, m));
  for (int i = 0; i < n; ++i) {
    std::int64_t query_pos = last_input - (n - 1) + i;
    std::int64_t target_pos = query_pos + 1;
    bool in_range = target_pos >= 1 && target_pos <= l;
    s.targets.push_back(in_range ? seq[target_pos - 1] : vocab::kPad);
    s.target_positions.push_back(target_pos);
    s.ignore.push_back((query_pos >= 1 && in_range) ? 0 : 1);
  }
  return s;
}

/// Baseline crop with explicit start s in [1, l-m+1]; shorter sequences are used whole.
inline SegmentSample baseline_sample_at(std::span<const Token> seq, const SamplerConfig& cfg,
                                        std::int64_t start) {
  cfg.validate();
  const auto l = static_cast<std::int64_t>(seq.size());
  if (l == 0) throw InvalidArgument("empty sequence");
  if (l < cfg.m) return sample_ending_at(seq, cfg.m, cfg.n, l);
  if (start < 1 || start > l - cfg.m + 1) throw InvalidArgument("baseline start out of range");
  return sample_ending_at(seq, cfg.m, cfg.n, start + cfg.m - 1);
}

/// Smallest admissible effective endpoint; e = 1 would supervise nothing.
inline std::int64_t min_effective_endpoint(const SamplerConfig& cfg) {
  return std::max(cfg.n, 2);
}

/// Effective-segmentation sample whose final supervised position is `endpoint`.
inline SegmentSample effective_sample_at(std::span<const Token> seq, const SamplerConfig& cfg,
                                         std::int64_t endpoint) {
  cfg.validate();
  const auto l = static_cast<std::int64_t>(seq.size());
  if (endpoint < min_effective_endpoint(cfg) || endpoint > l)
    throw InvalidArgument("effective endpoint out of range");
  return sample_ending_at(seq, cfg.m, cfg.n, endpoint - 1);
}

template <class Rng>
SegmentSample baseline_sample(std::span<const Token> seq, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto l = static_cast<std::int64_t>(seq.size());
  if (l == 0) throw InvalidArgument("empty sequence");
  if (l < cfg.m) return baseline_sample_at(seq, cfg, 1);
  std::uniform_int_distribution<std::int64_t> pick(1, l - cfg.m + 1);
  return baseline_sample_at(seq, cfg, pick(rng));
}

template <class Rng>
SegmentSample effective_sample_random(std::span<const Token> seq, const SamplerConfig& cfg,
                                      Rng& rng) {
  cfg.validate();
  const auto l = static_cast<std::int64_t>(seq.size());
  const std::int64_t lo = min_effective_endpoint(cfg);
  if (l < lo) throw InvalidArgument("sequence shorter than the query length");
  std::uniform_int_distribution<std::int64_t> pick(lo, l);
  return effective_sample_at(seq, cfg, pick(rng));
}

/// Ordered stream of samples for sequential access.
///
/// Effective mode: endpoints n, 2n, 3n, ... (prefixes while k*n <= m, then
/// m-slot windows), plus a tail sample ending at l when n does not divide l;
/// the tail ignores targets already supervised so the stream tiles [2, l]
/// exactly once. Baseline mode walks the overlapping stride-1 windows.
class SequentialSampler {
 public:
  SequentialSampler(std::span<const Token> seq, SamplerConfig cfg) : seq_(seq), cfg_(cfg) {
    cfg_.validate();
    const auto l = static_cast<std::int64_t>(seq_.size());
    if (cfg_.mode == SamplerMode::Effective) {
      next_ = cfg_.n;
      while (next_ < 2) next_ += cfg_.n;
      if (l < cfg_.n) next_ = l + 1;  // too short to fill a query
    } else {
      next_ = l == 0 ? 2 : 1;
    }
  }

  std::optional<SegmentSample> next() {
    const auto l = static_cast<std::int64_t>(seq_.size());
    if (cfg_.mode == SamplerMode::Baseline) {
      std::int64_t last = std::max<std::int64_t>(1, l - cfg_.m + 1);
      if (next_ > last) return std::nullopt;
      return baseline_sample_at(seq_, cfg_, next_++);
    }
    if (next_ <= l) {
      SegmentSample s = effective_sample_at(seq_, cfg_, next_);
      covered_ = next_;
      next_ += cfg_.n;
      return s;
    }
    if (covered_ < l && next_ - cfg_.n < l && l >= cfg_.n) {
      SegmentSample s = effective_sample_at(seq_, cfg_, l);
      for (std::size_t i = 0; i < s.target_positions.size(); ++i)
        if (s.target_positions[i] <= covered_) s.ignore[i] = 1;
      covered_ = l;
      return s;
    }
    return std::nullopt;
  }

 private:
  std::span<const Token> seq_;
  SamplerConfig cfg_;
  std::int64_t next_ = 1;
  std::int64_t covered_ = 0;
};

inline std::vector<SegmentSample> effective_samples_sequential(std::span<const Token> seq,
                                                               SamplerConfig cfg) {
  cfg.mode = SamplerMode::Effective;
  cfg.access = SamplerAccess::Sequential;
  SequentialSampler sampler(seq, cfg);
  std::vector<SegmentSample> out;
  while (auto s = sampler.next()) out.push_back(std::move(*s));
  return out;
}

/// Positions in [1, l] carrying at least one non-ignored target.
inline std::set<std::int64_t> supervised_coverage(std::span<const SegmentSample> samples,
                                                  std::int64_t l) {
  std::set<std::int64_t> covered;
  for (const auto& s : samples)
    for (std::size_t i = 0; i < s.targets.size(); ++i)
      if (!s.ignore[i] && s.target_positions[i] >= 1 && s.target_positions[i] <= l)
        covered.insert(s.target_positions[i]);
  return covered;
}

/// Every sample the given regime can produce for a sequence (all starts or all endpoints).
inline std::vector<SegmentSample> all_samples(std::span<const Token> seq, const SamplerConfig& cfg) {
  std::vector<SegmentSample> out;
  const auto l = static_cast<std::int64_t>(seq.size());
  if (cfg.mode == SamplerMode::Baseline) {
    if (l == 0) return out;
    std::int64_t last = std::max<std::int64_t>(1, l - cfg.m + 1);
    for (std::int64_t s = 1; s <= last; ++s) out.push_back(baseline_sample_at(seq, cfg, s));
  } else {
    for (std::int64_t e = min_effective_endpoint(cfg); e <= l; ++e)
      out.push_back(effective_sample_at(seq, cfg, e));
  }
  return out;
}

}  // namespace perceivers
