#pragma once

// Per-piece musical features, set-to-set distance distributions, and their
// comparison by KL divergence and overlap area.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/midi_io.hpp"

namespace perceivers {

enum class FeatureKind { PC, NC, PCH, PCTM, PR, PI, IOI, NLH, NLTM, PC_seg, NC_seg, PCH_seg, IOI_seg };

inline constexpr std::array<FeatureKind, 13> kAllFeatures = {
    FeatureKind::PC,  FeatureKind::NC,  FeatureKind::PCH,    FeatureKind::PCTM,   FeatureKind::PR,
    FeatureKind::PI,  FeatureKind::IOI, FeatureKind::NLH,    FeatureKind::NLTM,   FeatureKind::PC_seg,
    FeatureKind::NC_seg, FeatureKind::PCH_seg, FeatureKind::IOI_seg};

inline std::string_view feature_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::PC: return "PC";
    case FeatureKind::NC: return "NC";
    case FeatureKind::PCH: return "PCH";
    case FeatureKind::PCTM: return "PCTM";
    case FeatureKind::PR: return "PR";
    case FeatureKind::PI: return "PI";
    case FeatureKind::IOI: return "IOI";
    case FeatureKind::NLH: return "NLH";
    case FeatureKind::NLTM: return "NLTM";
    case FeatureKind::PC_seg: return "PC/seg";
    case FeatureKind::NC_seg: return "NC/seg";
    case FeatureKind::PCH_seg: return "PCH/seg";
    case FeatureKind::IOI_seg: return "IOI/seg";
  }
  return "?";
}

inline bool is_scalar(FeatureKind k) {
  return k == FeatureKind::PC || k == FeatureKind::NC || k == FeatureKind::PR || k == FeatureKind::PI ||
         k == FeatureKind::IOI;
}

struct EvalConfig {
  int segments = 64;
  int length_bins = 16;
  double min_length = 0.025;  // seconds, lower edge of the first length bin
  double max_length = 6.4;    // seconds, upper edge of the last length bin
  int grid_points = 1000;

  void validate() const {
    if (segments < 1) throw InvalidArgument("segments must be positive");
    if (length_bins < 1) throw InvalidArgument("length_bins must be positive");
    if (!(min_length > 0 && max_length > min_length)) throw InvalidArgument("length bin edges are invalid");
    if (grid_points < 2) throw InvalidArgument("grid_points must be >= 2");
  }
};

/// Scalars have one entry; vectors and matrices are flattened row-major.
using FeatureValue = std::vector<double>;

namespace detail {

inline std::vector<MidiNote> by_onset(std::span<const MidiNote> notes) {
  std::vector<MidiNote> v(notes.begin(), notes.end());
  std::stable_sort(v.begin(), v.end(), [](const MidiNote& a, const MidiNote& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.pitch < b.pitch;
  });
  return v;
}

inline int pitch_class(int pitch) { return ((pitch % 12) + 12) % 12; }

inline int length_bin(double length, const EvalConfig& cfg) {
  const double ratio = std::log(cfg.max_length / cfg.min_length) / cfg.length_bins;
  const double pos = std::log(std::max(length, 1e-12) / cfg.min_length) / ratio;
  return std::clamp(int(std::floor(pos)), 0, cfg.length_bins - 1);
}

inline void normalize(std::span<double> v) {
  double s = 0;
  for (double x : v) s += x;
  if (s > 0)
    for (double& x : v) x /= s;
}

inline void normalize_rows(std::vector<double>& m, int cols) {
  for (std::size_t r = 0; r < m.size() / cols; ++r) normalize(std::span<double>(m.data() + r * cols, cols));
}

inline FeatureValue pitch_class_histogram(std::span<const MidiNote> notes) {
  FeatureValue h(12, 0.0);
  for (const auto& n : notes) h[pitch_class(n.pitch)] += 1;
  normalize(h);
  return h;
}

inline double mean_ioi(std::span<const MidiNote> ordered) {
  if (ordered.size() < 2) return 0.0;
  return (ordered.back().onset - ordered.front().onset) / double(ordered.size() - 1);
}

inline std::size_t distinct(std::span<const MidiNote> notes, bool classes) {
  std::set<int> s;
  for (const auto& n : notes) s.insert(classes ? pitch_class(n.pitch) : n.pitch);
  return s.size();
}

inline std::vector<std::vector<MidiNote>> split_segments(std::span<const MidiNote> ordered, int segments) {
  std::vector<std::vector<MidiNote>> out(static_cast<std::size_t>(segments));
  if (ordered.empty()) return out;
  double end = 0;
  for (const auto& n : ordered) end = std::max(end, n.offset);
  for (const auto& n : ordered) {
    int k = end > 0 ? std::clamp(int(std::floor(n.onset / end * segments)), 0, segments - 1) : 0;
    out[k].push_back(n);
  }
  return out;
}

}  // namespace detail

inline FeatureValue extract_feature(std::span<const MidiNote> notes, FeatureKind kind, const EvalConfig& cfg = {}) {
  cfg.validate();
  if (notes.empty() && is_scalar(kind))
    throw InvalidArgument(std::string(feature_name(kind)) + " is undefined for an empty piece");
  const auto ordered = detail::by_onset(notes);
  const int bins = cfg.length_bins;
  switch (kind) {
    case FeatureKind::PC: return {double(detail::distinct(ordered, true))};
    case FeatureKind::NC: return {double(detail::distinct(ordered, false))};
    case FeatureKind::PCH: return detail::pitch_class_histogram(ordered);
    case FeatureKind::PCTM: {
      FeatureValue m(144, 0.0);
      for (std::size_t k = 1; k < ordered.size(); ++k)
        m[detail::pitch_class(ordered[k - 1].pitch) * 12 + detail::pitch_class(ordered[k].pitch)] += 1;
      detail::normalize_rows(m, 12);
      return m;
    }
    case FeatureKind::PR: {
      auto [lo, hi] = std::minmax_element(ordered.begin(), ordered.end(),
                                          [](const MidiNote& a, const MidiNote& b) { return a.pitch < b.pitch; });
      return {double(hi->pitch - lo->pitch)};
    }
    case FeatureKind::PI: {
      if (ordered.size() < 2) return {0.0};
      double s = 0;
      for (std::size_t k = 1; k < ordered.size(); ++k) s += std::abs(ordered[k].pitch - ordered[k - 1].pitch);
      return {s / double(ordered.size() - 1)};
    }
    case FeatureKind::IOI: return {detail::mean_ioi(ordered)};
    case FeatureKind::NLH: {
      FeatureValue h(std::size_t(bins), 0.0);
      for (const auto& n : ordered) h[detail::length_bin(n.offset - n.onset, cfg)] += 1;
      detail::normalize(h);
      return h;
    }
    case FeatureKind::NLTM: {
      FeatureValue m(std::size_t(bins) * bins, 0.0);
      for (std::size_t k = 1; k < ordered.size(); ++k)
        m[std::size_t(detail::length_bin(ordered[k - 1].offset - ordered[k - 1].onset, cfg)) * bins +
          detail::length_bin(ordered[k].offset - ordered[k].onset, cfg)] += 1;
      detail::normalize_rows(m, bins);
      return m;
    }
    case FeatureKind::PC_seg:
    case FeatureKind::NC_seg:
    case FeatureKind::PCH_seg:
    case FeatureKind::IOI_seg: {
      FeatureValue out;
      for (const auto& seg : detail::split_segments(ordered, cfg.segments)) {
        if (kind == FeatureKind::PCH_seg) {
          auto h = detail::pitch_class_histogram(seg);
          out.insert(out.end(), h.begin(), h.end());
        } else if (kind == FeatureKind::IOI_seg) {
          out.push_back(detail::mean_ioi(seg));
        } else {
          out.push_back(double(detail::distinct(seg, kind == FeatureKind::PC_seg)));
        }
      }
      return out;
    }
  }
  throw InvalidArgument("unknown feature kind");
}

/// Absolute difference for scalars, Euclidean distance otherwise.
inline double feature_distance(const FeatureValue& a, const FeatureValue& b) {
  if (a.size() != b.size()) throw InvalidArgument("feature dimensionality mismatch");
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

/// Distances over unordered pairs i < j of one set.
inline std::vector<double> intra_distances(std::span<const FeatureValue> set) {
  std::vector<double> d;
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t j = i + 1; j < set.size(); ++j) d.push_back(feature_distance(set[i], set[j]));
  return d;
}

/// Distances over every (a, b) pair with a in `a`, b in `b`.
inline std::vector<double> inter_distances(std::span<const FeatureValue> a, std::span<const FeatureValue> b) {
  std::vector<double> d;
  d.reserve(a.size() * b.size());
  for (const auto& x : a)
    for (const auto& y : b) d.push_back(feature_distance(x, y));
  return d;
}

/// Evenly spaced evaluation points over [0, 1.05 * max_distance].
struct Grid {
  double step = 0;
  std::vector<double> x;

  friend bool operator==(const Grid&, const Grid&) = default;
};

inline Grid make_grid(double max_distance, int points = 1000) {
  if (points < 2) throw InvalidArgument("grid needs at least two points");
  if (!(max_distance >= 0) || !std::isfinite(max_distance)) throw InvalidArgument("max distance must be finite");
  const double hi = max_distance > 0 ? 1.05 * max_distance : 1.0;
  Grid g;
  g.step = hi / (points - 1);
  g.x.resize(std::size_t(points));
  for (int k = 0; k < points; ++k) g.x[k] = k * g.step;
  return g;
}

inline double trapezoid(std::span<const double> y, double step) {
  double s = 0;
  for (std::size_t k = 1; k < y.size(); ++k) s += 0.5 * (y[k - 1] + y[k]) * step;
  return s;
}

struct Pdf {
  Grid grid;
  std::vector<double> density;
  double bandwidth = 0;
};

/// Scott's rule: sample standard deviation times N^(-1/5).
inline double scott_bandwidth(std::span<const double> samples) {
  const double n = double(samples.size());
  double mean = 0;
  for (double v : samples) mean += v;
  mean /= n;
  double var = 0;
  for (double v : samples) var += (v - mean) * (v - mean);
  var /= (n - 1);
  return std::sqrt(var) * std::pow(n, -0.2);
}

/// Gaussian KDE on `grid`, rescaled so its trapezoidal integral over the grid is 1.
/// The bandwidth is never narrower than two grid steps.
inline Pdf distance_pdf(std::span<const double> distances, const Grid& grid) {
  if (distances.size() < 2) throw InvalidArgument("a density estimate needs at least two distances");
  Pdf pdf{grid, std::vector<double>(grid.x.size(), 0.0), 0.0};
  const double h = std::max(scott_bandwidth(distances), 2.0 * grid.step);
  pdf.bandwidth = h;
  const double norm = 1.0 / (double(distances.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t k = 0; k < grid.x.size(); ++k) {
    double s = 0;
    for (double d : distances) {
      const double z = (grid.x[k] - d) / h;
      s += std::exp(-0.5 * z * z);
    }
    pdf.density[k] = s * norm;
  }
  const double area = trapezoid(pdf.density, grid.step);
  if (area > 0)
    for (double& v : pdf.density) v /= area;
  return pdf;
}

struct Divergence {
  double kld = 0;
  double oa = 0;
};

inline constexpr double kDensityFloor = 1e-10;

/// OA: trapezoidal integral of min(p, q). KLD(p || q) = sum p ln(p / q) dx with floored densities.
inline Divergence kld_oa(const Pdf& p, const Pdf& q) {
  if (!(p.grid == q.grid)) throw InvalidArgument("densities are on different grids");
  const double dx = p.grid.step;
  std::vector<double> lo(p.density.size());
  double kld = 0;
  for (std::size_t k = 0; k < lo.size(); ++k) {
    lo[k] = std::min(p.density[k], q.density[k]);
    const double a = std::max(p.density[k], kDensityFloor), b = std::max(q.density[k], kDensityFloor);
    kld += a * std::log(a / b) * dx;
  }
  return {std::max(0.0, kld), std::clamp(trapezoid(lo, dx), 0.0, 1.0)};
}

struct FeatureReport {
  FeatureKind kind;
  double kld = 0;
  double oa = 0;
  std::size_t intra_count = 0;
  std::size_t inter_count = 0;
  Pdf intra;
  Pdf inter;
};

using Corpus = std::vector<std::vector<MidiNote>>;

inline FeatureReport compare_feature(const Corpus& generated, const Corpus& reference, FeatureKind kind,
                                     const EvalConfig& cfg = {}) {
  if (generated.size() < 2 || reference.size() < 2)
    throw InvalidArgument("each corpus needs at least two pieces");
  std::vector<FeatureValue> g, r;
  for (const auto& piece : generated) g.push_back(extract_feature(piece, kind, cfg));
  for (const auto& piece : reference) r.push_back(extract_feature(piece, kind, cfg));
  const auto intra = intra_distances(r);
  const auto inter = inter_distances(g, r);
  double mx = 0;
  for (double d : intra) mx = std::max(mx, d);
  for (double d : inter) mx = std::max(mx, d);
  const Grid grid = make_grid(mx, cfg.grid_points);
  FeatureReport rep{kind, 0, 0, intra.size(), inter.size(), distance_pdf(intra, grid), distance_pdf(inter, grid)};
  const Divergence dv = kld_oa(rep.inter, rep.intra);
  rep.kld = dv.kld;
  rep.oa = dv.oa;
  return rep;
}

/// Inter-set (generated x reference) against intra-set (reference) distances, per feature.
inline std::vector<FeatureReport> evaluate_sets(const Corpus& generated, const Corpus& reference,
                                                const EvalConfig& cfg = {}) {
  std::vector<FeatureReport> out;
  for (auto kind : kAllFeatures) out.push_back(compare_feature(generated, reference, kind, cfg));
  return out;
}

}  // namespace perceivers
