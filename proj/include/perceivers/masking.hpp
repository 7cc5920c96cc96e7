#pragma once

// Attention visibility masks.
//
// A mask is an n x m boolean matrix (row = query, column = key); true means
// the query may attend. Additive form maps visible -> 0 and hidden -> -inf.
// Row/column indices in the public factories follow the 1-based convention
// of the formulas; storage is 0-based.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "perceivers/error.hpp"

namespace perceivers {

class AttentionMask {
 public:
  /// Rejects any row without a visible column.
  AttentionMask(int rows, int cols, std::vector<std::uint8_t> visible)
      : rows_(rows), cols_(cols), visible_(std::move(visible)) {
    if (rows < 1 || cols < 1) throw InvalidArgument("mask dimensions must be positive");
    if (visible_.size() != std::size_t(rows) * std::size_t(cols))
      throw InvalidArgument("mask storage does not match its shape");
    for (int i = 0; i < rows_; ++i) {
      bool any = false;
      for (int j = 0; j < cols_ && !any; ++j) any = at(i, j);
      if (!any) throw InvalidArgument("mask row " + std::to_string(i + 1) + " has no visible column");
    }
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  /// 0-based access.
  bool at(int row, int col) const { return visible_[std::size_t(row) * cols_ + col] != 0; }

  std::span<const std::uint8_t> row(int r) const {
    return {visible_.data() + std::size_t(r) * cols_, std::size_t(cols_)};
  }

  std::size_t visible_in_row(int r) const {
    std::size_t k = 0;
    for (auto v : row(r)) k += v;
    return k;
  }

  /// Row-major additive form: 0 where visible, -inf where hidden.
  template <class T = double>
  std::vector<T> additive() const {
    std::vector<T> out(visible_.size());
    for (std::size_t k = 0; k < visible_.size(); ++k)
      out[k] = visible_[k] ? T(0) : -std::numeric_limits<T>::infinity();
    return out;
  }

  /// The trailing `count` columns as a rows x count mask.
  AttentionMask last_columns(int count) const {
    if (count < 1 || count > cols_) throw InvalidArgument("column count out of range");
    std::vector<std::uint8_t> v;
    v.reserve(std::size_t(rows_) * count);
    for (int i = 0; i < rows_; ++i)
      for (int j = cols_ - count; j < cols_; ++j) v.push_back(at(i, j));
    return {rows_, count, std::move(v)};
  }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

  /// 0/1 grid, one row per line.
  friend std::ostream& operator<<(std::ostream& os, const AttentionMask& m) {
    for (int i = 0; i < m.rows_; ++i) {
      for (int j = 0; j < m.cols_; ++j) os << (j ? " " : "") << (m.at(i, j) ? '1' : '0');
      os << '\n';
    }
    return os;
  }

 private:
  int rows_;
  int cols_;
  std::vector<std::uint8_t> visible_;
};

namespace detail {

template <class Pred>
AttentionMask build_mask(int rows, int cols, Pred visible) {
  if (rows < 1 || cols < 1) throw InvalidArgument("mask dimensions must be positive");
  std::vector<std::uint8_t> v(std::size_t(rows) * cols);
  for (int i = 1; i <= rows; ++i)
    for (int j = 1; j <= cols; ++j) v[std::size_t(i - 1) * cols + (j - 1)] = visible(i, j) ? 1 : 0;
  return {rows, cols, std::move(v)};
}

}  // namespace detail

/// Lower-triangular n x n mask: visible iff j <= i.
inline AttentionMask vanilla_causal(int n) {
  return detail::build_mask(n, n, [](int i, int j) { return j <= i; });
}

/// Final-block causal mask: query i sees the m-n prefix plus i tokens of the final block.
inline AttentionMask final_block_causal(int n, int m) {
  if (n < 1 || n > m) throw InvalidArgument("final_block_causal requires 1 <= n <= m");
  return detail::build_mask(n, m, [n, m](int i, int j) { return j <= m - n + i; });
}

/// Only the last w context columns are visible, in every row.
inline AttentionMask scale_mask(int n, int m, int w) {
  if (w < 1 || w > m) throw InvalidArgument("scale_mask requires 1 <= w <= m");
  return detail::build_mask(n, m, [m, w](int, int j) { return j > m - w; });
}

/// All columns visible.
inline AttentionMask full_mask(int n, int m) {
  return detail::build_mask(n, m, [](int, int) { return true; });
}

/// Columns 1..pad_count hidden in every row.
inline AttentionMask padding_mask(int pad_count, int n, int m) {
  if (pad_count < 0 || pad_count > m - 1)
    throw InvalidArgument("padding_mask requires 0 <= pad_count <= m-1");
  return detail::build_mask(n, m, [pad_count](int, int j) { return j > pad_count; });
}

/// Like padding_mask, but a query row whose own slot is padding (query i sits
/// at column m-n+i) sees only that slot. Such rows carry no supervision; the
/// anchor keeps their softmax defined when the whole prefix is padding.
inline AttentionMask query_padding_mask(int pad_count, int n, int m) {
  if (n < 1 || n > m) throw InvalidArgument("query_padding_mask requires 1 <= n <= m");
  if (pad_count < 0 || pad_count > m) throw InvalidArgument("pad_count out of range");
  return detail::build_mask(n, m, [=](int i, int j) {
    int own = m - n + i;
    if (own <= pad_count) return j == own;
    return j > pad_count;
  });
}

/// Elementwise AND; equivalent to summing the additive forms.
inline AttentionMask combine(const AttentionMask& a, const AttentionMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument("cannot combine masks of different shapes");
  std::vector<std::uint8_t> v(std::size_t(a.rows()) * a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) v[std::size_t(i) * a.cols() + j] = a.at(i, j) && b.at(i, j);
  return {a.rows(), a.cols(), std::move(v)};
}

/// softmax over one row of scores with an additive mask row. Hidden cells get
/// exactly 0; visible cells sum to 1. A non-finite visible score yields a NaN
/// row so the caller's activation check can report it.
template <class T>
void masked_softmax(std::span<const T> scores, std::span<const T> additive, std::span<T> out) {
  T mx = -std::numeric_limits<T>::infinity();
  bool any = false, finite = true;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (additive[j] != T(0)) continue;
    any = true;
    finite = finite && std::isfinite(scores[j]);
    mx = std::max(mx, scores[j]);
  }
  if (!any) throw InvalidArgument("softmax row has no visible column");
  if (!finite) {
    for (auto& v : out) v = std::numeric_limits<T>::quiet_NaN();
    return;
  }
  T sum = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    out[j] = additive[j] == T(0) ? std::exp(scores[j] - mx) : T(0);
    sum += out[j];
  }
  for (auto& v : out) v /= sum;
}

}  // namespace perceivers
