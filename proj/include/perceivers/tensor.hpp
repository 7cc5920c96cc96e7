#pragma once

// Minimal dense row-major matrices for the CPU reference network.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace perceivers {

/// Non-owning row-major view.
template <class T>
struct MatrixView {
  T* data = nullptr;
  int rows = 0;
  int cols = 0;

  T& operator()(int r, int c) const { return data[std::size_t(r) * cols + c]; }
  T* row(int r) const { return data + std::size_t(r) * cols; }
  std::size_t size() const { return std::size_t(rows) * cols; }
};

template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int r, int c) { return data_[std::size_t(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[std::size_t(r) * cols_ + c]; }

  T* row(int r) { return data_.data() + std::size_t(r) * cols_; }
  const T* row(int r) const { return data_.data() + std::size_t(r) * cols_; }

  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  MatrixView<T> view() { return {data_.data(), rows_, cols_}; }
  MatrixView<const T> view() const { return {data_.data(), rows_, cols_}; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

template <class T>
MatrixView<const T> cv(const Matrix<T>& m) {
  return m.view();
}

/// C = A B
template <class T>
Matrix<T> matmul(MatrixView<const T> a, MatrixView<const T> b) {
  assert(a.cols == b.rows);
  constexpr int kStrip = 8;
  Matrix<T> c(a.rows, b.cols);
  const int full = b.cols - b.cols % kStrip;
  for (int i = 0; i < a.rows; ++i) {
    T* ci = c.row(i);
    const T* ai = a.row(i);
    for (int j0 = 0; j0 < full; j0 += kStrip) {
      T acc[kStrip] = {};
      for (int k = 0; k < a.cols; ++k) {
        const T aik = ai[k];
        const T* bk = b.row(k) + j0;
        for (int j = 0; j < kStrip; ++j) acc[j] += aik * bk[j];
      }
      for (int j = 0; j < kStrip; ++j) ci[j0 + j] = acc[j];
    }
    for (int j = full; j < b.cols; ++j) {
      T acc = 0;
      for (int k = 0; k < a.cols; ++k) acc += ai[k] * b(k, j);
      ci[j] = acc;
    }
  }
  return c;
}

/// C = A B^T
template <class T>
Matrix<T> matmul_bt(MatrixView<const T> a, MatrixView<const T> b) {
  assert(a.cols == b.cols);
  Matrix<T> c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const T* ai = a.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const T* bj = b.row(j);
      T s = 0;
      for (int k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

/// G += A^T B
template <class T>
void accumulate_at_b(MatrixView<const T> a, MatrixView<const T> b, MatrixView<T> g) {
  assert(a.rows == b.rows && g.rows == a.cols && g.cols == b.cols);
  for (int r = 0; r < a.rows; ++r) {
    const T* ar = a.row(r);
    const T* br = b.row(r);
    for (int i = 0; i < a.cols; ++i) {
      const T ari = ar[i];
      if (ari == T(0)) continue;
      T* gi = g.row(i);
      for (int j = 0; j < b.cols; ++j) gi[j] += ari * br[j];
    }
  }
}

template <class T>
void add_in_place(Matrix<T>& dst, const Matrix<T>& src) {
  assert(dst.size() == src.size());
  auto& d = dst.values();
  const auto& s = src.values();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
}

}  // namespace perceivers
