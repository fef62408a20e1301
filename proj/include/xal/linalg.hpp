#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace xal {

// Dense row-major matrix of doubles. Small models only; no blocking, no BLAS.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {v.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {v.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
  size_t size() const { return v.size(); }
};

inline Mat matmul(const Mat& a, const Mat& b) {
  assert(a.cols == b.rows);
  Mat out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.v.data() + static_cast<size_t>(k) * b.cols;
      double* orow = out.v.data() + static_cast<size_t>(i) * out.cols;
      for (int j = 0; j < b.cols; ++j) {
        orow[j] += aik * brow[j];
      }
    }
  }
  return out;
}

// out = a * b^T
inline Mat matmul_nt(const Mat& a, const Mat& b) {
  assert(a.cols == b.cols);
  Mat out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.rows; ++j) {
      double s = 0.0;
      const double* ar = a.v.data() + static_cast<size_t>(i) * a.cols;
      const double* br = b.v.data() + static_cast<size_t>(j) * b.cols;
      for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
      out.at(i, j) = s;
    }
  }
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// Numerically stable in-place row softmax (max-shifted).
inline void softmax_row_inplace(std::span<double> row) {
  double mx = row[0];
  for (double x : row) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : row) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : row) x /= sum;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_row_inplace(out);
  return out;
}

// log softmax of one row; stable.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// Row-wise layer normalization without affine parameters. When inv_std_out
// is given it receives 1/sqrt(var + eps) per row (needed by the backward
// pass).
inline Mat layer_norm_rows_fwd(const Mat& x, double eps, Mat* inv_std_out = nullptr) {
  Mat out(x.rows, x.cols);
  if (inv_std_out) *inv_std_out = Mat(x.rows, 1);
  for (int r = 0; r < x.rows; ++r) {
    double mean = 0.0;
    for (int c = 0; c < x.cols; ++c) mean += x.at(r, c);
    mean /= x.cols;
    double var = 0.0;
    for (int c = 0; c < x.cols; ++c) {
      const double d = x.at(r, c) - mean;
      var += d * d;
    }
    var /= x.cols;
    const double s = 1.0 / std::sqrt(var + eps);
    if (inv_std_out) inv_std_out->at(r, 0) = s;
    for (int c = 0; c < x.cols; ++c) out.at(r, c) = (x.at(r, c) - mean) * s;
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace xal
