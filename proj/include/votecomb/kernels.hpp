// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "votecomb/types.hpp"

#include <cmath>

namespace votecomb::kernels {

using BoolArr = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Numerically stabilized row softmax (max subtraction).
template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& x) {
  Mat<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Scalar m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

/// Row softmax over allowed entries only; disallowed entries are exactly 0.
/// Every row must have at least one allowed entry.
template <typename Scalar>
Mat<Scalar> softmax_rows_masked(const Mat<Scalar>& x, const BoolArr& allowed) {
  Mat<Scalar> y = Mat<Scalar>::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Scalar m = std::numeric_limits<Scalar>::lowest();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (allowed(r, c) && x(r, c) > m) m = x(r, c);
    Scalar sum = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!allowed(r, c)) continue;
      Scalar e = std::exp(x(r, c) - m);
      y(r, c) = e;
      sum += e;
    }
    y.row(r) /= sum;
  }
  return y;
}

/// Column softmax (the voter-normalization direction of the similarity).
template <typename Scalar>
Mat<Scalar> softmax_cols(const Mat<Scalar>& x) {
  Mat<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Scalar m = x.col(c).maxCoeff();
    y.col(c) = (x.col(c).array() - m).exp();
    y.col(c) /= y.col(c).sum();
  }
  return y;
}

/// Per-row layer normalization with learned gain/shift (1 x C each).
template <typename Scalar>
Mat<Scalar> layer_norm_rows(const Mat<Scalar>& x, const Mat<Scalar>& gamma,
                            const Mat<Scalar>& beta, Scalar eps) {
  Mat<Scalar> y(x.rows(), x.cols());
  const Scalar c = static_cast<Scalar>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Scalar mu = x.row(r).mean();
    Scalar var = (x.row(r).array() - mu).square().sum() / c;
    Scalar inv = Scalar(1) / std::sqrt(var + eps);
    y.row(r) = ((x.row(r).array() - mu) * inv) * gamma.row(0).array() + beta.row(0).array();
  }
  return y;
}

/// Sinusoidal position encodings, rows = positions.
template <typename Scalar>
Mat<Scalar> sinusoidal_pe(Eigen::Index n_pos, Eigen::Index d_model) {
  Mat<Scalar> pe(n_pos, d_model);
  for (Eigen::Index pos = 0; pos < n_pos; ++pos) {
    for (Eigen::Index i = 0; i < d_model; i += 2) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = static_cast<Scalar>(std::sin(angle));
      if (i + 1 < d_model) pe(pos, i + 1) = static_cast<Scalar>(std::cos(angle));
    }
  }
  return pe;
}

/// allowed(q, k) = k <= q.
inline BoolArr causal_mask(Eigen::Index n) {
  BoolArr m(n, n);
  for (Eigen::Index q = 0; q < n; ++q)
    for (Eigen::Index k = 0; k < n; ++k) m(q, k) = (k <= q);
  return m;
}

}  // namespace votecomb::kernels
