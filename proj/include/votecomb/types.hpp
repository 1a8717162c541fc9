// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace votecomb {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Thrown for malformed configs, bad flags, incompatible checkpoints.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown for failures while executing an otherwise valid request
/// (I/O errors, numerical blow-ups, contract violations at runtime).
struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace votecomb
