// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "votecomb/ad.hpp"

#include <functional>
#include <random>

using namespace votecomb;
using Md = Mat<double>;

namespace {

Md random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Md m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

// Central finite differences of a scalar function of several input matrices
// against the tape gradient.
void check_gradients(const std::vector<Md>& inputs,
                     const std::function<ad::Node<double>*(ad::Graph<double>&,
                                                           std::vector<ad::Node<double>*>&)>& fn,
                     double h = 1e-5, double tol = 5e-6) {
  ad::Graph<double> g;
  std::vector<ad::Node<double>*> leaves;
  for (const auto& m : inputs) leaves.push_back(g.leaf(m, true));
  auto* loss = fn(g, leaves);
  g.backward(loss);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    REQUIRE(leaves[i]->grad.size() == inputs[i].size());
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        auto eval = [&](double delta) {
          std::vector<Md> shifted = inputs;
          shifted[i](r, c) += delta;
          ad::Graph<double> g2;
          std::vector<ad::Node<double>*> l2;
          for (const auto& m : shifted) l2.push_back(g2.leaf(m, false));
          return fn(g2, l2)->value(0, 0);
        };
        double fd = (eval(h) - eval(-h)) / (2 * h);
        double an = leaves[i]->grad(r, c);
        double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        CAPTURE(i);
        CAPTURE(r);
        CAPTURE(c);
        CHECK(std::abs(fd - an) / denom < tol);
      }
    }
  }
}

// Reduce any matrix node to a scalar with fixed random weights so all
// entries influence the loss.
ad::Node<double>* weighted_scalar(ad::Graph<double>& g, ad::Node<double>* x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Md w = random_mat(x->value.cols(), x->value.rows(), rng);
  auto* prod = ad::matmul(x, g.constant(w));  // R x R
  Md pick = random_mat(prod->value.rows(), prod->value.rows(), rng);
  auto* mixed = ad::hadamard(prod, g.constant(pick));
  // sum via two matmuls with ones
  Md ones_r(1, mixed->value.rows());
  ones_r.setOnes();
  Md ones_c(mixed->value.cols(), 1);
  ones_c.setOnes();
  return ad::matmul(ad::matmul(g.constant(ones_r), mixed), g.constant(ones_c));
}

}  // namespace

TEST_CASE("matmul and add gradients match finite differences") {
  std::mt19937_64 rng(1);
  Md a = random_mat(3, 4, rng), b = random_mat(4, 5, rng), c = random_mat(3, 5, rng);
  check_gradients({a, b, c}, [](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g, ad::add(ad::matmul(l[0], l[1]), l[2]), 7);
  });
}

TEST_CASE("matmul_nt gradients") {
  std::mt19937_64 rng(2);
  Md a = random_mat(3, 4, rng), b = random_mat(5, 4, rng);
  check_gradients({a, b}, [](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g, ad::matmul_nt(l[0], l[1]), 11);
  });
}

TEST_CASE("softmax_rows gradients and normalization") {
  std::mt19937_64 rng(3);
  Md a = random_mat(4, 6, rng, 2.0);
  check_gradients({a}, [](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g, ad::softmax_rows(l[0]), 13);
  });
  ad::Graph<double> g;
  auto* y = ad::softmax_rows(g.leaf(a, false));
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(y->value.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("masked softmax zeroes the masked entries exactly") {
  std::mt19937_64 rng(4);
  Md a = random_mat(3, 5, rng, 2.0);
  kernels::BoolArr allowed(3, 5);
  allowed.setConstant(true);
  allowed(0, 2) = false;
  allowed(1, 0) = false;
  allowed(1, 4) = false;
  ad::Graph<double> g;
  auto* y = ad::softmax_rows_masked(g.leaf(a, false), allowed);
  CHECK(y->value(0, 2) == 0.0);
  CHECK(y->value(1, 0) == 0.0);
  CHECK(y->value(1, 4) == 0.0);
  for (Eigen::Index r = 0; r < 3; ++r) CHECK(y->value.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));

  check_gradients({a}, [&allowed](ad::Graph<double>& g2, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g2, ad::softmax_rows_masked(l[0], allowed), 17);
  });
}

TEST_CASE("softmax_cols gradients and per-column normalization") {
  std::mt19937_64 rng(5);
  Md a = random_mat(4, 3, rng, 2.0);
  check_gradients({a}, [](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g, ad::softmax_cols(l[0]), 19);
  });
  ad::Graph<double> g;
  auto* y = ad::softmax_cols(g.leaf(a, false));
  for (Eigen::Index c = 0; c < 3; ++c) CHECK(y->value.col(c).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer norm gradients (input, gain, shift)") {
  std::mt19937_64 rng(6);
  Md x = random_mat(3, 8, rng), gmat = random_mat(1, 8, rng), bmat = random_mat(1, 8, rng);
  check_gradients({x, gmat, bmat}, [](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g, ad::layer_norm_rows(l[0], l[1], l[2]), 23);
  });
}

TEST_CASE("relu, sigmoid, hadamard, scale, add_rowvec, add_scalar gradients") {
  std::mt19937_64 rng(7);
  Md x = random_mat(3, 4, rng), y = random_mat(3, 4, rng), b = random_mat(1, 4, rng), s = random_mat(1, 1, rng);
  check_gradients({x, y, b, s}, [](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    auto* h = ad::hadamard(ad::relu(l[0]), ad::sigmoid(l[1]));
    h = ad::add_rowvec(h, l[2]);
    h = ad::add_scalar(h, l[3]);
    return weighted_scalar(g, ad::scale(h, 0.7), 29);
  });
}

TEST_CASE("gather, slice, concat gradients") {
  std::mt19937_64 rng(8);
  Md table = random_mat(6, 4, rng);
  TokenSeq ids{2, 0, 5, 2};
  check_gradients({table}, [&ids](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    auto* e = ad::gather_rows(l[0], ids);
    auto* left = ad::slice_cols(e, 0, 2);
    auto* right = ad::slice_cols(e, 2, 2);
    auto* swapped = ad::concat_cols<double>({right, left});
    auto* stacked = ad::concat_rows<double>({swapped, swapped});
    return weighted_scalar(g, stacked, 31);
  });
}

TEST_CASE("convex_mix gradients") {
  std::mt19937_64 rng(9);
  Md pr(2, 3), pf(2, 3), lam(2, 1);
  pr << 0.7, 0.2, 0.1, 0.3, 0.3, 0.4;
  pf << 0.1, 0.8, 0.1, 0.5, 0.25, 0.25;
  lam << 0.3, 0.8;
  check_gradients({pr, pf, lam}, [](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g, ad::convex_mix(l[0], l[1], l[2]), 37);
  });
}

TEST_CASE("smoothed NLL gradient and uniform-distribution value") {
  // uniform rows: loss is ln(V) regardless of smoothing
  const int V = 7;
  Md p(3, V);
  p.setConstant(1.0 / V);
  ad::Graph<double> g;
  auto* loss = ad::nll_smoothed(g.leaf(p, false), TokenSeq{4, 2, 6}, 0.1, 0, 0.0);
  CHECK(loss->value(0, 0) == doctest::Approx(std::log(double(V))).epsilon(1e-12));

  std::mt19937_64 rng(10);
  Md logits = random_mat(3, V, rng);
  check_gradients({logits}, [](ad::Graph<double>& g2, std::vector<ad::Node<double>*>& l) {
    auto* prob = ad::softmax_rows(l[0]);
    return ad::nll_smoothed(prob, TokenSeq{1, 3, 5}, 0.1, 0);
  });
}

TEST_CASE("mask_scale (dropout building block) gradient") {
  std::mt19937_64 rng(11);
  Md x = random_mat(3, 4, rng);
  Md mask(3, 4);
  mask << 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 0;
  check_gradients({x}, [&mask](ad::Graph<double>& g, std::vector<ad::Node<double>*>& l) {
    return weighted_scalar(g, ad::mask_scale(l[0], Md(mask), 1.25), 41);
  });
}

TEST_CASE("weighted_sum combines scalar losses") {
  Md a(1, 1), b(1, 1);
  a << 2.0;
  b << 5.0;
  ad::Graph<double> g;
  auto* na = g.leaf(a, true);
  auto* nb = g.leaf(b, true);
  auto* s = ad::weighted_sum<double>({na, nb}, {0.25, 0.75});
  CHECK(s->value(0, 0) == doctest::Approx(0.25 * 2 + 0.75 * 5));
  g.backward(s);
  CHECK(na->grad(0, 0) == doctest::Approx(0.25));
  CHECK(nb->grad(0, 0) == doctest::Approx(0.75));
}

TEST_CASE("untouched branches stay gradient-free") {
  Md a(1, 1), b(1, 1);
  a << 1.0;
  b << 2.0;
  ad::Graph<double> g;
  auto* na = g.leaf(a, true);
  auto* nb = g.leaf(b, true);
  auto* unused = ad::sigmoid(nb);
  (void)unused;
  auto* loss = ad::scale(na, 3.0);
  g.backward(loss);
  CHECK(na->grad(0, 0) == doctest::Approx(3.0));
  CHECK(nb->grad.size() == 0);
}
