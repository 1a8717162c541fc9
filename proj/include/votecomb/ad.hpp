// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices. A Graph
// owns nodes in creation order; backward() walks them in reverse, each node
// adding into its parents' gradients. Gradients are allocated lazily, so
// untouched branches cost nothing on the backward pass. Ops are free
// functions so model code composes like ordinary Eigen expressions.

#include "votecomb/kernels.hpp"
#include "votecomb/types.hpp"

#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace votecomb::ad {

template <typename Scalar>
class Graph;

template <typename Scalar>
struct Node {
  Mat<Scalar> value;
  Mat<Scalar> grad;  // empty until first touched
  bool requires_grad = false;
  Graph<Scalar>* graph = nullptr;
  std::function<void()> backward;

  void ensure_grad() {
    if (grad.size() == 0) grad = Mat<Scalar>::Zero(value.rows(), value.cols());
  }
};

template <typename Scalar>
class Graph {
 public:
  using N = Node<Scalar>;

  N* make(Mat<Scalar> value, bool requires_grad) {
    nodes_.push_back(std::make_unique<N>());
    N* n = nodes_.back().get();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->graph = this;
    return n;
  }

  N* constant(Mat<Scalar> value) { return make(std::move(value), false); }
  N* leaf(Mat<Scalar> value, bool requires_grad = true) { return make(std::move(value), requires_grad); }

  /// Seeds d(loss)/d(loss) = seed and propagates. loss must be 1x1.
  void backward(N* loss, Scalar seed = Scalar(1)) {
    if (loss->value.size() != 1) throw RuntimeError("ad: backward target must be scalar");
    loss->ensure_grad();
    loss->grad(0, 0) += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      N* n = it->get();
      if (n->requires_grad && n->grad.size() != 0 && n->backward) n->backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<N>> nodes_;
};

namespace detail {

template <typename Scalar>
Node<Scalar>* unary(Node<Scalar>* a, Mat<Scalar> value,
                    std::function<void(Node<Scalar>*, Node<Scalar>*)> back) {
  auto* out = a->graph->make(std::move(value), a->requires_grad);
  if (out->requires_grad)
    out->backward = [out, a, back = std::move(back)] {
      a->ensure_grad();
      back(out, a);
    };
  return out;
}

template <typename Scalar>
Node<Scalar>* binary(Node<Scalar>* a, Node<Scalar>* b, Mat<Scalar> value,
                     std::function<void(Node<Scalar>*, Node<Scalar>*, Node<Scalar>*)> back) {
  auto* out = a->graph->make(std::move(value), a->requires_grad || b->requires_grad);
  if (out->requires_grad)
    out->backward = [out, a, b, back = std::move(back)] {
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      back(out, a, b);
    };
  return out;
}

}  // namespace detail

template <typename Scalar>
Node<Scalar>* add(Node<Scalar>* a, Node<Scalar>* b) {
  return detail::binary<Scalar>(a, b, a->value + b->value, [](auto* out, auto* a, auto* b) {
    if (a->requires_grad) a->grad += out->grad;
    if (b->requires_grad) b->grad += out->grad;
  });
}

/// a (R x C) + row vector b (1 x C) broadcast over rows.
template <typename Scalar>
Node<Scalar>* add_rowvec(Node<Scalar>* a, Node<Scalar>* b) {
  Mat<Scalar> v = a->value.rowwise() + b->value.row(0);
  return detail::binary<Scalar>(a, b, std::move(v), [](auto* out, auto* a, auto* b) {
    if (a->requires_grad) a->grad += out->grad;
    if (b->requires_grad) b->grad.row(0) += out->grad.colwise().sum();
  });
}

/// a + scalar-valued node b (1 x 1) broadcast everywhere.
template <typename Scalar>
Node<Scalar>* add_scalar(Node<Scalar>* a, Node<Scalar>* b) {
  Mat<Scalar> v = a->value.array() + b->value(0, 0);
  return detail::binary<Scalar>(a, b, std::move(v), [](auto* out, auto* a, auto* b) {
    if (a->requires_grad) a->grad += out->grad;
    if (b->requires_grad) b->grad(0, 0) += out->grad.sum();
  });
}

template <typename Scalar>
Node<Scalar>* scale(Node<Scalar>* a, Scalar c) {
  return detail::unary<Scalar>(a, a->value * c, [c](auto* out, auto* a) { a->grad += out->grad * c; });
}

template <typename Scalar>
Node<Scalar>* hadamard(Node<Scalar>* a, Node<Scalar>* b) {
  Mat<Scalar> v = a->value.cwiseProduct(b->value);
  return detail::binary<Scalar>(a, b, std::move(v), [](auto* out, auto* a, auto* b) {
    if (a->requires_grad) a->grad += out->grad.cwiseProduct(b->value);
    if (b->requires_grad) b->grad += out->grad.cwiseProduct(a->value);
  });
}

/// Elementwise product with a constant mask times a constant factor
/// (inverted-dropout building block).
template <typename Scalar>
Node<Scalar>* mask_scale(Node<Scalar>* a, Mat<Scalar> mask, Scalar factor) {
  Mat<Scalar> v = a->value.cwiseProduct(mask) * factor;
  return detail::unary<Scalar>(a, std::move(v),
                               [mask = std::move(mask), factor](auto* out, auto* a) {
                                 a->grad += out->grad.cwiseProduct(mask) * factor;
                               });
}

template <typename Scalar>
Node<Scalar>* matmul(Node<Scalar>* a, Node<Scalar>* b) {
  Mat<Scalar> v = a->value * b->value;
  return detail::binary<Scalar>(a, b, std::move(v), [](auto* out, auto* a, auto* b) {
    if (a->requires_grad) a->grad.noalias() += out->grad * b->value.transpose();
    if (b->requires_grad) b->grad.noalias() += a->value.transpose() * out->grad;
  });
}

/// a * b^T without materializing the transpose.
template <typename Scalar>
Node<Scalar>* matmul_nt(Node<Scalar>* a, Node<Scalar>* b) {
  Mat<Scalar> v = a->value * b->value.transpose();
  return detail::binary<Scalar>(a, b, std::move(v), [](auto* out, auto* a, auto* b) {
    if (a->requires_grad) a->grad.noalias() += out->grad * b->value;
    if (b->requires_grad) b->grad.noalias() += out->grad.transpose() * a->value;
  });
}

template <typename Scalar>
Node<Scalar>* relu(Node<Scalar>* a) {
  Mat<Scalar> v = a->value.cwiseMax(Scalar(0));
  return detail::unary<Scalar>(a, std::move(v), [](auto* out, auto* a) {
    a->grad.array() += out->grad.array() * (a->value.array() > Scalar(0)).template cast<Scalar>();
  });
}

template <typename Scalar>
Node<Scalar>* sigmoid(Node<Scalar>* a) {
  Mat<Scalar> v = (Scalar(1) / (Scalar(1) + (-a->value.array()).exp())).matrix();
  return detail::unary<Scalar>(a, std::move(v), [](auto* out, auto* a) {
    a->grad.array() +=
        out->grad.array() * out->value.array() * (Scalar(1) - out->value.array());
  });
}

template <typename Scalar>
Node<Scalar>* softmax_rows(Node<Scalar>* a) {
  Mat<Scalar> v = kernels::softmax_rows<Scalar>(a->value);
  return detail::unary<Scalar>(a, std::move(v), [](auto* out, auto* a) {
    for (Eigen::Index r = 0; r < out->value.rows(); ++r) {
      Scalar dot = out->grad.row(r).dot(out->value.row(r));
      a->grad.row(r).array() +=
          out->value.row(r).array() * (out->grad.row(r).array() - dot);
    }
  });
}

template <typename Scalar>
Node<Scalar>* softmax_rows_masked(Node<Scalar>* a, kernels::BoolArr allowed) {
  Mat<Scalar> v = kernels::softmax_rows_masked<Scalar>(a->value, allowed);
  // masked entries have value 0, so the standard softmax backward yields
  // exactly zero gradient there; no special casing needed
  return detail::unary<Scalar>(a, std::move(v), [](auto* out, auto* a) {
    for (Eigen::Index r = 0; r < out->value.rows(); ++r) {
      Scalar dot = out->grad.row(r).dot(out->value.row(r));
      a->grad.row(r).array() +=
          out->value.row(r).array() * (out->grad.row(r).array() - dot);
    }
  });
}

template <typename Scalar>
Node<Scalar>* softmax_cols(Node<Scalar>* a) {
  Mat<Scalar> v = kernels::softmax_cols<Scalar>(a->value);
  return detail::unary<Scalar>(a, std::move(v), [](auto* out, auto* a) {
    for (Eigen::Index c = 0; c < out->value.cols(); ++c) {
      Scalar dot = out->grad.col(c).dot(out->value.col(c));
      a->grad.col(c).array() +=
          out->value.col(c).array() * (out->grad.col(c).array() - dot);
    }
  });
}

template <typename Scalar>
Node<Scalar>* layer_norm_rows(Node<Scalar>* x, Node<Scalar>* gamma, Node<Scalar>* beta,
                              Scalar eps = Scalar(1e-5)) {
  Mat<Scalar> v = kernels::layer_norm_rows<Scalar>(x->value, gamma->value, beta->value, eps);
  auto* out = x->graph->make(std::move(v), x->requires_grad || gamma->requires_grad || beta->requires_grad);
  if (out->requires_grad)
    out->backward = [out, x, gamma, beta, eps] {
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      const Scalar cols = static_cast<Scalar>(x->value.cols());
      for (Eigen::Index r = 0; r < x->value.rows(); ++r) {
        Scalar mu = x->value.row(r).mean();
        Scalar var = (x->value.row(r).array() - mu).square().sum() / cols;
        Scalar inv = Scalar(1) / std::sqrt(var + eps);
        Eigen::Array<Scalar, 1, Eigen::Dynamic> xhat = (x->value.row(r).array() - mu) * inv;
        Eigen::Array<Scalar, 1, Eigen::Dynamic> dy = out->grad.row(r).array();
        if (beta->requires_grad) beta->grad.row(0).array() += dy;
        if (gamma->requires_grad) gamma->grad.row(0).array() += dy * xhat;
        if (x->requires_grad) {
          Eigen::Array<Scalar, 1, Eigen::Dynamic> dxhat = dy * gamma->value.row(0).array();
          Scalar m1 = dxhat.mean();
          Scalar m2 = (dxhat * xhat).mean();
          x->grad.row(r).array() += inv * (dxhat - m1 - xhat * m2);
        }
      }
    };
  return out;
}

/// Row gather: out.row(t) = table.row(ids[t]).
template <typename Scalar>
Node<Scalar>* gather_rows(Node<Scalar>* table, TokenSeq ids) {
  Mat<Scalar> v(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) v.row(static_cast<Eigen::Index>(t)) = table->value.row(ids[t]);
  return detail::unary<Scalar>(table, std::move(v), [ids = std::move(ids)](auto* out, auto* table) {
    for (std::size_t t = 0; t < ids.size(); ++t)
      table->grad.row(ids[t]) += out->grad.row(static_cast<Eigen::Index>(t));
  });
}

template <typename Scalar>
Node<Scalar>* slice_cols(Node<Scalar>* a, Eigen::Index begin, Eigen::Index n) {
  Mat<Scalar> v = a->value.middleCols(begin, n);
  return detail::unary<Scalar>(a, std::move(v), [begin, n](auto* out, auto* a) {
    a->grad.middleCols(begin, n) += out->grad;
  });
}

template <typename Scalar>
Node<Scalar>* concat_cols(const std::vector<Node<Scalar>*>& parts) {
  Eigen::Index rows = parts[0]->value.rows(), cols = 0;
  bool rg = false;
  for (auto* p : parts) {
    cols += p->value.cols();
    rg = rg || p->requires_grad;
  }
  Mat<Scalar> v(rows, cols);
  Eigen::Index at = 0;
  for (auto* p : parts) {
    v.middleCols(at, p->value.cols()) = p->value;
    at += p->value.cols();
  }
  auto* out = parts[0]->graph->make(std::move(v), rg);
  if (rg)
    out->backward = [out, parts] {
      Eigen::Index at = 0;
      for (auto* p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += out->grad.middleCols(at, p->value.cols());
        }
        at += p->value.cols();
      }
    };
  return out;
}

template <typename Scalar>
Node<Scalar>* concat_rows(const std::vector<Node<Scalar>*>& parts) {
  Eigen::Index cols = parts[0]->value.cols(), rows = 0;
  bool rg = false;
  for (auto* p : parts) {
    rows += p->value.rows();
    rg = rg || p->requires_grad;
  }
  Mat<Scalar> v(rows, cols);
  Eigen::Index at = 0;
  for (auto* p : parts) {
    v.middleRows(at, p->value.rows()) = p->value;
    at += p->value.rows();
  }
  auto* out = parts[0]->graph->make(std::move(v), rg);
  if (rg)
    out->backward = [out, parts] {
      Eigen::Index at = 0;
      for (auto* p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += out->grad.middleRows(at, p->value.rows());
        }
        at += p->value.rows();
      }
    };
  return out;
}

/// p = lambda .* p_r + (1 - lambda) .* p_f with lambda a T x 1 column
/// broadcast over vocabulary columns.
template <typename Scalar>
Node<Scalar>* convex_mix(Node<Scalar>* p_r, Node<Scalar>* p_f, Node<Scalar>* lambda) {
  Mat<Scalar> v(p_r->value.rows(), p_r->value.cols());
  for (Eigen::Index t = 0; t < v.rows(); ++t) {
    Scalar l = lambda->value(t, 0);
    v.row(t) = l * p_r->value.row(t) + (Scalar(1) - l) * p_f->value.row(t);
  }
  auto* out = p_r->graph->make(std::move(v),
                               p_r->requires_grad || p_f->requires_grad || lambda->requires_grad);
  if (out->requires_grad)
    out->backward = [out, p_r, p_f, lambda] {
      if (p_r->requires_grad) p_r->ensure_grad();
      if (p_f->requires_grad) p_f->ensure_grad();
      if (lambda->requires_grad) lambda->ensure_grad();
      for (Eigen::Index t = 0; t < out->value.rows(); ++t) {
        Scalar l = lambda->value(t, 0);
        if (p_r->requires_grad) p_r->grad.row(t) += l * out->grad.row(t);
        if (p_f->requires_grad) p_f->grad.row(t) += (Scalar(1) - l) * out->grad.row(t);
        if (lambda->requires_grad)
          lambda->grad(t, 0) += out->grad.row(t).dot(p_r->value.row(t) - p_f->value.row(t));
      }
    };
  return out;
}

/// Mean over rows of the label-smoothed negative log likelihood of `targets`
/// under the row distributions `p`. The smoothed reference puts 1-eps on the
/// gold token and spreads eps uniformly over all non-PAD tokens. A small
/// floor inside the log keeps mixtures with underflowed components finite;
/// the same floor is used in the derivative, so gradient checks see a
/// consistent function.
template <typename Scalar>
Node<Scalar>* nll_smoothed(Node<Scalar>* p, TokenSeq targets, Scalar eps_smooth, Token pad_id,
                           Scalar floor = Scalar(1e-12)) {
  const Eigen::Index T = p->value.rows();
  const Eigen::Index V = p->value.cols();
  const Scalar share = eps_smooth / static_cast<Scalar>(V - 1);  // support excludes PAD
  Scalar total = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    Scalar row = 0;
    for (Eigen::Index v = 0; v < V; ++v) {
      if (v == pad_id) continue;
      Scalar q = share + (v == targets[static_cast<std::size_t>(t)] ? Scalar(1) - eps_smooth : Scalar(0));
      row -= q * std::log(p->value(t, v) + floor);
    }
    total += row;
  }
  Mat<Scalar> v(1, 1);
  v(0, 0) = total / static_cast<Scalar>(T);
  return detail::unary<Scalar>(
      p, std::move(v),
      [targets = std::move(targets), eps_smooth, pad_id, floor, share, T](auto* out, auto* p) {
        const Scalar g = out->grad(0, 0) / static_cast<Scalar>(T);
        for (Eigen::Index t = 0; t < p->value.rows(); ++t) {
          for (Eigen::Index v = 0; v < p->value.cols(); ++v) {
            if (v == pad_id) continue;
            Scalar q = share + (v == targets[static_cast<std::size_t>(t)] ? Scalar(1) - eps_smooth : Scalar(0));
            p->grad(t, v) -= g * q / (p->value(t, v) + floor);
          }
        }
      });
}

/// Scalar-node combination sum_i w_i * nodes_i (each 1 x 1).
template <typename Scalar>
Node<Scalar>* weighted_sum(const std::vector<Node<Scalar>*>& nodes, std::vector<Scalar> weights) {
  Scalar total = 0;
  bool rg = false;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    total += weights[i] * nodes[i]->value(0, 0);
    rg = rg || nodes[i]->requires_grad;
  }
  Mat<Scalar> v(1, 1);
  v(0, 0) = total;
  auto* out = nodes[0]->graph->make(std::move(v), rg);
  if (rg)
    out->backward = [out, nodes, weights = std::move(weights)] {
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i]->requires_grad) {
          nodes[i]->ensure_grad();
          nodes[i]->grad(0, 0) += weights[i] * out->grad(0, 0);
        }
    };
  return out;
}

}  // namespace votecomb::ad
