#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vlamd/errors.hpp"

namespace vlamd {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace detail {
inline thread_local bool grad_mode = true;
}

inline bool grad_enabled() { return detail::grad_mode; }

// Disables graph recording for the enclosing scope. Decoding and data
// plumbing run under this; training does not.
struct NoGradScope {
  bool prev;
  NoGradScope() : prev(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradScope() { detail::grad_mode = prev; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
// shared handle onto an immutable value buffer; gradients accumulate into
// per-node buffers during backward(). Real is double in tests and float or
// double in training, selected by config.
template <class Real>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
  };

  Tensor() = default;

  static Tensor from(std::vector<Real> data, Shape shape, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Real(0), requires_grad);
  }

  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    std::vector<Real> d(static_cast<size_t>(shape_numel(shape)), v);
    return from(std::move(d), std::move(shape), requires_grad);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from({v}, {1}, requires_grad);
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, Real stddev,
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<Real> d(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : d) x = static_cast<Real>(dist(rng)) * stddev;
    return from(std::move(d), std::move(shape), requires_grad);
  }

  static Tensor uniform(Shape shape, std::mt19937_64& rng, Real lo, Real hi,
                        bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    std::vector<Real> d(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : d) x = static_cast<Real>(dist(rng));
    return from(std::move(d), std::move(shape), requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t size(int axis) const { return n_->shape[static_cast<size_t>(axis)]; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  const std::vector<Real>& data() const { return n_->value; }
  std::vector<Real>& mutable_data() { return n_->value; }
  const std::vector<Real>& grad() const { return n_->grad; }

  Real item() const {
    if (numel() != 1) throw RankError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    return n_->value[0];
  }

  void zero_grad() {
    if (n_) n_->grad.assign(n_->value.size(), Real(0));
  }

  // Accumulates d(this)/d(leaf) into every requires_grad leaf reachable from
  // this scalar. Non-leaf grads are scratch and reset per call, so repeated
  // calls add one full gradient each time.
  void backward() const {
    if (!n_) throw RankError("backward() on an empty tensor");
    if (numel() != 1)
      throw RankError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    visited.insert(n_.get());
    while (!stack.empty()) {
      auto& top = stack.back();
      Node* node = top.first;
      if (top.second < node->parents.size()) {
        Node* p = node->parents[top.second++].get();
        if (visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (Node* n : order) {
      if (n->backprop) n->grad.assign(n->value.size(), Real(0));
    }
    n_->ensure_grad();
    n_->grad[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop(**it);
    }
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

template <class Real, class F>
Tensor<Real> make_op(Shape shape, std::vector<Real> value,
                     std::initializer_list<Tensor<Real>> parents, F&& fn) {
  bool track = grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    track = any;
  }
  Tensor<Real> out = Tensor<Real>::from(std::move(value), std::move(shape), track);
  if (track) {
    auto node = out.node();
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::forward<F>(fn);
  }
  return out;
}

template <class Real>
void accumulate(typename Tensor<Real>::Node* p, int64_t idx, Real v) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  p->grad[static_cast<size_t>(idx)] += v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a, b},
                               [an, bn](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i) {
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), self.grad[i]);
                                   detail::accumulate<Real>(bn, static_cast<int64_t>(i), self.grad[i]);
                                 }
                               });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a, b},
                               [an, bn](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i) {
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), self.grad[i]);
                                   detail::accumulate<Real>(bn, static_cast<int64_t>(i), -self.grad[i]);
                                 }
                               });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a, b},
                               [an, bn](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i) {
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), self.grad[i] * bn->value[i]);
                                   detail::accumulate<Real>(bn, static_cast<int64_t>(i), self.grad[i] * an->value[i]);
                                 }
                               });
}

template <class Real>
Tensor<Real> neg(const Tensor<Real>& a) {
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = -a.data()[i];
  auto an = a.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a},
                               [an](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), -self.grad[i]);
                               });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  auto an = a.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a},
                               [an, c](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), self.grad[i] * c);
                               });
}

// mat (r,c) + row vector (c), broadcast over rows
template <class Real>
Tensor<Real> add_rowvec(const Tensor<Real>& m, const Tensor<Real>& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.size(1) != v.size(0))
    throw ShapeError("add_rowvec: shape mismatch " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  int64_t r = m.size(0), c = m.size(1);
  std::vector<Real> out(m.data().size());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] + v.data()[j];
  auto mn = m.node().get();
  auto vn = v.node().get();
  return detail::make_op<Real>(m.shape(), std::move(out), {m, v},
                               [mn, vn, r, c](typename Tensor<Real>::Node& self) {
                                 for (int64_t i = 0; i < r; ++i)
                                   for (int64_t j = 0; j < c; ++j) {
                                     Real g = self.grad[static_cast<size_t>(i * c + j)];
                                     detail::accumulate<Real>(mn, i * c + j, g);
                                     detail::accumulate<Real>(vn, j, g);
                                   }
                               });
}

template <class Real>
Tensor<Real> mul_rowvec(const Tensor<Real>& m, const Tensor<Real>& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.size(1) != v.size(0))
    throw ShapeError("mul_rowvec: shape mismatch " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  int64_t r = m.size(0), c = m.size(1);
  std::vector<Real> out(m.data().size());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] * v.data()[j];
  auto mn = m.node().get();
  auto vn = v.node().get();
  return detail::make_op<Real>(m.shape(), std::move(out), {m, v},
                               [mn, vn, r, c](typename Tensor<Real>::Node& self) {
                                 for (int64_t i = 0; i < r; ++i)
                                   for (int64_t j = 0; j < c; ++j) {
                                     Real g = self.grad[static_cast<size_t>(i * c + j)];
                                     detail::accumulate<Real>(mn, i * c + j, g * vn->value[static_cast<size_t>(j)]);
                                     detail::accumulate<Real>(vn, j, g * mn->value[static_cast<size_t>(i * c + j)]);
                                   }
                               });
}

// ---------------------------------------------------------------------------
// linear algebra

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int64_t m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<Real> out(static_cast<size_t>(m * n), Real(0));
  const Real* A = a.data().data();
  const Real* B = b.data().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      Real av = A[i * k + p];
      if (av == Real(0)) continue;
      const Real* brow = B + p * n;
      Real* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail::make_op<Real>({m, n}, std::move(out), {a, b},
                               [an, bn, m, k, n](typename Tensor<Real>::Node& self) {
                                 const Real* G = self.grad.data();
                                 if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (int64_t i = 0; i < m; ++i)
                                     for (int64_t p = 0; p < k; ++p) {
                                       Real s = 0;
                                       for (int64_t j = 0; j < n; ++j)
                                         s += G[i * n + j] * bn->value[static_cast<size_t>(p * n + j)];
                                       an->grad[static_cast<size_t>(i * k + p)] += s;
                                     }
                                 }
                                 if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (int64_t p = 0; p < k; ++p)
                                     for (int64_t j = 0; j < n; ++j) {
                                       Real s = 0;
                                       for (int64_t i = 0; i < m; ++i)
                                         s += an->value[static_cast<size_t>(i * k + p)] * G[i * n + j];
                                       bn->grad[static_cast<size_t>(p * n + j)] += s;
                                     }
                                 }
                               });
}

// A (m,n) @ x (n) -> (m)
template <class Real>
Tensor<Real> matvec(const Tensor<Real>& a, const Tensor<Real>& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.size(1) != x.size(0))
    throw ShapeError("matvec: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(x.shape()));
  int64_t m = a.size(0), n = a.size(1);
  std::vector<Real> out(static_cast<size_t>(m), Real(0));
  for (int64_t i = 0; i < m; ++i) {
    Real s = 0;
    for (int64_t j = 0; j < n; ++j) s += a.data()[static_cast<size_t>(i * n + j)] * x.data()[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = s;
  }
  auto an = a.node().get();
  auto xn = x.node().get();
  return detail::make_op<Real>({m}, std::move(out), {a, x},
                               [an, xn, m, n](typename Tensor<Real>::Node& self) {
                                 for (int64_t i = 0; i < m; ++i) {
                                   Real g = self.grad[static_cast<size_t>(i)];
                                   if (g == Real(0)) continue;
                                   for (int64_t j = 0; j < n; ++j) {
                                     detail::accumulate<Real>(an, i * n + j, g * xn->value[static_cast<size_t>(j)]);
                                     detail::accumulate<Real>(xn, j, g * an->value[static_cast<size_t>(i * n + j)]);
                                   }
                                 }
                               });
}

// A (m,n), x (m) -> A^T x (n)
template <class Real>
Tensor<Real> tmatvec(const Tensor<Real>& a, const Tensor<Real>& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.size(0) != x.size(0))
    throw ShapeError("tmatvec: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(x.shape()));
  int64_t m = a.size(0), n = a.size(1);
  std::vector<Real> out(static_cast<size_t>(n), Real(0));
  for (int64_t i = 0; i < m; ++i) {
    Real xv = x.data()[static_cast<size_t>(i)];
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j)] += a.data()[static_cast<size_t>(i * n + j)] * xv;
  }
  auto an = a.node().get();
  auto xn = x.node().get();
  return detail::make_op<Real>({n}, std::move(out), {a, x},
                               [an, xn, m, n](typename Tensor<Real>::Node& self) {
                                 for (int64_t i = 0; i < m; ++i) {
                                   Real xv = xn->value[static_cast<size_t>(i)];
                                   Real acc = 0;
                                   for (int64_t j = 0; j < n; ++j) {
                                     Real g = self.grad[static_cast<size_t>(j)];
                                     detail::accumulate<Real>(an, i * n + j, g * xv);
                                     acc += g * an->value[static_cast<size_t>(i * n + j)];
                                   }
                                   detail::accumulate<Real>(xn, i, acc);
                                 }
                               });
}

// ---------------------------------------------------------------------------
// convolution: 3x3 kernel, stride 2, padding 1

template <class Real>
Tensor<Real> conv2d_stride2(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  if (x.rank() != 3) throw ShapeError("conv2d_stride2: input must be CxHxW, got " + shape_str(x.shape()));
  if (w.rank() != 4 || w.size(2) != 3 || w.size(3) != 3)
    throw ShapeError("conv2d_stride2: kernel must be OxIx3x3, got " + shape_str(w.shape()));
  if (w.size(1) != x.size(0))
    throw ShapeError("conv2d_stride2: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  if (b.rank() != 1 || b.size(0) != w.size(0))
    throw ShapeError("conv2d_stride2: bias shape " + shape_str(b.shape()) + " vs kernel " + shape_str(w.shape()));
  int64_t ci = x.size(0), h = x.size(1), wd = x.size(2);
  if (h < 2 || wd < 2)
    throw ShapeError("conv2d_stride2: input too small (" + std::to_string(h) + "x" + std::to_string(wd) + "), need at least 2x2");
  int64_t co = w.size(0);
  int64_t oh = (h + 1) / 2, ow = (wd + 1) / 2;
  std::vector<Real> out(static_cast<size_t>(co * oh * ow), Real(0));
  const Real* X = x.data().data();
  const Real* W = w.data().data();
  for (int64_t o = 0; o < co; ++o) {
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        Real s = b.data()[static_cast<size_t>(o)];
        for (int64_t c = 0; c < ci; ++c)
          for (int64_t ki = 0; ki < 3; ++ki) {
            int64_t ii = 2 * i + ki - 1;
            if (ii < 0 || ii >= h) continue;
            for (int64_t kj = 0; kj < 3; ++kj) {
              int64_t jj = 2 * j + kj - 1;
              if (jj < 0 || jj >= wd) continue;
              s += X[(c * h + ii) * wd + jj] * W[((o * ci + c) * 3 + ki) * 3 + kj];
            }
          }
        out[static_cast<size_t>((o * oh + i) * ow + j)] = s;
      }
  }
  auto xn = x.node().get();
  auto wn = w.node().get();
  auto bn = b.node().get();
  return detail::make_op<Real>(
      {co, oh, ow}, std::move(out), {x, w, b},
      [xn, wn, bn, ci, h, wd, co, oh, ow](typename Tensor<Real>::Node& self) {
        for (int64_t o = 0; o < co; ++o)
          for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
              Real g = self.grad[static_cast<size_t>((o * oh + i) * ow + j)];
              if (g == Real(0)) continue;
              detail::accumulate<Real>(bn, o, g);
              for (int64_t c = 0; c < ci; ++c)
                for (int64_t ki = 0; ki < 3; ++ki) {
                  int64_t ii = 2 * i + ki - 1;
                  if (ii < 0 || ii >= h) continue;
                  for (int64_t kj = 0; kj < 3; ++kj) {
                    int64_t jj = 2 * j + kj - 1;
                    if (jj < 0 || jj >= wd) continue;
                    int64_t xi = (c * h + ii) * wd + jj;
                    int64_t wi = ((o * ci + c) * 3 + ki) * 3 + kj;
                    detail::accumulate<Real>(xn, xi, g * wn->value[static_cast<size_t>(wi)]);
                    detail::accumulate<Real>(wn, wi, g * xn->value[static_cast<size_t>(xi)]);
                  }
                }
            }
      });
}

// ---------------------------------------------------------------------------
// nonlinearities

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > Real(0) ? a.data()[i] : Real(0);
  auto an = a.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a},
                               [an](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                   if (an->value[i] > Real(0))
                                     detail::accumulate<Real>(an, static_cast<int64_t>(i), self.grad[i]);
                               });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = Real(1) / (Real(1) + std::exp(-a.data()[i]));
  auto an = a.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a},
                               [an](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i) {
                                   Real s = self.value[i];
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i),
                                                            self.grad[i] * s * (Real(1) - s));
                                 }
                               });
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  std::vector<Real> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.data()[i]);
  auto an = a.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a},
                               [an](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i) {
                                   Real t = self.value[i];
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i),
                                                            self.grad[i] * (Real(1) - t * t));
                                 }
                               });
}

// ---------------------------------------------------------------------------
// axis helpers

namespace detail {
inline void check_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw AxisError(std::string(op) + ": axis " + std::to_string(axis) +
                    " out of range for shape " + shape_str(s));
}
inline int64_t outer_of(const Shape& s, int axis) {
  int64_t o = 1;
  for (int i = 0; i < axis; ++i) o *= s[static_cast<size_t>(i)];
  return o;
}
inline int64_t inner_of(const Shape& s, int axis) {
  int64_t in = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) in *= s[i];
  return in;
}
}  // namespace detail

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& a, int axis) {
  detail::check_axis(a.shape(), axis, "softmax");
  int64_t dim = a.size(axis);
  int64_t outer = detail::outer_of(a.shape(), axis);
  int64_t inner = detail::inner_of(a.shape(), axis);
  std::vector<Real> v(a.data().size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (int64_t d = 0; d < dim; ++d) mx = std::max(mx, a.data()[static_cast<size_t>((o * dim + d) * inner + in)]);
      Real z = 0;
      for (int64_t d = 0; d < dim; ++d) {
        size_t idx = static_cast<size_t>((o * dim + d) * inner + in);
        Real e = std::exp(a.data()[idx] - mx);
        v[idx] = e;
        z += e;
      }
      for (int64_t d = 0; d < dim; ++d) v[static_cast<size_t>((o * dim + d) * inner + in)] /= z;
    }
  auto an = a.node().get();
  return detail::make_op<Real>(a.shape(), std::move(v), {a},
                               [an, dim, outer, inner](typename Tensor<Real>::Node& self) {
                                 for (int64_t o = 0; o < outer; ++o)
                                   for (int64_t in = 0; in < inner; ++in) {
                                     Real dot = 0;
                                     for (int64_t d = 0; d < dim; ++d) {
                                       size_t idx = static_cast<size_t>((o * dim + d) * inner + in);
                                       dot += self.grad[idx] * self.value[idx];
                                     }
                                     for (int64_t d = 0; d < dim; ++d) {
                                       size_t idx = static_cast<size_t>((o * dim + d) * inner + in);
                                       detail::accumulate<Real>(an, static_cast<int64_t>(idx),
                                                                self.value[idx] * (self.grad[idx] - dot));
                                     }
                                   }
                               });
}

// normalizes along `axis` (zero mean, unit variance); no affine part
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& a, int axis, Real eps = Real(1e-5)) {
  detail::check_axis(a.shape(), axis, "layer_norm");
  int64_t dim = a.size(axis);
  int64_t outer = detail::outer_of(a.shape(), axis);
  int64_t inner = detail::inner_of(a.shape(), axis);
  std::vector<Real> v(a.data().size());
  std::vector<Real> inv_sigma(static_cast<size_t>(outer * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      Real mean = 0;
      for (int64_t d = 0; d < dim; ++d) mean += a.data()[static_cast<size_t>((o * dim + d) * inner + in)];
      mean /= static_cast<Real>(dim);
      Real var = 0;
      for (int64_t d = 0; d < dim; ++d) {
        Real q = a.data()[static_cast<size_t>((o * dim + d) * inner + in)] - mean;
        var += q * q;
      }
      var /= static_cast<Real>(dim);
      Real is = Real(1) / std::sqrt(var + eps);
      inv_sigma[static_cast<size_t>(o * inner + in)] = is;
      for (int64_t d = 0; d < dim; ++d) {
        size_t idx = static_cast<size_t>((o * dim + d) * inner + in);
        v[idx] = (a.data()[idx] - mean) * is;
      }
    }
  auto an = a.node().get();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [an, dim, outer, inner, inv_sigma = std::move(inv_sigma)](typename Tensor<Real>::Node& self) {
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t in = 0; in < inner; ++in) {
            Real gmean = 0, gymean = 0;
            for (int64_t d = 0; d < dim; ++d) {
              size_t idx = static_cast<size_t>((o * dim + d) * inner + in);
              gmean += self.grad[idx];
              gymean += self.grad[idx] * self.value[idx];
            }
            gmean /= static_cast<Real>(dim);
            gymean /= static_cast<Real>(dim);
            Real is = inv_sigma[static_cast<size_t>(o * inner + in)];
            for (int64_t d = 0; d < dim; ++d) {
              size_t idx = static_cast<size_t>((o * dim + d) * inner + in);
              detail::accumulate<Real>(an, static_cast<int64_t>(idx),
                                       is * (self.grad[idx] - gmean - self.value[idx] * gymean));
            }
          }
      });
}

// ---------------------------------------------------------------------------
// shape surgery

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<Real> v = a.data();
  auto an = a.node().get();
  return detail::make_op<Real>(std::move(shape), std::move(v), {a},
                               [an](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), self.grad[i]);
                               });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a, int ax0, int ax1) {
  detail::check_axis(a.shape(), ax0, "transpose");
  detail::check_axis(a.shape(), ax1, "transpose");
  Shape os = a.shape();
  std::swap(os[static_cast<size_t>(ax0)], os[static_cast<size_t>(ax1)]);
  int r = a.rank();
  std::vector<int64_t> istrides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    istrides[static_cast<size_t>(i)] = istrides[static_cast<size_t>(i + 1)] * a.shape()[static_cast<size_t>(i + 1)];
  std::vector<int64_t> perm(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) perm[static_cast<size_t>(i)] = i;
  std::swap(perm[static_cast<size_t>(ax0)], perm[static_cast<size_t>(ax1)]);
  int64_t n = a.numel();
  std::vector<Real> v(static_cast<size_t>(n));
  std::vector<int64_t> src_index(static_cast<size_t>(n));
  std::vector<int64_t> oidx(static_cast<size_t>(r), 0);
  for (int64_t li = 0; li < n; ++li) {
    int64_t src = 0;
    for (int i = 0; i < r; ++i) src += oidx[static_cast<size_t>(i)] * istrides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    v[static_cast<size_t>(li)] = a.data()[static_cast<size_t>(src)];
    src_index[static_cast<size_t>(li)] = src;
    for (int i = r - 1; i >= 0; --i) {
      if (++oidx[static_cast<size_t>(i)] < os[static_cast<size_t>(i)]) break;
      oidx[static_cast<size_t>(i)] = 0;
    }
  }
  auto an = a.node().get();
  return detail::make_op<Real>(std::move(os), std::move(v), {a},
                               [an, src_index = std::move(src_index)](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < self.grad.size(); ++i)
                                   detail::accumulate<Real>(an, src_index[i], self.grad[i]);
                               });
}

template <class Real>
Tensor<Real> slice(const Tensor<Real>& a, int axis, int64_t start, int64_t len) {
  detail::check_axis(a.shape(), axis, "slice");
  int64_t dim = a.size(axis);
  if (start < 0 || len < 0 || start + len > dim)
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of bounds for axis extent " + std::to_string(dim));
  int64_t outer = detail::outer_of(a.shape(), axis);
  int64_t inner = detail::inner_of(a.shape(), axis);
  Shape os = a.shape();
  os[static_cast<size_t>(axis)] = len;
  std::vector<Real> v(static_cast<size_t>(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t d = 0; d < len; ++d)
      for (int64_t in = 0; in < inner; ++in)
        v[static_cast<size_t>((o * len + d) * inner + in)] =
            a.data()[static_cast<size_t>((o * dim + start + d) * inner + in)];
  auto an = a.node().get();
  return detail::make_op<Real>(std::move(os), std::move(v), {a},
                               [an, outer, inner, dim, start, len](typename Tensor<Real>::Node& self) {
                                 for (int64_t o = 0; o < outer; ++o)
                                   for (int64_t d = 0; d < len; ++d)
                                     for (int64_t in = 0; in < inner; ++in)
                                       detail::accumulate<Real>(an, (o * dim + start + d) * inner + in,
                                                                self.grad[static_cast<size_t>((o * len + d) * inner + in)]);
                               });
}

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  detail::check_axis(s0, axis, "concat");
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s0.size()))
      throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(p.shape()));
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.size(i) != s0[static_cast<size_t>(i)])
        throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(p.shape()));
    total += p.size(axis);
  }
  Shape os = s0;
  os[static_cast<size_t>(axis)] = total;
  int64_t outer = detail::outer_of(os, axis);
  int64_t inner = detail::inner_of(os, axis);
  std::vector<Real> v(static_cast<size_t>(outer * total * inner));
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t d = p.size(axis);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t x = 0; x < d; ++x)
        for (int64_t in = 0; in < inner; ++in)
          v[static_cast<size_t>((o * total + off + x) * inner + in)] =
              p.data()[static_cast<size_t>((o * d + x) * inner + in)];
    off += d;
  }
  bool track = grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    track = any;
  }
  Tensor<Real> out = Tensor<Real>::from(std::move(v), std::move(os), track);
  if (track) {
    auto node = out.node();
    std::vector<std::pair<typename Tensor<Real>::Node*, int64_t>> plan;
    for (const auto& p : parts) {
      node->parents.push_back(p.node());
      plan.emplace_back(p.node().get(), p.size(axis));
    }
    node->backprop = [plan = std::move(plan), outer, inner, total](typename Tensor<Real>::Node& self) {
      int64_t off2 = 0;
      for (auto& [pn, d] : plan) {
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t x = 0; x < d; ++x)
            for (int64_t in = 0; in < inner; ++in)
              detail::accumulate<Real>(pn, (o * d + x) * inner + in,
                                       self.grad[static_cast<size_t>((o * total + off2 + x) * inner + in)]);
        off2 += d;
      }
    };
  }
  return out;
}

// stack 1-D rows into (L, D)
template <class Real>
Tensor<Real> stack_rows(const std::vector<Tensor<Real>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty input list");
  std::vector<Tensor<Real>> mats;
  mats.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.rank() != 1) throw ShapeError("stack_rows: expected 1-D rows, got " + shape_str(r.shape()));
    mats.push_back(reshape(r, {1, r.size(0)}));
  }
  return concat(mats, 0);
}

template <class Real>
Tensor<Real> take_row(const Tensor<Real>& a, int64_t row) {
  if (a.rank() != 2) throw ShapeError("take_row: expected a matrix, got " + shape_str(a.shape()));
  if (row < 0 || row >= a.size(0))
    throw ShapeError("take_row: row " + std::to_string(row) + " out of range for " + shape_str(a.shape()));
  int64_t c = a.size(1);
  std::vector<Real> v(a.data().begin() + row * c, a.data().begin() + (row + 1) * c);
  auto an = a.node().get();
  return detail::make_op<Real>({c}, std::move(v), {a},
                               [an, row, c](typename Tensor<Real>::Node& self) {
                                 for (int64_t j = 0; j < c; ++j)
                                   detail::accumulate<Real>(an, row * c + j, self.grad[static_cast<size_t>(j)]);
                               });
}

template <class Real>
Tensor<Real> embedding_lookup(const Tensor<Real>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
  int64_t v = table.size(0), d = table.size(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw VocabError("embedding_lookup: id " + std::to_string(id) + " outside table of " + std::to_string(v) + " rows");
  int64_t l = static_cast<int64_t>(ids.size());
  std::vector<Real> out(static_cast<size_t>(l * d));
  for (int64_t i = 0; i < l; ++i)
    std::copy_n(table.data().begin() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d, d,
                out.begin() + i * d);
  auto tn = table.node().get();
  return detail::make_op<Real>({l, d}, std::move(out), {table},
                               [tn, ids, d](typename Tensor<Real>::Node& self) {
                                 for (size_t i = 0; i < ids.size(); ++i)
                                   for (int64_t j = 0; j < d; ++j)
                                     detail::accumulate<Real>(tn, static_cast<int64_t>(ids[i]) * d + j,
                                                              self.grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)]);
                               });
}

// ---------------------------------------------------------------------------
// reductions and losses

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real s = 0;
  for (Real x : a.data()) s += x;
  auto an = a.node().get();
  return detail::make_op<Real>({1}, std::vector<Real>{s}, {a},
                               [an](typename Tensor<Real>::Node& self) {
                                 Real g = self.grad[0];
                                 for (size_t i = 0; i < an->value.size(); ++i)
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), g);
                               });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  Real s = 0;
  for (Real x : a.data()) s += x;
  Real inv = Real(1) / static_cast<Real>(a.numel());
  auto an = a.node().get();
  return detail::make_op<Real>({1}, std::vector<Real>{s * inv}, {a},
                               [an, inv](typename Tensor<Real>::Node& self) {
                                 Real g = self.grad[0] * inv;
                                 for (size_t i = 0; i < an->value.size(); ++i)
                                   detail::accumulate<Real>(an, static_cast<int64_t>(i), g);
                               });
}

inline constexpr double kLogClampEps = 1e-12;

// mean over rows of -log(pred[row, target]); pred rows are distributions
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& pred, const std::vector<int>& targets) {
  if (pred.rank() != 2)
    throw ShapeError("cross_entropy: predictions must be (positions, classes), got " + shape_str(pred.shape()));
  int64_t l = pred.size(0), v = pred.size(1);
  if (static_cast<int64_t>(targets.size()) != l)
    throw AlignmentError("cross_entropy: " + std::to_string(targets.size()) + " targets vs " +
                         std::to_string(l) + " prediction rows");
  for (int t : targets)
    if (t < 0 || t >= v)
      throw VocabError("cross_entropy: target id " + std::to_string(t) + " outside vocab of size " + std::to_string(v));
  const Real eps = static_cast<Real>(kLogClampEps);
  Real loss = 0;
  for (int64_t i = 0; i < l; ++i)
    loss -= std::log(std::max(pred.data()[static_cast<size_t>(i * v + targets[static_cast<size_t>(i)])], eps));
  loss /= static_cast<Real>(l);
  auto pn = pred.node().get();
  return detail::make_op<Real>({1}, std::vector<Real>{loss}, {pred},
                               [pn, targets, l, v, eps](typename Tensor<Real>::Node& self) {
                                 Real g = self.grad[0] / static_cast<Real>(l);
                                 for (int64_t i = 0; i < l; ++i) {
                                   size_t idx = static_cast<size_t>(i * v + targets[static_cast<size_t>(i)]);
                                   Real p = pn->value[idx];
                                   if (p > eps)
                                     detail::accumulate<Real>(pn, static_cast<int64_t>(idx), -g / p);
                                 }
                               });
}

// sum over classes, mean over rows of p * log(p/q); q clamped away from zero
template <class Real>
Tensor<Real> kl_div(const Tensor<Real>& p, const Tensor<Real>& q) {
  if (p.shape() != q.shape() || p.rank() != 2)
    throw ShapeError("kl_div: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  int64_t l = p.size(0), v = p.size(1);
  const Real eps = static_cast<Real>(kLogClampEps);
  Real loss = 0;
  for (int64_t i = 0; i < l * v; ++i) {
    Real pi = p.data()[static_cast<size_t>(i)];
    if (pi <= Real(0)) continue;
    loss += pi * (std::log(std::max(pi, eps)) - std::log(std::max(q.data()[static_cast<size_t>(i)], eps)));
  }
  loss /= static_cast<Real>(l);
  auto pn = p.node().get();
  auto qn = q.node().get();
  return detail::make_op<Real>(
      {1}, std::vector<Real>{loss}, {p, q},
      [pn, qn, l, v, eps](typename Tensor<Real>::Node& self) {
        Real g = self.grad[0] / static_cast<Real>(l);
        for (int64_t i = 0; i < l * v; ++i) {
          Real pi = pn->value[static_cast<size_t>(i)];
          Real qi = qn->value[static_cast<size_t>(i)];
          if (pi > Real(0)) {
            detail::accumulate<Real>(pn, i,
                                     g * (std::log(std::max(pi, eps)) - std::log(std::max(qi, eps)) + Real(1)));
            if (qi > eps) detail::accumulate<Real>(qn, i, -g * pi / qi);
          }
        }
      });
}

// value-identical tensor that blocks all gradient flow
template <class Real>
Tensor<Real> stop_gradient(const Tensor<Real>& a) {
  return Tensor<Real>::from(a.data(), a.shape(), false);
}

}  // namespace vlamd
