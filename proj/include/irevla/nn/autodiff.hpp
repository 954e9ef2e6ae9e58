#pragma once

// Tape-based reverse-mode differentiation over a small, fixed vocabulary of
// matrix operations. Every op records its output value and a closure that
// pushes the output gradient back to its inputs; `Tape::backward` replays the
// closures in reverse insertion order.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>
#include <algorithm>
#include <numbers>
#include <string>
#include <utility>

#include "irevla/core/errors.hpp"
#include "irevla/nn/param.hpp"
#include "irevla/nn/tensor.hpp"

namespace irevla::nn {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  double item() const { return value().item(); }
};

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

inline CMatMap cmat(const Tensor& t) {
  return CMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MatMap mat(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
}  // namespace detail

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push(std::move(t), false, nullptr, "constant"); }

  // Records a parameter leaf. Gradients reaching it are added to `p.grad` by
  // backward().
  Var param(Param& p) {
    Var v = push(p.value, true, nullptr, "param");
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of a node, allocated on first touch.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() == nodes_[id].value.size(); }

  Var make(Tensor value, std::initializer_list<Var> inputs, Backward fn, const char* op) {
    bool rg = false;
    for (const Var& in : inputs) {
      if (in.tape != this) throw ContractError(std::string(op) + ": input recorded on another tape");
      rg = rg || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr, op);
  }

  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss recorded on another tape");
    if (nodes_[loss.id].value.size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_str(nodes_[loss.id].value.shape()));
    grad(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !has_grad(i)) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& pg = n.param->grad.values();
        const auto& g = n.grad.values();
        for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Param* param = nullptr;
  };

  Var push(Tensor value, bool rg, Backward fn, const char* op) {
    if (!value.all_finite())
      throw DivergenceError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(value), Tensor{}, rg, std::move(fn), nullptr});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Linear algebra

// X[n x k] * B[k x m]
inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows())
    throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor out({A.rows(), B.cols()});
  detail::mat(out).noalias() = detail::cmat(A) * detail::cmat(B);
  return a.tape->make(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id))
      detail::mat(t.grad(a.id)).noalias() += detail::cmat(g) * detail::cmat(t.value(b.id)).transpose();
    if (t.requires_grad(b.id))
      detail::mat(t.grad(b.id)).noalias() += detail::cmat(t.value(a.id)).transpose() * detail::cmat(g);
  }, "matmul");
}

// Affine map applied to each row: X[n x in] -> X W^T + b, W[out x in], b[out].
inline Var linear(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  if (X.cols() != W.cols() || B.size() != W.rows())
    throw DimensionError("linear: input " + shape_str(X.shape()) + ", weight " + shape_str(W.shape()) +
                         ", bias " + shape_str(B.shape()));
  const std::size_t n = X.rows();
  Tensor out({n, W.rows()});
  auto O = detail::mat(out);
  O.noalias() = detail::cmat(X) * detail::cmat(W).transpose();
  Eigen::Map<const Eigen::RowVectorXd> bv(B.data(), static_cast<Eigen::Index>(B.size()));
  O.rowwise() += bv;
  return x.tape->make(std::move(out), {x, w, b}, [x, w, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto G = detail::cmat(g);
    if (t.requires_grad(x.id)) detail::mat(t.grad(x.id)).noalias() += G * detail::cmat(t.value(w.id));
    if (t.requires_grad(w.id))
      detail::mat(t.grad(w.id)).noalias() += G.transpose() * detail::cmat(t.value(x.id));
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) += G.colwise().sum();
    }
  }, "linear");
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {
template <class Fwd, class Bwd>
Var unary(Var x, Fwd fwd, Bwd dydx, const char* op) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = fwd(X[i]);
  return x.tape->make(std::move(out), {x}, [x, dydx](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(x.id);
    const Tensor& Y = t.value(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx(X[i], Y[i]);
  }, op);
}
}  // namespace detail

inline Var tanh(Var x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; }, "tanh");
}
inline Var relu(Var x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}
inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}
inline Var square(Var x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; },
                       "square");
}
inline Var scale(Var x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; }, "scale");
}
inline Var add_scalar(Var x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; },
                       "add_scalar");
}
// Gradient passes only where the input lies strictly inside [lo, hi].
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                       [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; }, "clamp");
}

namespace detail {
template <class Fwd, class Bwd>
Var binary(Var a, Var b, Fwd fwd, Bwd grads, const char* op) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.size() != B.size()) throw DimensionError(std::string(op) + ": " + shape_str(A.shape()) + " vs " +
                                                 shape_str(B.shape()));
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = fwd(A[i], B[i]);
  return a.tape->make(std::move(out), {a, b}, [a, b, grads](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(a.id);
    const Tensor& B = t.value(b.id);
    const bool ga = t.requires_grad(a.id), gb = t.requires_grad(b.id);
    Tensor* GA = ga ? &t.grad(a.id) : nullptr;
    Tensor* GB = gb ? &t.grad(b.id) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto [da, db] = grads(A[i], B[i]);
      if (ga) (*GA)[i] += g[i] * da;
      if (gb) (*GB)[i] += g[i] * db;
    }
  }, op);
}
}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(a, b, [](double x, double y) { return x + y; },
                        [](double, double) { return std::pair{1.0, 1.0}; }, "add");
}
inline Var sub(Var a, Var b) {
  return detail::binary(a, b, [](double x, double y) { return x - y; },
                        [](double, double) { return std::pair{1.0, -1.0}; }, "sub");
}
inline Var mul(Var a, Var b) {
  return detail::binary(a, b, [](double x, double y) { return x * y; },
                        [](double x, double y) { return std::pair{y, x}; }, "mul");
}
// Ties send the gradient to the first argument.
inline Var minimum(Var a, Var b) {
  return detail::binary(a, b, [](double x, double y) { return x <= y ? x : y; },
                        [](double x, double y) { return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0}; },
                        "minimum");
}

// X[n x c] (+|*) v[c], broadcast along rows.
inline Var add_row(Var x, Var v) {
  const Tensor& X = x.value();
  const Tensor& V = v.value();
  if (V.size() != X.cols()) throw DimensionError("add_row: " + shape_str(X.shape()) + " + " + shape_str(V.shape()));
  Tensor out = X;
  const std::size_t c = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += V[j];
  return x.tape->make(std::move(out), {x, v}, [x, v](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const std::size_t c = t.value(v.id).size();
    if (t.requires_grad(x.id)) {
      Tensor& gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(v.id)) {
      Tensor& gv = t.grad(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i % c] += g[i];
    }
  }, "add_row");
}

inline Var mul_row(Var x, Var v) {
  const Tensor& X = x.value();
  const Tensor& V = v.value();
  if (V.size() != X.cols()) throw DimensionError("mul_row: " + shape_str(X.shape()) + " * " + shape_str(V.shape()));
  Tensor out = X;
  const std::size_t c = X.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= V[i % c];
  return x.tape->make(std::move(out), {x, v}, [x, v](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(x.id);
    const Tensor& V = t.value(v.id);
    const std::size_t c = V.size();
    if (t.requires_grad(x.id)) {
      Tensor& gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * V[i % c];
    }
    if (t.requires_grad(v.id)) {
      Tensor& gv = t.grad(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i % c] += g[i] * X[i];
    }
  }, "mul_row");
}

// X * s where s is a recorded scalar.
inline Var mul_scalar(Var x, Var s) {
  const Tensor& X = x.value();
  const double sv = s.value().item();
  Tensor out = X;
  for (auto& e : out.values()) e *= sv;
  return x.tape->make(std::move(out), {x, s}, [x, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(x.id);
    const double sv = t.value(s.id)[0];
    if (t.requires_grad(x.id)) {
      Tensor& gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
    if (t.requires_grad(s.id)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * X[i];
      t.grad(s.id)[0] += acc;
    }
  }, "mul_scalar");
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape->make(Tensor::scalar(s), {x}, [x](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& e : t.grad(x.id).values()) e += g;
  }, "sum");
}

inline Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

// X[n x c] -> [n]
inline Var row_sum(Var x) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  Tensor out({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += X[r * c + j];
    out[r] = s;
  }
  return x.tape->make(std::move(out), {x}, [x, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / c];
  }, "row_sum");
}

inline Var reshape(Var x, Shape s) {
  Tensor out = x.value().reshaped(std::move(s));
  return x.tape->make(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "reshape");
}

// [n x a] ++ [n x b] -> [n x (a+b)]
inline Var concat_cols(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rows() != B.rows()) throw DimensionError("concat_cols: row mismatch");
  const std::size_t n = A.rows(), ca = A.cols(), cb = B.cols();
  Tensor out({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ca; ++j) out[r * (ca + cb) + j] = A[r * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[r * (ca + cb) + ca + j] = B[r * cb + j];
  }
  return a.tape->make(std::move(out), {a, b}, [a, b, n, ca, cb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad(a.id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * (ca + cb) + j];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * (ca + cb) + ca + j];
    }
  }, "concat_cols");
}

inline Var softmax_rows(Var x) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = X[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, X[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[r * c + j] = std::exp(X[r * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= z;
  }
  return x.tape->make(std::move(out), {x}, [x, n, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& Y = t.value(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * Y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += Y[r * c + j] * (g[r * c + j] - dot);
    }
  }, "softmax_rows");
}

// ---------------------------------------------------------------------------
// Token operations. A batch of N token sets with m tokens each is stored as an
// (N*m) x d matrix, token-major within each sample.

// Y[n,i,:] = sum_j M[i,j] X[n,j,:]
inline Var token_mix(Var x, Var mixer, std::size_t m) {
  const Tensor& X = x.value();
  const Tensor& M = mixer.value();
  if (M.rows() != m || M.cols() != m || X.rows() % m != 0)
    throw DimensionError("token_mix: tokens " + shape_str(X.shape()) + ", mixer " + shape_str(M.shape()));
  const std::size_t batch = X.rows() / m, d = X.cols();
  Tensor out(X.shape());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < m; ++i) {
      double* o = out.data() + (n * m + i) * d;
      for (std::size_t j = 0; j < m; ++j) {
        const double w = M[i * m + j];
        const double* xi = X.data() + (n * m + j) * d;
        for (std::size_t k = 0; k < d; ++k) o[k] += w * xi[k];
      }
    }
  return x.tape->make(std::move(out), {x, mixer}, [x, mixer, m, batch, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(x.id);
    const Tensor& M = t.value(mixer.id);
    const bool gx_on = t.requires_grad(x.id), gm_on = t.requires_grad(mixer.id);
    Tensor* GX = gx_on ? &t.grad(x.id) : nullptr;
    Tensor* GM = gm_on ? &t.grad(mixer.id) : nullptr;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g.data() + (n * m + i) * d;
        for (std::size_t j = 0; j < m; ++j) {
          const double* xj = X.data() + (n * m + j) * d;
          if (gm_on) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += gi[k] * xj[k];
            (*GM)[i * m + j] += acc;
          }
          if (gx_on) {
            const double w = M[i * m + j];
            double* gxj = GX->data() + (n * m + j) * d;
            for (std::size_t k = 0; k < d; ++k) gxj[k] += w * gi[k];
          }
        }
      }
  }, "token_mix");
}

// Attention pooling: out[n] = sum_i w_ni h_ni with w_n = softmax_i(h_ni . q / sqrt(d)).
inline Var attn_pool(Var h, Var query, std::size_t m) {
  const Tensor& H = h.value();
  const Tensor& Q = query.value();
  const std::size_t d = H.cols();
  if (Q.size() != d || m == 0 || H.rows() % m != 0)
    throw DimensionError("attn_pool: tokens " + shape_str(H.shape()) + ", query " + shape_str(Q.shape()));
  const std::size_t batch = H.rows() / m;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out({batch, d});
  auto weights = std::make_shared<std::vector<double>>(batch * m);
  for (std::size_t n = 0; n < batch; ++n) {
    double* w = weights->data() + n * m;
    double mx = -INFINITY;
    for (std::size_t i = 0; i < m; ++i) {
      const double* hi = H.data() + (n * m + i) * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += hi[k] * Q[k];
      w[i] = s * inv;
      mx = std::max(mx, w[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) z += (w[i] = std::exp(w[i] - mx));
    for (std::size_t i = 0; i < m; ++i) w[i] /= z;
    double* o = out.data() + n * d;
    for (std::size_t i = 0; i < m; ++i) {
      const double* hi = H.data() + (n * m + i) * d;
      for (std::size_t k = 0; k < d; ++k) o[k] += w[i] * hi[k];
    }
  }
  return h.tape->make(std::move(out), {h, query}, [h, query, m, batch, d, inv, weights](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& H = t.value(h.id);
    const Tensor& Q = t.value(query.id);
    const bool gh_on = t.requires_grad(h.id), gq_on = t.requires_grad(query.id);
    Tensor* GH = gh_on ? &t.grad(h.id) : nullptr;
    Tensor* GQ = gq_on ? &t.grad(query.id) : nullptr;
    std::vector<double> dw(m), ds(m);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* w = weights->data() + n * m;
      const double* gn = g.data() + n * d;
      double wdot = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double* hi = H.data() + (n * m + i) * d;
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += gn[k] * hi[k];
        dw[i] = acc;
        wdot += w[i] * acc;
      }
      for (std::size_t i = 0; i < m; ++i) ds[i] = w[i] * (dw[i] - wdot) * inv;
      for (std::size_t i = 0; i < m; ++i) {
        const double* hi = H.data() + (n * m + i) * d;
        if (gh_on) {
          double* ghi = GH->data() + (n * m + i) * d;
          for (std::size_t k = 0; k < d; ++k) ghi[k] += w[i] * gn[k] + ds[i] * Q[k];
        }
        if (gq_on)
          for (std::size_t k = 0; k < d; ++k) (*GQ)[k] += ds[i] * hi[k];
      }
    }
  }, "attn_pool");
}

// ---------------------------------------------------------------------------
// Distribution primitives

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Diagonal Gaussian log density per row: action, mean [n x k]; log_std [k].
inline Var gaussian_logprob(Var action, Var mean, Var log_std) {
  const Tensor& A = action.value();
  const Tensor& M = mean.value();
  const Tensor& L = log_std.value();
  if (A.shape() != M.shape() || L.size() != M.cols())
    throw DimensionError("gaussian_logprob: action " + shape_str(A.shape()) + ", mean " +
                         shape_str(M.shape()) + ", log_std " + shape_str(L.shape()));
  const std::size_t n = M.rows(), k = M.cols();
  Tensor out({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double z = (A[r * k + j] - M[r * k + j]) * std::exp(-L[j]);
      s += -0.5 * z * z - L[j] - 0.5 * kLog2Pi;
    }
    out[r] = s;
  }
  return action.tape->make(std::move(out), {action, mean, log_std}, [action, mean, log_std, n, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(action.id);
    const Tensor& M = t.value(mean.id);
    const Tensor& L = t.value(log_std.id);
    const bool ga = t.requires_grad(action.id), gm = t.requires_grad(mean.id), gl = t.requires_grad(log_std.id);
    Tensor* GA = ga ? &t.grad(action.id) : nullptr;
    Tensor* GM = gm ? &t.grad(mean.id) : nullptr;
    Tensor* GL = gl ? &t.grad(log_std.id) : nullptr;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        const double inv_var = std::exp(-2.0 * L[j]);
        const double diff = A[r * k + j] - M[r * k + j];
        if (ga) (*GA)[r * k + j] += g[r] * (-diff * inv_var);
        if (gm) (*GM)[r * k + j] += g[r] * (diff * inv_var);
        if (gl) (*GL)[j] += g[r] * (diff * diff * inv_var - 1.0);
      }
  }, "gaussian_logprob");
}

// Per-row sum of log(1 - tanh(u)^2), the log-Jacobian of tanh squashing,
// evaluated as 2 (log 2 - u - softplus(-2u)) for stability.
inline Var tanh_log_jacobian(Var u) {
  const Tensor& U = u.value();
  const std::size_t n = U.rows(), k = U.cols();
  auto softplus = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  Tensor out({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double x = U[r * k + j];
      s += 2.0 * (std::numbers::ln2 - x - softplus(-2.0 * x));
    }
    out[r] = s;
  }
  return u.tape->make(std::move(out), {u}, [u, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& U = t.value(u.id);
    Tensor& gu = t.grad(u.id);
    for (std::size_t i = 0; i < U.size(); ++i) gu[i] += g[i / k] * (-2.0 * std::tanh(U[i]));
  }, "tanh_log_jacobian");
}

// Entropy of a diagonal Gaussian with the given log standard deviations.
inline Var gaussian_entropy(Var log_std) {
  const std::size_t k = log_std.value().size();
  return add_scalar(sum(log_std), 0.5 * (1.0 + kLog2Pi) * static_cast<double>(k));
}

}  // namespace irevla::nn
