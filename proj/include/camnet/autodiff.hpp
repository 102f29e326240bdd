#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "camnet/errors.hpp"
#include "camnet/log.hpp"
#include "camnet/rng.hpp"

namespace camnet::ad {

enum class NanPolicy { Throw, Warn };

inline NanPolicy& nan_policy() {
  thread_local NanPolicy policy = NanPolicy::Throw;
  return policy;
}

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  bool is_param = false;
};

using NodePtr = std::shared_ptr<Node>;

namespace detail {

inline size_t numel_of(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= (size_t)d;
  return n;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline void check_finite(const Node& n, const char* op) {
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      std::string msg = std::string(op) + " produced a non-finite value";
      if (nan_policy() == NanPolicy::Throw) throw_error(ErrorKind::NonFiniteValue, msg);
      log::warn(msg);
      return;
    }
  }
}

inline void accumulate(Node& target, size_t idx, double v) {
  if (!target.requires_grad) return;
  if (target.grad.empty()) target.grad.assign(target.value.size(), 0.0);
  target.grad[idx] += v;
}

inline void ensure_grad(Node& target) {
  if (target.requires_grad && target.grad.empty())
    target.grad.assign(target.value.size(), 0.0);
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(std::vector<int> shape, std::vector<double> data) {
    auto n = std::make_shared<Node>();
    if (data.size() != detail::numel_of(shape))
      throw_error(ErrorKind::ShapeMismatch, "tensor: data length does not match shape");
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(n);
  }
  static Tensor zeros(std::vector<int> shape) {
    size_t n = detail::numel_of(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return constant({1}, {v}); }

  // Trainable leaf. `data` may be shorter-lived; it is copied.
  static Tensor param(std::vector<int> shape, std::vector<double> data) {
    Tensor t = constant(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    t.node_->is_param = true;
    return t;
  }

  const std::vector<int>& shape() const { return node_->shape; }
  size_t numel() const { return node_->value.size(); }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->grad; }
  bool defined() const { return node_ != nullptr; }
  NodePtr node() const { return node_; }

  double item() const {
    if (numel() != 1) throw_error(ErrorKind::NotScalar, "item() on non-scalar tensor");
    return node_->value[0];
  }
  int rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  int cols() const {
    return node_->shape.size() >= 2 ? node_->shape[1] : (node_->shape.empty() ? 1 : 1);
  }
  double at(int i, int j) const { return node_->value[(size_t)i * cols() + j]; }

  void zero_grad() { node_->grad.clear(); }

 private:
  NodePtr node_;
};

namespace detail {

inline Tensor make_op(std::vector<int> shape, std::vector<double> value,
                      std::vector<NodePtr> parents, std::function<void(Node&)> bwd,
                      const char* opname) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const NodePtr& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::move(bwd);
  check_finite(*n, opname);
  return Tensor(n);
}

}  // namespace detail

// ---- binary ops -----------------------------------------------------------

// add with limited broadcasting: equal shapes, [m,n]+[n] (or [1,n]) row
// broadcast, or either side scalar.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  auto pa = a.node();
  auto pb = b.node();
  if (as == bs) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + pb->value[i];
    return detail::make_op(as, std::move(out), {pa, pb},
                           [pa, pb](Node& self) {
                             for (size_t i = 0; i < self.grad.size(); ++i) {
                               detail::accumulate(*pa, i, self.grad[i]);
                               detail::accumulate(*pb, i, self.grad[i]);
                             }
                           },
                           "add");
  }
  if (b.numel() == 1) {
    std::vector<double> out(a.numel());
    double bv = pb->value[0];
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + bv;
    return detail::make_op(as, std::move(out), {pa, pb},
                           [pa, pb](Node& self) {
                             double s = 0;
                             for (size_t i = 0; i < self.grad.size(); ++i) {
                               detail::accumulate(*pa, i, self.grad[i]);
                               s += self.grad[i];
                             }
                             detail::accumulate(*pb, 0, s);
                           },
                           "add");
  }
  if (a.numel() == 1) return add(b, a);
  // row broadcast: a is [m,n], b is [n] or [1,n]
  size_t bn = b.numel();
  if (as.size() == 2 && (size_t)as[1] == bn) {
    int m = as[0], n = as[1];
    std::vector<double> out(a.numel());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out[(size_t)i * n + j] = pa->value[(size_t)i * n + j] + pb->value[j];
    return detail::make_op(as, std::move(out), {pa, pb},
                           [pa, pb, m, n](Node& self) {
                             for (int i = 0; i < m; ++i)
                               for (int j = 0; j < n; ++j) {
                                 double g = self.grad[(size_t)i * n + j];
                                 detail::accumulate(*pa, (size_t)i * n + j, g);
                                 detail::accumulate(*pb, j, g);
                               }
                           },
                           "add");
  }
  throw_error(ErrorKind::ShapeMismatch, "add: incompatible shapes " +
                                            detail::shape_str(as) + " vs " +
                                            detail::shape_str(bs));
}

inline Tensor scale(const Tensor& a, double c) {
  auto pa = a.node();
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * c;
  return detail::make_op(a.shape(), std::move(out), {pa},
                         [pa, c](Node& self) {
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             detail::accumulate(*pa, i, self.grad[i] * c);
                         },
                         "scale");
}

inline Tensor add_const(const Tensor& a, double c) {
  auto pa = a.node();
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + c;
  return detail::make_op(a.shape(), std::move(out), {pa},
                         [pa](Node& self) {
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             detail::accumulate(*pa, i, self.grad[i]);
                         },
                         "add_const");
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

// elementwise multiply; same shape or scalar on either side
inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto pa = a.node();
  auto pb = b.node();
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * pb->value[i];
    return detail::make_op(a.shape(), std::move(out), {pa, pb},
                           [pa, pb](Node& self) {
                             for (size_t i = 0; i < self.grad.size(); ++i) {
                               detail::accumulate(*pa, i, self.grad[i] * pb->value[i]);
                               detail::accumulate(*pb, i, self.grad[i] * pa->value[i]);
                             }
                           },
                           "mul");
  }
  if (b.numel() == 1) {
    std::vector<double> out(a.numel());
    double bv = pb->value[0];
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * bv;
    return detail::make_op(a.shape(), std::move(out), {pa, pb},
                           [pa, pb](Node& self) {
                             double s = 0;
                             for (size_t i = 0; i < self.grad.size(); ++i) {
                               detail::accumulate(*pa, i, self.grad[i] * pb->value[0]);
                               s += self.grad[i] * pa->value[i];
                             }
                             detail::accumulate(*pb, 0, s);
                           },
                           "mul");
  }
  if (a.numel() == 1) return mul(b, a);
  throw_error(ErrorKind::ShapeMismatch, "mul: incompatible shapes " +
                                            detail::shape_str(a.shape()) + " vs " +
                                            detail::shape_str(b.shape()));
}

// elementwise divide, same shapes
inline Tensor div(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && b.numel() != 1)
    throw_error(ErrorKind::ShapeMismatch, "div: incompatible shapes");
  auto pa = a.node();
  auto pb = b.node();
  bool scalar_b = b.numel() == 1;
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] / pb->value[scalar_b ? 0 : i];
  return detail::make_op(a.shape(), std::move(out), {pa, pb},
                         [pa, pb, scalar_b](Node& self) {
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             size_t bi = scalar_b ? 0 : i;
                             double inv = 1.0 / pb->value[bi];
                             detail::accumulate(*pa, i, self.grad[i] * inv);
                             detail::accumulate(*pb, bi,
                                                -self.grad[i] * pa->value[i] * inv * inv);
                           }
                         },
                         "div");
}

// scales row i of x by s[i]; s is [m] or [m,1]
inline Tensor rowwise_scale(const Tensor& x, const Tensor& s) {
  const auto& xs = x.shape();
  if (xs.size() != 2 || (int)s.numel() != xs[0])
    throw_error(ErrorKind::ShapeMismatch, "rowwise_scale: need x [m,n], s [m]");
  auto px = x.node();
  auto ps = s.node();
  int m = xs[0], n = xs[1];
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[(size_t)i * n + j] = px->value[(size_t)i * n + j] * ps->value[i];
  return detail::make_op(xs, std::move(out), {px, ps},
                         [px, ps, m, n](Node& self) {
                           for (int i = 0; i < m; ++i) {
                             double srow = 0;
                             for (int j = 0; j < n; ++j) {
                               size_t idx = (size_t)i * n + j;
                               detail::accumulate(*px, idx, self.grad[idx] * ps->value[i]);
                               srow += self.grad[idx] * px->value[idx];
                             }
                             detail::accumulate(*ps, i, srow);
                           }
                         },
                         "rowwise_scale");
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw_error(ErrorKind::ShapeMismatch, "matmul: " + detail::shape_str(as) + " x " +
                                              detail::shape_str(bs));
  int m = as[0], k = as[1], n = bs[1];
  auto pa = a.node();
  auto pb = b.node();
  std::vector<double> out((size_t)m * n, 0.0);
  const double* A = pa->value.data();
  const double* B = pb->value.data();
  for (int i = 0; i < m; ++i) {
    double* Crow = out.data() + (size_t)i * n;
    const double* Arow = A + (size_t)i * k;
    for (int p = 0; p < k; ++p) {
      double av = Arow[p];
      if (av == 0.0) continue;
      const double* Brow = B + (size_t)p * n;
      for (int j = 0; j < n; ++j) Crow[j] += av * Brow[j];
    }
  }
  return detail::make_op({m, n}, std::move(out), {pa, pb},
                         [pa, pb, m, k, n](Node& self) {
                           detail::ensure_grad(*pa);
                           detail::ensure_grad(*pb);
                           const double* G = self.grad.data();
                           // dA = G * B^T
                           if (pa->requires_grad) {
                             double* dA = pa->grad.data();
                             const double* B = pb->value.data();
                             for (int i = 0; i < m; ++i)
                               for (int p = 0; p < k; ++p) {
                                 double s = 0;
                                 const double* Grow = G + (size_t)i * n;
                                 const double* Brow = B + (size_t)p * n;
                                 for (int j = 0; j < n; ++j) s += Grow[j] * Brow[j];
                                 dA[(size_t)i * k + p] += s;
                               }
                           }
                           // dB = A^T * G
                           if (pb->requires_grad) {
                             double* dB = pb->grad.data();
                             const double* A = pa->value.data();
                             for (int p = 0; p < k; ++p)
                               for (int i = 0; i < m; ++i) {
                                 double av = A[(size_t)i * k + p];
                                 if (av == 0.0) continue;
                                 const double* Grow = G + (size_t)i * n;
                                 double* dBrow = dB + (size_t)p * n;
                                 for (int j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
                               }
                           }
                         },
                         "matmul");
}

// ---- shape ops -------------------------------------------------------------

// concat along axis 0 or 1 (2D tensors; 1D treated as [1,n] for axis 1 is NOT
// implied — shapes must be 2D for axis 1)
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw_error(ErrorKind::ShapeMismatch, "concat: no inputs");
  std::vector<NodePtr> parents;
  for (const Tensor& t : parts) parents.push_back(t.node());
  if (parts[0].shape().size() == 1 && axis == 0) {
    int total = 0;
    for (const Tensor& t : parts) {
      if (t.shape().size() != 1) throw_error(ErrorKind::ShapeMismatch, "concat: mixed ranks");
      total += t.shape()[0];
    }
    std::vector<double> out;
    out.reserve(total);
    for (const Tensor& t : parts)
      out.insert(out.end(), t.value().begin(), t.value().end());
    return detail::make_op({total}, std::move(out), parents,
                           [parents](Node& self) {
                             size_t off = 0;
                             for (const NodePtr& p : parents) {
                               for (size_t i = 0; i < p->value.size(); ++i)
                                 detail::accumulate(*p, i, self.grad[off + i]);
                               off += p->value.size();
                             }
                           },
                           "concat");
  }
  // 2D cases
  int m0 = parts[0].shape()[0];
  if (axis == 0) {
    int n = parts[0].shape()[1];
    int mtot = 0;
    for (const Tensor& t : parts) {
      if (t.shape().size() != 2 || t.shape()[1] != n)
        throw_error(ErrorKind::ShapeMismatch, "concat axis 0: column mismatch");
      mtot += t.shape()[0];
    }
    std::vector<double> out;
    out.reserve((size_t)mtot * n);
    for (const Tensor& t : parts)
      out.insert(out.end(), t.value().begin(), t.value().end());
    return detail::make_op({mtot, n}, std::move(out), parents,
                           [parents](Node& self) {
                             size_t off = 0;
                             for (const NodePtr& p : parents) {
                               for (size_t i = 0; i < p->value.size(); ++i)
                                 detail::accumulate(*p, i, self.grad[off + i]);
                               off += p->value.size();
                             }
                           },
                           "concat");
  }
  if (axis != 1) throw_error(ErrorKind::ShapeMismatch, "concat: axis must be 0 or 1");
  int ntot = 0;
  std::vector<int> widths;
  for (const Tensor& t : parts) {
    if (t.shape().size() != 2 || t.shape()[0] != m0)
      throw_error(ErrorKind::ShapeMismatch, "concat axis 1: row mismatch");
    widths.push_back(t.shape()[1]);
    ntot += t.shape()[1];
  }
  std::vector<double> out((size_t)m0 * ntot);
  int off = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    for (int i = 0; i < m0; ++i)
      for (int j = 0; j < widths[p]; ++j)
        out[(size_t)i * ntot + off + j] = v[(size_t)i * widths[p] + j];
    off += widths[p];
  }
  return detail::make_op({m0, ntot}, std::move(out), parents,
                         [parents, widths, m0, ntot](Node& self) {
                           int off = 0;
                           for (size_t p = 0; p < parents.size(); ++p) {
                             for (int i = 0; i < m0; ++i)
                               for (int j = 0; j < widths[p]; ++j)
                                 detail::accumulate(*parents[p], (size_t)i * widths[p] + j,
                                                    self.grad[(size_t)i * ntot + off + j]);
                             off += widths[p];
                           }
                         },
                         "concat");
}

// slice along axis 0 (rows) or 1 (cols) of a 2D tensor; or a 1D range
inline Tensor slice(const Tensor& x, int axis, int start, int len) {
  const auto& xs = x.shape();
  auto px = x.node();
  if (xs.size() == 1) {
    if (axis != 0 || start < 0 || start + len > xs[0])
      throw_error(ErrorKind::ShapeMismatch, "slice: out of range");
    std::vector<double> out(px->value.begin() + start, px->value.begin() + start + len);
    return detail::make_op({len}, std::move(out), {px},
                           [px, start, len](Node& self) {
                             for (int i = 0; i < len; ++i)
                               detail::accumulate(*px, start + i, self.grad[i]);
                           },
                           "slice");
  }
  if (xs.size() != 2) throw_error(ErrorKind::ShapeMismatch, "slice: rank must be 1 or 2");
  int m = xs[0], n = xs[1];
  if (axis == 0) {
    if (start < 0 || start + len > m) throw_error(ErrorKind::ShapeMismatch, "slice: rows out of range");
    std::vector<double> out(px->value.begin() + (size_t)start * n,
                            px->value.begin() + (size_t)(start + len) * n);
    return detail::make_op({len, n}, std::move(out), {px},
                           [px, start, len, n](Node& self) {
                             for (size_t i = 0; i < (size_t)len * n; ++i)
                               detail::accumulate(*px, (size_t)start * n + i, self.grad[i]);
                           },
                           "slice");
  }
  if (axis != 1 || start < 0 || start + len > n)
    throw_error(ErrorKind::ShapeMismatch, "slice: cols out of range");
  std::vector<double> out((size_t)m * len);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j) out[(size_t)i * len + j] = px->value[(size_t)i * n + start + j];
  return detail::make_op({m, len}, std::move(out), {px},
                         [px, m, n, start, len](Node& self) {
                           for (int i = 0; i < m; ++i)
                             for (int j = 0; j < len; ++j)
                               detail::accumulate(*px, (size_t)i * n + start + j,
                                                  self.grad[(size_t)i * len + j]);
                         },
                         "slice");
}

// ---- reductions ------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  auto px = x.node();
  double s = 0;
  for (double v : px->value) s += v;
  return detail::make_op({1}, {s}, {px},
                         [px](Node& self) {
                           for (size_t i = 0; i < px->value.size(); ++i)
                             detail::accumulate(*px, i, self.grad[0]);
                         },
                         "sum");
}

inline Tensor mean(const Tensor& x) {
  auto px = x.node();
  double s = 0;
  for (double v : px->value) s += v;
  double inv = 1.0 / (double)px->value.size();
  return detail::make_op({1}, {s * inv}, {px},
                         [px, inv](Node& self) {
                           for (size_t i = 0; i < px->value.size(); ++i)
                             detail::accumulate(*px, i, self.grad[0] * inv);
                         },
                         "mean");
}

// ---- elementwise nonlinearities ---------------------------------------------

namespace detail {

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df, const char* name) {
  auto px = x.node();
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(px->value[i]);
  auto pout = std::make_shared<std::vector<double>>(out);  // saved forward values
  return make_op(x.shape(), std::move(out), {px},
                 [px, pout, df](Node& self) {
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     detail::accumulate(*px, i,
                                        self.grad[i] * df(px->value[i], (*pout)[i]));
                 },
                 name);
}

}  // namespace detail

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; }, "exp");
}
inline Tensor log(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; }, "log");
}
inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; }, "tanh");
}
inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                       [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}
inline Tensor elu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0 ? v : std::expm1(v); },
                       [](double v, double y) { return v > 0 ? 1.0 : y + 1.0; }, "elu");
}
inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
  return detail::unary(x, [slope](double v) { return v > 0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0 ? 1.0 : slope; },
                       "leaky_relu");
}
inline Tensor softplus(const Tensor& x) {
  // stable: max(v,0) + log1p(exp(-|v|))
  return detail::unary(x,
                       [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); },
                       [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); },
                       "softplus");
}
inline Tensor clamp_min(const Tensor& x, double floor) {
  return detail::unary(x, [floor](double v) { return v < floor ? floor : v; },
                       [floor](double v, double) { return v > floor ? 1.0 : 0.0; },
                       "clamp_min");
}
inline Tensor square(const Tensor& x) { return mul(x, x); }

// ---- normalization -----------------------------------------------------------

// per-row layer norm over the last dim of [m,n]: gamma, beta are [n]
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const auto& xs = x.shape();
  if (xs.size() != 2 || (int)gamma.numel() != xs[1] || (int)beta.numel() != xs[1])
    throw_error(ErrorKind::ShapeMismatch, "layer_norm: need x [m,n], gamma/beta [n]");
  int m = xs[0], n = xs[1];
  auto px = x.node();
  auto pg = gamma.node();
  auto pb = beta.node();
  std::vector<double> out((size_t)m * n);
  auto xhat = std::make_shared<std::vector<double>>((size_t)m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (int i = 0; i < m; ++i) {
    const double* row = px->value.data() + (size_t)i * n;
    double mu = 0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (int j = 0; j < n; ++j) {
      double xh = (row[j] - mu) * is;
      (*xhat)[(size_t)i * n + j] = xh;
      out[(size_t)i * n + j] = xh * pg->value[j] + pb->value[j];
    }
  }
  return detail::make_op(
      xs, std::move(out), {px, pg, pb},
      [px, pg, pb, xhat, inv_std, m, n](Node& self) {
        for (int i = 0; i < m; ++i) {
          const double* g = self.grad.data() + (size_t)i * n;
          const double* xh = xhat->data() + (size_t)i * n;
          double sum_dxh = 0, sum_dxh_xh = 0;
          for (int j = 0; j < n; ++j) {
            double dxh = g[j] * pg->value[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
            detail::accumulate(*pg, j, g[j] * xh[j]);
            detail::accumulate(*pb, j, g[j]);
          }
          double is = (*inv_std)[i];
          for (int j = 0; j < n; ++j) {
            double dxh = g[j] * pg->value[j];
            detail::accumulate(*px, (size_t)i * n + j,
                               is * (dxh - sum_dxh / n - xh[j] * sum_dxh_xh / n));
          }
        }
      },
      "layer_norm");
}

// ---- graph message-passing primitives -----------------------------------------

// out[e, :] = x[idx[e], :]
inline Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  const auto& xs = x.shape();
  if (xs.size() != 2) throw_error(ErrorKind::ShapeMismatch, "gather_rows: need 2D input");
  int n = xs[0], d = xs[1];
  for (int i : idx)
    if (i < 0 || i >= n) throw_error(ErrorKind::ShapeMismatch, "gather_rows: index out of range");
  auto px = x.node();
  int e = (int)idx.size();
  std::vector<double> out((size_t)e * d);
  for (int r = 0; r < e; ++r)
    std::copy_n(px->value.data() + (size_t)idx[r] * d, d, out.data() + (size_t)r * d);
  return detail::make_op({e, d}, std::move(out), {px},
                         [px, idx, d](Node& self) {
                           for (size_t r = 0; r < idx.size(); ++r)
                             for (int j = 0; j < d; ++j)
                               detail::accumulate(*px, (size_t)idx[r] * d + j,
                                                  self.grad[r * d + j]);
                         },
                         "gather_rows");
}

// out[idx[e], :] += x[e, :]; result has n_rows rows
inline Tensor scatter_add_rows(const Tensor& x, const std::vector<int>& idx, int n_rows) {
  const auto& xs = x.shape();
  if (xs.size() != 2 || (int)idx.size() != xs[0])
    throw_error(ErrorKind::ShapeMismatch, "scatter_add_rows: need x [e,d] and idx of length e");
  int d = xs[1];
  for (int i : idx)
    if (i < 0 || i >= n_rows)
      throw_error(ErrorKind::ShapeMismatch, "scatter_add_rows: index out of range");
  auto px = x.node();
  std::vector<double> out((size_t)n_rows * d, 0.0);
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < d; ++j) out[(size_t)idx[r] * d + j] += px->value[r * d + j];
  return detail::make_op({n_rows, d}, std::move(out), {px},
                         [px, idx, d](Node& self) {
                           for (size_t r = 0; r < idx.size(); ++r)
                             for (int j = 0; j < d; ++j)
                               detail::accumulate(*px, r * d + j,
                                                  self.grad[(size_t)idx[r] * d + j]);
                         },
                         "scatter_add_rows");
}

// softmax over segments: logits [e, h]; rows sharing segment[e] are one
// softmax group per column. Groups are the in-edge sets of destination nodes.
inline Tensor segment_softmax(const Tensor& logits, const std::vector<int>& segment,
                              int n_segments) {
  const auto& ls = logits.shape();
  if (ls.size() != 2 || (int)segment.size() != ls[0])
    throw_error(ErrorKind::ShapeMismatch, "segment_softmax: need logits [e,h], segment [e]");
  int e = ls[0], h = ls[1];
  for (int s : segment)
    if (s < 0 || s >= n_segments)
      throw_error(ErrorKind::ShapeMismatch, "segment_softmax: segment id out of range");
  auto pl = logits.node();
  std::vector<double> mx((size_t)n_segments * h, -1e300);
  for (int r = 0; r < e; ++r)
    for (int c = 0; c < h; ++c)
      mx[(size_t)segment[r] * h + c] =
          std::max(mx[(size_t)segment[r] * h + c], pl->value[(size_t)r * h + c]);
  std::vector<double> denom((size_t)n_segments * h, 0.0);
  std::vector<double> out((size_t)e * h);
  for (int r = 0; r < e; ++r)
    for (int c = 0; c < h; ++c) {
      double ex = std::exp(pl->value[(size_t)r * h + c] - mx[(size_t)segment[r] * h + c]);
      out[(size_t)r * h + c] = ex;
      denom[(size_t)segment[r] * h + c] += ex;
    }
  for (int r = 0; r < e; ++r)
    for (int c = 0; c < h; ++c) out[(size_t)r * h + c] /= denom[(size_t)segment[r] * h + c];
  auto saved = std::make_shared<std::vector<double>>(out);
  return detail::make_op(
      ls, std::move(out), {pl},
      [pl, saved, segment, n_segments, e, h](Node& self) {
        // dL_r = w_r * (g_r - sum_{s in seg} w_s g_s)
        std::vector<double> wg((size_t)n_segments * h, 0.0);
        for (int r = 0; r < e; ++r)
          for (int c = 0; c < h; ++c)
            wg[(size_t)segment[r] * h + c] +=
                (*saved)[(size_t)r * h + c] * self.grad[(size_t)r * h + c];
        for (int r = 0; r < e; ++r)
          for (int c = 0; c < h; ++c) {
            double w = (*saved)[(size_t)r * h + c];
            detail::accumulate(*pl, (size_t)r * h + c,
                               w * (self.grad[(size_t)r * h + c] -
                                    wg[(size_t)segment[r] * h + c]));
          }
      },
      "segment_softmax");
}

// ---- backward ---------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. The tape is consumed: each visited
// node's parent links and backward closure are released, so parameters keep
// their gradients but the graph cannot be replayed.
inline void backward(const Tensor& loss) {
  NodePtr root = loss.node();
  if (!root) throw_error(ErrorKind::DisconnectedTape, "backward: empty tensor");
  if (root->value.size() != 1)
    throw_error(ErrorKind::NotScalar, "backward: loss must be scalar");
  if (root->parents.empty() && !root->is_param)
    throw_error(ErrorKind::DisconnectedTape, "backward: loss is not connected to a tape");

  // iterative DFS topological order over grad-requiring ancestors; topo holds
  // shared ownership so consuming the tape cannot free a node mid-sweep
  std::vector<NodePtr> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<NodePtr, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* node = top.first.get();
    if (top.second < node->parents.size()) {
      NodePtr p = node->parents[top.second++];
      if (p->requires_grad && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      topo.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* node = it->get();
    if (!node->grad.empty() && node->backward_fn) node->backward_fn(*node);
    node->backward_fn = nullptr;
    node->parents.clear();
  }
}

// ---- parameter utilities ------------------------------------------------------

inline Tensor uniform_param(std::vector<int> shape, Rng& rng) {
  // fan-in scaled uniform init; fan-in = last dim for 2D weight [in, out]
  size_t n = detail::numel_of(shape);
  double fan_in = (double)(shape.size() == 2 ? shape[0] : (int)n);
  double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor::param(std::move(shape), std::move(data));
}

inline Tensor zero_param(std::vector<int> shape) {
  size_t n = detail::numel_of(shape);
  return Tensor::param(std::move(shape), std::vector<double>(n, 0.0));
}

inline void zero_grads(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

// Central-difference gradient verification. `f` must rebuild the graph from
// the live parameter leaves on every call and be deterministic (freeze any
// sampling noise). Returns the worst relative error across all coordinates.
inline double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double h = 1e-5) {
  zero_grads(params);
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    if (p.grad().empty())
      analytic.push_back(std::vector<double>(p.numel(), 0.0));
    else
      analytic.push_back(p.grad());
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = const_cast<Tensor&>(params[pi]).mutable_value();
    for (size_t j = 0; j < vals.size(); ++j) {
      double keep = vals[j];
      vals[j] = keep + h;
      double lp = f().item();
      vals[j] = keep - h;
      double lm = f().item();
      vals[j] = keep;
      double fd = (lp - lm) / (2.0 * h);
      double g = analytic[pi][j];
      double rel = std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), 1e-2});
      worst = std::max(worst, rel);
    }
  }
  zero_grads(params);
  return worst;
}

}  // namespace camnet::ad
