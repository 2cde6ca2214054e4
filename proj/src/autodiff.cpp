// Copyright 2026 The blockseq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "blockseq/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "blockseq/errors.hpp"

namespace blockseq {

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(const std::string& name, Tensor value) {
  if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor grad(value.shape(), 0.0);
  entries_.emplace(name, Entry{std::move(value), std::move(grad)});
}

ParameterStore::Entry& ParameterStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const ParameterStore::Entry& ParameterStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParameterStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParameterStore::value(const std::string& name) const { return entry(name).value; }
Tensor& ParameterStore::grad(const std::string& name) { return entry(name).grad; }
const Tensor& ParameterStore::grad(const std::string& name) const { return entry(name).grad; }

void ParameterStore::zero_grad() {
  for (auto& [_, e] : entries_) e.grad.fill(0.0);
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

double ParameterStore::max_abs_grad() const {
  double m = 0.0;
  for (const auto& [_, e] : entries_) {
    for (double g : e.grad.values()) m = std::max(m, std::abs(g));
  }
  return m;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& [name, e] : entries_) {
    auto it = other.entries_.find(name);
    if (it == other.entries_.end()) continue;
    if (!it->second.value.same_shape(e.value)) throw ShapeError("copy_values_from shape mismatch for " + name);
    e.value = it->second.value;
  }
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor(), nullptr, requires_grad && recording_});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::variable(Tensor value) { return push(std::move(value), true); }

Var Tape::parameter(ParameterStore& store, const std::string& name) {
  if (!recording_) return frozen(store, name);
  auto key = std::make_pair(static_cast<const void*>(&store), name);
  if (auto it = bound_.find(key); it != bound_.end()) return Var(this, it->second);
  Var v = push(store.value(name), true);
  bound_.emplace(std::move(key), v.id());
  bindings_.push_back(Binding{v.id(), &store, name});
  return v;
}

Var Tape::frozen(const ParameterStore& store, const std::string& name) {
  auto key = std::make_pair(static_cast<const void*>(&store), name);
  if (auto it = frozen_.find(key); it != frozen_.end()) return Var(this, it->second);
  Var v = push(store.value(name), false);
  frozen_.emplace(std::move(key), v.id());
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.tape() != this) throw Error("op mixes values from different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  Var out = push(std::move(value), needs);
  if (needs && recording_) nodes_[out.id()].backward = std::move(fn);
  return out;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw EmptyTapeError("backward called on an empty tape");
  if (&loss.tape() != this) throw Error("loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_string(loss.value().shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  for (const Binding& b : bindings_) {
    const Tensor& g = nodes_[b.node].grad;
    if (!g.empty()) b.store->grad(b.name) += g;
  }
}

Var Params::operator()(const std::string& name) const {
  return mode_ == Mode::trainable ? tape_->parameter(*store_, name) : tape_->frozen(*store_, name);
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr std::size_t kFewRows = 8;

ConstMap cmap(const Tensor& t) { return ConstMap(t.values().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
MutMap mmap(Tensor& t) { return MutMap(t.values().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

void require_matrix(const Var& v, const char* op) {
  if (v.value().rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(v.value().shape()));
  }
}

enum class Broadcast { same, row, col, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) + " onto " +
                   shape_string(a.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::same: return r * cols + c;
    case Broadcast::row: return c;
    case Broadcast::col: return r;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

// f(x, y) -> z with partials dz/dx(x, y, z), dz/dy(x, y, z).
template <class F, class Dx, class Dy>
Var binary(Var a, Var b, const char* name, F f, Dx dx, Dy dy) {
  require_matrix(a, name);
  require_matrix(b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, name);
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = f(av[r * cols + c], bv[bindex(kind, r, c, cols)]);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
    Tensor* gx = ga ? &t.grad_buffer(ia) : nullptr;
    Tensor* gy = gb ? &t.grad_buffer(ib) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        const std::size_t j = bindex(kind, r, c, cols);
        const double z = f(x[i], y[j]);
        if (gx) (*gx)[i] += g[i] * dx(x[i], y[j], z);
        if (gy) (*gy)[j] += g[i] * dy(x[i], y[j], z);
      }
    }
  });
}

// f(x) -> y with derivative df(x, y).
template <class F, class Df>
Var unary(Var a, const char* name, F f, Df df) {
  require_matrix(a, name);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id(), io = a.tape().size();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(io);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t inner_b = transpose_b ? bv.cols() : bv.rows();
  if (av.cols() != inner_b) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + (transpose_b ? " x T" : " x ") +
                     shape_string(bv.shape()));
  }
  const std::size_t out_cols = transpose_b ? bv.rows() : bv.cols();
  Tensor out = Tensor::matrix(av.rows(), out_cols);
  // Eigen's blocked product packs the right operand on every call, which
  // dominates when the left side has only a few rows; go row by row there.
  const bool few_rows = av.rows() <= kFewRows;
  if (transpose_b) {
    if (few_rows) {
      for (Eigen::Index r = 0; r < Eigen::Index(av.rows()); ++r)
        mmap(out).row(r).noalias() = cmap(av).row(r) * cmap(bv).transpose();
    } else {
      mmap(out).noalias() = cmap(av) * cmap(bv).transpose();
    }
  } else {
    if (few_rows) {
      for (Eigen::Index r = 0; r < Eigen::Index(av.rows()); ++r) mmap(out).row(r).noalias() = cmap(av).row(r) * cmap(bv);
    } else {
      mmap(out).noalias() = cmap(av) * cmap(bv);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (t.requires_grad(ia)) {
      auto gx = mmap(t.grad_buffer(ia));
      const Eigen::Index rows = gx.rows();
      if (transpose_b) {
        if (rows <= Eigen::Index(kFewRows)) {
          for (Eigen::Index r = 0; r < rows; ++r) gx.row(r).noalias() += cmap(g).row(r) * cmap(y);
        } else {
          gx.noalias() += cmap(g) * cmap(y);
        }
      } else {
        if (rows <= Eigen::Index(kFewRows)) {
          for (Eigen::Index r = 0; r < rows; ++r) gx.row(r).noalias() += cmap(g).row(r) * cmap(y).transpose();
        } else {
          gx.noalias() += cmap(g) * cmap(y).transpose();
        }
      }
    }
    if (t.requires_grad(ib)) {
      auto gy = mmap(t.grad_buffer(ib));
      if (transpose_b) {
        gy.noalias() += cmap(g).transpose() * cmap(x);
      } else {
        gy.noalias() += cmap(x).transpose() * cmap(g);
      }
    }
  });
}

Var transpose(Var a) {
  require_matrix(a, "transpose");
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.cols(), av.rows());
  mmap(out) = cmap(av).transpose();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    mmap(t.grad_buffer(ia)) += cmap(g).transpose();
  });
}

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var minimum(Var a, Var b) {
  // Ties route the gradient to the first argument.
  return binary(
      a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Var scale(Var a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(a, "softplus", stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, "gelu", [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, "clamp", [=](double x) { return std::clamp(x, lo, hi); },
      [=](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  require_matrix(a, "sum");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    const double gv = g[0];
    for (double& v : gx.values()) v += gv;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  require_matrix(a, "row_sum");
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out = Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c];
    out[r] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
    }
  });
}

Var col_sum(Var a) {
  require_matrix(a, "col_sum");
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out = Tensor::matrix(1, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += av[r * cols + c];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c];
    }
  });
}

Var softmax_rows(Var a) {
  require_matrix(a, "softmax_rows");
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * cols];
    double* y = &out[r * cols];
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  const std::size_t ia = a.id(), io = a.tape().size();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        gx[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_matrix(x, "layer_norm");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw ShapeError("layer_norm: affine parameters must have length " + std::to_string(cols));
  }
  if (eps < 0) throw ConfigError("layer_norm: eps must be non-negative");
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * cols];
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    // A zero-variance row with eps = 0 normalises to zeros.
    inv_std[r] = (var + eps) > 0 ? 1.0 / std::sqrt(var + eps) : 0.0;
    for (std::size_t c = 0; c < cols; ++c) xhat[r * cols + c] = (xr[c] - mu) * inv_std[r];
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = gv[c] * xhat[r * cols + c] + bv[c];
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
                           const Tensor& gam = t.value(ig);
                           if (t.requires_grad(ig)) {
                             Tensor& gg = t.grad_buffer(ig);
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat[r * cols + c];
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& gb = t.grad_buffer(ib);
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                           }
                           if (t.requires_grad(ix)) {
                             Tensor& gx = t.grad_buffer(ix);
                             const double n = static_cast<double>(cols);
                             for (std::size_t r = 0; r < rows; ++r) {
                               double s1 = 0.0, s2 = 0.0;
                               for (std::size_t c = 0; c < cols; ++c) {
                                 const double d = g[r * cols + c] * gam[c];
                                 s1 += d;
                                 s2 += d * xhat[r * cols + c];
                               }
                               for (std::size_t c = 0; c < cols; ++c) {
                                 const std::size_t i = r * cols + c;
                                 const double d = g[i] * gam[c];
                                 gx[i] += inv_std[r] / n * (n * d - s1 - xhat[i] * s2);
                               }
                             }
                           }
                         });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::vector<std::size_t> offsets, widths, ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(&v[r * w], w, &out[r * cols + off]);
    }
    offsets.push_back(off);
    widths.push_back(w);
    ids.push_back(p.id());
    off += w;
  }
  return parts[0].tape().record(std::move(out), parts, [=](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& gp = t.grad_buffer(ids[k]);
      const std::size_t w = widths[k];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * cols + offsets[k] + c];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::vector<std::size_t> offsets, ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    offsets.push_back(off);
    ids.push_back(p.id());
    off += v.size();
  }
  return parts[0].tape().record(std::move(out), parts, [=](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& gp = t.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_rows");
  const Tensor& av = a.value();
  if (begin + count > av.rows()) throw BoundsError("slice_rows out of range");
  const std::size_t cols = av.cols();
  Tensor out(Shape{count, cols},
             std::vector<double>(av.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                                 av.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols)));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  const Tensor& av = a.value();
  if (begin + count > av.cols()) throw BoundsError("slice_cols out of range");
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out = Tensor::matrix(rows, count);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(&av[r * cols + begin], count, &out[r * count]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) gx[r * cols + begin + c] += g[r * count + c];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows_idx) {
  require_matrix(a, "gather_rows");
  const Tensor& av = a.value();
  const std::size_t cols = av.cols();
  std::vector<std::size_t> idx(rows_idx.begin(), rows_idx.end());
  Tensor out = Tensor::matrix(idx.size(), cols);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= av.rows()) throw BoundsError("gather_rows index out of range");
    std::copy_n(&av[idx[k] * cols], cols, &out[k * cols]);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t c = 0; c < cols; ++c) gx[idx[k] * cols + c] += g[k * cols + c];
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  require_matrix(a, "reshape");
  if (rows * cols != a.value().size()) throw ShapeError("reshape changes element count");
  const std::size_t ia = a.id();
  return a.tape().record(a.value().reshaped({rows, cols}), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var repeat_rows(Var a, std::size_t count) {
  require_matrix(a, "repeat_rows");
  if (a.rows() != 1) throw ShapeError("repeat_rows expects a single row");
  const std::size_t cols = a.cols();
  Tensor out = Tensor::matrix(count, cols);
  for (std::size_t r = 0; r < count; ++r) std::copy_n(a.value().values().data(), cols, &out[r * cols]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[c] += g[r * cols + c];
  });
}

Var dropout_with_mask(Var a, const Tensor& mask) {
  require_matrix(a, "dropout");
  if (!mask.same_shape(a.value())) throw ShapeError("dropout mask shape mismatch");
  return mul(a, a.tape().constant(mask));
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var gaussian_log_density(Var x, Var mu, Var sigma) {
  require_matrix(x, "gaussian_log_density");
  const Tensor& xv = x.value();
  const Tensor& mv = mu.value();
  const Tensor& sv = sigma.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  auto kind_of = [&](const Tensor& p) {
    if (p.cols() != cols || (p.rows() != 1 && p.rows() != rows)) {
      throw ShapeError("gaussian_log_density: parameter shape " + shape_string(p.shape()) + " vs sample shape " +
                       shape_string(xv.shape()));
    }
    return p.rows() == rows ? Broadcast::same : Broadcast::row;
  };
  const Broadcast km = kind_of(mv), ks = kind_of(sv);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out = Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double sg = sv[bindex(ks, r, c, cols)];
      const double z = (xv[r * cols + c] - mv[bindex(km, r, c, cols)]) / sg;
      s += -0.5 * z * z - std::log(sg) - half_log_2pi;
    }
    out[r] = s;
  }
  const std::size_t ix = x.id(), im = mu.id(), is = sigma.id();
  return x.tape().record(std::move(out), {x, mu, sigma}, [=](Tape& t, const Tensor& g) {
    const Tensor& xx = t.value(ix);
    const Tensor& mm = t.value(im);
    const Tensor& ss = t.value(is);
    Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
    Tensor* gm = t.requires_grad(im) ? &t.grad_buffer(im) : nullptr;
    Tensor* gs = t.requires_grad(is) ? &t.grad_buffer(is) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t jm = bindex(km, r, c, cols), js = bindex(ks, r, c, cols);
        const double sg = ss[js];
        const double diff = xx[r * cols + c] - mm[jm];
        const double inv_var = 1.0 / (sg * sg);
        if (gx) (*gx)[r * cols + c] += -g[r] * diff * inv_var;
        if (gm) (*gm)[jm] += g[r] * diff * inv_var;
        if (gs) (*gs)[js] += g[r] * (diff * diff * inv_var / sg - 1.0 / sg);
      }
    }
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Finite differences

FiniteDifferenceReport finite_difference_check(const std::function<Var(Tape&)>& loss_fn, ParameterStore& store,
                                               double step, FiniteDifferenceOptions options) {
  if (!(step > 0.0 && step <= 1e-2)) throw ConfigError("finite-difference step must lie in (0, 1e-2]");
  auto evaluate = [&]() {
    Tape t(false);
    Var l = loss_fn(t);
    if (l.value().size() != 1) throw ShapeError("finite_difference_check: loss is not scalar");
    return l.value().item();
  };
  const double first = evaluate();
  const double second = evaluate();
  if (first != second) {
    throw DeterminismError("loss function is not deterministic: two identical evaluations differ");
  }

  store.zero_grad();
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
    for (auto& [name, e] : store) analytic.emplace(name, e.grad);
  }
  store.zero_grad();

  FiniteDifferenceReport report;
  for (auto& [name, e] : store) {
    Tensor& value = e.value;
    const Tensor& g = analytic.at(name);
    const std::size_t n = value.size();
    std::size_t stride = 1;
    if (options.max_entries_per_parameter > 0 && n > options.max_entries_per_parameter) {
      stride = (n + options.max_entries_per_parameter - 1) / options.max_entries_per_parameter;
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = value[i];
      value[i] = orig + step;
      const double fp = evaluate();
      value[i] = orig - step;
      const double fm = evaluate();
      value[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(g[i]), std::abs(fd), options.relative_floor});
      worst = std::max(worst, std::abs(g[i] - fd) / denom);
      ++report.entries_checked;
    }
    report.max_relative_error[name] = worst;
    if (worst >= report.worst) {
      report.worst = worst;
      report.worst_parameter = name;
    }
  }
  return report;
}

}  // namespace blockseq
