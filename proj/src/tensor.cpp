#include "pathforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include <Eigen/Core>

#include "pathforge/common.hpp"

namespace pathforge::ad {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match shape " +
                     std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Matrix::from_rows");
    std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
    ++i;
  }
  return m;
}

double Matrix::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(*this));
  return data_[0];
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (!same_shape(o)) throw ShapeError("+= shape mismatch " + shape_str(*this) + " vs " + shape_str(o));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

std::string shape_str(const Matrix& m) { return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")"; }

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> view(const Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
Eigen::Map<RowMajor> view(Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

}  // namespace

void gemm_acc(const Matrix& a, const Matrix& b, Matrix& c) { view(c).noalias() += view(a) * view(b); }
void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) { view(c).noalias() += view(a) * view(b).transpose(); }
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) { view(c).noalias() += view(a).transpose() * view(b); }

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const { return tape_->value(index_); }

Matrix Var::grad() const {
  if (tape_->has_grad(index_)) return tape_->grad(index_);
  return Matrix::zeros_like(value());
}

bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix m) { return push(Node{std::move(m), {}, false, false, nullptr, {}}); }

Var Tape::variable(Matrix m) { return push(Node{std::move(m), {}, true, false, nullptr, {}}); }

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = push(Node{p.value, {}, true, false, &p, {}});
  param_nodes_.emplace(&p, v.index());
  return v;
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool rg = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw UsageError("operands recorded on different tapes");
    rg = rg || nodes_[p.index_].requires_grad;
  }
  return push(Node{std::move(value), {}, rg, false, nullptr, rg ? std::move(backward) : BackwardFn{}});
}

Matrix& Tape::grad(std::size_t i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    if (n.grad.same_shape(n.value))
      n.grad.fill(0.0);
    else
      n.grad = Matrix::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw UsageError("backward on a variable from another tape");
  if (loss.value().size() != 1) throw UsageError("backward requires a scalar loss, got " + shape_str(loss.value()));
  for (auto& n : nodes_) n.has_grad = false;
  if (!nodes_[loss.index_].requires_grad) return;
  grad(loss.index_)[0] = 1.0;
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
  for (auto& n : nodes_)
    if (n.param && n.has_grad) n.param->grad += n.grad;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
}

// Elementwise unary op with derivative expressed via input x and output y.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ai = a.index();
  return a.tape().record(std::move(y), {a}, [ai, dfdx](Tape& t, std::size_t self) {
    if (!t.requires_grad(ai)) return;
    const Matrix& x = t.value(ai);
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ai);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul: shape mismatch " + shape_str(A) + " x " + shape_str(B));
  Matrix c(A.rows(), B.cols());
  gemm_acc(A, B, c);
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(c), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) gemm_nt_acc(g, t.value(bi), t.grad(ai));
    if (t.requires_grad(bi)) gemm_tn_acc(t.value(ai), g, t.grad(bi));
  });
}

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Matrix c = a.value();
  c += b.value();
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(c), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) t.grad(bi) += g;
  });
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  Matrix c = a.value();
  const Matrix& B = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= B[i];
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(c), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) {
      Matrix& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  const Matrix& A = a.value();
  const Matrix& b = bias.value();
  if (b.rows() != 1 || b.cols() != A.cols())
    throw ShapeError("add_bias: bias " + shape_str(b) + " does not broadcast over " + shape_str(A));
  Matrix c = A;
  for (std::size_t r = 0; r < c.rows(); ++r) {
    auto row = c.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  const std::size_t ai = a.index(), bi = bias.index();
  return a.tape().record(std::move(c), {a, bias}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) {
      Matrix& gb = t.grad(bi);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
      }
    }
  });
}

Var hadamard(Var a, Var b) {
  require_same(a, b, "hadamard");
  Matrix c = a.value();
  const Matrix& B = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= B[i];
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(c), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ai)) {
      const Matrix& B = t.value(bi);
      Matrix& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.requires_grad(bi)) {
      const Matrix& A = t.value(ai);
      Matrix& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var elu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  require_same(a, b, "minimum");
  Matrix c = a.value();
  const Matrix& B = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::min(c[i], B[i]);
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(c), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& A = t.value(ai);
    const Matrix& B = t.value(bi);
    // Ties route the gradient to the first operand.
    if (t.requires_grad(ai)) {
      Matrix& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (A[i] <= B[i]) ga[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Matrix& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (B[i] < A[i]) gb[i] += g[i];
    }
  });
}

namespace {

// Iterates the 1-D slices of `m` along `axis`: calls f(offset, stride, length).
template <class F>
void for_each_slice(const Matrix& m, int axis, F f) {
  if (axis == 0) {
    for (std::size_t c = 0; c < m.cols(); ++c) f(c, m.cols(), m.rows());
  } else if (axis == 1) {
    for (std::size_t r = 0; r < m.rows(); ++r) f(r * m.cols(), std::size_t{1}, m.cols());
  } else {
    throw ShapeError("softmax axis must be 0 or 1");
  }
}

}  // namespace

Var softmax(Var a, int axis) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for_each_slice(x, axis, [&](std::size_t off, std::size_t stride, std::size_t n) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (y[off + i * stride] = std::exp(x[off + i * stride] - mx));
    for (std::size_t i = 0; i < n; ++i) y[off + i * stride] /= z;
  });
  const std::size_t ai = a.index();
  return a.tape().record(std::move(y), {a}, [ai, axis](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ai);
    for_each_slice(y, axis, [&](std::size_t off, std::size_t stride, std::size_t n) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[off + i * stride] * y[off + i * stride];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = off + i * stride;
        ga[k] += y[k] * (g[k] - dot);
      }
    });
  });
}

Var log_softmax(Var a, int axis) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for_each_slice(x, axis, [&](std::size_t off, std::size_t stride, std::size_t n) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[off + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(x[off + i * stride] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) y[off + i * stride] = x[off + i * stride] - lse;
  });
  const std::size_t ai = a.index();
  return a.tape().record(std::move(y), {a}, [ai, axis](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ai);
    for_each_slice(y, axis, [&](std::size_t off, std::size_t stride, std::size_t n) {
      double gsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) gsum += g[off + i * stride];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = off + i * stride;
        ga[k] += g[k] - std::exp(y[k]) * gsum;
      }
    });
  });
}

Var sum(Var a) {
  const Matrix& x = a.value();
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  const std::size_t ai = a.index();
  return a.tape().record(Matrix::scalar(s), {a}, [ai](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Matrix& ga = t.grad(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var pick(Var a, std::size_t r, std::size_t c) {
  const Matrix& x = a.value();
  if (r >= x.rows() || c >= x.cols())
    throw ShapeError("pick: index (" + std::to_string(r) + "," + std::to_string(c) + ") outside " + shape_str(x));
  const std::size_t ai = a.index();
  return a.tape().record(Matrix::scalar(x(r, c)), {a}, [ai, r, c](Tape& t, std::size_t self) {
    t.grad(ai)(r, c) += t.grad(self)[0];
  });
}

Var pick_cols(Var a, const std::vector<std::size_t>& idx) {
  const Matrix& x = a.value();
  if (idx.size() != x.rows())
    throw ShapeError("pick_cols: " + std::to_string(idx.size()) + " indices for " + shape_str(x));
  Matrix y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (idx[r] >= x.cols()) throw ShapeError("pick_cols: column index out of range for " + shape_str(x));
    y[r] = x(r, idx[r]);
  }
  const std::size_t ai = a.index();
  return a.tape().record(std::move(y), {a}, [ai, idx](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ai);
    for (std::size_t r = 0; r < idx.size(); ++r) ga(r, idx[r]) += g[r];
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

// ---------------------------------------------------------------------------
// Attention

Adjacency Adjacency::from_edges(std::size_t n_src, std::size_t n_dst,
                                const std::vector<std::pair<std::size_t, std::size_t>>& src_dst) {
  Adjacency adj;
  adj.n_src = n_src;
  adj.offsets.assign(n_dst + 1, 0);
  for (auto [s, d] : src_dst) {
    if (s >= n_src || d >= n_dst) throw ShapeError("adjacency edge endpoint out of range");
    ++adj.offsets[d + 1];
  }
  for (std::size_t i = 0; i < n_dst; ++i) adj.offsets[i + 1] += adj.offsets[i];
  adj.sources.resize(src_dst.size());
  std::vector<std::size_t> fill(adj.offsets.begin(), adj.offsets.end() - 1);
  // Stable in input order; callers pass edges sorted by source for determinism.
  for (auto [s, d] : src_dst) adj.sources[fill[d]++] = s;
  for (std::size_t i = 0; i < n_dst; ++i)
    std::sort(adj.sources.begin() + static_cast<std::ptrdiff_t>(adj.offsets[i]),
              adj.sources.begin() + static_cast<std::ptrdiff_t>(adj.offsets[i + 1]));
  return adj;
}

Var graph_attention(Var query, Var key, Var value, const Adjacency& adj, std::size_t heads, AttentionKind kind,
                    Var attn, AttentionTrace* trace) {
  const Matrix& Q = query.value();
  const Matrix& K = key.value();
  const Matrix& V = value.value();
  const std::size_t width = Q.cols();
  if (heads == 0 || width % heads != 0)
    throw ShapeError("graph_attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                     " heads");
  if (K.cols() != width || V.cols() != width || K.rows() != V.rows())
    throw ShapeError("graph_attention: key " + shape_str(K) + " / value " + shape_str(V) + " incompatible with query " +
                     shape_str(Q));
  if (Q.rows() != adj.n_dst() || K.rows() != adj.n_src)
    throw ShapeError("graph_attention: adjacency " + std::to_string(adj.n_src) + "->" + std::to_string(adj.n_dst()) +
                     " does not match query " + shape_str(Q) + " / key " + shape_str(K));
  const bool additive = kind == AttentionKind::Additive;
  if (additive && (!attn.valid() || attn.value().rows() != 1 || attn.value().cols() != width))
    throw ShapeError("graph_attention: additive attention needs a 1x" + std::to_string(width) + " vector");

  const std::size_t dh = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t n_edges = adj.sources.size();

  // alpha[e*heads+h]; for additive attention also tanh values per edge.
  auto alpha = std::make_shared<std::vector<double>>(n_edges * heads);
  auto tanh_cache = std::make_shared<std::vector<double>>(additive ? n_edges * width : 0);
  Matrix out(Q.rows(), width);
  const Matrix* A = additive ? &attn.value() : nullptr;

  for (std::size_t i = 0; i < adj.n_dst(); ++i) {
    const std::size_t e0 = adj.offsets[i], e1 = adj.offsets[i + 1];
    if (e0 == e1) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      double mx = -INFINITY;
      for (std::size_t e = e0; e < e1; ++e) {
        const std::size_t j = adj.sources[e];
        double s = 0.0;
        if (additive) {
          for (std::size_t c = c0; c < c0 + dh; ++c) {
            const double tv = std::tanh(Q(i, c) + K(j, c));
            (*tanh_cache)[e * width + c] = tv;
            s += (*A)[c] * tv;
          }
        } else {
          for (std::size_t c = c0; c < c0 + dh; ++c) s += Q(i, c) * K(j, c);
          s *= inv_sqrt;
        }
        (*alpha)[e * heads + h] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t e = e0; e < e1; ++e) z += ((*alpha)[e * heads + h] = std::exp((*alpha)[e * heads + h] - mx));
      for (std::size_t e = e0; e < e1; ++e) {
        const double a = ((*alpha)[e * heads + h] /= z);
        const std::size_t j = adj.sources[e];
        for (std::size_t c = c0; c < c0 + dh; ++c) out(i, c) += a * V(j, c);
      }
    }
  }
  if (trace) {
    trace->heads = heads;
    trace->alpha = *alpha;
  }

  const std::size_t qi = query.index(), ki = key.index(), vi = value.index();
  const std::size_t avi = additive ? attn.index() : qi;
  auto backward = [qi, ki, vi, avi, additive, heads, dh, inv_sqrt, width,
                   adjp = std::make_shared<const Adjacency>(adj), alpha, tanh_cache](Tape& t, std::size_t self) {
    const Adjacency& adj = *adjp;
    const Matrix& Q = t.value(qi);
    const Matrix& K = t.value(ki);
    const Matrix& V = t.value(vi);
    const Matrix& G = t.grad(self);
    const bool gq = t.requires_grad(qi), gk = t.requires_grad(ki), gv = t.requires_grad(vi);
    const bool ga = additive && t.requires_grad(avi);
    Matrix* dQ = gq ? &t.grad(qi) : nullptr;
    Matrix* dK = gk ? &t.grad(ki) : nullptr;
    Matrix* dV = gv ? &t.grad(vi) : nullptr;
    Matrix* dA = ga ? &t.grad(avi) : nullptr;
    const Matrix* Av = additive ? &t.value(avi) : nullptr;
    std::vector<double> dalpha;
    for (std::size_t i = 0; i < adj.n_dst(); ++i) {
      const std::size_t e0 = adj.offsets[i], e1 = adj.offsets[i + 1];
      if (e0 == e1) continue;
      dalpha.resize(e1 - e0);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        double weighted = 0.0;
        for (std::size_t e = e0; e < e1; ++e) {
          const std::size_t j = adj.sources[e];
          const double a = (*alpha)[e * heads + h];
          double da = 0.0;
          for (std::size_t c = c0; c < c0 + dh; ++c) {
            da += G(i, c) * V(j, c);
            if (dV) (*dV)(j, c) += a * G(i, c);
          }
          dalpha[e - e0] = da;
          weighted += a * da;
        }
        for (std::size_t e = e0; e < e1; ++e) {
          const std::size_t j = adj.sources[e];
          const double ds = (*alpha)[e * heads + h] * (dalpha[e - e0] - weighted);
          if (ds == 0.0) continue;
          if (additive) {
            for (std::size_t c = c0; c < c0 + dh; ++c) {
              const double tv = (*tanh_cache)[e * width + c];
              const double du = ds * (*Av)[c] * (1.0 - tv * tv);
              if (dQ) (*dQ)(i, c) += du;
              if (dK) (*dK)(j, c) += du;
              if (dA) (*dA)[c] += ds * tv;
            }
          } else {
            const double s = ds * inv_sqrt;
            for (std::size_t c = c0; c < c0 + dh; ++c) {
              if (dQ) (*dQ)(i, c) += s * K(j, c);
              if (dK) (*dK)(j, c) += s * Q(i, c);
            }
          }
        }
      }
    }
  };
  if (additive) return query.tape().record(std::move(out), {query, key, value, attn}, std::move(backward));
  return query.tape().record(std::move(out), {query, key, value}, std::move(backward));
}

}  // namespace pathforge::ad
