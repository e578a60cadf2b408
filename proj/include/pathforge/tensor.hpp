#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace pathforge::ad {

class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. Vectors are 1xN or Nx1, scalars 1x1.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix scalar(double v) { return Matrix(1, 1, v); }
  static Matrix zeros_like(const Matrix& m) { return Matrix(m.rows_, m.cols_); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double item() const;
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  Matrix& operator+=(const Matrix& o);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_str(const Matrix& m);

// Raw kernels, accumulating into `c`.
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& c);     // c += a b
void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& c);  // c += a b^T
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);  // c += a^T b

/// Named trainable tensor. `grad` accumulates across backward passes until
/// zero_grad() is called.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::zeros_like(value)) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient w.r.t. this node after Tape::backward; zeros when none flowed.
  Matrix grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Records primitive operations in creation order, which is a topological
/// order; backward() walks it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  Var variable(Matrix m);
  /// Leaf bound to a parameter; one node per parameter per tape.
  Var parameter(Parameter& p);

  /// Appends an op node. The node requires grad iff any parent does; the
  /// backward function is dropped otherwise.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);

  /// Reverse sweep from a 1x1 loss. Node gradients are reset first, so calling
  /// backward twice adds the loss gradient to the bound parameters twice.
  void backward(Var loss);

  const Matrix& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  bool has_grad(std::size_t i) const { return nodes_[i].has_grad; }
  /// Gradient buffer of node i, allocated on first use.
  Matrix& grad(std::size_t i);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Shape mismatches throw ShapeError naming both shapes.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_bias(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var elu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);
Var softmax(Var a, int axis);
Var log_softmax(Var a, int axis);
Var sum(Var a);
Var mean(Var a);
Var pick(Var a, std::size_t r, std::size_t c);
/// Selects column idx[r] of every row r; result is rows x 1.
Var pick_cols(Var a, const std::vector<std::size_t>& idx);
Var detach(Var a);

enum class AttentionKind { DotProduct, Additive };

/// Incoming neighbours of every destination node.
struct Adjacency {
  std::size_t n_src = 0;
  std::vector<std::size_t> offsets;  // n_dst + 1
  std::vector<std::size_t> sources;

  std::size_t n_dst() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  static Adjacency from_edges(std::size_t n_src, std::size_t n_dst,
                              const std::vector<std::pair<std::size_t, std::size_t>>& src_dst);
};

/// Per-edge, per-head attention weights from the last forward (for tests).
struct AttentionTrace {
  std::size_t heads = 0;
  std::vector<double> alpha;  // edge-major: alpha[e * heads + h]
};

/// Multi-head neighbourhood attention. For destination i and head h:
///   out_i^h = sum_{j in N(i)} alpha_ij^h v_j^h,
/// with alpha^h a softmax over N(i) of q_i^h.k_j^h / sqrt(d_h) (dot product)
/// or attn_h . tanh(q_i^h + k_j^h) (additive, `attn` is 1 x width).
/// Destinations without neighbours get zeros.
Var graph_attention(Var query, Var key, Var value, const Adjacency& adj, std::size_t heads,
                    AttentionKind kind = AttentionKind::DotProduct, Var attn = {}, AttentionTrace* trace = nullptr);

}  // namespace pathforge::ad
