#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pathforge/common.hpp"
#include "pathforge/tensor.hpp"

namespace pathforge::ad {

/// Uniform Glorot initialisation, U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

using ParameterList = std::vector<Parameter*>;

/// y = x W + b with W stored (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Var operator()(Tape& tape, Var x);
  void collect(ParameterList& out);

  std::size_t in_features() const { return weight_.value.rows(); }
  std::size_t out_features() const { return weight_.value.cols(); }
  Parameter& weight() { return weight_; }

 private:
  Parameter weight_;
  Parameter bias_;
  bool has_bias_ = true;
};

enum class Activation { Elu, Tanh };

/// Two-layer perceptron: Linear -> activation -> Linear.
class Mlp2 {
 public:
  Mlp2() = default;
  Mlp2(std::string name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
       Activation act = Activation::Elu);

  Var operator()(Tape& tape, Var x);
  void collect(ParameterList& out);

 private:
  Linear first_;
  Linear second_;
  Activation act_ = Activation::Elu;
};

Var activate(Var x, Activation act);

/// Graph transformer convolution over a bipartite edge direction:
///   h_i' = W1 h_i + sum_{j in N(i)} alpha_ij W2 h_j
/// with multi-head attention scores from W3 h_i and W4 h_j.
class TransformerConv {
 public:
  TransformerConv() = default;
  TransformerConv(std::string name, std::size_t width, std::size_t heads, Rng& rng,
                  AttentionKind kind = AttentionKind::DotProduct);

  /// Precomputed W1 h_dst and W3 h_dst, for destinations shared across calls.
  struct DestinationTerms {
    Var skip;
    Var query;
  };
  DestinationTerms destination_terms(Tape& tape, Var h_dst);

  Var operator()(Tape& tape, Var h_src, Var h_dst, const Adjacency& adj, AttentionTrace* trace = nullptr);
  Var operator()(Tape& tape, Var h_src, const DestinationTerms& dst, const Adjacency& adj,
                 AttentionTrace* trace = nullptr);

  void collect(ParameterList& out);
  std::size_t heads() const { return heads_; }

 private:
  Parameter w_skip_;   // W1
  Parameter w_value_;  // W2
  Parameter w_query_;  // W3
  Parameter w_key_;    // W4
  Parameter attn_;     // additive scoring vector
  std::size_t heads_ = 1;
  AttentionKind kind_ = AttentionKind::DotProduct;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment state of one parameter.
struct AdamMoments {
  Matrix m;
  Matrix v;
};

/// One Adam update of `value` given `grad`; `step` is the 1-based step count.
void adam_step(Matrix& value, const Matrix& grad, AdamMoments& state, long step, const AdamConfig& cfg);

class Adam {
 public:
  Adam(ParameterList params, AdamConfig cfg);

  void step();
  void zero_grad();
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParameterList params_;
  std::vector<AdamMoments> state_;
  AdamConfig cfg_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: "PFCKPT\0\0", u32 version, u32 count, then per tensor
// u32 name length, name bytes, u32 rank, u64 dims..., float64 LE payload;
// finally a u64 FNV-1a checksum of everything before it.

class CheckpointError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Copies values by name into `params`; every parameter must be present with
/// a matching shape.
void assign_parameters(const std::vector<NamedTensor>& tensors, const ParameterList& params);
std::vector<NamedTensor> snapshot(const ParameterList& params);

}  // namespace pathforge::ad
