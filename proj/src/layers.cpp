#include "pathforge/layers.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace pathforge::ad {

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Matrix m(fan_in, fan_out);
  for (auto& x : m.data()) x = u(rng);
  return m;
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight_(name + ".weight", glorot_uniform(in, out, rng)),
      bias_(name + ".bias", Matrix(1, out)),
      has_bias_(bias) {}

Var Linear::operator()(Tape& tape, Var x) {
  Var y = matmul(x, tape.parameter(weight_));
  return has_bias_ ? add_bias(y, tape.parameter(bias_)) : y;
}

void Linear::collect(ParameterList& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

Var activate(Var x, Activation act) { return act == Activation::Elu ? elu(x) : tanh(x); }

Mlp2::Mlp2(std::string name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, Activation act)
    : first_(name + ".0", in, hidden, rng), second_(name + ".1", hidden, out, rng), act_(act) {}

Var Mlp2::operator()(Tape& tape, Var x) { return second_(tape, activate(first_(tape, x), act_)); }

void Mlp2::collect(ParameterList& out) {
  first_.collect(out);
  second_.collect(out);
}

TransformerConv::TransformerConv(std::string name, std::size_t width, std::size_t heads, Rng& rng,
                                 AttentionKind kind)
    : w_skip_(name + ".w_skip", glorot_uniform(width, width, rng)),
      w_value_(name + ".w_value", glorot_uniform(width, width, rng)),
      w_query_(name + ".w_query", glorot_uniform(width, width, rng)),
      w_key_(name + ".w_key", glorot_uniform(width, width, rng)),
      heads_(heads),
      kind_(kind) {
  if (heads == 0 || width % heads != 0)
    throw ShapeError("TransformerConv: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  if (kind == AttentionKind::Additive) attn_ = Parameter(name + ".attn", glorot_uniform(1, width, rng));
}

TransformerConv::DestinationTerms TransformerConv::destination_terms(Tape& tape, Var h_dst) {
  return {matmul(h_dst, tape.parameter(w_skip_)), matmul(h_dst, tape.parameter(w_query_))};
}

Var TransformerConv::operator()(Tape& tape, Var h_src, Var h_dst, const Adjacency& adj, AttentionTrace* trace) {
  return (*this)(tape, h_src, destination_terms(tape, h_dst), adj, trace);
}

Var TransformerConv::operator()(Tape& tape, Var h_src, const DestinationTerms& dst, const Adjacency& adj,
                                AttentionTrace* trace) {
  Var key = matmul(h_src, tape.parameter(w_key_));
  Var value = matmul(h_src, tape.parameter(w_value_));
  Var attn = kind_ == AttentionKind::Additive ? tape.parameter(attn_) : Var{};
  return add(dst.skip, graph_attention(dst.query, key, value, adj, heads_, kind_, attn, trace));
}

void TransformerConv::collect(ParameterList& out) {
  out.push_back(&w_skip_);
  out.push_back(&w_value_);
  out.push_back(&w_query_);
  out.push_back(&w_key_);
  if (kind_ == AttentionKind::Additive) out.push_back(&attn_);
}

// ---------------------------------------------------------------------------

void adam_step(Matrix& value, const Matrix& grad, AdamMoments& st, long step, const AdamConfig& cfg) {
  if (!st.m.same_shape(value)) {
    st.m = Matrix::zeros_like(value);
    st.v = Matrix::zeros_like(value);
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

Adam::Adam(ParameterList params, AdamConfig cfg) : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {}

void Adam::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i]->value, params_[i]->grad, state_[i], t_, cfg_);
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

template <class T>
void put(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    buf.append(bytes.data(), sizeof(T));
  } else {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
  }
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, const std::string& path) : buf_(buf), end_(end), path_(path) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<T>(bytes);
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > end_) throw CheckpointError(path_ + ": corrupt checkpoint (truncated payload)");
  }
  const std::string& buf_;
  std::size_t end_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::string buf(kMagic, sizeof kMagic);
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    put<std::uint32_t>(buf, 2);
    put<std::uint64_t>(buf, t.value.rows());
    put<std::uint64_t>(buf, t.value.cols());
    for (double x : t.value.data()) put<double>(buf, x);
  }
  put<std::uint64_t>(buf, fnv1a64(buf));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string p = path.string();
  if (buf.size() < sizeof kMagic + 16 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(p + ": not a checkpoint file or truncated header");
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  Reader tail(buf, buf.size(), p);
  (void)tail.bytes(body);
  const auto stored = tail.get<std::uint64_t>();

  Reader r(buf, body, p);
  (void)r.bytes(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(p + ": checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  if (stored != fnv1a64(std::string_view(buf.data(), body)))
    throw CheckpointError(p + ": corrupt checkpoint (checksum mismatch)");
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank != 2) throw CheckpointError(p + ": tensor '" + t.name + "' has unsupported rank " + std::to_string(rank));
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows * cols > (body - r.pos()) / sizeof(double))
      throw CheckpointError(p + ": corrupt checkpoint (tensor '" + t.name + "' exceeds payload)");
    t.value = Matrix(rows, cols);
    for (auto& x : t.value.data()) x = r.get<double>();
    out.push_back(std::move(t));
  }
  if (r.pos() != body) throw CheckpointError(p + ": corrupt checkpoint (trailing bytes)");
  return out;
}

void assign_parameters(const std::vector<NamedTensor>& tensors, const ParameterList& params) {
  std::map<std::string, const Matrix*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + p->name + "'");
    if (!it->second->same_shape(p->value))
      throw CheckpointError("parameter '" + p->name + "' has shape " + shape_str(*it->second) + " in checkpoint, " +
                            shape_str(p->value) + " in model");
    p->value = *it->second;
    p->grad = Matrix::zeros_like(p->value);
  }
}

std::vector<NamedTensor> snapshot(const ParameterList& params) {
  std::vector<NamedTensor> out;
  for (const auto* p : params) out.push_back({p->name, p->value});
  return out;
}

}  // namespace pathforge::ad
