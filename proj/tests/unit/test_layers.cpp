#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "pathforge/layers.hpp"

using namespace pathforge;
using namespace pathforge::ad;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  Matrix value = Matrix::from_rows({{1.0, -2.0, 0.5}});
  const Matrix grad = Matrix::from_rows({{3.0, -0.01, 1e4}});
  AdamMoments st;
  adam_step(value, grad, st, 1, {.lr = 0.1, .eps = 0.0});
  EXPECT_DOUBLE_EQ(value(0, 0), 0.9);
  EXPECT_DOUBLE_EQ(value(0, 1), -1.9);
  EXPECT_DOUBLE_EQ(value(0, 2), 0.4);
}

TEST(Adam, MatchesHandRolledScalarRecurrence) {
  Matrix value = Matrix::scalar(2.0);
  AdamMoments st;
  const AdamConfig cfg{.lr = 0.01, .beta1 = 0.8, .beta2 = 0.9, .eps = 1e-8};
  double x = 2.0, m = 0.0, v = 0.0;
  for (long t = 1; t <= 25; ++t) {
    const double g = 2.0 * x - 1.0;
    adam_step(value, Matrix::scalar(2.0 * value.item() - 1.0), st, t, cfg);
    m = 0.8 * m + 0.2 * g;
    v = 0.9 * v + 0.1 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.9, t))) + 1e-8);
    EXPECT_NEAR(value.item(), x, 1e-14);
  }
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  Parameter p("x", Matrix::from_rows({{5.0, -3.0, 0.0, 10.0}}));
  const Matrix centre = Matrix::from_rows({{1.0, 2.0, -1.0, 0.5}});
  Adam opt({&p}, {.lr = 0.05});
  for (int i = 0; i < 3000; ++i) {
    opt.zero_grad();
    Tape tape;
    Var d = sub(tape.parameter(p), tape.constant(centre));
    tape.backward(sum(hadamard(d, d)));
    opt.step();
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.value[i], centre[i], 1e-3);
}

TEST(Init, GlorotBoundsAndSpread) {
  Rng rng(1);
  const auto w = glorot_uniform(30, 20, rng);
  const double a = std::sqrt(6.0 / 50.0);
  double sq = 0.0;
  for (double v : w.data()) {
    EXPECT_LE(std::abs(v), a);
    sq += v * v;
  }
  EXPECT_NEAR(sq / static_cast<double>(w.size()), a * a / 3.0, 0.2 * a * a / 3.0);
}

TEST(Linear, ComputesAffineMap) {
  Rng rng(2);
  Linear lin("l", 2, 3, rng);
  ParameterList ps;
  lin.collect(ps);
  ASSERT_EQ(ps.size(), 2u);
  ps[0]->value = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  ps[1]->value = Matrix::from_rows({{0.5, 0, -1}});
  Tape tape;
  const auto y = lin(tape, tape.constant(Matrix::from_rows({{1, 1}, {2, 0}}))).value();
  EXPECT_EQ(y, Matrix::from_rows({{5.5, 7, 8}, {2.5, 4, 5}}));
}

TEST(Checkpoint, RoundTripIsExact) {
  fixtures::TempDir dir;
  Rng rng(3);
  std::vector<NamedTensor> ts{{"a", glorot_uniform(3, 4, rng)}, {"b.c", Matrix::from_rows({{1e-300, -0.0, 1e300}})}};
  save_tensors(dir.path / "x.bin", ts);
  const auto back = load_tensors(dir.path / "x.bin");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].name, ts[i].name);
    EXPECT_EQ(back[i].value, ts[i].value);
  }
}

TEST(Checkpoint, DetectsCorruption) {
  fixtures::TempDir dir;
  Rng rng(4);
  save_tensors(dir.path / "x.bin", {{"w", glorot_uniform(5, 5, rng)}});
  const auto good = read_bytes(dir.path / "x.bin");

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  write_bytes(dir.path / "flip.bin", flipped);
  EXPECT_THROW(load_tensors(dir.path / "flip.bin"), CheckpointError);

  write_bytes(dir.path / "short.bin", good.substr(0, good.size() - 9));
  EXPECT_THROW(load_tensors(dir.path / "short.bin"), CheckpointError);

  write_bytes(dir.path / "head.bin", good.substr(0, 6));
  EXPECT_THROW(load_tensors(dir.path / "head.bin"), CheckpointError);

  write_bytes(dir.path / "junk.bin", "this is not a checkpoint at all, not even close");
  EXPECT_THROW(load_tensors(dir.path / "junk.bin"), CheckpointError);

  EXPECT_THROW(load_tensors(dir.path / "missing.bin"), CheckpointError);
}

TEST(Checkpoint, RejectsOtherVersions) {
  fixtures::TempDir dir;
  save_tensors(dir.path / "x.bin", {{"w", Matrix::scalar(1.0)}});
  auto bytes = read_bytes(dir.path / "x.bin");
  bytes[8] = static_cast<char>(kCheckpointVersion + 1);  // version follows the 8-byte magic
  write_bytes(dir.path / "v.bin", bytes);
  try {
    load_tensors(dir.path / "v.bin");
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, AssignChecksNamesAndShapes) {
  Parameter a("a", Matrix(2, 2)), b("b", Matrix(1, 3));
  const std::vector<NamedTensor> ok{{"a", Matrix::from_rows({{1, 2}, {3, 4}})}, {"b", Matrix::from_rows({{5, 6, 7}})}};
  assign_parameters(ok, {&a, &b});
  EXPECT_EQ(a.value(1, 0), 3.0);
  EXPECT_EQ(b.value(0, 2), 7.0);
  EXPECT_THROW(assign_parameters({{"a", Matrix(2, 2)}}, {&a, &b}), CheckpointError);
  EXPECT_THROW(assign_parameters({{"a", Matrix(2, 3)}, {"b", Matrix(1, 3)}}, {&a, &b}), CheckpointError);
  const auto snap = snapshot({&a, &b});
  EXPECT_EQ(snap[0].name, "a");
  EXPECT_EQ(snap[1].value, b.value);
}
