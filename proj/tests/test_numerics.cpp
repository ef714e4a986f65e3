#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "slw/numerics/checkpoint.hpp"
#include "slw/numerics/optim.hpp"

using namespace slw;
using oracle::random_tensor;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor<double> run_conv(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b, std::size_t stride,
                        std::size_t pad) {
  Tape<double> t;
  Var y = conv2d(t, t.constant(x), t.constant(k), t.constant(b), stride, pad);
  return t.value(y);
}

template <class F>
Tensor<double> run_unary(const Tensor<double>& x, F f) {
  Tape<double> t;
  Var y = f(t, t.constant(x));
  return t.value(y);
}

}  // namespace

TEST(Tensor, ExtentsMatchData) {
  Tensor<float> t(Shape{2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
  t.enable_grad();
  EXPECT_EQ(t.grad().size(), t.size());
  EXPECT_THROW(t.reshape(Shape{5, 5}), ShapeError);
}

TEST(Conv2d, ZeroInputGivesBias) {
  Rng rng(1);
  Tensor<double> x(Shape{1, 3, 3});
  auto k = random_tensor(Shape{2, 1, 3, 3}, rng);
  Tensor<double> b(Shape{2}, std::vector<double>{0.5, -1.25});
  const auto y = run_conv(x, k, b, 1, 1);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(y[i], 0.5);
    EXPECT_EQ(y[9 + i], -1.25);
  }
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(2);
  auto x = random_tensor(Shape{1, 4, 5}, rng);
  const auto y = run_conv(x, Tensor<double>(Shape{1, 1, 1, 1}, 1.0), Tensor<double>(Shape{1}), 1, 0);
  EXPECT_EQ(y, x);
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(3);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 0}, {2, 1}}) {
    auto x = random_tensor(Shape{2, 5, 5}, rng);
    auto k = random_tensor(Shape{3, 2, 3, 3}, rng);
    auto b = random_tensor(Shape{3}, rng);
    const auto y = run_conv(x, k, b, stride, pad);
    EXPECT_LT(max_abs_diff(y, oracle::conv2d_naive(x, k, b, stride, pad)), 1e-6) << stride << "," << pad;
  }
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  Rng rng(4);
  auto x = random_tensor(Shape{2, 5, 5}, rng);
  auto k = random_tensor(Shape{3, 4, 3, 3}, rng);
  auto b = random_tensor(Shape{3}, rng);
  try {
    run_conv(x, k, b, 1, 0);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_conv(x, random_tensor(Shape{3, 2, 7, 7}, rng), b, 1, 0), ShapeError);
  EXPECT_THROW(run_conv(x, random_tensor(Shape{3, 2, 3, 3}, rng), b, 0, 0), ShapeError);
}

TEST(MaxPool2, Examples) {
  const auto c = run_unary(Tensor<double>(Shape{2, 4, 6}, 0.75), [](auto& t, Var v) { return maxpool2(t, v); });
  EXPECT_EQ(c, Tensor<double>(Shape{2, 2, 3}, 0.75));
  const auto one = run_unary(Tensor<double>(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4}),
                             [](auto& t, Var v) { return maxpool2(t, v); });
  EXPECT_EQ(one, Tensor<double>(Shape{1, 1, 1}, std::vector<double>{4}));
  Rng rng(5);
  auto x = random_tensor(Shape{3, 8, 8}, rng);
  EXPECT_EQ(run_unary(x, [](auto& t, Var v) { return maxpool2(t, v); }), oracle::maxpool2_naive(x));
  EXPECT_THROW(run_unary(Tensor<double>(Shape{1, 3, 4}), [](auto& t, Var v) { return maxpool2(t, v); }), ShapeError);
  EXPECT_THROW(run_unary(Tensor<double>(Shape{1, 4, 3}), [](auto& t, Var v) { return maxpool2(t, v); }), ShapeError);
}

TEST(MaxPool2, TiesRouteGradientToFirstIndex) {
  Tensor<double> x(Shape{1, 2, 2}, 3.0);
  x.enable_grad();
  Tape<double> t;
  t.backward(sum(t, maxpool2(t, t.parameter(x))));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Dense, Examples) {
  Rng rng(6);
  auto x = random_tensor(Shape{4}, rng);
  Tensor<double> eye(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  Tape<double> t;
  EXPECT_EQ(t.value(dense(t, t.constant(x), t.constant(eye), t.constant(Tensor<double>(Shape{4})))), x);
  auto b = random_tensor(Shape{3}, rng);
  EXPECT_EQ(t.value(dense(t, t.constant(x), t.constant(Tensor<double>(Shape{3, 4})), t.constant(b))), b);
  auto w = random_tensor(Shape{3, 4}, rng);
  EXPECT_LT(max_abs_diff(t.value(dense(t, t.constant(x), t.constant(w), t.constant(b))), oracle::dense_naive(x, w, b)),
            1e-6);
  EXPECT_THROW(dense(t, t.constant(random_tensor(Shape{5}, rng)), t.constant(w), t.constant(b)), ShapeError);
  EXPECT_THROW(dense(t, t.constant(x), t.constant(w), t.constant(random_tensor(Shape{2}, rng))), ShapeError);
}

TEST(Activations, Examples) {
  const auto s = run_unary(Tensor<double>(Shape{4}), [](auto& t, Var v) { return softmax(t, v); });
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto sg = run_unary(Tensor<double>(Shape{1}), [](auto& t, Var v) { return sigmoid(t, v); });
  EXPECT_EQ(sg[0], 0.5);
  const auto lr = run_unary(Tensor<double>(Shape{2}, std::vector<double>{-2.0, 3.0}),
                            [](auto& t, Var v) { return leaky_relu(t, v); });
  EXPECT_DOUBLE_EQ(lr[0], -0.2);
  EXPECT_DOUBLE_EQ(lr[1], 3.0);
}

TEST(Activations, SoftmaxLargeLogitsMatchShiftedOracle) {
  for (auto pair : {std::pair{1000.0, 0.0}, {0.0, 1000.0}, {-1000.0, -999.0}, {710.0, 700.0}}) {
    const auto y = run_unary(Tensor<double>(Shape{2}, std::vector<double>{pair.first, pair.second}),
                             [](auto& t, Var v) { return softmax(t, v); });
    const double m = std::max(pair.first, pair.second);
    const long double e0 = std::exp(static_cast<long double>(pair.first - m));
    const long double e1 = std::exp(static_cast<long double>(pair.second - m));
    EXPECT_TRUE(y.all_finite());
    EXPECT_NEAR(y[0], static_cast<double>(e0 / (e0 + e1)), 1e-15);
    EXPECT_NEAR(y[1], static_cast<double>(e1 / (e0 + e1)), 1e-15);
  }
  const auto f = run_unary(Tensor<float>(Shape{2}, std::vector<float>{1000.f, 0.f}).cast<double>(),
                           [](auto& t, Var v) { return softmax(t, v); });
  EXPECT_NEAR(f[0], 1.0, 1e-12);
}

TEST(Activations, SoftmaxIsADistribution) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(12);
    auto x = random_tensor(Shape{n}, rng, -30.0, 30.0);
    const auto y = run_unary(x, [](auto& t, Var v) { return softmax(t, v); });
    double total = 0.0;
    for (double v : y.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Activations, SoftmaxOverLeadingAxisPerPosition) {
  Rng rng(8);
  auto x = random_tensor(Shape{3, 2, 2}, rng, -5.0, 5.0);
  const auto y = run_unary(x, [](auto& t, Var v) { return softmax(t, v); });
  for (std::size_t p = 0; p < 4; ++p) {
    Tensor<double> col(Shape{3});
    for (std::size_t c = 0; c < 3; ++c) col[c] = x[c * 4 + p];
    const auto ref = run_unary(col, [](auto& t, Var v) { return softmax(t, v); });
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(y[c * 4 + p], ref[c]);
  }
}

TEST(Backward, LinearAndQuadratic) {
  Rng rng(9);
  auto x = random_tensor(Shape{2, 3}, rng);
  x.enable_grad();
  {
    Tape<double> t;
    t.backward(sum(t, t.parameter(x)));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  }
  x.zero_grad();
  {
    Tape<double> t;
    t.backward(scale(t, sum(t, square(t, t.parameter(x))), 0.5));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x[i]);
  }
}

TEST(Backward, TwoUsesAccumulate) {
  Tensor<double> x(Shape{3}, std::vector<double>{1.0, -2.0, 0.5});
  x.enable_grad();
  Tape<double> t;
  Var v = t.parameter(x);
  t.backward(sum(t, add(t, mul(t, v, v), v)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i] + 1.0);
}

TEST(Backward, NonScalarLossIsAnError) {
  Tensor<double> x(Shape{3}, 1.0);
  x.enable_grad();
  Tape<double> t;
  Var v = t.parameter(x);
  EXPECT_THROW(t.backward(square(t, v)), ShapeError);
}

TEST(Backward, UntrackedTensorsUntouched) {
  Tensor<double> a(Shape{2}, 1.0), b(Shape{2}, 2.0);
  a.enable_grad();
  Tape<double> t;
  t.backward(sum(t, mul(t, t.parameter(a), t.parameter(b))));
  EXPECT_FALSE(b.has_grad());
  EXPECT_TRUE(b.grad().empty());
  EXPECT_EQ(a.grad()[0], 2.0);
}

TEST(Backward, RecordIsTopological) {
  Rng rng(10);
  auto x = random_tensor(Shape{1, 4, 4}, rng);
  auto k = random_tensor(Shape{2, 1, 3, 3}, rng);
  auto b = random_tensor(Shape{2}, rng);
  k.enable_grad();
  Tape<double> t;
  Var y = maxpool2(t, leaky_relu(t, conv2d(t, t.constant(x), t.parameter(k), t.constant(b), 1, 1)));
  Var loss = sum(t, sigmoid(t, reshape(t, y, Shape{8})));
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t in : t.node(i).inputs) EXPECT_LT(in, i);
  }
  t.backward(loss);
  EXPECT_EQ(t.value(loss).size(), 1u);
}

TEST(GradientCheck, EveryOp) {
  Rng rng(11);
  for (const auto& c : oracle::op_gradient_cases()) {
    EXPECT_LT(oracle::worst_gradient_error(c, rng, 20), 1e-4) << c.name;
  }
}

TEST(GradientCheck, ComposedNetwork) {
  Rng rng(12);
  for (int instance = 0; instance < 20; ++instance) {
    auto x = random_tensor(Shape{2, 8, 8}, rng);
    auto k1 = random_tensor(Shape{3, 2, 3, 3}, rng, -0.5, 0.5);
    auto b1 = random_tensor(Shape{3}, rng, -0.1, 0.1);
    auto w = random_tensor(Shape{4, 48}, rng, -0.3, 0.3);
    auto b2 = random_tensor(Shape{4}, rng);
    const std::size_t label = rng.index(4);
    const auto r = oracle::check_gradient({&x, &k1, &b1, &w, &b2}, [&](Tape<double>& t, const std::vector<Var>& v) {
      Var h = maxpool2(t, leaky_relu(t, conv2d(t, v[0], v[1], v[2], 1, 1)));
      return cross_entropy(t, dense(t, reshape(t, h, Shape{48}), v[3], v[4]), label);
    });
    EXPECT_LT(r.max_rel, 1e-4) << "instance " << instance;
  }
}

TEST(Sqrt, BackwardClampsNearZero) {
  Tensor<double> x(Shape{2}, std::vector<double>{0.0, 1e-12});
  x.enable_grad();
  Tape<double> t;
  t.backward(sum(t, sqrt(t, t.parameter(x))));
  for (double g : x.grad()) {
    EXPECT_TRUE(std::isfinite(g));
    EXPECT_NEAR(g, 0.5 / std::sqrt(1e-8), 1e-6);
  }
}

TEST(Ops, Deterministic) {
  Rng a(13), b(13);
  for (int i = 0; i < 5; ++i) {
    auto xa = random_tensor(Shape{2, 6, 6}, a), ka = random_tensor(Shape{3, 2, 3, 3}, a), ba = random_tensor(Shape{3}, a);
    auto xb = random_tensor(Shape{2, 6, 6}, b), kb = random_tensor(Shape{3, 2, 3, 3}, b), bb = random_tensor(Shape{3}, b);
    EXPECT_EQ(run_conv(xa, ka, ba, 1, 1), run_conv(xb, kb, bb, 1, 1));
  }
}

TEST(Sgd, Examples) {
  std::vector<double> p{1.0, -2.0}, v{0.0, 0.0};
  const std::vector<double> zero{0.0, 0.0};
  sgd_step<double>(p, zero, v, 0.1, 0.9);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  const std::vector<double> g{0.5, -1.5};
  std::vector<double> v0{0.0, 0.0};
  sgd_step<double>(p, g, v0, 0.1, 0.0);
  EXPECT_EQ(p[0], 1.0 - 0.1 * 0.5);
  EXPECT_EQ(p[1], -2.0 - 0.1 * -1.5);
  std::vector<double> bad{0.0};
  EXPECT_THROW(sgd_step<double>(p, g, v0, -0.1, 0.0), Error);
  EXPECT_THROW(sgd_step<double>(p, bad, v0, 0.1, 0.0), ShapeError);
}

TEST(Sgd, ScalarDescentConverges) {
  std::vector<double> p{0.0}, v{0.0};
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> g{2.0 * (p[0] - 3.0)};
    sgd_step<double>(p, g, v, 0.1, 0.5);
  }
  EXPECT_LT(std::abs(p[0] - 3.0), 0.01);
}

TEST(Sgd, MomentumOptimizerDeterministic) {
  auto run = [] {
    ParamStore<double> ps;
    ps.add("w", Tensor<double>(Shape{3}, std::vector<double>{1, 2, 3}));
    ps.enable_grad();
    SgdMomentum<double> opt(0.05, 0.9);
    for (int s = 0; s < 10; ++s) {
      ps.zero_grad();
      auto& w = ps.get("w");
      for (std::size_t i = 0; i < 3; ++i) w.grad()[i] = std::sin(w[i] + s);
      opt.step(ps);
    }
    return ps.get("w").storage();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripAndLayout) {
  Rng rng(14);
  ParamStore<float> ps;
  ps.add("conv1.w", random_tensor(Shape{2, 3, 3, 3}, rng).cast<float>());
  ps.add("b", random_tensor(Shape{5}, rng).cast<float>());
  std::stringstream ss;
  write_checkpoint(ss, ps);
  const std::string bytes = ss.str();
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "SLVW");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kCheckpointVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
  // magic, version, count, then per tensor: u32 name length, name, u32 rank, extents, floats
  EXPECT_EQ(bytes.size(), 12u + (4 + 7 + 4 + 16 + 54 * 4) + (4 + 1 + 4 + 4 + 5 * 4));
  std::stringstream in(bytes);
  EXPECT_EQ(read_checkpoint(in), ps);
  std::stringstream in2(bytes), again;
  write_checkpoint(again, read_checkpoint(in2));
  EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("NOPE\x01\x00\x00\x00");
  EXPECT_THROW(read_checkpoint(bad), Error);
  std::stringstream truncated(std::string("SLVW\x01\x00\x00\x00\x01\x00\x00\x00", 12));
  EXPECT_THROW(read_checkpoint(truncated), Error);
}

TEST(Rng, SubstreamsAreStable) {
  EXPECT_EQ(derive_seed(7, "teacher"), derive_seed(7, "teacher"));
  EXPECT_NE(derive_seed(7, "teacher"), derive_seed(7, "student"));
  EXPECT_NE(derive_seed(7, "teacher"), derive_seed(8, "teacher"));
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}
