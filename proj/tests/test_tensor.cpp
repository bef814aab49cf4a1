#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "vps/error.hpp"
#include "vps/rng.hpp"
#include "vps/tensor.hpp"

using namespace vps;

namespace {

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, MatmulIdentity) {
  const Tensor a = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<Real>{1, 2, 3, 4}));
}

TEST(Tensor, MatmulRowSelector) {
  const Tensor a = Tensor::from({2, 2}, {1, 0, 0, 0});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<Real>{5, 6, 0, 0}));
}

TEST(Tensor, MatmulShapeMismatchIsShapeError) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Tensor, SoftmaxUniformAndAnalytic) {
  const Tensor u = softmax(Tensor::from({1, 3}, {0, 0, 0}), 1);
  for (Real v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
  const Tensor s = softmax(Tensor::from({1, 3}, {Real(std::log(2.0)), 0, 0}), 1);
  EXPECT_NEAR(s.at(0), 0.5, 1e-7);
  EXPECT_NEAR(s.at(1), 0.25, 1e-7);
  EXPECT_NEAR(s.at(2), 0.25, 1e-7);
}

TEST(Tensor, SoftmaxAxisOutOfRangeIsShapeError) {
  EXPECT_THROW(softmax(Tensor::zeros({2, 2}), 2), ShapeError);
}

TEST(Tensor, SoftmaxSlicesSumToOneProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = static_cast<std::size_t>(rng.uniform_int(1, 5));
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 7));
    std::vector<Real> v(m * n);
    for (auto& x : v) x = static_cast<Real>(rng.uniform(-10, 10));
    const std::size_t axis = static_cast<std::size_t>(rng.uniform_int(0, 1));
    const Tensor s = softmax(Tensor::from({m, n}, v), axis);
    const std::size_t outer = axis == 1 ? m : n;
    const std::size_t inner = axis == 1 ? n : m;
    for (std::size_t o = 0; o < outer; ++o) {
      double total = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const Real p = axis == 1 ? s.at(o * n + i) : s.at(i * n + o);
        EXPECT_GT(p, 0);
        EXPECT_LE(p, 1);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Tensor, BackwardSquare) {
  Tensor x = Tensor::scalar(3, true);
  Tape tape;
  Tensor y;
  {
    auto rec = tape.record();
    y = mul(x, x);
  }
  tape.backward(y);
  EXPECT_FLOAT_EQ(x.grad()[0], 6);
}

TEST(Tensor, BackwardProduct) {
  Tensor x = Tensor::scalar(2, true);
  Tensor y = Tensor::scalar(5, true);
  Tape tape;
  Tensor z;
  {
    auto rec = tape.record();
    z = mul(x, y);
  }
  tape.backward(z);
  EXPECT_FLOAT_EQ(x.grad()[0], 5);
  EXPECT_FLOAT_EQ(y.grad()[0], 2);
}

TEST(Tensor, BackwardOnNonScalarIsShapeError) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor y;
  {
    auto rec = tape.record();
    y = scale(x, 2);
  }
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Tensor, BackwardOnUnconnectedLossIsContractError) {
  Tensor x = Tensor::scalar(1, true);
  Tape tape;
  {
    auto rec = tape.record();
    (void)mul(x, x);
  }
  EXPECT_THROW(tape.backward(Tensor::scalar(4)), ContractError);
}

TEST(Tensor, NothingIsRecordedWithoutAnActiveTape) {
  Tensor x = Tensor::scalar(1, true);
  Tape tape;
  (void)mul(x, x);
  EXPECT_EQ(tape.size(), 0u);
  {
    auto rec = tape.record();
    (void)mul(x, x);
    {
      Tape::Pause pause;
      (void)mul(x, x);
    }
  }
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tensor, BackwardIsBitIdenticalAcrossRuns) {
  Rng rng(8);
  std::vector<Real> av(12), bv(8);
  for (auto& v : av) v = static_cast<Real>(rng.normal());
  for (auto& v : bv) v = static_cast<Real>(rng.normal());
  auto run = [&] {
    Tensor a = Tensor::from({3, 4}, av, true);
    Tensor b = Tensor::from({4, 2}, bv, true);
    Tape tape;
    Tensor loss;
    {
      auto rec = tape.record();
      loss = mean(log_softmax(gelu(matmul(a, b)), 1));
    }
    tape.backward(loss);
    std::vector<Real> g(a.grad().begin(), a.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, ScalarBroadcastOnly) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(values(add(a, Tensor::scalar(1))), (std::vector<Real>{2, 3, 4, 5}));
  EXPECT_EQ(values(mul(Tensor::scalar(2), a)), (std::vector<Real>{2, 4, 6, 8}));
  EXPECT_THROW(add(a, Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(add(a, Tensor::zeros({4})), ShapeError);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor a = Tensor::from({2}, {1, 2});
  Tensor alias = a;
  Tensor copy = a.clone();
  a.data()[0] = 9;
  EXPECT_EQ(alias.at(0), 9);
  EXPECT_EQ(copy.at(0), 1);
  EXPECT_FALSE(a.detach().requires_grad());
}

TEST(Tensor, ConcatSliceRowsTake) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({1, 2}, {5, 6});
  EXPECT_EQ(values(concat({a, b}, 0)), (std::vector<Real>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(values(concat({a, a}, 1)), (std::vector<Real>{1, 2, 1, 2, 3, 4, 3, 4}));
  EXPECT_EQ(values(slice(a, 1, 1, 2)), (std::vector<Real>{2, 4}));
  const std::vector<std::size_t> idx{1, 1, 0};
  EXPECT_EQ(values(rows(a, idx)), (std::vector<Real>{3, 4, 3, 4, 1, 2}));
  const std::vector<std::size_t> flat{3, 0};
  EXPECT_EQ(values(take(a, flat)), (std::vector<Real>{4, 1}));
  EXPECT_THROW(concat({a, Tensor::zeros({1, 3})}, 0), ShapeError);
  EXPECT_THROW(slice(a, 0, 1, 3), ShapeError);
}

TEST(Tensor, TransposeAndReshape) {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(values(transpose(a)), (std::vector<Real>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(reshape(a, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(a, {4, 2}), ShapeError);
}

TEST(Tensor, LayerNormRowsHaveZeroMeanUnitVariance) {
  const Tensor x = Tensor::from({2, 4}, {1, 2, 3, 4, -3, 0, 5, 10});
  const Tensor y = layer_norm(x, Tensor::full({4}, 1), Tensor::zeros({4}));
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 4; ++c) m += y.at(r * 4 + c);
    m /= 4;
    for (std::size_t c = 0; c < 4; ++c) v += (y.at(r * 4 + c) - m) * (y.at(r * 4 + c) - m);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v / 4, 1.0, 1e-4);
  }
}

TEST(Tensor, UpsampleConstantGridStaysConstant) {
  const Tensor x = Tensor::full({2, 4}, 3);
  const Tensor y = upsample_bilinear(x, 2, 2, 4, 4);
  ASSERT_EQ(y.shape(), (Shape{2, 16}));
  for (Real v : y.data()) EXPECT_FLOAT_EQ(v, 3);
}

TEST(Tensor, BceWithLogitsKnownValues) {
  const std::vector<Real> t{1, 0};
  EXPECT_NEAR(bce_with_logits(Tensor::zeros({2}), t).item(), std::log(2.0), 1e-6);
  // Stable for large magnitudes.
  const Tensor big = Tensor::from({2}, {80, -80});
  EXPECT_NEAR(bce_with_logits(big, t).item(), 0.0, 1e-6);
  EXPECT_TRUE(std::isfinite(bce_with_logits(Tensor::from({2}, {-80, 80}), t).item()));
}
