#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "svw/ad/checkpoint.hpp"
#include "svw/ad/gradcheck.hpp"
#include "svw/ad/module.hpp"
#include "svw/ad/ops.hpp"
#include "svw/ad/optim.hpp"

namespace svw::ad {
namespace {

using Td = Tensor<double>;

Td random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(s.numel());
  for (double& x : v) x = rng.uniform(lo, hi);
  return Td::from(s, std::move(v));
}

// Squared error against a fixed random target keeps every output element in play.
std::function<Td()> loss_of(std::function<Td()> f, Shape out_shape, std::uint64_t seed = 99) {
  auto target = random_tensor(out_shape, seed);
  return [f, target] { return mse(f(), target); };
}

constexpr double kTol = 1e-5;
const Shape kIn{2, 3, 5, 5};

void expect_grads(std::function<Td()> f, std::vector<std::pair<std::string, Td>> leaves) {
  Shape out;
  {
    NoGradGuard ng;
    out = f().shape();
  }
  const auto r = gradcheck(loss_of(f, out), std::move(leaves));
  EXPECT_LE(r.max_rel_error, kTol) << "worst " << r.worst;
  EXPECT_GT(r.checked, 0u);
}

TEST(Ops, Conv2dIdentityKernel) {
  auto x = random_tensor({1, 1, 4, 4}, 1);
  auto w = Td::from({1, 1, 1, 1}, {1.0});
  EXPECT_TRUE(conv2d(x, w, Td(), 1, 0).same_values(x));
}

TEST(Ops, Conv2dOnesSumsToNine) {
  auto y = conv2d(Td::filled({1, 1, 3, 3}, 1.0), Td::filled({1, 1, 3, 3}, 1.0), Td(), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0);
}

TEST(Ops, MaxPoolPicksMax) {
  auto y = maxpool2d(Td::from({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  EXPECT_EQ(y.item(), 4.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  try {
    add(Td::zeros({1, 2, 3, 3}), Td::zeros({1, 2, 4, 4}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("(1,2,3,3)"), std::string::npos);
    EXPECT_NE(msg.find("(1,2,4,4)"), std::string::npos);
  }
  EXPECT_THROW(conv2d(Td::zeros({1, 2, 5, 5}), Td::zeros({4, 3, 3, 3}), Td(), 1, 1), ShapeError);
  EXPECT_THROW(linear(Td::zeros({2, 7, 1, 1}), Td::zeros({3, 6, 1, 1}), Td()), ShapeError);
}

TEST(Ops, ConvTransposeIsAdjointOfConv) {
  // <conv(x), y> == <x, conv_transpose(y)> for a shared weight.
  for (auto [k, s, p, op] : {std::array{3, 2, 1, 1}, std::array{7, 4, 0, 1}, std::array{3, 1, 1, 0}}) {
    auto x = random_tensor({2, 3, 8, 8}, 3);
    auto w = random_tensor({4, 3, k, k}, 4);
    auto cx = conv2d(x, w, Td(), s, p);
    auto y = random_tensor(cx.shape(), 5);
    auto ty = conv_transpose2d(y, w, Td(), s, p, op);
    ASSERT_EQ(ty.shape(), x.shape());
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * ty.data()[i];
    EXPECT_NEAR(lhs, rhs, 1e-10) << "k=" << k << " s=" << s;
  }
}

TEST(Ops, ConvTransposeOutputSize) {
  auto y = conv_transpose2d(Td::zeros({1, 2, 4, 4}), Td::zeros({2, 3, 3, 3}), Td::zeros({3, 1, 1, 1}), 2, 1, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 8, 8}));
  auto z = conv_transpose2d(Td::zeros({1, 2, 7, 7}), Td::zeros({2, 1, 7, 7}), Td(), 4, 0, 1);
  EXPECT_EQ(z.shape(), (Shape{1, 1, 32, 32}));
}

TEST(Ops, UpsampleOfConstantIsConstant) {
  auto y = upsample_bilinear2x(Td::filled({1, 2, 3, 3}, 0.7));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
  for (double v : y.values()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Ops, UpsampleInteriorWeights) {
  // 1-D ramp 0,1,2,3: interior outputs sit at quarter offsets.
  auto y = upsample_bilinear2x(Td::from({1, 1, 1, 4}, {0, 1, 2, 3}));
  const std::vector<double> expect{0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3};
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(y.data()[8 + i], expect[i], 1e-15);
}

TEST(Backward, MseAgainstItselfIsZero) {
  auto x = random_tensor(kIn, 7);
  x.set_requires_grad(true);
  auto loss = mse(x, x.detach());
  backward(loss);
  EXPECT_EQ(loss.item(), 0.0);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, OffPathLeafGetsZeroGrad) {
  auto a = random_tensor(kIn, 1), b = random_tensor(kIn, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto loss = mse(tanh(a), Td::zeros(kIn));
  backward(loss);
  for (double g : b.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ConcatRoutesSlicesBack) {
  auto a = random_tensor({2, 2, 3, 3}, 1), b = random_tensor({2, 3, 3, 3}, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto cat = concat_channels<double>({a, b});
  auto weights = random_tensor(cat.shape(), 3);
  auto loss = mean_hw(reshape(mul(cat, weights), {1, 1, 1, static_cast<int>(cat.numel())}));
  backward(loss);
  const double scale = 1.0 / cat.numel();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < 9; ++i) {
        const double expected = weights.data()[(n * 5 + c) * 9 + i] * scale;
        const double got = c < 2 ? a.grad()[(n * 2 + c) * 9 + i] : b.grad()[(n * 3 + c - 2) * 9 + i];
        EXPECT_DOUBLE_EQ(got, expected);
      }
}

TEST(Backward, SharedInputAccumulates) {
  auto x = Td::from({1, 1, 1, 1}, {3.0}, true);
  auto y = mul(x, x);
  auto loss = mse(y, Td::zeros(y.shape()));  // x^4
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4 * 27.0);
}

TEST(Backward, NoGradGuardBuildsNoGraph) {
  auto x = random_tensor(kIn, 1);
  x.set_requires_grad(true);
  NoGradGuard ng;
  auto y = tanh(x);
  EXPECT_FALSE(y.requires_grad());
}

// Finite-difference oracle for every primitive.

TEST(GradCheck, Elementwise) {
  auto a = random_tensor(kIn, 11), b = random_tensor(kIn, 12);
  expect_grads([=] { return add(a, b); }, {{"a", a}, {"b", b}});
  expect_grads([=] { return sub(a, b); }, {{"a", a}, {"b", b}});
  expect_grads([=] { return mul(a, b); }, {{"a", a}, {"b", b}});
  expect_grads([=] { return affine(a, 1.7, -0.3); }, {{"a", a}});
  expect_grads([=] { return one_minus(a); }, {{"a", a}});
  expect_grads([=] { return tanh(a); }, {{"a", a}});
  expect_grads([=] { return sigmoid(mul(a, b)); }, {{"a", a}, {"b", b}});
  expect_grads([=] { return relu(a); }, {{"a", a}});
  expect_grads([=] { return leaky_relu(a); }, {{"a", a}});
}

TEST(GradCheck, Conv2dVariants) {
  struct Case {
    int k, stride, pad;
  };
  for (auto c : {Case{3, 1, 1}, Case{3, 2, 1}, Case{7, 2, 2}, Case{3, 1, 0}, Case{1, 1, 0}, Case{2, 2, 0}}) {
    auto x = random_tensor(kIn, 21), w = random_tensor({4, 3, c.k, c.k}, 22), b = random_tensor({4, 1, 1, 1}, 23);
    SCOPED_TRACE("k=" + std::to_string(c.k) + " s=" + std::to_string(c.stride) + " p=" + std::to_string(c.pad));
    expect_grads([=] { return conv2d(x, w, b, c.stride, c.pad); }, {{"x", x}, {"w", w}, {"b", b}});
  }
}

TEST(GradCheck, ConvTranspose2dVariants) {
  struct Case {
    int k, stride, pad, out_pad;
  };
  for (auto c : {Case{3, 2, 1, 1}, Case{7, 4, 0, 1}, Case{3, 1, 1, 0}, Case{7, 4, 0, 3}}) {
    auto x = random_tensor(kIn, 31), w = random_tensor({3, 2, c.k, c.k}, 32), b = random_tensor({2, 1, 1, 1}, 33);
    SCOPED_TRACE("k=" + std::to_string(c.k) + " s=" + std::to_string(c.stride));
    expect_grads([=] { return conv_transpose2d(x, w, b, c.stride, c.pad, c.out_pad); },
                 {{"x", x}, {"w", w}, {"b", b}});
  }
}

TEST(GradCheck, Pooling) {
  auto x = random_tensor(kIn, 41);
  expect_grads([=] { return maxpool2d(x, 2, 2); }, {{"x", x}});
  expect_grads([=] { return maxpool2d(x, 4, 4); }, {{"x", x}});
  expect_grads([=] { return maxpool2d(x, 3, 1); }, {{"x", x}});
  expect_grads([=] { return upsample_bilinear2x(x); }, {{"x", x}});
  expect_grads([=] { return mean_hw(x); }, {{"x", x}});
}

TEST(GradCheck, LinearAndStructure) {
  auto x = random_tensor(kIn, 51), w = random_tensor({6, 75, 1, 1}, 52), b = random_tensor({6, 1, 1, 1}, 53);
  expect_grads([=] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
  auto y = random_tensor({2, 4, 5, 5}, 54);
  expect_grads([=] { return concat_channels<double>({x, y, x}); }, {{"x", x}, {"y", y}});
  expect_grads([=] { return slice_channels(x, 1, 3); }, {{"x", x}});
  expect_grads([=] { return reshape(x, {2, 75, 1, 1}); }, {{"x", x}});
  auto z = random_tensor({3, 3, 5, 5}, 55);
  expect_grads([=] { return concat_batch<double>({x, z, x}); }, {{"x", x}, {"z", z}});
  expect_grads([=] { return batch_slice(z, 1, 3); }, {{"z", z}});
}

TEST(GradCheck, BatchNorm) {
  auto x = random_tensor(kIn, 61), g = random_tensor({3, 1, 1, 1}, 62, 0.5, 1.5), b = random_tensor({3, 1, 1, 1}, 63);
  std::vector<double> rm(3, 0.1), rv(3, 0.8);
  expect_grads([=]() mutable { return batchnorm2d(x, g, b, rm, rv, true); }, {{"x", x}, {"g", g}, {"b", b}});
  expect_grads([=]() mutable { return batchnorm2d(x, g, b, rm, rv, false); }, {{"x", x}, {"g", g}, {"b", b}});
}

TEST(GradCheck, DropoutWithFixedMask) {
  auto x = random_tensor(kIn, 71);
  expect_grads(
      [=] {
        Rng rng(5);
        return dropout(x, 0.25, true, rng);
      },
      {{"x", x}});
}

TEST(GradCheck, MseBothArguments) {
  auto a = random_tensor(kIn, 81), b = random_tensor(kIn, 82);
  const auto r = gradcheck([=] { return mse(a, b); }, {{"a", a}, {"b", b}});
  EXPECT_LE(r.max_rel_error, kTol);
}

TEST(BatchNorm, TrainModeStandardizesBatch) {
  auto x = random_tensor({4, 3, 6, 6}, 91, -2.0, 5.0);
  BatchNorm2d<double> bn(3);
  auto y = bn(x);
  for (int c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 36; ++i) s += y.data()[(n * 3 + c) * 36 + i];
    const double mean = s / 144;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 36; ++i) ss += std::pow(y.data()[(n * 3 + c) * 36 + i] - mean, 2);
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_NEAR(ss / 144, 1.0, 1e-4);
  }
}

TEST(BatchNorm, RunningStatisticsUseUnbiasedVariance) {
  auto x = Td::from({2, 1, 1, 2}, {1, 2, 3, 6});
  BatchNorm2d<double> bn(1);
  bn(x);
  // mean 3, unbiased var 14/3
  EXPECT_DOUBLE_EQ(bn.running_mean()[0], 0.9 * 0 + 0.1 * 3);
  EXPECT_DOUBLE_EQ(bn.running_var()[0], 0.9 * 1 + 0.1 * (14.0 / 3.0));
}

TEST(BatchNorm, EvalModeIsFixedAffineMap) {
  BatchNorm2d<double> bn(2);
  bn(random_tensor({3, 2, 4, 4}, 1, 0.0, 3.0));
  bn.eval();
  const auto before_mean = bn.running_mean();
  auto x1 = random_tensor({1, 2, 4, 4}, 2), x2 = random_tensor({1, 2, 4, 4}, 3);
  auto y1 = bn(x1), y2 = bn(x2), y1b = bn(x1);
  EXPECT_TRUE(y1.same_values(y1b));
  EXPECT_EQ(bn.running_mean(), before_mean);
  // affine: y(a*x1 + (1-a)*x2) = a*y(x1) + (1-a)*y(x2)
  auto mix = add(affine(x1, 0.3, 0.0), affine(x2, 0.7, 0.0));
  auto ym = bn(mix);
  for (std::size_t i = 0; i < ym.numel(); ++i) EXPECT_NEAR(ym.data()[i], 0.3 * y1.data()[i] + 0.7 * y2.data()[i], 1e-12);
}

TEST(Dropout, EvalModeIsIdentity) {
  Rng rng(1);
  auto x = random_tensor(kIn, 1);
  EXPECT_TRUE(dropout(x, 0.25, false, rng).same_values(x));
}

TEST(Dropout, TrainModePreservesExpectation) {
  Rng rng(2);
  auto x = Td::filled({1, 1, 1, 1}, 1.0);
  double sum = 0.0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) sum += dropout(x, 0.25, true, rng).item();
  EXPECT_NEAR(sum / trials, 1.0, 0.02);
}

TEST(Adam, ZeroGradLeavesParamsUnchanged) {
  auto p = random_tensor({1, 3, 2, 2}, 1);
  p.set_requires_grad(true);
  const auto before = p.values();
  Adam<double> opt({p});
  opt.step(1e-3);
  EXPECT_EQ(p.values(), before);
  EXPECT_EQ(opt.step_count(), 1);
  opt.step(1e-3);
  EXPECT_EQ(opt.step_count(), 2);
}

TEST(Adam, ConstantGradientGivesLrSizedSteps) {
  auto p = Td::from({1, 1, 1, 2}, {0.0, 0.0}, true);
  Adam<double> opt({p});
  const double lr = 1e-2;
  for (int t = 1; t <= 50; ++t) {
    const auto before = p.values();
    p.grad() = {0.5, -2.0};
    opt.step(lr);
    // Bias-corrected moments equal g and g^2 exactly, so the step is lr*g/(|g|+eps).
    EXPECT_NEAR(p.data()[0] - before[0], -lr * 0.5 / (0.5 + 1e-8), 1e-12);
    EXPECT_NEAR(p.data()[1] - before[1], lr * 2.0 / (2.0 + 1e-8), 1e-12);
  }
}

TEST(LrSchedule, StrictlyImprovingKeepsLr) {
  LrSchedule s(1e-3, 2);
  for (double v : {5.0, 4.0, 3.0, 2.0, 1.0, 0.5}) EXPECT_FALSE(s.update(v));
  EXPECT_EQ(s.lr, 1e-3);
}

TEST(LrSchedule, PlateauLongerThanPatienceDropsOnce) {
  LrSchedule s(1e-3, 3);
  s.update(1.0);
  for (int i = 0; i < 3; ++i) EXPECT_FALSE(s.update(1.0));
  EXPECT_TRUE(s.update(1.0));
  EXPECT_DOUBLE_EQ(s.lr, 1e-5);
  EXPECT_EQ(s.epochs_since_best, 0);
}

TEST(LrSchedule, TwoPlateausCompose) {
  LrSchedule s(1.0, 1);
  s.update(1.0);
  for (int i = 0; i < 4; ++i) s.update(2.0);
  EXPECT_DOUBLE_EQ(s.lr, 1e-4);
}

TEST(LrSchedule, RejectsBadSettings) {
  EXPECT_THROW(LrSchedule(0.0, 1), UsageError);
  EXPECT_THROW(LrSchedule(1e-3, 1, 1.0), UsageError);
}

struct TinyNet : Module<float> {
  Conv2d<float> conv{2, 3, 3, 1, 1};
  BatchNorm2d<float> bn{3};
  Linear<float> fc{3 * 4 * 4, 5};
  TinyNet(std::uint64_t seed) {
    register_module("conv", conv);
    register_module("bn", bn);
    register_module("fc", fc);
    Rng rng(seed);
    conv.reset(rng, gain::tanh);
    fc.reset(rng, gain::linear);
  }
  Tensor<float> operator()(const Tensor<float>& x) { return fc(tanh(bn(conv(x)))); }
};

TEST(Module, NamesAndCounts) {
  TinyNet net(1);
  const auto names = net.named_parameters();
  ASSERT_EQ(names.size(), 6u);
  EXPECT_EQ(names[0].first, "conv.weight");
  EXPECT_EQ(names[2].first, "bn.gamma");
  EXPECT_EQ(names[5].first, "fc.bias");
  EXPECT_EQ(net.parameter_count(), 2u * 3 * 9 + 3 + 3 + 3 + 48 * 5 + 5);
  EXPECT_EQ(net.named_buffers().size(), 2u);
}

TEST(Module, KaimingBoundsAndZeroBias) {
  TinyNet net(2);
  const double bound = gain::tanh * std::sqrt(3.0 / 18.0);
  for (float w : net.conv.weight.values()) EXPECT_LE(std::abs(w), bound);
  for (float b : net.conv.bias.values()) EXPECT_EQ(b, 0.0f);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "svw_ckpt_test";
  std::filesystem::create_directories(dir);
  TinyNet a(3), b(4);
  std::vector<float> xv(2 * 2 * 4 * 4);
  Rng rng(9);
  for (float& v : xv) v = static_cast<float>(rng.uniform(-1, 1));
  auto x = Tensor<float>::from({2, 2, 4, 4}, xv);
  a(x);  // move running statistics off their defaults
  a.eval();
  b.eval();
  save_checkpoint(a, dir / "a.svwp");
  load_checkpoint(b, dir / "a.svwp");
  EXPECT_TRUE(a(x).same_values(b(x)));
  save_checkpoint(b, dir / "b.svwp");
  EXPECT_EQ(io::read_file(dir / "a.svwp"), io::read_file(dir / "b.svwp"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsMismatchedModel) {
  const auto dir = std::filesystem::temp_directory_path() / "svw_ckpt_test2";
  std::filesystem::create_directories(dir);
  TinyNet a(3);
  save_checkpoint(a, dir / "a.svwp");
  struct Other : Module<float> {
    Linear<float> fc{4, 4};
    Other() { register_module("fc", fc); }
  } other;
  EXPECT_THROW(load_checkpoint(other, dir / "a.svwp"), DataError);
  auto bytes = io::read_file(dir / "a.svwp");
  io::write_file_atomic(dir / "t.svwp", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(a, dir / "t.svwp"), DataError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace svw::ad
