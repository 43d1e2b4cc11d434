#include <gtest/gtest.h>

#include "qscnet/autograd/conv.hpp"
#include "qscnet/autograd/layers.hpp"
#include "qscnet/autograd/recurrent.hpp"
#include "qscnet/autograd/spectral_ops.hpp"
#include "qscnet/core/rng.hpp"
#include "support/oracles.hpp"

using namespace qscnet;
using ag::Var;

namespace {

Var<double> param(Shape shape, Rng& rng, double amp = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-amp, amp);
  return Var<double>(std::move(t), true);
}

// Weighted sum with fixed random weights, so every output element matters.
Var<double> probe(const Var<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor<double> w(y.shape());
  for (auto& v : w.values()) v = rng.uniform(-1, 1);
  return ag::sum(ag::mul(y, ag::constant(std::move(w))));
}

void expect_gradients(const std::function<Var<double>()>& loss, std::vector<Var<double>> params) {
  auto r = oracle::check_gradients(loss, std::move(params), 1e-5, 1e-6, 1e-6);
  EXPECT_EQ(r.within, r.checked) << "worst relative error " << r.worst;
}

}  // namespace

TEST(Autograd, ElementwiseAndActivations) {
  Rng rng(1);
  auto a = param({3, 4}, rng), b = param({3, 4}, rng);
  expect_gradients([&] { return probe(ag::gelu(ag::mul(ag::add(a, b), ag::sub(a, ag::scale(b, 0.5))))); },
                   {a, b});
  expect_gradients([&] { return probe(ag::elu(ag::scale(a, 2.0))); }, {a});
  auto g = param({2, 6, 3}, rng);
  expect_gradients([&] { return probe(ag::glu(g)); }, {g});
  expect_gradients([&] { return ag::mean(ag::mul(a, a)); }, {a});
}

TEST(Autograd, ShapeOps) {
  Rng rng(2);
  auto a = param({2, 3, 5, 4}, rng), b = param({2, 2, 5, 4}, rng);
  expect_gradients([&] { return probe(ag::concat<double>({a, b}, 1)); }, {a, b});
  expect_gradients([&] { return probe(ag::slice(a, 2, 1, 4)); }, {a});
  expect_gradients([&] { return probe(ag::permute(a, {0, 2, 3, 1})); }, {a});
  expect_gradients([&] { return probe(ag::reshape(a, {6, 20})); }, {a});
  auto one = param({1, 3, 2}, rng);
  expect_gradients([&] { return probe(ag::repeat_batch(one, 4)); }, {one});
}

TEST(Autograd, PermuteMatchesIndexOracle) {
  Rng rng(3);
  auto a = param({2, 3, 4, 5}, rng);
  auto p = ag::permute(a, {0, 3, 1, 2});
  ASSERT_EQ(p.shape(), (Shape{2, 5, 3, 4}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(p.value().at(i, l, j, k), a.value().at(i, j, k, l));
}

TEST(Autograd, LinearAndNorms) {
  Rng rng(4);
  auto x = param({5, 6}, rng), w = param({3, 6}, rng), b = param({3}, rng);
  expect_gradients([&] { return probe(ag::linear(x, w, b)); }, {x, w, b});
  auto y = param({4, 3, 7}, rng), gain = param({7}, rng), shift = param({7}, rng);
  expect_gradients([&] { return probe(ag::layer_norm(y, gain, shift)); }, {y, gain, shift});
  auto z = param({2, 4, 3, 5}, rng), gg = param({4}, rng), gs = param({4}, rng);
  expect_gradients([&] { return probe(ag::group_norm(z, 2, gg, gs)); }, {z, gg, gs});
}

TEST(Autograd, FilmMatchesLoopOracle) {
  Rng rng(5);
  auto x = param({2, 3, 4, 5}, rng), g = param({2, 3}, rng), b = param({2, 3}, rng);
  auto y = ag::film(x, g, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t f = 0; f < 4; ++f)
        for (std::size_t t = 0; t < 5; ++t)
          EXPECT_DOUBLE_EQ(y.value().at(i, c, f, t),
                           g.value().at(i, c) * x.value().at(i, c, f, t) + b.value().at(i, c));
  expect_gradients([&] { return probe(ag::film(x, g, b)); }, {x, g, b});
  EXPECT_THROW(ag::film(x, param({2, 4}, rng), param({2, 4}, rng)), InvalidInput);
}

TEST(Autograd, ConvolutionsMatchDirectLoops) {
  Rng rng(6);
  auto x = param({2, 3, 6, 5}, rng), w = param({4, 3, 3, 3}, rng), b = param({4}, rng);
  auto y = ag::conv2d_same(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 6, 5}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t f = 0; f < 6; ++f)
        for (std::size_t t = 0; t < 5; ++t) {
          double acc = b.value()[o];
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t df = 0; df < 3; ++df)
              for (std::size_t dt = 0; dt < 3; ++dt) {
                const long ff = long(f) + long(df) - 1, tt = long(t) + long(dt) - 1;
                if (ff < 0 || ff >= 6 || tt < 0 || tt >= 5) continue;
                acc += w.value().at(o, i, df, dt) * x.value().at(n, i, std::size_t(ff), std::size_t(tt));
              }
          EXPECT_NEAR(y.value().at(n, o, f, t), acc, 1e-12);
        }
  expect_gradients([&] { return probe(ag::conv2d_same(x, w, b)); }, {x, w, b});

  auto wd = param({4, 3, 3}, rng), bd = param({4}, rng);
  auto d = ag::conv_down(x, wd, bd);
  ASSERT_EQ(d.shape(), (Shape{2, 4, 2, 5}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t t = 0; t < 5; ++t) {
          double acc = bd.value()[o];
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) acc += wd.value()[(o * 3 + i) * 3 + j] * x.value().at(n, i, f * 3 + j, t);
          EXPECT_NEAR(d.value().at(n, o, f, t), acc, 1e-12);
        }
  expect_gradients([&] { return probe(ag::conv_down(x, wd, bd)); }, {x, wd, bd});

  auto x7 = param({1, 2, 7, 3}, rng), w7 = param({3, 2, 4}, rng), b7 = param({3}, rng);
  expect_gradients([&] { return probe(ag::conv_down(x7, w7, b7)); }, {x7, w7, b7});
  EXPECT_EQ(ag::conv_down(x7, w7, b7).dim(2), 2u);

  auto u = param({2, 4, 2, 5}, rng), wu = param({4, 3, 4}, rng), bu = param({3}, rng);
  auto up = ag::conv_up(u, wu, bu, 7);
  ASSERT_EQ(up.shape(), (Shape{2, 3, 7, 5}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t f = 0; f < 7; ++f)
        for (std::size_t t = 0; t < 5; ++t) {
          double acc = bu.value()[o];
          for (std::size_t i = 0; i < 4; ++i) acc += wu.value()[(i * 3 + o) * 4 + f % 4] * u.value().at(n, i, f / 4, t);
          EXPECT_NEAR(up.value().at(n, o, f, t), acc, 1e-12);
        }
  expect_gradients([&] { return probe(ag::conv_up(u, wu, bu, 7)); }, {u, wu, bu});
  EXPECT_THROW(ag::conv_up(u, wu, bu, 9), InvalidInput);
}

TEST(Autograd, BiLstm) {
  Rng rng(7);
  const std::size_t D = 3, H = 2;
  auto x = param({2, 4, D}, rng);
  ag::LstmWeights<double> f{param({4 * H, D}, rng), param({4 * H, H}, rng), param({4 * H}, rng)};
  ag::LstmWeights<double> b{param({4 * H, D}, rng), param({4 * H, H}, rng), param({4 * H}, rng)};
  auto y = ag::bilstm(x, f, b);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 2 * H}));
  expect_gradients([&] { return probe(ag::bilstm(x, f, b)); },
                   {x, f.w_ih, f.w_hh, f.bias, b.w_ih, b.w_hh, b.bias});

  // Scalar reference for the forward direction of sequence 0.
  auto sig = [](double v) { return 1 / (1 + std::exp(-v)); };
  std::vector<double> h(H, 0), c(H, 0);
  for (std::size_t t = 0; t < 4; ++t) {
    std::vector<double> z(4 * H);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      z[r] = f.bias.value()[r];
      for (std::size_t d = 0; d < D; ++d) z[r] += f.w_ih.value().at(r, d) * x.value().at(0, t, d);
      for (std::size_t k = 0; k < H; ++k) z[r] += f.w_hh.value().at(r, k) * h[k];
    }
    for (std::size_t j = 0; j < H; ++j) {
      c[j] = sig(z[H + j]) * c[j] + sig(z[j]) * std::tanh(z[2 * H + j]);
      h[j] = sig(z[3 * H + j]) * std::tanh(c[j]);
      EXPECT_NEAR(y.value().at(0, t, j), h[j], 1e-12);
    }
  }
}

TEST(Autograd, FourierPairAndIstft) {
  Rng rng(8);
  for (std::size_t T : {1u, 6u, 7u}) {
    auto x = param({1, 2, 3, T}, rng);
    auto back = ag::irfft_time(ag::rfft_time(x), T);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back.value()[i], x.value()[i], 1e-12);
    expect_gradients([&] { return probe(ag::rfft_time(x)); }, {x});
    auto z = param({1, 4, 3, T / 2 + 1}, rng);
    expect_gradients([&] { return probe(ag::irfft_time(z, T)); }, {z});
  }
  const std::size_t n = 16, hop = 4, len = 37;
  auto packed = param({2, 4, n / 2 + 1, len / hop + 1}, rng);
  expect_gradients([&] { return probe(ag::istft(packed, n, hop, len)); }, {packed});
  Tensor<double> spec(packed.shape());
  for (auto& v : spec.values()) v = rng.uniform(-1, 1);
  expect_gradients([&] { return probe(ag::apply_complex_mask(packed, spec)); }, {packed});
}

TEST(Autograd, NoGradSkipsRecording) {
  Rng rng(9);
  auto a = param({3}, rng);
  ag::NoGradGuard guard;
  auto y = ag::mul(a, a);
  EXPECT_FALSE(y.requires_grad());
}
