#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "helpers.hpp"
#include "meshdens/nn.hpp"
#include "meshdens/rng.hpp"

using namespace meshdens;

namespace {

template <class T>
Tensor4<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4<T> t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
void randomize(Param<T>& p, Rng& rng) {
  for (auto& v : p.value) v = static_cast<T>(rng.uniform(-1.0, 1.0));
}

double dot(const Tensor4<double>& a, const Tensor4<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// Central differences of `loss` against every entry of `v`; compares to `analytic`.
void check_gradient(std::vector<double>& v, const std::vector<double>& analytic, const std::function<double()>& loss,
                    const char* what, double eps = 1e-3, double tol = 1e-4) {
  REQUIRE(v.size() == analytic.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + eps;
    const double up = loss();
    v[i] = keep - eps;
    const double down = loss();
    v[i] = keep;
    const double fd = (up - down) / (2 * eps);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-2});
    INFO(what << "[" << i << "] analytic " << analytic[i] << " numeric " << fd);
    CHECK(std::abs(fd - analytic[i]) / scale < tol);
  }
}

// Naive 6-nested-loop cross-correlation.
Tensor4<double> naive_conv(const Tensor4<double>& x, const Conv2d<double>& c) {
  const int oh = (x.h - c.k + 2 * c.pad) / c.stride + 1, ow = (x.w - c.k + 2 * c.pad) / c.stride + 1;
  Tensor4<double> y(x.n, c.out_c, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < c.out_c; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = c.bias.value[static_cast<std::size_t>(o)];
          for (int i = 0; i < c.in_c; ++i)
            for (int ky = 0; ky < c.k; ++ky)
              for (int kx = 0; kx < c.k; ++kx) {
                const int iy = oy * c.stride - c.pad + ky, ix = ox * c.stride - c.pad + kx;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                s += c.weight.value[((static_cast<std::size_t>(o) * c.in_c + i) * c.k + ky) * c.k + kx] * x(n, i, iy, ix);
              }
          y(n, o, oy, ox) = s;
        }
  return y;
}

InputStack random_stack(Rng& rng) {
  InputStack s{GrayImage(60, 60), GrayImage(60, 60), GrayImage(60, 60)};
  for (auto* img : {&s.geometry, &s.dirichlet, &s.neumann})
    for (auto& v : img->data()) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  return s;
}

std::vector<TrainingPair> toy_dataset(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingPair> out;
  for (int i = 0; i < n; ++i) {
    TrainingPair p{random_stack(rng), GrayImage(60, 60)};
    const double a = rng.uniform(0.2, 0.8);
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) p.target.at(r, c) = static_cast<float>(a * (0.5 + 0.5 * std::sin(0.1 * (r + c))));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST_CASE("conv of ones over ones is the kernel sum") {
  Conv2d<float> c(1, 1, 3, 1, 0);
  std::fill(c.weight.value.begin(), c.weight.value.end(), 1.0f);
  const auto y = c.forward(Tensor4<float>(1, 1, 3, 3, 1.0f));
  REQUIRE(y.size() == 1);
  CHECK(y.data[0] == 9.0f);
}

TEST_CASE("conv output size follows floor((W - F + 2P) / S) + 1") {
  CHECK(conv_out_size(60, 3, 2, 1) == 30);
  CHECK(conv_out_size(30, 3, 2, 1) == 15);
  CHECK(conv_out_size(15, 3, 2, 1) == 8);
  CHECK(conv_out_size(8, 3, 2, 1) == 4);
  CHECK(conv_out_size(4, 2, 1, 0) == 3);
  Conv2d<float> c(3, 4, 3, 2, 1);
  CHECK(c.forward(Tensor4<float>(1, 3, 60, 60)).w == 30);
  CHECK_THROWS_AS(c.forward(Tensor4<float>(1, 2, 60, 60)), NnError);
}

TEST_CASE("conv matches a naive loop reference") {
  Rng rng(1);
  for (auto [k, s, p] : {std::array{3, 1, 1}, std::array{3, 2, 1}, std::array{2, 1, 0}, std::array{1, 1, 0}}) {
    Conv2d<double> c(2, 3, k, s, p);
    randomize(c.weight, rng);
    randomize(c.bias, rng);
    const auto x = random_tensor<double>(1, 2, 8, 8, rng);
    const auto y = c.forward(x), ref = naive_conv(x, c);
    REQUIRE(y.same_shape(ref));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(2);
  Conv2d<double> c(2, 3, 3, 2, 1);
  randomize(c.weight, rng);
  randomize(c.bias, rng);
  auto x = random_tensor<double>(2, 2, 7, 6, rng);
  const auto r = random_tensor<double>(2, 3, 4, 3, rng);
  auto loss = [&] { return dot(c.forward(x), r); };
  loss();
  const auto gx = c.backward(r);
  check_gradient(x.data, gx.data, loss, "x");
  check_gradient(c.weight.value, c.weight.grad, loss, "w");
  check_gradient(c.bias.value, c.bias.grad, loss, "b");
}

TEST_CASE("conv backward of a zero gradient is zero") {
  Rng rng(3);
  Conv2d<double> c(2, 2, 3, 1, 1);
  randomize(c.weight, rng);
  const auto x = random_tensor<double>(1, 2, 5, 5, rng);
  const auto y = c.forward(x);
  const auto gx = c.backward(Tensor4<double>(y.n, y.c, y.h, y.w));
  for (double v : gx.data) CHECK(v == 0.0);
  for (double v : c.weight.grad) CHECK(v == 0.0);
  for (double v : c.bias.grad) CHECK(v == 0.0);
}

TEST_CASE("conv weight gradient of a single output pixel is the input patch") {
  Rng rng(4);
  Conv2d<double> c(2, 1, 3, 1, 0);
  const auto x = random_tensor<double>(1, 2, 5, 5, rng);
  const auto y = c.forward(x);
  Tensor4<double> g(y.n, y.c, y.h, y.w);
  g(0, 0, 1, 2) = 1.0;
  c.backward(g);
  for (int i = 0; i < 2; ++i)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) CHECK(c.weight.grad[(i * 3 + ky) * 3 + kx] == x(0, i, 1 + ky, 2 + kx));
}

TEST_CASE("transposed conv of a single tap scales the kernel") {
  ConvTranspose2d<float> t(1, 1, 2, 2, 0, 0);
  t.weight.value = {1, 2, 3, 4};
  const auto y = t.forward(Tensor4<float>(1, 1, 1, 1, 1.5f));
  REQUIRE((y.h == 2 && y.w == 2));
  for (int i = 0; i < 4; ++i) CHECK(y.data[static_cast<std::size_t>(i)] == 1.5f * t.weight.value[static_cast<std::size_t>(i)]);
}

TEST_CASE("transposed conv mirrors the encoder convs") {
  CHECK(conv_transpose_out_size(3, 2, 1, 0, 0) == 4);
  CHECK(conv_transpose_out_size(4, 3, 2, 1, 1) == 8);
  CHECK(conv_transpose_out_size(8, 3, 2, 1, 0) == 15);
  CHECK(conv_transpose_out_size(15, 3, 2, 1, 1) == 30);
  CHECK(conv_transpose_out_size(30, 3, 2, 1, 1) == 60);
  ConvTranspose2d<float> t(4, 2, 3, 2, 1, 1);
  CHECK(t.forward(Tensor4<float>(1, 4, 15, 15)).h == 30);
  CHECK_THROWS_AS(ConvTranspose2d<float>(1, 1, 3, 2, 1, 2), NnError);
}

TEST_CASE("transposed conv is the adjoint of conv") {
  Rng rng(5);
  Conv2d<double> c(2, 3, 3, 2, 1);
  ConvTranspose2d<double> t(3, 2, 3, 2, 1, 0);
  randomize(c.weight, rng);
  t.weight.value.assign(c.weight.value.size(), 0.0);
  // conv weight (out, in, k, k) equals transposed weight (in', out', k, k) with in' = out.
  t.weight.value = c.weight.value;
  const auto x = random_tensor<double>(1, 2, 7, 7, rng);
  const auto y = random_tensor<double>(1, 3, 4, 4, rng);
  CHECK(dot(c.forward(x), y) == doctest::Approx(dot(x, t.forward(y))).epsilon(1e-12));
}

TEST_CASE("transposed conv gradients match finite differences") {
  Rng rng(6);
  ConvTranspose2d<double> t(3, 2, 3, 2, 1, 1);
  randomize(t.weight, rng);
  randomize(t.bias, rng);
  auto x = random_tensor<double>(2, 3, 3, 4, rng);
  const auto r = random_tensor<double>(2, 2, 6, 8, rng);
  auto loss = [&] { return dot(t.forward(x), r); };
  loss();
  const auto gx = t.backward(r);
  check_gradient(x.data, gx.data, loss, "x");
  check_gradient(t.weight.value, t.weight.grad, loss, "w");
  check_gradient(t.bias.value, t.bias.grad, loss, "b");
}

TEST_CASE("batch norm of a constant channel returns the shift") {
  BatchNorm2d<float> bn(1);
  bn.beta.value[0] = 0.3f;
  bn.gamma.value[0] = 2.0f;
  const auto y = bn.forward(Tensor4<float>(2, 1, 3, 3, 5.0f), true);
  for (float v : y.data) CHECK(v == doctest::Approx(0.3f));
}

TEST_CASE("batch norm train output is standardized per channel") {
  Rng rng(7);
  BatchNorm2d<double> bn(3);
  const auto x = random_tensor<double>(4, 3, 5, 5, rng, -2.0, 7.0);
  const auto y = bn.forward(x, true);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, ss = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) s += y(n, c, i / 5, i % 5);
    const double m = s / 100;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) ss += (y(n, c, i / 5, i % 5) - m) * (y(n, c, i / 5, i % 5) - m);
    CHECK(std::abs(m) < 1e-5);
    CHECK(ss / 100 == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK_THROWS_AS(bn.forward(Tensor4<double>(1, 3, 2, 2), true), NnError);
  CHECK_NOTHROW(bn.forward(Tensor4<double>(1, 3, 2, 2), false));
}

TEST_CASE("batch norm running statistics use momentum 0.9") {
  BatchNorm2d<double> bn(1);
  Tensor4<double> x(2, 1, 1, 1);
  x.data = {1.0, 3.0};
  bn.forward(x, true);
  CHECK(bn.running_mean[0] == doctest::Approx(0.2));
  CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.0));
  const auto y = bn.forward(x, false);
  CHECK(y.data[0] == doctest::Approx((1.0 - 0.2) / std::sqrt(1.0 + 1e-5)));
}

TEST_CASE("batch norm gradients match finite differences") {
  Rng rng(8);
  for (bool train : {true, false}) {
    BatchNorm2d<double> bn(2);
    randomize(bn.gamma, rng);
    randomize(bn.beta, rng);
    bn.running_mean = {0.1, -0.2};
    bn.running_var = {0.5, 2.0};
    bn.momentum = 1.0;  // keep running stats fixed across probes
    auto x = random_tensor<double>(3, 2, 3, 3, rng);
    const auto r = random_tensor<double>(3, 2, 3, 3, rng);
    auto loss = [&] { return dot(bn.forward(x, train), r); };
    loss();
    const auto gx = bn.backward(r);
    check_gradient(x.data, gx.data, loss, "x");
    check_gradient(bn.gamma.value, bn.gamma.grad, loss, "gamma");
    check_gradient(bn.beta.value, bn.beta.grad, loss, "beta");
  }
}

TEST_CASE("max pool 4 to 3 over a ramp") {
  MaxPool2d<double> pool(2, 1);
  Tensor4<double> x(1, 1, 4, 4);
  Rng rng(9);
  for (auto& v : x.data) v = rng.uniform();
  const auto y = pool.forward(x);
  REQUIRE((y.h == 3 && y.w == 3));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(y(0, 0, r, c) == std::max({x(0, 0, r, c), x(0, 0, r, c + 1), x(0, 0, r + 1, c), x(0, 0, r + 1, c + 1)}));
  for (int i = 0; i < 16; ++i) x.data[static_cast<std::size_t>(i)] = i;
  const auto ramp = pool.forward(x);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(ramp(0, 0, r, c) == (r + 1) * 4 + c + 1);
}

TEST_CASE("max pool of a constant routes gradient to the first window element") {
  MaxPool2d<double> pool(2, 1);
  const auto y = pool.forward(Tensor4<double>(1, 1, 4, 4, 2.0));
  for (double v : y.data) CHECK(v == 2.0);
  const auto gx = pool.backward(Tensor4<double>(1, 1, 3, 3, 1.0));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(gx(0, 0, r, c) == (r < 3 && c < 3 ? 1.0 : 0.0));
}

TEST_CASE("relu, sigmoid and concat gradients match finite differences") {
  Rng rng(10);
  auto x = random_tensor<double>(1, 2, 3, 3, rng);
  for (auto& v : x.data)
    if (std::abs(v) < 0.05) v = 0.3;
  const auto r = random_tensor<double>(1, 2, 3, 3, rng);
  ReLU<double> relu;
  Sigmoid<double> sig;
  auto l1 = [&] { return dot(relu.forward(x), r); };
  l1();
  check_gradient(x.data, relu.backward(r).data, l1, "relu");
  auto l2 = [&] { return dot(sig.forward(x), r); };
  l2();
  check_gradient(x.data, sig.backward(r).data, l2, "sigmoid");

  auto b = random_tensor<double>(1, 3, 3, 3, rng);
  const auto cat = concat_channels(x, b);
  CHECK(cat.c == 5);
  CHECK(cat(0, 3, 1, 1) == b(0, 1, 1, 1));
  Tensor4<double> ga, gb;
  split_channels(cat, 2, ga, gb);
  CHECK(ga.data == x.data);
  CHECK(gb.data == b.data);
  CHECK_THROWS_AS(concat_channels(x, Tensor4<double>(1, 1, 2, 3)), NnError);
}

TEST_CASE("mse loss values and gradient") {
  Tensor4<float> a(1, 1, 60, 60, 0.0f), b(1, 1, 60, 60, 1.0f);
  CHECK(mse_loss(a, a).value == 0.0f);
  CHECK(mse_loss(a, b).value == doctest::Approx(1.0));
  Tensor4<float> c = a;
  c.data[17] = 0.6f;
  const auto l = mse_loss(c, a);
  CHECK(l.value == doctest::Approx(1e-4));
  CHECK(l.grad.data[17] == doctest::Approx(2 * 0.6 / 3600));
  CHECK(l.grad.data[0] == 0.0f);
  CHECK_THROWS_AS(mse_loss(a, Tensor4<float>(1, 1, 60, 59)), NnError);
}

TEST_CASE("unet shapes, range and parameter count") {
  UNet<float> net(UNetConfig{8}, 1);
  CHECK(net.encoder_sizes() == std::vector<int>{30, 15, 8, 4, 3});
  CHECK(net.decoder_sizes() == std::vector<int>{4, 8, 15, 30, 60});
  Rng rng(11);
  const auto s1 = random_stack(rng), s2 = random_stack(rng);
  const GrayImage a = unet_forward(net, s1), b = unet_forward(net, s2);
  REQUIRE((a.width() == 60 && a.height() == 60));
  for (float v : a.data()) CHECK((v > 0.0f && v < 1.0f));
  CHECK(a != b);

  // Closed form: conv in*out*k*k + out, batch norm 2c, per declared layer.
  auto conv = [](std::size_t i, std::size_t o, std::size_t k) { return i * o * k * k + o; };
  for (std::size_t base : {8u, 32u}) {
    const std::size_t d1 = base, d2 = 2 * base, d3 = 4 * base, d4 = 8 * base, d5 = 16 * base;
    std::size_t expect = conv(3, d1, 3) + conv(d1, d2, 3) + conv(d2, d3, 3) + conv(d3, d4, 3) + conv(d4, d5, 3);
    expect += conv(d5, d4, 2) + conv(2 * d4, d3, 3) + conv(2 * d3, d2, 3) + conv(2 * d2, d1, 3) + conv(2 * d1, d1, 3);
    expect += conv(d1, 1, 1);
    expect += 2 * (d1 + d2 + d3 + d4 + d5 + d4 + d3 + d2 + d1 + d1);
    UNet<float> m(UNetConfig{static_cast<int>(base)});
    CHECK(m.parameter_count() == expect);
  }
  CHECK_THROWS_AS(UNet<float>(UNetConfig{8, 3, 64}), NnError);
  CHECK_THROWS_WITH_AS(net.forward(Tensor4<float>(1, 2, 60, 60)), doctest::Contains("input"), NnError);
}

TEST_CASE("unet gradients match finite differences") {
  UNet<double> net(UNetConfig{1}, 3);
  Rng rng(12);
  auto x = random_tensor<double>(2, 3, 60, 60, rng);
  const auto target = random_tensor<double>(2, 1, 60, 60, rng, 0.0, 1.0);
  auto bufs = net.buffers();
  auto loss = [&] {
    const auto saved = [&] {
      std::vector<std::vector<double>> s;
      for (auto& [n, b] : bufs) s.push_back(*b);
      return s;
    }();
    const double v = mse_loss(net.forward(x, true), target).value;
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = saved[i];
    return v;
  };
  net.zero_grad();
  const auto l = mse_loss(net.forward(x, true), target);
  net.backward(l.grad);
  for (auto* p : net.parameters()) {
    // Spot-check a handful of entries of each parameter. ReLU and max-pool
    // kinks need a much smaller step than the single-layer checks.
    std::vector<double> sub, grad;
    std::vector<std::size_t> pick;
    for (std::size_t i = 0; i < p->size(); i += std::max<std::size_t>(1, p->size() / 3)) pick.push_back(i);
    for (std::size_t i : pick) {
      const double keep = p->value[i];
      p->value[i] = keep + 1e-6;
      const double up = loss();
      p->value[i] = keep - 1e-6;
      const double down = loss();
      p->value[i] = keep;
      const double fd = (up - down) / 2e-6;
      const double scale = std::max({std::abs(fd), std::abs(p->grad[i]), 1e-6});
      INFO(p->name << "[" << i << "] analytic " << p->grad[i] << " numeric " << fd);
      CHECK(std::abs(fd - p->grad[i]) / scale < 1e-4);
    }
  }
}

TEST_CASE("adam with zero learning rate leaves parameters bit-identical") {
  UNet<float> net(UNetConfig{2}, 4);
  const auto before = snapshot(net);
  TrainConfig cfg;
  cfg.adam.lr = 0.0;
  cfg.batch_size = 4;
  cfg.max_epochs = 3;
  cfg.val_fraction = 0.0;
  const auto data = toy_dataset(4, 1);
  train(net, data, cfg);
  const auto after = snapshot(net);
  const auto np = net.parameters().size();
  for (std::size_t k = 0; k < np; ++k) CHECK(after[k] == before[k]);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const auto data = toy_dataset(10, 2);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 3;
  cfg.seed = 9;
  UNet<float> a(UNetConfig{2}, 5), b(UNetConfig{2}, 5);
  const auto sa = train(a, data, cfg), sb = train(b, data, cfg);
  REQUIRE(sa.history.size() == sb.history.size());
  for (std::size_t i = 0; i < sa.history.size(); ++i) {
    CHECK(sa.history[i].train_loss == sb.history[i].train_loss);
    CHECK(sa.history[i].val_loss == sb.history[i].val_loss);
  }
  CHECK(snapshot(a) == snapshot(b));
}

TEST_CASE("training keeps the best validation snapshot") {
  const auto data = toy_dataset(12, 3);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 12;
  cfg.patience = 2;
  cfg.adam.lr = 3e-2;  // noisy on purpose
  UNet<float> net(UNetConfig{2}, 6);
  const auto st = train(net, data, cfg);
  REQUIRE(st.val_indices.size() == 1);
  double best = 1e9;
  for (const auto& h : st.history) best = std::min(best, h.val_loss);
  CHECK(st.best_val == best);
  CHECK(evaluate_loss(net, data, st.val_indices) == doctest::Approx(st.best_val).epsilon(1e-6));
  if (st.stopped_early) CHECK(static_cast<int>(st.history.size()) == st.best_epoch + 1 + cfg.patience);
}

TEST_CASE("training rejects empty and undersized datasets") {
  UNet<float> net(UNetConfig{2});
  CHECK_THROWS_AS(train(net, {}), NnError);
  CHECK_THROWS_AS(train(net, toy_dataset(1, 0)), NnError);
}

TEST_CASE("model file round trip gives bit-identical outputs") {
  const auto path = (std::filesystem::temp_directory_path() / "meshdens_model_test.unet").string();
  UNet<float> net(UNetConfig{4}, 7);
  // Move the running statistics away from their defaults.
  const auto data = toy_dataset(4, 4);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 1;
  cfg.val_fraction = 0.0;
  train(net, data, cfg);
  save_model(path, net);
  UNet<float> back = load_model(path);
  CHECK(back.config() == net.config());
  const GrayImage a = unet_forward(net, data[0].input), b = unet_forward(back, data[0].input);
  CHECK(a == b);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_model(path), NnError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), NnError);
}

TEST_CASE("unet memorizes an 8-sample toy set in 2000 steps") {
  const auto data = toy_dataset(8, 5);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.val_fraction = 0.0;
  cfg.max_epochs = 1 << 20;
  cfg.max_steps = 2000;
  UNet<float> net(UNetConfig{4}, 8);
  const auto st = train(net, data, cfg);
  CHECK(st.steps == 2000);
  CHECK(st.history.back().train_loss < 1e-3);
  const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7};
  CHECK(evaluate_loss(net, data, all) < 1e-3);
}
