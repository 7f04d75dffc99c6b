#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "rtn/errors.hpp"
#include "rtn/model.hpp"
#include "rtn/nnops.hpp"
#include "support/fd.hpp"

using namespace rtn;
using rtn::test::dot;
using rtn::test::max_fd_error;
using rtn::test::uniform;

namespace {

// (1, 1, n) row or (1, n, 1) column holding 1..n ("a".."e").
Tensor<double> letters_row(std::size_t n) {
  Tensor<double> t({1, 1, n});
  for (std::size_t i = 0; i < n; ++i) t[i] = double(i + 1);
  return t;
}

Tensor<double> shift_rows(const Tensor<double>& x, std::size_t s) {
  Tensor<double> out(x.shape());
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out(ch, (y + s) % h, xx) = x(ch, y, xx);
  return out;
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("padding follows the wrap and mirror patterns") {
  // Rows wrap: a 5-row column [a..e] padded by 3 reads c d e | a b c d e | a b c.
  Tensor<double> col({1, 5, 4});
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 4; ++x) col(0, y, x) = double(y + 1);
  const auto pr = pad_logpolar(col, 3);
  const double want_rows[] = {3, 4, 5, 1, 2, 3, 4, 5, 1, 2, 3};
  for (std::size_t y = 0; y < 11; ++y) CHECK(pr(0, y, 3) == want_rows[y]);
  const auto p1 = pad_logpolar(col, 1);
  const double want_p1[] = {5, 1, 2, 3, 4, 5, 1};
  for (std::size_t y = 0; y < 7; ++y) CHECK(p1(0, y, 1) == want_p1[y]);

  // Columns mirror including the edge: c b a | a b c d e | e d c.
  Tensor<double> row({1, 4, 5});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x) row(0, y, x) = double(x + 1);
  const auto pc = pad_logpolar(row, 3);
  const double want_cols[] = {3, 2, 1, 1, 2, 3, 4, 5, 5, 4, 3};
  for (std::size_t x = 0; x < 11; ++x) CHECK(pc(0, 3, x) == want_cols[x]);

  CHECK_THROWS_AS(pad_logpolar(letters_row(5), 1), ContractError);  // p must be < H
  const Tensor<double> flat({2, 4, 5}, 0.75);
  for (double v : pad_logpolar(flat, 2)) CHECK(v == 0.75);
}

TEST_CASE("padding backward is the adjoint of padding") {
  std::mt19937_64 rng(1);
  Tensor<double> x = uniform({2, 5, 6}, rng);
  const Tensor<double> g = uniform(pad_logpolar(x, 2).shape(), rng);
  // <pad(x), g> == <x, pad^T(g)>
  CHECK(dot(pad_logpolar(x, 2), g) == doctest::Approx(dot(x, pad_logpolar_backward(g, 2))).epsilon(1e-13));
}

TEST_CASE("conv2d forward examples") {
  std::mt19937_64 rng(2);
  const Tensor<double> x = uniform({1, 6, 7}, rng);
  ConvLayer<double> ident{Tensor<double>({1, 1, 3, 3}), Tensor<double>({1})};
  ident.weights(0, 0, 1, 1) = 1.0;
  CHECK(bitwise_equal(conv2d_forward(x, ident), x));

  ConvLayer<double> box{Tensor<double>({1, 1, 3, 3}, 1.0), Tensor<double>({1})};
  for (double v : conv2d_forward(Tensor<double>({1, 5, 5}, 0.5), box)) CHECK(v == 4.5);

  // 1x1 convolution is a per-pixel matrix product plus bias.
  ConvLayer<double> mix{Tensor<double>({2, 2, 1, 1}, {1, 2, 3, 4}), Tensor<double>({2}, {0.5, -1}), PadMode::none};
  const Tensor<double> two({2, 1, 1}, {10, 100});
  const auto y = conv2d_forward(two, mix);
  CHECK(y[0] == 210.5);
  CHECK(y[1] == 429.0);

  ConvLayer<double> bad{Tensor<double>({1, 2, 3, 3}), Tensor<double>({1})};
  CHECK_THROWS_AS(conv2d_forward(x, bad), ContractError);
}

TEST_CASE("conv2d commutes bitwise with circular row shifts") {
  std::mt19937_64 rng(3);
  ConvLayer<double> layer{uniform({4, 2, 3, 3}, rng), uniform({4}, rng)};
  const Tensor<double> x = uniform({2, 8, 8}, rng);
  for (std::size_t s : {1, 3, 7}) CHECK(bitwise_equal(conv2d_forward(shift_rows(x, s), layer), shift_rows(conv2d_forward(x, layer), s)));
  // Same in single precision, through whichever GEMM kernel is active.
  ConvLayer<float> lf{Tensor<float>::cast_from(layer.weights), Tensor<float>::cast_from(layer.bias)};
  const auto xf = Tensor<float>::cast_from(x);
  const auto shifted = Tensor<float>::cast_from(shift_rows(x, 5));
  CHECK(bitwise_equal(conv2d_forward(shifted, lf),
                      Tensor<float>::cast_from(shift_rows(Tensor<double>::cast_from(conv2d_forward(xf, lf)), 5))));
}

TEST_CASE("conv2d backward") {
  std::mt19937_64 rng(4);
  ConvLayer<double> layer{uniform({4, 2, 3, 3}, rng), uniform({4}, rng)};
  Tensor<double> x = uniform({2, 8, 8}, rng);
  const Tensor<double> zero({4, 8, 8});
  const auto gz = conv2d_backward(x, layer, zero);
  for (double v : gz.grad_x) CHECK(v == 0.0);
  for (double v : gz.grad_weights) CHECK(v == 0.0);

  const Tensor<double> proj = uniform({4, 8, 8}, rng);
  const auto g = conv2d_backward(x, layer, proj);
  for (std::size_t o = 0; o < 4; ++o) {
    double s = 0;
    for (std::size_t i = 0; i < 64; ++i) s += proj[o * 64 + i];
    CHECK(g.grad_bias[o] == doctest::Approx(s).epsilon(1e-13));
  }
  const auto f = [&] { return dot(conv2d_forward(x, layer), proj); };
  CHECK(max_fd_error(f, x, g.grad_x) < 1e-4);
  CHECK(max_fd_error(f, layer.weights, g.grad_weights) < 1e-4);
  CHECK(max_fd_error(f, layer.bias, g.grad_bias) < 1e-4);

  // The accumulating form adds onto existing gradients.
  ConvLayer<double> acc{Tensor<double>(layer.weights.shape(), 1.0), Tensor<double>({4}, 2.0)};
  conv2d_backward(x, layer, proj, acc, false);
  CHECK(acc.weights[5] == doctest::Approx(1.0 + g.grad_weights[5]));
  CHECK(acc.bias[1] == doctest::Approx(2.0 + g.grad_bias[1]));
}

TEST_CASE("max pooling") {
  const Tensor<double> x({1, 2, 2}, {1, 2, 3, 4});
  const auto r = maxpool2x2_forward(x);
  CHECK(r.out[0] == 4.0);
  const auto g = maxpool2x2_backward(x.shape(), r.argmax, Tensor<double>({1, 1, 1}, 1.0));
  CHECK(g[3] == 1.0);
  CHECK(g[0] + g[1] + g[2] == 0.0);

  const Tensor<double> tie({1, 2, 2}, 7.0);
  const auto t = maxpool2x2_forward(tie);
  CHECK(t.out[0] == 7.0);
  CHECK(maxpool2x2_backward(tie.shape(), t.argmax, Tensor<double>({1, 1, 1}, 1.0))[0] == 1.0);

  std::mt19937_64 rng(5);
  Tensor<double> y = uniform({3, 6, 8}, rng);  // continuous values: no ties
  const auto fwd = maxpool2x2_forward(y);
  CHECK(fwd.out.shape() == Shape{3, 3, 4});
  const Tensor<double> proj = uniform(fwd.out.shape(), rng);
  CHECK(max_fd_error([&] { return dot(maxpool2x2_forward(y).out, proj); }, y,
                     maxpool2x2_backward(y.shape(), fwd.argmax, proj)) < 1e-4);
  CHECK_THROWS_AS(maxpool2x2_forward(Tensor<double>({1, 3, 4})), ContractError);
}

TEST_CASE("global average pooling") {
  CHECK(global_avgpool_forward(Tensor<double>({2, 3, 3}, 2.5))[1] == 2.5);
  Tensor<double> one({1, 4, 5});
  one(0, 2, 3) = 6.0;
  CHECK(global_avgpool_forward(one)[0] == doctest::Approx(6.0 / 20));
  std::mt19937_64 rng(6);
  Tensor<double> x = uniform({3, 4, 4}, rng);
  const Tensor<double> proj = uniform({3}, rng);
  CHECK(max_fd_error([&] { return dot(global_avgpool_forward(x), proj); }, x,
                     global_avgpool_backward(x.shape(), proj)) < 1e-4);
}

TEST_CASE("dense, tanh and softmax") {
  DenseLayer<double> zero_w{Tensor<double>({3, 4}), Tensor<double>({3}, {0.1, 0.2, 0.3})};
  const auto p = softmax_forward(dense_forward(zero_w, Tensor<double>({4}, 1.0)));
  const double z = std::exp(0.1) + std::exp(0.2) + std::exp(0.3);
  CHECK(p[2] == doctest::Approx(std::exp(0.3) / z).epsilon(1e-14));
  CHECK(tanh_forward(Tensor<double>({1}))[0] == 0.0);

  std::mt19937_64 rng(7);
  DenseLayer<double> layer{uniform({5, 7}, rng), uniform({5}, rng)};
  DenseLayer<double> grads{Tensor<double>({5, 7}), Tensor<double>({5})};
  Tensor<double> x = uniform({7}, rng);
  const Tensor<double> proj = uniform({5}, rng);
  const Tensor<double> gx = dense_backward(layer, x, proj, grads);
  const auto f = [&] { return dot(dense_forward(layer, x), proj); };
  CHECK(max_fd_error(f, x, gx) < 1e-4);
  CHECK(max_fd_error(f, layer.weights, grads.weights) < 1e-4);
  CHECK(max_fd_error(f, layer.bias, grads.bias) < 1e-4);

  Tensor<double> t = uniform({2, 3, 5}, rng, -3, 3);
  const Tensor<double> tp = uniform(t.shape(), rng);
  CHECK(max_fd_error([&] { return dot(tanh_forward(t), tp); }, t, tanh_backward(tanh_forward(t), tp)) < 1e-4);

  for (int trial = 0; trial < 20; ++trial) {
    const auto s = softmax_forward(uniform({10}, rng, -30, 30));
    double sum = 0;
    for (double v : s) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(Tensor<double>({10}, 0.1), 3) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  Tensor<double> hot({10});
  hot[4] = 1.0;
  CHECK(cross_entropy(hot, 4) == 0.0);
  CHECK(softmax_cross_entropy(Tensor<double>({10}), 0).loss == doctest::Approx(std::log(10.0)));
  // Large logits must not overflow.
  Tensor<double> big({3}, {1000, 0, -1000});
  CHECK(softmax_cross_entropy(big, 0).loss == doctest::Approx(0.0));
  CHECK(softmax_cross_entropy(big, 1).loss == doctest::Approx(1000.0));
  std::mt19937_64 rng(8);
  Tensor<double> z = uniform({10}, rng, -3, 3);
  const auto r = softmax_cross_entropy(z, 6);
  CHECK(max_fd_error([&] { return softmax_cross_entropy(z, 6).loss; }, z, r.grad_logits) < 1e-4);
  CHECK_THROWS_AS(softmax_cross_entropy(z, 10), ContractError);
}

TEST_CASE("spatial softmax readout values") {
  // Hand-made grid: three angles in one quadrant, two radii.
  Tensor<double> grid({3, 2, 2});
  const double phis[] = {0.1, 0.5, 0.9}, rhos[] = {0.0, 2.0};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) grid(i, j, 0) = phis[i], grid(i, j, 1) = rhos[j];

  const auto u = spatial_softmax_readout(Tensor<double>({1, 3, 2}), grid);
  CHECK(u.point.rho == doctest::Approx(1.0).epsilon(1e-15));
  const double sn = (std::sin(0.1) + std::sin(0.5) + std::sin(0.9)) / 3;
  const double cs = (std::cos(0.1) + std::cos(0.5) + std::cos(0.9)) / 3;
  CHECK(std::abs(u.point.phi - std::atan2(sn, cs)) < 1e-6);
  CHECK(std::abs(spatial_softmax_readout(Tensor<double>({1, 3, 2}), grid, PhiReadout::linear).point.phi - 0.5) < 1e-6);

  for (std::size_t cell = 0; cell < 6; ++cell) {
    Tensor<double> spike({1, 3, 2});
    spike[cell] = 50.0;
    const auto r = spatial_softmax_readout(spike, grid);
    CHECK(std::abs(r.point.phi - grid[2 * cell]) < 1e-6);
    CHECK(std::abs(r.point.rho - grid[2 * cell + 1]) < 1e-6);
  }

  Tensor<double> two({1, 3, 2});
  two(0, 1, 0) = two(0, 1, 1) = 30.0;
  const auto t = spatial_softmax_readout(two, grid);
  CHECK(std::abs(t.point.phi - 0.5) < 1e-9);
  CHECK(std::abs(t.point.rho - 1.0) < 1e-9);
}

TEST_CASE("spatial softmax readout stays in the convex hull") {
  const GridSpec spec{32, 32, 1.0, 40.0};
  const Tensor<double> grid = readout_coordinate_grid(spec, 8, 8, 4);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 1; i < grid.size(); i += 2) lo = std::min(lo, grid[i]), hi = std::max(hi, grid[i]);
  CHECK(lo >= std::log(spec.r_min));
  CHECK(hi <= std::log(spec.r_max));
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const double scale = trial < 250 ? 1.0 : 200.0;
    const auto r = spatial_softmax_readout(uniform({1, 8, 8}, rng, -scale, scale), grid);
    REQUIRE(r.point.rho >= lo);
    REQUIRE(r.point.rho <= hi);
    REQUIRE(r.point.phi >= 0.0);
    REQUIRE(r.point.phi < kTwoPi);
  }
}

TEST_CASE("spatial softmax backward") {
  const GridSpec spec{16, 16, 1.0, 30.0};
  const Tensor<double> grid = readout_coordinate_grid(spec, 4, 4, 4);
  const Tensor<double> flat({1, 4, 4});
  for (double v : spatial_softmax_backward(flat, grid, 0.0, 0.0)) CHECK(v == 0.0);

  // Uniform logits, gradient on rho only: p_k (rho_k - mean rho).
  const auto g = spatial_softmax_backward(flat, grid, 0.0, 1.0);
  double mean = 0;
  for (std::size_t k = 0; k < 16; ++k) mean += grid[2 * k + 1] / 16;
  for (std::size_t k = 0; k < 16; ++k) CHECK(g[k] == doctest::Approx((grid[2 * k + 1] - mean) / 16).epsilon(1e-12));

  std::mt19937_64 rng(10);
  for (PhiReadout mode : {PhiReadout::circular, PhiReadout::linear}) {
    Tensor<double> z = uniform({1, 4, 4}, rng, -2, 2);
    const double a = 0.7, b = -1.3;
    const auto ga = spatial_softmax_backward(z, grid, a, b, mode);
    const auto f = [&] {
      const auto p = spatial_softmax_readout(z, grid, mode).point;
      return a * p.phi + b * p.rho;
    };
    CHECK(max_fd_error(f, z, ga) < 1e-4);
  }
}

TEST_CASE("rnn step") {
  RnnCell<double> zero{Tensor<double>({3, 2}), Tensor<double>({3, 3}), Tensor<double>({3}, {0.5, -1, 2})};
  const auto h = rnn_step_forward(zero, Tensor<double>({3}, 9.0), Tensor<double>({2}, 4.0));
  CHECK(h[0] == std::tanh(0.5));
  CHECK(h[2] == std::tanh(2.0));
  RnnCell<double> quiet{Tensor<double>({3, 2}, 1.0), Tensor<double>({3, 3}, 1.0), Tensor<double>({3})};
  for (double v : rnn_step_forward(quiet, Tensor<double>({3}), Tensor<double>({2}))) CHECK(v == 0.0);

  // Four unrolled steps with shared weights against finite differences.
  std::mt19937_64 rng(11);
  RnnCell<double> cell{uniform({4, 3}, rng), uniform({4, 4}, rng, -0.5, 0.5), uniform({4}, rng)};
  std::vector<Tensor<double>> xs;
  for (int s = 0; s < 4; ++s) xs.push_back(uniform({3}, rng));
  const Tensor<double> proj = uniform({4}, rng);
  const auto run = [&] {
    Tensor<double> state({4});
    for (const auto& x : xs) state = rnn_step_forward(cell, state, x);
    return dot(state, proj);
  };
  RnnCell<double> grads{Tensor<double>({4, 3}), Tensor<double>({4, 4}), Tensor<double>({4})};
  std::vector<Tensor<double>> states{Tensor<double>({4})};
  for (const auto& x : xs) states.push_back(rnn_step_forward(cell, states.back(), x));
  Tensor<double> gh = proj;
  std::vector<Tensor<double>> gxs(4);
  for (int s = 3; s >= 0; --s) {
    auto r = rnn_step_backward(cell, states[s], xs[s], states[s + 1], gh, grads);
    gh = r.grad_h_prev;
    gxs[s] = r.grad_x;
  }
  CHECK(max_fd_error(run, cell.w_x, grads.w_x) < 1e-4);
  CHECK(max_fd_error(run, cell.w_h, grads.w_h) < 1e-4);
  CHECK(max_fd_error(run, cell.bias, grads.bias) < 1e-4);
  for (int s = 0; s < 4; ++s) CHECK(max_fd_error(run, xs[s], gxs[s]) < 1e-4);
}
