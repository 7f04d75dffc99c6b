#include "rtn/nnops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rtn/kernels/kernels.hpp"

namespace rtn {

namespace {

template <class T>
void require_map(const Tensor<T>& x, const char* what) {
  if (x.rank() != 3)
    throw ContractError(std::string(what) + ": expected (C,H,W), got " + shape_to_string(x.shape()));
}

std::size_t wrap_index(long i, long n) { return static_cast<std::size_t>(((i % n) + n) % n); }

std::size_t reflect_index(long i, long n) {
  if (i < 0) return static_cast<std::size_t>(-i - 1);
  if (i >= n) return static_cast<std::size_t>(2 * n - 1 - i);
  return static_cast<std::size_t>(i);
}

// Padded-cell -> source-cell lookup tables for one axis pair.
struct PadMap {
  std::vector<std::size_t> rows, cols;
};

PadMap pad_map(std::size_t h, std::size_t w, std::size_t p) {
  PadMap m;
  m.rows.resize(h + 2 * p);
  m.cols.resize(w + 2 * p);
  for (std::size_t r = 0; r < m.rows.size(); ++r)
    m.rows[r] = wrap_index(static_cast<long>(r) - static_cast<long>(p), static_cast<long>(h));
  for (std::size_t c = 0; c < m.cols.size(); ++c)
    m.cols[c] = reflect_index(static_cast<long>(c) - static_cast<long>(p), static_cast<long>(w));
  return m;
}

template <class T>
void check_conv(const Tensor<T>& x, const ConvLayer<T>& layer) {
  require_map(x, "conv2d");
  RTN_REQUIRE(layer.weights.rank() == 4, "conv2d: weights must be (out,in,k,k)");
  const std::size_t k = layer.kernel();
  RTN_REQUIRE((k == 3 || k == 1) && layer.weights.dim(3) == k, "conv2d: kernel must be 3x3 or 1x1");
  RTN_REQUIRE(layer.in_channels() == x.dim(0),
              "conv2d: layer expects " + std::to_string(layer.in_channels()) +
                  " input channels, got " + std::to_string(x.dim(0)));
  require_shape(layer.bias, {layer.out_channels()}, "conv2d bias");
  if (k == 3)
    RTN_REQUIRE(layer.pad == PadMode::wrap_phi_reflect_rho,
                "conv2d: 3x3 kernels require log-polar padding");
}

// (C*9, H*W) patch matrix of a 3x3 convolution over the log-polar padded input.
template <class T>
std::vector<T> im2col3x3(const Tensor<T>& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), n = h * w;
  const PadMap m = pad_map(h, w, 1);
  std::vector<T> col(c * 9 * n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = x.data() + ch * n;
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col.data() + ((ch * 3 + ky) * 3 + kx) * n;
        for (std::size_t y = 0; y < h; ++y) {
          const T* src = plane + m.rows[y + ky] * w;
          for (std::size_t xx = 0; xx < w; ++xx) dst[y * w + xx] = src[m.cols[xx + kx]];
        }
      }
  }
  return col;
}

// Adjoint of im2col3x3: scatters column gradients back through the padding.
template <class T>
void col2im3x3(const std::vector<T>& col, Tensor<T>& grad_x) {
  const std::size_t c = grad_x.dim(0), h = grad_x.dim(1), w = grad_x.dim(2), n = h * w;
  const PadMap m = pad_map(h, w, 1);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* plane = grad_x.data() + ch * n;
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* src = col.data() + ((ch * 3 + ky) * 3 + kx) * n;
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = plane + m.rows[y + ky] * w;
          for (std::size_t xx = 0; xx < w; ++xx) dst[m.cols[xx + kx]] += src[y * w + xx];
        }
      }
  }
}

}  // namespace

template <class T>
Tensor<T> pad_logpolar(const Tensor<T>& x, std::size_t p) {
  require_map(x, "pad_logpolar");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  RTN_REQUIRE(p < h && p < w, "pad_logpolar: padding must be smaller than both map dimensions");
  const PadMap m = pad_map(h, w, p);
  Tensor<T> out({c, h + 2 * p, w + 2 * p});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < m.rows.size(); ++r)
      for (std::size_t cc = 0; cc < m.cols.size(); ++cc) out(ch, r, cc) = x(ch, m.rows[r], m.cols[cc]);
  return out;
}

template <class T>
Tensor<T> pad_logpolar_backward(const Tensor<T>& grad_padded, std::size_t p) {
  require_map(grad_padded, "pad_logpolar_backward");
  const std::size_t c = grad_padded.dim(0);
  RTN_REQUIRE(grad_padded.dim(1) > 2 * p && grad_padded.dim(2) > 2 * p,
              "pad_logpolar_backward: map smaller than padding");
  const std::size_t h = grad_padded.dim(1) - 2 * p, w = grad_padded.dim(2) - 2 * p;
  RTN_REQUIRE(p < h && p < w, "pad_logpolar_backward: padding must be smaller than both map dimensions");
  const PadMap m = pad_map(h, w, p);
  Tensor<T> out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < m.rows.size(); ++r)
      for (std::size_t cc = 0; cc < m.cols.size(); ++cc)
        out(ch, m.rows[r], m.cols[cc]) += grad_padded(ch, r, cc);
  return out;
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvLayer<T>& layer) {
  check_conv(x, layer);
  const std::size_t o = layer.out_channels(), h = x.dim(1), w = x.dim(2), n = h * w;
  const std::size_t k = layer.in_channels() * layer.kernel() * layer.kernel();
  Tensor<T> y({o, h, w});
  for (std::size_t oc = 0; oc < o; ++oc) std::fill_n(y.data() + oc * n, n, layer.bias[oc]);
  if (layer.kernel() == 3) {
    const std::vector<T> col = im2col3x3(x);
    kernels::gemm_acc(o, n, k, layer.weights.data(), k, 1, col.data(), n, y.data(), n);
  } else {
    kernels::gemm_acc(o, n, k, layer.weights.data(), k, 1, x.data(), n, y.data(), n);
  }
  return y;
}

template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const ConvLayer<T>& layer, const Tensor<T>& grad_out,
                          ConvLayer<T>& grads, bool need_grad_x) {
  check_conv(x, layer);
  const std::size_t o = layer.out_channels(), h = x.dim(1), w = x.dim(2), n = h * w;
  const std::size_t ks = layer.kernel();
  const std::size_t k = layer.in_channels() * ks * ks;
  require_shape(grad_out, {o, h, w}, "conv2d_backward grad_out");
  require_shape(grads.weights, layer.weights.shape(), "conv2d_backward grad weights");
  require_shape(grads.bias, layer.bias.shape(), "conv2d_backward grad bias");

  for (std::size_t oc = 0; oc < o; ++oc) {
    T s = 0;
    const T* g = grad_out.data() + oc * n;
    for (std::size_t i = 0; i < n; ++i) s += g[i];
    grads.bias[oc] += s;
  }

  std::vector<T> col_storage;
  const T* col = x.data();
  if (ks == 3) {
    col_storage = im2col3x3(x);
    col = col_storage.data();
  }
  // grad_w (o x k) += grad_out (o x n) * col^T (n x k)
  std::vector<T> col_t(n * k);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i = 0; i < n; ++i) col_t[i * k + r] = col[r * n + i];
  kernels::gemm_acc(o, k, n, grad_out.data(), n, 1, col_t.data(), k, grads.weights.data(), k);

  Tensor<T> grad_x(x.shape());
  if (!need_grad_x) return grad_x;
  // grad_col (k x n) = w^T (k x o) * grad_out (o x n)
  if (ks == 3) {
    std::vector<T> grad_col(k * n, T(0));
    kernels::gemm_acc(k, n, o, layer.weights.data(), 1, k, grad_out.data(), n, grad_col.data(), n);
    col2im3x3(grad_col, grad_x);
  } else {
    kernels::gemm_acc(k, n, o, layer.weights.data(), 1, k, grad_out.data(), n, grad_x.data(), n);
  }
  return grad_x;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvLayer<T>& layer,
                             const Tensor<T>& grad_out) {
  ConvLayer<T> grads{Tensor<T>(layer.weights.shape()), Tensor<T>(layer.bias.shape()), layer.pad};
  Tensor<T> gx = conv2d_backward(x, layer, grad_out, grads, true);
  return {std::move(gx), std::move(grads.weights), std::move(grads.bias)};
}

template <class T>
PoolResult<T> maxpool2x2_forward(const Tensor<T>& x) {
  require_map(x, "maxpool2x2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  RTN_REQUIRE(h % 2 == 0 && w % 2 == 0, "maxpool2x2: spatial dims must be even, got " +
                                            shape_to_string(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  PoolResult<T> r{Tensor<T>({c, ho, wo}), std::vector<std::uint32_t>(c * ho * wo)};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (ch * h + 2 * i) * w + 2 * j;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t q : cand)
          if (x[q] > x[best]) best = q;
        const std::size_t oi = (ch * ho + i) * wo + j;
        r.out[oi] = x[best];
        r.argmax[oi] = static_cast<std::uint32_t>(best);
      }
  return r;
}

template <class T>
Tensor<T> maxpool2x2_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax,
                              const Tensor<T>& grad_out) {
  RTN_REQUIRE(argmax.size() == grad_out.size(), "maxpool2x2_backward: argmax/grad size mismatch");
  Tensor<T> gx(in_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

template <class T>
Tensor<T> global_avgpool_forward(const Tensor<T>& x) {
  require_map(x, "global_avgpool");
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  Tensor<T> y({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x[ch * n + i];
    y[ch] = s / static_cast<T>(n);
  }
  return y;
}

template <class T>
Tensor<T> global_avgpool_backward(const Shape& in_shape, const Tensor<T>& grad_out) {
  RTN_REQUIRE(in_shape.size() == 3 && grad_out.size() == in_shape[0],
              "global_avgpool_backward: shape mismatch");
  const std::size_t n = in_shape[1] * in_shape[2];
  Tensor<T> gx(in_shape);
  for (std::size_t ch = 0; ch < in_shape[0]; ++ch)
    std::fill_n(gx.data() + ch * n, n, grad_out[ch] / static_cast<T>(n));
  return gx;
}

template <class T>
Tensor<T> dense_forward(const DenseLayer<T>& layer, const Tensor<T>& x) {
  const std::size_t out = layer.weights.dim(0), in = layer.weights.dim(1);
  RTN_REQUIRE(x.size() == in, "dense: expected input of length " + std::to_string(in) + ", got " +
                                  std::to_string(x.size()));
  Tensor<T> y = layer.bias;
  kernels::gemm_acc(out, 1, in, layer.weights.data(), in, 1, x.data(), 1, y.data(), 1);
  return y;
}

template <class T>
Tensor<T> dense_backward(const DenseLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& grad_y,
                         DenseLayer<T>& grads) {
  const std::size_t out = layer.weights.dim(0), in = layer.weights.dim(1);
  RTN_REQUIRE(x.size() == in && grad_y.size() == out, "dense_backward: shape mismatch");
  for (std::size_t i = 0; i < out; ++i) grads.bias[i] += grad_y[i];
  kernels::gemm_acc(out, in, 1, grad_y.data(), 1, 1, x.data(), in, grads.weights.data(), in);
  Tensor<T> gx(x.shape());
  kernels::gemm_acc(in, 1, out, layer.weights.data(), 1, in, grad_y.data(), 1, gx.data(), 1);
  return gx;
}

template <class T>
Tensor<T> tanh_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  kernels::tanh(x.flat(), y.flat());
  return y;
}

template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& grad_y) {
  RTN_REQUIRE(y.same_shape(grad_y), "tanh_backward: shape mismatch");
  Tensor<T> gx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = grad_y[i] * (T(1) - y[i] * y[i]);
  return gx;
}

template <class T>
Tensor<T> softmax_forward(const Tensor<T>& logits) {
  RTN_REQUIRE(!logits.empty(), "softmax: empty input");
  const T mx = *std::max_element(logits.begin(), logits.end());
  Tensor<T> p(logits.shape());
  T s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= s;
  return p;
}

namespace {

struct ReadoutSums {
  std::vector<double> p;
  double rho = 0, phi_lin = 0, sin_sum = 0, cos_sum = 0;
  double rho_lo = 0, rho_hi = 0;
};

template <class T>
ReadoutSums readout_sums(const Tensor<T>& fmap, const Tensor<double>& grid) {
  RTN_REQUIRE(fmap.rank() == 3 && fmap.dim(0) == 1, "spatial softmax: expected a (1,h,w) map");
  require_shape(grid, {fmap.dim(1), fmap.dim(2), 2}, "spatial softmax coordinate grid");
  const std::size_t n = fmap.size();
  ReadoutSums s;
  s.p.resize(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, double(fmap[i]));
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) z += (s.p[i] = std::exp(double(fmap[i]) - mx));
  s.rho_lo = std::numeric_limits<double>::infinity();
  s.rho_hi = -s.rho_lo;
  for (std::size_t i = 0; i < n; ++i) {
    s.p[i] /= z;
    const double phi = grid[2 * i], rho = grid[2 * i + 1];
    s.rho += s.p[i] * rho;
    s.phi_lin += s.p[i] * phi;
    s.sin_sum += s.p[i] * std::sin(phi);
    s.cos_sum += s.p[i] * std::cos(phi);
    s.rho_lo = std::min(s.rho_lo, rho);
    s.rho_hi = std::max(s.rho_hi, rho);
  }
  return s;
}

}  // namespace

template <class T>
ReadoutResult<T> spatial_softmax_readout(const Tensor<T>& fmap, const Tensor<double>& coord_grid,
                                         PhiReadout mode) {
  const ReadoutSums s = readout_sums(fmap, coord_grid);
  ReadoutResult<T> r;
  // A convex combination can only leave [lo, hi] through rounding.
  r.point.rho = std::clamp(s.rho, s.rho_lo, s.rho_hi);
  r.point.phi = mode == PhiReadout::circular ? normalize_angle(std::atan2(s.sin_sum, s.cos_sum))
                                             : s.phi_lin;
  r.probs = Tensor<T>(fmap.shape());
  for (std::size_t i = 0; i < s.p.size(); ++i) r.probs[i] = static_cast<T>(s.p[i]);
  return r;
}

template <class T>
Tensor<T> spatial_softmax_backward(const Tensor<T>& fmap, const Tensor<double>& coord_grid,
                                   double grad_phi, double grad_rho, PhiReadout mode) {
  const ReadoutSums s = readout_sums(fmap, coord_grid);
  Tensor<T> g(fmap.shape());
  const double r2 = s.sin_sum * s.sin_sum + s.cos_sum * s.cos_sum;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    const double phi = coord_grid[2 * i], rho = coord_grid[2 * i + 1];
    double d = grad_rho * s.p[i] * (rho - s.rho);
    if (mode == PhiReadout::linear) {
      d += grad_phi * s.p[i] * (phi - s.phi_lin);
    } else if (r2 > 0.0) {
      // d atan2(S, C) = (C dS - S dC) / (S^2 + C^2)
      const double ds = s.p[i] * (std::sin(phi) - s.sin_sum);
      const double dc = s.p[i] * (std::cos(phi) - s.cos_sum);
      d += grad_phi * (s.cos_sum * ds - s.sin_sum * dc) / r2;
    }
    g[i] = static_cast<T>(d);
  }
  return g;
}

template <class T>
Tensor<T> rnn_step_forward(const RnnCell<T>& cell, const Tensor<T>& h_prev, const Tensor<T>& x) {
  const std::size_t hidden = cell.w_h.dim(0), in = cell.w_x.dim(1);
  RTN_REQUIRE(h_prev.size() == hidden && x.size() == in, "rnn_step: input size mismatch");
  Tensor<T> pre = cell.bias;
  kernels::gemm_acc(hidden, 1, hidden, cell.w_h.data(), hidden, 1, h_prev.data(), 1, pre.data(), 1);
  kernels::gemm_acc(hidden, 1, in, cell.w_x.data(), in, 1, x.data(), 1, pre.data(), 1);
  return tanh_forward(pre);
}

template <class T>
RnnInputGrads<T> rnn_step_backward(const RnnCell<T>& cell, const Tensor<T>& h_prev,
                                   const Tensor<T>& x, const Tensor<T>& h_next,
                                   const Tensor<T>& grad_h_next, RnnCell<T>& grads) {
  const std::size_t hidden = cell.w_h.dim(0), in = cell.w_x.dim(1);
  RTN_REQUIRE(h_prev.size() == hidden && x.size() == in && h_next.size() == hidden &&
                  grad_h_next.size() == hidden,
              "rnn_step_backward: size mismatch");
  const Tensor<T> d = tanh_backward(h_next, grad_h_next);
  for (std::size_t i = 0; i < hidden; ++i) grads.bias[i] += d[i];
  kernels::gemm_acc(hidden, hidden, 1, d.data(), 1, 1, h_prev.data(), hidden, grads.w_h.data(), hidden);
  kernels::gemm_acc(hidden, in, 1, d.data(), 1, 1, x.data(), in, grads.w_x.data(), in);
  RnnInputGrads<T> r{Tensor<T>(h_prev.shape()), Tensor<T>(x.shape())};
  kernels::gemm_acc(hidden, 1, hidden, cell.w_h.data(), 1, hidden, d.data(), 1, r.grad_h_prev.data(), 1);
  kernels::gemm_acc(in, 1, hidden, cell.w_x.data(), 1, in, d.data(), 1, r.grad_x.data(), 1);
  return r;
}

template <class T>
T cross_entropy(const Tensor<T>& probs, std::size_t label) {
  RTN_REQUIRE(label < probs.size(), "cross_entropy: label out of range");
  return -std::log(std::max(probs[label], std::numeric_limits<T>::min()));
}

template <class T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
  RTN_REQUIRE(label < logits.size(), "softmax_cross_entropy: label out of range");
  const T mx = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (auto v : logits) z += std::exp(v - mx);
  LossAndGrad<T> r{std::log(z) + mx - logits[label], softmax_forward(logits), Tensor<T>()};
  r.grad_logits = r.probs;
  r.grad_logits[label] -= T(1);
  return r;
}

#define RTN_INSTANTIATE_NNOPS(T)                                                                   \
  template Tensor<T> pad_logpolar<T>(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> pad_logpolar_backward<T>(const Tensor<T>&, std::size_t);                      \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const ConvLayer<T>&);                     \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvLayer<T>&, const Tensor<T>&); \
  template Tensor<T> conv2d_backward<T>(const Tensor<T>&, const ConvLayer<T>&, const Tensor<T>&,   \
                                        ConvLayer<T>&, bool);                                      \
  template PoolResult<T> maxpool2x2_forward<T>(const Tensor<T>&);                                  \
  template Tensor<T> maxpool2x2_backward<T>(const Shape&, const std::vector<std::uint32_t>&,       \
                                            const Tensor<T>&);                                     \
  template Tensor<T> global_avgpool_forward<T>(const Tensor<T>&);                                  \
  template Tensor<T> global_avgpool_backward<T>(const Shape&, const Tensor<T>&);                   \
  template Tensor<T> dense_forward<T>(const DenseLayer<T>&, const Tensor<T>&);                     \
  template Tensor<T> dense_backward<T>(const DenseLayer<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                       DenseLayer<T>&);                                            \
  template Tensor<T> tanh_forward<T>(const Tensor<T>&);                                            \
  template Tensor<T> tanh_backward<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> softmax_forward<T>(const Tensor<T>&);                                         \
  template ReadoutResult<T> spatial_softmax_readout<T>(const Tensor<T>&, const Tensor<double>&,    \
                                                       PhiReadout);                                \
  template Tensor<T> spatial_softmax_backward<T>(const Tensor<T>&, const Tensor<double>&, double,  \
                                                 double, PhiReadout);                              \
  template Tensor<T> rnn_step_forward<T>(const RnnCell<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template RnnInputGrads<T> rnn_step_backward<T>(const RnnCell<T>&, const Tensor<T>&,              \
                                                 const Tensor<T>&, const Tensor<T>&,               \
                                                 const Tensor<T>&, RnnCell<T>&);                   \
  template T cross_entropy<T>(const Tensor<T>&, std::size_t);                                      \
  template LossAndGrad<T> softmax_cross_entropy<T>(const Tensor<T>&, std::size_t);

RTN_INSTANTIATE_NNOPS(float)
RTN_INSTANTIATE_NNOPS(double)

}  // namespace rtn
