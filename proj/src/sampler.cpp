#include "rtn/sampler.hpp"

#include <cmath>
#include <vector>

namespace rtn {

namespace {

template <class T>
void require_image(const Tensor<T>& img) {
  RTN_REQUIRE(img.rank() == 3, "image must have shape (C,H,W), got " + shape_to_string(img.shape()));
}

// Source coordinates of every grid cell, row-major, evaluated in double.
struct SourceGrid {
  std::vector<double> x, y;
};

SourceGrid source_grid(const SamplerParams& p) {
  p.spec.validate();
  const int h = p.spec.h_prime, w = p.spec.w_prime;
  std::vector<double> cosv(h), sinv(h), radius(w);
  for (int i = 0; i < h; ++i) {
    const double phi = p.spec.phi_at(i);
    cosv[i] = std::cos(phi);
    sinv[i] = std::sin(phi);
  }
  for (int j = 0; j < w; ++j) radius[j] = std::exp(p.spec.rho_at(j));
  SourceGrid g;
  g.x.resize(static_cast<std::size_t>(h) * w);
  g.y.resize(g.x.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      g.x[i * w + j] = radius[j] * cosv[i] + p.center.x;
      g.y[i * w + j] = radius[j] * sinv[i] + p.center.y;
    }
  return g;
}

// Four-neighbour stencil of a sample point; weights follow the corner order
// (y0,x0), (y0,x0+1), (y0+1,x0), (y0+1,x0+1).
struct Stencil {
  long x0, y0;
  double dx, dy;
  bool any_inside;
};

Stencil stencil(double x, double y, long width, long height) {
  const double fx = std::floor(x), fy = std::floor(y);
  Stencil s{static_cast<long>(fx), static_cast<long>(fy), x - fx, y - fy, true};
  s.any_inside = s.x0 >= -1 && s.x0 < width && s.y0 >= -1 && s.y0 < height;
  return s;
}

template <class T>
struct Corners {
  T v00, v01, v10, v11;
};

template <class T>
Corners<T> corners(const T* plane, const Stencil& s, long width, long height) {
  auto at = [&](long yy, long xx) -> T {
    return (xx >= 0 && xx < width && yy >= 0 && yy < height) ? plane[yy * width + xx] : T(0);
  };
  return {at(s.y0, s.x0), at(s.y0, s.x0 + 1), at(s.y0 + 1, s.x0), at(s.y0 + 1, s.x0 + 1)};
}

template <class T>
T interpolate(const Corners<T>& c, const Stencil& s) {
  const T dx = static_cast<T>(s.dx), dy = static_cast<T>(s.dy);
  return (T(1) - dx) * (T(1) - dy) * c.v00 + dx * (T(1) - dy) * c.v01 + (T(1) - dx) * dy * c.v10 +
         dx * dy * c.v11;
}

template <class T, class SourceOf>
Tensor<T> resample(const Tensor<T>& img, SourceOf source_of) {
  require_image(img);
  const long c = static_cast<long>(img.dim(0)), h = static_cast<long>(img.dim(1)),
             w = static_cast<long>(img.dim(2));
  Tensor<T> out(img.shape());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const CartesianPoint src = source_of(CartesianPoint{double(x), double(y)});
      const Stencil s = stencil(src.x, src.y, w, h);
      if (!s.any_inside) continue;
      for (long ch = 0; ch < c; ++ch)
        out(ch, y, x) = interpolate(corners(img.data() + ch * h * w, s, w, h), s);
    }
  return out;
}

}  // namespace

GridSpec default_grid_spec(int patch_side, std::size_t image_h, std::size_t image_w) {
  GridSpec spec{patch_side, patch_side, 1.0, std::hypot(double(image_h), double(image_w))};
  spec.validate();
  return spec;
}

template <class T>
Tensor<T> reverse_map(const SamplerParams& params) {
  const SourceGrid g = source_grid(params);
  Tensor<T> out({std::size_t(params.spec.h_prime), std::size_t(params.spec.w_prime), 2});
  for (std::size_t k = 0; k < g.x.size(); ++k) {
    out[2 * k] = static_cast<T>(g.x[k]);
    out[2 * k + 1] = static_cast<T>(g.y[k]);
  }
  return out;
}

template <class T>
T bilinear_sample(const Tensor<T>& img, std::size_t channel, double x, double y) {
  require_image(img);
  RTN_REQUIRE(channel < img.dim(0), "bilinear_sample: channel out of range");
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const Stencil s = stencil(x, y, w, h);
  if (!s.any_inside) return T(0);
  return interpolate(corners(img.data() + channel * h * w, s, w, h), s);
}

template <class T>
Tensor<T> warp(const Tensor<T>& img, const SamplerParams& params) {
  require_image(img);
  const SourceGrid g = source_grid(params);
  const std::size_t c = img.dim(0);
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const std::size_t cells = g.x.size();
  Tensor<T> patch({c, std::size_t(params.spec.h_prime), std::size_t(params.spec.w_prime)});
  for (std::size_t k = 0; k < cells; ++k) {
    const Stencil s = stencil(g.x[k], g.y[k], w, h);
    if (!s.any_inside) continue;
    for (std::size_t ch = 0; ch < c; ++ch)
      patch[ch * cells + k] = interpolate(corners(img.data() + ch * h * w, s, w, h), s);
  }
  return patch;
}

template <class T>
std::array<T, 2> warp_backward(const Tensor<T>& img, const SamplerParams& params,
                               const Tensor<T>& grad_patch, Tensor<T>* grad_img) {
  require_image(img);
  const std::size_t c = img.dim(0);
  require_shape(grad_patch, {c, std::size_t(params.spec.h_prime), std::size_t(params.spec.w_prime)},
                "warp_backward grad_patch");
  if (grad_img) require_shape(*grad_img, img.shape(), "warp_backward grad_img");
  const SourceGrid g = source_grid(params);
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const std::size_t cells = g.x.size();

  T gx = 0, gy = 0;
  for (std::size_t k = 0; k < cells; ++k) {
    const Stencil s = stencil(g.x[k], g.y[k], w, h);
    if (!s.any_inside) continue;
    const T dx = static_cast<T>(s.dx), dy = static_cast<T>(s.dy);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T go = grad_patch[ch * cells + k];
      if (go == T(0)) continue;
      const T* plane = img.data() + ch * h * w;
      const Corners<T> v = corners(plane, s, w, h);
      // Sample coordinates are the center plus a constant offset, so
      // d(sample)/d(center) is the identity.
      gx += go * ((T(1) - dy) * (v.v01 - v.v00) + dy * (v.v11 - v.v10));
      gy += go * ((T(1) - dx) * (v.v10 - v.v00) + dx * (v.v11 - v.v01));
      if (grad_img) {
        T* gplane = grad_img->data() + ch * h * w;
        auto scatter = [&](long yy, long xx, T weight) {
          if (xx >= 0 && xx < w && yy >= 0 && yy < h) gplane[yy * w + xx] += go * weight;
        };
        scatter(s.y0, s.x0, (T(1) - dx) * (T(1) - dy));
        scatter(s.y0, s.x0 + 1, dx * (T(1) - dy));
        scatter(s.y0 + 1, s.x0, (T(1) - dx) * dy);
        scatter(s.y0 + 1, s.x0 + 1, dx * dy);
      }
    }
  }
  return {gx, gy};
}

template <class T>
Tensor<T> rotate_image(const Tensor<T>& img, CartesianPoint pole, double angle) {
  return resample(img, [&](CartesianPoint p) { return rotate_point(p, pole, -angle); });
}

template <class T>
Tensor<T> scale_image(const Tensor<T>& img, CartesianPoint pole, double c) {
  if (!(c > 0.0)) throw DomainError("scale_image: factor must be positive");
  return resample(img, [&](CartesianPoint p) { return scale_point(p, pole, 1.0 / c); });
}

#define RTN_INSTANTIATE_SAMPLER(T)                                                            \
  template Tensor<T> reverse_map<T>(const SamplerParams&);                                    \
  template T bilinear_sample<T>(const Tensor<T>&, std::size_t, double, double);               \
  template Tensor<T> warp<T>(const Tensor<T>&, const SamplerParams&);                         \
  template std::array<T, 2> warp_backward<T>(const Tensor<T>&, const SamplerParams&,          \
                                             const Tensor<T>&, Tensor<T>*);                   \
  template Tensor<T> rotate_image<T>(const Tensor<T>&, CartesianPoint, double);               \
  template Tensor<T> scale_image<T>(const Tensor<T>&, CartesianPoint, double);

RTN_INSTANTIATE_SAMPLER(float)
RTN_INSTANTIATE_SAMPLER(double)

}  // namespace rtn
