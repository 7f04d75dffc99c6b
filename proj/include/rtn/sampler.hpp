#pragma once

// Differentiable log-polar sampling of an image around a fixation center.
//
// Images are (channels, height, width) tensors; pixel (row y, column x) sits at
// integer coordinates. Sampling is bilinear with zero padding: neighbours
// outside the image contribute 0, so the warp is continuous everywhere and
// differentiable except on integer grid lines, where the right-continuous
// sub-gradient is used.

#include <array>

#include "rtn/geometry.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

struct SamplerParams {
  CartesianPoint center;
  GridSpec spec;
};

/// Square patch grid with r_min = 1 px and r_max = image diagonal.
GridSpec default_grid_spec(int patch_side, std::size_t image_h, std::size_t image_w);

/// (h', w', 2) tensor of source coordinates (x, y) for every grid cell.
template <class T>
Tensor<T> reverse_map(const SamplerParams& params);

template <class T>
T bilinear_sample(const Tensor<T>& img, std::size_t channel, double x, double y);

/// (C, h', w') log-polar patch.
template <class T>
Tensor<T> warp(const Tensor<T>& img, const SamplerParams& params);

/// Gradient of sum(grad_patch * warp(img, params)) with respect to the center.
/// When grad_img is non-null the image gradient is accumulated into it.
template <class T>
std::array<T, 2> warp_backward(const Tensor<T>& img, const SamplerParams& params,
                               const Tensor<T>& grad_patch, Tensor<T>* grad_img = nullptr);

// Whole-image bilinear resampling used for augmentation and equivariance checks.

/// out(p) = img(rotate_point(p, pole, -angle)): content turns by +angle.
template <class T>
Tensor<T> rotate_image(const Tensor<T>& img, CartesianPoint pole, double angle);

/// out(p) = img(pole + (p - pole) / c): content grows by factor c about pole.
template <class T>
Tensor<T> scale_image(const Tensor<T>& img, CartesianPoint pole, double c);

}  // namespace rtn
