#pragma once

// Single-sample layer operations with hand-written forward and backward
// passes. Feature maps are (channels, rows, cols); in a log-polar patch rows
// are the periodic angle axis and columns the log-radius axis.
//
// Backward functions that take a `grads` layer accumulate parameter gradients
// into it (+=) and return the gradient with respect to the layer input.

#include <cstdint>
#include <vector>

#include "rtn/geometry.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

enum class PadMode { wrap_phi_reflect_rho, none };
enum class PhiReadout { circular, linear };

template <class T>
struct ConvLayer {
  Tensor<T> weights;  // (out, in, k, k), k in {1, 3}
  Tensor<T> bias;     // (out)
  PadMode pad = PadMode::wrap_phi_reflect_rho;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel() const { return weights.dim(2); }
};

template <class T>
struct DenseLayer {
  Tensor<T> weights;  // (out, in)
  Tensor<T> bias;     // (out)
};

template <class T>
struct RnnCell {
  Tensor<T> w_x;   // (hidden, in)
  Tensor<T> w_h;   // (hidden, hidden)
  Tensor<T> bias;  // (hidden)
};

// Log-polar padding: rows wrap periodically (cde|abcde|abc), columns mirror
// including the edge element (cba|abcde|edc). Requires p < H and p < W.
template <class T>
Tensor<T> pad_logpolar(const Tensor<T>& x, std::size_t p);
/// Folds the gradient of a padded map back onto the unpadded source cells.
template <class T>
Tensor<T> pad_logpolar_backward(const Tensor<T>& grad_padded, std::size_t p);

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvLayer<T>& layer);

template <class T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_weights;
  Tensor<T> grad_bias;
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvLayer<T>& layer,
                             const Tensor<T>& grad_out);
/// Accumulating form; skips the input gradient when need_grad_x is false.
template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const ConvLayer<T>& layer, const Tensor<T>& grad_out,
                          ConvLayer<T>& grads, bool need_grad_x = true);

template <class T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::uint32_t> argmax;  // flat input index per output cell
};

/// Max over disjoint 2x2 blocks; ties go to the first cell in row-major order.
template <class T>
PoolResult<T> maxpool2x2_forward(const Tensor<T>& x);
template <class T>
Tensor<T> maxpool2x2_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax,
                              const Tensor<T>& grad_out);

template <class T>
Tensor<T> global_avgpool_forward(const Tensor<T>& x);
template <class T>
Tensor<T> global_avgpool_backward(const Shape& in_shape, const Tensor<T>& grad_out);

template <class T>
Tensor<T> dense_forward(const DenseLayer<T>& layer, const Tensor<T>& x);
template <class T>
Tensor<T> dense_backward(const DenseLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& grad_y,
                         DenseLayer<T>& grads);

template <class T>
Tensor<T> tanh_forward(const Tensor<T>& x);
/// Takes the forward output y = tanh(x).
template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& grad_y);

/// Softmax over all elements, shifted by the maximum for stability.
template <class T>
Tensor<T> softmax_forward(const Tensor<T>& logits);

template <class T>
struct ReadoutResult {
  LogPolarPoint point;
  Tensor<T> probs;  // softmax over the map cells, same shape as the map
};

/// Softmax over the (1,h,w) map, then the probability-weighted mean of the
/// (h,w,2) coordinate grid of (phi, rho) values. rho is averaged linearly;
/// phi either by circular mean (atan2 of the mean unit vector) or linearly.
template <class T>
ReadoutResult<T> spatial_softmax_readout(const Tensor<T>& fmap, const Tensor<double>& coord_grid,
                                         PhiReadout mode = PhiReadout::circular);
template <class T>
Tensor<T> spatial_softmax_backward(const Tensor<T>& fmap, const Tensor<double>& coord_grid,
                                   double grad_phi, double grad_rho,
                                   PhiReadout mode = PhiReadout::circular);

/// h_next = tanh(w_h * h_prev + w_x * x + bias)
template <class T>
Tensor<T> rnn_step_forward(const RnnCell<T>& cell, const Tensor<T>& h_prev, const Tensor<T>& x);

template <class T>
struct RnnInputGrads {
  Tensor<T> grad_h_prev;
  Tensor<T> grad_x;
};

template <class T>
RnnInputGrads<T> rnn_step_backward(const RnnCell<T>& cell, const Tensor<T>& h_prev,
                                   const Tensor<T>& x, const Tensor<T>& h_next,
                                   const Tensor<T>& grad_h_next, RnnCell<T>& grads);

/// -log(probs[label]).
template <class T>
T cross_entropy(const Tensor<T>& probs, std::size_t label);

template <class T>
struct LossAndGrad {
  T loss;
  Tensor<T> probs;
  Tensor<T> grad_logits;  // probs - one_hot(label)
};

/// Softmax followed by cross-entropy, evaluated from logits via log-sum-exp.
template <class T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label);

}  // namespace rtn
