#pragma once

// The saccadic log-polar classifier.
//
// One glimpse: warp the image around the current center into a log-polar
// patch, run the backbone (three conv3x3 + tanh + maxpool2x2 blocks), classify
// the pooled features, feed the 96-unit classifier layer to the RNN, and let
// the 1x1-conv localisation head pick the next center from the second block's
// output. Glimpses are unrolled with shared weights; the two training tasks
// (greedy two-glimpse classification and RNN aggregation) are loss terms
// attached to particular glimpses of the same unroll.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rtn/geometry.hpp"
#include "rtn/nnops.hpp"
#include "rtn/sampler.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::array<std::size_t, 3> conv_channels{32, 64, 128};
  std::size_t fc1 = 128;
  std::size_t fc2 = 96;  // also the RNN width
  std::size_t loc_hidden = 64;
  std::size_t classes = 10;
  int patch = 32;
  PhiReadout phi_readout = PhiReadout::circular;

  static ModelConfig reference(std::size_t in_channels) { return ModelConfig{.in_channels = in_channels}; }
  /// 8x8 patches and 4-channel layers, for finite-difference checks.
  static ModelConfig tiny(std::size_t in_channels);
  void validate() const;
};

template <class T>
struct ModelParams {
  ConvLayer<T> conv1, conv2, conv3;
  DenseLayer<T> fc1, fc2, fc3;
  ConvLayer<T> loc1, loc2;
  RnnCell<T> rnn;
  DenseLayer<T> rnn_out;

  static ModelParams zeros(const ModelConfig& cfg);
  /// Glorot-uniform conv/dense weights, U(+-1/sqrt(hidden)) recurrent
  /// weights, zero biases.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  void zero();
  std::size_t parameter_count() const;

  template <class U>
  ModelParams<U> cast() const;
};

/// Calls f(name, tensor) for every parameter tensor in a fixed order.
template <class P, class F>
void for_each_tensor(P& p, F&& f) {
  f("conv1.weight", p.conv1.weights);
  f("conv1.bias", p.conv1.bias);
  f("conv2.weight", p.conv2.weights);
  f("conv2.bias", p.conv2.bias);
  f("conv3.weight", p.conv3.weights);
  f("conv3.bias", p.conv3.bias);
  f("fc1.weight", p.fc1.weights);
  f("fc1.bias", p.fc1.bias);
  f("fc2.weight", p.fc2.weights);
  f("fc2.bias", p.fc2.bias);
  f("fc3.weight", p.fc3.weights);
  f("fc3.bias", p.fc3.bias);
  f("loc1.weight", p.loc1.weights);
  f("loc1.bias", p.loc1.bias);
  f("loc2.weight", p.loc2.weights);
  f("loc2.bias", p.loc2.bias);
  f("rnn.w_x", p.rnn.w_x);
  f("rnn.w_h", p.rnn.w_h);
  f("rnn.bias", p.rnn.bias);
  f("rnn_out.weight", p.rnn_out.weights);
  f("rnn_out.bias", p.rnn_out.bias);
}

template <class T>
struct BackboneCache {
  Tensor<T> patch;
  Tensor<T> act1, act2, act3;  // post-tanh conv outputs
  PoolResult<T> pool1, pool2, pool3;
  Tensor<T> features;

  const Tensor<T>& tap() const { return pool2.out; }
};

template <class T>
struct BackboneOutput {
  Tensor<T> features;  // (conv3 channels)
  Tensor<T> tap;       // second block output, (conv2 channels, h/4, w/4)
};

template <class T>
struct ClassifyOutput {
  Tensor<T> hidden;  // 96-unit layer fed to the RNN
  Tensor<T> probs;
};

template <class T>
BackboneOutput<T> backbone_forward(const ModelParams<T>& params, const Tensor<T>& patch);
template <class T>
BackboneCache<T> backbone_forward_cached(const ModelParams<T>& params, Tensor<T> patch);

template <class T>
ClassifyOutput<T> classify(const ModelParams<T>& params, const Tensor<T>& features);

/// (h, w, 2) grid of (phi, rho) at the receptive-field center of each cell of
/// a map downsampled by `stride` from a patch laid out by `spec`.
Tensor<double> readout_coordinate_grid(const GridSpec& spec, std::size_t rows, std::size_t cols,
                                       std::size_t stride);

struct Bounds {
  double width = 1, height = 1;  // centers are clamped to [0, width-1] x [0, height-1]
};

template <class T>
struct LocaliseCache {
  Tensor<T> hidden;  // tanh(loc1(tap))
  Tensor<T> logits;  // (1, h, w)
  Tensor<double> grid;
  LogPolarPoint readout;
  CartesianPoint raw_next;
  CartesianPoint next;
  bool clamped_x = false, clamped_y = false;
};

template <class T>
LocaliseCache<T> localise_cached(const ModelParams<T>& params, const ModelConfig& cfg,
                                 const Tensor<T>& tap, const GridSpec& spec,
                                 CartesianPoint current_center, Bounds bounds);
template <class T>
CartesianPoint localise(const ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& tap,
                        const GridSpec& spec, CartesianPoint current_center, Bounds bounds);

template <class T>
struct SaccadeTrace {
  std::vector<CartesianPoint> centers;    // initial center plus one per glimpse
  std::vector<Tensor<T>> class_probs;     // RNN readout after each glimpse
  std::vector<Tensor<T>> glimpse_probs;   // single-glimpse classifier per glimpse
  std::vector<LogPolarPoint> readouts;    // localisation readout per glimpse
  std::vector<Tensor<T>> patches;         // only when requested
};

template <class T>
struct GlimpseCache {
  CartesianPoint center;
  BackboneCache<T> backbone;
  Tensor<T> fc1_act, fc2_act, glimpse_logits, glimpse_probs;
  Tensor<T> h_prev, h_next, agg_logits, agg_probs;
  LocaliseCache<T> loc;
};

template <class T>
struct Unroll {
  std::vector<GlimpseCache<T>> glimpses;
  SaccadeTrace<T> trace(bool with_patches = false) const;
};

/// Runs `steps` glimpses starting at init_center.
template <class T>
Unroll<T> unroll_forward(const ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& img,
                         CartesianPoint init_center, const GridSpec& spec, int steps);

/// Loss terms attached to an unroll. A weight of zero disables a term.
struct LossSpec {
  std::size_t label = 0;
  double greedy_weight = 0.0;     // CE of the single-glimpse classifier...
  int greedy_step = 1;            // ...at this glimpse (the second)
  double aggregate_weight = 1.0;  // CE of the RNN readout...
  int aggregate_step = -1;        // ...at this glimpse (-1 = last)
};

struct LossValues {
  double greedy = 0.0;
  double aggregate = 0.0;
  double total = 0.0;
};

template <class T>
LossValues unroll_loss(const Unroll<T>& u, const LossSpec& loss);

/// Backpropagates the weighted loss through every glimpse, including the
/// sampler and the localisation head, accumulating into grads.
template <class T>
LossValues unroll_backward(const ModelParams<T>& params, const ModelConfig& cfg,
                           const Tensor<T>& img, const GridSpec& spec, const Unroll<T>& u,
                           const LossSpec& loss, ModelParams<T>& grads);

template <class T>
struct ForwardResult {
  Tensor<T> probs;
  SaccadeTrace<T> trace;
};

/// Greedy task: localise from init_center, then classify the glimpse at the
/// chosen center.
template <class T>
ForwardResult<T> forward_greedy(const ModelParams<T>& params, const ModelConfig& cfg,
                                const Tensor<T>& img, CartesianPoint init_center,
                                const GridSpec& spec);

/// Aggregation task: S glimpses, class probabilities from the final RNN state.
template <class T>
ForwardResult<T> forward_aggregate(const ModelParams<T>& params, const ModelConfig& cfg,
                                   const Tensor<T>& img, CartesianPoint init_center,
                                   const GridSpec& spec, int saccades = 4);

LossSpec greedy_loss(std::size_t label);
LossSpec aggregate_loss(std::size_t label, int saccades);
/// Both tasks on one unroll of max(saccades, 2) glimpses.
LossSpec joint_loss(std::size_t label, int saccades, double lambda_greedy);
int unroll_length(const LossSpec& loss, int saccades);

}  // namespace rtn
