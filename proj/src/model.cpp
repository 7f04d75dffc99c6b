#include "rtn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rtn {

ModelConfig ModelConfig::tiny(std::size_t in_channels) {
  ModelConfig c;
  c.in_channels = in_channels;
  c.conv_channels = {4, 4, 4};
  c.fc1 = 4;
  c.fc2 = 4;
  c.loc_hidden = 4;
  c.patch = 8;
  return c;
}

void ModelConfig::validate() const {
  RTN_REQUIRE(in_channels >= 1, "ModelConfig: in_channels must be positive");
  RTN_REQUIRE(patch >= 8 && patch % 8 == 0, "ModelConfig: patch side must be a positive multiple of 8");
  for (auto c : conv_channels) RTN_REQUIRE(c >= 1, "ModelConfig: conv channels must be positive");
  RTN_REQUIRE(fc1 >= 1 && fc2 >= 1 && loc_hidden >= 1 && classes >= 2,
              "ModelConfig: layer widths must be positive");
}

namespace {

template <class T>
ConvLayer<T> conv_zeros(std::size_t out, std::size_t in, std::size_t k) {
  return {Tensor<T>({out, in, k, k}), Tensor<T>({out}),
          k == 3 ? PadMode::wrap_phi_reflect_rho : PadMode::none};
}

template <class T>
DenseLayer<T> dense_zeros(std::size_t out, std::size_t in) {
  return {Tensor<T>({out, in}), Tensor<T>({out})};
}

template <class T>
void fill_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t) v = static_cast<T>(u(rng));
}

template <class T>
void glorot(Tensor<T>& w, std::mt19937_64& rng) {
  const std::size_t receptive = w.rank() == 4 ? w.dim(2) * w.dim(3) : 1;
  const double fan_in = double(w.dim(1) * receptive), fan_out = double(w.dim(0) * receptive);
  fill_uniform(w, std::sqrt(6.0 / (fan_in + fan_out)), rng);
}

}  // namespace

template <class T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const auto [c1, c2, c3] = cfg.conv_channels;
  ModelParams p;
  p.conv1 = conv_zeros<T>(c1, cfg.in_channels, 3);
  p.conv2 = conv_zeros<T>(c2, c1, 3);
  p.conv3 = conv_zeros<T>(c3, c2, 3);
  p.fc1 = dense_zeros<T>(cfg.fc1, c3);
  p.fc2 = dense_zeros<T>(cfg.fc2, cfg.fc1);
  p.fc3 = dense_zeros<T>(cfg.classes, cfg.fc2);
  p.loc1 = conv_zeros<T>(cfg.loc_hidden, c2, 1);
  p.loc2 = conv_zeros<T>(1, cfg.loc_hidden, 1);
  p.rnn = {Tensor<T>({cfg.fc2, cfg.fc2}), Tensor<T>({cfg.fc2, cfg.fc2}), Tensor<T>({cfg.fc2})};
  p.rnn_out = dense_zeros<T>(cfg.classes, cfg.fc2);
  return p;
}

template <class T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zeros(cfg);
  std::mt19937_64 rng(seed);
  for (auto* w : {&p.conv1.weights, &p.conv2.weights, &p.conv3.weights, &p.fc1.weights,
                  &p.fc2.weights, &p.fc3.weights, &p.loc1.weights, &p.loc2.weights, &p.rnn.w_x,
                  &p.rnn_out.weights})
    glorot(*w, rng);
  fill_uniform(p.rnn.w_h, 1.0 / std::sqrt(double(cfg.fc2)), rng);
  return p;
}

template <class T>
void ModelParams<T>::zero() {
  for_each_tensor(*this, [](const std::string&, Tensor<T>& t) { t.zero(); });
}

template <class T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  auto cv = [](const Tensor<T>& t) { return Tensor<U>::cast_from(t); };
  auto conv = [&](const ConvLayer<T>& l) { return ConvLayer<U>{cv(l.weights), cv(l.bias), l.pad}; };
  auto dense = [&](const DenseLayer<T>& l) { return DenseLayer<U>{cv(l.weights), cv(l.bias)}; };
  out.conv1 = conv(conv1);
  out.conv2 = conv(conv2);
  out.conv3 = conv(conv3);
  out.fc1 = dense(fc1);
  out.fc2 = dense(fc2);
  out.fc3 = dense(fc3);
  out.loc1 = conv(loc1);
  out.loc2 = conv(loc2);
  out.rnn = {cv(rnn.w_x), cv(rnn.w_h), cv(rnn.bias)};
  out.rnn_out = dense(rnn_out);
  return out;
}

// ---------------------------------------------------------------------------
// Single-glimpse pieces

template <class T>
BackboneCache<T> backbone_forward_cached(const ModelParams<T>& params, Tensor<T> patch) {
  RTN_REQUIRE(patch.rank() == 3 && patch.dim(1) == patch.dim(2) && patch.dim(1) % 8 == 0,
              "backbone: patch must be (C, s, s) with s a multiple of 8, got " +
                  shape_to_string(patch.shape()));
  BackboneCache<T> c;
  c.patch = std::move(patch);
  c.act1 = tanh_forward(conv2d_forward(c.patch, params.conv1));
  c.pool1 = maxpool2x2_forward(c.act1);
  c.act2 = tanh_forward(conv2d_forward(c.pool1.out, params.conv2));
  c.pool2 = maxpool2x2_forward(c.act2);
  c.act3 = tanh_forward(conv2d_forward(c.pool2.out, params.conv3));
  c.pool3 = maxpool2x2_forward(c.act3);
  c.features = global_avgpool_forward(c.pool3.out);
  return c;
}

template <class T>
BackboneOutput<T> backbone_forward(const ModelParams<T>& params, const Tensor<T>& patch) {
  BackboneCache<T> c = backbone_forward_cached(params, patch);
  return {std::move(c.features), std::move(c.pool2.out)};
}

template <class T>
ClassifyOutput<T> classify(const ModelParams<T>& params, const Tensor<T>& features) {
  Tensor<T> h1 = tanh_forward(dense_forward(params.fc1, features));
  Tensor<T> h2 = tanh_forward(dense_forward(params.fc2, h1));
  return {h2, softmax_forward(dense_forward(params.fc3, h2))};
}

Tensor<double> readout_coordinate_grid(const GridSpec& spec, std::size_t rows, std::size_t cols,
                                       std::size_t stride) {
  const double offset = (double(stride) - 1.0) / 2.0;
  Tensor<double> g({rows, cols, 2});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      g(i, j, 0) = spec.phi_at(double(stride * i) + offset);
      g(i, j, 1) = spec.rho_at(double(stride * j) + offset);
    }
  return g;
}

template <class T>
LocaliseCache<T> localise_cached(const ModelParams<T>& params, const ModelConfig& cfg,
                                 const Tensor<T>& tap, const GridSpec& spec,
                                 CartesianPoint current_center, Bounds bounds) {
  RTN_REQUIRE(tap.rank() == 3, "localise: tap must be (C,h,w)");
  RTN_REQUIRE(spec.h_prime % static_cast<int>(tap.dim(1)) == 0 &&
                  spec.h_prime / static_cast<int>(tap.dim(1)) ==
                      spec.w_prime / static_cast<int>(tap.dim(2)),
              "localise: tap does not evenly subdivide the patch grid");
  LocaliseCache<T> c;
  c.hidden = tanh_forward(conv2d_forward(tap, params.loc1));
  c.logits = conv2d_forward(c.hidden, params.loc2);
  c.grid = readout_coordinate_grid(spec, tap.dim(1), tap.dim(2), spec.h_prime / tap.dim(1));
  c.readout = spatial_softmax_readout(c.logits, c.grid, cfg.phi_readout).point;
  c.raw_next = from_log_polar(c.readout, current_center);
  const double max_x = bounds.width - 1.0, max_y = bounds.height - 1.0;
  c.clamped_x = c.raw_next.x < 0.0 || c.raw_next.x > max_x;
  c.clamped_y = c.raw_next.y < 0.0 || c.raw_next.y > max_y;
  c.next = {std::clamp(c.raw_next.x, 0.0, max_x), std::clamp(c.raw_next.y, 0.0, max_y)};
  return c;
}

template <class T>
CartesianPoint localise(const ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& tap,
                        const GridSpec& spec, CartesianPoint current_center, Bounds bounds) {
  return localise_cached(params, cfg, tap, spec, current_center, bounds).next;
}

// ---------------------------------------------------------------------------
// Unrolled glimpse sequence

template <class T>
SaccadeTrace<T> Unroll<T>::trace(bool with_patches) const {
  SaccadeTrace<T> t;
  if (glimpses.empty()) return t;
  t.centers.push_back(glimpses.front().center);
  for (const auto& g : glimpses) {
    t.centers.push_back(g.loc.next);
    t.class_probs.push_back(g.agg_probs);
    t.glimpse_probs.push_back(g.glimpse_probs);
    t.readouts.push_back(g.loc.readout);
    if (with_patches) t.patches.push_back(g.backbone.patch);
  }
  return t;
}

template <class T>
Unroll<T> unroll_forward(const ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& img,
                         CartesianPoint init_center, const GridSpec& spec, int steps) {
  RTN_REQUIRE(steps >= 1, "unroll: at least one glimpse is required");
  RTN_REQUIRE(img.rank() == 3 && img.dim(0) == cfg.in_channels,
              "unroll: image channels do not match the model");
  RTN_REQUIRE(spec.h_prime == cfg.patch && spec.w_prime == cfg.patch,
              "unroll: grid spec does not match the model patch size");
  const Bounds bounds{double(img.dim(2)), double(img.dim(1))};
  Unroll<T> u;
  u.glimpses.reserve(steps);
  CartesianPoint center = init_center;
  Tensor<T> h(Shape{cfg.fc2});
  for (int s = 0; s < steps; ++s) {
    GlimpseCache<T> g;
    g.center = center;
    g.backbone = backbone_forward_cached(params, warp(img, SamplerParams{center, spec}));
    g.fc1_act = tanh_forward(dense_forward(params.fc1, g.backbone.features));
    g.fc2_act = tanh_forward(dense_forward(params.fc2, g.fc1_act));
    g.glimpse_logits = dense_forward(params.fc3, g.fc2_act);
    g.glimpse_probs = softmax_forward(g.glimpse_logits);
    g.h_prev = h;
    g.h_next = rnn_step_forward(params.rnn, h, g.fc2_act);
    g.agg_logits = dense_forward(params.rnn_out, g.h_next);
    g.agg_probs = softmax_forward(g.agg_logits);
    g.loc = localise_cached(params, cfg, g.backbone.tap(), spec, center, bounds);
    h = g.h_next;
    center = g.loc.next;
    u.glimpses.push_back(std::move(g));
  }
  return u;
}

namespace {

int resolve_step(int step, std::size_t n) { return step < 0 ? static_cast<int>(n) + step : step; }

}  // namespace

template <class T>
LossValues unroll_loss(const Unroll<T>& u, const LossSpec& loss) {
  LossValues v;
  const std::size_t n = u.glimpses.size();
  if (loss.greedy_weight != 0.0) {
    const int g = resolve_step(loss.greedy_step, n);
    RTN_REQUIRE(g >= 0 && g < static_cast<int>(n), "loss: greedy glimpse outside the unroll");
    v.greedy = softmax_cross_entropy(u.glimpses[g].glimpse_logits, loss.label).loss;
  }
  if (loss.aggregate_weight != 0.0) {
    const int a = resolve_step(loss.aggregate_step, n);
    RTN_REQUIRE(a >= 0 && a < static_cast<int>(n), "loss: aggregate glimpse outside the unroll");
    v.aggregate = softmax_cross_entropy(u.glimpses[a].agg_logits, loss.label).loss;
  }
  v.total = loss.greedy_weight * v.greedy + loss.aggregate_weight * v.aggregate;
  return v;
}

namespace {

template <class T>
Tensor<T> scaled(Tensor<T> t, double w) {
  for (auto& v : t) v = static_cast<T>(v * w);
  return t;
}

template <class T>
bool all_zero(const Tensor<T>& t) {
  return std::all_of(t.begin(), t.end(), [](T v) { return v == T(0); });
}

// Gradient of the localisation output (next center) back to the tap and the
// current center. Returns the tap gradient; adds the center pass-through.
template <class T>
Tensor<T> localise_backward(const ModelParams<T>& params, const ModelConfig& cfg,
                            const Tensor<T>& tap, const LocaliseCache<T>& c,
                            std::array<double, 2> grad_next, std::array<double, 2>& grad_center,
                            ModelParams<T>& grads) {
  const double gx = c.clamped_x ? 0.0 : grad_next[0];
  const double gy = c.clamped_y ? 0.0 : grad_next[1];
  grad_center[0] += gx;
  grad_center[1] += gy;
  const double r = std::exp(c.readout.rho);
  const double cs = std::cos(c.readout.phi), sn = std::sin(c.readout.phi);
  const double grad_rho = r * (gx * cs + gy * sn);
  const double grad_phi = r * (-gx * sn + gy * cs);
  const Tensor<T> g_logits =
      spatial_softmax_backward(c.logits, c.grid, grad_phi, grad_rho, cfg.phi_readout);
  const Tensor<T> g_hidden = conv2d_backward(c.hidden, params.loc2, g_logits, grads.loc2);
  return conv2d_backward(tap, params.loc1, tanh_backward(c.hidden, g_hidden), grads.loc1);
}

}  // namespace

template <class T>
LossValues unroll_backward(const ModelParams<T>& params, const ModelConfig& cfg,
                           const Tensor<T>& img, const GridSpec& spec, const Unroll<T>& u,
                           const LossSpec& loss, ModelParams<T>& grads) {
  const LossValues values = unroll_loss(u, loss);
  const int n = static_cast<int>(u.glimpses.size());
  const int greedy_at = loss.greedy_weight != 0.0 ? resolve_step(loss.greedy_step, n) : -1;
  const int agg_at = loss.aggregate_weight != 0.0 ? resolve_step(loss.aggregate_step, n) : -1;
  const int last_needed = std::max(greedy_at, agg_at);

  Tensor<T> grad_h(Shape{cfg.fc2});
  std::array<double, 2> grad_next_center{0.0, 0.0};  // d loss / d (center after glimpse s)
  for (int s = last_needed; s >= 0; --s) {
    const GlimpseCache<T>& g = u.glimpses[s];
    const BackboneCache<T>& bb = g.backbone;
    std::array<double, 2> grad_center{0.0, 0.0};

    Tensor<T> grad_tap(bb.tap().shape());
    if (grad_next_center[0] != 0.0 || grad_next_center[1] != 0.0)
      grad_tap = localise_backward(params, cfg, bb.tap(), g.loc, grad_next_center, grad_center, grads);

    if (s == agg_at) {
      const auto ce = softmax_cross_entropy(g.agg_logits, loss.label);
      grad_h += dense_backward(params.rnn_out, g.h_next, scaled(ce.grad_logits, loss.aggregate_weight),
                               grads.rnn_out);
    }
    Tensor<T> grad_fc2(Shape{cfg.fc2});
    if (!all_zero(grad_h)) {
      RnnInputGrads<T> r = rnn_step_backward(params.rnn, g.h_prev, g.fc2_act, g.h_next, grad_h, grads.rnn);
      grad_h = std::move(r.grad_h_prev);
      grad_fc2 = std::move(r.grad_x);
    } else {
      grad_h.zero();
    }
    if (s == greedy_at) {
      const auto ce = softmax_cross_entropy(g.glimpse_logits, loss.label);
      grad_fc2 += dense_backward(params.fc3, g.fc2_act, scaled(ce.grad_logits, loss.greedy_weight),
                                 grads.fc3);
    }

    const Tensor<T> grad_fc1 =
        dense_backward(params.fc2, g.fc1_act, tanh_backward(g.fc2_act, grad_fc2), grads.fc2);
    const Tensor<T> grad_feat =
        dense_backward(params.fc1, bb.features, tanh_backward(g.fc1_act, grad_fc1), grads.fc1);
    Tensor<T> grad = global_avgpool_backward(bb.pool3.out.shape(), grad_feat);
    grad = maxpool2x2_backward(bb.act3.shape(), bb.pool3.argmax, grad);
    grad = conv2d_backward(bb.pool2.out, params.conv3, tanh_backward(bb.act3, grad), grads.conv3);
    grad += grad_tap;
    grad = maxpool2x2_backward(bb.act2.shape(), bb.pool2.argmax, grad);
    grad = conv2d_backward(bb.pool1.out, params.conv2, tanh_backward(bb.act2, grad), grads.conv2);
    grad = maxpool2x2_backward(bb.act1.shape(), bb.pool1.argmax, grad);
    // The first glimpse's center is an input, so its patch gradient is unused.
    const bool need_patch_grad = s > 0;
    const Tensor<T> grad_patch = conv2d_backward(bb.patch, params.conv1, tanh_backward(bb.act1, grad),
                                                 grads.conv1, need_patch_grad);
    if (need_patch_grad) {
      const auto gc = warp_backward(img, SamplerParams{g.center, spec}, grad_patch);
      grad_center[0] += gc[0];
      grad_center[1] += gc[1];
    }
    grad_next_center = grad_center;
  }
  return values;
}

LossSpec greedy_loss(std::size_t label) {
  return LossSpec{label, 1.0, 1, 0.0, -1};
}

LossSpec aggregate_loss(std::size_t label, int saccades) {
  RTN_REQUIRE(saccades >= 1, "aggregate_loss: saccade count must be >= 1");
  return LossSpec{label, 0.0, 1, 1.0, saccades - 1};
}

LossSpec joint_loss(std::size_t label, int saccades, double lambda_greedy) {
  RTN_REQUIRE(saccades >= 1, "joint_loss: saccade count must be >= 1");
  return LossSpec{label, lambda_greedy, 1, 1.0, saccades - 1};
}

int unroll_length(const LossSpec& loss, int saccades) {
  int n = saccades;
  if (loss.greedy_weight != 0.0) n = std::max(n, loss.greedy_step + 1);
  if (loss.aggregate_weight != 0.0 && loss.aggregate_step >= 0) n = std::max(n, loss.aggregate_step + 1);
  return n;
}

template <class T>
ForwardResult<T> forward_greedy(const ModelParams<T>& params, const ModelConfig& cfg,
                                const Tensor<T>& img, CartesianPoint init_center,
                                const GridSpec& spec) {
  const Unroll<T> u = unroll_forward(params, cfg, img, init_center, spec, 2);
  SaccadeTrace<T> t = u.trace();
  // The first glimpse only localises; the trace keeps the initial center and
  // the two centers it produced.
  t.centers.resize(3);
  return {u.glimpses[1].glimpse_probs, std::move(t)};
}

template <class T>
ForwardResult<T> forward_aggregate(const ModelParams<T>& params, const ModelConfig& cfg,
                                   const Tensor<T>& img, CartesianPoint init_center,
                                   const GridSpec& spec, int saccades) {
  RTN_REQUIRE(saccades >= 1, "forward_aggregate: saccade count must be >= 1");
  const Unroll<T> u = unroll_forward(params, cfg, img, init_center, spec, saccades);
  return {u.glimpses.back().agg_probs, u.trace()};
}

#define RTN_INSTANTIATE_MODEL(T)                                                                   \
  template struct ModelParams<T>;                                                                  \
  template BackboneOutput<T> backbone_forward<T>(const ModelParams<T>&, const Tensor<T>&);        \
  template BackboneCache<T> backbone_forward_cached<T>(const ModelParams<T>&, Tensor<T>);         \
  template ClassifyOutput<T> classify<T>(const ModelParams<T>&, const Tensor<T>&);                 \
  template LocaliseCache<T> localise_cached<T>(const ModelParams<T>&, const ModelConfig&,          \
                                               const Tensor<T>&, const GridSpec&, CartesianPoint, \
                                               Bounds);                                            \
  template CartesianPoint localise<T>(const ModelParams<T>&, const ModelConfig&, const Tensor<T>&, \
                                      const GridSpec&, CartesianPoint, Bounds);                    \
  template struct Unroll<T>;                                                                       \
  template Unroll<T> unroll_forward<T>(const ModelParams<T>&, const ModelConfig&, const Tensor<T>&, \
                                       CartesianPoint, const GridSpec&, int);                      \
  template LossValues unroll_loss<T>(const Unroll<T>&, const LossSpec&);                           \
  template LossValues unroll_backward<T>(const ModelParams<T>&, const ModelConfig&,                \
                                         const Tensor<T>&, const GridSpec&, const Unroll<T>&,      \
                                         const LossSpec&, ModelParams<T>&);                        \
  template ForwardResult<T> forward_greedy<T>(const ModelParams<T>&, const ModelConfig&,           \
                                              const Tensor<T>&, CartesianPoint, const GridSpec&);  \
  template ForwardResult<T> forward_aggregate<T>(const ModelParams<T>&, const ModelConfig&,        \
                                                 const Tensor<T>&, CartesianPoint,                 \
                                                 const GridSpec&, int);

RTN_INSTANTIATE_MODEL(float)
RTN_INSTANTIATE_MODEL(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace rtn
