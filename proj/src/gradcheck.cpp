#include "rtn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "rtn/errors.hpp"
#include "rtn/model.hpp"
#include "rtn/nnops.hpp"
#include "rtn/sampler.hpp"

namespace rtn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names = {"sampler", "padding", "conv",  "maxpool",
                                                 "avgpool", "dense",   "tanh",  "softmax_ce",
                                                 "spatial_softmax", "rnn", "model"};
  return names;
}

namespace {

using Rng = std::mt19937_64;

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t) v = u(rng);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Checks analytic[i] against central differences of f at every coordinate of
// x (or a strided subset when max_coords is smaller than x.size()). A
// coordinate is skipped when the signature of the perturbed evaluations
// differs, i.e. the step crossed a non-differentiable point.
struct Probe {
  std::function<double()> f;
  std::function<std::vector<long>()> signature = {};  // optional
};

void check_coords(GradcheckReport& rep, Tensor<double>& x, const Tensor<double>& analytic,
                  const Probe& probe, const GradcheckOptions& opts, std::size_t max_coords = 0) {
  const std::size_t n = x.size();
  const std::size_t stride = (max_coords && n > max_coords) ? (n + max_coords - 1) / max_coords : 1;
  for (std::size_t i = 0; i < n; i += stride) {
    const double saved = x[i];
    x[i] = saved + opts.eps;
    const double fp = probe.f();
    const auto sp = probe.signature ? probe.signature() : std::vector<long>{};
    x[i] = saved - opts.eps;
    const double fm = probe.f();
    const auto sm = probe.signature ? probe.signature() : std::vector<long>{};
    x[i] = saved;
    if (sp != sm) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * opts.eps);
    rep.max_rel_err = std::max(rep.max_rel_err, relative_error(analytic[i], numeric, opts.floor));
    ++rep.checked;
  }
}

void check_scalar(GradcheckReport& rep, double& x, double analytic, const Probe& probe,
                  const GradcheckOptions& opts) {
  Tensor<double> view({1});
  view[0] = x;
  Tensor<double> a({1});
  a[0] = analytic;
  Probe p{[&] {
            x = view[0];
            return probe.f();
          },
          probe.signature ? std::function<std::vector<long>()>([&] {
            x = view[0];
            return probe.signature();
          })
                          : std::function<std::vector<long>()>{}};
  check_coords(rep, view, a, p, opts);
  x = view[0];
}

std::vector<long> sample_cells(const SamplerParams& sp) {
  const Tensor<double> m = reverse_map<double>(sp);
  std::vector<long> sig(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) sig[i] = static_cast<long>(std::floor(m[i]));
  return sig;
}

// --- components -------------------------------------------------------------

GradcheckReport check_sampler(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"sampler", 0.0, opts.op_threshold, 0, 0};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < opts.trials; ++t) {
    const std::size_t h = 12 + rng() % 9, w = 12 + rng() % 9, c = 1 + rng() % 2;
    Tensor<double> img = random_tensor({c, h, w}, rng, 0.0, 1.0);
    SamplerParams sp{{2.0 + (w - 4.0) * u(rng), 2.0 + (h - 4.0) * u(rng)}, default_grid_spec(8, h, w)};
    const Tensor<double> proj = random_tensor({c, 8, 8}, rng);
    Tensor<double> grad_img(img.shape());
    const auto gc = warp_backward(img, sp, proj, &grad_img);
    Probe probe{[&] { return dot(warp(img, sp), proj); }, [&] { return sample_cells(sp); }};
    check_scalar(rep, sp.center.x, gc[0], probe, opts);
    check_scalar(rep, sp.center.y, gc[1], probe, opts);
    check_coords(rep, img, grad_img, {probe.f, {}}, opts, 64);
  }
  return rep;
}

GradcheckReport check_padding(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"padding", 0.0, opts.op_threshold, 0, 0};
  for (int t = 0; t < 4; ++t) {
    const std::size_t p = 1 + t % 2;
    Tensor<double> x = random_tensor({2, 5, 6}, rng);
    const Tensor<double> proj = random_tensor(pad_logpolar(x, p).shape(), rng);
    check_coords(rep, x, pad_logpolar_backward(proj, p), {[&] { return dot(pad_logpolar(x, p), proj); }},
                 opts);
  }
  return rep;
}

GradcheckReport check_conv(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"conv", 0.0, opts.op_threshold, 0, 0};
  const std::pair<std::size_t, PadMode> variants[] = {
      {3, PadMode::wrap_phi_reflect_rho}, {1, PadMode::none}, {1, PadMode::wrap_phi_reflect_rho}};
  for (const auto& [k, pad] : variants) {
    ConvLayer<double> layer{random_tensor({3, 2, k, k}, rng), random_tensor({3}, rng), pad};
    Tensor<double> x = random_tensor({2, 6, 5}, rng);
    const Tensor<double> proj = random_tensor(conv2d_forward(x, layer).shape(), rng);
    const ConvGrads<double> g = conv2d_backward(x, layer, proj);
    const auto f = [&] { return dot(conv2d_forward(x, layer), proj); };
    check_coords(rep, x, g.grad_x, {f}, opts);
    check_coords(rep, layer.weights, g.grad_weights, {f}, opts);
    check_coords(rep, layer.bias, g.grad_bias, {f}, opts);
  }
  return rep;
}

GradcheckReport check_maxpool(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"maxpool", 0.0, opts.op_threshold, 0, 0};
  for (int t = 0; t < 4; ++t) {
    Tensor<double> x = random_tensor({2, 6, 4}, rng);
    const auto fwd = maxpool2x2_forward(x);
    const Tensor<double> proj = random_tensor(fwd.out.shape(), rng);
    const Tensor<double> g = maxpool2x2_backward(x.shape(), fwd.argmax, proj);
    Probe probe{[&] { return dot(maxpool2x2_forward(x).out, proj); }, [&] {
                  const auto a = maxpool2x2_forward(x).argmax;
                  return std::vector<long>(a.begin(), a.end());
                }};
    check_coords(rep, x, g, probe, opts);
  }
  return rep;
}

GradcheckReport check_avgpool(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"avgpool", 0.0, opts.op_threshold, 0, 0};
  Tensor<double> x = random_tensor({3, 4, 5}, rng);
  const Tensor<double> proj = random_tensor({3}, rng);
  check_coords(rep, x, global_avgpool_backward(x.shape(), proj),
               {[&] { return dot(global_avgpool_forward(x), proj); }}, opts);
  return rep;
}

GradcheckReport check_dense(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"dense", 0.0, opts.op_threshold, 0, 0};
  DenseLayer<double> layer{random_tensor({4, 6}, rng), random_tensor({4}, rng)};
  DenseLayer<double> grads{Tensor<double>({4, 6}), Tensor<double>({4})};
  Tensor<double> x = random_tensor({6}, rng);
  const Tensor<double> proj = random_tensor({4}, rng);
  const Tensor<double> gx = dense_backward(layer, x, proj, grads);
  const auto f = [&] { return dot(dense_forward(layer, x), proj); };
  check_coords(rep, x, gx, {f}, opts);
  check_coords(rep, layer.weights, grads.weights, {f}, opts);
  check_coords(rep, layer.bias, grads.bias, {f}, opts);
  return rep;
}

GradcheckReport check_tanh(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"tanh", 0.0, opts.op_threshold, 0, 0};
  Tensor<double> x = random_tensor({2, 3, 4}, rng, -3.0, 3.0);
  const Tensor<double> proj = random_tensor(x.shape(), rng);
  check_coords(rep, x, tanh_backward(tanh_forward(x), proj),
               {[&] { return dot(tanh_forward(x), proj); }}, opts);
  return rep;
}

GradcheckReport check_softmax_ce(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"softmax_ce", 0.0, opts.op_threshold, 0, 0};
  for (std::size_t label = 0; label < 10; label += 3) {
    Tensor<double> z = random_tensor({10}, rng, -4.0, 4.0);
    const auto r = softmax_cross_entropy(z, label);
    check_coords(rep, z, r.grad_logits, {[&] { return softmax_cross_entropy(z, label).loss; }}, opts);
  }
  return rep;
}

GradcheckReport check_spatial_softmax(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"spatial_softmax", 0.0, opts.op_threshold, 0, 0};
  const GridSpec spec{16, 16, 1.0, 30.0};
  const Tensor<double> grid = readout_coordinate_grid(spec, 4, 4, 4);
  for (PhiReadout mode : {PhiReadout::circular, PhiReadout::linear})
    for (int t = 0; t < 4; ++t) {
      Tensor<double> z = random_tensor({1, 4, 4}, rng, -2.0, 2.0);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double gp = u(rng), gr = u(rng);
      const Tensor<double> g = spatial_softmax_backward(z, grid, gp, gr, mode);
      check_coords(rep, z, g, {[&] {
                     const auto p = spatial_softmax_readout(z, grid, mode).point;
                     return gp * p.phi + gr * p.rho;
                   }},
                   opts);
    }
  return rep;
}

GradcheckReport check_rnn(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"rnn", 0.0, opts.op_threshold, 0, 0};
  RnnCell<double> cell{random_tensor({5, 3}, rng), random_tensor({5, 5}, rng), random_tensor({5}, rng)};
  RnnCell<double> grads{Tensor<double>({5, 3}), Tensor<double>({5, 5}), Tensor<double>({5})};
  Tensor<double> h = random_tensor({5}, rng), x = random_tensor({3}, rng);
  const Tensor<double> proj = random_tensor({5}, rng);
  const Tensor<double> hn = rnn_step_forward(cell, h, x);
  const auto r = rnn_step_backward(cell, h, x, hn, proj, grads);
  const auto f = [&] { return dot(rnn_step_forward(cell, h, x), proj); };
  check_coords(rep, h, r.grad_h_prev, {f}, opts);
  check_coords(rep, x, r.grad_x, {f}, opts);
  check_coords(rep, cell.w_x, grads.w_x, {f}, opts);
  check_coords(rep, cell.w_h, grads.w_h, {f}, opts);
  check_coords(rep, cell.bias, grads.bias, {f}, opts);
  return rep;
}

// Everything that selects a branch of the piecewise forward pass.
std::vector<long> unroll_signature(const Unroll<double>& u, const GridSpec& spec) {
  std::vector<long> sig;
  for (const auto& g : u.glimpses) {
    const auto cells = sample_cells(SamplerParams{g.center, spec});
    sig.insert(sig.end(), cells.begin(), cells.end());
    for (const auto* pool : {&g.backbone.pool1, &g.backbone.pool2, &g.backbone.pool3})
      sig.insert(sig.end(), pool->argmax.begin(), pool->argmax.end());
    sig.push_back(g.loc.clamped_x);
    sig.push_back(g.loc.clamped_y);
  }
  return sig;
}

GradcheckReport check_model(const GradcheckOptions& opts, Rng& rng) {
  GradcheckReport rep{"model", 0.0, opts.model_threshold, 0, 0};
  const int saccades = 2;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 4; ++t) {
    // Both angle readouts of the localisation head.
    ModelConfig cfg = ModelConfig::tiny(1);
    cfg.phi_readout = t % 2 ? PhiReadout::linear : PhiReadout::circular;
    ModelParams<double> params = ModelParams<double>::init(cfg, rng());
    // Non-zero biases so their gradients are exercised away from symmetric points.
    for_each_tensor(params, [&](const std::string& name, Tensor<double>& p) {
      if (name.find("bias") != std::string::npos)
        for (auto& v : p) v = 0.2 * (2.0 * u(rng) - 1.0);
    });
    const std::size_t side = 16;
    const Tensor<double> img = random_tensor({1, side, side}, rng, 0.0, 1.0);
    const GridSpec spec = default_grid_spec(cfg.patch, side, side);
    const CartesianPoint c0{4.0 + 7.0 * u(rng), 4.0 + 7.0 * u(rng)};
    const LossSpec loss = joint_loss(rng() % 10, saccades, 1.0);
    const int steps = unroll_length(loss, saccades);

    ModelParams<double> grads = ModelParams<double>::zeros(cfg);
    unroll_backward(params, cfg, img, spec, unroll_forward(params, cfg, img, c0, spec, steps), loss, grads);

    Unroll<double> last;
    Probe probe{[&] {
                  last = unroll_forward(params, cfg, img, c0, spec, steps);
                  return unroll_loss(last, loss).total;
                },
                [&] { return unroll_signature(last, spec); }};
    std::vector<Tensor<double>*> g;
    for_each_tensor(grads, [&](const std::string&, Tensor<double>& x) { g.push_back(&x); });
    std::size_t k = 0;
    for_each_tensor(params, [&](const std::string&, Tensor<double>& p) { check_coords(rep, p, *g[k++], probe, opts, 24); });
  }
  return rep;
}

}  // namespace

std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opts) {
  using Check = GradcheckReport (*)(const GradcheckOptions&, Rng&);
  static const std::vector<std::pair<std::string, Check>> table = {
      {"sampler", check_sampler},       {"padding", check_padding},
      {"conv", check_conv},             {"maxpool", check_maxpool},
      {"avgpool", check_avgpool},       {"dense", check_dense},
      {"tanh", check_tanh},             {"softmax_ce", check_softmax_ce},
      {"spatial_softmax", check_spatial_softmax}, {"rnn", check_rnn},
      {"model", check_model}};
  if (!opts.only.empty()) {
    const auto& names = gradcheck_components();
    RTN_REQUIRE(std::find(names.begin(), names.end(), opts.only) != names.end(),
                "gradcheck: unknown component '" + opts.only + "'");
  }
  std::vector<GradcheckReport> out;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!opts.only.empty() && opts.only != table[i].first) continue;
    Rng rng(opts.seed * 1000003ULL + i);
    out.push_back(table[i].second(opts, rng));
  }
  return out;
}

}  // namespace rtn
