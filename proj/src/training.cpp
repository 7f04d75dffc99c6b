#include "rtn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

namespace rtn {

void TrainConfig::validate() const {
  RTN_REQUIRE(batch_size >= 1, "batch_size must be >= 1");
  RTN_REQUIRE(epochs >= 0, "epochs must be >= 0");
  RTN_REQUIRE(lr > 0.0, "lr must be positive");
  RTN_REQUIRE(saccades >= 1, "saccades must be >= 1");
  RTN_REQUIRE(lambda_greedy >= 0.0, "lambda_greedy must be >= 0");
  RTN_REQUIRE(margin >= 0.0 && margin <= 0.5, "margin must lie in [0, 0.5]");
  RTN_REQUIRE(augment.zoom_min > 0.0 && augment.zoom_max <= 2.0 && augment.zoom_min <= augment.zoom_max,
              "zoom range must lie within (0, 2]");
  RTN_REQUIRE(threads >= 1, "threads must be >= 1");
  RTN_REQUIRE(r_min > 0.0, "r_min must be positive");
  RTN_REQUIRE(r_max == 0.0 || r_max > r_min, "r_max must exceed r_min (or be 0 for the image diagonal)");
  RTN_REQUIRE(grad_clip >= 0.0, "grad_clip must be >= 0");
}

GridSpec grid_for(const TrainConfig& cfg, int patch, std::size_t image_h, std::size_t image_w) {
  GridSpec g = default_grid_spec(patch, image_h, image_w);
  g.r_min = cfg.r_min;
  if (cfg.r_max > 0.0) g.r_max = cfg.r_max;
  g.validate();
  return g;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

CartesianPoint image_center(std::size_t height, std::size_t width) {
  return {(double(width) - 1.0) / 2.0, (double(height) - 1.0) / 2.0};
}

CartesianPoint sample_init_center(std::mt19937_64& rng, std::size_t height, std::size_t width,
                                  double margin) {
  RTN_REQUIRE(margin >= 0.0 && margin <= 0.5, "sample_init_center: margin must lie in [0, 0.5]");
  const double wx = double(width) - 1.0, hy = double(height) - 1.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double ux = u(rng), uy = u(rng);
  return {wx * (margin + (1.0 - 2.0 * margin) * ux), hy * (margin + (1.0 - 2.0 * margin) * uy)};
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

}  // namespace

template <class T>
Tensor<T> augment(const Tensor<T>& img, std::mt19937_64& rng, const AugmentConfig& cfg) {
  RTN_REQUIRE(img.rank() == 3, "augment: image must be (C,H,W)");
  if (!cfg.any()) return img;
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor<T> out = img;
  if (cfg.flip && unit(rng) < 0.5) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out(ch, y, x) = img(ch, y, w - 1 - x);
  }
  if (cfg.zoom) {
    const double z = cfg.zoom_min + (cfg.zoom_max - cfg.zoom_min) * unit(rng);
    out = scale_image(out, image_center(h, w), z);
  }
  if (c == 3 && (cfg.hue || cfg.saturation || cfg.brightness || cfg.contrast)) {
    auto factor = [&] { return cfg.jitter_min + (cfg.jitter_max - cfg.jitter_min) * unit(rng); };
    const double dh = cfg.hue ? (2.0 * unit(rng) - 1.0) * cfg.hue_range : 0.0;
    const double fs = cfg.saturation ? factor() : 1.0;
    const double fb = cfg.brightness ? factor() : 1.0;
    const double fc = cfg.contrast ? factor() : 1.0;
    const std::size_t plane = h * w;
    double mean = 0.0;
    for (std::size_t k = 0; k < plane; ++k) {
      double r = out[k], g = out[plane + k], b = out[2 * plane + k], hh, s, v;
      rgb_to_hsv(r, g, b, hh, s, v);
      hsv_to_rgb(hh + dh, std::clamp(s * fs, 0.0, 1.0), std::clamp(v * fb, 0.0, 1.0), r, g, b);
      out[k] = T(r), out[plane + k] = T(g), out[2 * plane + k] = T(b);
      mean += (r + g + b) / 3.0;
    }
    mean /= double(plane);
    for (auto& v : out) v = static_cast<T>(std::clamp(mean + fc * (double(v) - mean), 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
Optimizer<T>::Optimizer(const TrainConfig& cfg, const ModelParams<T>& shape_like)
    : cfg_(cfg), m_(shape_like), v_(shape_like) {
  m_.zero();
  v_.zero();
}

template <class T>
void Optimizer<T>::apply(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
  ++step_;
  std::vector<Tensor<T>*> p, g, m, v;
  for_each_tensor(params, [&](const std::string&, Tensor<T>& t) { p.push_back(&t); });
  for_each_tensor(const_cast<ModelParams<T>&>(grads), [&](const std::string&, Tensor<T>& t) { g.push_back(&t); });
  for_each_tensor(m_, [&](const std::string&, Tensor<T>& t) { m.push_back(&t); });
  for_each_tensor(v_, [&](const std::string&, Tensor<T>& t) { v.push_back(&t); });
  if (cfg_.optimizer == OptimizerKind::adam) {
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T step_size = T(lr / bc1), inv_bc2 = T(1.0 / bc2), eps = T(cfg_.adam_eps);
    const T wd = T(cfg_.weight_decay);
    for (std::size_t t = 0; t < p.size(); ++t)
      for (std::size_t i = 0; i < p[t]->size(); ++i) {
        const T gi = (*g[t])[i] + wd * (*p[t])[i];
        T& mi = (*m[t])[i];
        T& vi = (*v[t])[i];
        mi = b1 * mi + (T(1) - b1) * gi;
        vi = b2 * vi + (T(1) - b2) * gi * gi;
        (*p[t])[i] -= step_size * mi / (std::sqrt(vi * inv_bc2) + eps);
      }
  } else {
    const T mu = T(cfg_.momentum), rate = T(lr), wd = T(cfg_.weight_decay);
    for (std::size_t t = 0; t < p.size(); ++t)
      for (std::size_t i = 0; i < p[t]->size(); ++i) {
        T& vel = (*m[t])[i];
        vel = mu * vel + (*g[t])[i] + wd * (*p[t])[i];
        (*p[t])[i] -= rate * vel;
      }
  }
}

template <class T>
void Optimizer<T>::save(Checkpoint& ck) const {
  store_params(ck, m_, "optim.m.");
  store_params(ck, v_, "optim.v.");
  RTN_REQUIRE(step_ < (1u << 24), "optimizer step count exceeds float-exact range");
  ck.put_scalar("optim.step", float(step_));
}

template <class T>
void Optimizer<T>::restore(const Checkpoint& ck) {
  restore_params(ck, m_, "optim.m.");
  restore_params(ck, v_, "optim.v.");
  step_ = static_cast<std::uint64_t>(ck.get_scalar("optim.step"));
}

// ---------------------------------------------------------------------------
// Metrics helpers

void StepAccuracy::resize(int steps) {
  aggregate_correct.assign(steps, 0);
  glimpse_correct.assign(steps, 0);
  samples = 0;
}

void StepAccuracy::merge(const StepAccuracy& o) {
  if (aggregate_correct.size() < o.aggregate_correct.size()) {
    aggregate_correct.resize(o.aggregate_correct.size(), 0);
    glimpse_correct.resize(o.glimpse_correct.size(), 0);
  }
  for (std::size_t i = 0; i < o.aggregate_correct.size(); ++i) {
    aggregate_correct[i] += o.aggregate_correct[i];
    glimpse_correct[i] += o.glimpse_correct[i];
  }
  samples += o.samples;
}

std::vector<double> StepAccuracy::aggregate_rate() const {
  std::vector<double> r;
  for (auto c : aggregate_correct) r.push_back(samples ? double(c) / double(samples) : 0.0);
  return r;
}

std::vector<double> StepAccuracy::glimpse_rate() const {
  std::vector<double> r;
  for (auto c : glimpse_correct) r.push_back(samples ? double(c) / double(samples) : 0.0);
  return r;
}

void BatchStats::merge(const BatchStats& o) {
  loss_total += o.loss_total;
  loss_greedy += o.loss_greedy;
  loss_aggregate += o.loss_aggregate;
  acc.merge(o.acc);
}

namespace {

template <class T>
std::size_t argmax(const Tensor<T>& t) {
  return static_cast<std::size_t>(std::max_element(t.begin(), t.end()) - t.begin());
}

template <class T>
void record_accuracy(const Unroll<T>& u, std::size_t label, int saccades, StepAccuracy& acc) {
  for (int s = 0; s < saccades && s < static_cast<int>(u.glimpses.size()); ++s) {
    acc.aggregate_correct[s] += argmax(u.glimpses[s].agg_probs) == label;
    acc.glimpse_correct[s] += argmax(u.glimpses[s].glimpse_probs) == label;
  }
  ++acc.samples;
}

// Runs fn(worker, begin, end) over [0, n) split into contiguous chunks.
template <class Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = n * w / workers, e = n * (w + 1) / workers;
    pool.emplace_back([&, w, b, e] {
      try {
        fn(w, b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int effective_threads(const TrainConfig& cfg) { return cfg.deterministic ? 1 : cfg.threads; }

}  // namespace

template <class T>
EvalMetrics evaluate(const Dataset& ds, const ModelParams<T>& params, const ModelConfig& model,
                     const TrainConfig& cfg, std::size_t limit) {
  const std::size_t n = limit ? std::min(limit, ds.size()) : ds.size();
  const GridSpec spec = grid_for(cfg, model.patch, ds.height(), ds.width());
  const int steps = std::max(cfg.saccades, 2);
  const int threads = std::max(1, cfg.threads);  // evaluation is order-independent
  std::vector<BatchStats> partial(std::max<std::size_t>(1, std::min<std::size_t>(threads, n)));
  parallel_chunks(n, threads, [&](std::size_t w, std::size_t b, std::size_t e) {
    BatchStats& st = partial[w];
    st.acc.resize(cfg.saccades);
    for (std::size_t i = b; i < e; ++i) {
      const Tensor<T> img = ds.image<T>(i);
      CartesianPoint c0 = image_center(ds.height(), ds.width());
      if (cfg.eval_center == EvalCenter::random) {
        std::mt19937_64 rng(derive_seed(cfg.seed, 0xE7A1, i));
        c0 = sample_init_center(rng, ds.height(), ds.width(), cfg.margin);
      }
      const Unroll<T> u = unroll_forward(params, model, img, c0, spec, steps);
      LossSpec ls = joint_loss(ds.labels[i], cfg.saccades, 1.0);
      const LossValues lv = unroll_loss(u, ls);
      st.loss_greedy += lv.greedy;
      st.loss_aggregate += lv.aggregate;
      record_accuracy(u, ds.labels[i], cfg.saccades, st.acc);
    }
  });
  BatchStats total;
  total.acc.resize(cfg.saccades);
  for (const auto& p : partial) total.merge(p);
  EvalMetrics m;
  m.samples = total.acc.samples;
  const double denom = m.samples ? double(m.samples) : 1.0;
  m.loss_aggregate = total.loss_aggregate / denom;
  m.loss_greedy = total.loss_greedy / denom;
  m.acc_aggregate = total.acc.aggregate_rate();
  m.acc_glimpse = total.acc.glimpse_rate();
  return m;
}

// ---------------------------------------------------------------------------
// Trainer

template <class T>
Trainer<T>::Trainer(ModelConfig model, TrainConfig cfg, const Dataset& train)
    : model_(model),
      cfg_(cfg),
      train_(train),
      grid_(grid_for(cfg, model.patch, train.height(), train.width())),
      params_(ModelParams<T>::init(model, derive_seed(cfg.seed, 0x1417))),
      opt_(cfg, params_) {
  cfg_.validate();
  RTN_REQUIRE(train.channels() == model.in_channels, "Trainer: dataset channels do not match the model");
  const int workers = effective_threads(cfg_);
  for (int w = 0; w < workers; ++w) worker_grads_.push_back(ModelParams<T>::zeros(model_));
}

template <class T>
LossSpec Trainer<T>::loss_for(std::size_t label, int epoch) const {
  if (epoch < cfg_.greedy_pretrain_epochs) return greedy_loss(label);
  return joint_loss(label, cfg_.saccades, cfg_.lambda_greedy);
}

template <class T>
BatchStats Trainer<T>::batch_gradients(const std::vector<std::size_t>& indices, int epoch,
                                       ModelParams<T>& grads) {
  const std::size_t n = indices.size();
  const int workers = static_cast<int>(worker_grads_.size());
  std::vector<BatchStats> partial(std::max<std::size_t>(1, std::min<std::size_t>(workers, n)));
  for (auto& g : worker_grads_) g.zero();
  parallel_chunks(n, workers, [&](std::size_t w, std::size_t b, std::size_t e) {
    BatchStats& st = partial[w];
    st.acc.resize(cfg_.saccades);
    ModelParams<T>& wg = worker_grads_[w];
    for (std::size_t k = b; k < e; ++k) {
      const std::size_t idx = indices[k];
      std::mt19937_64 rng(derive_seed(cfg_.seed, std::uint64_t(epoch) + 1, idx));
      const Tensor<T> img = augment(train_.image<T>(idx), rng, cfg_.augment);
      const CartesianPoint c0 = sample_init_center(rng, train_.height(), train_.width(), cfg_.margin);
      const LossSpec ls = loss_for(train_.labels[idx], epoch);
      const int steps = unroll_length(ls, cfg_.saccades);
      Unroll<T> u;
      LossValues lv;
      try {
        u = unroll_forward(params_, model_, img, c0, grid_, steps);
        lv = unroll_backward(params_, model_, img, grid_, u, ls, wg);
      } catch (const DomainError& e) {
        // Only non-finite activations reach the geometry with invalid input.
        throw DivergenceError("non-finite activations at epoch " + std::to_string(epoch + 1) + ", sample " +
                              std::to_string(idx) + ": " + e.what());
      }
      if (!std::isfinite(lv.total))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " +
                              std::to_string(idx) + " (greedy " + std::to_string(lv.greedy) +
                              ", aggregate " + std::to_string(lv.aggregate) + ")");
      st.loss_total += lv.total;
      st.loss_greedy += lv.greedy;
      st.loss_aggregate += lv.aggregate;
      record_accuracy(u, train_.labels[idx], cfg_.saccades, st.acc);
    }
  });
  // Ordered reduction: worker 0 first.
  const T scale = T(1.0 / double(n));
  std::vector<Tensor<T>*> dst;
  for_each_tensor(grads, [&](const std::string&, Tensor<T>& t) { dst.push_back(&t); });
  for (auto& wg : worker_grads_) {
    std::size_t ti = 0;
    for_each_tensor(wg, [&](const std::string&, Tensor<T>& t) {
      Tensor<T>& d = *dst[ti++];
      for (std::size_t i = 0; i < t.size(); ++i) d[i] += t[i] * scale;
    });
  }
  BatchStats total;
  total.acc.resize(cfg_.saccades);
  for (const auto& p : partial) total.merge(p);
  return total;
}

template <class T>
double Trainer<T>::current_lr(int epoch) const {
  if (cfg_.lr_decay_every <= 0) return cfg_.lr;
  return cfg_.lr * std::pow(cfg_.lr_decay, double(epoch / cfg_.lr_decay_every));
}

template <class T>
BatchStats Trainer<T>::train_step(const std::vector<std::size_t>& indices, int epoch) {
  ModelParams<T> grads = ModelParams<T>::zeros(model_);
  BatchStats st = batch_gradients(indices, epoch, grads);
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for_each_tensor(grads, [&](const std::string&, const Tensor<T>& t) {
      for (T v : t) sq += double(v) * double(v);
    });
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) {
      const T s = T(cfg_.grad_clip / norm);
      for_each_tensor(grads, [&](const std::string&, Tensor<T>& t) {
        for (T& v : t) v *= s;
      });
    }
  }
  opt_.apply(params_, grads, current_lr(epoch));
  bool finite = true;
  for_each_tensor(params_, [&](const std::string&, const Tensor<T>& t) {
    for (T v : t) finite = finite && std::isfinite(v);
  });
  if (!finite) throw DivergenceError("non-finite parameters after the update at epoch " + std::to_string(epoch + 1));
  return st;
}

template <class T>
EpochMetrics Trainer<T>::run_epoch(const Dataset* test, const BatchCallback& on_batch,
                                   std::size_t test_limit) {
  const auto t0 = std::chrono::steady_clock::now();
  const int epoch = epochs_done_;
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(derive_seed(cfg_.seed, 0x5EED, std::uint64_t(epoch)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const std::size_t batches = (order.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  BatchStats epoch_stats;
  epoch_stats.acc.resize(cfg_.saccades);
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t lo = b * cfg_.batch_size, hi = std::min(order.size(), lo + cfg_.batch_size);
    const std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);
    const BatchStats st = train_step(idx, epoch);
    epoch_stats.merge(st);
    if (on_batch) on_batch(epoch, b, batches, st);
  }
  ++epochs_done_;

  EpochMetrics m;
  m.epoch = epochs_done_;
  const double n = double(std::max<std::uint64_t>(1, epoch_stats.acc.samples));
  m.train_loss = epoch_stats.loss_total / n;
  m.train_loss_greedy = epoch_stats.loss_greedy / n;
  m.train_loss_aggregate = epoch_stats.loss_aggregate / n;
  m.train_acc_aggregate = epoch_stats.acc.aggregate_rate();
  m.train_acc_glimpse = epoch_stats.acc.glimpse_rate();
  if (test) {
    m.has_test = true;
    m.test = evaluate(*test, params_, model_, cfg_, test_limit);
  }
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

template <class T>
Checkpoint Trainer<T>::checkpoint() const {
  Checkpoint ck;
  store_model_config(ck, model_);
  store_params(ck, params_);
  opt_.save(ck);
  ck.put_scalar("train.epochs_done", float(epochs_done_));
  return ck;
}

template <class T>
void Trainer<T>::restore(const Checkpoint& ck) {
  const ModelConfig stored = restore_model_config(ck);
  RTN_REQUIRE(stored.in_channels == model_.in_channels && stored.conv_channels == model_.conv_channels &&
                  stored.patch == model_.patch && stored.fc1 == model_.fc1 && stored.fc2 == model_.fc2,
              "checkpoint model configuration does not match the trainer");
  restore_params(ck, params_);
  if (ck.find("optim.step")) opt_.restore(ck);
  if (ck.find("train.epochs_done")) epochs_done_ = static_cast<int>(ck.get_scalar("train.epochs_done"));
}

// ---------------------------------------------------------------------------
// CSV

std::string metrics_csv_header(int saccades) {
  std::string h = "epoch,split,task,loss";
  for (int s = 1; s <= saccades; ++s) h += ",acc" + std::to_string(s);
  return h;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string row(int epoch, const char* split, const char* task, double loss,
                const std::vector<double>& acc, std::size_t width) {
  std::string r = std::to_string(epoch) + "," + split + "," + task + "," + fmt(loss);
  for (std::size_t i = 0; i < width; ++i) r += "," + (i < acc.size() ? fmt(acc[i]) : std::string());
  return r;
}

}  // namespace

std::vector<std::string> metrics_csv_rows(const EpochMetrics& m) {
  const std::size_t w = m.train_acc_aggregate.size();
  std::vector<std::string> rows = {
      row(m.epoch, "train", "total", m.train_loss, {}, w),
      row(m.epoch, "train", "greedy", m.train_loss_greedy, m.train_acc_glimpse, w),
      row(m.epoch, "train", "aggregate", m.train_loss_aggregate, m.train_acc_aggregate, w),
  };
  if (m.has_test) {
    rows.push_back(row(m.epoch, "test", "greedy", m.test.loss_greedy, m.test.acc_glimpse, w));
    rows.push_back(row(m.epoch, "test", "aggregate", m.test.loss_aggregate, m.test.acc_aggregate, w));
  }
  return rows;
}

template Tensor<float> augment<float>(const Tensor<float>&, std::mt19937_64&, const AugmentConfig&);
template Tensor<double> augment<double>(const Tensor<double>&, std::mt19937_64&, const AugmentConfig&);
template class Optimizer<float>;
template class Optimizer<double>;
template EvalMetrics evaluate<float>(const Dataset&, const ModelParams<float>&, const ModelConfig&,
                                     const TrainConfig&, std::size_t);
template EvalMetrics evaluate<double>(const Dataset&, const ModelParams<double>&, const ModelConfig&,
                                      const TrainConfig&, std::size_t);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace rtn
