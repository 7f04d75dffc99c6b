#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "rtn/errors.hpp"
#include "rtn/training.hpp"
#include "support/fd.hpp"

using namespace rtn;

namespace {

// Small synthetic digits: class k is a bright blob at one of ten fixed spots.
Dataset blob_dataset(std::size_t n, std::size_t side = 20, std::uint64_t seed = 1) {
  Dataset ds;
  ds.name = "synthetic";
  ds.split = "train";
  ds.images = Tensor<float>({n, 1, side, side});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.7);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 10;
    const double a = 2.0 * 3.141592653589793 * double(label) / 10.0;
    const double cx = (side - 1) / 2.0 + 0.3 * side * std::cos(a) + jitter(rng);
    const double cy = (side - 1) / 2.0 + 0.3 * side * std::sin(a) + jitter(rng);
    const auto img = test::gaussian_blob<float>(side, side, cx, cy, 1.5);
    std::memcpy(ds.images.data() + i * side * side, img.data(), side * side * sizeof(float));
    ds.labels.push_back(std::uint8_t(label));
  }
  return ds;
}

ModelConfig small_model() {
  ModelConfig m = ModelConfig::tiny(1);
  m.conv_channels = {8, 8, 16};
  m.fc1 = 16;
  m.fc2 = 16;
  m.loc_hidden = 8;
  m.patch = 16;
  return m;
}

TrainConfig small_train() {
  TrainConfig c;
  c.batch_size = 8;
  c.saccades = 3;
  c.epochs = 2;
  c.seed = 5;
  return c;
}

double blob_std(const Tensor<double>& img, double cx, double cy) {
  double w = 0, m2 = 0;
  for (std::size_t y = 0; y < img.dim(1); ++y)
    for (std::size_t x = 0; x < img.dim(2); ++x) {
      const double v = img(0, y, x), dx = double(x) - cx, dy = double(y) - cy;
      w += v;
      m2 += v * (dx * dx + dy * dy);
    }
  return std::sqrt(m2 / (2.0 * w));
}

}  // namespace

TEST_CASE("initial centers") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    const CartesianPoint c = sample_init_center(rng, 28, 28, 0.5);
    REQUIRE(c.x == 13.5);
    REQUIRE(c.y == 13.5);
  }
  const CartesianPoint ic = image_center(28, 32);
  CHECK(ic.x == 15.5);
  CHECK(ic.y == 13.5);

  double sx = 0, sy = 0, lo_x = 1e9, hi_x = -1e9;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const CartesianPoint c = sample_init_center(rng, 28, 32, 0.0);
    sx += c.x;
    sy += c.y;
    lo_x = std::min(lo_x, c.x);
    hi_x = std::max(hi_x, c.x);
    REQUIRE(c.y >= 0.0);
    REQUIRE(c.y <= 27.0);
  }
  CHECK(std::abs(sx / n - 15.5) < 0.01 * 15.5);
  CHECK(std::abs(sy / n - 13.5) < 0.01 * 13.5);
  CHECK(lo_x < 0.1);
  CHECK(hi_x > 30.9);
  double s2 = 0;
  for (int k = 0; k < n; ++k) s2 += sample_init_center(rng, 28, 28, 0.25).x;
  CHECK(std::abs(s2 / n - 13.5) < 0.01 * 13.5);
}

TEST_CASE("seed derivation separates streams") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2, 0));
}

TEST_CASE("augmentation") {
  std::mt19937_64 rng(3);
  const auto img = test::uniform({3, 12, 10}, rng, 0.0, 1.0);
  const auto same = augment(img, rng, AugmentConfig{});
  CHECK(std::memcmp(same.data(), img.data(), img.size() * sizeof(double)) == 0);

  AugmentConfig unit_zoom;
  unit_zoom.zoom = true;
  unit_zoom.zoom_min = unit_zoom.zoom_max = 1.0;
  const auto z1 = augment(img, rng, unit_zoom);
  for (std::size_t k = 0; k < img.size(); ++k) REQUIRE(std::abs(z1[k] - img[k]) <= 1e-6);

  AugmentConfig zoom;
  zoom.zoom = true;
  zoom.zoom_min = zoom.zoom_max = 1.1;
  const auto blob = test::gaussian_blob(64, 64, 31.5, 31.5, 4.0);
  const double before = blob_std(blob, 31.5, 31.5);
  const double after = blob_std(augment(blob, rng, zoom), 31.5, 31.5);
  CHECK(std::abs(after / before - 1.1) < 0.02 * 1.1);

  AugmentConfig flip;
  flip.flip = true;
  int flipped = 0;
  for (int k = 0; k < 200; ++k) {
    const auto f = augment(img, rng, flip);
    if (f(1, 2, 0) == img(1, 2, 9)) {
      ++flipped;
      CHECK(f(2, 7, 3) == img(2, 7, 6));
    } else {
      CHECK(f(1, 2, 0) == img(1, 2, 0));
    }
  }
  CHECK(flipped > 60);
  CHECK(flipped < 140);

  // Color jitter keeps values in range and leaves grayscale images alone.
  AugmentConfig color;
  color.hue = color.saturation = color.brightness = color.contrast = true;
  for (double v : augment(img, rng, color)) REQUIRE((v >= 0.0 && v <= 1.0));
  const auto gray = test::uniform({1, 6, 6}, rng, 0.0, 1.0);
  const auto g2 = augment(gray, rng, color);
  CHECK(std::memcmp(g2.data(), gray.data(), gray.size() * sizeof(double)) == 0);
  AugmentConfig hue_only;
  hue_only.hue = true;
  hue_only.hue_range = 0.0;
  const auto h0 = augment(img, rng, hue_only);
  for (std::size_t k = 0; k < img.size(); ++k) REQUIRE(std::abs(h0[k] - img[k]) < 1e-12);
}

TEST_CASE("optimizer steps") {
  const ModelConfig m = ModelConfig::tiny(1);
  for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::sgd_momentum}) {
    TrainConfig cfg;
    cfg.optimizer = kind;
    auto p = ModelParams<double>::init(m, 2);
    const auto before = p;
    Optimizer<double> opt(cfg, p);
    const auto zero = ModelParams<double>::zeros(m);
    for (int k = 0; k < 3; ++k) opt.apply(p, zero, 1e-3);
    CHECK(opt.steps() == 3);
    bool unchanged = true;
    auto check_same = [&](const Tensor<double>& a, const Tensor<double>& b) {
      unchanged = unchanged && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    };
    check_same(p.conv1.weights, before.conv1.weights);
    check_same(p.rnn.w_h, before.rnn.w_h);
    check_same(p.loc2.bias, before.loc2.bias);
    CHECK(unchanged);
  }

  // First Adam step moves every coordinate by lr against the gradient sign.
  TrainConfig cfg;
  auto p = ModelParams<double>::zeros(m);
  auto g = ModelParams<double>::zeros(m);
  g.fc1.weights[0] = 3.0;
  g.fc1.weights[1] = -0.01;
  Optimizer<double> adam(cfg, p);
  adam.apply(p, g, 1e-3);
  CHECK(p.fc1.weights[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(p.fc1.weights[1] == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(p.fc1.weights[2] == 0.0);

  // Optimizer state round-trips through a checkpoint.
  Checkpoint ck;
  adam.save(ck);
  Optimizer<double> other(cfg, p);
  other.restore(ck);
  CHECK(other.steps() == 1);
  auto p1 = p, p2 = p;
  adam.apply(p1, g, 1e-3);
  other.apply(p2, g, 1e-3);
  CHECK(p1.fc1.weights[0] == doctest::Approx(p2.fc1.weights[0]).epsilon(1e-6));
}

TEST_CASE("task weights") {
  const Dataset ds = blob_dataset(10);
  TrainConfig cfg = small_train();
  cfg.lambda_greedy = 0.0;
  Trainer<float> pure(small_model(), cfg, ds);
  const LossSpec l = pure.loss_for(3, 0);
  CHECK(l.greedy_weight == 0.0);
  CHECK(l.aggregate_weight == 1.0);
  CHECK(l.aggregate_step == 2);

  // lambda 0 gives the gradient of the aggregation loss alone.
  TrainConfig agg_cfg = small_train();
  Trainer<double> a(small_model(), cfg, ds), b(small_model(), agg_cfg, ds);
  auto ga = ModelParams<double>::zeros(small_model()), gb = ga;
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const BatchStats sa = a.batch_gradients(idx, 0, ga);
  b.batch_gradients(idx, 0, gb);
  CHECK(sa.loss_total == doctest::Approx(sa.loss_aggregate));
  // The greedy classifier output layer only learns from the greedy term.
  for (double v : ga.fc3.weights) CHECK(v == 0.0);
  // The greedy term changes the gradient once it has weight.
  double diff = 0;
  for (std::size_t k = 0; k < ga.fc3.weights.size(); ++k) diff += std::abs(ga.fc3.weights[k] - gb.fc3.weights[k]);
  CHECK(diff > 0.0);
  CHECK(ga.rnn_out.weights[0] == doctest::Approx(gb.rnn_out.weights[0]));

  TrainConfig pre = small_train();
  pre.greedy_pretrain_epochs = 1;
  Trainer<float> cur(small_model(), pre, ds);
  CHECK(cur.loss_for(1, 0).aggregate_weight == 0.0);
  CHECK(cur.loss_for(1, 0).greedy_weight == 1.0);
  CHECK(cur.loss_for(1, 1).aggregate_weight == 1.0);
}

TEST_CASE("initial loss is near chance") {
  const Dataset ds = blob_dataset(40);
  Trainer<float> t(small_model(), small_train(), ds);
  std::vector<std::size_t> idx(32);
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  auto g = ModelParams<float>::zeros(small_model());
  const BatchStats s = t.batch_gradients(idx, 0, g);
  CHECK(std::abs(s.loss_aggregate / 32 - std::log(10.0)) < 0.3);
  CHECK(std::abs(s.loss_greedy / 32 - std::log(10.0)) < 0.3);
}

TEST_CASE("training is deterministic and resumable") {
  const Dataset train = blob_dataset(48, 20, 2), test = blob_dataset(20, 20, 3);
  auto run = [&](int epochs, const Checkpoint* from) {
    TrainConfig cfg = small_train();
    cfg.epochs = epochs;
    Trainer<float> t(small_model(), cfg, train);
    if (from) t.restore(*from);
    std::string csv = metrics_csv_header(cfg.saccades) + "\n";
    while (t.epochs_done() < epochs)
      for (const auto& row : metrics_csv_rows(t.run_epoch(&test))) csv += row + "\n";
    return std::pair{csv, t.checkpoint().encode()};
  };
  const auto a = run(2, nullptr), b = run(2, nullptr);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);

  // Stop after one epoch, resume from the checkpoint, finish the second.
  TrainConfig cfg = small_train();
  Trainer<float> first(small_model(), cfg, train);
  first.run_epoch(&test);
  const Checkpoint ck = Checkpoint::decode(first.checkpoint().encode());
  const auto resumed = run(2, &ck);
  CHECK(resumed.second == a.second);
  const std::string tail = a.first.substr(a.first.find("\n2,"));
  CHECK(resumed.first.find(tail.substr(1)) != std::string::npos);

  // Threads share work but reduce in a fixed order.
  TrainConfig mt = small_train();
  mt.threads = 3;
  mt.deterministic = false;
  Trainer<float> t3(small_model(), mt, train);
  Trainer<float> t1(small_model(), small_train(), train);
  const auto e3 = evaluate(test, t3.params(), small_model(), mt);
  const auto e1 = evaluate(test, t1.params(), small_model(), small_train());
  CHECK(e3.acc_aggregate == e1.acc_aggregate);
  CHECK(e3.loss_aggregate == e1.loss_aggregate);
}

TEST_CASE("metrics csv layout") {
  CHECK(metrics_csv_header(4) == "epoch,split,task,loss,acc1,acc2,acc3,acc4");
  EpochMetrics m;
  m.epoch = 3;
  m.train_loss = 1.5;
  m.train_loss_greedy = 0.5;
  m.train_loss_aggregate = 1.0;
  m.train_acc_aggregate = {0.1, 0.2};
  m.train_acc_glimpse = {0.3, 0.4};
  const auto rows = metrics_csv_rows(m);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].rfind("3,train,total,1.5", 0) == 0);
  CHECK(rows[2] == "3,train,aggregate,1,0.1,0.2");
}

TEST_CASE("a small subset is memorised") {
  const Dataset ds = blob_dataset(8, 20, 9);
  TrainConfig cfg = small_train();
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  // Start every glimpse sequence where evaluation starts. With random starts
  // drawn once per (epoch, sample) the loop memorises those starts instead.
  cfg.margin = 0.5;
  Trainer<float> t(small_model(), cfg, ds);
  const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7};
  for (int step = 0; step < 300; ++step) t.train_step(all, 0);
  const auto m = evaluate(ds, t.params(), small_model(), cfg);
  CHECK(m.final_accuracy() == 1.0);
  CHECK(m.acc_aggregate.size() == 3);
}

TEST_CASE("configuration checks") {
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
  TrainConfig s;
  s.saccades = 0;
  CHECK_THROWS(s.validate());
  TrainConfig m;
  m.margin = 0.6;
  CHECK_THROWS(m.validate());
  CHECK_NOTHROW(TrainConfig{}.validate());
  const GridSpec g = grid_for(TrainConfig{}, 32, 28, 28);
  CHECK(g.r_min == 1.0);
  CHECK(g.r_max == doctest::Approx(std::hypot(28.0, 28.0)));
  TrainConfig fixed;
  fixed.r_max = 20.0;
  CHECK(grid_for(fixed, 32, 28, 28).r_max == 20.0);
}
