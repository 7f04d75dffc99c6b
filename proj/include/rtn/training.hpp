#pragma once

// Multitask training (greedy + aggregation), augmentation and evaluation.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rtn/checkpoint.hpp"
#include "rtn/data.hpp"
#include "rtn/model.hpp"

namespace rtn {

enum class OptimizerKind { adam, sgd_momentum };
enum class EvalCenter { image_center, random };

struct AugmentConfig {
  bool flip = false;
  bool zoom = false;
  double zoom_min = 0.9, zoom_max = 1.1;
  // Color jitter, applied to 3-channel images only.
  bool hue = false, saturation = false, brightness = false, contrast = false;
  double hue_range = 0.05;  // +- turns of the color wheel
  double jitter_min = 0.8, jitter_max = 1.2;

  bool any() const { return flip || zoom || hue || saturation || brightness || contrast; }
};

struct TrainConfig {
  std::size_t batch_size = 32;
  int epochs = 10;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int lr_decay_every = 0;  // epochs; 0 keeps the rate constant
  double lr_decay = 0.1;
  double grad_clip = 0.0;  // global-norm clip of the batch gradient; 0 disables
  double lambda_greedy = 1.0;
  int greedy_pretrain_epochs = 0;  // epochs trained on the greedy task alone
  int saccades = 4;
  std::uint64_t seed = 1;
  AugmentConfig augment;
  double r_min = 1.0;
  double r_max = 0.0;  // 0 = image diagonal
  double margin = 0.25;
  EvalCenter eval_center = EvalCenter::image_center;
  int threads = 1;
  bool deterministic = true;

  void validate() const;
};

/// Grid used for images of the given size under this configuration.
GridSpec grid_for(const TrainConfig& cfg, int patch, std::size_t image_h, std::size_t image_w);

/// Mixes a base seed with stream identifiers into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Uniform over [m*(W-1), (1-m)*(W-1)] x [m*(H-1), (1-m)*(H-1)]; margin 0.5
/// gives the pixel center of the image.
CartesianPoint sample_init_center(std::mt19937_64& rng, std::size_t height, std::size_t width,
                                  double margin);
CartesianPoint image_center(std::size_t height, std::size_t width);

template <class T>
Tensor<T> augment(const Tensor<T>& img, std::mt19937_64& rng, const AugmentConfig& cfg);

template <class T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ModelParams<T>& shape_like);
  /// params -= update(grads); zero gradients leave params unchanged.
  void apply(ModelParams<T>& params, const ModelParams<T>& grads, double lr);
  std::uint64_t steps() const { return step_; }
  void save(Checkpoint& ck) const;
  void restore(const Checkpoint& ck);

 private:
  TrainConfig cfg_;
  ModelParams<T> m_, v_;
  std::uint64_t step_ = 0;
};

struct StepAccuracy {
  std::vector<std::uint64_t> aggregate_correct;  // RNN readout, per glimpse
  std::vector<std::uint64_t> glimpse_correct;    // single-glimpse classifier, per glimpse
  std::uint64_t samples = 0;
  void resize(int steps);
  void merge(const StepAccuracy& o);
  std::vector<double> aggregate_rate() const;
  std::vector<double> glimpse_rate() const;
};

struct BatchStats {
  double loss_total = 0, loss_greedy = 0, loss_aggregate = 0;  // sums over samples
  StepAccuracy acc;
  void merge(const BatchStats& o);
};

struct EvalMetrics {
  double loss_aggregate = 0;  // mean over samples
  double loss_greedy = 0;
  std::vector<double> acc_aggregate;  // per saccade
  std::vector<double> acc_glimpse;
  std::size_t samples = 0;
  double final_accuracy() const { return acc_aggregate.empty() ? 0.0 : acc_aggregate.back(); }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0, train_loss_greedy = 0, train_loss_aggregate = 0;
  std::vector<double> train_acc_aggregate, train_acc_glimpse;
  bool has_test = false;
  EvalMetrics test;
  double seconds = 0;
};

/// Accuracy of the saccade-S prediction on a dataset. Deterministic for a
/// fixed seed regardless of thread count.
template <class T>
EvalMetrics evaluate(const Dataset& ds, const ModelParams<T>& params, const ModelConfig& model,
                     const TrainConfig& cfg, std::size_t limit = 0);

template <class T>
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig cfg, const Dataset& train);

  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const GridSpec& grid() const { return grid_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  int epochs_done() const { return epochs_done_; }

  /// Loss spec used for a sample in the given (0-based) epoch.
  LossSpec loss_for(std::size_t label, int epoch) const;

  /// Gradients of the batch loss (mean over samples) accumulated into grads.
  BatchStats batch_gradients(const std::vector<std::size_t>& indices, int epoch, ModelParams<T>& grads);

  /// One optimizer update on the given training indices; returns batch stats.
  BatchStats train_step(const std::vector<std::size_t>& indices, int epoch);

  using BatchCallback = std::function<void(int epoch, std::size_t batch, std::size_t batches,
                                           const BatchStats&)>;
  /// Trains epochs_done()+1; evaluates on `test` when given.
  EpochMetrics run_epoch(const Dataset* test, const BatchCallback& on_batch = {},
                         std::size_t test_limit = 0);

  double current_lr(int epoch) const;
  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ck);

 private:
  ModelConfig model_;
  TrainConfig cfg_;
  const Dataset& train_;
  GridSpec grid_;
  ModelParams<T> params_;
  Optimizer<T> opt_;
  std::vector<ModelParams<T>> worker_grads_;
  int epochs_done_ = 0;
};

/// Metrics CSV: epoch,split,task,loss,acc1..accS
std::string metrics_csv_header(int saccades);
std::vector<std::string> metrics_csv_rows(const EpochMetrics& m);

}  // namespace rtn
