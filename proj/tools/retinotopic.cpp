// retinotopic: command-line front end for training, evaluation, gradient
// checking, saccade traces and standalone log-polar warps.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "rtn/checkpoint.hpp"
#include "rtn/data.hpp"
#include "rtn/errors.hpp"
#include "rtn/gradcheck.hpp"
#include "rtn/kernels/kernels.hpp"
#include "rtn/model.hpp"
#include "rtn/ppm.hpp"
#include "rtn/run_config.hpp"
#include "rtn/sampler.hpp"
#include "rtn/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum Exit { ok = 0, failed = 1, usage = 2, diverged = 3, io = 4 };

// Config keys exposed as --dashed-flags on a subcommand, collected as text so
// that only explicitly given flags override the config file.
struct FlagSet {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key=value config file (flags override it)")
        ->check(CLI::ExistingFile);
    for (const auto& key : rtn::config_keys()) {
      std::string flag = "--" + key.name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      CLI::Option* opt = app.add_option(flag, values[key.name], key.help);
      if (key.is_flag) opt->expected(0, 1);
      options[key.name] = opt;
    }
  }

  rtn::RunConfig resolve() const {
    rtn::RunConfig cfg;
    if (!config_file.empty()) rtn::apply_config(cfg, rtn::read_config_file(config_file));
    rtn::KeyValues given;
    for (const auto& [name, opt] : options) {
      if (opt->count() == 0) continue;
      const std::string& v = values.at(name);
      given[name] = v.empty() ? "true" : v;
    }
    rtn::apply_config(cfg, given);
    cfg.model = rtn::ModelConfig{.in_channels = cfg.model.in_channels,
                                 .patch = cfg.model.patch,
                                 .phi_readout = cfg.model.phi_readout};
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
  }
};

rtn::Dataset load_split(const rtn::RunConfig& cfg, const std::string& split) {
  const fs::path dir = rtn::resolve_data_dir(cfg.data_dir);
  rtn::Dataset ds = rtn::load_dataset(cfg.dataset, dir, split);
  const std::size_t limit = split == "train" ? cfg.train_limit : cfg.test_limit;
  return limit ? ds.head(limit) : ds;
}

json config_json(const rtn::RunConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : rtn::to_key_values(cfg)) j[k] = v;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// run.json records the effective configuration; run.cfg is the same in
// key=value form, usable directly with --config.
void write_provenance(const fs::path& out, const std::string& command, const rtn::RunConfig& cfg,
                      const rtn::Dataset* train) {
  json j;
  j["command"] = command;
  j["build_id"] = rtn::build_id();
  j["isa"] = rtn::kernels::isa_name(rtn::kernels::active_isa());
  j["config"] = config_json(cfg);
  if (train) {
    const auto stats = rtn::normalize_stats(*train);
    j["dataset_stats"] = {{"samples", train->size()}, {"mean", stats.mean}, {"std", stats.std}};
  }
  write_json(out / "run.json", j);
  std::string text;
  for (const auto& [k, v] : rtn::to_key_values(cfg)) text += k + " = " + v + "\n";
  write_text(out / "run.cfg", text);
}

json metrics_json(const rtn::EvalMetrics& m) {
  return {{"samples", m.samples},
          {"final_accuracy", m.final_accuracy()},
          {"loss_aggregate", m.loss_aggregate},
          {"loss_greedy", m.loss_greedy},
          {"accuracy_per_saccade", m.acc_aggregate},
          {"glimpse_accuracy_per_saccade", m.acc_glimpse}};
}

void print_table(const rtn::EvalMetrics& m) {
  std::printf("saccade  aggregate  single-glimpse\n");
  for (std::size_t s = 0; s < m.acc_aggregate.size(); ++s)
    std::printf("%7zu  %9.4f  %14.4f\n", s + 1, m.acc_aggregate[s], m.acc_glimpse[s]);
  std::printf("final-saccade accuracy: %.4f (%zu samples)\n", m.final_accuracy(), m.samples);
}

// --- train ------------------------------------------------------------------

template <class T>
int run_train(const rtn::RunConfig& cfg) {
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  const rtn::Dataset train = load_split(cfg, "train");
  const rtn::Dataset test = load_split(cfg, "test");
  rtn::ModelConfig model = cfg.model;
  model.in_channels = train.channels();
  write_provenance(out, "train", cfg, &train);

  rtn::Trainer<T> trainer(model, cfg.train, train);
  json summary;
  json epochs = json::array();
  if (!cfg.resume.empty()) {
    trainer.restore(rtn::Checkpoint::load(cfg.resume));
    std::fprintf(stderr, "resumed from %s after epoch %d\n", cfg.resume.c_str(), trainer.epochs_done());
    // Carry over earlier epochs recorded in this output directory.
    if (std::ifstream prev(out / "summary.json"); prev) {
      const json old = json::parse(prev, nullptr, false);
      if (!old.is_discarded() && old.contains("epochs"))
        for (const auto& e : old["epochs"])
          if (e.value("epoch", 0) <= trainer.epochs_done()) epochs.push_back(e);
    }
  }

  // A fresh run starts a new metrics file; a resumed run keeps the rows of the
  // epochs its checkpoint already covers and appends from there.
  const fs::path csv = out / "metrics.csv";
  std::string kept = rtn::metrics_csv_header(cfg.train.saccades) + "\n";
  if (!cfg.resume.empty())
    if (std::ifstream prev(csv); prev) {
      std::string line;
      std::getline(prev, line);
      while (std::getline(prev, line))
        if (!line.empty() && std::stoi(line) <= trainer.epochs_done()) kept += line + "\n";
    }
  write_text(csv, kept);

  const auto progress = [&](int epoch, std::size_t b, std::size_t n, const rtn::BatchStats& st) {
    if (cfg.log_every <= 0 || (b + 1) % cfg.log_every != 0) return;
    const double k = double(std::max<std::uint64_t>(1, st.acc.samples));
    std::fprintf(stderr, "epoch %d batch %zu/%zu loss %.4f (greedy %.4f, aggregate %.4f)\n", epoch + 1,
                 b + 1, n, st.loss_total / k, st.loss_greedy / k, st.loss_aggregate / k);
  };

  while (trainer.epochs_done() < cfg.train.epochs) {
    const rtn::EpochMetrics m = trainer.run_epoch(&test, progress, 0);
    {
      std::ofstream f(csv, std::ios::app);
      for (const auto& row : rtn::metrics_csv_rows(m)) f << row << "\n";
    }
    const fs::path ck = out / ("epoch_" + std::to_string(m.epoch) + ".rtnt");
    trainer.checkpoint().save(ck);
    epochs.push_back({{"epoch", m.epoch},
                      {"train_loss", m.train_loss},
                      {"test_accuracy", m.test.final_accuracy()},
                      {"seconds", m.seconds}});
    double wall = 0.0;
    for (const auto& e : epochs) wall += e.value("seconds", 0.0);
    summary = {{"dataset", cfg.dataset},
               {"build_id", rtn::build_id()},
               {"isa", rtn::kernels::isa_name(rtn::kernels::active_isa())},
               {"threads", cfg.train.deterministic ? 1 : cfg.train.threads},
               {"saccades", cfg.train.saccades},
               {"patch", model.patch},
               {"parameters", trainer.params().parameter_count()},
               {"epochs_completed", m.epoch},
               {"wall_seconds", wall},
               {"checkpoint", ck.filename().string()},
               {"test", metrics_json(m.test)},
               {"epochs", epochs}};
    write_json(out / "summary.json", summary);
    std::printf("epoch %d: train loss %.4f, test accuracy %.4f (%.0f s)\n", m.epoch, m.train_loss,
                m.test.final_accuracy(), m.seconds);
    std::fflush(stdout);
  }
  return Exit::ok;
}

// --- eval -------------------------------------------------------------------

template <class T>
rtn::ModelParams<T> load_or_init(const rtn::RunConfig& cfg, rtn::ModelConfig& model) {
  if (cfg.checkpoint.empty()) {
    std::fprintf(stderr, "no --checkpoint given: using untrained weights (seed %llu)\n",
                 static_cast<unsigned long long>(cfg.train.seed));
    return rtn::ModelParams<T>::init(model, rtn::derive_seed(cfg.train.seed, 0x1417));
  }
  const rtn::Checkpoint ck = rtn::Checkpoint::load(cfg.checkpoint);
  model = rtn::restore_model_config(ck);
  rtn::ModelParams<T> p = rtn::ModelParams<T>::zeros(model);
  rtn::restore_params(ck, p);
  return p;
}

template <class T>
int run_eval(const rtn::RunConfig& cfg, const std::string& split) {
  const rtn::Dataset ds = load_split(cfg, split);
  rtn::ModelConfig model = cfg.model;
  model.in_channels = ds.channels();
  const rtn::ModelParams<T> params = load_or_init<T>(cfg, model);
  const auto t0 = std::chrono::steady_clock::now();
  const rtn::EvalMetrics m = rtn::evaluate(ds, params, model, cfg.train);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  print_table(m);
  fs::create_directories(cfg.out_dir);
  json j = metrics_json(m);
  j["dataset"] = cfg.dataset;
  j["split"] = split;
  j["checkpoint"] = cfg.checkpoint;
  j["seconds"] = secs;
  write_json(fs::path(cfg.out_dir) / "eval.json", j);
  write_provenance(cfg.out_dir, "eval", cfg, nullptr);
  return Exit::ok;
}

// --- trace ------------------------------------------------------------------

struct Rgb {
  std::uint8_t r, g, b;
};

void plot(rtn::PpmImage& img, long x, long y, Rgb c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  std::uint8_t* p = &img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3];
  p[0] = c.r, p[1] = c.g, p[2] = c.b;
}

void draw_line(rtn::PpmImage& img, long x0, long y0, long x1, long y1, Rgb c) {
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  for (;;) {
    plot(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) err += dy, x0 += sx;
    if (e2 <= dx) err += dx, y0 += sy;
  }
}

rtn::PpmImage upscale_rgb(const rtn::Tensor<float>& img, int scale) {
  const rtn::PpmImage src = rtn::tensor_to_ppm(img);
  rtn::PpmImage out{src.width * scale, src.height * scale, 3, {}};
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int sc = src.channels == 3 ? c : 0;
        out.pixels[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] =
            src.pixels[(static_cast<std::size_t>(y / scale) * src.width + x / scale) * src.channels + sc];
      }
  return out;
}

int run_trace(const rtn::RunConfig& cfg, std::size_t index, int scale) {
  const rtn::Dataset ds = load_split(cfg, "test");
  RTN_REQUIRE(index < ds.size(), "trace: --index beyond the test split (" + std::to_string(ds.size()) + ")");
  rtn::ModelConfig model = cfg.model;
  model.in_channels = ds.channels();
  const rtn::ModelParams<float> params = load_or_init<float>(cfg, model);
  const rtn::Tensor<float> img = ds.image(index);
  const rtn::GridSpec spec = rtn::grid_for(cfg.train, model.patch, ds.height(), ds.width());
  const rtn::CartesianPoint c0 = rtn::image_center(ds.height(), ds.width());
  const auto u = rtn::unroll_forward(params, model, img, c0, spec, cfg.train.saccades);
  const auto trace = u.trace(true);

  const fs::path out = fs::path(cfg.out_dir) / ("trace_" + std::to_string(index));
  fs::create_directories(out);
  std::string csv = "step,x,y,phi,rho,predicted,confidence,label\n";
  for (std::size_t s = 0; s < trace.centers.size(); ++s) {
    char line[256];
    const auto& c = trace.centers[s];
    if (s == 0) {
      std::snprintf(line, sizeof line, "0,%.6f,%.6f,,,,,%d\n", c.x, c.y, ds.labels[index]);
    } else {
      const auto& p = trace.class_probs[s - 1];
      const auto best = std::max_element(p.begin(), p.end()) - p.begin();
      std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.6f,%ld,%.6f,%d\n", s, c.x, c.y,
                    trace.readouts[s - 1].phi, trace.readouts[s - 1].rho, static_cast<long>(best),
                    double(p[best]), ds.labels[index]);
    }
    csv += line;
  }
  write_text(out / "centers.csv", csv);
  for (std::size_t s = 0; s < trace.patches.size(); ++s)
    rtn::write_ppm(out / ("patch_" + std::to_string(s + 1) + ".ppm"), rtn::tensor_to_ppm(trace.patches[s]));

  rtn::PpmImage src = upscale_rgb(img, scale);
  const auto px = [&](double v) { return std::lround((v + 0.5) * scale - 0.5); };
  for (std::size_t s = 0; s + 1 < trace.centers.size(); ++s)
    draw_line(src, px(trace.centers[s].x), px(trace.centers[s].y), px(trace.centers[s + 1].x),
              px(trace.centers[s + 1].y), {255, 40, 40});
  for (std::size_t s = 0; s < trace.centers.size(); ++s) {
    const Rgb mark = s == 0 ? Rgb{40, 200, 255} : Rgb{255, 220, 0};
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) plot(src, px(trace.centers[s].x) + dx, px(trace.centers[s].y) + dy, mark);
  }
  rtn::write_ppm(out / "source.ppm", src);
  std::printf("wrote %zu centers and %zu patches to %s\n", trace.centers.size(), trace.patches.size(),
              out.string().c_str());
  return Exit::ok;
}

// --- warp -------------------------------------------------------------------

int run_warp(const std::string& input, double cx, double cy, int patch, double r_min, double r_max,
             const std::string& output) {
  const rtn::Tensor<float> img = rtn::ppm_to_tensor(rtn::read_ppm(input));
  rtn::GridSpec spec = rtn::default_grid_spec(patch, img.dim(1), img.dim(2));
  spec.r_min = r_min;
  if (r_max > 0) spec.r_max = r_max;
  spec.validate();
  const rtn::Tensor<float> out = rtn::warp(img, rtn::SamplerParams{{cx, cy}, spec});
  rtn::write_ppm(output, rtn::tensor_to_ppm(out));
  std::printf("wrote %dx%d log-polar patch (rows: angle, columns: log radius %.3g..%.3g px) to %s\n",
              spec.h_prime, spec.w_prime, spec.r_min, spec.r_max, output.c_str());
  return Exit::ok;
}

// --- gradcheck ----------------------------------------------------------------

int run_gradcheck_cmd(const rtn::GradcheckOptions& opts) {
  std::printf("finite-difference gradient check (float64, eps %.0e, relative error floor %.0e)\n", opts.eps,
              opts.floor);
  std::printf("%-16s %12s %10s %8s %8s  %s\n", "component", "max rel err", "threshold", "checked", "kinks",
              "result");
  bool all_ok = true;
  for (const auto& r : rtn::run_gradcheck(opts)) {
    std::printf("%-16s %12.3e %10.0e %8zu %8zu  %s\n", r.component.c_str(), r.max_rel_err, r.threshold,
                r.checked, r.skipped, r.passed() ? "PASS" : "FAIL");
    all_ok = all_ok && r.passed();
  }
  return all_ok ? Exit::ok : Exit::failed;
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const rtn::DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return Exit::diverged;
  } catch (const rtn::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return Exit::usage;
  } catch (const rtn::ContractError& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return Exit::usage;
  } catch (const rtn::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return Exit::io;
  } catch (const rtn::CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return Exit::io;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return Exit::failed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saccadic log-polar image classifier"};
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "force a kernel set (scalar | avx2)");

  FlagSet train_flags, eval_flags, trace_flags;
  auto* train = app.add_subcommand("train", "train a model, writing per-epoch checkpoints and metrics");
  train_flags.attach(*train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval_flags.attach(*eval);
  std::string split = "test";
  eval->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}));

  rtn::GradcheckOptions gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  grad->add_option("--only", gc.only, "run a single component")
      ->check(CLI::IsMember(rtn::gradcheck_components()));
  grad->add_option("--seed", gc.seed, "random seed");
  grad->add_option("--trials", gc.trials, "random images/centers for the sampler check");

  auto* trace = app.add_subcommand("trace", "export the saccade trace of one test image");
  trace_flags.attach(*trace);
  std::size_t index = 0;
  int scale = 8;
  trace->add_option("--index", index, "test image index");
  trace->add_option("--scale", scale, "upscaling of the source overlay")->check(CLI::Range(1, 64));

  auto* warp = app.add_subcommand("warp", "log-polar warp of a PPM/PGM image around (cx, cy)");
  std::string input, output = "warp.ppm";
  double cx = 0, cy = 0, r_min = 1.0, r_max = 0.0;
  int patch = 64;
  warp->add_option("input", input, "input .ppm / .pgm")->required()->check(CLI::ExistingFile);
  warp->add_option("cx", cx, "center x (column) in pixels")->required();
  warp->add_option("cy", cy, "center y (row) in pixels")->required();
  warp->add_option("--patch", patch, "output side")->check(CLI::Range(1, 4096));
  warp->add_option("--r-min", r_min, "inner radius in pixels");
  warp->add_option("--r-max", r_max, "outer radius in pixels (0 = image diagonal)");
  warp->add_option("-o,--output", output, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? Exit::ok : Exit::usage;
  }

  return guarded([&] {
    if (!isa.empty()) rtn::kernels::set_isa(isa == "avx2" ? rtn::kernels::Isa::avx2 : rtn::kernels::Isa::scalar);
    if (*train) {
      const rtn::RunConfig cfg = train_flags.resolve();
      return cfg.precision == rtn::Precision::float64 ? run_train<double>(cfg) : run_train<float>(cfg);
    }
    if (*eval) {
      const rtn::RunConfig cfg = eval_flags.resolve();
      return cfg.precision == rtn::Precision::float64 ? run_eval<double>(cfg, split)
                                                      : run_eval<float>(cfg, split);
    }
    if (*grad) return run_gradcheck_cmd(gc);
    if (*trace) return run_trace(trace_flags.resolve(), index, scale);
    return run_warp(input, cx, cy, patch, r_min, r_max, output);
  });
}
