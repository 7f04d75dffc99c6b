#include "rtn/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#ifndef RTN_BUILD_ID
#define RTN_BUILD_ID "unknown"
#endif

namespace rtn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string canonical_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::string fmt_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define RTN_STRING(NAME, MEMBER, HELP)                                        \
  Field {                                                                     \
    {NAME, HELP, false}, [](RunConfig& c, const std::string& v) { c.MEMBER = v; }, \
        [](const RunConfig& c) { return c.MEMBER; }                           \
  }
#define RTN_NUMBER(NAME, MEMBER, TYPE, HELP)                                              \
  Field {                                                                                 \
    {NAME, HELP, false},                                                                  \
        [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<TYPE>(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                       \
  }
#define RTN_REAL(NAME, MEMBER, HELP)                                                          \
  Field {                                                                                     \
    {NAME, HELP, false},                                                                      \
        [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<double>(NAME, v); }, \
        [](const RunConfig& c) { return fmt_double(c.MEMBER); }                               \
  }
#define RTN_BOOL(NAME, MEMBER, HELP)                                                       \
  Field {                                                                                  \
    {NAME, HELP, true}, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(NAME, v); }, \
        [](const RunConfig& c) { return fmt_bool(c.MEMBER); }                              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      RTN_STRING("dataset", dataset, "mnist | fashion_mnist | cifar10"),
      RTN_STRING("data_dir", data_dir, "directory holding the dataset folders"),
      RTN_STRING("out_dir", out_dir, "output directory"),
      RTN_STRING("resume", resume, "checkpoint to resume training from"),
      RTN_STRING("checkpoint", checkpoint, "checkpoint to evaluate or trace"),
      Field{{"precision", "float32 | float64", false},
            [](RunConfig& c, const std::string& v) {
              if (v == "float32") c.precision = Precision::float32;
              else if (v == "float64") c.precision = Precision::float64;
              else bad_value("precision", v, "float32 or float64");
            },
            [](const RunConfig& c) {
              return std::string(c.precision == Precision::float32 ? "float32" : "float64");
            }},
      RTN_NUMBER("train_limit", train_limit, std::size_t, "use only the first N training samples (0 = all)"),
      RTN_NUMBER("test_limit", test_limit, std::size_t, "use only the first N test samples (0 = all)"),
      RTN_NUMBER("log_every", log_every, int, "batches between progress lines (0 = quiet)"),
      RTN_NUMBER("patch", model.patch, int, "log-polar patch side (multiple of 8)"),
      Field{{"phi_readout", "circular | linear", false},
            [](RunConfig& c, const std::string& v) {
              if (v == "circular") c.model.phi_readout = PhiReadout::circular;
              else if (v == "linear") c.model.phi_readout = PhiReadout::linear;
              else bad_value("phi_readout", v, "circular or linear");
            },
            [](const RunConfig& c) {
              return std::string(c.model.phi_readout == PhiReadout::circular ? "circular" : "linear");
            }},
      RTN_NUMBER("batch_size", train.batch_size, std::size_t, "minibatch size"),
      RTN_NUMBER("epochs", train.epochs, int, "total epochs to train"),
      RTN_REAL("lr", train.lr, "learning rate"),
      Field{{"optimizer", "adam | sgd_momentum", false},
            [](RunConfig& c, const std::string& v) {
              if (v == "adam") c.train.optimizer = OptimizerKind::adam;
              else if (v == "sgd_momentum") c.train.optimizer = OptimizerKind::sgd_momentum;
              else bad_value("optimizer", v, "adam or sgd_momentum");
            },
            [](const RunConfig& c) {
              return std::string(c.train.optimizer == OptimizerKind::adam ? "adam" : "sgd_momentum");
            }},
      RTN_REAL("beta1", train.beta1, "Adam first-moment decay"),
      RTN_REAL("beta2", train.beta2, "Adam second-moment decay"),
      RTN_REAL("adam_eps", train.adam_eps, "Adam denominator epsilon"),
      RTN_REAL("momentum", train.momentum, "SGD momentum"),
      RTN_REAL("weight_decay", train.weight_decay, "L2 weight decay"),
      RTN_NUMBER("lr_decay_every", train.lr_decay_every, int, "step decay period in epochs (0 = constant)"),
      RTN_REAL("lr_decay", train.lr_decay, "step decay factor"),
      RTN_REAL("grad_clip", train.grad_clip, "global-norm gradient clip (0 = off)"),
      RTN_REAL("lambda_greedy", train.lambda_greedy, "weight of the greedy task loss"),
      RTN_NUMBER("greedy_pretrain_epochs", train.greedy_pretrain_epochs, int,
                 "initial epochs trained on the greedy task only"),
      RTN_NUMBER("saccades", train.saccades, int, "glimpses per image"),
      RTN_NUMBER("seed", train.seed, std::uint64_t, "random seed"),
      RTN_BOOL("flip", train.augment.flip, "random horizontal flip"),
      RTN_BOOL("zoom", train.augment.zoom, "random zoom about the image center"),
      RTN_REAL("zoom_min", train.augment.zoom_min, "lower zoom factor"),
      RTN_REAL("zoom_max", train.augment.zoom_max, "upper zoom factor"),
      RTN_BOOL("hue", train.augment.hue, "hue jitter (color images)"),
      RTN_BOOL("saturation", train.augment.saturation, "saturation jitter (color images)"),
      RTN_BOOL("brightness", train.augment.brightness, "brightness jitter (color images)"),
      RTN_BOOL("contrast", train.augment.contrast, "contrast jitter (color images)"),
      RTN_REAL("hue_range", train.augment.hue_range, "hue shift bound in turns"),
      RTN_REAL("jitter_min", train.augment.jitter_min, "lower color jitter factor"),
      RTN_REAL("jitter_max", train.augment.jitter_max, "upper color jitter factor"),
      RTN_REAL("r_min", train.r_min, "inner sampling radius in pixels"),
      RTN_REAL("r_max", train.r_max, "outer sampling radius in pixels (0 = image diagonal)"),
      RTN_REAL("margin", train.margin, "initial center margin as a fraction of the image"),
      Field{{"eval_center", "image_center | random", false},
            [](RunConfig& c, const std::string& v) {
              if (v == "image_center") c.train.eval_center = EvalCenter::image_center;
              else if (v == "random") c.train.eval_center = EvalCenter::random;
              else bad_value("eval_center", v, "image_center or random");
            },
            [](const RunConfig& c) {
              return std::string(c.train.eval_center == EvalCenter::image_center ? "image_center"
                                                                                 : "random");
            }},
      RTN_NUMBER("threads", train.threads, int, "worker threads"),
      RTN_BOOL("deterministic", train.deterministic, "single-thread ordered gradient reduction"),
  };
  return table;
}

#undef RTN_STRING
#undef RTN_NUMBER
#undef RTN_REAL
#undef RTN_BOOL

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key.name == key) return &f;
  return nullptr;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

KeyValues parse_config_text(std::string_view text) {
  KeyValues out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = canonical_key(trim(std::string_view(t).substr(0, eq)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, trim(std::string_view(t).substr(eq + 1))).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' repeated");
  }
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_config(RunConfig& cfg, const KeyValues& values) {
  for (const auto& [raw, value] : values) {
    const std::string key = canonical_key(raw);
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + raw + "'");
    f->set(cfg, value);
  }
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues out;
  for (const auto& f : fields()) out[f.key.name] = f.get(cfg);
  return out;
}

std::string build_id() { return RTN_BUILD_ID; }

}  // namespace rtn
