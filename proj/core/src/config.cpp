#include "vmi/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vmi {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void field_error(int line, const std::string& key, const std::string& what) {
  throw std::invalid_argument("config: line " + std::to_string(line) + ": field '" + key + "': " +
                              what);
}

double parse_double(int line, const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    if (!std::isfinite(out)) throw std::invalid_argument("non-finite");
    return out;
  } catch (const std::exception&) {
    field_error(line, key, "expected a real number, got '" + v + "'");
  }
}

long long parse_int(int line, const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    field_error(line, key, "expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(int line, const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    field_error(line, key, "expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(int line, const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  field_error(line, key, "expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) parts.push_back(cur);
  }
  return parts;
}

std::string join_doubles(const std::vector<double>& v);

std::string format_double_value(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double_value(v[i]);
  }
  return out;
}

template <typename T>
std::string join_ints(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, int line, const std::string& key, const std::string& v)>
      set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::map<std::string, Field>& schema() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> m;
    auto dbl = [](double ExperimentConfig::* ptr) {
      return Field{[ptr](ExperimentConfig& c, int l, const std::string& k,
                         const std::string& v) { c.*ptr = parse_double(l, k, v); },
                   [ptr](const ExperimentConfig& c) { return format_double_value(c.*ptr); }};
    };
    auto intf = [](int ExperimentConfig::* ptr, int lo) {
      return Field{[ptr, lo](ExperimentConfig& c, int l, const std::string& k,
                             const std::string& v) {
                     long long x = parse_int(l, k, v);
                     if (x < lo) field_error(l, k, "must be >= " + std::to_string(lo));
                     c.*ptr = static_cast<int>(x);
                   },
                   [ptr](const ExperimentConfig& c) { return std::to_string(c.*ptr); }};
    };

    m["seed"] = Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                        c.seed = parse_u64(l, k, v);
                      },
                      [](const ExperimentConfig& c) { return std::to_string(c.seed); }};

    m["task.kind"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                if (v != "synthetic" && v != "files") field_error(l, k, "expected synthetic|files");
                c.task_kind = v;
              },
              [](const ExperimentConfig& c) { return c.task_kind; }};
    m["task.code_dim"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.task.code_dim = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.task.code_dim); }};
    m["task.data_dim"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.task.data_dim = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.task.data_dim); }};
    m["task.classes"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 2) field_error(l, k, "must be >= 2");
                c.task.classes = static_cast<int>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.task.classes); }};
    m["task.samples_per_class"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.task.samples_per_class = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.task.samples_per_class); }};
    m["task.aux_samples"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.task.aux_samples = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.task.aux_samples); }};
    m["task.generator"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                if (v == "linear") c.task.generator = GeneratorKind::linear;
                else if (v == "layered") c.task.generator = GeneratorKind::layered;
                else field_error(l, k, "expected linear|layered");
              },
              [](const ExperimentConfig& c) {
                return c.task.generator == GeneratorKind::linear ? "linear" : "layered";
              }};
    m["task.noise_sigma"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                double x = parse_double(l, k, v);
                if (x < 0) field_error(l, k, "must be >= 0");
                c.task.noise_sigma = x;
              },
              [](const ExperimentConfig& c) { return format_double_value(c.task.noise_sigma); }};
    m["task.separation"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                c.task.separation = parse_double(l, k, v);
              },
              [](const ExperimentConfig& c) { return format_double_value(c.task.separation); }};
    m["task.class_std"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                double x = parse_double(l, k, v);
                if (x <= 0) field_error(l, k, "must be > 0");
                c.task.class_std = x;
              },
              [](const ExperimentConfig& c) { return format_double_value(c.task.class_std); }};
    m["task.min_separation"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                c.task.min_separation = parse_double(l, k, v);
              },
              [](const ExperimentConfig& c) { return format_double_value(c.task.min_separation); }};
    m["task.test_fraction"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                double x = parse_double(l, k, v);
                if (x < 0 || x >= 1) field_error(l, k, "must be in [0, 1)");
                c.task.test_fraction = x;
              },
              [](const ExperimentConfig& c) { return format_double_value(c.task.test_fraction); }};
    m["task.private_train"] =
        Field{[](ExperimentConfig& c, int, const std::string&, const std::string& v) {
                c.task_private_train = v;
              },
              [](const ExperimentConfig& c) { return c.task_private_train; }};
    m["task.private_test"] =
        Field{[](ExperimentConfig& c, int, const std::string&, const std::string& v) {
                c.task_private_test = v;
              },
              [](const ExperimentConfig& c) { return c.task_private_test; }};
    m["task.auxiliary"] =
        Field{[](ExperimentConfig& c, int, const std::string&, const std::string& v) {
                c.task_auxiliary = v;
              },
              [](const ExperimentConfig& c) { return c.task_auxiliary; }};

    m["models.generator_mode"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                if (v != "oracle" && v != "gan") field_error(l, k, "expected oracle|gan");
                c.generator_mode = v;
              },
              [](const ExperimentConfig& c) { return c.generator_mode; }};

    auto hidden_field = [](ClassifierHyperparams ExperimentConfig::* hp) {
      return Field{[hp](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                     std::vector<std::size_t> dims;
                     for (const std::string& part : split_list(v)) {
                       long long x = parse_int(l, k, part);
                       if (x < 1) field_error(l, k, "layer widths must be >= 1");
                       dims.push_back(static_cast<std::size_t>(x));
                     }
                     if (dims.empty()) field_error(l, k, "expected a comma list of widths");
                     (c.*hp).hidden = dims;
                   },
                   [hp](const ExperimentConfig& c) { return join_ints((c.*hp).hidden); }};
    };
    auto epochs_field = [](ClassifierHyperparams ExperimentConfig::* hp) {
      return Field{[hp](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                     long long x = parse_int(l, k, v);
                     if (x < 0) field_error(l, k, "must be >= 0");
                     (c.*hp).epochs = static_cast<int>(x);
                   },
                   [hp](const ExperimentConfig& c) { return std::to_string((c.*hp).epochs); }};
    };
    auto lr_field = [](ClassifierHyperparams ExperimentConfig::* hp) {
      return Field{[hp](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                     double x = parse_double(l, k, v);
                     if (x <= 0) field_error(l, k, "must be > 0");
                     (c.*hp).lr = x;
                   },
                   [hp](const ExperimentConfig& c) { return format_double_value((c.*hp).lr); }};
    };
    m["models.target.hidden"] = hidden_field(&ExperimentConfig::target_classifier);
    m["models.target.epochs"] = epochs_field(&ExperimentConfig::target_classifier);
    m["models.target.lr"] = lr_field(&ExperimentConfig::target_classifier);
    m["models.eval.hidden"] = hidden_field(&ExperimentConfig::eval_classifier);
    m["models.eval.epochs"] = epochs_field(&ExperimentConfig::eval_classifier);
    m["models.eval.lr"] = lr_field(&ExperimentConfig::eval_classifier);

    m["models.gan.steps"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.gan.steps = static_cast<int>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.gan.steps); }};
    m["models.gan.lr_g"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                c.gan.lr_g = parse_double(l, k, v);
              },
              [](const ExperimentConfig& c) { return format_double_value(c.gan.lr_g); }};
    m["models.gan.lr_d"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                c.gan.lr_d = parse_double(l, k, v);
              },
              [](const ExperimentConfig& c) { return format_double_value(c.gan.lr_d); }};
    m["models.generator.layers"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.gan.generator.layers = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.gan.generator.layers); }};
    m["models.discriminator_steps"] = intf(&ExperimentConfig::discriminator_steps, 0);

    m["attack.family"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                try {
                  c.attack.family = family_kind_from_string(v);
                } catch (const std::exception& e) {
                  field_error(l, k, e.what());
                }
              },
              [](const ExperimentConfig& c) { return family_kind_to_string(c.attack.family); }};
    m["attack.layer_family"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                if (v != "gaussian" && v != "flow") field_error(l, k, "expected gaussian|flow");
                c.attack.layer_family = family_kind_from_string(v);
              },
              [](const ExperimentConfig& c) {
                return family_kind_to_string(c.attack.layer_family);
              }};
    m["attack.gamma"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                double x = parse_double(l, k, v);
                if (x < 0) field_error(l, k, "must be >= 0");
                c.attack.gamma = x;
              },
              [](const ExperimentConfig& c) { return format_double_value(c.attack.gamma); }};
    m["attack.n_mc"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.attack.n_mc = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.attack.n_mc); }};
    m["attack.steps"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 0) field_error(l, k, "must be >= 0");
                c.attack.steps = static_cast<int>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.attack.steps); }};
    m["attack.lr"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                double x = parse_double(l, k, v);
                if (x <= 0) field_error(l, k, "must be > 0");
                c.attack.optimizer.lr = x;
              },
              [](const ExperimentConfig& c) { return format_double_value(c.attack.optimizer.lr); }};
    m["attack.optimizer"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                try {
                  c.attack.optimizer.kind = optimizer_kind_from_string(v);
                } catch (const std::exception& e) {
                  field_error(l, k, e.what());
                }
              },
              [](const ExperimentConfig& c) {
                return c.attack.optimizer.kind == OptimizerConfig::Kind::adam ? "adam" : "sgd";
              }};
    m["attack.restarts"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 0) field_error(l, k, "must be >= 0");
                c.attack.restarts = static_cast<int>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.attack.restarts); }};
    m["attack.flow_blocks"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.attack.flow_blocks = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.attack.flow_blocks); }};
    m["attack.flow_hidden"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.attack.flow_hidden = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.attack.flow_hidden); }};
    m["attack.classes"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                c.attack_classes.clear();
                if (v == "all") return;
                for (const std::string& part : split_list(v)) {
                  long long x = parse_int(l, k, part);
                  if (x < 0) field_error(l, k, "class indices must be >= 0");
                  c.attack_classes.push_back(static_cast<int>(x));
                }
              },
              [](const ExperimentConfig& c) {
                return c.attack_classes.empty() ? "all" : join_ints(c.attack_classes);
              }};

    m["baselines.enabled"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                c.baselines_enabled = parse_bool(l, k, v);
              },
              [](const ExperimentConfig& c) { return c.baselines_enabled ? "true" : "false"; }};
    m["baselines.general_steps"] = intf(&ExperimentConfig::general_steps, 0);
    m["baselines.general_lr"] = dbl(&ExperimentConfig::general_lr);
    m["baselines.generative_steps"] = intf(&ExperimentConfig::generative_steps, 0);
    m["baselines.generative_lr"] = dbl(&ExperimentConfig::generative_lr);
    m["baselines.lambda"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                double x = parse_double(l, k, v);
                if (x <= 0) field_error(l, k, "must be > 0");
                c.generative_lambda = x;
              },
              [](const ExperimentConfig& c) { return format_double_value(c.generative_lambda); }};

    m["metrics.k"] = intf(&ExperimentConfig::metrics_k, 1);
    m["metrics.samples_per_class"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                long long x = parse_int(l, k, v);
                if (x < 1) field_error(l, k, "must be >= 1");
                c.metrics_samples_per_class = static_cast<std::size_t>(x);
              },
              [](const ExperimentConfig& c) {
                return std::to_string(c.metrics_samples_per_class);
              }};

    m["sweep.gammas"] =
        Field{[](ExperimentConfig& c, int l, const std::string& k, const std::string& v) {
                std::vector<double> gs;
                for (const std::string& part : split_list(v)) {
                  double x = parse_double(l, k, part);
                  if (x < 0) field_error(l, k, "gammas must be >= 0");
                  gs.push_back(x);
                }
                if (gs.empty()) field_error(l, k, "expected a comma list of gammas");
                c.sweep_gammas = gs;
              },
              [](const ExperimentConfig& c) { return join_doubles(c.sweep_gammas); }};
    m["sweep.workers"] = intf(&ExperimentConfig::sweep_workers, 0);
    return m;
  }();
  return fields;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_string(const std::string& text) {
  ExperimentConfig cfg;
  std::map<std::string, int> seen;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  bool have_seed = false;
  while (std::getline(is, raw)) {
    ++line;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line) +
                                  ": expected 'key = value'");
    }
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    auto it = schema().find(key);
    if (it == schema().end()) {
      throw std::invalid_argument("config: line " + std::to_string(line) + ": unknown key '" +
                                  key + "'");
    }
    auto [prev, inserted] = seen.emplace(key, line);
    if (!inserted) {
      throw std::invalid_argument("config: line " + std::to_string(line) + ": duplicate key '" +
                                  key + "' (first set on line " + std::to_string(prev->second) +
                                  ")");
    }
    it->second.set(cfg, line, key, value);
    if (key == "seed") have_seed = true;
  }
  if (!have_seed) throw std::invalid_argument("config: missing mandatory key 'seed'");
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_string(buf.str());
}

void ExperimentConfig::validate() const {
  if (task_kind == "files") {
    if (task_private_train.empty() || task_private_test.empty() || task_auxiliary.empty()) {
      throw std::invalid_argument(
          "config: field 'task.private_train/private_test/auxiliary': required when task.kind = "
          "files");
    }
  }
  if (task_kind == "synthetic" && task.generator == GeneratorKind::linear &&
      task.code_dim > task.data_dim) {
    throw std::invalid_argument("config: field 'task.code_dim': must be <= task.data_dim for the "
                                "linear generator");
  }
  attack.validate();
  if (attack.family != FamilyKind::gaussian && task.code_dim % 2 != 0) {
    throw std::invalid_argument(
        "config: field 'task.code_dim': flow families need an even code dim");
  }
}

std::string ExperimentConfig::canonical_string() const {
  std::string out;
  for (const auto& [key, field] : schema()) {
    out += key;
    out += " = ";
    out += field.get(*this);
    out += "\n";
  }
  return out;
}

std::string ExperimentConfig::config_hash() const {
  std::string s = canonical_string();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 0; i < 16; ++i) buf[15 - i] = hex[(h >> (4 * i)) & 0xF];
  buf[16] = '\0';
  return std::string(buf);
}

}  // namespace vmi
