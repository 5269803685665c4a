#include "crescendo/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace crescendo {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

struct Value {
  std::string text;
  int line;
};

class Reader {
 public:
  explicit Reader(std::map<std::string, Value> values) : values_(std::move(values)) {}

  bool has(const std::string& key) const { return values_.contains(key); }

  const Value& require(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, 0, "required key is missing");
    return it->second;
  }

  template <typename F>
  void optional(const std::string& key, F&& apply) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return;
    try {
      apply(it->second.text);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key, it->second.line, e.what());
    }
  }

  template <typename F>
  void required(const std::string& key, F&& apply) const {
    require(key);
    optional(key, std::forward<F>(apply));
  }

 private:
  std::map<std::string, Value> values_;
};

template <typename N>
N parse_number(const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw UsageError("'" + text + "' is not a valid number");
  return value;
}

int parse_positive(const std::string& text) {
  const int v = parse_number<int>(text);
  if (v < 1) throw UsageError("expected a positive integer, got " + text);
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw UsageError("'" + text + "' is not a boolean");
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = text.find(sep, start);
    parts.emplace_back(trim(text.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

const std::set<std::string> kKnownKeys = {
    "scale",         "interval",     "block_widths", "width_mode",      "classes",       "dataset",
    "train_subset",  "test_subset",  "droppath_rate", "dropout_rate",   "l2_lambda",     "epochs",
    "batch_size",    "optimizer",    "lr",           "momentum",        "schedule",      "seed",
    "augment",       "pathwise",     "pathwise_cycles", "eval_paths",    "synthetic_noise",
    "synthetic_separation",
};

}  // namespace

DatasetKind parse_dataset_kind(std::string_view text) {
  if (text == "cifar10") return DatasetKind::Cifar10;
  if (text == "cifar100") return DatasetKind::Cifar100;
  if (text == "synthetic") return DatasetKind::Synthetic;
  throw UsageError("unknown dataset '" + std::string(text) + "' (expected cifar10, cifar100 or synthetic)");
}

std::string_view dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Cifar10: return "cifar10";
    case DatasetKind::Cifar100: return "cifar100";
    case DatasetKind::Synthetic: return "synthetic";
  }
  return "cifar10";
}

NetworkSpec RunConfig::network_spec() const {
  return make_network_spec(scale, interval, block_widths, width_mode, classes);
}

std::string format_double(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  if (ec != std::errc()) throw UsageError("cannot format number");
  return std::string(buffer, ptr);
}

std::string format_float(float value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  if (ec != std::errc()) throw UsageError("cannot format number");
  return std::string(buffer, ptr);
}

RunConfig parse_config(std::string_view text) {
  std::map<std::string, Value> values;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? end : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line), line_no, "expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(key, line_no, "empty key");
    if (!kKnownKeys.contains(key)) throw ConfigError(key, line_no, "unknown key");
    if (value.empty()) throw ConfigError(key, line_no, "empty value");
    if (values.contains(key)) throw ConfigError(key, line_no, "duplicate key");
    values.emplace(std::move(key), Value{std::move(value), line_no});
  }

  const Reader r(std::move(values));
  RunConfig c;
  r.required("scale", [&](const std::string& v) { c.scale = parse_positive(v); });
  r.required("interval", [&](const std::string& v) { c.interval = parse_positive(v); });
  r.required("block_widths", [&](const std::string& v) {
    for (const auto& part : split(v, ',')) c.block_widths.push_back(parse_positive(part));
  });
  r.required("classes", [&](const std::string& v) {
    c.classes = parse_number<int>(v);
    if (c.classes < 2) throw UsageError("expected at least 2 classes");
  });
  r.optional("width_mode", [&](const std::string& v) { c.width_mode = parse_width_mode(v); });
  r.optional("dataset", [&](const std::string& v) { c.dataset = parse_dataset_kind(v); });
  r.optional("train_subset", [&](const std::string& v) { c.train_subset = parse_number<std::size_t>(v); });
  r.optional("test_subset", [&](const std::string& v) { c.test_subset = parse_number<std::size_t>(v); });
  r.optional("synthetic_noise", [&](const std::string& v) { c.synthetic.noise = parse_number<float>(v); });
  r.optional("synthetic_separation", [&](const std::string& v) { c.synthetic.separation = parse_number<float>(v); });

  TrainConfig& t = c.train;
  r.optional("droppath_rate", [&](const std::string& v) { t.droppath_rate = parse_number<double>(v); });
  r.optional("dropout_rate", [&](const std::string& v) { t.dropout_rate = parse_number<double>(v); });
  r.optional("l2_lambda", [&](const std::string& v) { t.l2_lambda = parse_number<double>(v); });
  r.optional("epochs", [&](const std::string& v) { t.epochs = parse_positive(v); });
  r.optional("batch_size", [&](const std::string& v) { t.batch_size = static_cast<std::size_t>(parse_positive(v)); });
  r.optional("optimizer", [&](const std::string& v) { t.optimizer = parse_optimizer(v); });
  r.optional("schedule", [&](const std::string& v) { t.schedule = parse_schedule_profile(v); });
  r.optional("momentum", [&](const std::string& v) { t.nesterov.momentum = parse_number<double>(v); });
  r.optional("seed", [&](const std::string& v) { t.seed = parse_number<std::uint64_t>(v); });
  r.optional("augment", [&](const std::string& v) { t.augment = parse_bool(v); });
  r.optional("pathwise", [&](const std::string& v) { t.pathwise = parse_bool(v); });
  r.optional("pathwise_cycles", [&](const std::string& v) { t.pathwise_cycles = parse_positive(v); });
  r.optional("eval_paths", [&](const std::string& v) {
    for (const auto& part : split(v, '|')) {
      PathSet p = PathSet::parse(part);
      p.check_against(c.scale);
      t.eval_paths.push_back(std::move(p));
    }
  });
  // lr is Adam's step size or a constant Nesterov rate, depending on the optimizer.
  r.optional("lr", [&](const std::string& v) {
    const double lr = parse_number<double>(v);
    if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
    if (t.optimizer == OptimizerKind::Adam) {
      t.adam.learning_rate = lr;
    } else {
      t.learning_rate = lr;
    }
  });

  auto check = [&](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw ConfigError(key, r.has(key) ? r.require(key).line : 0, e.what());
    }
  };
  check("block_widths", [&] { validate(c.network_spec()); });
  check("momentum", [&] {
    if (!(t.nesterov.momentum >= 0.0 && t.nesterov.momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  });
  check("droppath_rate", [&] {
    if (!(t.droppath_rate >= 0.0 && t.droppath_rate < 1.0)) throw UsageError("drop-path rate must lie in [0, 1)");
  });
  check("dropout_rate", [&] {
    if (!(t.dropout_rate >= 0.0 && t.dropout_rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
  });
  check("l2_lambda", [&] {
    if (t.l2_lambda < 0.0) throw UsageError("l2 lambda must be nonnegative");
  });
  check("synthetic_noise", [&] {
    if (!(c.synthetic.noise >= 0.0f)) throw UsageError("noise must be nonnegative");
  });
  check("classes", [&] {
    if (c.dataset == DatasetKind::Cifar10 && c.classes != 10) throw UsageError("cifar10 has 10 classes");
    if (c.dataset == DatasetKind::Cifar100 && c.classes != 100) throw UsageError("cifar100 has 100 classes");
  });
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", 0, "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_echo(const RunConfig& c) {
  std::ostringstream out;
  out << "scale = " << c.scale << '\n';
  out << "interval = " << c.interval << '\n';
  out << "block_widths = ";
  for (std::size_t i = 0; i < c.block_widths.size(); ++i) out << (i ? "," : "") << c.block_widths[i];
  out << '\n';
  out << "width_mode = " << width_mode_name(c.width_mode) << '\n';
  out << "classes = " << c.classes << '\n';
  out << "dataset = " << dataset_kind_name(c.dataset) << '\n';
  out << "train_subset = " << c.train_subset << '\n';
  out << "test_subset = " << c.test_subset << '\n';
  if (c.dataset == DatasetKind::Synthetic) {
    out << "synthetic_noise = " << format_float(c.synthetic.noise) << '\n';
    out << "synthetic_separation = " << format_float(c.synthetic.separation) << '\n';
  }
  const TrainConfig& t = c.train;
  out << "droppath_rate = " << format_double(t.droppath_rate) << '\n';
  out << "dropout_rate = " << format_double(t.dropout_rate) << '\n';
  out << "l2_lambda = " << format_double(t.l2_lambda) << '\n';
  out << "epochs = " << t.epochs << '\n';
  out << "batch_size = " << t.batch_size << '\n';
  out << "optimizer = " << optimizer_name(t.optimizer) << '\n';
  if (t.optimizer == OptimizerKind::Adam) {
    out << "lr = " << format_double(t.adam.learning_rate) << '\n';
  } else if (t.learning_rate) {
    out << "lr = " << format_double(*t.learning_rate) << '\n';
  }
  out << "momentum = " << format_double(t.nesterov.momentum) << '\n';
  out << "schedule = " << schedule_profile_name(t.schedule) << '\n';
  out << "seed = " << t.seed << '\n';
  out << "augment = " << (t.augment ? "true" : "false") << '\n';
  out << "pathwise = " << (t.pathwise ? "true" : "false") << '\n';
  out << "pathwise_cycles = " << t.pathwise_cycles << '\n';
  if (!t.eval_paths.empty()) {
    out << "eval_paths = ";
    for (std::size_t i = 0; i < t.eval_paths.size(); ++i) out << (i ? "|" : "") << t.eval_paths[i].to_string();
    out << '\n';
  }
  return out.str();
}

}  // namespace crescendo
