#include "metaxt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace metaxt {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': bad value '" + value + "' (" + why + ")");
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "expected a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "expected a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "expected true or false");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ',';
    out += f(items[i]);
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Key size_key(std::string name, T RunConfig::*field) {
  return {name,
          [field, name](RunConfig& c, const std::string& v) { c.*field = static_cast<T>(to_u64(name, v)); },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

Key double_key(std::string name, double RunConfig::*field) {
  return {name, [field, name](RunConfig& c, const std::string& v) { c.*field = to_double(name, v); },
          [field](const RunConfig& c) { return fmt(c.*field); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back({"task",
                 [](RunConfig& c, const std::string& v) { c.task = parse_task_source(v); },
                 [](const RunConfig& c) { return std::string(task_source_name(c.task)); }});
    k.push_back(size_key("data_seed", &RunConfig::data_seed));
    k.push_back(size_key("n_source", &RunConfig::n_source));
    k.push_back(size_key("n_target_pool", &RunConfig::n_target_pool));
    k.push_back(double_key("noise_sigma", &RunConfig::noise_sigma));
    k.push_back(size_key("input_dim", &RunConfig::input_dim));
    k.push_back(double_key("spacing", &RunConfig::spacing));
    k.push_back(size_key("n_sentences", &RunConfig::n_sentences));
    k.push_back({"source_path", [](RunConfig& c, const std::string& v) { c.source_path = v; },
                 [](const RunConfig& c) { return c.source_path.string(); }});
    k.push_back({"target_path", [](RunConfig& c, const std::string& v) { c.target_path = v; },
                 [](const RunConfig& c) { return c.target_path.string(); }});
    k.push_back(size_key("hashing_seed", &RunConfig::hashing_seed));
    k.push_back({"method", [](RunConfig& c, const std::string& v) { c.method = parse_method(v); },
                 [](const RunConfig& c) { return std::string(method_name(c.method)); }});
    k.push_back({"methods",
                 [](RunConfig& c, const std::string& v) {
                   c.methods.clear();
                   for (const auto& m : split_list(v)) c.methods.push_back(parse_method(m));
                 },
                 [](const RunConfig& c) {
                   return join<Method>(c.methods, [](const Method& m) { return std::string(method_name(m)); });
                 }});
    k.push_back(size_key("k", &RunConfig::k));
    k.push_back({"ks",
                 [](RunConfig& c, const std::string& v) {
                   c.ks.clear();
                   for (const auto& s : split_list(v)) c.ks.push_back(to_u64("ks", s));
                 },
                 [](const RunConfig& c) {
                   return join<std::size_t>(c.ks, [](const std::size_t& x) { return std::to_string(x); });
                 }});
    k.push_back({"seeds",
                 [](RunConfig& c, const std::string& v) {
                   c.seeds.clear();
                   for (const auto& s : split_list(v)) c.seeds.push_back(to_u64("seeds", s));
                 },
                 [](const RunConfig& c) {
                   return join<std::uint64_t>(c.seeds, [](const std::uint64_t& x) { return std::to_string(x); });
                 }});
    k.push_back(size_key("validation_size", &RunConfig::validation_size));
    k.push_back(double_key("eta", &RunConfig::eta));
    k.push_back(double_key("meta_lr", &RunConfig::meta_lr));
    k.push_back(double_key("gamma1", &RunConfig::gamma1));
    k.push_back(double_key("gamma2", &RunConfig::gamma2));
    k.push_back({"meta_grad_mode",
                 [](RunConfig& c, const std::string& v) { c.meta_grad_mode = parse_meta_grad_mode(v); },
                 [](const RunConfig& c) { return std::string(meta_grad_mode_name(c.meta_grad_mode)); }});
    k.push_back(double_key("fd_scale", &RunConfig::fd_scale));
    k.push_back(double_key("clip_norm", &RunConfig::clip_norm));
    k.push_back(size_key("step_budget", &RunConfig::step_budget));
    k.push_back(size_key("eval_every", &RunConfig::eval_every));
    k.push_back(size_key("batch_size", &RunConfig::batch_size));
    k.push_back({"hidden_dims",
                 [](RunConfig& c, const std::string& v) {
                   c.dims.hidden_dims.clear();
                   for (const auto& s : split_list(v)) {
                     c.dims.hidden_dims.push_back(static_cast<Index>(to_u64("hidden_dims", s)));
                   }
                 },
                 [](const RunConfig& c) {
                   return join<Index>(c.dims.hidden_dims, [](const Index& x) { return std::to_string(x); });
                 }});
    k.push_back({"h_dim",
                 [](RunConfig& c, const std::string& v) { c.dims.h_dim = static_cast<Index>(to_u64("h_dim", v)); },
                 [](const RunConfig& c) { return std::to_string(c.dims.h_dim); }});
    k.push_back({"z_dim",
                 [](RunConfig& c, const std::string& v) { c.dims.z_dim = static_cast<Index>(to_u64("z_dim", v)); },
                 [](const RunConfig& c) { return std::to_string(c.dims.z_dim); }});
    k.push_back({"ltn_hidden",
                 [](RunConfig& c, const std::string& v) {
                   c.dims.ltn_hidden = static_cast<Index>(to_u64("ltn_hidden", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.dims.ltn_hidden); }});
    k.push_back({"activation",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "tanh") {
                     c.dims.activation = Activation::Tanh;
                   } else if (v == "relu") {
                     c.dims.activation = Activation::Relu;
                   } else {
                     bad_value("activation", v, "expected tanh or relu");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.dims.activation == Activation::Tanh ? "tanh" : "relu");
                 }});
    k.push_back({"use_rtn", [](RunConfig& c, const std::string& v) { c.dims.use_rtn = to_bool("use_rtn", v); },
                 [](const RunConfig& c) { return std::string(c.dims.use_rtn ? "true" : "false"); }});
    k.push_back({"rtn_layer",
                 [](RunConfig& c, const std::string& v) {
                   c.dims.rtn_layer = static_cast<int>(to_u64("rtn_layer", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.dims.rtn_layer); }});
    k.push_back(size_key("ltn_map_samples", &RunConfig::ltn_map_samples));
    k.push_back({"record_timing",
                 [](RunConfig& c, const std::string& v) { c.record_timing = to_bool("record_timing", v); },
                 [](const RunConfig& c) { return std::string(c.record_timing ? "true" : "false"); }});
    return k;
  }();
  return table;
}

}  // namespace

std::string_view task_source_name(TaskSource t) {
  switch (t) {
    case TaskSource::Granularity: return "granularity";
    case TaskSource::Tagset: return "tagset";
    case TaskSource::CsvFiles: return "csv";
    case TaskSource::ConllFiles: return "conll";
  }
  return "unknown";
}

TaskSource parse_task_source(std::string_view name) {
  for (TaskSource t : {TaskSource::Granularity, TaskSource::Tagset, TaskSource::CsvFiles,
                       TaskSource::ConllFiles}) {
    if (task_source_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown task '" + std::string(name) +
                              "' (expected granularity, tagset, csv or conll)");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config key '" + key + "': " + why);
  };
  if (seeds.empty()) fail("seeds", "at least one seed is required");
  if (methods.empty()) fail("methods", "at least one method is required");
  if (ks.empty()) fail("ks", "at least one k is required");
  if (k == 0) fail("k", "must be positive");
  if (!(eta > 0.0)) fail("eta", "must be > 0");
  if (meta_lr == 0.0 || (meta_lr < 0.0 && meta_lr != -1.0)) fail("meta_lr", "must be > 0 (or -1 for eta)");
  if (gamma1 < 0.0) fail("gamma1", "must be >= 0");
  if (gamma2 < 0.0) fail("gamma2", "must be >= 0");
  if (!(fd_scale > 0.0)) fail("fd_scale", "must be > 0");
  if (batch_size < 2) fail("batch_size", "must be >= 2");
  if (eval_every == 0) fail("eval_every", "must be positive");
  if (ltn_map_samples == 0) fail("ltn_map_samples", "must be positive");
  if (dims.h_dim <= 0) fail("h_dim", "must be positive");
  if (dims.z_dim <= 0) fail("z_dim", "must be positive");
  if (task == TaskSource::CsvFiles || task == TaskSource::ConllFiles) {
    if (source_path.empty()) fail("source_path", "required for file-backed tasks");
    if (target_path.empty()) fail("target_path", "required for file-backed tasks");
    if (!std::filesystem::exists(source_path)) fail("source_path", "'" + source_path.string() + "' does not exist");
    if (!std::filesystem::exists(target_path)) fail("target_path", "'" + target_path.string() + "' does not exist");
  }
  trainer_config().validate();
}

TrainerConfig RunConfig::trainer_config() const {
  TrainerConfig t;
  t.method = method;
  t.meta_grad_mode = meta_grad_mode;
  t.eta = eta;
  t.meta_lr = effective_meta_lr();
  t.gammas = Gammas{gamma1, gamma2};
  t.fd_rule.scale = fd_scale;
  t.clip_norm = clip_norm;
  t.use_rtn = dims.use_rtn;
  t.batch_size = batch_size;
  return t;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const Key& k : keys()) {
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(origin, number, "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ParseError(origin, number, "empty key");
    try {
      apply_setting(config, key, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError(origin, number, e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& args) {
  for (const std::string& arg : args) {
    if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos) {
      throw std::invalid_argument("expected --key=value, got '" + arg + "'");
    }
    const auto eq = arg.find('=');
    apply_setting(config, arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const Key& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

TaskPair build_task_pair(const RunConfig& config) {
  switch (config.task) {
    case TaskSource::Granularity: {
      GranularityOptions g;
      g.seed = config.data_seed;
      g.n_source = config.n_source;
      g.n_target_pool = config.n_target_pool;
      g.noise_sigma = config.noise_sigma;
      g.input_dim = config.input_dim;
      g.spacing = config.spacing;
      return gen_granularity_pair(g);
    }
    case TaskSource::Tagset: {
      TagsetOptions t = default_tagset_options();
      t.seed = config.data_seed;
      t.n_sentences = config.n_sentences;
      t.n_target_pool = config.n_target_pool;
      t.noise_sigma = config.noise_sigma;
      t.input_dim = config.input_dim;
      return gen_tagset_pair(t);
    }
    case TaskSource::CsvFiles: {
      TaskPair pair;
      pair.kind = TaskKind::SequenceClassification;
      pair.source = load_csv_classification(config.source_path);
      pair.target = load_csv_classification(config.target_path);
      pair.validate();
      return pair;
    }
    case TaskSource::ConllFiles: {
      const HashingOptions h{config.input_dim, config.hashing_seed};
      TaskPair pair;
      pair.kind = TaskKind::TokenTagging;
      pair.source = load_conll_tagging(config.source_path, h);
      pair.target = load_conll_tagging(config.target_path, h);
      pair.validate();
      return pair;
    }
  }
  throw std::logic_error("unhandled task source");
}

}  // namespace metaxt
