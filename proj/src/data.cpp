#include "metaxt/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace metaxt {
namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

Vector gaussian_vector(Index n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * normal(rng);
  return v;
}

Example make_example(const Vector& features, int label, std::size_t id) {
  Example ex;
  ex.features = features.transpose();
  ex.labels = {label};
  ex.id = id;
  return ex;
}

Dataset load_csv_impl(const std::filesystem::path& path, const LabelSpace* frozen) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  Dataset data;
  data.kind = TaskKind::SequenceClassification;
  auto labels = std::make_shared<LabelSpace>(frozen ? *frozen : LabelSpace{});

  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (!header_seen) {
      if (line.empty()) continue;
      const auto fields = split(line, ',');
      if (fields.front() != "label") {
        throw ParseError(path.string(), lineno, "header must start with a 'label' column");
      }
      width = fields.size() - 1;
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != width + 1) {
      throw ParseError(path.string(), lineno,
                       "expected " + std::to_string(width + 1) + " fields, found " +
                           std::to_string(fields.size()));
    }
    const std::string name(fields.front());
    if (name.empty()) throw ParseError(path.string(), lineno, "empty label");
    int label = 0;
    if (frozen) {
      const auto id = labels->find(name);
      if (!id) throw ParseError(path.string(), lineno, "unseen label '" + name + "'");
      label = *id;
    } else {
      label = labels->intern(name);
    }
    Vector x(static_cast<Index>(width));
    for (std::size_t j = 0; j < width; ++j) {
      const std::string_view f = fields[j + 1];
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
      if (ec != std::errc{} || ptr != f.data() + f.size()) {
        throw ParseError(path.string(), lineno, "bad number '" + std::string(f) + "'");
      }
      x(static_cast<Index>(j)) = value;
    }
    data.examples.push_back(make_example(x, label, data.examples.size()));
  }
  data.input_dim = static_cast<Index>(width);
  data.labels = std::move(labels);
  return data;
}

Dataset load_conll_impl(const std::filesystem::path& path, const HashingOptions& hashing,
                        const LabelSpace* frozen) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  Dataset data;
  data.kind = TaskKind::TokenTagging;
  data.input_dim = hashing.input_dim;
  auto labels = std::make_shared<LabelSpace>(frozen ? *frozen : LabelSpace{});

  std::vector<std::string> tokens;
  std::vector<int> tags;
  auto flush = [&] {
    if (tokens.empty()) return;
    Example ex;
    ex.features.resize(static_cast<Index>(tokens.size()), hashing.input_dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      ex.features.row(static_cast<Index>(i)) = hash_token(tokens[i], hashing).transpose();
    }
    ex.labels = tags;
    ex.tokens = tokens;
    ex.id = data.examples.size();
    data.examples.push_back(std::move(ex));
    tokens.clear();
    tags.clear();
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (!line.empty() && line.front() == '#') continue;
    if (line.empty()) {
      flush();
      continue;
    }
    const auto fields = split(line, '\t');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw ParseError(path.string(), lineno, "expected 'token<TAB>tag'");
    }
    const std::string tag(fields[1]);
    int id = 0;
    if (frozen) {
      const auto found = labels->find(tag);
      if (!found) throw ParseError(path.string(), lineno, "unseen tag '" + tag + "'");
      id = *found;
    } else {
      id = labels->intern(tag);
    }
    tokens.emplace_back(fields[0]);
    tags.push_back(id);
  }
  flush();
  data.labels = std::move(labels);
  return data;
}

Example truncate(Example ex, std::size_t max_units) {
  const auto n = static_cast<std::size_t>(ex.units());
  if (n <= max_units) return ex;
  const auto keep = static_cast<Index>(max_units);
  ex.features.conservativeResize(keep, Eigen::NoChange);
  ex.labels.resize(max_units);
  if (ex.soft_labels) ex.soft_labels->conservativeResize(keep, Eigen::NoChange);
  if (!ex.tokens.empty()) ex.tokens.resize(max_units);
  return ex;
}

std::string token_shape(std::string_view token) {
  std::string shape;
  for (char c : token) {
    const auto u = static_cast<unsigned char>(c);
    char s = std::isupper(u) ? 'X' : std::islower(u) ? 'x' : std::isdigit(u) ? 'd' : c;
    if (shape.empty() || shape.back() != s) shape.push_back(s);
  }
  return shape;
}

}  // namespace

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen(names_.begin(), names_.end());
  if (seen.size() != names_.size()) throw std::invalid_argument("duplicate label names");
}

std::optional<int> LabelSpace::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

int LabelSpace::intern(const std::string& name) {
  if (auto id = find(name)) return *id;
  names_.push_back(name);
  return static_cast<int>(names_.size() - 1);
}

void TaskPair::validate() const {
  if (!source.labels || !target.labels) throw std::invalid_argument("task pair without labels");
  if (source.labels == target.labels) {
    throw std::invalid_argument("source and target must not share a label space object");
  }
  const std::set<std::string> s(source.labels->names().begin(), source.labels->names().end());
  const std::set<std::string> t(target.labels->names().begin(), target.labels->names().end());
  if (s == t) throw std::invalid_argument("source and target label spaces are identical sets");
  if (source.input_dim != target.input_dim) {
    throw std::invalid_argument("source and target feature widths differ");
  }
}

TaskPair gen_granularity_pair(const GranularityOptions& opts) {
  if (opts.n_source < 1000) throw std::invalid_argument("n_source must be >= 1000");
  if (opts.n_target_pool < 5) throw std::invalid_argument("n_target_pool must be >= 5");
  if (opts.input_dim < 1) throw std::invalid_argument("input_dim must be positive");
  if (opts.noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be non-negative");

  std::mt19937_64 rng(opts.seed);
  Vector axis = gaussian_vector(opts.input_dim, 1.0, rng);
  axis.normalize();
  std::vector<Vector> centres;
  for (int c = 0; c < 5; ++c) centres.push_back((c - 2) * opts.spacing * axis);

  auto draw = [&](int cluster) {
    return Vector(centres[static_cast<std::size_t>(cluster)] +
                  gaussian_vector(opts.input_dim, opts.noise_sigma, rng));
  };

  TaskPair pair;
  pair.kind = TaskKind::SequenceClassification;
  pair.source.kind = pair.target.kind = TaskKind::SequenceClassification;
  pair.source.input_dim = pair.target.input_dim = opts.input_dim;
  pair.source.labels = std::make_shared<LabelSpace>(std::vector<std::string>{"negative", "positive"});
  pair.target.labels =
      std::make_shared<LabelSpace>(std::vector<std::string>{"1", "2", "3", "4", "5"});

  std::uniform_int_distribution<int> five(0, 4);
  std::uniform_int_distribution<int> four(0, 3);
  for (std::size_t i = 0; i < opts.n_target_pool; ++i) {
    const int c = five(rng);
    pair.target.examples.push_back(make_example(draw(c), c, i));
  }
  constexpr int kSourceClusters[4] = {0, 1, 3, 4};
  for (std::size_t i = 0; i < opts.n_source; ++i) {
    const int c = kSourceClusters[four(rng)];
    pair.source.examples.push_back(make_example(draw(c), c < 2 ? 0 : 1, i));
  }

  Matrix oracle = Matrix::Zero(2, 5);
  oracle(0, 0) = oracle(0, 1) = 0.5;
  oracle(1, 3) = oracle(1, 4) = 0.5;
  pair.oracle_map = oracle;
  pair.validate();
  return pair;
}

TagsetOptions default_tagset_options() {
  TagsetOptions opts;
  opts.coarse_names = {"O", "PER", "LOC"};
  opts.fine_names = {"O", "B-PER", "I-PER", "PERderiv", "B-LOC", "I-LOC", "LOCpart"};
  opts.refinement = {{0}, {1, 2, 3}, {4, 5, 6}};
  return opts;
}

TaskPair gen_tagset_pair(const TagsetOptions& opts) {
  const auto& ref = opts.refinement;
  if (ref.size() < 2) throw std::invalid_argument("refinement needs at least two source tags");
  std::size_t num_fine = 0;
  for (const auto& children : ref) num_fine += children.size();
  std::vector<int> coarsening(num_fine, -1);
  for (std::size_t s = 0; s < ref.size(); ++s) {
    if (ref[s].empty()) throw std::invalid_argument("every source tag needs >= 1 target tag");
    for (int f : ref[s]) {
      if (f < 0 || static_cast<std::size_t>(f) >= num_fine || coarsening[static_cast<std::size_t>(f)] != -1) {
        throw std::invalid_argument("refinement must partition the target tags");
      }
      coarsening[static_cast<std::size_t>(f)] = static_cast<int>(s);
    }
  }
  if (std::find(coarsening.begin(), coarsening.end(), -1) != coarsening.end()) {
    throw std::invalid_argument("refinement is not surjective onto the target tags");
  }
  if (opts.n_sentences < 1) throw std::invalid_argument("n_sentences must be positive");
  if (opts.min_len < 1 || opts.max_len < opts.min_len) {
    throw std::invalid_argument("invalid sentence length range");
  }

  std::vector<std::string> coarse_names = opts.coarse_names;
  std::vector<std::string> fine_names = opts.fine_names;
  if (coarse_names.empty()) {
    for (std::size_t s = 0; s < ref.size(); ++s) coarse_names.push_back("C" + std::to_string(s));
  }
  if (fine_names.empty()) {
    for (std::size_t f = 0; f < num_fine; ++f) fine_names.push_back("F" + std::to_string(f));
  }
  if (coarse_names.size() != ref.size() || fine_names.size() != num_fine) {
    throw std::invalid_argument("tag name lists do not match the refinement");
  }

  std::mt19937_64 rng(opts.seed);
  std::vector<Vector> coarse_centres;
  for (std::size_t s = 0; s < ref.size(); ++s) {
    coarse_centres.push_back(gaussian_vector(opts.input_dim, opts.coarse_spread, rng));
  }
  std::vector<Vector> fine_centres(num_fine);
  for (std::size_t f = 0; f < num_fine; ++f) {
    const auto s = static_cast<std::size_t>(coarsening[f]);
    fine_centres[f] = ref[s].size() == 1
                          ? coarse_centres[s]
                          : Vector(coarse_centres[s] +
                                   gaussian_vector(opts.input_dim, opts.fine_spread, rng));
  }

  std::uniform_int_distribution<std::size_t> length(opts.min_len, opts.max_len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw_coarse = [&]() -> std::size_t {
    if (unit(rng) < opts.outside_prob) return 0;
    std::uniform_int_distribution<std::size_t> rest(1, ref.size() - 1);
    return rest(rng);
  };
  auto sentence = [&](std::size_t id, bool fine_labels) {
    Example ex;
    const std::size_t n = length(rng);
    ex.features.resize(static_cast<Index>(n), opts.input_dim);
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t s = draw_coarse();
      std::uniform_int_distribution<std::size_t> child(0, ref[s].size() - 1);
      const int f = ref[s][child(rng)];
      ex.features.row(static_cast<Index>(t)) =
          (fine_centres[static_cast<std::size_t>(f)] +
           gaussian_vector(opts.input_dim, opts.noise_sigma, rng))
              .transpose();
      ex.labels.push_back(fine_labels ? f : static_cast<int>(s));
    }
    ex.id = id;
    return ex;
  };

  TaskPair pair;
  pair.kind = TaskKind::TokenTagging;
  pair.source.kind = pair.target.kind = TaskKind::TokenTagging;
  pair.source.input_dim = pair.target.input_dim = opts.input_dim;
  pair.source.labels = std::make_shared<LabelSpace>(coarse_names);
  pair.target.labels = std::make_shared<LabelSpace>(fine_names);
  const std::size_t pool = opts.n_target_pool > 0 ? opts.n_target_pool : opts.n_sentences;
  for (std::size_t i = 0; i < opts.n_sentences; ++i) pair.source.examples.push_back(sentence(i, false));
  for (std::size_t i = 0; i < pool; ++i) pair.target.examples.push_back(sentence(i, true));

  Matrix oracle = Matrix::Zero(static_cast<Index>(ref.size()), static_cast<Index>(num_fine));
  for (std::size_t s = 0; s < ref.size(); ++s) {
    for (int f : ref[s]) {
      oracle(static_cast<Index>(s), f) = 1.0 / static_cast<double>(ref[s].size());
    }
  }
  pair.oracle_map = oracle;
  pair.coarsening = coarsening;
  pair.validate();
  return pair;
}

Dataset load_csv_classification(const std::filesystem::path& path) {
  return load_csv_impl(path, nullptr);
}

Dataset load_csv_classification(const std::filesystem::path& path, const LabelSpace& frozen) {
  return load_csv_impl(path, &frozen);
}

void write_csv_classification(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "label";
  for (Index j = 0; j < data.input_dim; ++j) out << ",f" << (j + 1);
  out << '\n';
  char buf[64];
  for (const Example& ex : data.examples) {
    if (ex.units() != 1) throw std::invalid_argument("CSV rows hold single-unit examples");
    const std::string& name = data.labels->name(ex.labels.at(0));
    if (name.find(',') != std::string::npos) {
      throw std::invalid_argument("label names may not contain commas");
    }
    out << name;
    for (Index j = 0; j < ex.features.cols(); ++j) {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, ex.features(0, j));
      (void)ec;
      out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

Dataset load_conll_tagging(const std::filesystem::path& path, const HashingOptions& hashing) {
  return load_conll_impl(path, hashing, nullptr);
}

Dataset load_conll_tagging(const std::filesystem::path& path, const HashingOptions& hashing,
                           const LabelSpace& frozen) {
  return load_conll_impl(path, hashing, &frozen);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 14695981039346656037ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

Vector hash_token(std::string_view token, const HashingOptions& hashing) {
  if (hashing.input_dim < 1) throw std::invalid_argument("hashing input_dim must be positive");
  std::string lower(token);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::vector<std::string> features{"w:" + lower, "shape:" + token_shape(token)};
  if (lower.size() >= 3) {
    features.push_back("p:" + lower.substr(0, 3));
    features.push_back("s:" + lower.substr(lower.size() - 3));
  }
  Vector v = Vector::Zero(hashing.input_dim);
  for (const auto& f : features) {
    const std::uint64_t h = fnv1a(f, hashing.seed);
    const auto bucket = static_cast<Index>(h % static_cast<std::uint64_t>(hashing.input_dim));
    v(bucket) += (h >> 63) != 0 ? -1.0 : 1.0;
  }
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

std::vector<std::size_t> balanced_quota(std::size_t n, std::size_t num_classes) {
  if (num_classes == 0) throw std::invalid_argument("balanced_quota: no classes");
  std::vector<std::size_t> quota(num_classes, n / num_classes);
  for (std::size_t c = 0; c < n % num_classes; ++c) ++quota[c];
  return quota;
}

SplitSet sample_splits(const TaskPair& pair, const SplitOptions& opts) {
  pair.validate();
  const std::size_t num_classes = pair.target.num_classes();
  const std::size_t k = opts.k;
  const std::size_t v = opts.validation_size > 0 ? opts.validation_size : k;
  const bool tagging = pair.kind == TaskKind::TokenTagging;
  const std::size_t cap = tagging ? opts.max_tokens_tagging : opts.max_tokens_classification;
  std::mt19937_64 rng(opts.seed);

  SplitSet out;
  for (const Example& ex : pair.source.examples) out.source_train.push_back(truncate(ex, cap));
  const auto& pool = pair.target.examples;

  if (!tagging) {
    if (k < num_classes) {
      throw std::invalid_argument("k=" + std::to_string(k) + " is smaller than the " +
                                  std::to_string(num_classes) + " target classes");
    }
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      by_class.at(static_cast<std::size_t>(pool[i].labels.at(0))).push_back(i);
    }
    const auto train_quota = balanced_quota(k, num_classes);
    const auto val_quota = balanced_quota(v, num_classes);
    std::vector<char> used(pool.size(), 0);
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    for (std::size_t c = 0; c < num_classes; ++c) {
      auto& idx = by_class[c];
      if (idx.size() < train_quota[c] + val_quota[c]) {
        throw std::invalid_argument("target pool has too few examples of class '" +
                                    pair.target.labels->name(static_cast<int>(c)) + "'");
      }
      std::shuffle(idx.begin(), idx.end(), rng);
      train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_quota[c]));
      val_idx.insert(val_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(train_quota[c]),
                     idx.begin() + static_cast<std::ptrdiff_t>(train_quota[c] + val_quota[c]));
    }
    for (std::size_t i : train_idx) used[i] = 1;
    for (std::size_t i : val_idx) used[i] = 1;
    for (std::size_t i : train_idx) out.train_k.push_back(truncate(pool[i], cap));
    for (std::size_t i : val_idx) out.validation.push_back(truncate(pool[i], cap));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!used[i]) out.test.push_back(truncate(pool[i], cap));
    }
    return out;
  }

  std::vector<Example> truncated;
  truncated.reserve(pool.size());
  for (const Example& ex : pool) truncated.push_back(truncate(ex, cap));
  std::vector<char> present(num_classes, 0);
  for (const Example& ex : truncated) {
    for (int y : ex.labels) present.at(static_cast<std::size_t>(y)) = 1;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!present[c]) {
      throw std::invalid_argument("tagging pool lacks tag '" +
                                  pair.target.labels->name(static_cast<int>(c)) + "'");
    }
  }
  std::vector<std::size_t> order(truncated.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<char> used(truncated.size(), 0);
  std::vector<char> covered(num_classes, 0);
  std::vector<std::size_t> train_idx;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (covered[c]) continue;
    for (std::size_t i : order) {
      if (used[i]) continue;
      const auto& labels = truncated[i].labels;
      if (std::find(labels.begin(), labels.end(), static_cast<int>(c)) == labels.end()) continue;
      used[i] = 1;
      train_idx.push_back(i);
      for (int y : labels) covered[static_cast<std::size_t>(y)] = 1;
      break;
    }
  }
  if (train_idx.size() > k) {
    throw std::invalid_argument("k=" + std::to_string(k) + " sentences cannot cover every tag");
  }
  auto take = [&](std::size_t n, std::vector<std::size_t>& dst) {
    for (std::size_t i : order) {
      if (dst.size() >= n) break;
      if (used[i]) continue;
      used[i] = 1;
      dst.push_back(i);
    }
  };
  take(k, train_idx);
  std::vector<std::size_t> val_idx;
  take(v, val_idx);
  if (train_idx.size() < k || val_idx.size() < v) {
    throw std::invalid_argument("target pool too small for the requested splits");
  }
  for (std::size_t i : train_idx) out.train_k.push_back(truncated[i]);
  for (std::size_t i : val_idx) out.validation.push_back(truncated[i]);
  for (std::size_t i = 0; i < truncated.size(); ++i) {
    if (!used[i]) out.test.push_back(truncated[i]);
  }
  return out;
}

}  // namespace metaxt
