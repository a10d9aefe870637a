#include "patchx/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace patchx {

namespace {

constexpr std::array kSettings = {
    SettingInfo{"seed", "", "run seed; falls back to PATCHX_SEED, then 0"},
    SettingInfo{"output", "runs", "parent directory of timestamped run directories"},
    SettingInfo{"data.source", "anomaly", "anomaly (generated) or file"},
    SettingInfo{"data.train", "", "train split file (file source)"},
    SettingInfo{"data.val", "", "validation split file (file source)"},
    SettingInfo{"data.test", "", "test split file (file source)"},
    SettingInfo{"data.delimiter", ",", "field delimiter of dataset files (tab allowed)"},
    SettingInfo{"data.train_fraction", "0.6", "train share when a single file is split"},
    SettingInfo{"data.val_fraction", "0.2", "validation share when a single file is split"},
    SettingInfo{"data.train_count", "3500", "generated train samples"},
    SettingInfo{"data.val_count", "1500", "generated validation samples"},
    SettingInfo{"data.test_count", "1000", "generated test samples"},
    SettingInfo{"data.length", "50", "generated series length"},
    SettingInfo{"data.channels", "3", "generated channel count"},
    SettingInfo{"data.noise_sigma", "1", "std of the generated Gaussian noise"},
    SettingInfo{"data.peak_min", "7", "lower bound of the peak amplitude"},
    SettingInfo{"data.peak_max", "12", "upper bound of the peak amplitude"},
    SettingInfo{"data.peak_probability", "0.5", "probability that a sample receives a peak"},
    SettingInfo{"data.sigma_multiplier", "4", "k of the mean + k*std label rule"},
    SettingInfo{"data.seed", "auto", "generator and split seed"},
    SettingInfo{"data.normalize", "true", "per-channel z-normalization with train statistics"},
    SettingInfo{"patching.configs", "5:10,10:20", "stride:length list"},
    SettingInfo{"patching.zero", "true", "zero outside the patch (cannot be disabled)"},
    SettingInfo{"patching.attach", "true", "append the mask channel"},
    SettingInfo{"patching.notemp", "false", "shift patch content to time-step 0"},
    SettingInfo{"network.blocks", "32x3,64x3,64x3", "conv blocks as filters x kernel"},
    SettingInfo{"network.seed", "auto", "weight initialization seed"},
    SettingInfo{"train.epochs", "50", "maximum epochs"},
    SettingInfo{"train.batch_size", "64", "mini-batch size"},
    SettingInfo{"train.learning_rate", "0.001", "optimizer step size"},
    SettingInfo{"train.optimizer", "adam", "adam or sgd-momentum"},
    SettingInfo{"train.patience", "5", "early-stopping patience on validation accuracy"},
    SettingInfo{"train.momentum", "0.9", "momentum of sgd-momentum"},
    SettingInfo{"train.seed", "auto", "mini-batch shuffling seed"},
    SettingInfo{"shallow.kind", "svm", "svm, forest or trivial"},
    SettingInfo{"shallow.svm_c", "1", "SVM regularization C"},
    SettingInfo{"shallow.svm_epochs", "200", "SVM sub-gradient epochs"},
    SettingInfo{"shallow.svm_lr", "0.05", "SVM base learning rate"},
    SettingInfo{"shallow.svm_standardize", "false", "standardize presence features for the SVM"},
    SettingInfo{"shallow.svm_seed", "auto", "SVM sampling seed"},
    SettingInfo{"shallow.forest_trees", "100", "number of trees"},
    SettingInfo{"shallow.forest_max_depth", "0", "maximum depth, 0 = unlimited"},
    SettingInfo{"shallow.forest_min_leaf", "1", "minimum samples per leaf"},
    SettingInfo{"shallow.forest_features", "sqrt", "per-split feature subsample: sqrt or all"},
    SettingInfo{"shallow.forest_seed", "auto", "bootstrap and feature sampling seed"},
    SettingInfo{"shallow.trivial_mode", "occurrence", "occurrence or confidence-sum"},
    SettingInfo{"shallow.collapse_blocks", "false", "sum presence blocks over configs"},
    SettingInfo{"shallow.normalize_by_count", "false", "divide presence blocks by patch count"},
};

enum SeedStream : std::uint64_t { kDataStream = 1, kNetworkStream, kTrainStream, kSvmStream, kForestStream };

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

class Reader {
 public:
  explicit Reader(const Settings& s) : settings_(s) {}

  const std::string& str(const std::string& key) const {
    const auto it = settings_.find(key);
    if (it == settings_.end()) throw ConfigError("missing setting " + key);
    return it->second;
  }

  template <typename T>
  T integer(const std::string& key) const {
    const auto& text = str(key);
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw ConfigError(key + ": expected an integer, got '" + text + "'");
    }
    return value;
  }

  double real(const std::string& key) const {
    const auto& text = str(key);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw ConfigError(key + ": expected a number, got '" + text + "'");
    }
    return value;
  }

  bool boolean(const std::string& key) const {
    try {
      return parse_bool(str(key));
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  std::uint64_t seed(const std::string& key, std::uint64_t run_seed, std::uint64_t stream) const {
    if (str(key) == "auto") return mix_seed(run_seed, stream);
    return integer<std::uint64_t>(key);
  }

  template <typename F>
  auto parsed(const std::string& key, F&& parse) const {
    try {
      return parse(str(key));
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

 private:
  const Settings& settings_;
};

std::string num(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string num(int v) { return std::to_string(v); }
std::string num(std::uint64_t v) { return std::to_string(v); }
std::string flag(bool b) { return b ? "true" : "false"; }

}  // namespace

std::span<const SettingInfo> known_settings() { return kSettings; }

bool is_known_setting(std::string_view key) {
  return std::any_of(kSettings.begin(), kSettings.end(),
                     [&](const SettingInfo& s) { return s.key == key; });
}

Settings default_settings() {
  Settings out;
  for (const auto& s : kSettings) {
    if (s.key != "seed") out.emplace(std::string(s.key), std::string(s.default_value));
  }
  return out;
}

bool parse_bool(std::string_view text) {
  std::string s = trim(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + std::string(text) + "'");
}

Settings parse_ini_settings(std::string_view text) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  Settings out;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      out[name] = trim(node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) out[name + "." + key] = trim(leaf.data());
  }
  for (const auto& [key, value] : out) {
    if (!is_known_setting(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  return out;
}

Settings read_ini_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ini_settings(ss.str());
}

void apply_assignment(Settings& settings, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  const auto key = trim(assignment.substr(0, eq));
  if (!is_known_setting(key)) throw ConfigError("unknown config key '" + key + "'");
  settings[key] = trim(assignment.substr(eq + 1));
}

std::string_view to_string(SeedOrigin o) {
  switch (o) {
    case SeedOrigin::flag:
      return "flag";
    case SeedOrigin::config:
      return "config";
    case SeedOrigin::environment:
      return "environment";
    case SeedOrigin::fallback:
      return "default";
  }
  return "?";
}

std::optional<std::uint64_t> seed_from_environment() {
  const char* value = std::getenv("PATCHX_SEED");
  if (value == nullptr || *value == '\0') return std::nullopt;
  const std::string text = trim(value);
  std::uint64_t seed = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("PATCHX_SEED must be a non-negative integer, got '" + text + "'");
  }
  return seed;
}

RunConfig resolve_config(const Settings& overrides, std::optional<std::uint64_t> env_seed,
                         SeedOrigin explicit_origin) {
  Settings settings = default_settings();
  for (const auto& [key, value] : overrides) {
    if (!is_known_setting(key)) throw ConfigError("unknown config key '" + key + "'");
    settings[key] = value;
  }
  const Reader r(settings);

  RunConfig cfg;
  if (settings.contains("seed") && !settings.at("seed").empty()) {
    cfg.seed = r.integer<std::uint64_t>("seed");
    cfg.seed_origin = explicit_origin;
  } else if (env_seed) {
    cfg.seed = *env_seed;
    cfg.seed_origin = SeedOrigin::environment;
  }
  cfg.output = r.str("output");

  auto& d = cfg.data;
  d.source = r.str("data.source");
  d.train_path = r.str("data.train");
  d.val_path = r.str("data.val");
  d.test_path = r.str("data.test");
  const auto& delim = r.str("data.delimiter");
  if (delim == "tab" || delim == "\\t") {
    d.delimiter = '\t';
  } else if (delim.size() == 1) {
    d.delimiter = delim[0];
  } else {
    throw ConfigError("data.delimiter must be a single character or 'tab'");
  }
  d.train_fraction = r.real("data.train_fraction");
  d.val_fraction = r.real("data.val_fraction");
  auto& a = d.anomaly;
  a.train_count = r.integer<int>("data.train_count");
  a.val_count = r.integer<int>("data.val_count");
  a.test_count = r.integer<int>("data.test_count");
  a.length = r.integer<int>("data.length");
  a.channels = r.integer<int>("data.channels");
  a.noise_sigma = r.real("data.noise_sigma");
  a.peak_min = r.real("data.peak_min");
  a.peak_max = r.real("data.peak_max");
  a.peak_probability = r.real("data.peak_probability");
  a.sigma_multiplier = r.real("data.sigma_multiplier");
  a.seed = r.seed("data.seed", cfg.seed, kDataStream);
  d.split_seed = a.seed;

  auto& p = cfg.pipeline;
  p.normalize = r.boolean("data.normalize");
  PatchConfig flags;
  flags.zero = r.boolean("patching.zero");
  flags.attach = r.boolean("patching.attach");
  flags.notemp = r.boolean("patching.notemp");
  p.configs = r.parsed("patching.configs", [&](const std::string& s) { return parse_patch_list(s, flags); });
  if (p.configs.empty()) throw ConfigError("patching.configs must list at least one stride:length");

  p.blocks = r.parsed("network.blocks", [](const std::string& s) { return parse_blocks(s); });
  p.network_seed = r.seed("network.seed", cfg.seed, kNetworkStream);

  auto& t = p.train;
  t.epochs = r.integer<int>("train.epochs");
  t.batch_size = r.integer<int>("train.batch_size");
  t.learning_rate = r.real("train.learning_rate");
  t.optimizer = r.parsed("train.optimizer", [](const std::string& s) { return parse_optimizer(s); });
  t.patience = r.integer<int>("train.patience");
  t.momentum = r.real("train.momentum");
  t.seed = r.seed("train.seed", cfg.seed, kTrainStream);

  auto& s = p.shallow;
  s.kind = r.parsed("shallow.kind", [](const std::string& v) { return parse_shallow_kind(v); });
  s.svm.c_reg = r.real("shallow.svm_c");
  s.svm.epochs = r.integer<int>("shallow.svm_epochs");
  s.svm.learning_rate = r.real("shallow.svm_lr");
  s.svm.standardize = r.boolean("shallow.svm_standardize");
  s.svm.seed = r.seed("shallow.svm_seed", cfg.seed, kSvmStream);
  s.forest.trees = r.integer<int>("shallow.forest_trees");
  s.forest.max_depth = r.integer<int>("shallow.forest_max_depth");
  s.forest.min_leaf = r.integer<int>("shallow.forest_min_leaf");
  s.forest.features =
      r.parsed("shallow.forest_features", [](const std::string& v) { return parse_feature_subsample(v); });
  s.forest.seed = r.seed("shallow.forest_seed", cfg.seed, kForestStream);
  s.trivial.mode =
      r.parsed("shallow.trivial_mode", [](const std::string& v) { return parse_trivial_mode(v); });
  p.metadata.collapse_blocks = r.boolean("shallow.collapse_blocks");
  p.metadata.normalize_by_count = r.boolean("shallow.normalize_by_count");

  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  try {
    if (data.source == "anomaly") {
      data.anomaly.validate();
      validate_configs(pipeline.configs, data.anomaly.length);
    } else if (data.source == "file") {
      if (data.train_path.empty()) throw ConfigError("data.train is required for a file source");
      const bool has_val = !data.val_path.empty();
      const bool has_test = !data.test_path.empty();
      if (has_val != has_test) throw ConfigError("data.val and data.test must be given together");
      if (!has_val && (!(data.train_fraction > 0.0) || !(data.val_fraction > 0.0) ||
                       data.train_fraction + data.val_fraction >= 1.0)) {
        throw ConfigError("split fractions must be positive and sum to less than 1");
      }
      validate_configs(pipeline.configs, 0);
    } else {
      throw ConfigError("data.source must be 'anomaly' or 'file', got '" + data.source + "'");
    }
    if (pipeline.blocks.empty()) throw ConfigError("network.blocks must not be empty");
    pipeline.train.validate();
    pipeline.shallow.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

Settings RunConfig::to_settings() const {
  Settings s;
  s["seed"] = num(seed);
  s["output"] = output.string();
  s["data.source"] = data.source;
  s["data.train"] = data.train_path.string();
  s["data.val"] = data.val_path.string();
  s["data.test"] = data.test_path.string();
  s["data.delimiter"] = data.delimiter == '\t' ? "tab" : std::string(1, data.delimiter);
  s["data.train_fraction"] = num(data.train_fraction);
  s["data.val_fraction"] = num(data.val_fraction);
  const auto& a = data.anomaly;
  s["data.train_count"] = num(a.train_count);
  s["data.val_count"] = num(a.val_count);
  s["data.test_count"] = num(a.test_count);
  s["data.length"] = num(a.length);
  s["data.channels"] = num(a.channels);
  s["data.noise_sigma"] = num(a.noise_sigma);
  s["data.peak_min"] = num(a.peak_min);
  s["data.peak_max"] = num(a.peak_max);
  s["data.peak_probability"] = num(a.peak_probability);
  s["data.sigma_multiplier"] = num(a.sigma_multiplier);
  s["data.seed"] = num(a.seed);
  s["data.normalize"] = flag(pipeline.normalize);

  const auto& p = pipeline;
  s["patching.configs"] = format_patch_list(p.configs);
  s["patching.zero"] = flag(p.configs.front().zero);
  s["patching.attach"] = flag(p.configs.front().attach);
  s["patching.notemp"] = flag(p.configs.front().notemp);
  s["network.blocks"] = format_blocks(p.blocks);
  s["network.seed"] = num(p.network_seed);
  s["train.epochs"] = num(p.train.epochs);
  s["train.batch_size"] = num(p.train.batch_size);
  s["train.learning_rate"] = num(p.train.learning_rate);
  s["train.optimizer"] = std::string(to_string(p.train.optimizer));
  s["train.patience"] = num(p.train.patience);
  s["train.momentum"] = num(p.train.momentum);
  s["train.seed"] = num(p.train.seed);
  const auto& sh = p.shallow;
  s["shallow.kind"] = std::string(to_string(sh.kind));
  s["shallow.svm_c"] = num(sh.svm.c_reg);
  s["shallow.svm_epochs"] = num(sh.svm.epochs);
  s["shallow.svm_lr"] = num(sh.svm.learning_rate);
  s["shallow.svm_standardize"] = flag(sh.svm.standardize);
  s["shallow.svm_seed"] = num(sh.svm.seed);
  s["shallow.forest_trees"] = num(sh.forest.trees);
  s["shallow.forest_max_depth"] = num(sh.forest.max_depth);
  s["shallow.forest_min_leaf"] = num(sh.forest.min_leaf);
  s["shallow.forest_features"] = std::string(to_string(sh.forest.features));
  s["shallow.forest_seed"] = num(sh.forest.seed);
  s["shallow.trivial_mode"] = std::string(to_string(sh.trivial.mode));
  s["shallow.collapse_blocks"] = flag(p.metadata.collapse_blocks);
  s["shallow.normalize_by_count"] = flag(p.metadata.normalize_by_count);
  return s;
}

std::string RunConfig::to_ini() const {
  const auto settings = to_settings();
  std::ostringstream out;
  out << "# resolved patchx configuration (seed source: " << to_string(seed_origin) << ")\n";
  out << "seed = " << settings.at("seed") << "\n";
  out << "output = " << settings.at("output") << "\n";
  for (std::string_view section : {"data", "patching", "network", "train", "shallow"}) {
    out << "\n[" << section << "]\n";
    for (const auto& info : kSettings) {
      const std::string key(info.key);
      if (key.size() > section.size() && key.compare(0, section.size(), section) == 0 &&
          key[section.size()] == '.') {
        out << key.substr(section.size() + 1) << " = " << settings.at(key) << "\n";
      }
    }
  }
  return out.str();
}

const Dataset& LoadedData::split(Split s) const {
  switch (s) {
    case Split::train:
      return train;
    case Split::val:
      return val;
    case Split::test:
      return test;
  }
  return test;
}

const std::vector<std::optional<PeakMark>>& LoadedData::peaks(Split s) const {
  switch (s) {
    case Split::train:
      return train_peaks;
    case Split::val:
      return val_peaks;
    case Split::test:
      return test_peaks;
  }
  return test_peaks;
}

LoadedData load_data(const DataConfig& config) {
  LoadedData out;
  if (config.source == "anomaly") {
    auto gen = generate_anomaly(config.anomaly);
    out.train = std::move(gen.train);
    out.val = std::move(gen.val);
    out.test = std::move(gen.test);
    out.train_peaks = std::move(gen.train_peaks);
    out.val_peaks = std::move(gen.val_peaks);
    out.test_peaks = std::move(gen.test_peaks);
    return out;
  }
  const DelimiterSpec schema{config.delimiter};
  if (config.val_path.empty()) {
    auto all = load_dataset(config.train_path, schema);
    auto parts = split_holdout(all, config.train_fraction, config.val_fraction, config.split_seed);
    out.train = std::move(parts.train);
    out.val = std::move(parts.val);
    out.test = std::move(parts.test);
  } else {
    out.train = load_dataset(config.train_path, schema, Split::train);
    out.val = load_dataset(config.val_path, schema, Split::val);
    out.test = load_dataset(config.test_path, schema, Split::test);
  }
  for (const Dataset* d : {&out.val, &out.test}) {
    if (d->class_count != out.train.class_count || (!d->empty() && !out.train.empty() &&
                                                    (d->channels() != out.train.channels() ||
                                                     d->length() != out.train.length()))) {
      throw ValidationError("dataset splits disagree in shape or class count");
    }
  }
  return out;
}

}  // namespace patchx
