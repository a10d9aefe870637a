#include "patchx/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace patchx {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

void Dataset::validate() const {
  if (class_count < 2) throw ValidationError("class_count must be >= 2");
  std::unordered_set<std::int64_t> ids;
  for (const auto& s : samples) {
    if (s.channels() != channels() || s.length() != length()) {
      throw ValidationError("sample " + std::to_string(s.id) + " has shape " +
                            std::to_string(s.channels()) + "x" + std::to_string(s.length()) +
                            ", expected " + std::to_string(channels()) + "x" +
                            std::to_string(length()));
    }
    if (s.label < 0 || s.label >= class_count) {
      throw ValidationError("sample " + std::to_string(s.id) + " has label " +
                            std::to_string(s.label) + " outside [0, " +
                            std::to_string(class_count) + ")");
    }
    if (!s.values.allFinite()) {
      throw ValidationError("sample " + std::to_string(s.id) + " contains NaN/Inf");
    }
    if (!ids.insert(s.id).second) {
      throw ValidationError("duplicate sample id " + std::to_string(s.id));
    }
  }
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(class_count), 0);
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view field, T& out) {
  if (field.empty()) return false;
  if (field.front() == '+') field.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

}  // namespace

Dataset parse_dataset(std::string_view text, DelimiterSpec schema, Split split) {
  Dataset dataset;
  dataset.split = split;
  int channels = 0;
  int length = 0;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') {
      if (eol == text.size()) break;
      continue;
    }
    auto fields = split_fields(line, schema.delimiter);
    if (!have_header) {
      if (fields.size() != 3 || !parse_number(fields[0], channels) ||
          !parse_number(fields[1], length) || !parse_number(fields[2], dataset.class_count)) {
        throw ParseError("header must be `channels,length,class_count`", line_no);
      }
      if (channels <= 0 || length <= 0 || dataset.class_count < 2) {
        throw ParseError("header values must be positive with class_count >= 2", line_no);
      }
      have_header = true;
      continue;
    }
    const std::size_t expected = static_cast<std::size_t>(channels) * length + 1;
    if (fields.size() != expected) {
      throw ParseError("row has " + std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(expected) + " (inconsistent length)",
                       line_no);
    }
    TimeSeriesSample sample;
    sample.id = static_cast<std::int64_t>(dataset.samples.size());
    sample.values.resize(channels, length);
    for (int c = 0; c < channels; ++c) {
      for (int t = 0; t < length; ++t) {
        const auto& field = fields[static_cast<std::size_t>(c) * length + t];
        double v = 0.0;
        if (!parse_number(field, v)) {
          throw ParseError("non-numeric value '" + std::string(field) + "'", line_no);
        }
        if (!std::isfinite(v)) throw ParseError("non-finite value", line_no);
        sample.values(c, t) = v;
      }
    }
    if (!parse_number(fields.back(), sample.label)) {
      throw ParseError("non-integer label '" + std::string(fields.back()) + "'", line_no);
    }
    if (sample.label < 0 || sample.label >= dataset.class_count) {
      throw ParseError("label " + std::to_string(sample.label) + " out of range [0, " +
                           std::to_string(dataset.class_count) + ")",
                       line_no);
    }
    dataset.samples.push_back(std::move(sample));
    if (eol == text.size()) break;
  }
  if (!have_header) throw ParseError("missing header line");
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path, DelimiterSpec schema, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_dataset(buffer.str(), schema, split);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_dataset(const Dataset& dataset, DelimiterSpec schema) {
  std::ostringstream out;
  out.precision(17);
  const char d = schema.delimiter;
  out << dataset.channels() << d << dataset.length() << d << dataset.class_count << '\n';
  for (const auto& s : dataset.samples) {
    for (int c = 0; c < s.channels(); ++c) {
      for (int t = 0; t < s.length(); ++t) out << s.values(c, t) << d;
    }
    out << s.label << '\n';
  }
  return out.str();
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset,
                   DelimiterSpec schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << format_dataset(dataset, schema);
}

// --- anomaly generator ------------------------------------------------------------

void AnomalyGenSpec::validate() const {
  if (train_count <= 0 || val_count <= 0 || test_count <= 0) {
    throw ValidationError("anomaly split counts must be positive");
  }
  if (length < 2 || channels < 1) throw ValidationError("anomaly length/channels too small");
  if (!(noise_sigma > 0.0)) throw ValidationError("noise_sigma must be > 0");
  if (!(sigma_multiplier > 0.0)) throw ValidationError("sigma multiplier k must be > 0");
  if (!(peak_min <= peak_max)) throw ValidationError("peak amplitude range is empty");
  if (peak_probability < 0.0 || peak_probability > 1.0) {
    throw ValidationError("peak probability must lie in [0, 1]");
  }
}

bool exceeds_channel_threshold(const Matrix& values, double k) {
  for (Eigen::Index c = 0; c < values.rows(); ++c) {
    const auto row = values.row(c);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    const double threshold = mean + k * std::sqrt(var);
    if ((row.array() > threshold).any()) return true;
  }
  return false;
}

namespace {

void fill_split(std::mt19937_64& rng, const AnomalyGenSpec& spec, int count, Split split,
                Dataset& out, std::vector<std::optional<PeakMark>>& peaks) {
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> amplitude(spec.peak_min, spec.peak_max);
  std::uniform_int_distribution<int> channel(0, spec.channels - 1);
  const int lo = std::min(2, spec.length - 1);
  const int hi = std::max(lo, spec.length - 2);
  std::uniform_int_distribution<int> position(lo, hi);

  out.class_count = 2;
  out.split = split;
  out.samples.reserve(static_cast<std::size_t>(count));
  peaks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    TimeSeriesSample s;
    s.id = i;
    s.values.resize(spec.channels, spec.length);
    for (int c = 0; c < spec.channels; ++c) {
      for (int t = 0; t < spec.length; ++t) s.values(c, t) = noise(rng);
    }
    std::optional<PeakMark> mark;
    if (unit(rng) < spec.peak_probability) {
      mark = PeakMark{channel(rng), position(rng)};
      s.values(mark->channel, mark->position) += amplitude(rng);
    }
    s.label = exceeds_channel_threshold(s.values, spec.sigma_multiplier) ? 1 : 0;
    out.samples.push_back(std::move(s));
    peaks.push_back(mark);
  }
}

}  // namespace

AnomalySplits generate_anomaly(const AnomalyGenSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  AnomalySplits splits;
  fill_split(rng, spec, spec.train_count, Split::train, splits.train, splits.train_peaks);
  fill_split(rng, spec, spec.val_count, Split::val, splits.val, splits.val_peaks);
  fill_split(rng, spec, spec.test_count, Split::test, splits.test, splits.test_peaks);
  return splits;
}

// --- normalization ------------------------------------------------------------

NormStats fit_normalization(const Dataset& train) {
  if (train.empty()) throw ValidationError("cannot normalize an empty dataset");
  const int channels = train.channels();
  NormStats stats;
  stats.mean.assign(static_cast<std::size_t>(channels), 0.0);
  stats.stddev.assign(static_cast<std::size_t>(channels), 0.0);
  const double n = static_cast<double>(train.size()) * train.length();
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (const auto& s : train.samples) sum += s.values.row(c).sum();
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& s : train.samples) sq += (s.values.row(c).array() - mean).square().sum();
    stats.mean[static_cast<std::size_t>(c)] = mean;
    stats.stddev[static_cast<std::size_t>(c)] = std::max(std::sqrt(sq / n), NormStats::kMinStd);
  }
  return stats;
}

Matrix normalize_values(const Matrix& values, const NormStats& stats) {
  if (static_cast<std::size_t>(values.rows()) != stats.mean.size()) {
    throw DimensionError("normalization statistics cover " + std::to_string(stats.mean.size()) +
                         " channels, sample has " + std::to_string(values.rows()));
  }
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c < values.rows(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    out.row(c) = (values.row(c).array() - stats.mean[ci]) / stats.stddev[ci];
  }
  return out;
}

Dataset znormalize(const Dataset& dataset, const NormStats& stats) {
  Dataset out;
  out.class_count = dataset.class_count;
  out.split = dataset.split;
  out.samples.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    out.samples.push_back({s.id, normalize_values(s.values, stats), s.label});
  }
  return out;
}

Dataset znormalize(const Dataset& dataset) { return znormalize(dataset, fit_normalization(dataset)); }

// --- splitting ------------------------------------------------------------------

namespace {

// Distributes `target` items across classes proportionally to `sizes * fraction`.
std::vector<std::size_t> allocate(const std::vector<std::size_t>& sizes, double fraction,
                                  std::size_t target, const std::vector<std::size_t>& cap) {
  std::vector<std::size_t> take(sizes.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    const double exact = static_cast<double>(sizes[c]) * fraction;
    take[c] = std::min(static_cast<std::size_t>(std::floor(exact)), cap[c]);
    assigned += take[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t round = 0; assigned < target && round < 2; ++round) {
    for (const auto& [rem, c] : remainders) {
      if (assigned >= target) break;
      if (take[c] < cap[c] && (round > 0 || rem > 0.0)) {
        ++take[c];
        ++assigned;
      }
    }
  }
  return take;
}

}  // namespace

HoldoutSplits split_holdout(const Dataset& dataset, double train_fraction, double val_fraction,
                            std::uint64_t seed) {
  if (!(train_fraction > 0.0) || !(val_fraction > 0.0) || train_fraction + val_fraction >= 1.0) {
    throw ValidationError("split fractions must be positive with sum < 1");
  }
  const auto classes = static_cast<std::size_t>(dataset.class_count);
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    members[static_cast<std::size_t>(dataset.samples[i].label)].push_back(i);
  }
  std::vector<std::size_t> sizes(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    sizes[c] = members[c].size();
    if (sizes[c] > 0 && sizes[c] < 3) {
      throw ValidationError("class " + std::to_string(c) + " has only " +
                            std::to_string(sizes[c]) + " samples; stratification needs >= 3");
    }
  }
  const auto n = static_cast<double>(dataset.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * train_fraction));
  const auto n_val = static_cast<std::size_t>(std::llround(n * val_fraction));
  auto take_train = allocate(sizes, train_fraction, n_train, sizes);
  std::vector<std::size_t> left(classes);
  for (std::size_t c = 0; c < classes; ++c) left[c] = sizes[c] - take_train[c];
  auto take_val = allocate(sizes, val_fraction, n_val, left);

  std::mt19937_64 rng(seed);
  HoldoutSplits out;
  out.train.split = Split::train;
  out.val.split = Split::val;
  out.test.split = Split::test;
  for (auto* d : {&out.train, &out.val, &out.test}) d->class_count = dataset.class_count;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (std::size_t c = 0; c < classes; ++c) {
    auto idx = members[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (j < take_train[c]) {
        train_idx.push_back(idx[j]);
      } else if (j < take_train[c] + take_val[c]) {
        val_idx.push_back(idx[j]);
      } else {
        test_idx.push_back(idx[j]);
      }
    }
  }
  auto emit = [&](std::vector<std::size_t>& idx, Dataset& target) {
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) target.samples.push_back(dataset.samples[i]);
  };
  emit(train_idx, out.train);
  emit(val_idx, out.val);
  emit(test_idx, out.test);
  return out;
}

}  // namespace patchx
