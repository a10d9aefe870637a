#include "patchx/explain.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace patchx {

std::string_view to_string(PatchCategory c) {
  switch (c) {
    case PatchCategory::class_specific:
      return "class-specific";
    case PatchCategory::shared:
      return "shared";
    case PatchCategory::unrelated:
      return "unrelated";
  }
  return "?";
}

PatchCategory CategoryThresholds::classify(double confidence, int class_count) const {
  if (confidence >= specific) return PatchCategory::class_specific;
  if (confidence <= 1.0 / class_count + unrelated_margin) return PatchCategory::unrelated;
  return PatchCategory::shared;
}

double confidence_alpha(double confidence, int class_count) {
  const double floor = 1.0 / class_count;
  return std::clamp((confidence - floor) / (1.0 - floor), 0.0, 1.0);
}

std::vector<ExplanationRecord> make_records(const SampleInference& inference, int class_count,
                                            const CategoryThresholds& thresholds) {
  std::vector<ExplanationRecord> records;
  records.reserve(inference.patches.size());
  for (std::size_t i = 0; i < inference.patches.size(); ++i) {
    const auto& patch = inference.patches[i];
    const auto& softmax = inference.predictions[i].softmax;
    ExplanationRecord r;
    r.sample_id = patch.sample_id;
    r.config_index = patch.config_index;
    r.patch_index = patch.patch_index;
    r.span = patch.span;
    r.predicted_class = argmax_lowest(softmax);
    r.confidence = softmax[static_cast<std::size_t>(r.predicted_class)];
    r.softmax = softmax;
    r.category = thresholds.classify(r.confidence, class_count);
    records.push_back(std::move(r));
  }
  return records;
}

namespace {

SampleExplanation explanation_from(const SampleInference& inference, const TimeSeriesSample& sample,
                                   int class_count, const CategoryThresholds& thresholds) {
  SampleExplanation out;
  out.sample_id = sample.id;
  out.label = sample.label;
  out.predicted = inference.predicted;
  out.class_count = class_count;
  out.scores = inference.scores;
  out.presence = inference.presence;
  out.records = make_records(inference, class_count, thresholds);
  return out;
}

}  // namespace

SampleExplanation explain_sample(const Bundle& bundle, const TimeSeriesSample& sample,
                                 const CategoryThresholds& thresholds) {
  return explanation_from(infer(bundle, sample), sample, bundle.class_count(), thresholds);
}

// --- histogram ----------------------------------------------------------------

std::size_t HistogramReport::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

std::size_t HistogramReport::bin_of(double confidence) const {
  const double lo = edges.front();
  if (!(confidence > lo)) return 0;
  const auto idx = static_cast<std::size_t>(std::floor((confidence - lo) / bin_width));
  return std::min(idx, counts.size() - 1);
}

HistogramReport make_histogram(int class_count, double bin_width, bool per_class) {
  if (class_count < 2) throw ValidationError("histogram needs at least two classes");
  if (!(bin_width > 0.0) || bin_width > 1.0) throw ValidationError("bin width must be in (0, 1]");
  HistogramReport h;
  h.class_count = class_count;
  h.bin_width = bin_width;
  const double lo = 1.0 / class_count;
  const auto bins = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil((1.0 - lo) / bin_width - 1e-9)));
  for (std::size_t i = 0; i < bins; ++i) h.edges.push_back(lo + static_cast<double>(i) * bin_width);
  h.edges.push_back(1.0);
  h.counts.assign(bins, 0);
  if (per_class) h.per_class.assign(static_cast<std::size_t>(class_count), h.counts);
  return h;
}

void add_confidence(HistogramReport& report, double confidence, int predicted_class) {
  const auto bin = report.bin_of(confidence);
  ++report.counts[bin];
  if (!report.per_class.empty()) {
    ++report.per_class.at(static_cast<std::size_t>(predicted_class))[bin];
  }
}

HistogramReport confidence_histogram(const Bundle& bundle, const Dataset& dataset,
                                     double bin_width, bool per_class) {
  if (dataset.empty()) throw ValidationError("confidence histogram needs a non-empty dataset");
  auto report = make_histogram(bundle.class_count(), bin_width, per_class);
  for (const auto& sample : dataset.samples) {
    const auto patches = bundle.patches(sample);
    for (const auto& pred : predict_patches(bundle.network, patches)) {
      const int c = argmax_lowest(pred.softmax);
      add_confidence(report, pred.softmax[static_cast<std::size_t>(c)], c);
    }
  }
  return report;
}

// --- boundary probe -----------------------------------------------------------

std::optional<double> BoundaryProbeResult::ground_truth_flip() const {
  for (const auto& s : steps) {
    if (s.ground_truth != steps.front().ground_truth) return s.factor;
  }
  return std::nullopt;
}

std::optional<double> BoundaryProbeResult::prediction_flip() const {
  for (const auto& s : steps) {
    if (s.predicted != steps.front().predicted) return s.factor;
  }
  return std::nullopt;
}

int BoundaryProbeResult::ground_truth_changes() const {
  int changes = 0;
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i].ground_truth != steps[i - 1].ground_truth) ++changes;
  }
  return changes;
}

bool BoundaryProbeResult::covering_confidence_monotone() const {
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i].covering_confidence < steps[i - 1].covering_confidence) return false;
  }
  return true;
}

BoundaryProbeResult boundary_probe(const Bundle& bundle, const TimeSeriesSample& sample,
                                   int channel, int position, std::span<const double> factors,
                                   double sigma_multiplier, int target_class,
                                   const CategoryThresholds& thresholds) {
  if (channel < 0 || channel >= sample.channels() || position < 0 ||
      position >= sample.length()) {
    throw IndexError("probe point (" + std::to_string(channel) + ", " + std::to_string(position) +
                     ") is outside the " + std::to_string(sample.channels()) + "x" +
                     std::to_string(sample.length()) + " sample");
  }
  if (target_class < 0 || target_class >= bundle.class_count()) {
    throw IndexError("probe target class out of range");
  }
  if (factors.empty()) throw ValidationError("probe needs at least one factor");
  for (std::size_t i = 1; i < factors.size(); ++i) {
    if (!(factors[i] > factors[i - 1])) {
      throw ValidationError("probe factors must be strictly increasing");
    }
  }

  BoundaryProbeResult result;
  result.sample_id = sample.id;
  result.channel = channel;
  result.position = position;
  result.target_class = target_class;
  result.sigma_multiplier = sigma_multiplier;
  const double base = sample.values(channel, position);
  for (double factor : factors) {
    TimeSeriesSample scaled = sample;
    scaled.values(channel, position) = base * factor;
    scaled.label = exceeds_channel_threshold(scaled.values, sigma_multiplier) ? 1 : 0;

    const auto inference = infer(bundle, scaled);
    ProbeStep step;
    step.factor = factor;
    step.peak_value = scaled.values(channel, position);
    step.records = make_records(inference, bundle.class_count(), thresholds);
    step.predicted = inference.predicted;
    step.ground_truth = scaled.label;
    double sum = 0.0;
    int covering = 0;
    for (const auto& r : step.records) {
      if (r.span.contains(position)) {
        sum += r.softmax[static_cast<std::size_t>(target_class)];
        ++covering;
      }
    }
    step.covering_confidence = covering > 0 ? sum / covering : 0.0;
    result.steps.push_back(std::move(step));
  }
  return result;
}

std::vector<double> linear_factors(double first, double last, int steps) {
  if (steps < 1) throw ValidationError("factor count must be positive");
  if (steps == 1) return {first};
  std::vector<double> out(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    out[static_cast<std::size_t>(i)] = first + (last - first) * i / (steps - 1);
  }
  return out;
}

// --- mislabels ------------------------------------------------------------------

std::vector<MislabelEntry> mislabel_report(const Bundle& bundle, const Dataset& dataset,
                                           const CategoryThresholds& thresholds) {
  std::vector<MislabelEntry> out;
  for (const auto& sample : dataset.samples) {
    const auto inference = infer(bundle, sample);
    if (inference.predicted == sample.label) continue;
    MislabelEntry e;
    e.sample_id = sample.id;
    e.label = sample.label;
    e.predicted = inference.predicted;
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < inference.scores.size(); ++c) {
      if (static_cast<int>(c) != inference.predicted) runner_up = std::max(runner_up, inference.scores[c]);
    }
    e.margin = inference.scores[static_cast<std::size_t>(inference.predicted)] - runner_up;
    e.explanation = explanation_from(inference, sample, bundle.class_count(), thresholds);
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(), [](const MislabelEntry& a, const MislabelEntry& b) {
    if (a.margin != b.margin) return a.margin < b.margin;
    return a.sample_id < b.sample_id;
  });
  return out;
}

// --- export -------------------------------------------------------------------------

void write_records(std::ostream& out, std::span<const ExplanationRecord> records, int class_count) {
  out << "sample_id,config_index,patch_index,start,end,predicted_class,confidence,category";
  for (int c = 0; c < class_count; ++c) out << ",p" << c;
  out << '\n';
  const auto old = out.precision(17);
  for (const auto& r : records) {
    out << r.sample_id << ',' << r.config_index << ',' << r.patch_index << ',' << r.span.start
        << ',' << r.span.end << ',' << r.predicted_class << ',' << r.confidence << ','
        << to_string(r.category);
    for (double p : r.softmax) out << ',' << p;
    out << '\n';
  }
  out.precision(old);
}

void write_overlay(std::ostream& out, std::span<const ExplanationRecord> records, int class_count) {
  out << "sample_id,config_index,patch_index,start,end,class,alpha\n";
  const auto old = out.precision(17);
  for (const auto& r : records) {
    out << r.sample_id << ',' << r.config_index << ',' << r.patch_index << ',' << r.span.start
        << ',' << r.span.end << ',' << r.predicted_class << ','
        << confidence_alpha(r.confidence, class_count) << '\n';
  }
  out.precision(old);
}

void write_histogram(std::ostream& out, const HistogramReport& report) {
  out << "bin,lower,upper,count";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) out << ",class" << c;
  out << '\n';
  const auto old = out.precision(17);
  for (std::size_t b = 0; b < report.bins(); ++b) {
    out << b << ',' << report.edges[b] << ',' << report.edges[b + 1] << ',' << report.counts[b];
    for (const auto& row : report.per_class) out << ',' << row[b];
    out << '\n';
  }
  out.precision(old);
}

nlohmann::json to_json(const ExplanationRecord& r) {
  return {{"sample_id", r.sample_id},
          {"config_index", r.config_index},
          {"patch_index", r.patch_index},
          {"start", r.span.start},
          {"end", r.span.end},
          {"predicted_class", r.predicted_class},
          {"confidence", r.confidence},
          {"category", to_string(r.category)},
          {"softmax", r.softmax}};
}

nlohmann::json to_json(const SampleExplanation& e) {
  nlohmann::json records = nlohmann::json::array();
  nlohmann::json overlay = nlohmann::json::array();
  for (const auto& r : e.records) {
    records.push_back(to_json(r));
    overlay.push_back({{"config_index", r.config_index},
                       {"start", r.span.start},
                       {"end", r.span.end},
                       {"class", r.predicted_class},
                       {"alpha", confidence_alpha(r.confidence, e.class_count)}});
  }
  return {{"sample_id", e.sample_id},
          {"label", e.label},
          {"predicted", e.predicted},
          {"class_count", e.class_count},
          {"scores", e.scores},
          {"presence", e.presence.features()},
          {"records", std::move(records)},
          {"overlay", std::move(overlay)}};
}

nlohmann::json to_json(const HistogramReport& h) {
  nlohmann::json j = {{"class_count", h.class_count},
                      {"bin_width", h.bin_width},
                      {"edges", h.edges},
                      {"counts", h.counts},
                      {"total", h.total()}};
  if (!h.per_class.empty()) j["per_class"] = h.per_class;
  return j;
}

nlohmann::json to_json(const BoundaryProbeResult& p) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : p.steps) {
    nlohmann::json patches = nlohmann::json::array();
    for (const auto& r : s.records) patches.push_back(to_json(r));
    steps.push_back({{"factor", s.factor},
                     {"peak_value", s.peak_value},
                     {"predicted", s.predicted},
                     {"ground_truth", s.ground_truth},
                     {"covering_confidence", s.covering_confidence},
                     {"records", std::move(patches)}});
  }
  const auto gt = p.ground_truth_flip();
  const auto pred = p.prediction_flip();
  return {{"sample_id", p.sample_id},
          {"channel", p.channel},
          {"position", p.position},
          {"target_class", p.target_class},
          {"sigma_multiplier", p.sigma_multiplier},
          {"ground_truth_flip", gt ? nlohmann::json(*gt) : nlohmann::json(nullptr)},
          {"prediction_flip", pred ? nlohmann::json(*pred) : nlohmann::json(nullptr)},
          {"covering_confidence_monotone", p.covering_confidence_monotone()},
          {"steps", std::move(steps)}};
}

nlohmann::json mislabel_json(std::span<const MislabelEntry> entries) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries) {
    out.push_back({{"sample_id", e.sample_id},
                   {"label", e.label},
                   {"predicted", e.predicted},
                   {"margin", e.margin},
                   {"explanation", to_json(e.explanation)}});
  }
  return out;
}

nlohmann::json report_document(std::string_view kind, nlohmann::json body) {
  return {{"format", std::string("patchx.") + std::string(kind)},
          {"version", kExplainFormatVersion},
          {"body", std::move(body)}};
}

}  // namespace patchx
