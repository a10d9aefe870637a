#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "patchx/app.hpp"

namespace {

using namespace patchx;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  fs::path work;
};

// --- shared full-scale anomaly model -------------------------------------------------

struct AnomalyModel {
  RunConfig config;
  LoadedData data;
  PipelineResult result;
  std::vector<ClassPresenceVector> test_vectors;
  double seconds = 0.0;
};

const AnomalyModel& anomaly_model(const SuiteOptions& s) {
  static std::unique_ptr<AnomalyModel> model;
  if (model) return *model;
  model = std::make_unique<AnomalyModel>();
  const auto start = Clock::now();
  model->config = resolve_config({{"seed", std::to_string(s.seed)}}, std::nullopt);
  model->data = load_data(model->config.data);
  std::cerr << "  training the patch network on " << model->data.train.size() << "/"
            << model->data.val.size() << "/" << model->data.test.size() << " samples\n";
  model->result = fit_pipeline(model->config.pipeline, model->data.train, model->data.val);
  model->test_vectors = presence_vectors(model->result.bundle, model->data.test);
  model->seconds = seconds_since(start);
  return *model;
}

double refit_accuracy(const AnomalyModel& m, ShallowKind kind) {
  ShallowSpec spec = m.config.pipeline.shallow;
  spec.kind = kind;
  const auto model = fit_shallow(spec, m.result.train_vectors);
  return evaluate(model, m.test_vectors).accuracy;
}

// --- criteria --------------------------------------------------------------------------

Outcome gradient_correctness(const SuiteOptions&) {
  const auto start = Clock::now();
  GradcheckOptions opts;
  opts.seeds = 10;
  std::ostringstream log;
  const auto summary = cmd_gradcheck(opts, log);
  const double secs = seconds_since(start);
  const bool ok = summary.passed && summary.max_relative_error < 1e-3 && secs < 60.0;
  return {ok, "10 seeds, conv1d/relu/pool/dense + composite net, max rel error " +
                  fmt(summary.max_relative_error, 9) + ", " + fmt(secs, 1) + " s"};
}

Outcome enumeration_oracle(const SuiteOptions& s) {
  std::mt19937_64 rng(s.seed);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int length = 1 + static_cast<int>(rng() % 200);
    const int patch_length = 1 + static_cast<int>(rng() % static_cast<unsigned>(length));
    const int stride = 1 + static_cast<int>(rng() % static_cast<unsigned>(length));
    std::vector<PatchSpan> brute;
    for (int p = 0; p <= length; ++p) {
      if (p * stride < length) brute.push_back({p, p * stride, std::min(p * stride + patch_length, length)});
    }
    if (enumerate_patches(length, {stride, patch_length}) != brute) ++mismatches;
  }
  return {mismatches == 0, "200 random (length, stride, patch-length) triples, " +
                               std::to_string(mismatches) + " mismatches"};
}

Outcome transform_semantics(const SuiteOptions& s) {
  std::mt19937_64 rng(s.seed + 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  int checked = 0;
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int length = 4 + static_cast<int>(rng() % 80);
    const int channels = 1 + static_cast<int>(rng() % 4);
    TimeSeriesSample sample;
    sample.id = trial;
    sample.values = Matrix(channels, length);
    for (Eigen::Index j = 0; j < sample.values.size(); ++j) sample.values.data()[j] = noise(rng);
    const int patch_length = 1 + static_cast<int>(rng() % static_cast<unsigned>(length));
    const int stride = 1 + static_cast<int>(rng() % static_cast<unsigned>(length));
    for (bool attach : {false, true}) {
      for (bool notemp : {false, true}) {
        PatchConfig config{stride, patch_length, true, attach, notemp};
        Matrix sum = Matrix::Zero(channels, length);
        std::vector<int> coverage(static_cast<std::size_t>(length), 0);
        for (const auto& span : enumerate_patches(length, config)) {
          const auto inst = transform(sample, span.index, config);
          ++checked;
          // Hand-shifted oracle of the original channels.
          Matrix oracle = Matrix::Zero(channels, length);
          const int dst = notemp ? 0 : span.start;
          for (int c = 0; c < channels; ++c) {
            for (int t = span.start; t < span.end; ++t) oracle(c, dst + t - span.start) = sample.values(c, t);
          }
          bool ok = inst.values.cols() == length && inst.values.rows() == channels + (attach ? 1 : 0) &&
                    inst.values.topRows(channels) == oracle;
          for (int t = 0; ok && t < length; ++t) {
            const bool valid = t >= dst && t < dst + span.size();
            if (attach && inst.values(channels, t) != (valid ? 1.0 : 0.0)) ok = false;
            for (int c = 0; c < channels && !valid; ++c) ok = ok && inst.values(c, t) == 0.0;
          }
          if (!ok) ++violations;
          if (!notemp) {
            sum += inst.values.topRows(channels);
            for (int t = span.start; t < span.end; ++t) ++coverage[static_cast<std::size_t>(t)];
          }
        }
        if (!notemp) {
          for (int t = 0; t < length; ++t) {
            const int n = coverage[static_cast<std::size_t>(t)];
            for (int c = 0; c < channels && n > 0; ++c) {
              if (std::abs(sum(c, t) / n - sample.values(c, t)) > 1e-12 * std::max(1.0, std::abs(sample.values(c, t)))) {
                ++violations;
              }
            }
          }
        }
      }
    }
  }
  return {violations == 0, "100 samples x 4 flag rows, " + std::to_string(checked) +
                               " instances, " + std::to_string(violations) + " invariant violations"};
}

Outcome metadata_oracle(const SuiteOptions& s) {
  std::mt19937_64 rng(s.seed + 2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int classes = 2 + static_cast<int>(rng() % 5);
    const int configs = 1 + static_cast<int>(rng() % 3);
    const int patches = 1 + static_cast<int>(rng() % 40);
    std::vector<PatchPrediction> preds;
    for (int p = 0; p < patches; ++p) {
      std::vector<double> v(static_cast<std::size_t>(classes));
      for (auto& x : v) x = u(rng);
      if (rng() % 5 == 0) {
        // Tie the top entry with another class.
        const auto top = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
        v[(top + 1) % v.size()] = v[top];
        ++ties;
      }
      double total = 0.0;
      for (double x : v) total += x;
      for (auto& x : v) x /= total;
      preds.push_back({static_cast<int>(rng() % static_cast<unsigned>(configs)), v});
    }
    std::vector<std::vector<double>> oracle(static_cast<std::size_t>(configs),
                                            std::vector<double>(static_cast<std::size_t>(classes), 0.0));
    for (const auto& p : preds) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < p.softmax.size(); ++c) {
        if (p.softmax[c] > p.softmax[best]) best = c;
      }
      oracle[static_cast<std::size_t>(p.config_index)][best] += p.softmax[best];
    }
    const auto v = extract(trial, preds, configs, classes);
    for (std::size_t k = 0; k < oracle.size(); ++k) {
      for (std::size_t c = 0; c < oracle[k].size(); ++c) worst = std::max(worst, std::abs(v.blocks[k][c] - oracle[k][c]));
    }
  }
  return {worst <= 1e-9, "1000 random prediction sets (" + std::to_string(ties) +
                             " tied patches), max deviation " + fmt(worst, 12)};
}

Outcome end_to_end(const SuiteOptions& s) {
  const auto& m = anomaly_model(s);
  const auto start = Clock::now();
  const double svm = evaluate(m.result.bundle.shallow, m.test_vectors).accuracy;
  const double forest = refit_accuracy(m, ShallowKind::forest);
  const double trivial = refit_accuracy(m, ShallowKind::trivial);
  const double secs = m.seconds + seconds_since(start);
  const double gap = std::abs(svm - trivial) * 100.0;
  const bool ok = svm >= 0.95 && gap <= 2.0 && secs <= 15 * 60;
  return {ok, "3500/1500/1000, S5L10+S10L20: CNN+SVM " + fmt(svm) + " (>= 0.95 " +
                  (svm >= 0.95 ? "ok" : "MISSED") + "), CNN+RF " + fmt(forest) + ", CNN+Trivial " +
                  fmt(trivial) + " (gap " + fmt(gap, 1) + " pts, <= 2 " + (gap <= 2.0 ? "ok" : "MISSED") +
                  "), " + fmt(secs, 1) + " s"};
}

// Up/down spike pair with an 11-step gap on a circular 50-step frame: class 0
// is "up then down", class 1 "down then up".
Matrix spike_template(int label, int t, double amplitude, int length = 50, int gap = 11) {
  Matrix m = Matrix::Zero(1, length);
  const int second = (t + gap) % length;
  m(0, t) = label == 0 ? amplitude : -amplitude;
  m(0, second) = label == 0 ? -amplitude : amplitude;
  return m;
}

Dataset spike_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_int_distribution<int> pos(0, 49);
  Dataset d;
  for (int i = 0; i < n; ++i) {
    TimeSeriesSample s;
    s.id = i;
    s.label = i % 2;
    s.values = spike_template(s.label, pos(rng), 3.0);
    for (Eigen::Index j = 0; j < s.values.size(); ++j) s.values.data()[j] += noise(rng);
    d.samples.push_back(std::move(s));
  }
  return d;
}

/// True when, for every window start, the multiset of noise-free window
/// contents is identical for both classes (no window of this length can
/// separate them, even knowing its position).
bool windows_indistinguishable(int window) {
  for (int start = 0; start < 50; ++start) {
    const int end = std::min(start + window, 50);
    std::multiset<std::vector<double>> seen[2];
    for (int label = 0; label < 2; ++label) {
      for (int t = 0; t < 50; ++t) {
        const Matrix m = spike_template(label, t, 1.0);
        seen[label].insert(std::vector<double>(m.data() + start, m.data() + end));
      }
    }
    if (seen[0] != seen[1]) return false;
  }
  return true;
}

Outcome config_robustness(const SuiteOptions& s) {
  const bool l10_blind = windows_indistinguishable(10);
  const bool l20_sees = !windows_indistinguishable(20);
  const Dataset train = spike_dataset(1000, mix_seed(s.seed, 60));
  const Dataset val = spike_dataset(300, mix_seed(s.seed, 61));
  const Dataset test = spike_dataset(500, mix_seed(s.seed, 62));
  auto accuracy_with = [&](const std::string& configs) {
    const auto cfg = resolve_config({{"seed", std::to_string(s.seed)}, {"patching.configs", configs},
                                     {"network.blocks", "32x7,32x7"}, {"train.epochs", "20"}},
                                    std::nullopt);
    std::cerr << "  spike task with configs " << configs << "\n";
    const auto result = fit_pipeline(cfg.pipeline, train, val);
    return evaluate(result.bundle.shallow, presence_vectors(result.bundle, test)).accuracy;
  };
  const double single = accuracy_with("5:10");
  const double both = accuracy_with("5:10,10:20");
  const bool ok = l10_blind && l20_sees && both >= single + 0.10;
  return {ok, std::string("brute force: no length-10 window separates (") + (l10_blind ? "verified" : "VIOLATED") +
                  "), length-20 windows do (" + (l20_sees ? "verified" : "NOT") + "); {S5L10} " + fmt(single) +
                  ", {S5L10,S10L20} " + fmt(both) + " (+" + fmt((both - single) * 100.0, 1) + " pts, need +10)"};
}

Outcome flag_ablation(const SuiteOptions& s) {
  const auto& m = anomaly_model(s);
  std::vector<std::pair<std::string, double>> rows;
  for (bool attach : {false, true}) {
    for (bool notemp : {false, true}) {
      const std::string name = std::string("zero") + (attach ? "+attach" : "") + (notemp ? "+notemp" : "");
      double acc = 0.0;
      if (attach && !notemp && m.config.pipeline.configs.front().attach && !m.config.pipeline.configs.front().notemp) {
        acc = evaluate(m.result.bundle.shallow, m.test_vectors).accuracy;
      } else {
        PipelineSpec spec = m.config.pipeline;
        for (auto& c : spec.configs) {
          c.attach = attach;
          c.notemp = notemp;
        }
        std::cerr << "  flag row " << name << "\n";
        const auto result = fit_pipeline(spec, m.data.train, m.data.val);
        acc = evaluate(result.bundle.shallow, presence_vectors(result.bundle, m.data.test)).accuracy;
      }
      rows.emplace_back(name, acc);
    }
  }
  bool rejected = false;
  try {
    resolve_config({{"seed", std::to_string(s.seed)}, {"patching.zero", "false"}}, std::nullopt);
  } catch (const ConfigError&) {
    rejected = true;
  }
  double lo = 1.0;
  double hi = 0.0;
  std::string detail;
  for (const auto& [name, acc] : rows) {
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
    detail += name + " " + fmt(acc) + ", ";
  }
  const double spread = (hi - lo) * 100.0;
  const bool ok = lo >= 0.95 && spread <= 2.0 && rejected;
  return {ok, detail + "spread " + fmt(spread, 2) + " pts, zero=false " + (rejected ? "rejected" : "ACCEPTED")};
}

Outcome explanation_coherence(const SuiteOptions& s) {
  const auto& m = anomaly_model(s);
  std::size_t covering = 0;
  std::size_t covering_anomaly = 0;
  std::size_t other = 0;
  std::size_t other_normal = 0;
  int samples = 0;
  for (std::size_t i = 0; i < m.data.test.size() && samples < 100; ++i) {
    const auto& mark = m.data.test_peaks[i];
    if (!mark) continue;
    ++samples;
    const auto e = explain_sample(m.result.bundle, m.data.test.samples[i]);
    for (const auto& r : e.records) {
      if (r.span.contains(mark->position)) {
        ++covering;
        covering_anomaly += r.predicted_class == 1;
      } else {
        ++other;
        other_normal += r.predicted_class == 0;
      }
    }
  }
  const double a = static_cast<double>(covering_anomaly) / static_cast<double>(std::max<std::size_t>(covering, 1));
  const double b = static_cast<double>(other_normal) / static_cast<double>(std::max<std::size_t>(other, 1));
  const bool ok = samples == 100 && a >= 0.9 && b >= 0.9;
  return {ok, std::to_string(samples) + " peaked test samples: " + fmt(a) + " of " + std::to_string(covering) +
                  " peak-covering patches predict anomaly, " + fmt(b) + " of " + std::to_string(other) +
                  " other patches predict normal"};
}

bool rule_label(const Matrix& v, double k) {
  for (Eigen::Index c = 0; c < v.rows(); ++c) {
    double mean = 0.0;
    for (Eigen::Index t = 0; t < v.cols(); ++t) mean += v(c, t);
    mean /= static_cast<double>(v.cols());
    double var = 0.0;
    for (Eigen::Index t = 0; t < v.cols(); ++t) var += (v(c, t) - mean) * (v(c, t) - mean);
    const double threshold = mean + k * std::sqrt(var / static_cast<double>(v.cols()));
    for (Eigen::Index t = 0; t < v.cols(); ++t) {
      if (v(c, t) > threshold) return true;
    }
  }
  return false;
}

Outcome boundary_probe_oracle(const SuiteOptions& s) {
  const auto& m = anomaly_model(s);
  const double k = m.config.data.anomaly.sigma_multiplier;
  const auto factors = linear_factors(0.0, 2.0, 81);
  int probed = 0;
  int agree = 0;
  int flipped = 0;
  for (std::size_t i = 0; i < m.data.test.size() && probed < 20; ++i) {
    const auto& mark = m.data.test_peaks[i];
    if (!mark) continue;
    ++probed;
    const auto& sample = m.data.test.samples[i];
    const auto probe = boundary_probe(m.result.bundle, sample, mark->channel, mark->position, factors, k);
    std::optional<double> oracle;
    bool steps_agree = probe.steps.size() == factors.size();
    bool first = false;
    for (std::size_t j = 0; j < factors.size(); ++j) {
      Matrix v = sample.values;
      v(mark->channel, mark->position) *= factors[j];
      const bool label = rule_label(v, k);
      if (j == 0) first = label;
      if (!oracle && label != first) oracle = factors[j];
      if (steps_agree && probe.steps[j].ground_truth != (label ? 1 : 0)) steps_agree = false;
    }
    if (oracle) ++flipped;
    if (steps_agree && probe.ground_truth_flip() == oracle) ++agree;
  }
  return {probed == 20 && agree == 20, std::to_string(agree) + "/" + std::to_string(probed) +
                                           " probes match the label-rule oracle flip factor (" +
                                           std::to_string(flipped) + " flip within factors 0..2)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const SuiteOptions& s) {
  const auto config = resolve_config({{"seed", std::to_string(s.seed)},
                                      {"output", (s.work / "determinism").string()},
                                      {"data.train_count", "600"},
                                      {"data.val_count", "200"},
                                      {"data.test_count", "200"},
                                      {"train.epochs", "3"},
                                      {"train.patience", "2"}},
                                     std::nullopt);
  std::ostringstream log;
  const auto a = cmd_run(config, log);
  const auto b = cmd_run(config, log);
  int same = 0;
  std::string differing;
  const std::vector<std::string> files = {"presence_train.csv", "presence_val.csv", "presence_test.csv",
                                          "bundle.pchx", "metrics.json", "predictions_test.csv"};
  for (const auto& f : files) {
    const auto x = slurp(a.dir / f);
    if (!x.empty() && x == slurp(b.dir / f)) {
      ++same;
    } else {
      differing += " " + f;
    }
  }
  return {same == static_cast<int>(files.size()),
          std::to_string(same) + "/" + std::to_string(files.size()) +
              " artifacts bitwise identical across two runs (metadata vectors, bundle, metrics, predictions)" +
              (differing.empty() ? "" : "; differing:" + differing)};
}

Outcome scaling_trend(const SuiteOptions& s) {
  std::vector<double> xs;
  std::vector<double> ys;
  std::string detail;
  for (int n : {1000, 2000, 4000, 8000}) {
    const auto cfg = resolve_config({{"seed", std::to_string(s.seed)},
                                     {"data.train_count", std::to_string(n)},
                                     {"data.val_count", std::to_string(n / 4)},
                                     {"data.test_count", "100"},
                                     {"train.epochs", "2"},
                                     {"train.patience", "1"}},
                                    std::nullopt);
    const auto data = load_data(cfg.data);
    std::cerr << "  scaling run with " << n << " training samples\n";
    const auto result = fit_pipeline(cfg.pipeline, data.train, data.val);
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(result.train_seconds()));
    detail += std::to_string(n) + ":" + fmt(result.train_seconds(), 1) + "s ";
  }
  const double mx = (xs[0] + xs[1] + xs[2] + xs[3]) / 4.0;
  const double my = (ys[0] + ys[1] + ys[2] + ys[3]) / 4.0;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += (xs[i] - mx) * (ys[i] - my);
    den += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = num / den;
  return {slope <= 1.2, "training time " + detail + "log-log slope " + fmt(slope, 3) + " (<= 1.2)"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const SuiteOptions&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PatchX acceptance suite"};
  SuiteOptions settings;
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "patchx-acceptance").string();
  app.add_option("--seed", settings.seed, "run seed")->capture_default_str();
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--work", work, "scratch directory for run artifacts")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  settings.work = work;
  fs::create_directories(settings.work);

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "patch enumeration oracle", enumeration_oracle},
      {3, "transform semantics", transform_semantics},
      {4, "metadata oracle", metadata_oracle},
      {5, "end-to-end synthetic anomaly", end_to_end},
      {6, "config robustness", config_robustness},
      {7, "transformation-flag ablation", flag_ablation},
      {8, "explanation coherence", explanation_coherence},
      {9, "boundary probe", boundary_probe_oracle},
      {10, "determinism", determinism},
      {11, "scaling trend", scaling_trend},
  };

  int passed = 0;
  int ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    std::cerr << "criterion " << c.id << ": " << c.name << "\n";
    const auto start = Clock::now();
    Outcome outcome;
    try {
      outcome = c.run(settings);
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    passed += outcome.pass;
    std::cout << (outcome.pass ? "[PASS] " : "[FAIL] ") << c.id << ". " << c.name << ": " << outcome.detail
              << " [" << fmt(seconds_since(start), 1) << " s]" << std::endl;
  }
  std::cout << "acceptance: " << passed << "/" << ran << " criteria passed" << std::endl;
  return passed == ran ? 0 : 1;
}
