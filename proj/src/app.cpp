#include "patchx/app.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace patchx {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string utc_stamp(const char* format) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), format, &tm);
  return buf.data();
}

std::uint64_t fnv1a(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::array<char, 1 << 14> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void write_presence_file(const fs::path& path, std::span<const ClassPresenceVector> vectors) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_presence_vectors(out, vectors);
}

void write_predictions(const fs::path& path, const Dataset& data, const SplitPredictions& p) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "sample_id,label,predicted\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.samples[i].id << ',' << p.truth[i] << ',' << p.predicted[i] << '\n';
  }
}

std::string cell_slug(std::span<const PatchConfig> configs) {
  std::string out;
  for (const auto& c : configs) {
    if (!out.empty()) out += '+';
    out += "s" + std::to_string(c.stride) + "l" + std::to_string(c.length);
  }
  return out;
}

std::string flag_string(const PatchConfig& c) {
  std::string out = "zero";
  if (c.attach) out += "+attach";
  if (c.notemp) out += "+notemp";
  return out;
}

const TimeSeriesSample& find_sample(const Dataset& data, std::int64_t id) {
  for (const auto& s : data.samples) {
    if (s.id == id) return s;
  }
  throw IndexError("no sample with id " + std::to_string(id) + " in the " +
                   std::string(to_string(data.split)) + " split");
}

std::string fmt_acc(const std::optional<double>& a) {
  if (!a) return "failed";
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << *a;
  return out.str();
}

}  // namespace

fs::path make_run_dir(const fs::path& parent, const std::string& command) {
  fs::create_directories(parent);
  const std::string base = utc_stamp("%Y%m%dT%H%M%SZ") + "-" + command;
  for (int n = 0;; ++n) {
    const fs::path dir = parent / (n == 0 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir)) return dir;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config,
                    const nlohmann::json& extra) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json") {
      files.push_back(fs::relative(entry.path(), dir));
    }
  }
  std::sort(files.begin(), files.end());
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& f : files) {
    listing.push_back({{"path", f.generic_string()},
                       {"bytes", fs::file_size(dir / f)},
                       {"fnv1a64", hex(fnv1a(dir / f))}});
  }
  nlohmann::json manifest = {{"format", "patchx.manifest"},
                             {"version", 1},
                             {"command", command},
                             {"created_utc", utc_stamp("%Y-%m-%dT%H:%M:%SZ")},
                             {"seed", config.seed},
                             {"seed_origin", to_string(config.seed_origin)},
                             {"resolved_config", "resolved.ini"},
                             {"files", std::move(listing)}};
  if (!extra.is_null()) manifest["details"] = extra;
  write_json(dir / "manifest.json", manifest);
}

SplitPredictions predict_split(const Bundle& bundle, const Dataset& data) {
  SplitPredictions out;
  const auto start = Clock::now();
  for (const auto& sample : data.samples) {
    auto inference = infer(bundle, sample);
    out.truth.push_back(sample.label);
    out.predicted.push_back(inference.predicted);
    out.vectors.push_back(std::move(inference.presence));
  }
  out.seconds = seconds_since(start);
  return out;
}

nlohmann::json evaluation_json(const Evaluation& e) {
  return {{"accuracy", e.accuracy}, {"correct", e.correct}, {"total", e.total}, {"confusion", e.confusion}};
}

nlohmann::json train_log_json(const TrainLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
  }
  return {{"best_epoch", log.best_epoch},
          {"best_val_patch_accuracy", log.best_val_accuracy},
          {"stopped_early", log.stopped_early},
          {"epochs", std::move(epochs)}};
}

void write_train_log(std::ostream& out, const TrainLog& log) {
  out << "epoch,train_loss,val_accuracy\n";
  const auto old = out.precision(17);
  for (const auto& e : log.epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_accuracy << '\n';
  out.precision(old);
}

// --- run / generate --------------------------------------------------------------

RunOutcome cmd_run(const RunConfig& config, std::ostream& log) {
  config.validate();
  RunOutcome outcome;
  outcome.dir = make_run_dir(config.output, "run");
  write_text(outcome.dir / "resolved.ini", config.to_ini());
  log << "run directory " << outcome.dir.string() << " (seed " << config.seed << ", "
      << to_string(config.seed_origin) << ")\n";

  const auto data = stage("data", [&] { return load_data(config.data); });
  log << "data: " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
      << " samples, " << data.train.channels() << "x" << data.train.length() << ", "
      << data.train.class_count << " classes\n";

  auto result = stage("train", [&] { return fit_pipeline(config.pipeline, data.train, data.val); });
  log << "train: " << result.log.epochs.size() << " epochs, best epoch " << result.log.best_epoch
      << " (val patch accuracy " << result.log.best_val_accuracy << "), " << std::fixed
      << std::setprecision(2) << result.train_seconds() << " s\n"
      << std::defaultfloat;

  const auto val = stage("evaluate", [&] { return predict_split(result.bundle, data.val); });
  const auto test = stage("evaluate", [&] { return predict_split(result.bundle, data.test); });
  const int classes = result.bundle.class_count();
  outcome.val = evaluate_predictions(val.truth, val.predicted, classes);
  outcome.test = evaluate_predictions(test.truth, test.predicted, classes);
  outcome.train_seconds = result.train_seconds();
  outcome.test_seconds = test.seconds;
  log << "evaluate: val accuracy " << outcome.val.accuracy << ", test accuracy "
      << outcome.test.accuracy << "\n";

  stage("persist", [&] {
    save_bundle(outcome.dir / "bundle.pchx", result.bundle);
    nlohmann::json metrics = {
        {"format", "patchx.metrics"},
        {"version", 1},
        {"shallow", to_string(config.pipeline.shallow.kind)},
        {"configs", format_patch_list(config.pipeline.configs)},
        {"flags", flag_string(config.pipeline.configs.front())},
        {"samples", {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}}},
        {"network_parameters", result.bundle.network.parameter_count()},
        {"training", train_log_json(result.log)},
        {"val", evaluation_json(outcome.val)},
        {"test", evaluation_json(outcome.test)}};
    write_json(outcome.dir / "metrics.json", metrics);
    write_json(outcome.dir / "timing.json",
               {{"network_seconds", result.network_seconds},
                {"metadata_seconds", result.metadata_seconds},
                {"shallow_seconds", result.shallow_seconds},
                {"train_seconds", result.train_seconds()},
                {"test_inference_seconds", test.seconds},
                {"test_samples", data.test.size()}});
    std::ofstream train_log(outcome.dir / "train_log.csv");
    write_train_log(train_log, result.log);
    train_log.close();
    write_presence_file(outcome.dir / "presence_train.csv", result.train_vectors);
    write_presence_file(outcome.dir / "presence_val.csv", val.vectors);
    write_presence_file(outcome.dir / "presence_test.csv", test.vectors);
    write_predictions(outcome.dir / "predictions_test.csv", data.test, test);
    write_manifest(outcome.dir, "run", config, {{"test_accuracy", outcome.test.accuracy}});
    return 0;
  });
  return outcome;
}

fs::path cmd_generate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto dir = make_run_dir(config.output, "generate");
  write_text(dir / "resolved.ini", config.to_ini());
  const auto data = stage("data", [&] { return load_data(config.data); });
  stage("persist", [&] {
    const DelimiterSpec schema{config.data.delimiter};
    write_dataset(dir / "train.csv", data.train, schema);
    write_dataset(dir / "val.csv", data.val, schema);
    write_dataset(dir / "test.csv", data.test, schema);
    if (config.data.source == "anomaly") {
      std::ofstream peaks(dir / "peaks.csv");
      peaks << "split,sample_id,channel,position\n";
      for (Split s : {Split::train, Split::val, Split::test}) {
        const auto& d = data.split(s);
        const auto& marks = data.peaks(s);
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (marks[i]) {
            peaks << to_string(s) << ',' << d.samples[i].id << ',' << marks[i]->channel << ','
                  << marks[i]->position << '\n';
          }
        }
      }
    }
    write_manifest(dir, "generate", config);
    return 0;
  });
  log << "wrote " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
      << " samples to " << dir.string() << "\n";
  return dir;
}

// --- bench ----------------------------------------------------------------------------

std::vector<std::vector<PatchConfig>> default_bench_grid(const PatchConfig& flags) {
  PatchConfig a = flags;
  a.stride = 5;
  a.length = 10;
  PatchConfig b = flags;
  b.stride = 10;
  b.length = 20;
  return {{a}, {b}, {a, b}};
}

namespace {

struct CellContext {
  const RunConfig& config;
  const LoadedData& data;
  const fs::path& bench_dir;
  std::ostream& log;
  BenchReport& report;
};

/// Trains one patch network and evaluates every requested shallow variant on it.
void run_patch_cell(CellContext& ctx, const std::string& name, const std::vector<PatchConfig>& configs,
                    const std::vector<ShallowKind>& variants) {
  PipelineSpec spec = ctx.config.pipeline;
  spec.configs = configs;
  const std::string flags = flag_string(configs.front());
  const fs::path cell_rel = fs::path(name);
  const fs::path cell_dir = ctx.bench_dir / cell_rel;

  auto fail_all = [&](const std::string& why) {
    for (auto kind : variants) {
      BenchCell cell;
      cell.name = name;
      cell.configs = format_patch_list(configs);
      cell.flags = flags;
      cell.variant = std::string(to_string(kind));
      cell.error = why;
      ctx.report.cells.push_back(cell);
    }
    ctx.log << "  " << name << ": FAILED " << why << "\n";
  };

  PatchStageResult stage_result;
  std::vector<ClassPresenceVector> train_vectors;
  double metadata_seconds = 0.0;
  try {
    validate_configs(configs, ctx.data.train.length());
    stage_result = train_patch_stage(spec, ctx.data.train, ctx.data.val);
    const auto start = Clock::now();
    train_vectors = presence_vectors(stage_result.bundle, ctx.data.train);
    metadata_seconds = seconds_since(start);
    fs::create_directories(cell_dir);
    std::ofstream train_log(cell_dir / "train_log.csv");
    write_train_log(train_log, stage_result.log);
  } catch (const std::exception& e) {
    fail_all(e.what());
    return;
  }

  for (auto kind : variants) {
    BenchCell cell;
    cell.name = name;
    cell.configs = format_patch_list(configs);
    cell.flags = flags;
    cell.variant = std::string(to_string(kind));
    try {
      ShallowSpec shallow = spec.shallow;
      shallow.kind = kind;
      auto start = Clock::now();
      Bundle bundle = stage_result.bundle;
      bundle.shallow = fit_shallow(shallow, train_vectors);
      const double shallow_seconds = seconds_since(start);
      const auto test = predict_split(bundle, ctx.data.test);
      const auto eval = evaluate_predictions(test.truth, test.predicted, bundle.class_count());
      cell.accuracy = eval.accuracy;
      cell.train_seconds = stage_result.seconds + metadata_seconds + shallow_seconds;
      cell.test_seconds = test.seconds;
      const fs::path variant_dir = cell_dir / cell.variant;
      fs::create_directories(variant_dir);
      save_bundle(variant_dir / "bundle.pchx", bundle);
      write_json(variant_dir / "metrics.json",
                 {{"format", "patchx.metrics"},
                  {"version", 1},
                  {"shallow", cell.variant},
                  {"configs", cell.configs},
                  {"flags", flags},
                  {"test", evaluation_json(eval)},
                  {"timing", {{"train_seconds", cell.train_seconds}, {"test_seconds", cell.test_seconds}}}});
      cell.run_dir = (cell_rel / cell.variant).generic_string();
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    ctx.log << "  " << name << " [" << cell.configs << ", " << flags << "] CNN+" << cell.variant
            << ": " << (cell.error.empty() ? fmt_acc(cell.accuracy) : "FAILED " + cell.error) << "\n";
    ctx.report.cells.push_back(cell);
  }
}

void write_bench_tables(const BenchReport& report, std::ostream& log) {
  const auto& dir = report.dir;
  {
    std::ofstream out(dir / "bench_cells.csv");
    out << "name,configs,flags,variant,accuracy,train_seconds,test_seconds,run_dir,error\n";
    for (const auto& c : report.cells) {
      out << c.name << ",\"" << c.configs << "\"," << c.flags << ',' << c.variant << ','
          << (c.accuracy ? std::to_string(*c.accuracy) : "") << ',' << c.train_seconds << ','
          << c.test_seconds << ',' << c.run_dir << ",\"" << c.error << "\"\n";
    }
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"name", c.name},
                     {"configs", c.configs},
                     {"flags", c.flags},
                     {"variant", c.variant},
                     {"accuracy", c.accuracy ? nlohmann::json(*c.accuracy) : nlohmann::json(nullptr)},
                     {"train_seconds", c.train_seconds},
                     {"test_seconds", c.test_seconds},
                     {"run_dir", c.run_dir},
                     {"error", c.error}});
  }
  write_json(dir / "bench.json", {{"format", "patchx.bench"}, {"version", 1}, {"cells", std::move(cells)}});

  // Stride/length grid: one row per config set, one column per variant.
  std::ofstream grid(dir / "table_configs.csv");
  grid << "configs,svm,forest,trivial\n";
  log << "\nconfigs                 CNN+SVM   CNN+RF    CNN+Trivial\n";
  std::vector<std::string> rows;
  for (const auto& c : report.cells) {
    if (c.name.rfind("grid-", 0) == 0 && std::find(rows.begin(), rows.end(), c.name) == rows.end()) {
      rows.push_back(c.name);
    }
  }
  for (const auto& row : rows) {
    std::string configs;
    std::map<std::string, std::string> acc;
    for (const auto& c : report.cells) {
      if (c.name == row) {
        configs = c.configs;
        acc[c.variant] = fmt_acc(c.accuracy);
      }
    }
    grid << '"' << configs << "\"," << acc["svm"] << ',' << acc["forest"] << ',' << acc["trivial"] << '\n';
    log << std::left << std::setw(24) << configs << std::setw(10) << acc["svm"] << std::setw(10)
        << acc["forest"] << acc["trivial"] << "\n";
  }

  std::ofstream timing(dir / "table_timing.csv");
  timing << "name,variant,train_seconds,test_seconds\n";
  log << "\nvariant timings (T = training wall-clock, I = test inference wall-clock)\n";
  for (const auto& c : report.cells) {
    if (!c.error.empty()) continue;
    timing << c.name << ',' << c.variant << ',' << c.train_seconds << ',' << c.test_seconds << '\n';
    log << "  " << std::left << std::setw(28) << (c.name + "/" + c.variant) << " T=" << std::fixed
        << std::setprecision(2) << c.train_seconds << "s I=" << c.test_seconds << "s\n"
        << std::defaultfloat;
  }

  bool any_flag = false;
  for (const auto& c : report.cells) any_flag |= c.name.rfind("flags-", 0) == 0;
  if (any_flag) {
    std::ofstream flags(dir / "table_flags.csv");
    flags << "flags,accuracy,error\n";
    log << "\ntransformation flags (CNN+SVM)\n";
    for (const auto& c : report.cells) {
      if (c.name.rfind("flags-", 0) != 0) continue;
      flags << c.flags << ',' << (c.accuracy ? std::to_string(*c.accuracy) : "") << ",\"" << c.error << "\"\n";
      log << "  " << std::left << std::setw(22) << c.flags << (c.error.empty() ? fmt_acc(c.accuracy) : "rejected: " + c.error)
          << "\n";
    }
  }
}

}  // namespace

BenchReport cmd_bench(const RunConfig& config, const BenchOptions& options, std::ostream& log) {
  config.validate();
  if (options.grid.empty() && !options.blackbox && !options.flag_ablation) {
    throw ConfigError("bench grid is empty");
  }
  BenchReport report;
  report.dir = make_run_dir(config.output, "bench");
  write_text(report.dir / "resolved.ini", config.to_ini());
  const auto data = stage("data", [&] { return load_data(config.data); });
  log << "bench directory " << report.dir.string() << "\n";

  CellContext ctx{config, data, report.dir, log, report};
  const std::vector<ShallowKind> variants = {ShallowKind::svm, ShallowKind::forest, ShallowKind::trivial};
  for (std::size_t i = 0; i < options.grid.size(); ++i) {
    run_patch_cell(ctx, "grid-" + std::to_string(i) + "-" + cell_slug(options.grid[i]), options.grid[i],
                   variants);
  }

  if (options.flag_ablation) {
    int row = 0;
    for (bool attach : {false, true}) {
      for (bool notemp : {false, true}) {
        auto configs = config.pipeline.configs;
        for (auto& c : configs) {
          c.attach = attach;
          c.notemp = notemp;
        }
        run_patch_cell(ctx, "flags-" + std::to_string(row++), configs, {ShallowKind::svm});
      }
    }
    BenchCell rejected;
    rejected.name = "flags-rejected";
    rejected.configs = format_patch_list(config.pipeline.configs);
    rejected.flags = "no-zero";
    rejected.variant = "svm";
    try {
      PatchConfig c = config.pipeline.configs.front();
      c.zero = false;
      c.validate(data.train.length());
      rejected.error = "unexpectedly accepted";
    } catch (const ConfigError& e) {
      rejected.error = e.what();
    }
    report.cells.push_back(rejected);
  }

  if (options.blackbox) {
    BenchCell cell;
    cell.name = "blackbox";
    cell.configs = "whole-sample";
    cell.flags = "";
    cell.variant = "blackbox";
    try {
      auto start = Clock::now();
      TrainLog train_log;
      const auto model = train_blackbox(config.pipeline, data.train, data.val, &train_log);
      cell.train_seconds = seconds_since(start);
      start = Clock::now();
      std::vector<int> truth, predicted;
      for (const auto& s : data.test.samples) {
        truth.push_back(s.label);
        predicted.push_back(model.predict(s));
      }
      cell.test_seconds = seconds_since(start);
      const auto eval = evaluate_predictions(truth, predicted, data.train.class_count);
      cell.accuracy = eval.accuracy;
      const auto dir = report.dir / "blackbox";
      fs::create_directories(dir);
      std::ofstream log_file(dir / "train_log.csv");
      write_train_log(log_file, train_log);
      write_json(dir / "metrics.json",
                 {{"format", "patchx.metrics"},
                  {"version", 1},
                  {"variant", "blackbox"},
                  {"test", evaluation_json(eval)},
                  {"timing", {{"train_seconds", cell.train_seconds}, {"test_seconds", cell.test_seconds}}}});
      cell.run_dir = "blackbox";
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    log << "  blackbox CNN: " << (cell.error.empty() ? fmt_acc(cell.accuracy) : "FAILED " + cell.error) << "\n";
    report.cells.push_back(cell);
  }

  write_bench_tables(report, log);
  write_manifest(report.dir, "bench", config, {{"cells", report.cells.size()}});
  return report;
}

// --- explanation commands ----------------------------------------------------------

fs::path cmd_explain(const RunConfig& config, const ExplainOptions& options, std::ostream& log) {
  const auto bundle = stage("bundle", [&] { return load_bundle(options.bundle); });
  const auto data = stage("data", [&] { return load_data(config.data); });
  const Dataset& split = data.split(options.split);

  std::vector<const TimeSeriesSample*> chosen;
  if (!options.sample_ids.empty()) {
    for (auto id : options.sample_ids) chosen.push_back(&find_sample(split, id));
  } else {
    const auto n = std::min<std::size_t>(split.size(), static_cast<std::size_t>(std::max(0, options.limit)));
    for (std::size_t i = 0; i < n; ++i) chosen.push_back(&split.samples[i]);
  }

  const auto dir = make_run_dir(config.output, "explain");
  write_text(dir / "resolved.ini", config.to_ini());
  stage("explain", [&] {
    std::ofstream records(dir / "records.csv");
    std::ofstream overlay(dir / "overlay.csv");
    nlohmann::json explanations = nlohmann::json::array();
    bool header = true;
    for (const auto* sample : chosen) {
      const auto e = explain_sample(bundle, *sample, options.thresholds);
      std::ostringstream rec, ov;
      write_records(rec, e.records, e.class_count);
      write_overlay(ov, e.records, e.class_count);
      auto body_of = [&](const std::string& text) {
        return header ? text : text.substr(text.find('\n') + 1);
      };
      records << body_of(rec.str());
      overlay << body_of(ov.str());
      header = false;
      explanations.push_back(to_json(e));
      log << "sample " << e.sample_id << ": label " << e.label << ", predicted " << e.predicted << "\n";
    }
    write_json(dir / "explanations.json", report_document("explanations", std::move(explanations)));
    const auto mislabels = mislabel_report(bundle, split, options.thresholds);
    write_json(dir / "mislabels.json", report_document("mislabels", mislabel_json(mislabels)));
    log << mislabels.size() << " of " << split.size() << " " << to_string(options.split)
        << " samples misclassified\n";
    return 0;
  });
  write_manifest(dir, "explain", config, {{"bundle", fs::absolute(options.bundle).string()}});
  return dir;
}

fs::path cmd_probe(const RunConfig& config, const ProbeOptions& options, std::ostream& log) {
  const auto bundle = stage("bundle", [&] { return load_bundle(options.bundle); });
  const auto data = stage("data", [&] { return load_data(config.data); });
  const Dataset& split = data.split(options.split);
  const auto& marks = data.peaks(options.split);
  if (split.empty()) throw ValidationError("probe split is empty");

  std::size_t index = 0;
  if (options.sample_id >= 0) {
    const auto& s = find_sample(split, options.sample_id);
    index = static_cast<std::size_t>(&s - split.samples.data());
  } else {
    for (std::size_t i = 0; i < marks.size(); ++i) {
      if (marks[i]) {
        index = i;
        break;
      }
    }
  }
  const auto& sample = split.samples[index];
  int channel = options.channel;
  int position = options.position;
  if (channel < 0 || position < 0) {
    if (index < marks.size() && marks[index]) {
      channel = channel < 0 ? marks[index]->channel : channel;
      position = position < 0 ? marks[index]->position : position;
    } else {
      Eigen::Index r = 0, c = 0;
      sample.values.cwiseAbs().maxCoeff(&r, &c);
      channel = channel < 0 ? static_cast<int>(r) : channel;
      position = position < 0 ? static_cast<int>(c) : position;
    }
  }

  const auto probe = stage("probe", [&] {
    return boundary_probe(bundle, sample, channel, position, options.factors,
                          config.data.anomaly.sigma_multiplier, options.target_class);
  });
  const auto dir = make_run_dir(config.output, "probe");
  write_text(dir / "resolved.ini", config.to_ini());
  write_json(dir / "probe.json", report_document("boundary-probe", to_json(probe)));
  {
    std::ofstream out(dir / "probe.csv");
    out << "factor,peak_value,ground_truth,predicted,covering_confidence\n";
    out << std::setprecision(17);
    for (const auto& s : probe.steps) {
      out << s.factor << ',' << s.peak_value << ',' << s.ground_truth << ',' << s.predicted << ','
          << s.covering_confidence << '\n';
    }
  }
  write_manifest(dir, "probe", config, {{"bundle", fs::absolute(options.bundle).string()}});

  const auto gt = probe.ground_truth_flip();
  const auto pred = probe.prediction_flip();
  log << "sample " << sample.id << " channel " << channel << " position " << position << "\n";
  log << "ground-truth flip factor: " << (gt ? std::to_string(*gt) : "none") << "\n";
  log << "prediction flip factor:   " << (pred ? std::to_string(*pred) : "none") << "\n";
  log << "covering confidence monotone: " << (probe.covering_confidence_monotone() ? "yes" : "no") << "\n";
  return dir;
}

fs::path cmd_histogram(const RunConfig& config, const HistogramOptions& options, std::ostream& log) {
  const auto bundle = stage("bundle", [&] { return load_bundle(options.bundle); });
  const auto data = stage("data", [&] { return load_data(config.data); });
  const auto report = stage("histogram", [&] {
    return confidence_histogram(bundle, data.split(options.split), options.bin_width, true);
  });
  const auto dir = make_run_dir(config.output, "histogram");
  write_text(dir / "resolved.ini", config.to_ini());
  {
    std::ofstream out(dir / "histogram.csv");
    write_histogram(out, report);
  }
  write_json(dir / "histogram.json", report_document("confidence-histogram", to_json(report)));
  write_manifest(dir, "histogram", config, {{"bundle", fs::absolute(options.bundle).string()}});
  write_histogram(log, report);
  return dir;
}

// --- gradient check --------------------------------------------------------------

GradcheckSummary cmd_gradcheck(const GradcheckOptions& options, std::ostream& log) {
  GradcheckSummary summary;
  auto record = [&](int seed, const std::string& what, const GradientCheckReport& r) {
    summary.passed = summary.passed && r.passed;
    summary.max_relative_error = std::max(summary.max_relative_error, r.max_relative_error);
    std::ostringstream line;
    line << "seed " << seed << " " << what << ": " << r.summary();
    summary.lines.push_back(line.str());
    log << line.str() << "\n";
  };

  for (int seed = 0; seed < options.seeds; ++seed) {
    std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(seed), 17));
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    auto random_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
      return m;
    };
    auto randomize = [&](nn::Layer& layer) {
      for (auto* t : nn::layer_parameters(layer)) {
        for (auto& v : t->values()) v = uni(rng);
      }
    };
    const int b = options.batch;
    const int len = options.length;
    const auto sub = static_cast<std::uint64_t>(seed);

    nn::Layer conv = nn::Conv1d(options.channels, 4, 3);
    randomize(conv);
    record(seed, "conv1d", gradient_check_layer(conv, random_matrix(options.channels, b * len), b, sub, options.check));

    // Inputs kept away from the ReLU kink, where the derivative is undefined.
    Matrix relu_in = random_matrix(options.channels, b * len);
    for (Eigen::Index i = 0; i < relu_in.size(); ++i) {
      double& v = relu_in.data()[i];
      v = (v < 0 ? -1.0 : 1.0) * (0.05 + std::abs(v));
    }
    nn::Layer relu = nn::Relu{};
    record(seed, "relu", gradient_check_layer(relu, relu_in, b, sub, options.check));

    nn::Layer pool = nn::GlobalAvgPool{};
    record(seed, "global_avg_pool", gradient_check_layer(pool, random_matrix(options.channels, b * len), b, sub, options.check));

    nn::Layer dense = nn::Dense(5, options.classes);
    randomize(dense);
    record(seed, "dense", gradient_check_layer(dense, random_matrix(5, b), b, sub, options.check));

    NetworkSpec spec;
    spec.input_channels = options.channels;
    spec.input_length = len;
    spec.class_count = options.classes;
    spec.blocks = options.blocks;
    spec.seed = sub;
    Network net(spec);
    if (net.parameter_count() > 500) throw ValidationError("gradcheck network exceeds 500 parameters");
    for (auto* t : net.parameters()) {
      for (auto& v : t->values()) v += 0.5 * uni(rng);
    }
    std::vector<Matrix> inputs;
    Examples batch;
    for (int i = 0; i < b; ++i) inputs.push_back(random_matrix(options.channels, len));
    std::uniform_int_distribution<int> label(0, options.classes - 1);
    for (int i = 0; i < b; ++i) {
      batch.inputs.push_back(&inputs[static_cast<std::size_t>(i)]);
      batch.labels.push_back(label(rng));
    }
    record(seed, "network(" + std::to_string(net.parameter_count()) + " params)",
           gradient_check(net, batch, options.check));
  }
  log << (summary.passed ? "gradient check passed" : "gradient check FAILED") << " (max relative error "
      << summary.max_relative_error << ")\n";
  return summary;
}

std::vector<double> parse_factors(std::string_view text) {
  auto to_double = [](std::string_view s) {
    const std::string str(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(str, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != str.size()) throw ConfigError("bad factor '" + str + "'");
    return v;
  };
  const auto c1 = text.find(':');
  if (c1 != std::string_view::npos) {
    const auto c2 = text.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw ConfigError("factor range must be first:last:steps");
    const double first = to_double(text.substr(0, c1));
    const double last = to_double(text.substr(c1 + 1, c2 - c1 - 1));
    const double steps = to_double(text.substr(c2 + 1));
    if (steps < 1 || steps != std::floor(steps)) throw ConfigError("factor steps must be a positive integer");
    return linear_factors(first, last, static_cast<int>(steps));
  }
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto piece = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    if (!piece.empty()) out.push_back(to_double(piece));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("no probe factors given");
  return out;
}

}  // namespace patchx
