#include <iostream>
#include <map>
#include <memory>

#include <CLI11.hpp>

#include "patchx/app.hpp"

namespace {

using namespace patchx;

struct ConfigArgs {
  std::string config_file;
  std::string run_dir;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> key_flags;
  std::optional<std::uint64_t> seed;
  std::string output;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool with_run_dir) {
  cmd->add_option("-c,--config", args.config_file, "INI config with [data] [patching] [network] [train] [shallow]");
  if (with_run_dir) {
    cmd->add_option("--run", args.run_dir, "run directory: uses its bundle.pchx and resolved.ini");
  }
  cmd->add_option("--set", args.assignments, "override a config key: section.key=value")->take_all();
  cmd->add_option("--seed", args.seed, "run seed (overrides the config file and PATCHX_SEED)");
  cmd->add_option("-o,--output", args.output, "parent directory for the run directory");
  auto* group = cmd->add_option_group("config keys", "every config key as --section.key VALUE");
  for (const auto& info : known_settings()) {
    if (info.key == "seed" || info.key == "output") continue;
    const std::string key(info.key);
    group->add_option_function<std::string>(
        "--" + key, [&args, key](const std::string& v) { args.key_flags[key] = v; },
        std::string(info.help) + (info.default_value.empty() ? "" : " [" + std::string(info.default_value) + "]"));
  }
}

RunConfig build_config(const ConfigArgs& args) {
  Settings settings;
  std::string file = args.config_file;
  if (file.empty() && !args.run_dir.empty()) file = (std::filesystem::path(args.run_dir) / "resolved.ini").string();
  if (!file.empty()) settings = read_ini_settings(file);
  for (const auto& [k, v] : args.key_flags) settings[k] = v;
  for (const auto& a : args.assignments) apply_assignment(settings, a);
  if (!args.output.empty()) settings["output"] = args.output;

  SeedOrigin origin = SeedOrigin::config;
  if (args.seed) {
    settings["seed"] = std::to_string(*args.seed);
    origin = SeedOrigin::flag;
  } else if (!args.assignments.empty() && settings.contains("seed")) {
    for (const auto& a : args.assignments) {
      if (a.rfind("seed=", 0) == 0) origin = SeedOrigin::flag;
    }
  }
  return resolve_config(settings, seed_from_environment(), origin);
}

std::filesystem::path bundle_path(const std::string& bundle, const ConfigArgs& args) {
  if (!bundle.empty()) return bundle;
  if (!args.run_dir.empty()) return std::filesystem::path(args.run_dir) / "bundle.pchx";
  throw ConfigError("pass --bundle FILE or --run DIR");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("split must be train, val or test");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PatchX: patch-based interpretable time-series classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "patchx 0.1.0");

  ConfigArgs args;

  auto* generate = app.add_subcommand("generate", "write the synthetic (or loaded) splits as dataset files");
  add_config_options(generate, args, false);

  auto* run = app.add_subcommand("run", "train and evaluate the full pipeline, persisting the bundle");
  add_config_options(run, args, false);

  auto* bench = app.add_subcommand("bench", "variant, config-grid, timing and flag-ablation benchmark");
  add_config_options(bench, args, false);
  std::string grid_text;
  bool flag_ablation = false;
  bool no_blackbox = false;
  bench->add_option("--grid", grid_text, "config sets separated by '|', e.g. \"5:10|10:20|5:10,10:20\"");
  bench->add_flag("--flags", flag_ablation, "add the zero/attach/notemp ablation rows");
  bench->add_flag("--no-blackbox", no_blackbox, "skip the whole-sample network baseline");

  std::string bundle;
  std::string split = "test";

  auto* explain = app.add_subcommand("explain", "per-patch explanations, overlays and mislabel report");
  add_config_options(explain, args, true);
  ExplainOptions explain_opts;
  explain->add_option("--bundle", bundle, "model bundle (.pchx)");
  explain->add_option("--split", split, "train, val or test")->capture_default_str();
  explain->add_option("--samples", explain_opts.sample_ids, "sample ids to explain")->delimiter(',');
  explain->add_option("--limit", explain_opts.limit, "explain the first N samples")->capture_default_str();
  explain->add_option("--specific", explain_opts.thresholds.specific, "class-specific threshold")->capture_default_str();
  explain->add_option("--unrelated-margin", explain_opts.thresholds.unrelated_margin, "unrelated margin above 1/C")
      ->capture_default_str();

  auto* probe = app.add_subcommand("probe", "class-boundary probe by scaling one point");
  add_config_options(probe, args, true);
  ProbeOptions probe_opts;
  std::string factors = "0:2:21";
  probe->add_option("--bundle", bundle, "model bundle (.pchx)");
  probe->add_option("--split", split, "train, val or test")->capture_default_str();
  probe->add_option("--sample", probe_opts.sample_id, "sample id (default: first with a known peak)");
  probe->add_option("--channel", probe_opts.channel, "channel of the probed point");
  probe->add_option("--position", probe_opts.position, "time-step of the probed point");
  probe->add_option("--factors", factors, "first:last:steps or a comma list")->capture_default_str();
  probe->add_option("--target", probe_opts.target_class, "class whose confidence is tracked")->capture_default_str();

  auto* histogram = app.add_subcommand("histogram", "patch confidence histogram");
  add_config_options(histogram, args, true);
  HistogramOptions hist_opts;
  histogram->add_option("--bundle", bundle, "model bundle (.pchx)");
  histogram->add_option("--split", split, "train, val or test")->capture_default_str();
  histogram->add_option("--bin-width", hist_opts.bin_width, "bin width")->capture_default_str();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  GradcheckOptions grad_opts;
  gradcheck->add_option("--seeds", grad_opts.seeds, "number of random seeds")->capture_default_str();
  gradcheck->add_option("--tolerance", grad_opts.check.tolerance, "relative error tolerance")->capture_default_str();
  gradcheck->add_option("--step", grad_opts.check.step, "finite-difference step scale")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gradcheck) {
      return cmd_gradcheck(grad_opts, std::cout).passed ? 0 : 1;
    }
    const RunConfig config = build_config(args);
    if (*generate) {
      cmd_generate(config, std::cout);
    } else if (*run) {
      cmd_run(config, std::cout);
    } else if (*bench) {
      BenchOptions opts;
      PatchConfig flags = config.pipeline.configs.front();
      if (grid_text.empty()) {
        opts.grid = default_bench_grid(flags);
      } else {
        std::size_t pos = 0;
        while (pos <= grid_text.size()) {
          const auto bar = grid_text.find('|', pos);
          const auto piece = grid_text.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos);
          if (!piece.empty()) opts.grid.push_back(parse_patch_list(piece, flags));
          if (bar == std::string::npos) break;
          pos = bar + 1;
        }
      }
      opts.flag_ablation = flag_ablation;
      opts.blackbox = !no_blackbox;
      cmd_bench(config, opts, std::cout);
    } else if (*explain) {
      explain_opts.bundle = bundle_path(bundle, args);
      explain_opts.split = parse_split(split);
      std::cout << "wrote " << cmd_explain(config, explain_opts, std::cout).string() << "\n";
    } else if (*probe) {
      probe_opts.bundle = bundle_path(bundle, args);
      probe_opts.split = parse_split(split);
      probe_opts.factors = parse_factors(factors);
      std::cout << "wrote " << cmd_probe(config, probe_opts, std::cout).string() << "\n";
    } else if (*histogram) {
      hist_opts.bundle = bundle_path(bundle, args);
      hist_opts.split = parse_split(split);
      std::cout << "wrote " << cmd_histogram(config, hist_opts, std::cout).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
