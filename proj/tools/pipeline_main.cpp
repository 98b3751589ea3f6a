#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <sstream>

#include "metaobj/pipeline.hpp"

using namespace metaobj;

namespace {

struct Common {
  std::string config;
  std::string run_dir = "run";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file (key = value lines); defaults apply when omitted");
  cmd->add_option("--run-dir", c.run_dir, "run directory for caches and outputs")->capture_default_str();
  cmd->add_option("--set", c.overrides, "override a config field, key=value (repeatable)");
}

PipelineConfig make_config(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig() : PipelineConfig::load(c.config);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  cfg.validate();
  return cfg;
}

void print_outcomes(const std::vector<StageOutcome>& outcomes) {
  for (const auto& o : outcomes) {
    std::cout << std::left << std::setw(11) << stage_name(o.stage);
    if (o.cached)
      std::cout << "cached\n";
    else
      std::cout << "computed " << std::fixed << std::setprecision(2) << o.seconds << " s  " << o.detail << '\n';
  }
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad sweep value '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meta-object scene recognition pipeline"};
  app.require_subcommand(1);

  Common run_opts;
  std::string stage = "eval";
  bool only = false;
  auto* run = app.add_subcommand("run", "run the pipeline up to a stage, reusing valid caches");
  run->add_option("--stage", stage, "ingest|cascade|screen|cluster|train-meta|pool|train|eval")->capture_default_str();
  run->add_flag("--only", only, "run just this stage; upstream caches must already be valid");
  add_common(run, run_opts);

  Common ablate_opts;
  std::string ablation;
  auto* ablate = app.add_subcommand("ablate", "compare the full pipeline with one component bypassed");
  ablate->add_option("--name", ablation, "no-screen|no-cascade|no-knn|no-cluster|rim-direct|global-only")->required();
  add_common(ablate, ablate_opts);

  Common sweep_opts;
  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "accuracy as a function of one setting");
  sweep->add_option("--axis", axis, "screening_ratio|num_clusters")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  add_common(sweep, sweep_opts);

  std::string spec_path, out_dir;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec_path, "synthetic spec file (key = value lines)")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  Common show_opts;
  auto* show = app.add_subcommand("config", "print the effective configuration");
  add_common(show, show_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      Pipeline p(make_config(run_opts), run_opts.run_dir);
      const Stage target = parse_stage(stage);
      if (only)
        print_outcomes({p.run_stage(target)});
      else
        print_outcomes(p.run_through(target));
      if (target == Stage::eval) std::cout << p.eval_report().summary();
    } else if (*ablate) {
      const AblationResult r = run_ablation(ablation, make_config(ablate_opts), ablate_opts.run_dir);
      std::cout << std::fixed << std::setprecision(4) << "full        " << r.full.overall_accuracy << "  (dim "
                << r.full_dim << ")\n"
                << std::left << std::setw(12) << ablation << r.ablated.overall_accuracy << "  (dim " << r.ablated_dim
                << ")\n";
    } else if (*sweep) {
      const auto points = run_sweep(axis, parse_values(values), make_config(sweep_opts), sweep_opts.run_dir);
      for (const auto& pt : points) std::cout << pt.value << ',' << pt.accuracy << '\n';
    } else if (*synth) {
      const SynthResult r = generate_synthetic(load_synth_spec(spec_path));
      const std::filesystem::path dir(out_dir);
      std::filesystem::create_directories(dir);
      save_dataset(r.dataset, dir / "dataset.manifest");
      r.truth.save(dir / "ground_truth.txt");
      std::cout << "wrote " << (dir / "dataset.manifest").string() << ": " << r.dataset.images.size() << " images, "
                << r.dataset.patches.size() << " patches\n";
    } else if (*show) {
      std::cout << make_config(show_opts).canonical();
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
