// hrf_lab: scenario-driven front end for homogeneous Ricci flow experiments.

#include "hrf/hrf.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace hrf;

struct Options {
  std::string scenario;
  std::string out_dir;
  std::string preset_dir;
  int order = -1;
  std::string show;
};

fs::path preset_dir(const Options& o) { return o.preset_dir.empty() ? default_preset_dir() : fs::path(o.preset_dir); }

int config_failure(const std::string& what) {
  json j = {{"valid", false}, {"errors", {what}}};
  std::cerr << j.dump(2) << "\n";
  return kExitValidation;
}

Scenario load(const Options& o) { return load_scenario(resolve_scenario(o.scenario, preset_dir(o))); }

fs::path output_dir(const Options& o, const Scenario& sc) {
  return o.out_dir.empty() ? fs::path(sc.outputs.directory) : fs::path(o.out_dir);
}

void print_status(const PipelineResult& r, const fs::path& dir) {
  std::cout << "status " << r.report.value("status", std::string("unknown")) << ", exit code " << r.exit_code
            << ", reports in " << dir.string() << "\n";
  if (r.report.contains("error")) std::cerr << r.report["error"].get<std::string>() << "\n";
}

int cmd_validate(const Options& o) {
  const Scenario sc = load(o);
  const auto v = validate_scenario(sc);
  if (!v.valid) {
    std::cerr << v.to_json().dump(2) << "\n";
    return kExitValidation;
  }
  std::cout << v.to_json().dump(2) << "\n";
  return kExitCompleted;
}

int cmd_stage(const Options& o, Stage stage) {
  Scenario sc = load(o);
  if (stage == Stage::blowdown || stage == Stage::soliton) {
    if (!sc.blowdown) return config_failure("scenario has no blowdown block");
  }
  if (stage == Stage::model) {
    if (!sc.model) return config_failure("scenario has no model block");
    if (o.order >= 0) {
      if (o.order > 2) return config_failure("--order must be 0, 1 or 2");
      sc.model->order = o.order;
    }
  }
  const fs::path dir = output_dir(o, sc);
  const auto r = run_pipeline(sc, stage, dir);
  if (r.exit_code == kExitValidation) {
    std::cerr << r.report["validation"].dump(2) << "\n";
    return r.exit_code;
  }
  if (stage == Stage::model && r.exit_code != kExitNumerical) {
    if (r.comparisons.empty()) {
      std::cerr << "no reference model for this limit\n";
      return kExitNumerical;
    }
    std::printf("%.17g\n", r.comparisons.back().value);
    return r.exit_code;
  }
  if (stage == Stage::soliton && r.certificate) {
    std::cout << certificate_json(*r.certificate).dump(2) << "\n";
    return r.exit_code;
  }
  print_status(r, dir);
  return r.exit_code;
}

int cmd_presets(const Options& o) {
  const fs::path dir = preset_dir(o);
  if (!o.show.empty()) {
    std::cout << read_json_file(resolve_scenario(o.show, dir)).dump(2) << "\n";
    return kExitCompleted;
  }
  for (const auto& n : list_presets(dir)) std::cout << n << "\n";
  return kExitCompleted;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Homogeneous Ricci flow lab: ancient solutions, blow-down limits, geometric models and soliton checks.\n"
               "Scenarios are JSON files or preset names. HRF_LAB_THREADS caps worker threads."};
  app.require_subcommand(1);
  Options o;
  app.add_option("--preset-dir", o.preset_dir, "Directory holding preset scenarios");

  auto add_scenario = [&](CLI::App* sub) {
    sub->add_option("scenario", o.scenario, "Scenario file or preset name")->required();
  };
  auto add_out = [&](CLI::App* sub) {
    sub->add_option("-o,--out", o.out_dir, "Report directory (default: outputs.directory of the scenario)");
  };

  auto* validate = app.add_subcommand("validate", "Check the algebra, isotropy and initial metric of a scenario");
  add_scenario(validate);
  auto* flow = app.add_subcommand("flow", "Integrate the flow and write the trajectory CSV");
  add_scenario(flow);
  add_out(flow);
  auto* blowdown = app.add_subcommand("blowdown", "Flow, blow down, detect the collapsing torus and fit the limit");
  add_scenario(blowdown);
  add_out(blowdown);
  auto* model = app.add_subcommand("model-compare",
                                   "Build geometric models of the blow-downs, compare them with the limit model and "
                                   "print the distance for the largest tau");
  add_scenario(model);
  add_out(model);
  model->add_option("--order", o.order, "Derivative order of the comparison (0, 1 or 2)");
  auto* soliton = app.add_subcommand("soliton-verify", "Run the limit and print the soliton certificate");
  add_scenario(soliton);
  add_out(soliton);
  auto* run = app.add_subcommand("run", "Full pipeline: flow, blow-down, limit, certificate and models");
  add_scenario(run);
  add_out(run);
  auto* presets = app.add_subcommand("presets", "List preset scenarios");
  presets->add_option("--show", o.show, "Print one preset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitCompleted : kExitValidation;
  }

  try {
    if (validate->parsed()) return cmd_validate(o);
    if (flow->parsed()) return cmd_stage(o, Stage::flow);
    if (blowdown->parsed()) return cmd_stage(o, Stage::blowdown);
    if (model->parsed()) return cmd_stage(o, Stage::model);
    if (soliton->parsed()) return cmd_stage(o, Stage::soliton);
    if (run->parsed()) return cmd_stage(o, Stage::full);
    if (presets->parsed()) return cmd_presets(o);
  } catch (const ConfigError& e) {
    return config_failure(e.what());
  } catch (const ShapeError& e) {
    return config_failure(e.what());
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitValidation;
}
