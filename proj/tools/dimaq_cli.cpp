// dimaq: batch pipeline for the PM2.5 calibration model.
// Subcommands: simulate, fit, predict, cv, report, validate.
// Exit codes: 0 success, 1 validation/config error, 2 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dimaq/evaluation.hpp"
#include "dimaq/prediction.hpp"
#include "dimaq/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dimaq;

namespace {

constexpr const char* kVersion = "0.1.0";

// JSON config files: every flag can be set from a top-level key matching the
// long option name; command-line flags take precedence.
class ConfigJson : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      if (opt->count() == 0 && !default_also) continue;
      auto results = opt->count() ? opt->results()
                                  : std::vector<std::string>{opt->get_default_str()};
      if (results.size() == 1)
        j[opt->get_lnames()[0]] = results[0];
      else
        j[opt->get_lnames()[0]] = results;
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::parse_error& e) {
      throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::FileError("config root must be a JSON object");
    std::vector<CLI::ConfigItem> out;
    collect(j, {}, out);
    return out;
  }

 private:
  // nested objects address subcommands: {"simulate": {"seed": 7}}
  static void collect(const json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto sub = parents;
        sub.push_back(it.key());
        collect(*it, sub, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array())
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(*it));
      out.push_back(std::move(item));
    }
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
}

std::string hash_hex(const std::string& content) {
  std::ostringstream ss;
  ss << "fnv1a:" << std::hex << fnv1a(content);
  return ss.str();
}

// Every run records its effective configuration and input content hashes so a
// rerun from the manifest reproduces the outputs byte for byte.
void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs) {
  json m;
  m["tool"] = "dimaq";
  m["version"] = kVersion;
  m["command"] = command;
  m["config"] = config;
  json h = json::object();
  for (const auto& p : inputs) h[p] = hash_hex(read_file(p));
  m["inputs"] = h;
  write_file(out_dir / "manifest.json", m.dump(2) + "\n");
}

struct Inputs {
  std::string hierarchy, adjacency, monitors, cells;
};

void add_input_options(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--hierarchy", in.hierarchy, "hierarchy.csv")->required();
  cmd->add_option("--adjacency", in.adjacency, "adjacency.csv")->required();
  cmd->add_option("--monitors", in.monitors, "monitors.csv")->required();
  cmd->add_option("--cells", in.cells, "cells.csv")->required();
}

struct LoadedWorld {
  GeoHierarchy hierarchy;
  std::vector<MonitorRecord> monitors;  // already PM10-converted
  std::vector<GridCellRecord> cells;
};

LoadedWorld load_world(const Inputs& in, std::vector<std::string>* log = nullptr) {
  LoadedWorld w;
  w.hierarchy = load_hierarchy(in.hierarchy);
  w.hierarchy.adjacency = load_adjacency(in.adjacency, w.hierarchy);
  auto raw = load_monitors(in.monitors, w.hierarchy);
  w.cells = load_cells(in.cells, w.hierarchy);
  w.monitors = convert_pm10(raw, w.hierarchy, w.cells, log);
  return w;
}

struct FitFlags {
  std::string variant = "ii";
  bool no_icar = false;
  double grad_tol = 1e-5;
  int max_iter = 200;
  double z_step = 0.75;
  double log_drop = 2.5;
  int max_steps = 5;
};

void add_fit_options(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--variant", f.variant, "model variant (ii,iii,iv,v)");
  cmd->add_flag("--no-icar", f.no_icar, "iid country effect for the population slope");
  cmd->add_option("--grad-tol", f.grad_tol, "mode search gradient tolerance");
  cmd->add_option("--max-iter", f.max_iter, "mode search iteration cap");
  cmd->add_option("--z-step", f.z_step, "grid step in standardized coordinates");
  cmd->add_option("--log-drop", f.log_drop, "grid log-density drop threshold");
  cmd->add_option("--max-steps", f.max_steps, "grid steps per axis");
}

FitOptions to_fit_options(const FitFlags& f) {
  FitOptions o;
  o.newton.grad_tol = f.grad_tol;
  o.newton.max_iter = f.max_iter;
  o.grid.z_step = f.z_step;
  o.grid.log_drop = f.log_drop;
  o.grid.max_steps_per_axis = f.max_steps;
  return o;
}

json config_echo(const CLI::App* cmd) {
  json j = json::object();
  for (const CLI::Option* opt : cmd->get_options({})) {
    if (opt->get_lnames().empty() || opt->count() == 0) continue;
    auto r = opt->results();
    if (r.size() == 1)
      j[opt->get_lnames()[0]] = r[0];
    else
      j[opt->get_lnames()[0]] = r;
  }
  return j;
}

// Resolves artifact-relative input paths: as given first, then next to the
// artifact file.
std::string resolve_input(const std::string& path, const fs::path& artifact_dir) {
  if (fs::exists(path)) return path;
  fs::path alt = artifact_dir / path;
  if (fs::exists(alt)) return alt.string();
  throw ValidationError("input file not found: " + path);
}

int run_simulate(const CLI::App* cmd, const SimulateConfig& cfg, std::uint64_t seed,
                 const std::string& out_dir) {
  auto world = simulate_world(cfg, seed);
  fs::create_directories(out_dir);
  world.write(out_dir);
  write_manifest(out_dir, "simulate", config_echo(cmd), {});
  std::cout << "simulate: wrote " << world.monitors.size() << " monitors, "
            << world.cells.size() << " cells to " << out_dir << "\n";
  return 0;
}

int run_fit(const CLI::App* cmd, const Inputs& in, const FitFlags& flags,
            const std::string& out_dir) {
  std::vector<std::string> log;
  auto w = load_world(in, &log);
  for (const auto& l : log) std::cerr << "fit: " << l << "\n";
  ModelSpec spec{variant_from_string(flags.variant)};
  spec.icar_population = !flags.no_icar;
  auto fit = fit_model(build_model(spec, w.monitors, w.cells, w.hierarchy),
                       to_fit_options(flags));
  json artifact = fit_artifact_json(fit, in.hierarchy, in.adjacency, in.monitors, in.cells);
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "fit.json", artifact.dump(2) + "\n");
  write_manifest(out_dir, "fit", config_echo(cmd),
                 {in.hierarchy, in.adjacency, in.monitors, in.cells});
  std::cout << "fit: variant " << flags.variant << ", " << fit.grid.points.size()
            << " grid points, mode iterations " << fit.mode.iterations << ", dic "
            << fit.dic_value << "\n";
  return 0;
}

FitResult load_fit(const std::string& fit_path, LoadedWorld* world_out) {
  auto artifact = parse_fit_artifact(json::parse(read_file(fit_path)));
  fs::path dir = fs::path(fit_path).parent_path();
  Inputs in;
  in.hierarchy = resolve_input(artifact.hierarchy_path, dir);
  in.adjacency = resolve_input(artifact.adjacency_path, dir);
  in.monitors = resolve_input(artifact.monitors_path, dir);
  in.cells = resolve_input(artifact.cells_path, dir);
  auto w = load_world(in);
  auto fit = restore_fit(artifact, w.monitors, w.cells, w.hierarchy);
  if (world_out) *world_out = std::move(w);
  return fit;
}

int run_predict(const CLI::App* cmd, const std::string& fit_path,
                const PredictionOptions& opts, double guideline, double bin_width,
                const std::string& out_dir) {
  LoadedWorld w;
  auto fit = load_fit(fit_path, &w);
  auto posteriors = predict_all(fit, w.cells, opts);
  auto exposure = population_exposure(posteriors, w.cells, guideline, bin_width);
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "predictions.csv",
             predictions_csv(posteriors, opts.thresholds));
  write_file(fs::path(out_dir) / "exposure.json", exposure_json(exposure).dump(2) + "\n");
  write_manifest(out_dir, "predict", config_echo(cmd), {fit_path});
  std::cout << "predict: " << posteriors.size() << " cells; population fraction above "
            << guideline << " = " << exposure.fraction_above << "\n";
  return 0;
}

int run_cv(const CLI::App* cmd, const Inputs& in, const std::string& variants,
           const FitFlags& flags, const SplitPlan& plan, const std::string& out_dir) {
  auto w = load_world(in);
  std::vector<ModelSpec> specs;
  std::stringstream ss(variants);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    ModelSpec s{variant_from_string(tok)};
    s.icar_population = !flags.no_icar;
    specs.push_back(s);
  }
  std::vector<std::string> log;
  auto table = cross_validate(specs, w.monitors, w.cells, w.hierarchy, plan,
                              to_fit_options(flags), &log);
  for (const auto& l : log) std::cerr << "cv: " << l << "\n";
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "metrics.csv", table.to_csv());
  write_file(fs::path(out_dir) / "metrics_long.csv", table.to_long_csv());
  write_manifest(out_dir, "cv", config_echo(cmd),
                 {in.hierarchy, in.adjacency, in.monitors, in.cells});
  std::cout << "cv: " << plan.n_splits << " splits, " << specs.size() << " variants, "
            << table.failures.size() << " failed fits\n";
  return 0;
}

int run_report(const CLI::App* cmd, const std::string& fit_path, double guideline,
               const std::string& out_dir) {
  LoadedWorld w;
  auto fit = load_fit(fit_path, &w);
  std::ostringstream rep;
  rep.precision(6);
  rep << "dimaq fit report\n";
  rep << "variant: " << to_string(fit.built.spec.variant) << "\n";
  rep << "grid points: " << fit.grid.points.size() << "\n";
  rep << "dic: " << fit.dic_value << "\n\n";

  rep << "fixed effects (posterior mean +- sd):\n";
  auto names = fit.built.fixed_names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    double mean = 0.0, second = 0.0;
    for (std::size_t h = 0; h < fit.conditionals.size(); ++h) {
      double m = fit.conditionals[h].mean[static_cast<int>(j)];
      double v = fit.conditionals[h].marginal_variance(static_cast<int>(j));
      double wgt = fit.weights[static_cast<int>(h)];
      mean += wgt * m;
      second += wgt * (v + m * m);
    }
    rep << "  " << names[j] << ": " << mean << " +- " << std::sqrt(second - mean * mean)
        << "\n";
  }

  std::ostringstream hm;
  hm << "hyperparameter,log_precision,mass\n";
  hm.precision(10);
  auto hnames = fit.built.hyper_names();
  for (std::size_t s = 0; s < hnames.size(); ++s)
    for (auto [v, mass] : marginal_hyperparameter(fit.grid, static_cast<int>(s)))
      hm << hnames[s] << ',' << v << ',' << mass << '\n';

  auto posteriors = predict_all(fit, w.cells, {});
  auto exposure = population_exposure(posteriors, w.cells, guideline);
  rep << "\npopulation fraction above " << guideline << " ug/m3: "
      << exposure.fraction_above << "\n";

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "report.txt", rep.str());
  write_file(fs::path(out_dir) / "hyper_marginals.csv", hm.str());
  write_manifest(out_dir, "report", config_echo(cmd), {fit_path});
  std::cout << rep.str();
  return 0;
}

int run_validate(const Inputs& in) {
  std::vector<std::string> findings;
  GeoHierarchy h;
  bool have_h = false;
  try {
    h = load_hierarchy(in.hierarchy);
    have_h = true;
    try {
      h.validate();
    } catch (const ValidationError& e) {
      findings.push_back(e.what());
    }
  } catch (const ValidationError& e) {
    findings.push_back(e.what());
  }

  if (have_h) {
    try {
      load_adjacency(in.adjacency, h);
      // directed-style files must list both orientations of every edge
      std::ifstream adj(in.adjacency);
      std::string line;
      std::getline(adj, line);
      std::set<std::pair<long, long>> rows;
      while (std::getline(adj, line)) {
        if (line.empty() || line == "\r") continue;
        auto c = line.find(',');
        rows.insert({std::stol(line.substr(0, c)), std::stol(line.substr(c + 1))});
      }
      bool directed = false;
      for (auto [a, b] : rows) directed |= rows.count({b, a}) > 0 && a != b;
      if (directed)
        for (auto [a, b] : rows)
          if (a != b && !rows.count({b, a})) {
            std::ostringstream os;
            os << in.adjacency << ": asymmetric adjacency row " << a << "," << b
               << " (no " << b << "," << a << ")";
            findings.push_back(os.str());
          }
    } catch (const ValidationError& e) {
      findings.push_back(e.what());
    }
    try {
      load_monitors(in.monitors, h);
    } catch (const ValidationError& e) {
      findings.push_back(e.what());
    }
    try {
      load_cells(in.cells, h);
    } catch (const ValidationError& e) {
      findings.push_back(e.what());
    }
  }

  for (const auto& f : findings) std::cout << "finding: " << f << "\n";
  std::cout << "validate: " << findings.size() << " finding(s)\n";
  return findings.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dimaq: Bayesian hierarchical calibration of global PM2.5"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<ConfigJson>());
  app.set_config("--config", "", "JSON config file (keys nested by subcommand)");

  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--threads", threads, "worker pool size");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic world");
  SimulateConfig sim_cfg;
  std::uint64_t sim_seed = 0;
  std::string sim_out = "world";
  sim->add_option("--seed", sim_seed, "rng seed")->required();
  sim->add_option("--out", sim_out, "output directory");
  sim->add_option("--n-super", sim_cfg.n_super, "super-regions");
  sim->add_option("--regions-per-super", sim_cfg.regions_per_super, "regions per super-region");
  sim->add_option("--countries-per-region", sim_cfg.countries_per_region, "countries per region");
  sim->add_option("--n-cells", sim_cfg.n_cells, "grid cells");
  sim->add_option("--n-monitors", sim_cfg.n_monitors, "monitors");
  sim->add_option("--n-merged-regions", sim_cfg.n_merged_regions, "merged regions");
  sim->add_option("--sigma-sr", sim_cfg.sigma_sr, "super-region deviation sd");
  sim->add_option("--sigma-r", sim_cfg.sigma_r, "region deviation sd");
  sim->add_option("--sigma-c", sim_cfg.sigma_c, "country deviation sd");
  sim->add_option("--sigma-g", sim_cfg.sigma_g, "grid-cell deviation sd");
  sim->add_option("--sigma-eps", sim_cfg.sigma_eps, "observation noise sd");
  sim->add_option("--pm10-fraction", sim_cfg.pm10_fraction, "fraction of PM10 monitors");

  // fit
  auto* fitc = app.add_subcommand("fit", "fit the calibration model");
  Inputs fit_in;
  FitFlags fit_flags;
  std::string fit_out = "fit_out";
  add_input_options(fitc, fit_in);
  add_fit_options(fitc, fit_flags);
  fitc->add_option("--out", fit_out, "output directory");

  // predict
  auto* pred = app.add_subcommand("predict", "predict over the grid from a fit artifact");
  std::string pred_fit = "fit_out/fit.json", pred_out = "predict_out";
  PredictionOptions pred_opts;
  double guideline = 10.0, bin_width = 5.0;
  pred->add_option("--fit", pred_fit, "fit artifact path")->required();
  pred->add_option("--out", pred_out, "output directory");
  pred->add_option("--chunk-size", pred_opts.chunk_size, "cells per chunk");
  pred->add_option("--thresholds", pred_opts.thresholds, "exceedance thresholds (ug/m3)");
  pred->add_flag("--include-noise", pred_opts.include_noise,
                 "add observation noise to predictive variance");
  pred->add_option("--guideline", guideline, "exposure guideline (ug/m3)");
  pred->add_option("--bin-width", bin_width, "exposure histogram bin width");

  // cv
  auto* cv = app.add_subcommand("cv", "stratified cross-validation");
  Inputs cv_in;
  FitFlags cv_flags;
  SplitPlan cv_plan;
  std::string cv_variants = "i,ii", cv_out = "cv_out";
  add_input_options(cv, cv_in);
  add_fit_options(cv, cv_flags);
  cv->add_option("--variants", cv_variants, "comma-separated variants");
  cv->add_option("--splits", cv_plan.n_splits, "number of splits");
  cv->add_option("--train-fraction", cv_plan.train_fraction, "training share");
  cv->add_option("--seed", cv_plan.seed, "rng seed")->required();
  cv->add_option("--out", cv_out, "output directory");

  // report
  auto* rep = app.add_subcommand("report", "summarize a fit artifact");
  std::string rep_fit = "fit_out/fit.json", rep_out = "report_out";
  double rep_guideline = 10.0;
  rep->add_option("--fit", rep_fit, "fit artifact path")->required();
  rep->add_option("--out", rep_out, "output directory");
  rep->add_option("--guideline", rep_guideline, "exposure guideline (ug/m3)");

  // validate
  auto* val = app.add_subcommand("validate", "check input files");
  Inputs val_in;
  add_input_options(val, val_in);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) return run_simulate(sim, sim_cfg, sim_seed, sim_out);
    if (fitc->parsed()) return run_fit(fitc, fit_in, fit_flags, fit_out);
    if (pred->parsed()) {
      pred_opts.threads = threads;
      return run_predict(pred, pred_fit, pred_opts, guideline, bin_width, pred_out);
    }
    if (cv->parsed()) return run_cv(cv, cv_in, cv_variants, cv_flags, cv_plan, cv_out);
    if (rep->parsed()) return run_report(rep, rep_fit, rep_guideline, rep_out);
    if (val->parsed()) return run_validate(val_in);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
