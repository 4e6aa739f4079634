#pragma once

// End-to-end model fitting: hyperparameter mode search, grid exploration, and
// the per-grid-point latent conditionals needed for prediction. Also defines
// the on-disk fit artifact (JSON) that lets `predict` run without refitting.

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dimaq/laplace.hpp"
#include "dimaq/model.hpp"

namespace dimaq {

struct FitOptions {
  NewtonOptions newton;
  GridOptions grid;
  Eigen::VectorXd psi_init;  // empty -> log(10) in every slot
  bool dic = true;
};

// A fitted model with everything precomputed for repeated prediction: the
// latent conditional is factorized once per grid point, so predicting a cell
// costs two sparse solves regardless of how cells are batched.
struct FitResult {
  BuiltModel built;
  ModeResult mode;
  HyperGrid grid;
  Eigen::VectorXd weights;  // normalized grid weights
  std::vector<ConditionalGaussian> conditionals;
  double dic_value = std::numeric_limits<double>::quiet_NaN();

  // Posterior marginal of a^T theta (log-concentration scale). `extra_variance`
  // adds per-grid-point variance terms: index h receives extra[h].
  MixtureMarginal predictive_log(const Eigen::VectorXd& a,
                                 const Eigen::VectorXd* extra_variance = nullptr) const {
    MixtureMarginal m;
    m.scale = MixtureScale::Log;
    for (std::size_t h = 0; h < conditionals.size(); ++h) {
      double var = conditionals[h].quad_form(a);
      if (extra_variance) var += (*extra_variance)[static_cast<int>(h)];
      m.components.push_back(
          {conditionals[h].mean.dot(a), std::sqrt(var), weights[static_cast<int>(h)]});
    }
    return m;
  }

  // Per-grid-point prior variance of one level deviation (hyper slot), used for
  // cells/countries absent from training.
  Eigen::VectorXd slot_prior_variance(int slot) const {
    Eigen::VectorXd v(static_cast<int>(grid.points.size()));
    for (std::size_t h = 0; h < grid.points.size(); ++h)
      v[static_cast<int>(h)] = 1.0 / grid.points[h].psi.precision(slot);
    return v;
  }

  Eigen::VectorXd noise_variance() const { return slot_prior_variance(built.s_eps); }
};

namespace detail {

inline std::vector<ConditionalGaussian> grid_conditionals(const LaplaceEngine& engine,
                                                          const HyperGrid& grid) {
  std::vector<ConditionalGaussian> out;
  out.reserve(grid.points.size());
  for (const auto& p : grid.points) out.push_back(engine.conditional_posterior(p.psi));
  return out;
}

}  // namespace detail

inline FitResult fit_model(BuiltModel built, const FitOptions& opts = {}) {
  LaplaceEngine engine(built.model);
  Eigen::VectorXd x0 = opts.psi_init;
  if (x0.size() == 0)
    x0 = Eigen::VectorXd::Constant(built.model->n_hyper(), std::log(10.0));
  if (x0.size() != built.model->n_hyper())
    throw ValidationError("fit_model: psi_init dimension mismatch");

  FitResult r;
  r.mode = find_mode(hyper_log_density(engine), x0, opts.newton);
  r.grid = explore_grid(engine, r.mode, opts.grid);
  r.weights = r.grid.normalized_weights();
  r.conditionals = detail::grid_conditionals(engine, r.grid);
  if (opts.dic) r.dic_value = dic(engine, r.grid, &r.conditionals);
  r.built = std::move(built);
  return r;
}

// ---------------------------------------------------------------------------
// Fit artifact: JSON snapshot of the fitted hyperparameter surface plus
// references to the input files the model was built from. Prediction reloads
// the inputs, rebuilds the (deterministic) model, and reuses the stored grid.

struct FitArtifact {
  ModelSpec spec;
  std::string hierarchy_path, adjacency_path, monitors_path, cells_path;
  ModeResult mode;
  HyperGrid grid;
  std::array<double, 6> std_mean{}, std_sd{};
  double dic_value = std::numeric_limits<double>::quiet_NaN();
};

inline nlohmann::json fit_artifact_json(const FitResult& fit, const std::string& hierarchy,
                                        const std::string& adjacency,
                                        const std::string& monitors,
                                        const std::string& cells) {
  nlohmann::json j;
  j["format"] = "dimaq-fit-v1";
  j["variant"] = to_string(fit.built.spec.variant);
  j["icar_population"] = fit.built.spec.icar_population;
  j["inputs"] = {{"hierarchy", hierarchy},
                 {"adjacency", adjacency},
                 {"monitors", monitors},
                 {"cells", cells}};
  j["mode"]["psi"] = std::vector<double>(
      fit.mode.psi_hat.log_precision.begin(), fit.mode.psi_hat.log_precision.end());
  j["mode"]["log_density"] = fit.mode.log_density;
  j["mode"]["iterations"] = fit.mode.iterations;
  const int d = static_cast<int>(fit.mode.hessian.rows());
  std::vector<double> hess(fit.mode.hessian.data(), fit.mode.hessian.data() + d * d);
  j["mode"]["hessian"] = hess;
  j["grid"]["axis_fallback"] = fit.grid.axis_fallback;
  j["grid"]["mode_index"] = fit.grid.mode_index;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : fit.grid.points) {
    nlohmann::json pj;
    pj["psi"] = std::vector<double>(p.psi.log_precision.begin(), p.psi.log_precision.end());
    pj["log_density"] = p.log_density;
    pj["weight"] = p.weight;
    pj["z"] = p.z;
    pts.push_back(std::move(pj));
  }
  j["grid"]["points"] = std::move(pts);
  j["standardizer"]["mean"] =
      std::vector<double>(fit.built.standardizer.mean.begin(), fit.built.standardizer.mean.end());
  j["standardizer"]["sd"] =
      std::vector<double>(fit.built.standardizer.sd.begin(), fit.built.standardizer.sd.end());
  j["hyper_names"] = fit.built.hyper_names();
  j["fixed_names"] = fit.built.fixed_names();
  if (std::isfinite(fit.dic_value)) j["dic"] = fit.dic_value;
  return j;
}

inline FitArtifact parse_fit_artifact(const nlohmann::json& j) {
  if (!j.contains("format") || j["format"] != "dimaq-fit-v1")
    throw ValidationError("fit artifact: unrecognized format");
  FitArtifact a;
  a.spec.variant = variant_from_string(j.at("variant").get<std::string>());
  a.spec.icar_population = j.at("icar_population").get<bool>();
  const auto& in = j.at("inputs");
  a.hierarchy_path = in.at("hierarchy").get<std::string>();
  a.adjacency_path = in.at("adjacency").get<std::string>();
  a.monitors_path = in.at("monitors").get<std::string>();
  a.cells_path = in.at("cells").get<std::string>();
  auto psi = j.at("mode").at("psi").get<std::vector<double>>();
  a.mode.psi_hat.log_precision =
      Eigen::Map<const Eigen::VectorXd>(psi.data(), static_cast<int>(psi.size()));
  a.mode.log_density = j.at("mode").at("log_density").get<double>();
  a.mode.iterations = j.at("mode").at("iterations").get<int>();
  auto hess = j.at("mode").at("hessian").get<std::vector<double>>();
  const int d = static_cast<int>(psi.size());
  if (static_cast<int>(hess.size()) != d * d)
    throw ValidationError("fit artifact: hessian dimension mismatch");
  a.mode.hessian = Eigen::Map<const Eigen::MatrixXd>(hess.data(), d, d);
  a.grid.axis_fallback = j.at("grid").at("axis_fallback").get<bool>();
  a.grid.mode_index = j.at("grid").at("mode_index").get<int>();
  for (const auto& pj : j.at("grid").at("points")) {
    HyperGridPoint p;
    auto v = pj.at("psi").get<std::vector<double>>();
    p.psi.log_precision =
        Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
    p.log_density = pj.at("log_density").get<double>();
    p.weight = pj.at("weight").get<double>();
    p.z = pj.at("z").get<std::vector<int>>();
    a.grid.points.push_back(std::move(p));
  }
  if (a.grid.points.empty()) throw ValidationError("fit artifact: empty grid");
  auto sm = j.at("standardizer").at("mean").get<std::vector<double>>();
  auto ss = j.at("standardizer").at("sd").get<std::vector<double>>();
  if (sm.size() != 6 || ss.size() != 6)
    throw ValidationError("fit artifact: standardizer must have six entries");
  std::copy(sm.begin(), sm.end(), a.std_mean.begin());
  std::copy(ss.begin(), ss.end(), a.std_sd.begin());
  if (j.contains("dic")) a.dic_value = j["dic"].get<double>();
  return a;
}

// Rebuild the full FitResult from an artifact plus reloaded inputs. The model
// build is deterministic, so the stored standardizer is a cross-check.
inline FitResult restore_fit(const FitArtifact& artifact,
                             const std::vector<MonitorRecord>& monitors,
                             const std::vector<GridCellRecord>& cells,
                             const GeoHierarchy& hierarchy) {
  FitResult r;
  r.built = build_model(artifact.spec, monitors, cells, hierarchy);
  for (int k = 0; k < 6; ++k) {
    if (std::abs(r.built.standardizer.mean[k] - artifact.std_mean[k]) > 1e-9 ||
        std::abs(r.built.standardizer.sd[k] - artifact.std_sd[k]) > 1e-9)
      throw ValidationError(
          "fit artifact: standardizer mismatch; inputs differ from the fitted data");
  }
  r.mode = artifact.mode;
  r.grid = artifact.grid;
  r.weights = r.grid.normalized_weights();
  LaplaceEngine engine(r.built.model);
  r.conditionals = detail::grid_conditionals(engine, r.grid);
  r.dic_value = artifact.dic_value;
  return r;
}

}  // namespace dimaq
