#include <catch2/catch_amalgamated.hpp>

#include "dimaq/evaluation.hpp"
#include "dimaq/prediction.hpp"
#include "dimaq/simulate.hpp"

using namespace dimaq;

namespace {

const SimulatedWorld& world() {
  static SimulatedWorld w = simulate_world(
      [] {
        SimulateConfig c;
        c.n_super = 2;
        c.regions_per_super = 2;
        c.countries_per_region = 2;
        c.n_cells = 70;
        c.n_monitors = 50;
        return c;
      }(),
      77);
  return w;
}

const FitResult& fitted() {
  static FitResult f = [] {
    ModelSpec spec{Variant::II};
    spec.icar_population = false;  // keeps the dense oracle constraint-free
    FitOptions opts;
    opts.newton.grad_tol = 1e-4;
    return fit_model(build_model(spec, world().monitors, world().cells, world().hierarchy),
                     opts);
  }();
  return f;
}

CellPosterior fake_cell(std::int64_t id, double median) {
  CellPosterior p;
  p.cell_id = id;
  p.summary.median = median;
  return p;
}

}  // namespace

TEST_CASE("chunk and thread invariance") {
  const auto& fit = fitted();
  PredictionOptions o1, o7, oall, othr;
  o1.chunk_size = 1;
  o7.chunk_size = 7;
  oall.chunk_size = static_cast<int>(world().cells.size());
  othr.chunk_size = 16;
  othr.threads = 3;
  auto p1 = predict_all(fit, world().cells, o1);
  auto p7 = predict_all(fit, world().cells, o7);
  auto pall = predict_all(fit, world().cells, oall);
  auto pthr = predict_all(fit, world().cells, othr);
  REQUIRE(p1.size() == world().cells.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    REQUIRE(p1[i].cell_id == pall[i].cell_id);
    for (const auto* other : {&p7[i], &pall[i], &pthr[i]}) {
      REQUIRE(std::abs(p1[i].summary.median - other->summary.median) < 1e-8);
      REQUIRE(std::abs(p1[i].summary.sd - other->summary.sd) < 1e-8);
      REQUIRE(std::abs(p1[i].exceed_prob[0] - other->exceed_prob[0]) < 1e-8);
    }
  }
}

TEST_CASE("dense predictive oracle") {
  const auto& fit = fitted();
  const auto& model = *fit.built.model;
  // dense per-grid-point conditionals: Q_post = Q_prior + tau A^T A
  Eigen::MatrixXd a_dense(model.design());
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  for (const auto& gp : fit.grid.points) {
    Eigen::MatrixXd qp(assemble_prior_precision(model, gp.psi).to_eigen());
    double tau = gp.psi.precision(fit.built.s_eps);
    Eigen::MatrixXd qpost = qp + tau * a_dense.transpose() * a_dense;
    Eigen::MatrixXd cov = qpost.inverse();
    means.push_back(cov * (tau * a_dense.transpose() * model.y));
    covs.push_back(cov);
  }
  Eigen::VectorXd w = fit.grid.normalized_weights();
  Eigen::VectorXd sigma2_g = fit.slot_prior_variance(fit.built.s_g);

  auto posteriors = predict_all(fit, world().cells, {});
  for (std::size_t i = 0; i < world().cells.size(); i += 9) {
    const auto& cell = world().cells[i];
    Eigen::VectorXd a = fit.built.design_row(cell, 0, 0, 0);
    bool seen = fit.built.cell_level.count(cell.cell_id) > 0;
    MixtureMarginal m;
    m.scale = MixtureScale::Log;
    for (std::size_t h = 0; h < means.size(); ++h) {
      double var = a.dot(covs[h] * a) + (seen ? 0.0 : sigma2_g[static_cast<int>(h)]);
      m.components.push_back({means[h].dot(a), std::sqrt(var), w[static_cast<int>(h)]});
    }
    auto s = mixture_summaries(m);
    REQUIRE(posteriors[i].summary.median == Catch::Approx(s.median).epsilon(1e-7));
    REQUIRE(posteriors[i].summary.mean == Catch::Approx(s.mean).epsilon(1e-7));
    REQUIRE(posteriors[i].summary.sd == Catch::Approx(s.sd).epsilon(1e-6));
  }
}

TEST_CASE("training cell prediction matches the fitted linear predictor") {
  const auto& fit = fitted();
  const auto& cell = world().cells[0];
  // same design row (indicators zero) must give the same mixture as the
  // engine-side linear-predictor marginal
  Eigen::VectorXd a = fit.built.design_row(cell, 0, 0, 0);
  auto p = predict_cell(fit, cell, {}, fit.slot_prior_variance(fit.built.s_g),
                        fit.noise_variance());
  double mix_mean = 0.0;
  for (std::size_t h = 0; h < fit.conditionals.size(); ++h)
    mix_mean += fit.weights[static_cast<int>(h)] * fit.conditionals[h].mean.dot(a);
  double pred_mean = 0.0;
  for (const auto& c : p.marginal.components) pred_mean += c.weight * c.mean;
  REQUIRE(pred_mean == Catch::Approx(mix_mean).margin(1e-12));
}

TEST_CASE("ci95 halfwidth recomputed from the mixture cdf") {
  const auto& fit = fitted();
  auto posteriors = predict_all(fit, world().cells, {});
  for (std::size_t i = 0; i < posteriors.size(); i += 17) {
    double lo = mixture_quantile(posteriors[i].marginal, 0.025);
    double hi = mixture_quantile(posteriors[i].marginal, 0.975);
    REQUIRE(posteriors[i].summary.ci95_halfwidth ==
            Catch::Approx(0.5 * (hi - lo)).epsilon(1e-6));
    REQUIRE(posteriors[i].summary.ci95_halfwidth >= 0.0);
  }
}

TEST_CASE("exceedance behavior") {
  const auto& fit = fitted();
  PredictionOptions opts;
  opts.thresholds = {35.0, 75.0, 1e6};
  auto posteriors = predict_all(fit, world().cells, opts);
  for (const auto& p : posteriors) {
    REQUIRE(p.exceed_prob[1] <= p.exceed_prob[0]);  // monotone in threshold
    REQUIRE(p.exceed_prob[2] < 1e-9);               // limit at huge threshold
    for (double e : p.exceed_prob) {
      REQUIRE(e >= 0.0);
      REQUIRE(e <= 1.0);
    }
  }
  // degenerate mixture concentrated at log 50
  MixtureMarginal deg;
  deg.scale = MixtureScale::Log;
  deg.components.push_back({std::log(50.0), 1e-6, 1.0});
  REQUIRE(exceed_prob(deg, 35.0) == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(exceed_prob(deg, 75.0) == Catch::Approx(0.0).margin(1e-9));

  auto table = exceedance_product(posteriors, {35.0, 75.0});
  REQUIRE(table.rfind("cell_id,p_exceed_35,p_exceed_75\n", 0) == 0);
  REQUIRE_THROWS_AS(exceedance_product(posteriors, {-1.0}), ValidationError);
}

TEST_CASE("removing a country's monitors increases its predictive sd") {
  // fixed hyperparameters isolate the information ordering
  ModelSpec spec{Variant::II};
  spec.icar_population = false;
  auto full = build_model(spec, world().monitors, world().cells, world().hierarchy);
  std::vector<MonitorRecord> kept;
  for (const auto& m : world().monitors)
    if (m.country_id != 1) kept.push_back(m);
  auto part = build_model(spec, kept, world().cells, world().hierarchy);

  HyperparameterVector psi;
  psi.log_precision = Eigen::VectorXd::Constant(5, std::log(10.0));
  auto make_fixed_fit = [&](BuiltModel built) {
    FitResult f;
    LaplaceEngine engine(built.model);
    f.grid.points.push_back({psi, 0.0, 1.0, {}});
    f.weights = Eigen::VectorXd::Ones(1);
    f.conditionals = {engine.conditional_posterior(psi)};
    f.built = std::move(built);
    return f;
  };
  auto ffull = make_fixed_fit(std::move(full));
  auto fpart = make_fixed_fit(std::move(part));
  int checked = 0;
  for (const auto& cell : world().cells) {
    if (cell.country_id != 1) continue;
    auto pf = predict_cell(ffull, cell, {}, ffull.slot_prior_variance(ffull.built.s_g),
                           ffull.noise_variance());
    auto pp = predict_cell(fpart, cell, {}, fpart.slot_prior_variance(fpart.built.s_g),
                           fpart.noise_variance());
    REQUIRE(pp.marginal.components[0].sd >= pf.marginal.components[0].sd - 1e-12);
    ++checked;
  }
  REQUIRE(checked > 0);
}

TEST_CASE("population_exposure") {
  std::vector<CellPosterior> ps = {fake_cell(1, 8.0), fake_cell(2, 12.0)};
  std::vector<GridCellRecord> cs = {[] {
                                      GridCellRecord c{};
                                      c.cell_id = 1;
                                      c.x8_pop = 1.0;
                                      return c;
                                    }(),
                                    [] {
                                      GridCellRecord c{};
                                      c.cell_id = 2;
                                      c.x8_pop = 3.0;
                                      return c;
                                    }()};
  auto s = population_exposure(ps, cs, 10.0);
  REQUIRE(s.fraction_above == Catch::Approx(0.75));
  REQUIRE(s.bin_population[1] == 1.0);  // 8 -> bin [5,10)
  REQUIRE(s.bin_population[2] == 3.0);  // 12 -> bin [10,15)
  REQUIRE(s.total_population == 4.0);

  // doubling populations leaves the fraction unchanged
  for (auto& c : cs) c.x8_pop *= 2.0;
  REQUIRE(population_exposure(ps, cs, 10.0).fraction_above == Catch::Approx(0.75));

  // all medians below the guideline
  std::vector<CellPosterior> low = {fake_cell(1, 4.0), fake_cell(2, 6.0)};
  REQUIRE(population_exposure(low, cs, 10.0).fraction_above == 0.0);

  for (auto& c : cs) c.x8_pop = 0.0;
  REQUIRE_THROWS_AS(population_exposure(ps, cs, 10.0), ValidationError);
  REQUIRE_THROWS_AS(population_exposure(ps, {}, 10.0), ValidationError);
}

TEST_CASE("predictions csv shape") {
  const auto& fit = fitted();
  PredictionOptions opts;
  auto posteriors = predict_all(fit, world().cells, opts);
  auto csv = predictions_csv(posteriors, opts.thresholds);
  REQUIRE(csv.rfind("cell_id,median,mean,sd,ci95_halfwidth,p_exceed_35,p_exceed_75\n", 0) ==
          0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') ==
          static_cast<long>(world().cells.size()) + 1);
}

TEST_CASE("fit artifact round trip") {
  const auto& fit = fitted();
  auto j = fit_artifact_json(fit, "h.csv", "a.csv", "m.csv", "c.csv");
  auto text = j.dump();
  auto artifact = parse_fit_artifact(nlohmann::json::parse(text));
  REQUIRE(artifact.monitors_path == "m.csv");
  auto restored = restore_fit(artifact, world().monitors, world().cells, world().hierarchy);
  auto p0 = predict_all(fit, world().cells, {});
  auto p1 = predict_all(restored, world().cells, {});
  for (std::size_t i = 0; i < p0.size(); ++i) {
    REQUIRE(p0[i].summary.median == Catch::Approx(p1[i].summary.median).epsilon(1e-12));
    REQUIRE(p0[i].summary.sd == Catch::Approx(p1[i].summary.sd).epsilon(1e-12));
  }

  // changed inputs are detected through the standardizer cross-check
  auto other = simulate_world(
      [] {
        SimulateConfig c;
        c.n_super = 2;
        c.regions_per_super = 2;
        c.countries_per_region = 2;
        c.n_cells = 70;
        c.n_monitors = 50;
        return c;
      }(),
      78);
  REQUIRE_THROWS_AS(restore_fit(artifact, other.monitors, other.cells, other.hierarchy),
                    ValidationError);

  nlohmann::json bad = j;
  bad["format"] = "nope";
  REQUIRE_THROWS_AS(parse_fit_artifact(bad), ValidationError);
}
