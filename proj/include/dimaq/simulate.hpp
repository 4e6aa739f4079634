#pragma once

// Synthetic-world generator: a nested country/region/super-region hierarchy
// with adjacency, grid cells with covariates, monitors, and responses drawn
// from the variant-(ii) generative model. Deterministic given the seed.

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <fstream>
#include <string>
#include <vector>

#include "dimaq/common.hpp"
#include "dimaq/data.hpp"
#include "dimaq/model.hpp"

namespace dimaq {

struct SimulateConfig {
  int n_super = 4;
  int regions_per_super = 2;
  int countries_per_region = 3;
  int n_cells = 2000;
  int n_monitors = 300;
  int n_merged_regions = 0;  // trailing regions collapsed onto their super-region
  int year = 2014;

  // fixed effects on the standardized-covariate scale
  double beta0 = 3.0;
  double beta_x1 = -0.10;
  double beta_x2 = 0.05;
  double beta_x3 = 0.08;
  double beta_x4 = 0.40;
  double beta_x8 = 0.15;

  // level standard deviations (log scale)
  double sigma_sr = 0.15;
  double sigma_r = 0.10;
  double sigma_c = 0.10;
  double sigma_g = 0.05;
  double sigma_eps = 0.10;
  double psi_icar = 0.10;

  // covariate generation
  double x4_log_mean = 3.0, x4_log_sd = 0.5;
  double pop_log_mean = 8.0, pop_log_sd = 1.5;
  double p_x1 = 0.3, p_x2 = 0.7;

  // PM10 emission: this fraction of monitors reports PM10 with
  // value = PM2.5 / pm10_ratio; one colocated pair per country is added so
  // conversion factors are derivable
  double pm10_fraction = 0.0;
  double pm10_ratio = 0.5;

  void validate() const {
    if (n_super < 1 || regions_per_super < 1 || countries_per_region < 2)
      throw ValidationError("simulate: counts must give >= 2 countries per region");
    if (n_cells < n_super * regions_per_super * countries_per_region)
      throw ValidationError("simulate: need at least one cell per country");
    if (n_monitors < 1) throw ValidationError("simulate: need at least one monitor");
    if (n_merged_regions < 0 || n_merged_regions > n_super)
      throw ValidationError("simulate: bad merged-region count");
    if (pm10_fraction < 0.0 || pm10_fraction >= 1.0)
      throw ValidationError("simulate: pm10_fraction must be in [0,1)");
  }
};

struct SimulatedWorld {
  GeoHierarchy hierarchy;
  std::vector<GridCellRecord> cells;
  std::vector<MonitorRecord> monitors;
  nlohmann::json truth;

  void write(const std::string& dir) const {
    save_hierarchy(hierarchy, dir + "/hierarchy.csv");
    save_adjacency(hierarchy.adjacency, hierarchy, dir + "/adjacency.csv");
    save_cells(cells, dir + "/cells.csv");
    save_monitors(monitors, dir + "/monitors.csv");
    std::ofstream out(dir + "/truth.json");
    if (!out) throw ValidationError("cannot write " + dir + "/truth.json");
    out << truth.dump(2) << '\n';
  }
};

namespace detail {

// Zero-mean ICAR sample via dense eigendecomposition, restricted to the
// non-null eigenvectors; satisfies the per-component sum-to-zero constraints.
inline Eigen::VectorXd sample_icar(const AdjacencyGraph& g, double psi, CounterRng& rng) {
  if (g.n == 0) return {};
  Eigen::MatrixXd q = build_icar_precision(g, psi * psi).to_dense();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(g.n);
  double tol = 1e-8 * std::max(1.0, es.eigenvalues().maxCoeff());
  for (int k = 0; k < g.n; ++k) {
    if (es.eigenvalues()[k] <= tol) continue;
    x += (rng.normal() / std::sqrt(es.eigenvalues()[k])) * es.eigenvectors().col(k);
  }
  return x;
}

}  // namespace detail

inline SimulatedWorld simulate_world(const SimulateConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(seed);
  SimulatedWorld w;

  // hierarchy: ids are 1-based and globally unique per level
  const int n_regions = cfg.n_super * cfg.regions_per_super;
  const int n_countries = n_regions * cfg.countries_per_region;
  for (int k = 0; k < cfg.n_super; ++k) {
    w.hierarchy.super_by_id[k + 1] = k;
    w.hierarchy.super_regions.push_back({k + 1, "SR" + std::to_string(k + 1)});
  }
  for (int j = 0; j < n_regions; ++j) {
    int super = j / cfg.regions_per_super;
    // merged regions take their super-region's name
    bool merged = j % cfg.regions_per_super == cfg.regions_per_super - 1 &&
                  super < cfg.n_merged_regions;
    std::string name = merged ? w.hierarchy.super_regions[super].name
                              : "R" + std::to_string(j + 1);
    w.hierarchy.region_by_id[j + 1] = j;
    w.hierarchy.regions.push_back({j + 1, name, super, merged});
  }
  for (int i = 0; i < n_countries; ++i) {
    w.hierarchy.country_by_id[i + 1] = i;
    w.hierarchy.countries.push_back({i + 1, "C" + std::to_string(i + 1),
                                     i / cfg.countries_per_region});
  }
  // adjacency: a path through all countries in index order (one component)
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < n_countries; ++i) edges.emplace_back(i, i + 1);
  w.hierarchy.adjacency = AdjacencyGraph::from_edges(n_countries, edges);
  w.hierarchy.validate();

  // grid cells: contiguous runs per country on a synthetic 0.1-degree lattice
  const int per_country = cfg.n_cells / n_countries;
  std::vector<int> cell_country(cfg.n_cells);
  for (int g = 0; g < cfg.n_cells; ++g)
    cell_country[g] = std::min(g / per_country, n_countries - 1);
  const int lon_span = 100;  // cells per latitude row
  auto cell_ilat = [&](int g) { return g / lon_span; };
  auto cell_ilon = [&](int g) { return g % lon_span; };
  for (int g = 0; g < cfg.n_cells; ++g) {
    GridCellRecord c;
    c.cell_id = (static_cast<std::int64_t>(cell_ilat(g)) << 32) |
                (static_cast<std::int64_t>(cell_ilon(g)) & 0xffffffffLL);
    c.country_id = w.hierarchy.countries[cell_country[g]].id;
    c.x4_sat = std::exp(cfg.x4_log_mean + cfg.x4_log_sd * rng.normal());
    c.x5_tm5 = c.x4_sat * std::exp(0.3 * rng.normal());
    c.x6_dust = std::exp(1.0 + 0.5 * rng.normal());
    c.x7_snaoc = std::exp(1.5 + 0.5 * rng.normal());
    c.x8_pop = std::exp(cfg.pop_log_mean + cfg.pop_log_sd * rng.normal());
    c.x9_edxdu = 50.0 * rng.normal();
    w.cells.push_back(c);
  }

  // level deviations (zero-mean; the composed coefficient adds the fixed part)
  auto draw = [&](int count, double sigma) {
    std::vector<double> v(count);
    for (auto& x : v) x = sigma * rng.normal();
    return v;
  };
  auto d_sr_int = draw(cfg.n_super, cfg.sigma_sr);
  auto d_r_int = draw(n_regions, cfg.sigma_r);
  auto d_c_int = draw(n_countries, cfg.sigma_c);
  auto d_sr_x4 = draw(cfg.n_super, cfg.sigma_sr);
  auto d_r_x4 = draw(n_regions, cfg.sigma_r);
  auto d_c_x4 = draw(n_countries, cfg.sigma_c);
  auto d_sr_x8 = draw(cfg.n_super, cfg.sigma_sr);
  auto d_r_x8 = draw(n_regions, cfg.sigma_r);
  Eigen::VectorXd d_icar_x8 =
      cfg.psi_icar > 0.0 ? detail::sample_icar(w.hierarchy.adjacency, cfg.psi_icar, rng)
                         : Eigen::VectorXd::Zero(n_countries);
  // merged regions contribute a single (super-region) deviation
  for (int j = 0; j < n_regions; ++j)
    if (w.hierarchy.regions[j].merged) {
      d_r_int[j] = 0.0;
      d_r_x4[j] = 0.0;
      d_r_x8[j] = 0.0;
    }

  // monitor placement: uniform cells with replacement, then standardize the
  // sampled covariates so the truth coefficients live on the fitted scale
  std::vector<int> monitor_cellidx(cfg.n_monitors);
  for (auto& g : monitor_cellidx) g = static_cast<int>(rng.below(cfg.n_cells));
  std::vector<int> cell_dense;  // per monitor; for grid deviations
  std::map<int, int> cell_seen;
  for (int g : monitor_cellidx) {
    auto [it, fresh] = cell_seen.emplace(g, static_cast<int>(cell_seen.size()));
    cell_dense.push_back(it->second);
  }
  auto d_g_int = draw(static_cast<int>(cell_seen.size()), cfg.sigma_g);

  Standardizer std_fit = Standardizer::fit(w.cells, monitor_cellidx);

  long next_id = 1;
  std::vector<int> pm10_flags(cfg.n_monitors, 0);
  if (cfg.pm10_fraction > 0.0)
    for (int s = 0; s < cfg.n_monitors; ++s)
      pm10_flags[s] = rng.uniform() < cfg.pm10_fraction ? 1 : 0;

  for (int s = 0; s < cfg.n_monitors; ++s) {
    int g = monitor_cellidx[s];
    const GridCellRecord& cell = w.cells[g];
    int ci = cell_country[g];
    int rj = w.hierarchy.countries[ci].region_index;
    int sk = w.hierarchy.regions[rj].super_index;

    MonitorRecord m;
    m.monitor_id = next_id++;
    m.lat = cell_ilat(g) * 0.1 + 0.1 * rng.uniform();
    m.lon = cell_ilon(g) * 0.1 + 0.1 * rng.uniform();
    m.cell_id = cell_id_from_latlon(m.lat, m.lon);
    m.country_id = cell.country_id;
    m.year = cfg.year;
    m.x1_type_unspecified = rng.uniform() < cfg.p_x1 ? 1 : 0;
    m.x2_exact_location = rng.uniform() < cfg.p_x2 ? 1 : 0;

    double x4z = std_fit.apply(Standardizer::kX4, cell.x4_sat);
    double x8z = std_fit.apply(Standardizer::kX8, cell.x8_pop);
    double intercept = cfg.beta0 + d_sr_int[sk] + d_r_int[rj] + d_c_int[ci] +
                       d_g_int[cell_dense[s]];
    double slope_x4 = cfg.beta_x4 + d_sr_x4[sk] + d_r_x4[rj] + d_c_x4[ci];
    double slope_x8 = cfg.beta_x8 + d_sr_x8[sk] + d_r_x8[rj] + d_icar_x8[ci];
    double eta = intercept + slope_x4 * x4z + slope_x8 * x8z +
                 cfg.beta_x1 * m.x1_type_unspecified + cfg.beta_x2 * m.x2_exact_location +
                 cfg.sigma_eps * rng.normal();
    m.value = std::exp(eta);
    if (pm10_flags[s]) {
      m.pollutant = Pollutant::Pm10;
      m.value /= cfg.pm10_ratio;
    }
    w.monitors.push_back(m);
  }

  if (cfg.pm10_fraction > 0.0) {
    // one colocated PM10 twin of the first PM2.5 monitor in each country
    std::set<long> done;
    std::vector<MonitorRecord> extra;
    for (const auto& m : w.monitors) {
      if (m.pollutant != Pollutant::Pm25 || done.count(m.country_id)) continue;
      done.insert(m.country_id);
      MonitorRecord t = m;
      t.monitor_id = next_id++;
      t.pollutant = Pollutant::Pm10;
      t.value = m.value / cfg.pm10_ratio;
      extra.push_back(t);
    }
    w.monitors.insert(w.monitors.end(), extra.begin(), extra.end());
  }

  nlohmann::json truth;
  truth["seed"] = seed;
  truth["config"] = {{"n_super", cfg.n_super},
                     {"regions_per_super", cfg.regions_per_super},
                     {"countries_per_region", cfg.countries_per_region},
                     {"n_cells", cfg.n_cells},
                     {"n_monitors", cfg.n_monitors},
                     {"n_merged_regions", cfg.n_merged_regions},
                     {"year", cfg.year}};
  truth["fixed_effects"] = {{"beta0", cfg.beta0}, {"x1", cfg.beta_x1}, {"x2", cfg.beta_x2},
                            {"x3", cfg.beta_x3}, {"x4", cfg.beta_x4}, {"x8", cfg.beta_x8}};
  truth["stddev"] = {{"sr", cfg.sigma_sr}, {"r", cfg.sigma_r},     {"c", cfg.sigma_c},
                     {"g", cfg.sigma_g},   {"eps", cfg.sigma_eps}, {"icar_psi", cfg.psi_icar}};
  truth["standardizer"] = {{"mean", std::vector<double>(std_fit.mean.begin(), std_fit.mean.end())},
                           {"sd", std::vector<double>(std_fit.sd.begin(), std_fit.sd.end())}};
  truth["deviations"] = {{"intercept_sr", d_sr_int}, {"intercept_r", d_r_int},
                         {"intercept_c", d_c_int},   {"x4_sr", d_sr_x4},
                         {"x4_r", d_r_x4},           {"x4_c", d_c_x4},
                         {"x8_sr", d_sr_x8},         {"x8_r", d_r_x8}};
  truth["x8_icar"] = std::vector<double>(d_icar_x8.data(), d_icar_x8.data() + d_icar_x8.size());
  w.truth = truth;
  return w;
}

}  // namespace dimaq
