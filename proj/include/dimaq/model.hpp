#pragma once

// DIMAQ model layer: PM10 conversion, the five candidate model variants, the
// GBD2013 single-calibration baseline, and assembly of the latent Gaussian
// model from monitors + cells + hierarchy.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dimaq/common.hpp"
#include "dimaq/data.hpp"
#include "dimaq/lgm.hpp"

namespace dimaq {

enum class Variant { I, II, III, IV, V };

inline Variant variant_from_string(const std::string& s) {
  if (s == "i") return Variant::I;
  if (s == "ii") return Variant::II;
  if (s == "iii") return Variant::III;
  if (s == "iv") return Variant::IV;
  if (s == "v") return Variant::V;
  throw ValidationError("unknown model variant '" + s + "'");
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::I: return "i";
    case Variant::II: return "ii";
    case Variant::III: return "iii";
    case Variant::IV: return "iv";
    case Variant::V: return "v";
  }
  return "?";
}

// Candidate-model table: (ii) carries X1-X3 fixed (with X4 interactions),
// X4 and X8 fixed + random; (iii) adds X5 fixed + random (with interactions);
// (iv) adds X6, X7, X9 fixed; (v) combines (iii) and (iv). The X8 country
// random effect uses an ICAR prior over the country adjacency graph.
struct ModelSpec {
  Variant variant = Variant::II;
  bool icar_population = true;

  bool include_x5() const { return variant == Variant::III || variant == Variant::V; }
  bool include_geoschem() const { return variant == Variant::IV || variant == Variant::V; }
};

// PM10 conversion. Colocated pairs are PM2.5 and PM10 measurements sharing a
// grid cell and year; the country factor is the population-weighted mean of
// those cell-level ratios, falling back to the unweighted mean of country
// factors within the region. Records with no derivable factor are dropped.
inline std::vector<MonitorRecord> convert_pm10(const std::vector<MonitorRecord>& records,
                                               const GeoHierarchy& hierarchy,
                                               const std::vector<GridCellRecord>& cells,
                                               std::vector<std::string>* log = nullptr) {
  std::map<std::int64_t, double> cell_pop;
  for (const auto& c : cells) cell_pop[c.cell_id] = c.x8_pop;

  struct Pair {
    double sum25 = 0, sum10 = 0;
    int n25 = 0, n10 = 0;
  };
  std::map<std::pair<std::int64_t, int>, Pair> colocated;
  std::map<std::int64_t, long> cell_country;
  for (const auto& r : records) {
    auto& p = colocated[{r.cell_id, r.year}];
    if (r.pollutant == Pollutant::Pm25) {
      p.sum25 += r.value;
      ++p.n25;
    } else {
      p.sum10 += r.value;
      ++p.n10;
    }
    cell_country[r.cell_id] = r.country_id;
  }

  // country factor: population-weighted mean of cell-level ratios
  std::map<long, std::pair<double, double>> country_acc;  // sum w*r, sum w
  std::map<long, std::pair<double, int>> country_plain;   // sum r, n (weightless fallback)
  for (const auto& [key, p] : colocated) {
    if (p.n25 == 0 || p.n10 == 0) continue;
    double ratio = (p.sum25 / p.n25) / (p.sum10 / p.n10);
    long country = cell_country[key.first];
    auto it = cell_pop.find(key.first);
    double w = it == cell_pop.end() ? 0.0 : it->second;
    country_acc[country].first += w * ratio;
    country_acc[country].second += w;
    country_plain[country].first += ratio;
    country_plain[country].second += 1;
  }
  std::map<long, double> country_factor;
  for (const auto& [country, acc] : country_acc) {
    if (acc.second > 0.0)
      country_factor[country] = acc.first / acc.second;
    else
      country_factor[country] = country_plain[country].first / country_plain[country].second;
  }

  // region factor: unweighted mean of country factors within the region
  std::map<int, std::pair<double, int>> region_acc;
  for (const auto& [country, f] : country_factor) {
    int ci = hierarchy.country_index(country);
    if (ci < 0) continue;
    auto& acc = region_acc[hierarchy.countries[ci].region_index];
    acc.first += f;
    acc.second += 1;
  }

  std::vector<MonitorRecord> out;
  for (const auto& r : records) {
    if (r.pollutant == Pollutant::Pm25) {
      out.push_back(r);
      continue;
    }
    double factor = 0.0;
    bool have = false;
    if (auto it = country_factor.find(r.country_id); it != country_factor.end()) {
      factor = it->second;
      have = true;
    } else {
      int ci = hierarchy.country_index(r.country_id);
      if (ci >= 0) {
        auto rit = region_acc.find(hierarchy.countries[ci].region_index);
        if (rit != region_acc.end() && rit->second.second > 0) {
          factor = rit->second.first / rit->second.second;
          have = true;
        }
      }
    }
    if (!have) {
      if (log)
        log->push_back("dropped monitor " + std::to_string(r.monitor_id) +
                       ": no PM10 conversion factor for country " +
                       std::to_string(r.country_id) + " or its region");
      continue;
    }
    MonitorRecord c = r;
    c.value = r.value * factor;
    c.pollutant = Pollutant::Pm25;
    c.x3_converted = 1;
    out.push_back(c);
  }
  return out;
}

// Centering/scaling transform for the grid covariates, estimated over the
// training monitors and replayed at prediction.
struct Standardizer {
  // index 0..5 = X4, X5, X6, X7, X8, X9
  std::array<double, 6> mean{};
  std::array<double, 6> sd{};

  static constexpr int kX4 = 0, kX5 = 1, kX6 = 2, kX7 = 3, kX8 = 4, kX9 = 5;

  static std::array<double, 6> raw(const GridCellRecord& c) {
    return {c.x4_sat, c.x5_tm5, c.x6_dust, c.x7_snaoc, c.x8_pop, c.x9_edxdu};
  }

  static Standardizer fit(const std::vector<GridCellRecord>& training_cells,
                          const std::vector<int>& cell_index_per_monitor) {
    Standardizer s;
    std::array<double, 6> sum{}, sumsq{};
    int n = static_cast<int>(cell_index_per_monitor.size());
    if (n == 0) throw ValidationError("standardizer needs at least one monitor");
    for (int i : cell_index_per_monitor) {
      auto v = raw(training_cells[i]);
      for (int k = 0; k < 6; ++k) {
        sum[k] += v[k];
        sumsq[k] += v[k] * v[k];
      }
    }
    for (int k = 0; k < 6; ++k) {
      s.mean[k] = sum[k] / n;
      double var = sumsq[k] / n - s.mean[k] * s.mean[k];
      s.sd[k] = var > 1e-300 ? std::sqrt(var) : 1.0;  // constant covariate maps to 0
    }
    return s;
  }

  double apply(int k, double value) const { return (value - mean[k]) / sd[k]; }

  std::array<double, 6> apply(const GridCellRecord& c) const {
    auto v = raw(c);
    for (int k = 0; k < 6; ++k) v[k] = apply(k, v[k]);
    return v;
  }
};

// A latent Gaussian model plus everything needed to rebuild design rows for
// prediction: standardization, hierarchy maps, block layout, hyper slots.
struct BuiltModel {
  std::shared_ptr<LatentGaussianModel> model;
  ModelSpec spec;
  GeoHierarchy hierarchy;
  Standardizer standardizer;

  std::vector<std::int64_t> training_cell_ids;  // grid-cell block level -> id
  std::map<std::int64_t, int> cell_level;

  // hyper slots
  int s_eps = 0, s_sr = 1, s_r = 2, s_c = 3, s_g = 4, s_icar = -1;
  // block indices within model->blocks
  int b_grid = -1, b_int_tree = -1, b_x4 = -1, b_x5 = -1, b_x8_tree = -1, b_x8_icar = -1;

  // Fixed-effect column values for one target; mirrors training assembly.
  std::vector<double> fixed_row(const GridCellRecord& cell, double x1, double x2,
                                double x3) const {
    auto z = standardizer.apply(cell);
    std::vector<double> row;
    row.push_back(1.0);
    row.push_back(x1);
    row.push_back(x2);
    row.push_back(x3);
    row.push_back(z[Standardizer::kX4]);
    if (spec.include_x5()) row.push_back(z[Standardizer::kX5]);
    row.push_back(z[Standardizer::kX8]);
    if (spec.include_geoschem()) {
      row.push_back(z[Standardizer::kX6]);
      row.push_back(z[Standardizer::kX7]);
      row.push_back(z[Standardizer::kX9]);
    }
    for (double ind : {x1, x2, x3}) row.push_back(ind * z[Standardizer::kX4]);
    if (spec.include_x5())
      for (double ind : {x1, x2, x3}) row.push_back(ind * z[Standardizer::kX5]);
    return row;
  }

  // Full design row a with eta = a^T theta for an arbitrary target. The
  // grid-cell deviation column is present only for cells seen in training;
  // unknown countries contribute no tree/ICAR columns (region-level fallback
  // is the prior mean 0 at every level).
  Eigen::VectorXd design_row(const GridCellRecord& cell, double x1, double x2, double x3,
                             bool* unknown_country = nullptr) const {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(model->theta_dim());
    auto fr = fixed_row(cell, x1, x2, x3);
    for (std::size_t c = 0; c < fr.size(); ++c) a[static_cast<int>(c)] = fr[c];

    int ci = hierarchy.country_index(cell.country_id);
    if (unknown_country) *unknown_country = ci < 0;
    auto z = standardizer.apply(cell);

    std::vector<std::pair<int, int>> cols;
    auto add_block = [&](int b, double mult, int group) {
      if (b < 0 || group < 0 || mult == 0.0) return;
      const auto& blk = model->blocks[b];
      int off = model->block_offset(b);
      blk.columns_for_group(group, &cols);
      for (auto [col, sub] : cols) a[off + col] += mult;
    };

    auto lv = cell_level.find(cell.cell_id);
    add_block(b_grid, 1.0, lv == cell_level.end() ? -1 : lv->second);
    add_block(b_int_tree, 1.0, ci);
    add_block(b_x4, z[Standardizer::kX4], ci);
    if (b_x5 >= 0) add_block(b_x5, z[Standardizer::kX5], ci);
    add_block(b_x8_tree, z[Standardizer::kX8], ci);
    if (b_x8_icar >= 0) add_block(b_x8_icar, z[Standardizer::kX8], ci);
    return a;
  }

  std::vector<std::string> fixed_names() const {
    std::vector<std::string> names = {"beta0", "x1", "x2", "x3", "x4"};
    if (spec.include_x5()) names.push_back("x5");
    names.push_back("x8");
    if (spec.include_geoschem()) {
      names.push_back("x6");
      names.push_back("x7");
      names.push_back("x9");
    }
    for (const char* ind : {"x1", "x2", "x3"}) names.push_back(std::string(ind) + ":x4");
    if (spec.include_x5())
      for (const char* ind : {"x1", "x2", "x3"}) names.push_back(std::string(ind) + ":x5");
    return names;
  }

  std::vector<std::string> hyper_names() const {
    std::vector<std::string> names = {"tau_eps", "tau_sr", "tau_r", "tau_c", "tau_g"};
    if (s_icar >= 0) names.push_back("tau_icar");
    return names;
  }
};

// Assembles the hierarchical calibration model for one variant. Monitors must
// be PM2.5 (post-conversion); each monitor's cell must appear in `cells`.
inline BuiltModel build_model(const ModelSpec& spec,
                              const std::vector<MonitorRecord>& monitors,
                              const std::vector<GridCellRecord>& cells,
                              const GeoHierarchy& hierarchy) {
  if (spec.variant == Variant::I)
    throw ValidationError("variant (i) is the GBD2013 baseline; use gbd2013_baseline");
  if (monitors.empty()) throw ValidationError("build_model: no monitors");

  std::map<std::int64_t, int> cell_by_id;
  for (std::size_t i = 0; i < cells.size(); ++i)
    cell_by_id[cells[i].cell_id] = static_cast<int>(i);

  std::vector<int> monitor_cell;   // index into cells
  std::vector<int> monitor_country;
  std::vector<std::string> offenders;
  for (const auto& m : monitors) {
    auto it = cell_by_id.find(m.cell_id);
    if (it == cell_by_id.end()) {
      offenders.push_back("monitor " + std::to_string(m.monitor_id) + " cell " +
                          std::to_string(m.cell_id));
      continue;
    }
    int ci = hierarchy.country_index(m.country_id);
    if (ci < 0) {
      offenders.push_back("monitor " + std::to_string(m.monitor_id) + " country " +
                          std::to_string(m.country_id));
      continue;
    }
    monitor_cell.push_back(it->second);
    monitor_country.push_back(ci);
  }
  if (!offenders.empty()) {
    std::string msg = "build_model: unresolved ids:";
    for (const auto& o : offenders) msg += " [" + o + "]";
    throw ValidationError(msg);
  }

  BuiltModel built;
  built.spec = spec;
  built.hierarchy = hierarchy;
  built.standardizer = Standardizer::fit(cells, monitor_cell);

  const int n = static_cast<int>(monitors.size());
  auto model = std::make_shared<LatentGaussianModel>();
  model->y.resize(n);
  for (int s = 0; s < n; ++s) model->y[s] = std::log(monitors[s].value);

  // fixed design
  std::vector<std::vector<double>> rows(n);
  for (int s = 0; s < n; ++s)
    rows[s] = built.fixed_row(cells[monitor_cell[s]], monitors[s].x1_type_unspecified,
                              monitors[s].x2_exact_location, monitors[s].x3_converted);
  model->fixed_design.resize(n, static_cast<int>(rows[0].size()));
  for (int s = 0; s < n; ++s)
    for (std::size_t c = 0; c < rows[s].size(); ++c)
      model->fixed_design(s, static_cast<int>(c)) = rows[s][c];
  model->fixed_names = built.fixed_names();

  // hyperparameters: shared level variances across all random coefficients
  bool use_icar = spec.icar_population;
  if (use_icar && hierarchy.adjacency.n == 0)
    throw ValidationError("variant requires a country adjacency graph for the population slope");
  built.s_icar = use_icar ? 5 : -1;
  int n_hyper = use_icar ? 6 : 5;
  model->hyper_priors.assign(n_hyper, PrecisionPrior{});
  model->hyper_names = built.hyper_names();
  model->noise_slot = built.s_eps;

  // grid-cell intercept block over the training cells
  std::vector<std::int64_t> monitor_cell_ids;
  for (int s = 0; s < n; ++s) monitor_cell_ids.push_back(cells[monitor_cell[s]].cell_id);
  auto grid_inc = build_incidence(monitor_cell_ids);
  {
    std::map<std::int64_t, int> seen;
    for (int s = 0; s < n; ++s) seen[monitor_cell_ids[s]] = 0;
    built.training_cell_ids.assign(seen.size(), 0);
    int idx = 0;
    for (auto& [id, slot] : seen) {
      built.training_cell_ids[idx] = id;
      built.cell_level[id] = idx;
      ++idx;
    }
  }
  EffectBlock grid;
  grid.kind = BlockKind::GridCell;
  grid.name = "grid_cell";
  grid.incidence = grid_inc.index;
  grid.level_count = grid_inc.level_count;
  grid.hyper_slots = {built.s_g};
  built.b_grid = static_cast<int>(model->blocks.size());
  model->blocks.push_back(grid);

  NestedTree tree = hierarchy.tree();
  auto merged = hierarchy.merged_regions();

  auto make_tree_block = [&](const std::string& name, bool with_country,
                             std::optional<std::vector<double>> mult) {
    EffectBlock b;
    b.kind = BlockKind::NestedTree;
    b.name = name;
    b.tree = tree;
    b.region_merged = merged;
    b.incidence = monitor_country;
    b.include_country = with_country;
    b.hyper_slots = with_country ? std::vector<int>{built.s_sr, built.s_r, built.s_c}
                                 : std::vector<int>{built.s_sr, built.s_r};
    b.covariate_multiplier = std::move(mult);
    return b;
  };

  built.b_int_tree = static_cast<int>(model->blocks.size());
  model->blocks.push_back(make_tree_block("intercept_tree", true, std::nullopt));

  auto std_col = [&](int k) {
    std::vector<double> v(n);
    for (int s = 0; s < n; ++s)
      v[s] = built.standardizer.apply(k, Standardizer::raw(cells[monitor_cell[s]])[k]);
    return v;
  };

  built.b_x4 = static_cast<int>(model->blocks.size());
  model->blocks.push_back(make_tree_block("x4_slope", true, std_col(Standardizer::kX4)));
  if (spec.include_x5()) {
    built.b_x5 = static_cast<int>(model->blocks.size());
    model->blocks.push_back(make_tree_block("x5_slope", true, std_col(Standardizer::kX5)));
  }

  built.b_x8_tree = static_cast<int>(model->blocks.size());
  model->blocks.push_back(
      make_tree_block("x8_slope", !use_icar, std_col(Standardizer::kX8)));
  if (use_icar) {
    EffectBlock icar;
    icar.kind = BlockKind::Icar;
    icar.name = "x8_icar";
    icar.graph = hierarchy.adjacency;
    icar.incidence = monitor_country;
    icar.hyper_slots = {built.s_icar};
    icar.covariate_multiplier = std_col(Standardizer::kX8);
    built.b_x8_icar = static_cast<int>(model->blocks.size());
    model->blocks.push_back(icar);
  }

  model->validate();
  built.model = model;
  return built;
}

// GBD2013 baseline: ordinary least squares of cell-averaged log concentration
// on the cell-averaged monitor indicators and (X4+X5)/2, one global
// calibration for every cell.
struct Gbd2013Fit {
  Eigen::VectorXd coef;  // [intercept, x1, x2, x3, (x4+x5)/2]
  std::vector<std::string> names = {"beta0", "x1", "x2", "x3", "x45_mean"};

  double predict_log(const GridCellRecord& cell, double x1 = 0.0, double x2 = 0.0,
                     double x3 = 0.0) const {
    return coef[0] + coef[1] * x1 + coef[2] * x2 + coef[3] * x3 +
           coef[4] * 0.5 * (cell.x4_sat + cell.x5_tm5);
  }
};

inline Gbd2013Fit gbd2013_baseline(const std::vector<MonitorRecord>& monitors,
                                   const std::vector<GridCellRecord>& cells) {
  std::map<std::int64_t, const GridCellRecord*> cell_by_id;
  for (const auto& c : cells) cell_by_id[c.cell_id] = &c;

  struct Acc {
    double logsum = 0, x1 = 0, x2 = 0, x3 = 0;
    int n = 0;
  };
  std::map<std::int64_t, Acc> per_cell;
  for (const auto& m : monitors) {
    auto& a = per_cell[m.cell_id];
    a.logsum += std::log(m.value);
    a.x1 += m.x1_type_unspecified;
    a.x2 += m.x2_exact_location;
    a.x3 += m.x3_converted;
    ++a.n;
  }
  const int nc = static_cast<int>(per_cell.size());
  if (nc < 2) throw ValidationError("gbd2013_baseline needs monitors in at least two cells");

  Eigen::MatrixXd x(nc, 5);
  Eigen::VectorXd y(nc);
  int row = 0;
  for (const auto& [id, a] : per_cell) {
    auto it = cell_by_id.find(id);
    if (it == cell_by_id.end())
      throw ValidationError("gbd2013_baseline: no covariates for cell " + std::to_string(id));
    y[row] = a.logsum / a.n;
    x(row, 0) = 1.0;
    x(row, 1) = a.x1 / a.n;
    x(row, 2) = a.x2 / a.n;
    x(row, 3) = a.x3 / a.n;
    x(row, 4) = 0.5 * (it->second->x4_sat + it->second->x5_tm5);
    ++row;
  }

  // indicator columns that never vary (e.g. no converted measurements in the
  // data) carry no information; they are excluded and get coefficient 0
  std::vector<int> keep = {0};
  for (int c = 1; c < 5; ++c) {
    bool constant = c < 4;
    for (int r = 1; r < nc && constant; ++r) constant = x(r, c) == x(0, c);
    if (!(c < 4 && constant)) keep.push_back(c);
  }
  Eigen::MatrixXd xk(nc, static_cast<int>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) xk.col(static_cast<int>(c)) = x.col(keep[c]);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xk);
  qr.setThreshold(1e-10);
  if (qr.rank() < xk.cols()) {
    Gbd2013Fit probe;
    std::string msg = "gbd2013_baseline: collinear columns:";
    auto perm = qr.colsPermutation().indices();
    for (int k = qr.rank(); k < xk.cols(); ++k) msg += " " + probe.names[keep[perm[k]]];
    throw ValidationError(msg);
  }
  Gbd2013Fit fit;
  fit.coef = Eigen::VectorXd::Zero(5);
  Eigen::VectorXd sol = qr.solve(y);
  for (std::size_t c = 0; c < keep.size(); ++c) fit.coef[keep[c]] = sol[static_cast<int>(c)];
  return fit;
}

}  // namespace dimaq
