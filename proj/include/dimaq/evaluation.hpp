#pragma once

// Stratified cross-validation harness and model-comparison metrics
// (R^2, DIC, RMSE, population-weighted RMSE).

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dimaq/fit.hpp"
#include "dimaq/model.hpp"

namespace dimaq {

// PM2.5 concentration category: (0-24.9, 25-49.9, 50-74.9, 75-99.9, 100+).
inline int pm25_category(double value) {
  if (value < 25.0) return 0;
  if (value < 50.0) return 1;
  if (value < 75.0) return 2;
  if (value < 100.0) return 3;
  return 4;
}

struct SplitPlan {
  int n_splits = 25;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_splits < 1) throw ValidationError("split plan: n_splits must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw ValidationError("split plan: train fraction must be in (0,1)");
  }
};

struct Split {
  std::vector<int> train, validation;  // indices into the monitor vector
};

// Deterministic stratified 80/20 split. Strata are PM2.5 category x
// super-region; each stratum contributes round((1-train_fraction)*size)
// monitors to validation via a seeded shuffle. Singleton strata go to
// training and are logged.
inline Split stratified_split(const std::vector<MonitorRecord>& monitors,
                              const GeoHierarchy& hierarchy, const SplitPlan& plan,
                              int split_index, std::vector<std::string>* log = nullptr) {
  plan.validate();
  if (split_index < 0 || split_index >= plan.n_splits)
    throw ValidationError("stratified_split: split index out of range");

  std::map<std::pair<int, int>, std::vector<int>> strata;
  for (std::size_t s = 0; s < monitors.size(); ++s) {
    int ci = hierarchy.country_index(monitors[s].country_id);
    int sk = hierarchy.regions[hierarchy.countries[ci].region_index].super_index;
    strata[{pm25_category(monitors[s].value), sk}].push_back(static_cast<int>(s));
  }

  CounterRng rng(plan.seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(split_index + 1));
  Split out;
  for (auto& [key, idx] : strata) {
    const int n = static_cast<int>(idx.size());
    if (n == 1) {
      out.train.push_back(idx[0]);
      if (log) {
        std::ostringstream os;
        os << "stratum (category " << key.first << ", super-region " << key.second
           << ") has a single monitor; assigned to training";
        log->push_back(os.str());
      }
      continue;
    }
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    int n_val = static_cast<int>(std::llround((1.0 - plan.train_fraction) * n));
    n_val = std::min(n_val, n - 1);
    for (int i = 0; i < n; ++i)
      (i < n_val ? out.validation : out.train).push_back(idx[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

struct Metrics {
  double r2 = 0.0, rmse = 0.0, pwrmse = 0.0;
};

// Natural-scale metrics by default; log_scale compares log(pred) to log(obs).
inline Metrics compute_metrics(const std::vector<double>& pred,
                               const std::vector<double>& obs,
                               const std::vector<double>& pops, bool log_scale = false) {
  const std::size_t n = pred.size();
  if (obs.size() != n || pops.size() != n)
    throw ValidationError("compute_metrics: length mismatch");
  if (n == 0) throw ValidationError("compute_metrics: empty input");
  double wsum = 0.0;
  for (double w : pops) {
    if (w < 0.0) throw ValidationError("compute_metrics: negative population weight");
    wsum += w;
  }
  if (wsum == 0.0)
    throw ValidationError("compute_metrics: total population is zero; PwRMSE undefined");

  double ss = 0.0, wss = 0.0, obar = 0.0;
  std::vector<double> p(n), o(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = log_scale ? std::log(pred[i]) : pred[i];
    o[i] = log_scale ? std::log(obs[i]) : obs[i];
    obar += o[i];
  }
  obar /= n;
  double sstot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = p[i] - o[i];
    ss += e * e;
    wss += pops[i] * e * e;
    sstot += (o[i] - obar) * (o[i] - obar);
  }
  Metrics m;
  m.rmse = std::sqrt(ss / n);
  m.pwrmse = std::sqrt(wss / wsum);
  m.r2 = sstot > 0.0 ? 1.0 - ss / sstot : (ss == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity());
  return m;
}

struct MetricTable {
  static constexpr int kR2 = 0, kDic = 1, kRmse = 2, kPwrmse = 3;
  std::vector<std::string> metric_names = {"r2", "dic", "rmse", "pwrmse"};
  std::vector<std::string> variants;
  // values[v][m][split]; NaN marks a failed fit for that split
  std::vector<std::array<std::vector<double>, 4>> values;
  std::vector<std::string> failures;

  struct Reduced {
    double median, min, max;
  };

  static Reduced reduce(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }),
            v.end());
    if (v.empty()) {
      double nan = std::numeric_limits<double>::quiet_NaN();
      return {nan, nan, nan};
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    double med = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    return {med, v.front(), v.back()};
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "variant,metric,median,min,max\n";
    os.precision(10);
    for (std::size_t v = 0; v < variants.size(); ++v)
      for (int m = 0; m < 4; ++m) {
        auto r = reduce(values[v][m]);
        os << variants[v] << ',' << metric_names[m] << ',' << r.median << ',' << r.min
           << ',' << r.max << '\n';
      }
    return os.str();
  }

  std::string to_long_csv() const {
    std::ostringstream os;
    os << "variant,split,metric,value\n";
    os.precision(10);
    for (std::size_t v = 0; v < variants.size(); ++v)
      for (int m = 0; m < 4; ++m)
        for (std::size_t s = 0; s < values[v][m].size(); ++s)
          os << variants[v] << ',' << s << ',' << metric_names[m] << ','
             << values[v][m][s] << '\n';
    return os.str();
  }
};

namespace detail {

template <typename T>
std::vector<T> subset(const std::vector<T>& all, const std::vector<int>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all[i]);
  return out;
}

// Deviance at the OLS fit plus 2k, the fixed-effect analogue of DIC for the
// single-calibration baseline (p_D equals the parameter count exactly).
inline double baseline_dic(const Gbd2013Fit& fit, const std::vector<MonitorRecord>& monitors,
                           const std::vector<GridCellRecord>& cells) {
  std::map<std::int64_t, const GridCellRecord*> by_id;
  for (const auto& c : cells) by_id[c.cell_id] = &c;
  double ss = 0.0;
  const int n = static_cast<int>(monitors.size());
  for (const auto& m : monitors) {
    double mu = fit.predict_log(*by_id.at(m.cell_id), m.x1_type_unspecified,
                                m.x2_exact_location, m.x3_converted);
    double e = std::log(m.value) - mu;
    ss += e * e;
  }
  double sigma2 = ss / n;
  double dev = n * std::log(2.0 * M_PI * sigma2) + n;
  return dev + 2.0 * (static_cast<double>(fit.coef.size()) + 1.0);
}

}  // namespace detail

// Fits every spec on each training set, scores validation monitors with the
// natural-scale posterior median of the linear-predictor marginal, and
// aggregates per-split metrics. Fit failures are recorded and skipped.
inline MetricTable cross_validate(const std::vector<ModelSpec>& specs,
                                  const std::vector<MonitorRecord>& monitors,
                                  const std::vector<GridCellRecord>& cells,
                                  const GeoHierarchy& hierarchy, const SplitPlan& plan,
                                  const FitOptions& fit_opts = {},
                                  std::vector<std::string>* log = nullptr) {
  plan.validate();
  if (specs.empty()) throw ValidationError("cross_validate: no model specs");
  std::map<std::int64_t, const GridCellRecord*> by_id;
  for (const auto& c : cells) by_id[c.cell_id] = &c;
  for (const auto& m : monitors)
    if (!by_id.count(m.cell_id))
      throw ValidationError("cross_validate: monitor references unknown cell");

  MetricTable table;
  for (const auto& s : specs) table.variants.push_back(to_string(s.variant));
  table.values.assign(specs.size(), {});
  double nan = std::numeric_limits<double>::quiet_NaN();

  for (int split = 0; split < plan.n_splits; ++split) {
    Split sp = stratified_split(monitors, hierarchy, plan, split, log);
    auto train = detail::subset(monitors, sp.train);
    auto val = detail::subset(monitors, sp.validation);

    std::vector<double> obs, pops;
    for (const auto& m : val) {
      obs.push_back(m.value);
      pops.push_back(by_id.at(m.cell_id)->x8_pop);
    }

    for (std::size_t v = 0; v < specs.size(); ++v) {
      std::array<double, 4> row = {nan, nan, nan, nan};
      try {
        std::vector<double> pred;
        if (specs[v].variant == Variant::I) {
          auto fit = gbd2013_baseline(train, cells);
          for (const auto& m : val)
            pred.push_back(std::exp(fit.predict_log(*by_id.at(m.cell_id),
                                                    m.x1_type_unspecified,
                                                    m.x2_exact_location, m.x3_converted)));
          row[MetricTable::kDic] = detail::baseline_dic(fit, train, cells);
        } else {
          auto fit = fit_model(build_model(specs[v], train, cells, hierarchy), fit_opts);
          Eigen::VectorXd sigma2_g = fit.slot_prior_variance(fit.built.s_g);
          Eigen::VectorXd zero = Eigen::VectorXd::Zero(sigma2_g.size());
          for (const auto& m : val) {
            const auto& cell = *by_id.at(m.cell_id);
            Eigen::VectorXd a = fit.built.design_row(cell, m.x1_type_unspecified,
                                                     m.x2_exact_location, m.x3_converted);
            bool seen = fit.built.cell_level.count(m.cell_id) > 0;
            auto mix = fit.predictive_log(a, seen ? &zero : &sigma2_g);
            pred.push_back(mixture_quantile(mix, 0.5));
          }
          row[MetricTable::kDic] = fit.dic_value;
        }
        Metrics met = compute_metrics(pred, obs, pops);
        row[MetricTable::kR2] = met.r2;
        row[MetricTable::kRmse] = met.rmse;
        row[MetricTable::kPwrmse] = met.pwrmse;
      } catch (const std::exception& e) {
        std::ostringstream os;
        os << "variant " << table.variants[v] << " split " << split
           << " failed: " << e.what();
        table.failures.push_back(os.str());
        if (log) log->push_back(os.str());
      }
      for (int m = 0; m < 4; ++m) table.values[v][m].push_back(row[m]);
    }
  }
  return table;
}

}  // namespace dimaq
