#pragma once

// Chunked posterior prediction over grid cells and derived exposure products.
// Chunking bounds peak memory; results are exact and independent of chunk size
// because each cell's predictive marginal is a closed-form Gaussian mixture.

#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dimaq/fit.hpp"

namespace dimaq {

struct PredictionOptions {
  int chunk_size = 1024;
  std::vector<double> thresholds = {35.0, 75.0};
  // include observation noise 1/tau_eps in the predictive variance; off by
  // default: maps target the annual-average field, not a new measurement
  bool include_noise = false;
  int threads = 1;

  void validate() const {
    if (chunk_size < 1) throw ValidationError("prediction: chunk_size must be >= 1");
    if (threads < 1) throw ValidationError("prediction: threads must be >= 1");
    for (double t : thresholds)
      if (!(t > 0.0)) throw ValidationError("prediction: thresholds must be positive");
  }
};

struct CellPosterior {
  std::int64_t cell_id = 0;
  MixtureMarginal marginal;  // log-concentration scale
  MixtureSummary summary;    // natural scale
  std::vector<double> exceed_prob;  // aligned with options.thresholds
  bool unknown_country = false;     // region-level fallback used
};

inline CellPosterior predict_cell(const FitResult& fit, const GridCellRecord& cell,
                                  const PredictionOptions& opts,
                                  const Eigen::VectorXd& sigma2_g,
                                  const Eigen::VectorXd& sigma2_eps) {
  CellPosterior out;
  out.cell_id = cell.cell_id;
  // indicators are measurement artifacts; the field is predicted at zero
  Eigen::VectorXd a = fit.built.design_row(cell, 0.0, 0.0, 0.0, &out.unknown_country);
  bool seen = fit.built.cell_level.count(cell.cell_id) > 0;
  Eigen::VectorXd extra = Eigen::VectorXd::Zero(sigma2_g.size());
  if (!seen) extra += sigma2_g;  // grid-cell deviation at its prior variance
  if (opts.include_noise) extra += sigma2_eps;
  out.marginal = fit.predictive_log(a, &extra);
  out.summary = mixture_summaries(out.marginal);
  for (double t : opts.thresholds) out.exceed_prob.push_back(exceed_prob(out.marginal, t));
  return out;
}

// Processes cells in chunks (parallel across a worker pool within each chunk)
// and emits results in input order via `sink`.
template <typename Sink>
void predict_chunked(const FitResult& fit, const std::vector<GridCellRecord>& cells,
                     const PredictionOptions& opts, Sink&& sink) {
  opts.validate();
  Eigen::VectorXd sigma2_g = fit.slot_prior_variance(fit.built.s_g);
  Eigen::VectorXd sigma2_eps = fit.noise_variance();

  const int n = static_cast<int>(cells.size());
  for (int start = 0; start < n; start += opts.chunk_size) {
    const int count = std::min(opts.chunk_size, n - start);
    std::vector<CellPosterior> chunk(count);
    auto work = [&](int t) {
      for (int i = t; i < count; i += opts.threads)
        chunk[i] = predict_cell(fit, cells[start + i], opts, sigma2_g, sigma2_eps);
    };
    if (opts.threads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < opts.threads; ++t) pool.emplace_back(work, t);
      for (auto& th : pool) th.join();
    }
    for (auto& p : chunk) sink(std::move(p));
  }
}

inline std::vector<CellPosterior> predict_all(const FitResult& fit,
                                              const std::vector<GridCellRecord>& cells,
                                              const PredictionOptions& opts = {}) {
  std::vector<CellPosterior> out;
  out.reserve(cells.size());
  predict_chunked(fit, cells, opts, [&](CellPosterior p) { out.push_back(std::move(p)); });
  return out;
}

struct ExposureSummary {
  double fraction_above = 0.0;  // population fraction with median > guideline
  double guideline = 10.0;
  double bin_width = 5.0;
  std::vector<double> bin_population;  // bin k covers [k*bin_width, (k+1)*bin_width)
  double total_population = 0.0;
};

inline ExposureSummary population_exposure(const std::vector<CellPosterior>& posteriors,
                                           const std::vector<GridCellRecord>& cells,
                                           double guideline = 10.0, double bin_width = 5.0) {
  if (posteriors.size() != cells.size())
    throw ValidationError("population_exposure: posterior/cell length mismatch");
  if (!(guideline > 0.0) || !(bin_width > 0.0))
    throw ValidationError("population_exposure: guideline and bin width must be positive");
  ExposureSummary s;
  s.guideline = guideline;
  s.bin_width = bin_width;
  double above = 0.0;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    if (posteriors[i].cell_id != cells[i].cell_id)
      throw ValidationError("population_exposure: posterior/cell id mismatch");
    double pop = cells[i].x8_pop;
    s.total_population += pop;
    double med = posteriors[i].summary.median;
    if (med > guideline) above += pop;
    auto bin = static_cast<std::size_t>(med / bin_width);
    if (s.bin_population.size() <= bin) s.bin_population.resize(bin + 1, 0.0);
    s.bin_population[bin] += pop;
  }
  if (s.total_population == 0.0)
    throw ValidationError("population_exposure: total population is zero");
  s.fraction_above = above / s.total_population;
  return s;
}

// Plot-ready exceedance table keyed by cell id.
inline std::string exceedance_product(const std::vector<CellPosterior>& posteriors,
                                      const std::vector<double>& thresholds) {
  for (double t : thresholds)
    if (!(t > 0.0)) throw ValidationError("exceedance_product: thresholds must be positive");
  std::ostringstream os;
  os.precision(10);
  os << "cell_id";
  for (double t : thresholds) os << ",p_exceed_" << t;
  os << '\n';
  for (const auto& p : posteriors) {
    os << p.cell_id;
    for (double t : thresholds) os << ',' << exceed_prob(p.marginal, t);
    os << '\n';
  }
  return os.str();
}

inline std::string predictions_csv(const std::vector<CellPosterior>& posteriors,
                                   const std::vector<double>& thresholds) {
  std::ostringstream os;
  os.precision(10);
  os << "cell_id,median,mean,sd,ci95_halfwidth";
  for (double t : thresholds) os << ",p_exceed_" << t;
  os << '\n';
  for (const auto& p : posteriors) {
    os << p.cell_id << ',' << p.summary.median << ',' << p.summary.mean << ','
       << p.summary.sd << ',' << p.summary.ci95_halfwidth;
    for (double e : p.exceed_prob) os << ',' << e;
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json exposure_json(const ExposureSummary& s) {
  nlohmann::json j;
  j["guideline"] = s.guideline;
  j["fraction_above_guideline"] = s.fraction_above;
  j["total_population"] = s.total_population;
  j["bin_width"] = s.bin_width;
  j["bin_population"] = s.bin_population;
  return j;
}

}  // namespace dimaq
