#pragma once

// INLA-style engine for Gaussian-observation latent Gaussian models: exact
// conditional of the latent field, Laplace-approximated hyperparameter
// posterior, quasi-Newton mode search, lattice exploration around the mode,
// and Gaussian-mixture latent marginals.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <vector>

#include "dimaq/common.hpp"
#include "dimaq/lgm.hpp"
#include "dimaq/sparse.hpp"

namespace dimaq {

// Latent field conditional theta | psi, Y. With Gaussian observations this is
// exact: Q_post = Q_prior + tau_eps A^T A, mean solves Q_post mean = tau A^T y.
// Sum-to-zero constraints (ICAR components) are applied by conditioning by
// kriging; `mean` is the constrained mean.
class ConditionalGaussian {
 public:
  Eigen::VectorXd mean;               // constrained posterior mean
  Eigen::VectorXd unconstrained_mean;
  std::shared_ptr<CholeskyFactor> factor;  // factor of Q_post
  double tau_eps = 1.0;

  // constraint pieces: U = Q_post^{-1} B^T chol(B Q_post^{-1} B^T)^{-T}
  Eigen::MatrixXd u;          // theta_dim x m, empty when unconstrained
  Eigen::MatrixXd b_qinv_bt;  // m x m
  Eigen::VectorXd b_mean_u;   // B * unconstrained_mean

  int dim() const { return factor->dim(); }
  bool constrained() const { return u.cols() > 0; }

  // a^T Sigma_c a with Sigma_c the (constraint-corrected) posterior covariance
  double quad_form(const Eigen::VectorXd& a) const {
    double v = factor->quad_inverse(a);
    if (constrained()) v -= (u.transpose() * a).squaredNorm();
    return std::max(v, 0.0);
  }

  double marginal_variance(int j) const {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim());
    e[j] = 1.0;
    return quad_form(e);
  }

  Eigen::VectorXd marginal_variances() const {
    Eigen::VectorXd v = factor->marginal_variances();
    if (constrained())
      for (int i = 0; i < dim(); ++i) v[i] -= u.row(i).squaredNorm();
    return v.cwiseMax(0.0);
  }
};

namespace detail {

// Shared per-model quantities that do not depend on psi.
struct ModelWorkspace {
  Eigen::SparseMatrix<double> a;
  Eigen::SparseMatrix<double> ata;
  Eigen::VectorXd aty;
  std::vector<std::vector<int>> constraints;

  explicit ModelWorkspace(const LatentGaussianModel& model) {
    a = model.design();
    ata = Eigen::SparseMatrix<double>(a.transpose() * a);
    aty = a.transpose() * model.y;
    constraints = model.constraint_index_sets();
  }
};

inline SparsePrecision add_likelihood(const SparsePrecision& prior,
                                      const Eigen::SparseMatrix<double>& ata, double tau) {
  SparsePrecision q(prior.dim());
  for (const auto& e : prior.entries()) q.add(e.row, e.col, e.value);
  for (int k = 0; k < ata.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(ata, k); it; ++it)
      if (it.row() <= it.col()) q.add(static_cast<int>(it.row()),
                                      static_cast<int>(it.col()), tau * it.value());
  q.finalize();
  return q;
}

inline double log_normal_quadform(double log_det_prec, int dim, double quad) {
  return 0.5 * log_det_prec - 0.5 * dim * std::log(2.0 * M_PI) - 0.5 * quad;
}

}  // namespace detail

// Evaluator bound to one model; caches the design products across repeated
// psi evaluations (mode search, grid exploration, prediction).
class LaplaceEngine {
 public:
  explicit LaplaceEngine(std::shared_ptr<const LatentGaussianModel> model)
      : model_(std::move(model)), ws_(*model_) {
    model_->validate();
  }

  const LatentGaussianModel& model() const { return *model_; }
  const Eigen::SparseMatrix<double>& design() const { return ws_.a; }

  ConditionalGaussian conditional_posterior(const HyperparameterVector& psi) const {
    SparsePrecision q_prior = assemble_prior_precision(*model_, psi);
    double tau = psi.precision(model_->noise_slot);
    SparsePrecision q_post = detail::add_likelihood(q_prior, ws_.ata, tau);

    ConditionalGaussian cond;
    cond.tau_eps = tau;
    cond.factor = std::make_shared<CholeskyFactor>(q_post);
    cond.unconstrained_mean = cond.factor->solve(Eigen::VectorXd(tau * ws_.aty));
    cond.mean = cond.unconstrained_mean;

    const auto& cons = ws_.constraints;
    if (!cons.empty()) {
      const int m = static_cast<int>(cons.size());
      const int d = model_->theta_dim();
      Eigen::MatrixXd bt = Eigen::MatrixXd::Zero(d, m);
      for (int k = 0; k < m; ++k)
        for (int i : cons[k]) bt(i, k) = 1.0;
      Eigen::MatrixXd w = cond.factor->solve(bt);          // Q^{-1} B^T
      cond.b_qinv_bt = bt.transpose() * w;                 // B Q^{-1} B^T
      Eigen::LLT<Eigen::MatrixXd> llt(cond.b_qinv_bt);
      if (llt.info() != Eigen::Success)
        throw NumericalError("constraint system not positive definite");
      cond.b_mean_u = bt.transpose() * cond.unconstrained_mean;
      cond.mean -= w * llt.solve(cond.b_mean_u);
      // U = W L^{-T} so that Sigma_c = Sigma - U U^T
      cond.u = llt.matrixU().solve<Eigen::OnTheRight>(w);
    }
    return cond;
  }

  // log p~(psi | Y) up to a constant: Laplace ratio evaluated at the
  // (constrained) conditional mode, plus the hyperparameter prior. Exact for
  // Gaussian observations.
  double log_hyper_posterior(const HyperparameterVector& psi) const {
    ConditionalGaussian cond;
    return log_hyper_posterior(psi, &cond);
  }

  double log_hyper_posterior(const HyperparameterVector& psi,
                             ConditionalGaussian* cond_out) const {
    SparsePrecision q_prior = assemble_prior_precision(*model_, psi);
    CholeskyFactor prior_factor(q_prior);
    double tau = psi.precision(model_->noise_slot);
    *cond_out = conditional_posterior(psi);
    const ConditionalGaussian& cond = *cond_out;
    const int d = model_->theta_dim();

    Eigen::VectorXd eta = ws_.a * cond.mean;
    double value = gaussian_loglik(model_->y, eta, tau);

    Eigen::SparseMatrix<double> qp_sp = q_prior.to_eigen();
    double quad_prior = cond.mean.dot(qp_sp * cond.mean);
    value += detail::log_normal_quadform(prior_factor.log_det(), d, quad_prior);

    Eigen::VectorXd dmean = cond.mean - cond.unconstrained_mean;
    double quad_post = 0.0;
    if (cond.constrained()) {
      // (mean - mu_u)^T Q_post (mean - mu_u) via the constraint identity
      Eigen::LLT<Eigen::MatrixXd> llt(cond.b_qinv_bt);
      quad_post = cond.b_mean_u.dot(llt.solve(cond.b_mean_u));
    }
    value -= detail::log_normal_quadform(cond.factor->log_det(), d, quad_post);

    if (cond.constrained()) {
      const auto& cons = ws_.constraints;
      const int m = static_cast<int>(cons.size());
      Eigen::MatrixXd bt = Eigen::MatrixXd::Zero(d, m);
      for (int k = 0; k < m; ++k)
        for (int i : cons[k]) bt(i, k) = 1.0;
      // prior marginal of B theta at 0
      Eigen::MatrixXd wp = prior_factor.solve(bt);
      Eigen::MatrixXd b_qpinv_bt = bt.transpose() * wp;
      value -= detail::log_normal_quadform(-std::log(b_qpinv_bt.determinant()), m, 0.0);
      // posterior marginal of B theta at 0, mean B mu_u
      Eigen::LLT<Eigen::MatrixXd> llt(cond.b_qinv_bt);
      double quad_b = cond.b_mean_u.dot(llt.solve(cond.b_mean_u));
      value += detail::log_normal_quadform(-std::log(cond.b_qinv_bt.determinant()), m, quad_b);
    }

    for (int k = 0; k < model_->n_hyper(); ++k)
      value += model_->hyper_priors[k].log_density(psi.log_precision[k]);
    return value;
  }

 private:
  std::shared_ptr<const LatentGaussianModel> model_;
  detail::ModelWorkspace ws_;
};

struct ModeResult {
  HyperparameterVector psi_hat;
  Eigen::MatrixXd hessian;       // of log p~(psi|Y) at the mode (negative definite)
  double log_density = 0.0;
  int iterations = 0;
  std::vector<Eigen::VectorXd> trajectory;
};

struct NewtonOptions {
  double grad_tol = 1e-5;
  int max_iter = 200;
  double fd_step = 1e-4;
};

namespace detail {

inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    double fp = f(xp);
    xp[i] = x[i] - h;
    double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& x, double h) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd hess(n, n);
  const double f0 = f(x);
  Eigen::VectorXd xp = x;
  for (int i = 0; i < n; ++i) {
    xp[i] = x[i] + h;
    double fp = f(xp);
    xp[i] = x[i] - h;
    double fm = f(xp);
    xp[i] = x[i];
    hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (int j = i + 1; j < n; ++j) {
      xp[i] = x[i] + h;
      xp[j] = x[j] + h;
      double fpp = f(xp);
      xp[j] = x[j] - h;
      double fpm = f(xp);
      xp[i] = x[i] - h;
      double fmm = f(xp);
      xp[j] = x[j] + h;
      double fmp = f(xp);
      xp[i] = x[i];
      xp[j] = x[j];
      hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
    }
  }
  return 0.5 * (hess + hess.transpose());
}

}  // namespace detail

using LogDensity = std::function<double(const Eigen::VectorXd&)>;

// Quasi-Newton (BFGS) ascent on FD gradients with backtracking line search.
inline ModeResult find_mode(const LogDensity& f, const Eigen::VectorXd& x0,
                            const NewtonOptions& opts = {}) {
  const int n = static_cast<int>(x0.size());
  if (n < 1) throw ValidationError("find_mode: empty hyperparameter vector");
  Eigen::VectorXd x = x0;
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  double fx = f(x);
  Eigen::VectorXd g = detail::fd_gradient(f, x, opts.fd_step);

  ModeResult res;
  res.trajectory.push_back(x);
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    if (g.norm() <= opts.grad_tol) break;
    Eigen::VectorXd dir = hinv * g;
    if (dir.dot(g) <= 0.0) {  // not an ascent direction, reset
      hinv.setIdentity();
      dir = g;
    }
    double step = 1.0;
    double fnew = fx;
    Eigen::VectorXd xnew = x;
    bool improved = false;
    for (int ls = 0; ls < 40; ++ls) {
      xnew = x + step * dir;
      try {
        fnew = f(xnew);
      } catch (const NumericalError&) {
        fnew = -std::numeric_limits<double>::infinity();  // step left the feasible scale
      }
      if (std::isfinite(fnew) && fnew >= fx + 1e-4 * step * g.dot(dir)) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      // gradient may be at FD-noise scale; accept current point if near-flat
      if (g.norm() <= 10.0 * opts.grad_tol) break;
      std::string traj;
      for (const auto& t : res.trajectory) {
        traj += " [";
        for (int i = 0; i < t.size(); ++i) traj += (i ? "," : "") + std::to_string(t[i]);
        traj += "]";
      }
      throw NonConvergenceError("mode search stalled after " + std::to_string(it) +
                                " iterations; trajectory:" + traj);
    }
    Eigen::VectorXd gnew = detail::fd_gradient(f, xnew, opts.fd_step);
    Eigen::VectorXd s = xnew - x;
    Eigen::VectorXd yv = gnew - g;  // note: ascent, curvature condition on -f
    double sy = s.dot(-yv);
    if (sy > 1e-12) {
      // BFGS update of the inverse Hessian of -f
      Eigen::VectorXd hy = hinv * (-yv);
      double yhy = (-yv).dot(hy);
      hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
              (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    x = xnew;
    fx = fnew;
    g = gnew;
    res.trajectory.push_back(x);
  }
  if (it >= opts.max_iter && g.norm() > opts.grad_tol) {
    std::string traj = "gradient norm " + std::to_string(g.norm());
    throw NonConvergenceError("mode search did not converge in " +
                              std::to_string(opts.max_iter) + " iterations; " + traj);
  }

  res.psi_hat.log_precision = x;
  res.log_density = fx;
  res.iterations = it;
  res.hessian = detail::fd_hessian(f, x, std::max(opts.fd_step, 1e-3));
  // eigenvalue floor keeps near-flat directions usable downstream
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-res.hessian);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-8);
  res.hessian = -(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  return res;
}

inline LogDensity hyper_log_density(const LaplaceEngine& engine) {
  return [&engine](const Eigen::VectorXd& v) {
    HyperparameterVector psi;
    psi.log_precision = v;
    return engine.log_hyper_posterior(psi);
  };
}

inline ModeResult find_mode(const LaplaceEngine& engine, const HyperparameterVector& psi0,
                            const NewtonOptions& opts = {}) {
  if (engine.model().n_hyper() < 1)
    throw ValidationError("find_mode: model has no hyperparameters");
  return find_mode(hyper_log_density(engine), psi0.log_precision, opts);
}

struct HyperGridPoint {
  HyperparameterVector psi;
  double log_density = 0.0;  // raw log p~(psi|Y)
  double weight = 0.0;       // Delta_h (equal across the lattice)
  std::vector<int> z;        // lattice coordinates in standardized basis
};

struct HyperGrid {
  std::vector<HyperGridPoint> points;
  bool axis_fallback = false;
  int mode_index = 0;

  // normalized mixture weights w_h over grid points
  Eigen::VectorXd normalized_weights() const {
    Eigen::VectorXd w(points.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& p : points) mx = std::max(mx, p.log_density);
    for (std::size_t i = 0; i < points.size(); ++i)
      w[i] = std::exp(points[i].log_density - mx) * points[i].weight;
    return w / w.sum();
  }
};

struct GridOptions {
  double z_step = 0.75;
  double log_drop = 2.5;
  int max_steps_per_axis = 5;
};

// Regular lattice in the eigenbasis of -hessian, grown outward from the mode;
// points whose log-density drop exceeds the threshold are excluded and not
// expanded. Output order is deterministic (lexicographic in z).
inline HyperGrid explore_grid(const LogDensity& f, const ModeResult& mode,
                              const GridOptions& opts = {}) {
  const int d = static_cast<int>(mode.psi_hat.log_precision.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-mode.hessian);
  HyperGrid grid;
  double max_ev = es.eigenvalues().maxCoeff();
  grid.axis_fallback = es.eigenvalues().minCoeff() < 1e-8 * std::max(max_ev, 1.0);
  Eigen::VectorXd sigma = es.eigenvalues().cwiseMax(1e-8).cwiseInverse().cwiseSqrt();
  Eigen::MatrixXd basis = es.eigenvectors();

  double delta = std::pow(opts.z_step, d) * sigma.prod();

  auto psi_at = [&](const std::vector<int>& z) {
    Eigen::VectorXd v = mode.psi_hat.log_precision;
    for (int i = 0; i < d; ++i)
      v += (z[i] * opts.z_step * sigma[i]) * basis.col(i);
    HyperparameterVector psi;
    psi.log_precision = v;
    return psi;
  };

  std::map<std::vector<int>, double> seen;  // z -> log density (kept points)
  std::set<std::vector<int>> rejected;
  std::deque<std::vector<int>> frontier;
  std::vector<int> origin(d, 0);
  double f0 = mode.log_density;
  seen[origin] = f0;
  frontier.push_back(origin);

  while (!frontier.empty()) {
    std::vector<int> z = frontier.front();
    frontier.pop_front();
    for (int axis = 0; axis < d; ++axis) {
      if (grid.axis_fallback) {
        // axis scans only: expand along axis i only from points on axis i
        bool on_axis = true;
        for (int i = 0; i < d; ++i)
          if (i != axis && z[i] != 0) on_axis = false;
        if (!on_axis) continue;
      }
      for (int dir : {-1, 1}) {
        std::vector<int> nz = z;
        nz[axis] += dir;
        if (std::abs(nz[axis]) > opts.max_steps_per_axis) continue;
        if (seen.count(nz) || rejected.count(nz)) continue;
        double fz;
        try {
          fz = f(psi_at(nz).log_precision);
        } catch (const NumericalError&) {
          rejected.insert(nz);
          continue;
        }
        if (f0 - fz > opts.log_drop) {
          rejected.insert(nz);
        } else {
          seen[nz] = fz;
          frontier.push_back(nz);
        }
      }
    }
  }

  for (const auto& [z, fz] : seen) {
    HyperGridPoint p;
    p.z = z;
    p.psi = psi_at(z);
    p.log_density = fz;
    p.weight = delta;
    if (z == origin) grid.mode_index = static_cast<int>(grid.points.size());
    grid.points.push_back(std::move(p));
  }
  return grid;
}

inline HyperGrid explore_grid(const LaplaceEngine& engine, const ModeResult& mode,
                              const GridOptions& opts = {}) {
  return explore_grid(hyper_log_density(engine), mode, opts);
}

// Collapses the grid onto one hyperparameter coordinate: (value, mass) pairs
// summing to one, sorted by value.
inline std::vector<std::pair<double, double>> marginal_hyperparameter(const HyperGrid& grid,
                                                                      int slot) {
  if (grid.points.empty()) throw ValidationError("marginal_hyperparameter: empty grid");
  Eigen::VectorXd w = grid.normalized_weights();
  std::map<double, double> mass;
  for (std::size_t i = 0; i < grid.points.size(); ++i)
    mass[grid.points[i].psi.log_precision[slot]] += w[i];
  return {mass.begin(), mass.end()};
}

enum class MixtureScale { Log, Natural };

struct MixtureMarginal {
  struct Component {
    double mean;
    double sd;
    double weight;
  };
  std::vector<Component> components;
  MixtureScale scale = MixtureScale::Log;

  void validate() const {
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.sd > 0.0)) throw ValidationError("mixture component sd must be positive");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw ValidationError("mixture weights must sum to 1, got " + std::to_string(total));
  }
};

// p~(theta_j | Y) = sum_h N(theta_j; mean_h[j], sd_h[j]) w_h
inline MixtureMarginal marginal_latent(const LaplaceEngine& engine, const HyperGrid& grid,
                                       int j) {
  if (j < 0 || j >= engine.model().theta_dim())
    throw DimensionError("marginal_latent: index out of range");
  Eigen::VectorXd w = grid.normalized_weights();
  MixtureMarginal m;
  m.scale = MixtureScale::Log;
  for (std::size_t h = 0; h < grid.points.size(); ++h) {
    ConditionalGaussian cond = engine.conditional_posterior(grid.points[h].psi);
    m.components.push_back({cond.mean[j], std::sqrt(cond.marginal_variance(j)), w[h]});
  }
  return m;
}

struct MixtureSummary {
  double mean = 0.0;   // natural scale when mixture is log scale
  double sd = 0.0;
  double median = 0.0;
  double ci95_halfwidth = 0.0;
};

namespace detail {

inline double mixture_cdf_log_space(const MixtureMarginal& m, double x) {
  double c = 0.0;
  for (const auto& comp : m.components)
    c += comp.weight * normal_cdf((x - comp.mean) / comp.sd);
  return c;
}

// Bisection on the mixture CDF (in component space) to 1e-8.
inline double mixture_quantile_raw(const MixtureMarginal& m, double p) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : m.components) {
    lo = std::min(lo, c.mean - 10.0 * c.sd);
    hi = std::max(hi, c.mean + 10.0 * c.sd);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-8; ++it) {
    double mid = 0.5 * (lo + hi);
    (mixture_cdf_log_space(m, mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Quantile on the mixture's natural scale (exponentiated for log-scale
// mixtures).
inline double mixture_quantile(const MixtureMarginal& m, double p) {
  double q = detail::mixture_quantile_raw(m, p);
  return m.scale == MixtureScale::Log ? std::exp(q) : q;
}

// P(X > t) with t on the natural scale.
inline double exceed_prob(const MixtureMarginal& m, double t) {
  double thr;
  if (m.scale == MixtureScale::Log) {
    if (!(t > 0.0)) throw ValidationError("exceedance threshold must be positive");
    thr = std::log(t);
  } else {
    thr = t;
  }
  double p = 0.0;
  for (const auto& c : m.components)
    p += c.weight * (1.0 - normal_cdf((thr - c.mean) / c.sd));
  return p;
}

inline MixtureSummary mixture_summaries(const MixtureMarginal& m) {
  m.validate();
  MixtureSummary s;
  if (m.scale == MixtureScale::Log) {
    double e1 = 0.0, e2 = 0.0;
    for (const auto& c : m.components) {
      e1 += c.weight * std::exp(c.mean + 0.5 * c.sd * c.sd);
      e2 += c.weight * std::exp(2.0 * c.mean + 2.0 * c.sd * c.sd);
    }
    s.mean = e1;
    s.sd = std::sqrt(std::max(e2 - e1 * e1, 0.0));
  } else {
    double e1 = 0.0, e2 = 0.0;
    for (const auto& c : m.components) {
      e1 += c.weight * c.mean;
      e2 += c.weight * (c.sd * c.sd + c.mean * c.mean);
    }
    s.mean = e1;
    s.sd = std::sqrt(std::max(e2 - e1 * e1, 0.0));
  }
  s.median = mixture_quantile(m, 0.5);
  s.ci95_halfwidth = 0.5 * (mixture_quantile(m, 0.975) - mixture_quantile(m, 0.025));
  return s;
}

// DIC = Dbar + pD with the deviance evaluated at the plug-in noise precision
// from the grid mode. Dbar uses the closed-form expectation of the quadratic
// form under each conditional Gaussian.
inline double dic(const LaplaceEngine& engine, const HyperGrid& grid,
                  const std::vector<ConditionalGaussian>* precomputed = nullptr) {
  const auto& model = engine.model();
  const int n = model.n_obs();
  Eigen::VectorXd w = grid.normalized_weights();
  int mode = 0;
  for (std::size_t h = 0; h < grid.points.size(); ++h)
    if (grid.points[h].log_density > grid.points[mode].log_density)
      mode = static_cast<int>(h);
  double tau_star = grid.points[mode].psi.precision(model.noise_slot);

  const Eigen::SparseMatrix<double>& a = engine.design();
  Eigen::SparseMatrix<double, Eigen::RowMajor> ar(a);
  double d_bar = 0.0;
  Eigen::VectorXd theta_bar = Eigen::VectorXd::Zero(model.theta_dim());
  for (std::size_t h = 0; h < grid.points.size(); ++h) {
    ConditionalGaussian local;
    if (!precomputed) local = engine.conditional_posterior(grid.points[h].psi);
    const ConditionalGaussian& cond = precomputed ? (*precomputed)[h] : local;
    theta_bar += w[h] * cond.mean;
    Eigen::VectorXd r = model.y - a * cond.mean;
    // expected squared residual: ||y - A mean||^2 + sum_s a_s^T Sigma a_s
    double trace = 0.0;
    for (int s = 0; s < n; ++s) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(model.theta_dim());
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(ar, s); it; ++it)
        row[it.col()] = it.value();
      trace += cond.quad_form(row);
    }
    double e_rss = r.squaredNorm() + trace;
    d_bar += w[h] * (-2.0 * (0.5 * n * std::log(tau_star / (2.0 * M_PI)) -
                             0.5 * tau_star * e_rss));
  }
  double d_at_mean =
      -2.0 * gaussian_loglik(model.y, a * theta_bar, tau_star);
  double p_d = d_bar - d_at_mean;
  return d_bar + p_d;
}

}  // namespace dimaq
