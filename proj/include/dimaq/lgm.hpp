#pragma once

// Latent Gaussian model representation: log-scale observations, fixed-effect
// design, random-effect blocks with incidence maps and covariate multipliers,
// and the hyperparameter layout shared with the inference engine.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dimaq/common.hpp"
#include "dimaq/sparse.hpp"

namespace dimaq {

enum class BlockKind { Iid, NestedTree, Icar, GridCell };

// Hyperparameters live in log-precision scale. Slot meanings are declared by
// the model; values are log(tau) for iid/nested/grid-cell levels and
// log(1/psi^2) for ICAR blocks.
struct HyperparameterVector {
  Eigen::VectorXd log_precision;

  int size() const { return static_cast<int>(log_precision.size()); }
  double precision(int slot) const { return std::exp(log_precision[slot]); }
  double variance(int slot) const { return std::exp(-log_precision[slot]); }

  void check_finite() const {
    for (int i = 0; i < size(); ++i)
      if (!std::isfinite(log_precision[i]))
        throw InvalidHyperparameterError("non-finite hyperparameter at slot " +
                                         std::to_string(i));
  }
};

// Gamma(shape, rate) prior on a precision tau, evaluated in v = log(tau)
// coordinates with the Jacobian term included.
struct PrecisionPrior {
  double shape = 1.0;
  double rate = 5e-5;

  double log_density(double log_tau) const {
    double tau = std::exp(log_tau);
    return shape * std::log(rate) - std::lgamma(shape) + shape * log_tau - rate * tau;
  }
};

// One random-effect block. `incidence` maps each observation to a group index:
// the country for NestedTree/Icar, the cell for GridCell, the group for Iid.
// NestedTree blocks stack deviations as [super-regions | regions | countries],
// with sub-levels switchable so a slope can e.g. keep region/super-region iid
// deviations while its country level sits in a separate ICAR block.
struct EffectBlock {
  BlockKind kind = BlockKind::Iid;
  std::string name;
  std::vector<int> incidence;
  std::optional<std::vector<double>> covariate_multiplier;

  int level_count = 0;          // total stacked deviations in this block
  std::vector<int> hyper_slots; // one per sub-level (nested) or single

  // Per-branch variance mode: when nonempty these override the shared
  // sub-level slot, giving each region its own country-level variance and each
  // super-region its own region-level variance.
  std::vector<int> region_slot_by_super;
  std::vector<int> country_slot_by_region;

  // NestedTree only
  NestedTree tree;
  bool include_super = true;
  bool include_region = true;
  bool include_country = true;
  std::vector<uint8_t> region_merged;  // regions collapsed into their super-region

  // Icar only
  AdjacencyGraph graph;

  int computed_level_count() const {
    switch (kind) {
      case BlockKind::NestedTree:
        return (include_super ? tree.n_super : 0) +
               (include_region ? tree.n_regions() : 0) +
               (include_country ? tree.n_countries() : 0);
      case BlockKind::Icar:
        return graph.n;
      default:
        return level_count;
    }
  }

  double multiplier(int obs) const {
    return covariate_multiplier ? (*covariate_multiplier)[obs] : 1.0;
  }

  // Column offsets (within the block) touched by an observation mapped to
  // group g, together with the hierarchy-level slot index for each.
  void columns_for_group(int g, std::vector<std::pair<int, int>>* out) const {
    out->clear();
    switch (kind) {
      case BlockKind::Iid:
      case BlockKind::GridCell:
        out->push_back({g, 0});
        break;
      case BlockKind::Icar:
        out->push_back({g, 0});
        break;
      case BlockKind::NestedTree: {
        int off = 0;
        int region = tree.country_region[g];
        int super = tree.region_super[region];
        int sub = 0;
        if (include_super) {
          out->push_back({off + super, sub});
          off += tree.n_super;
          ++sub;
        }
        if (include_region) {
          bool merged = region < static_cast<int>(region_merged.size()) &&
                        region_merged[region];
          if (!merged) out->push_back({off + region, sub});
          off += tree.n_regions();
          ++sub;
        }
        if (include_country) out->push_back({off + g, sub});
        break;
      }
    }
  }

  SparsePrecision prior_precision(const HyperparameterVector& psi) const {
    int n = computed_level_count();
    SparsePrecision q(n);
    switch (kind) {
      case BlockKind::Iid:
      case BlockKind::GridCell:
        q.add_block(build_iid_precision(n, psi.precision(hyper_slots[0])), 0);
        break;
      case BlockKind::Icar: {
        double psi2 = psi.variance(hyper_slots[0]);
        SparsePrecision icar = build_icar_precision(graph, psi2);
        // jitter keeps the factorization usable; sum-to-zero constraints per
        // connected component restore the intended ICAR law
        icar.add_diagonal_jitter(1e-6 * std::max(icar.mean_diagonal(), 1e-8));
        q.add_block(icar, 0);
        break;
      }
      case BlockKind::NestedTree: {
        int off = 0;
        int sub = 0;
        if (include_super) {
          q.add_block(build_iid_precision(tree.n_super, psi.precision(hyper_slots[sub])), off);
          off += tree.n_super;
          ++sub;
        }
        if (include_region) {
          if (region_slot_by_super.empty()) {
            q.add_block(build_iid_precision(tree.n_regions(), psi.precision(hyper_slots[sub])),
                        off);
          } else {
            for (int j = 0; j < tree.n_regions(); ++j)
              q.add(off + j, off + j, psi.precision(region_slot_by_super[tree.region_super[j]]));
          }
          off += tree.n_regions();
          ++sub;
        }
        if (include_country) {
          if (country_slot_by_region.empty()) {
            q.add_block(
                build_iid_precision(tree.n_countries(), psi.precision(hyper_slots[sub])), off);
          } else {
            for (int i = 0; i < tree.n_countries(); ++i)
              q.add(off + i, off + i,
                    psi.precision(country_slot_by_region[tree.country_region[i]]));
          }
        }
        break;
      }
    }
    q.finalize();
    return q;
  }

  // Sum-to-zero constraint indicator rows (block-local columns), one per ICAR
  // connected component.
  std::vector<std::vector<int>> constraint_groups() const {
    std::vector<std::vector<int>> out;
    if (kind != BlockKind::Icar) return out;
    auto comp = graph.connected_components();
    int n_comp = comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
    out.resize(n_comp);
    for (int i = 0; i < graph.n; ++i) out[comp[i]].push_back(i);
    return out;
  }
};

// theta layout: [fixed coefficients | block 0 deviations | block 1 ... ].
class LatentGaussianModel {
 public:
  Eigen::VectorXd y;            // log(ug/m^3)
  Eigen::MatrixXd fixed_design; // n_obs x (1 + |P|), column 0 = intercept
  std::vector<EffectBlock> blocks;
  int noise_slot = 0;
  std::vector<PrecisionPrior> hyper_priors;  // one per psi slot
  std::vector<std::string> hyper_names;
  std::vector<std::string> fixed_names;
  double fixed_prior_precision = 1e-6;  // effectively flat N(0, 1e6)

  int n_obs() const { return static_cast<int>(y.size()); }
  int n_fixed() const { return static_cast<int>(fixed_design.cols()); }

  int theta_dim() const {
    int d = n_fixed();
    for (const auto& b : blocks) d += b.computed_level_count();
    return d;
  }

  int n_hyper() const { return static_cast<int>(hyper_priors.size()); }

  int block_offset(int b) const {
    int off = n_fixed();
    for (int i = 0; i < b; ++i) off += blocks[i].computed_level_count();
    return off;
  }

  void validate() const {
    if (n_obs() < 1) throw ValidationError("model needs at least one observation");
    for (int i = 0; i < n_obs(); ++i)
      if (!std::isfinite(y[i])) throw ValidationError("non-finite observation " + std::to_string(i));
    if (fixed_design.rows() != n_obs()) throw DimensionError("fixed design row mismatch");
    for (const auto& b : blocks) {
      if (static_cast<int>(b.incidence.size()) != n_obs())
        throw DimensionError("block '" + b.name + "' incidence length mismatch");
      if (b.covariate_multiplier &&
          static_cast<int>(b.covariate_multiplier->size()) != n_obs())
        throw DimensionError("block '" + b.name + "' multiplier length mismatch");
      if (b.kind == BlockKind::GridCell && b.covariate_multiplier)
        throw ValidationError("grid-cell block carries no covariate multiplier");
      for (int slot : b.hyper_slots)
        if (slot < 0 || slot >= n_hyper())
          throw ValidationError("block '" + b.name + "' references unknown hyper slot");
    }
    if (noise_slot < 0 || noise_slot >= n_hyper())
      throw ValidationError("noise slot out of range");
  }

  // Sparse design A with eta = A theta.
  Eigen::SparseMatrix<double> design() const {
    std::vector<Eigen::Triplet<double>> trips;
    const int nf = n_fixed();
    for (int s = 0; s < n_obs(); ++s)
      for (int c = 0; c < nf; ++c)
        if (fixed_design(s, c) != 0.0) trips.emplace_back(s, c, fixed_design(s, c));
    std::vector<std::pair<int, int>> cols;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      int off = block_offset(static_cast<int>(b));
      const auto& blk = blocks[b];
      for (int s = 0; s < n_obs(); ++s) {
        double m = blk.multiplier(s);
        if (m == 0.0) continue;
        blk.columns_for_group(blk.incidence[s], &cols);
        for (auto [col, sub] : cols) trips.emplace_back(s, off + col, m);
      }
    }
    Eigen::SparseMatrix<double> a(n_obs(), theta_dim());
    a.setFromTriplets(trips.begin(), trips.end());
    return a;
  }

  // Sum-to-zero constraint rows over theta (dense indicator rows, sparse in
  // practice); one per ICAR connected component.
  std::vector<std::vector<int>> constraint_index_sets() const {
    std::vector<std::vector<int>> out;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      int off = block_offset(static_cast<int>(b));
      for (auto& grp : blocks[b].constraint_groups()) {
        std::vector<int> idx;
        idx.reserve(grp.size());
        for (int i : grp) idx.push_back(off + i);
        out.push_back(std::move(idx));
      }
    }
    return out;
  }
};

inline SparsePrecision assemble_prior_precision(const LatentGaussianModel& model,
                                                const HyperparameterVector& psi) {
  psi.check_finite();
  if (psi.size() != model.n_hyper())
    throw InvalidHyperparameterError("hyperparameter slot count mismatch: model declares " +
                                     std::to_string(model.n_hyper()) + ", got " +
                                     std::to_string(psi.size()));
  SparsePrecision q(model.theta_dim());
  for (int c = 0; c < model.n_fixed(); ++c) q.add(c, c, model.fixed_prior_precision);
  for (std::size_t b = 0; b < model.blocks.size(); ++b)
    q.add_block(model.blocks[b].prior_precision(psi), model.block_offset(static_cast<int>(b)));
  q.finalize();
  return q;
}

inline Eigen::VectorXd linear_predictor(const LatentGaussianModel& model,
                                        const Eigen::VectorXd& theta) {
  if (theta.size() != model.theta_dim())
    throw DimensionError("linear_predictor: theta dimension mismatch");
  return model.design() * theta;
}

inline double gaussian_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& eta,
                              double tau_eps) {
  if (y.size() != eta.size()) throw DimensionError("gaussian_loglik: length mismatch");
  if (!(tau_eps > 0.0))
    throw InvalidHyperparameterError("gaussian_loglik: tau_eps must be positive");
  const double n = static_cast<double>(y.size());
  return 0.5 * n * std::log(tau_eps / (2.0 * M_PI)) -
         0.5 * tau_eps * (y - eta).squaredNorm();
}

// Dense-encodes arbitrary group ids into [0, level_count), sorted by id.
struct Incidence {
  std::vector<int> index;  // per observation
  int level_count = 0;
};

template <typename Id>
Incidence build_incidence(const std::vector<Id>& assignments) {
  std::map<Id, int> dense;
  for (const Id& id : assignments) dense.emplace(id, 0);
  int next = 0;
  for (auto& [id, idx] : dense) idx = next++;
  Incidence out;
  out.level_count = next;
  out.index.reserve(assignments.size());
  for (const Id& id : assignments) out.index.push_back(dense[id]);
  return out;
}

}  // namespace dimaq
