#pragma once

// Sparse symmetric precision-matrix algebra for GMRF priors: iid, nested-tree
// and ICAR precision builders plus the Cholesky machinery inference rests on.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <map>
#include <utility>
#include <vector>

#include "dimaq/common.hpp"

namespace dimaq {

// Symmetric sparse precision matrix. Only the upper triangle (row <= col) is
// stored; symmetry is implied on densification. Entries are kept sorted with
// no duplicate coordinates.
class SparsePrecision {
 public:
  struct Entry {
    int row;
    int col;
    double value;
  };

  SparsePrecision() : n_(0) {}
  explicit SparsePrecision(int n) : n_(n) {}

  int dim() const { return n_; }
  const std::vector<Entry>& entries() const { return entries_; }

  // Accumulates into (i,j); callers may add in any order, finalize() merges.
  void add(int i, int j, double value) {
    if (i > j) std::swap(i, j);
    pending_.push_back({i, j, value});
  }

  void finalize() {
    std::sort(pending_.begin(), pending_.end(), [](const Entry& a, const Entry& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    entries_.clear();
    for (const Entry& e : pending_) {
      if (!entries_.empty() && entries_.back().row == e.row && entries_.back().col == e.col)
        entries_.back().value += e.value;
      else
        entries_.push_back(e);
    }
    pending_.clear();
    for (const Entry& e : entries_)
      if (e.row == e.col && e.value < 0.0)
        throw ValidationError("negative diagonal in precision matrix at index " +
                              std::to_string(e.row));
  }

  Eigen::SparseMatrix<double> to_eigen() const {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(entries_.size() * 2);
    for (const Entry& e : entries_) {
      trips.emplace_back(e.row, e.col, e.value);
      if (e.row != e.col) trips.emplace_back(e.col, e.row, e.value);
    }
    Eigen::SparseMatrix<double> m(n_, n_);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
  }

  Eigen::MatrixXd to_dense() const { return Eigen::MatrixXd(to_eigen()); }

  // Embeds `block` at diagonal offset; used when assembling block-diagonal priors.
  void add_block(const SparsePrecision& block, int offset) {
    for (const Entry& e : block.entries()) add(e.row + offset, e.col + offset, e.value);
  }

  double mean_diagonal() const {
    double s = 0.0;
    for (const Entry& e : entries_)
      if (e.row == e.col) s += e.value;
    return n_ > 0 ? s / n_ : 0.0;
  }

  void add_diagonal_jitter(double eps) {
    for (int i = 0; i < n_; ++i) pending_.push_back({i, i, eps});
    for (const Entry& e : entries_) pending_.push_back(e);
    entries_.clear();
    finalize();
  }

 private:
  int n_;
  std::vector<Entry> entries_;
  std::vector<Entry> pending_;
};

// Undirected adjacency over n nodes; no self loops, lists kept sorted.
struct AdjacencyGraph {
  int n = 0;
  std::vector<std::vector<int>> neighbors;

  static AdjacencyGraph from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
    AdjacencyGraph g;
    g.n = n;
    g.neighbors.assign(n, {});
    for (auto [a, b] : edges) {
      if (a == b) continue;
      if (a < 0 || a >= n || b < 0 || b >= n)
        throw InvalidGraphError("edge endpoint out of range: " + std::to_string(a) + "," +
                                std::to_string(b));
      g.neighbors[a].push_back(b);
      g.neighbors[b].push_back(a);
    }
    for (auto& nb : g.neighbors) {
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    return g;
  }

  int degree(int i) const { return static_cast<int>(neighbors[i].size()); }

  void check_symmetric() const {
    for (int i = 0; i < n; ++i)
      for (int j : neighbors[i])
        if (!std::binary_search(neighbors[j].begin(), neighbors[j].end(), i))
          throw InvalidGraphError("asymmetric adjacency: " + std::to_string(i) + " -> " +
                                  std::to_string(j));
  }

  // Component label per node, labels dense from 0.
  std::vector<int> connected_components() const {
    std::vector<int> comp(n, -1);
    int next = 0;
    std::vector<int> stack;
    for (int s = 0; s < n; ++s) {
      if (comp[s] >= 0) continue;
      comp[s] = next;
      stack.push_back(s);
      while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : neighbors[v])
          if (comp[w] < 0) {
            comp[w] = next;
            stack.push_back(w);
          }
      }
      ++next;
    }
    return comp;
  }
};

// Stacked-deviation layout of the geographic tree: [super-regions | regions |
// countries]. Orphan checks happen at construction time.
struct NestedTree {
  int n_super = 0;
  std::vector<int> region_super;    // region -> super-region
  std::vector<int> country_region;  // country -> region

  int n_regions() const { return static_cast<int>(region_super.size()); }
  int n_countries() const { return static_cast<int>(country_region.size()); }

  void validate() const {
    for (std::size_t j = 0; j < region_super.size(); ++j)
      if (region_super[j] < 0 || region_super[j] >= n_super)
        throw InvalidHierarchyError("region " + std::to_string(j) +
                                    " maps to no super-region");
    for (std::size_t i = 0; i < country_region.size(); ++i)
      if (country_region[i] < 0 || country_region[i] >= n_regions())
        throw InvalidHierarchyError("country " + std::to_string(i) + " maps to no region");
  }
};

inline SparsePrecision build_iid_precision(int n, double tau) {
  if (n < 1) throw ValidationError("iid precision needs n >= 1");
  if (!(tau > 0.0))
    throw InvalidHyperparameterError("iid precision needs tau > 0, got " + std::to_string(tau));
  SparsePrecision q(n);
  for (int i = 0; i < n; ++i) q.add(i, i, tau);
  q.finalize();
  return q;
}

// Joint ICAR precision Q = (D - A) / psi2. Improper: row sums are exactly zero
// and the null space has one dimension per connected component.
inline SparsePrecision build_icar_precision(const AdjacencyGraph& graph, double psi2) {
  if (!(psi2 > 0.0))
    throw InvalidHyperparameterError("ICAR needs psi2 > 0, got " + std::to_string(psi2));
  graph.check_symmetric();
  SparsePrecision q(graph.n);
  for (int i = 0; i < graph.n; ++i) {
    q.add(i, i, graph.degree(i) / psi2);
    for (int j : graph.neighbors[i])
      if (j > i) q.add(i, j, -1.0 / psi2);
  }
  q.finalize();
  return q;
}

// Per-level precisions for the stacked deviations; taus ordered
// [super-region, region, country].
inline SparsePrecision build_nested_tree_precision(const NestedTree& tree,
                                                   const std::vector<double>& taus) {
  tree.validate();
  if (taus.size() != 3) throw ValidationError("nested tree expects 3 level precisions");
  for (double t : taus)
    if (!(t > 0.0)) throw InvalidHyperparameterError("nested tree precision must be positive");
  int n = tree.n_super + tree.n_regions() + tree.n_countries();
  SparsePrecision q(n);
  int off = 0;
  q.add_block(build_iid_precision(tree.n_super, taus[0]), off);
  off += tree.n_super;
  if (tree.n_regions() > 0) q.add_block(build_iid_precision(tree.n_regions(), taus[1]), off);
  off += tree.n_regions();
  if (tree.n_countries() > 0) q.add_block(build_iid_precision(tree.n_countries(), taus[2]), off);
  q.finalize();
  return q;
}

// Sparse Cholesky P Q P^T = L L^T with AMD fill-reducing ordering.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const SparsePrecision& q) : n_(q.dim()) {
    Eigen::SparseMatrix<double> m = q.to_eigen();
    solver_.compute(m);
    if (solver_.info() != Eigen::Success) {
      int pivot = find_bad_pivot(q);
      throw NotPositiveDefiniteError(
          "precision matrix is not positive definite (pivot " + std::to_string(pivot) + ")",
          pivot);
    }
    Eigen::SparseMatrix<double> l(solver_.matrixL());
    log_det_ = 0.0;
    // Numerically singular inputs (e.g. an unconstrained ICAR block) can slip
    // through Eigen's pivot check with a pivot at roundoff scale; reject them.
    const double floor = 1e-12 * std::max(q.mean_diagonal(), 1e-300);
    for (int i = 0; i < n_; ++i) {
      double d2 = l.coeff(i, i) * l.coeff(i, i);
      if (!(d2 > floor)) {
        int pivot = find_bad_pivot(q);
        throw NotPositiveDefiniteError(
            "precision matrix is numerically singular (pivot " +
                std::to_string(pivot < 0 ? i : pivot) + ")",
            pivot < 0 ? i : pivot);
      }
      log_det_ += 2.0 * std::log(l.coeff(i, i));
    }
  }

  int dim() const { return n_; }
  double log_det() const { return log_det_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    if (b.size() != n_) throw DimensionError("solve: rhs length mismatch");
    return solver_.solve(b);
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    if (b.rows() != n_) throw DimensionError("solve: rhs rows mismatch");
    return solver_.solve(b);
  }

  // ||L^{-1} P a||^2 = a^T Q^{-1} a, one triangular solve.
  double quad_inverse(const Eigen::VectorXd& a) const {
    Eigen::VectorXd w = solver_.permutationP() * a;
    solver_.matrixL().solveInPlace(w);
    return w.squaredNorm();
  }

  // (Q^{-1})_ii by n triangular solves against unit vectors.
  Eigen::VectorXd marginal_variances() const {
    Eigen::VectorXd v(n_);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n_);
    for (int i = 0; i < n_; ++i) {
      e[i] = 1.0;
      v[i] = quad_inverse(e);
      e[i] = 0.0;
    }
    return v;
  }

  Eigen::SparseMatrix<double> lower() const {
    return Eigen::SparseMatrix<double>(solver_.matrixL());
  }
  Eigen::PermutationMatrix<Eigen::Dynamic> permutation() const { return solver_.permutationP(); }

 private:
  // Dense scan locating the first nonpositive pivot, for the error message.
  static int find_bad_pivot(const SparsePrecision& q) {
    if (q.dim() > 4096) return -1;
    Eigen::MatrixXd m = q.to_dense();
    int n = q.dim();
    for (int k = 0; k < n; ++k) {
      Eigen::LLT<Eigen::MatrixXd> llt(m.topLeftCorner(k + 1, k + 1));
      if (llt.info() != Eigen::Success) return k;
    }
    return -1;
  }

  int n_;
  double log_det_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                       Eigen::AMDOrdering<int>>
      solver_;
};

inline CholeskyFactor cholesky(const SparsePrecision& q) { return CholeskyFactor(q); }

inline Eigen::VectorXd solve(const CholeskyFactor& f, const Eigen::VectorXd& b) {
  return f.solve(b);
}

inline Eigen::VectorXd marginal_variances(const CholeskyFactor& f) {
  return f.marginal_variances();
}

}  // namespace dimaq
