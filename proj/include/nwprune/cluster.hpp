#pragma once

// Average-linkage agglomerative clustering of conv filters under cosine
// similarity.
//
// Clusters start as singletons and the most similar pair is merged while its
// average mutual similarity
//
//     sim(A, B) = sum_{i in A, j in B} cos(phi_i, phi_j) / (|A| * |B|)
//
// is strictly greater than the threshold tau. Pair averages are maintained
// with the Lance-Williams update for arithmetic-average linkage,
//
//     sim(A u B, C) = (|A| sim(A, C) + |B| sim(B, C)) / (|A| + |B|),
//
// and candidates sit in a max-heap with lazy deletion, giving O(n^2 log n).
//
// Conventions:
//   * A cluster is identified by its smallest member index.
//   * Ties on similarity go to the pair with the smallest (lower id, higher id).
//   * Zero-norm vectors have similarity 0 with everything.
//   * Similarities are computed in double precision from float weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "nwprune/featurize.hpp"

namespace nwprune {

inline double cosine_sim(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_sim: vector lengths differ");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += double{u[i]} * double{v[i]};
    uu += double{u[i]} * double{u[i]};
    vv += double{v[i]} * double{v[i]};
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

/// Dense symmetric n x n matrix of pairwise cosine similarities.
struct SimilarityMatrix {
  std::int64_t n = 0;
  std::vector<double> entries;  // row-major

  double operator()(std::int64_t i, std::int64_t j) const { return entries[static_cast<std::size_t>(i * n + j)]; }
  double& operator()(std::int64_t i, std::int64_t j) { return entries[static_cast<std::size_t>(i * n + j)]; }
};

/// Builds the similarity matrix as a Gram matrix of unit-normalised columns.
inline SimilarityMatrix similarity_matrix(const FilterMatrix& fm) {
  using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>> w(
      fm.data.data(), fm.rows, fm.cols);
  MatD unit = w.cast<double>();
  std::vector<bool> nonzero(static_cast<std::size_t>(fm.cols));
  for (Eigen::Index j = 0; j < unit.cols(); ++j) {
    const double norm = unit.col(j).norm();
    nonzero[static_cast<std::size_t>(j)] = norm > 0.0;
    if (norm > 0.0)
      unit.col(j) /= norm;
    else
      unit.col(j).setZero();
  }
  MatD gram = MatD::Zero(fm.cols, fm.cols);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(unit.transpose());

  SimilarityMatrix s;
  s.n = fm.cols;
  s.entries.assign(static_cast<std::size_t>(fm.cols * fm.cols), 0.0);
  for (std::int64_t j = 0; j < fm.cols; ++j) {
    for (std::int64_t i = j + 1; i < fm.cols; ++i) {
      const double v = std::clamp(gram(i, j), -1.0, 1.0);
      s(i, j) = v;
      s(j, i) = v;
    }
    s(j, j) = nonzero[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  }
  return s;
}

/// Mean similarity over all cross pairs of two disjoint, non-empty index sets.
inline double avg_cluster_sim(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                              const SimilarityMatrix& s) {
  if (a.empty() || b.empty()) throw std::invalid_argument("avg_cluster_sim: empty cluster");
  for (auto i : a)
    if (std::find(b.begin(), b.end(), i) != b.end())
      throw std::invalid_argument("avg_cluster_sim: clusters overlap at index " + std::to_string(i));
  double sum = 0.0;
  for (auto i : a)
    for (auto j : b) sum += s(i, j);
  return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

/// One agglomeration step. `lower` and `upper` are cluster ids (smallest
/// member index), lower < upper; the merged cluster keeps id `lower`.
struct Merge {
  std::int64_t lower = 0;
  std::int64_t upper = 0;
  double similarity = 0.0;
  std::int64_t size = 0;  // size of the merged cluster

  friend bool operator==(const Merge&, const Merge&) = default;
};

struct Clustering {
  double tau = 1.0;
  // Dense cluster labels 0..n_f-1, numbered in order of each cluster's smallest member.
  std::vector<std::int64_t> assignments;
  std::vector<Merge> merge_log;
  std::int64_t n_f = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(assignments.size()); }

  /// Members of each cluster, clusters ordered by label, members ascending.
  std::vector<std::vector<std::int64_t>> clusters() const {
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(n_f));
    for (std::int64_t i = 0; i < size(); ++i) out[static_cast<std::size_t>(assignments[i])].push_back(i);
    return out;
  }
};

/// Full merge history. Cutting at tau replays merges up to the first one whose
/// similarity is not strictly above tau, which is exactly the sequence a
/// standalone run with stop threshold tau would perform.
struct Dendrogram {
  std::int64_t n = 0;
  std::vector<Merge> merges;

  Clustering cut(double tau) const {
    std::vector<std::int64_t> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), std::int64_t{0});
    auto root = [&](std::int64_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    Clustering c;
    c.tau = tau;
    for (const auto& m : merges) {
      if (!(m.similarity > tau)) break;
      parent[root(m.upper)] = root(m.lower);
      c.merge_log.push_back(m);
    }
    c.assignments.assign(static_cast<std::size_t>(n), -1);
    std::vector<std::int64_t> label(static_cast<std::size_t>(n), -1);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto r = root(i);
      if (label[r] < 0) label[r] = c.n_f++;
      c.assignments[i] = label[r];
    }
    return c;
  }
};

namespace detail {

struct Candidate {
  double similarity;
  std::int64_t lower;
  std::int64_t upper;
  std::uint32_t gen_lower;
  std::uint32_t gen_upper;
};

// Heap order: larger similarity first, then lexicographically smaller pair.
struct CandidateLess {
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.similarity != b.similarity) return a.similarity < b.similarity;
    if (a.lower != b.lower) return a.lower > b.lower;
    return a.upper > b.upper;
  }
};

}  // namespace detail

/// Runs the agglomeration until no pair exceeds stop_tau (or one cluster is
/// left). Pass -infinity to build the complete dendrogram.
inline Dendrogram build_dendrogram(const SimilarityMatrix& s,
                                   double stop_tau = -std::numeric_limits<double>::infinity()) {
  const std::int64_t n = s.n;
  Dendrogram d;
  d.n = n;
  if (n <= 1) return d;

  std::vector<double> link = s.entries;  // average linkage between live clusters, indexed by id
  std::vector<std::int64_t> size(static_cast<std::size_t>(n), 1);
  std::vector<std::uint32_t> gen(static_cast<std::size_t>(n), 0);
  std::vector<bool> alive(static_cast<std::size_t>(n), true);
  auto at = [&](std::int64_t i, std::int64_t j) -> double& { return link[static_cast<std::size_t>(i * n + j)]; };

  std::vector<detail::Candidate> init;
  init.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) init.push_back({at(i, j), i, j, 0, 0});
  std::priority_queue<detail::Candidate, std::vector<detail::Candidate>, detail::CandidateLess> heap(
      detail::CandidateLess{}, std::move(init));

  std::int64_t live = n;
  while (live > 1 && !heap.empty()) {
    const detail::Candidate top = heap.top();
    if (!alive[top.lower] || !alive[top.upper] || gen[top.lower] != top.gen_lower || gen[top.upper] != top.gen_upper) {
      heap.pop();
      continue;
    }
    if (!(top.similarity > stop_tau)) break;
    heap.pop();

    const std::int64_t a = top.lower, b = top.upper;
    const double sa = static_cast<double>(size[a]), sb = static_cast<double>(size[b]);
    alive[b] = false;
    size[a] += size[b];
    ++gen[a];
    --live;
    d.merges.push_back({a, b, top.similarity, size[a]});

    for (std::int64_t c = 0; c < n; ++c) {
      if (!alive[c] || c == a) continue;
      const double merged = (sa * at(a, c) + sb * at(b, c)) / (sa + sb);
      at(a, c) = merged;
      at(c, a) = merged;
      const auto lo = std::min(a, c), hi = std::max(a, c);
      heap.push({merged, lo, hi, gen[lo], gen[hi]});
    }
  }
  return d;
}

inline Clustering agglomerate(const SimilarityMatrix& s, double tau) { return build_dendrogram(s, tau).cut(tau); }

inline Clustering agglomerate(const FilterMatrix& fm, double tau) { return agglomerate(similarity_matrix(fm), tau); }

struct SweepPoint {
  double tau = 0.0;
  std::int64_t n_f = 0;

  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

/// n_f for each threshold, from one dendrogram cut repeatedly.
inline std::vector<SweepPoint> sweep(const SimilarityMatrix& s, std::span<const double> taus) {
  if (taus.empty()) throw std::invalid_argument("sweep: no thresholds given");
  const Dendrogram d = build_dendrogram(s);
  std::vector<SweepPoint> out;
  out.reserve(taus.size());
  for (double tau : taus) out.push_back({tau, d.cut(tau).n_f});
  return out;
}

inline std::vector<SweepPoint> sweep(const FilterMatrix& fm, std::span<const double> taus) {
  return sweep(similarity_matrix(fm), taus);
}

/// Evenly spaced thresholds lo, lo+step, ..., hi; endpoints snapped to avoid drift.
inline std::vector<double> tau_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw std::invalid_argument("tau_grid: need step > 0 and lo <= hi");
  const auto count = static_cast<std::int64_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    // Round to 1e-12 so 0.1*3 prints and compares as 0.3.
    out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
  }
  return out;
}

}  // namespace nwprune
