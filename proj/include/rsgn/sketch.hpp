#pragma once

// Random sketching matrices S in R^{l x d} used to pick the subspace of each
// iteration: dense Gaussian, s-hashing, coordinate sampling and the identity.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rsgn/core.hpp"

namespace rsgn {

using Rng = std::mt19937_64;

struct SketchKind {
  enum class Family { Gaussian, Hashing, Sampling, Identity };

  Family family = Family::Sampling;
  /// Nonzeros per column; only meaningful for Hashing.
  int nnz_per_column = 1;

  static SketchKind gaussian() { return {Family::Gaussian, 1}; }
  static SketchKind hashing(int s) { return {Family::Hashing, s}; }
  static SketchKind sampling() { return {Family::Sampling, 1}; }
  static SketchKind identity() { return {Family::Identity, 1}; }

  bool supports_columns() const {
    return family == Family::Sampling || family == Family::Identity;
  }

  /// Compact name, e.g. "gaussian", "hashing:3". Used in trace files.
  std::string name() const {
    switch (family) {
      case Family::Gaussian: return "gaussian";
      case Family::Hashing: return "hashing:" + std::to_string(nnz_per_column);
      case Family::Sampling: return "sampling";
      case Family::Identity: return "identity";
    }
    return "unknown";
  }

  /// Inverse of name(). Accepts "hashing" (s = 1) and "hashing:<s>".
  static SketchKind parse(const std::string& text) {
    if (text == "gaussian") return gaussian();
    if (text == "sampling") return sampling();
    if (text == "identity") return identity();
    if (text == "hashing") return hashing(1);
    if (text.rfind("hashing:", 0) == 0) {
      try {
        std::size_t used = 0;
        const std::string tail = text.substr(8);
        const int s = std::stoi(tail, &used);
        if (used == tail.size() && s >= 1) return hashing(s);
      } catch (const std::exception&) {
      }
    }
    throw ParameterError("unknown sketch kind '" + text + "'");
  }

  friend bool operator==(const SketchKind&, const SketchKind&) = default;
};

/// One nonzero of a sparse sketch.
struct SketchEntry {
  Index row;
  Index col;
  double value;

  friend bool operator==(const SketchEntry&, const SketchEntry&) = default;
};

/// An immutable sampled sketch. Gaussian sketches are stored densely; all
/// other kinds as (row, col, value) triples sorted by column, then row.
class SketchOperator {
 public:
  SketchOperator(SketchKind kind, Index rows, Index cols, Matrix dense)
      : kind_(kind), rows_(rows), cols_(cols), dense_(std::move(dense)) {}

  SketchOperator(SketchKind kind, Index rows, Index cols, std::vector<SketchEntry> entries,
                 std::vector<Index> support = {})
      : kind_(kind),
        rows_(rows),
        cols_(cols),
        entries_(std::move(entries)),
        support_(std::move(support)) {}

  const SketchKind& kind() const { return kind_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  bool is_dense() const { return kind_.family == SketchKind::Family::Gaussian; }
  const Matrix& dense() const { return dense_; }
  const std::vector<SketchEntry>& entries() const { return entries_; }

  /// y -> S y
  Vector apply(const Vector& y) const {
    require_size(y.size(), cols_, "sketch apply");
    if (is_dense()) return dense_ * y;
    Vector out = Vector::Zero(rows_);
    for (const auto& e : entries_) out[e.row] += e.value * y[e.col];
    return out;
  }

  /// s -> S^T s
  Vector apply_transpose(const Vector& s) const {
    require_size(s.size(), rows_, "sketch transpose apply");
    if (is_dense()) return dense_.transpose() * s;
    Vector out = Vector::Zero(cols_);
    for (const auto& e : entries_) out[e.col] += e.value * s[e.row];
    return out;
  }

  /// Selected coordinates in row order for Sampling/Identity; nullopt otherwise.
  std::optional<std::vector<Index>> column_support() const {
    if (!kind_.supports_columns()) return std::nullopt;
    return support_;
  }

  /// Common value of the nonzeros of a Sampling/Identity sketch (sqrt(d/l)).
  double selection_scale() const {
    return std::sqrt(static_cast<double>(cols_) / static_cast<double>(rows_));
  }

  /// S^T as a dense d x l matrix.
  Matrix transpose_dense() const {
    if (is_dense()) return dense_.transpose();
    Matrix out = Matrix::Zero(cols_, rows_);
    for (const auto& e : entries_) out(e.col, e.row) += e.value;
    return out;
  }

 private:
  SketchKind kind_;
  Index rows_;
  Index cols_;
  Matrix dense_;
  std::vector<SketchEntry> entries_;
  std::vector<Index> support_;
};

/// Samples an l x d sketch of the requested kind from `rng`.
inline SketchOperator draw_sketch(const SketchKind& kind, Index l, Index d, Rng& rng) {
  if (l < 1 || d < 1 || l > d) {
    throw DimensionError("sketch requires 1 <= l <= d, got l=" + std::to_string(l) +
                         ", d=" + std::to_string(d));
  }
  using Family = SketchKind::Family;
  switch (kind.family) {
    case Family::Gaussian: {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(l)));
      Matrix s(l, d);
      // Column-major fill keeps the stream order independent of storage details.
      for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < l; ++i) s(i, j) = normal(rng);
      return SketchOperator(kind, l, d, std::move(s));
    }
    case Family::Hashing: {
      const int s = kind.nnz_per_column;
      if (s < 1 || s > l) {
        throw ParameterError("hashing sketch needs 1 <= s <= l, got s=" + std::to_string(s));
      }
      const double mag = 1.0 / std::sqrt(static_cast<double>(s));
      std::uniform_int_distribution<Index> pick_row(0, l - 1);
      std::bernoulli_distribution coin(0.5);
      std::vector<SketchEntry> entries;
      entries.reserve(static_cast<std::size_t>(d) * static_cast<std::size_t>(s));
      std::vector<Index> rows;
      for (Index j = 0; j < d; ++j) {
        rows.clear();
        while (static_cast<int>(rows.size()) < s) {
          const Index r = pick_row(rng);
          if (std::find(rows.begin(), rows.end(), r) == rows.end()) rows.push_back(r);
        }
        std::vector<double> signs(rows.size());
        for (auto& v : signs) v = coin(rng) ? mag : -mag;
        std::vector<std::size_t> order(rows.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a] < rows[b]; });
        for (auto k : order) entries.push_back({rows[k], j, signs[k]});
      }
      return SketchOperator(kind, l, d, std::move(entries));
    }
    case Family::Sampling: {
      const double scale = std::sqrt(static_cast<double>(d) / static_cast<double>(l));
      std::uniform_int_distribution<Index> pick_col(0, d - 1);
      std::vector<Index> support(static_cast<std::size_t>(l));
      for (auto& c : support) c = pick_col(rng);
      std::vector<SketchEntry> entries;
      entries.reserve(support.size());
      for (Index i = 0; i < l; ++i) entries.push_back({i, support[i], scale});
      std::stable_sort(entries.begin(), entries.end(),
                       [](const auto& a, const auto& b) { return a.col < b.col; });
      return SketchOperator(kind, l, d, std::move(entries), std::move(support));
    }
    case Family::Identity: {
      if (l != d) throw DimensionError("identity sketch requires l == d");
      std::vector<SketchEntry> entries;
      std::vector<Index> support;
      for (Index j = 0; j < d; ++j) {
        entries.push_back({j, j, 1.0});
        support.push_back(j);
      }
      return SketchOperator(kind, l, d, std::move(entries), std::move(support));
    }
  }
  throw ParameterError("unhandled sketch family");
}

/// Power-iteration estimate of ||S||_2 (a lower bound that converges from below).
inline double operator_norm_estimate(const SketchOperator& s, int iterations = 100,
                                     std::uint64_t seed = 0) {
  if (iterations < 1) throw ParameterError("power iteration needs at least one iteration");
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Vector v(s.cols());
  for (Index j = 0; j < v.size(); ++j) v[j] = normal(rng);
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Vector sv = s.apply(v);
    estimate = std::max(estimate, sv.norm());
    Vector w = s.apply_transpose(sv);
    const double nw = w.norm();
    if (nw == 0.0) break;
    v = w / nw;
  }
  return estimate;
}

/// Which inequality of the (1 +- eps) norm-preservation condition a trial checks.
enum class EmbeddingSide {
  TwoSided,  ///< (1-eps)|y|^2 <= |Sy|^2 <= (1+eps)|y|^2
  Lower,     ///< (1-eps)|y|^2 <= |Sy|^2 only, the condition the solver relies on
};

/// Fraction of `trials` fresh sketches that violate norm preservation for a fixed
/// vector. When `y` is not given a uniformly random unit direction is used.
inline double embedding_trial(const SketchKind& kind, Index l, Index d, double epsilon,
                              int trials, Rng& rng, std::optional<Vector> y = std::nullopt,
                              EmbeddingSide side = EmbeddingSide::TwoSided) {
  if (trials < 1) throw ParameterError("embedding_trial needs trials >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ParameterError("epsilon must lie in (0, 1)");
  Vector probe;
  if (y) {
    require_size(y->size(), d, "embedding probe");
    probe = *y;
  } else {
    std::normal_distribution<double> normal;
    probe.resize(d);
    for (Index j = 0; j < d; ++j) probe[j] = normal(rng);
  }
  const double ny2 = probe.squaredNorm();
  if (ny2 == 0.0) throw ParameterError("embedding probe must be nonzero");
  int failures = 0;
  for (int t = 0; t < trials; ++t) {
    const double ratio = draw_sketch(kind, l, d, rng).apply(probe).squaredNorm() / ny2;
    const bool low = ratio < 1.0 - epsilon;
    const bool high = side == EmbeddingSide::TwoSided && ratio > 1.0 + epsilon;
    if (low || high) ++failures;
  }
  return static_cast<double>(failures) / static_cast<double>(trials);
}

}  // namespace rsgn
