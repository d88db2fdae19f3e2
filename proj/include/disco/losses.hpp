#pragma once

// Cosine triplet primitive and the three contrastive regularisers, each
// returning its value together with the analytic gradient with respect to
// the differentiable inputs. Prototypes and teacher features are constants.

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "disco/error.hpp"
#include "disco/model.hpp"
#include "disco/random.hpp"

namespace disco {

struct LossWeights {
  double tcon = 0.5;
  double ccon = 0.5;
  double ccd = 1.0;

  void validate() const {
    for (auto [name, v] : {std::pair{"lambda_tcon", tcon}, std::pair{"lambda_ccon", ccon}, std::pair{"lambda_ccd", ccd}}) {
      if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(name) + " must be finite and non-negative");
    }
  }
  bool all_zero() const { return tcon == 0.0 && ccon == 0.0 && ccd == 0.0; }
  bool operator==(const LossWeights&) const = default;
};

// Zero vectors are rejected unless a norm floor is enabled, in which case
// norms below `eps` are clamped to `eps`.
struct CosineOptions {
  bool norm_floor = false;
  double eps = 1e-8;
};

namespace detail {
inline double checked_norm(const Vector& x, const CosineOptions& opt, bool& floored) {
  const double n = x.norm();
  floored = false;
  if (opt.norm_floor && n < opt.eps) {
    floored = true;
    return opt.eps;
  }
  if (!(n > 0.0)) throw NumericError("cosine similarity of a zero vector");
  if (!std::isfinite(n)) throw NumericError("cosine similarity of a non-finite vector");
  return n;
}
}  // namespace detail

inline double cosine_similarity(const Vector& x, const Vector& y, const CosineOptions& opt = {}) {
  if (x.size() != y.size()) throw DataError("cosine_similarity: dimension mismatch");
  bool fx = false, fy = false;
  return x.dot(y) / (detail::checked_norm(x, opt, fx) * detail::checked_norm(y, opt, fy));
}

struct CosineGrad {
  double value = 0.0;
  Vector dx, dy;
};

// dS/dx = y/(|x||y|) - S x/|x|^2, symmetric in y.
inline CosineGrad cosine_with_grad(const Vector& x, const Vector& y, const CosineOptions& opt = {}) {
  if (x.size() != y.size()) throw DataError("cosine_similarity: dimension mismatch");
  bool fx = false, fy = false;
  const double nx = detail::checked_norm(x, opt, fx);
  const double ny = detail::checked_norm(y, opt, fy);
  CosineGrad g;
  g.value = x.dot(y) / (nx * ny);
  g.dx = y / (nx * ny);
  g.dy = x / (nx * ny);
  if (!fx) g.dx -= (g.value / (nx * nx)) * x;
  if (!fy) g.dy -= (g.value / (ny * ny)) * y;
  return g;
}

inline double softplus(double m) { return m > 30.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m)); }
inline double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

// log(1 + exp(1 - S(a,p) + S(a,n)))
inline double triplet(const Vector& a, const Vector& p, const Vector& n, const CosineOptions& opt = {}) {
  return softplus(1.0 - cosine_similarity(a, p, opt) + cosine_similarity(a, n, opt));
}

struct TripletGrad {
  double value = 0.0;
  Vector da, dp, dn;
};

inline TripletGrad triplet_with_grad(const Vector& a, const Vector& p, const Vector& n, const CosineOptions& opt = {}) {
  const CosineGrad ap = cosine_with_grad(a, p, opt);
  const CosineGrad an = cosine_with_grad(a, n, opt);
  const double margin = 1.0 - ap.value + an.value;
  const double s = sigmoid(margin);
  return TripletGrad{softplus(margin), s * (an.dx - ap.dx), -s * ap.dy, s * an.dy};
}

// Loss value plus gradient w.r.t. the rows of the differentiable input.
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

// Task-level contrast: every anchor against the running batch prototype
// (positive) and each earlier task prototype (negative), averaged over the
// N x (t-1) triplets. Zero when there are no earlier tasks.
inline LossResult tcon(const Matrix& anchors, const Vector& positive, const std::vector<Vector>& negatives,
                       const CosineOptions& opt = {}) {
  if (anchors.rows() == 0) throw DataError("tcon: empty anchor batch");
  LossResult r{0.0, Matrix::Zero(anchors.rows(), anchors.cols())};
  if (negatives.empty()) return r;
  const double scale = 1.0 / (static_cast<double>(anchors.rows()) * static_cast<double>(negatives.size()));
  for (Eigen::Index j = 0; j < anchors.rows(); ++j) {
    const Vector a = anchors.row(j).transpose();
    const CosineGrad ap = cosine_with_grad(a, positive, opt);
    for (const Vector& neg : negatives) {
      const CosineGrad an = cosine_with_grad(a, neg, opt);
      const double margin = 1.0 - ap.value + an.value;
      r.value += softplus(margin);
      r.grad.row(j) += (scale * sigmoid(margin)) * (an.dx - ap.dx).transpose();
    }
  }
  r.value *= scale;
  return r;
}

struct CconResult : LossResult {
  // (anchor, positive, negative) row indices actually used.
  std::vector<std::array<Eigen::Index, 3>> triplets;
};

// Class-level contrast: each anchor with at least one same-label peer and one
// other-label sample draws one positive and one negative uniformly from `rng`.
// Mean over eligible anchors; zero when none are eligible.
inline CconResult ccon(const Matrix& features, const std::vector<int>& labels, Rng& rng, const CosineOptions& opt = {}) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw DataError("ccon: labels and features differ in length");
  if (features.rows() == 0) throw DataError("ccon: empty batch");
  CconResult r;
  r.grad = Matrix::Zero(features.rows(), features.cols());
  std::vector<Eigen::Index> same, other;
  for (Eigen::Index j = 0; j < features.rows(); ++j) {
    same.clear();
    other.clear();
    for (Eigen::Index k = 0; k < features.rows(); ++k) {
      if (k == j) continue;
      (labels[static_cast<std::size_t>(k)] == labels[static_cast<std::size_t>(j)] ? same : other).push_back(k);
    }
    if (same.empty() || other.empty()) continue;
    const Eigen::Index p = same[rng.uniform_index(same.size())];
    const Eigen::Index n = other[rng.uniform_index(other.size())];
    r.triplets.push_back({j, p, n});
  }
  if (r.triplets.empty()) return r;
  const double scale = 1.0 / static_cast<double>(r.triplets.size());
  for (const auto& [j, p, n] : r.triplets) {
    const TripletGrad g = triplet_with_grad(features.row(j).transpose(), features.row(p).transpose(),
                                            features.row(n).transpose(), opt);
    r.value += g.value;
    r.grad.row(j) += scale * g.da.transpose();
    r.grad.row(p) += scale * g.dp.transpose();
    r.grad.row(n) += scale * g.dn.transpose();
  }
  r.value *= scale;
  return r;
}

enum class CcdNormalization { kMean, kSum };

// Cross-task contrastive distillation over a rehearsal batch: for every pair
// (j, k) with different labels, Triplet(student_j, teacher_j, student_k).
// Gradient is w.r.t. the student rows only.
inline LossResult ccd(const Matrix& student, const Matrix& teacher, const std::vector<int>& labels,
                      CcdNormalization norm = CcdNormalization::kMean, const CosineOptions& opt = {}) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols() ||
      static_cast<std::size_t>(student.rows()) != labels.size()) {
    throw DataError("ccd: teacher, student and label batches are misaligned");
  }
  LossResult r{0.0, Matrix::Zero(student.rows(), student.cols())};
  std::size_t pairs = 0;
  for (Eigen::Index j = 0; j < student.rows(); ++j) {
    const Vector a = student.row(j).transpose();
    const CosineGrad ap = cosine_with_grad(a, teacher.row(j).transpose(), opt);
    for (Eigen::Index k = 0; k < student.rows(); ++k) {
      if (labels[static_cast<std::size_t>(k)] == labels[static_cast<std::size_t>(j)]) continue;
      const CosineGrad an = cosine_with_grad(a, student.row(k).transpose(), opt);
      const double margin = 1.0 - ap.value + an.value;
      const double s = sigmoid(margin);
      r.value += softplus(margin);
      r.grad.row(j) += s * (an.dx - ap.dx).transpose();
      r.grad.row(k) += s * an.dy.transpose();
      ++pairs;
    }
  }
  if (pairs > 0 && norm == CcdNormalization::kMean) {
    r.value /= static_cast<double>(pairs);
    r.grad /= static_cast<double>(pairs);
  }
  return r;
}

inline double total_loss(double baseline, double tcon_value, double ccon_value, double ccd_value, const LossWeights& w) {
  for (auto [name, v] : {std::pair{"baseline", baseline}, std::pair{"tcon", tcon_value}, std::pair{"ccon", ccon_value},
                         std::pair{"ccd", ccd_value}}) {
    if (!std::isfinite(v)) throw NumericError(std::string("total_loss: non-finite ") + name + " term");
  }
  return baseline + w.tcon * tcon_value + w.ccon * ccon_value + w.ccd * ccd_value;
}

}  // namespace disco
