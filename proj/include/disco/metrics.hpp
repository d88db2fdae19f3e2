#pragma once

// Continual-learning metrics over accuracy matrices, parameter snapshots and
// prediction logs. Every function here is pure.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "disco/error.hpp"
#include "disco/model.hpp"
#include "disco/scenario.hpp"

namespace disco {

// a[k-1][j-1] is the accuracy (percent) on task j after training task k.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::vector<std::vector<double>> rows) : rows_(std::move(rows)) { validate(); }

  std::size_t num_tasks() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

  // 1-based accessor, j <= k.
  double at(std::size_t k, std::size_t j) const {
    if (k < 1 || k > rows_.size() || j < 1 || j > k) throw DataError("accuracy matrix index out of range");
    return rows_[k - 1][j - 1];
  }

  void append_row(std::vector<double> row) {
    rows_.push_back(std::move(row));
    try {
      validate();
    } catch (...) {
      rows_.pop_back();
      throw;
    }
  }

  bool operator==(const AccuracyMatrix&) const = default;

 private:
  void validate() const {
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      if (rows_[k].size() != k + 1) {
        throw DataError("accuracy matrix row " + std::to_string(k + 1) + " has " + std::to_string(rows_[k].size()) +
                        " entries, expected " + std::to_string(k + 1));
      }
      for (double v : rows_[k]) {
        if (!std::isfinite(v) || v < 0.0 || v > 100.0) {
          throw DataError("accuracy matrix row " + std::to_string(k + 1) + ": value outside [0,100]");
        }
      }
    }
  }

  std::vector<std::vector<double>> rows_;
};

struct AverageAccuracy {
  std::vector<double> per_task;  // AA_k
  double overall = 0.0;          // AA
};

inline AverageAccuracy average_accuracy(const AccuracyMatrix& m) {
  if (m.empty()) throw DataError("average_accuracy: empty matrix");
  AverageAccuracy out;
  for (const auto& row : m.rows()) out.per_task.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size()));
  out.overall = std::accumulate(out.per_task.begin(), out.per_task.end(), 0.0) / static_cast<double>(out.per_task.size());
  return out;
}

struct Forgetting {
  std::vector<double> per_task;  // f_j for j = 1..T-1, measured after task T
  double overall = 0.0;          // FM
};

// f_j = max_{j <= i <= T-1} (a_{i,j} - a_{T,j}); negative values (backward
// transfer) are kept.
inline Forgetting forgetting_measure(const AccuracyMatrix& m) {
  const std::size_t t = m.num_tasks();
  if (t < 2) throw DataError("forgetting_measure: needs at least 2 tasks, got " + std::to_string(t));
  Forgetting out;
  for (std::size_t j = 1; j < t; ++j) {
    double worst = m.at(j, j) - m.at(t, j);
    for (std::size_t i = j + 1; i < t; ++i) worst = std::max(worst, m.at(i, j) - m.at(t, j));
    out.per_task.push_back(worst);
  }
  out.overall = std::accumulate(out.per_task.begin(), out.per_task.end(), 0.0) / static_cast<double>(t - 1);
  return out;
}

inline double initial_accuracy(const AccuracyMatrix& m) {
  if (m.empty()) throw DataError("initial_accuracy: empty matrix");
  double sum = 0.0;
  for (std::size_t i = 1; i <= m.num_tasks(); ++i) sum += m.at(i, i);
  return sum / static_cast<double>(m.num_tasks());
}

// ---------------------------------------------------------------------------
// Parameter interference.

// Percentile with linear interpolation between order statistics
// (position q * (n - 1) in the sorted sample).
inline double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct UpdateProfile {
  std::vector<double> delta;    // Δθ_t
  double threshold = 0.0;       // δ_t, upper quartile of |Δθ_t|
  std::vector<std::size_t> high;  // H_t, ascending
  double norm = 0.0;            // ||Δθ_t||_2
};

struct HighMagnitude {
  double threshold = 0.0;
  std::vector<std::size_t> indices;
};

inline HighMagnitude high_magnitude_set(const std::vector<double>& delta) {
  if (delta.empty()) throw DataError("high_magnitude_set: empty update vector");
  std::vector<double> mag(delta.size());
  std::transform(delta.begin(), delta.end(), mag.begin(), [](double v) { return std::abs(v); });
  HighMagnitude out;
  out.threshold = percentile_linear(mag, 0.75);
  for (std::size_t i = 0; i < mag.size(); ++i)
    if (mag[i] > out.threshold) out.indices.push_back(i);
  return out;
}

inline UpdateProfile update_profile(std::vector<double> delta) {
  UpdateProfile p;
  auto hm = high_magnitude_set(delta);
  p.threshold = hm.threshold;
  p.high = std::move(hm.indices);
  p.norm = std::sqrt(std::inner_product(delta.begin(), delta.end(), delta.begin(), 0.0));
  p.delta = std::move(delta);
  return p;
}

inline UpdateProfile update_profile(const ParameterSnapshot& before, const ParameterSnapshot& after) {
  if (before.count() != after.count()) {
    throw DataError("snapshot counts differ: " + std::to_string(before.count()) + " vs " + std::to_string(after.count()));
  }
  std::vector<double> delta(after.count());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = after.values[i] - before.values[i];
  return update_profile(std::move(delta));
}

struct Interference {
  double is = 0.0;   // Jaccard overlap of H_t and H_t'
  double fts = 0.0;  // IS * mean update norm
};

inline Interference interference_and_transfer(const UpdateProfile& a, const UpdateProfile& b) {
  if (a.delta.size() != b.delta.size()) throw DataError("interference_and_transfer: parameter counts differ");
  std::vector<std::size_t> inter, uni;
  std::set_intersection(a.high.begin(), a.high.end(), b.high.begin(), b.high.end(), std::back_inserter(inter));
  std::set_union(a.high.begin(), a.high.end(), b.high.begin(), b.high.end(), std::back_inserter(uni));
  Interference out;
  out.is = uni.empty() ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
  out.fts = out.is * (a.norm + b.norm) / 2.0;
  return out;
}

struct InterferenceSummary {
  std::vector<Interference> transitions;  // (t, t-1) for t = 2..T
  double piv = 0.0;                       // percent
  double pfts = 0.0;
};

// Snapshots s_0..s_T (s_0 before any training).
inline InterferenceSummary piv_pfts(const std::vector<ParameterSnapshot>& snapshots) {
  if (snapshots.size() < 3) {
    throw DataError("piv_pfts: need at least 3 snapshots (2 task transitions), got " + std::to_string(snapshots.size()));
  }
  std::vector<UpdateProfile> profiles;
  for (std::size_t t = 1; t < snapshots.size(); ++t) profiles.push_back(update_profile(snapshots[t - 1], snapshots[t]));
  InterferenceSummary out;
  for (std::size_t t = 1; t < profiles.size(); ++t) out.transitions.push_back(interference_and_transfer(profiles[t], profiles[t - 1]));
  for (const auto& tr : out.transitions) {
    out.piv += tr.is;
    out.pfts += tr.fts;
  }
  out.piv = 100.0 * out.piv / static_cast<double>(out.transitions.size());
  out.pfts /= static_cast<double>(out.transitions.size());
  return out;
}

// ---------------------------------------------------------------------------
// Task inference and intra-task accuracy.

struct Prediction {
  int label = 0;      // ground truth
  int predicted = 0;  // predicted class id
};

inline double task_inference_accuracy(const std::vector<Prediction>& predictions, const ContinualScenario& scenario) {
  if (predictions.empty()) throw DataError("task_inference_accuracy: no predictions");
  std::size_t correct = 0;
  for (const auto& p : predictions) {
    const int predicted_task = scenario.task_of(p.predicted);
    if (predicted_task == 0) throw DataError("prediction " + std::to_string(p.predicted) + " lies outside every task's label set");
    const int true_task = scenario.task_of(p.label);
    if (true_task == 0) throw DataError("ground-truth label " + std::to_string(p.label) + " lies outside every task");
    if (predicted_task == true_task) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
}

// Final-model logits for a set of test samples; column c scores class_order[c].
struct LogitLog {
  std::vector<int> class_order;
  std::vector<int> labels;
  std::vector<int> task_ids;
  Matrix logits;
};

// Argmax over the columns whose class is in `allowed` (all when empty);
// ties go to the lowest column.
inline int masked_argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row, const std::vector<int>& class_order,
                         const std::vector<int>& allowed) {
  int best = -1;
  double best_value = 0.0;
  for (Eigen::Index c = 0; c < row.size(); ++c) {
    const int cls = class_order[static_cast<std::size_t>(c)];
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), cls) == allowed.end()) continue;
    if (best < 0 || row(c) > best_value) {
      best = static_cast<int>(c);
      best_value = row(c);
    }
  }
  return best < 0 ? -1 : class_order[static_cast<std::size_t>(best)];
}

inline std::vector<Prediction> predictions_from(const LogitLog& log) {
  std::vector<Prediction> out;
  for (Eigen::Index r = 0; r < log.logits.rows(); ++r) {
    out.push_back({log.labels[static_cast<std::size_t>(r)], masked_argmax(log.logits.row(r), log.class_order, {})});
  }
  return out;
}

// Accuracy on task j's samples using only the classifier rows of C_j.
inline double intra_task_accuracy(const LogitLog& log, const ContinualScenario& scenario, int j) {
  const auto& allowed = scenario.task(j).labels;
  for (int label : allowed) {
    if (std::find(log.class_order.begin(), log.class_order.end(), label) == log.class_order.end()) {
      throw DataError("intra_task_accuracy: classifier has no row for class " + std::to_string(label));
    }
  }
  std::size_t total = 0, correct = 0;
  for (Eigen::Index r = 0; r < log.logits.rows(); ++r) {
    if (log.task_ids[static_cast<std::size_t>(r)] != j) continue;
    ++total;
    if (masked_argmax(log.logits.row(r), log.class_order, allowed) == log.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  if (total == 0) throw DataError("intra_task_accuracy: no test samples for task " + std::to_string(j));
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

inline double intra_task_accuracy(const ModelBundle& bundle, const TaskDatasetView& test, const ContinualScenario& scenario) {
  LogitLog log;
  log.class_order = bundle.classifier().labels();
  Matrix x(static_cast<Eigen::Index>(test.size()), static_cast<Eigen::Index>(test.shape().size()));
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t c = 0; c < test[i].x.size(); ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = test[i].x[c];
    log.labels.push_back(test[i].label);
    log.task_ids.push_back(test.task_id());
  }
  log.logits = bundle.logits(x);
  return intra_task_accuracy(log, scenario, test.task_id());
}

}  // namespace disco
