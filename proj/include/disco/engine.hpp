#pragma once

// Continual training loop: per-task SGD on the baseline loss plus the
// contrastive regularisers, rehearsal buffer upkeep, frozen teachers, and
// evaluation after every task.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "disco/dataset.hpp"
#include "disco/error.hpp"
#include "disco/losses.hpp"
#include "disco/metrics.hpp"
#include "disco/model.hpp"
#include "disco/prototypes.hpp"
#include "disco/random.hpp"
#include "disco/scenario.hpp"

namespace disco {

enum class Baseline { kRehearsalER, kDistillReg };
enum class PrototypeMode { kImage, kText };
enum class BackboneKind { kMlp, kCnn };

inline std::string to_string(Baseline b) { return b == Baseline::kRehearsalER ? "rehearsal_er" : "distill_reg"; }
inline std::string to_string(PrototypeMode m) { return m == PrototypeMode::kImage ? "image" : "text"; }
inline std::string to_string(BackboneKind k) { return k == BackboneKind::kMlp ? "mlp" : "cnn"; }
inline std::string to_string(CcdNormalization n) { return n == CcdNormalization::kMean ? "mean" : "sum"; }

struct ModelSpec {
  BackboneKind backbone = BackboneKind::kMlp;
  std::size_t hidden = 64;
  std::size_t feature_dim = 32;
  std::size_t projector_dim = 128;
  std::size_t cnn_channels1 = 8;
  std::size_t cnn_channels2 = 16;
  bool reinit_projector_per_task = false;
};

struct TrainConfig {
  int epochs = 100;
  std::vector<int> milestones{60, 80};
  double learning_rate = 0.1;
  double decay = 0.1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Baseline baseline = Baseline::kRehearsalER;
  std::size_t buffer_capacity = 200;
  double distill_weight = 1.0;

  bool disco = true;
  LossWeights weights;
  PrototypeMode prototype_mode = PrototypeMode::kImage;
  CcdNormalization ccd_normalization = CcdNormalization::kMean;
  CosineOptions cosine;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] < 1 || milestones[i] >= epochs) throw ConfigError("train.milestones must lie in [1, epochs)");
      if (i && milestones[i] <= milestones[i - 1]) throw ConfigError("train.milestones must be strictly increasing");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(decay > 0.0)) throw ConfigError("train.decay must be positive");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (baseline == Baseline::kRehearsalER && buffer_capacity == 0) {
      throw ConfigError("train.buffer_capacity must be positive for the rehearsal_er baseline");
    }
    if (distill_weight < 0.0) throw ConfigError("train.distill_weight must be non-negative");
    weights.validate();
  }
};

// ---------------------------------------------------------------------------

class RehearsalBuffer {
 public:
  explicit RehearsalBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  const std::map<int, std::vector<Sample>>& store() const { return store_; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [label, items] : store_) n += items.size();
    return n;
  }
  bool empty() const { return size() == 0; }

  std::set<int> labels() const {
    std::set<int> out;
    for (const auto& [label, items] : store_)
      if (!items.empty()) out.insert(label);
    return out;
  }

  // Per-class quota floor(capacity / classes so far). Existing lists are
  // truncated to the quota; new classes get a uniformly random subset. When
  // capacity < classes, classes keep one exemplar each in label order until
  // capacity runs out.
  void update(const TaskDatasetView& task, const std::vector<int>& labels, Rng& rng) {
    std::map<int, std::vector<const Sample*>> by_class;
    for (const auto& s : task) by_class[s.label].push_back(&s);
    for (int label : labels) {
      auto& picks = by_class[label];
      rng.shuffle(std::span<const Sample*>(picks));
      auto& dest = store_[label];
      dest.clear();
      for (const Sample* s : picks) dest.push_back(*s);
    }
    const std::size_t quota = capacity_ / std::max<std::size_t>(store_.size(), 1);
    std::size_t room = capacity_;
    for (auto& [label, items] : store_) {
      const std::size_t keep = quota > 0 ? quota : std::min<std::size_t>(1, room);
      if (items.size() > keep) items.resize(keep);
      room -= std::min(room, items.size());
    }
  }

  // Uniform draw of min(n, size()) exemplars without replacement.
  std::vector<Sample> sample(std::size_t n, Rng& rng) const {
    std::vector<const Sample*> all;
    for (const auto& [label, items] : store_)
      for (const auto& s : items) all.push_back(&s);
    n = std::min(n, all.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform_index(all.size() - i));
      std::swap(all[i], all[j]);
    }
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(*all[i]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::map<int, std::vector<Sample>> store_;
};

inline RehearsalBuffer update_buffer(RehearsalBuffer buffer, const TaskDatasetView& task, const std::vector<int>& labels,
                                     Rng& rng) {
  buffer.update(task, labels, rng);
  return buffer;
}

// ---------------------------------------------------------------------------

inline ModelBundle build_model(const ModelSpec& spec, const Shape& input, std::size_t projector_dim, Rng& rng) {
  std::unique_ptr<Backbone> backbone;
  if (spec.backbone == BackboneKind::kMlp) {
    backbone = std::make_unique<MlpBackbone>(input.size(), spec.hidden, spec.feature_dim, rng);
  } else {
    backbone = std::make_unique<SmallCnnBackbone>(input, spec.cnn_channels1, spec.cnn_channels2, spec.feature_dim, rng);
  }
  return ModelBundle(std::move(backbone), projector_dim, rng);
}

inline Matrix to_matrix(std::span<const Sample> samples, std::size_t dim) {
  Matrix x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t c = 0; c < dim; ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = samples[i].x[c];
  return x;
}

inline Matrix to_matrix(const TaskDatasetView& view) {
  return to_matrix(std::span<const Sample>(&*view.begin(), view.size()), view.shape().size());
}

// Mean softmax cross-entropy; returns the loss and dL/dlogits.
inline std::pair<double, Matrix> cross_entropy(const Matrix& logits, const std::vector<int>& targets) {
  Matrix grad(logits.rows(), logits.cols());
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp().matrix();
    const double z = e.sum();
    const auto target = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
    loss -= (logits(r, target) - mx - std::log(z)) * inv;
    grad.row(r) = e * (inv / z);
    grad(r, target) -= inv;
  }
  return {loss, grad};
}

// Predicted class per row: argmax over all classifier rows, lowest index on ties.
inline std::vector<int> predict(const ModelBundle& bundle, const Matrix& x) {
  const Matrix logits = bundle.logits(x);
  std::vector<int> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out.push_back(masked_argmax(logits.row(r), bundle.classifier().labels(), {}));
  return out;
}

// Called around optimisation steps; used to instrument data isolation and
// teacher frozenness.
struct StepObserver {
  std::function<void(int task, const std::vector<int>& current_labels, const std::vector<int>& replay_labels)> on_batch;
  std::function<void(int task, const ModelBundle* teacher)> on_step;
};

struct StepLosses {
  double baseline = 0.0, tcon = 0.0, ccon = 0.0, ccd = 0.0, total = 0.0;
};

struct RunRecord {
  AccuracyMatrix matrix;
  std::vector<ParameterSnapshot> snapshots;  // s_0..s_T
  PrototypePool pool;
  LogitLog final_logits;
  std::uint64_t config_hash = 0;
};

class ContinualTrainer {
 public:
  ContinualTrainer(const ContinualScenario& scenario, const DatasetSource& source, TrainConfig config, ModelSpec spec,
                   TransformSettings transforms = {}, std::shared_ptr<const TextEmbeddingProvider> text = nullptr)
      : scenario_(scenario),
        source_(source),
        config_(std::move(config)),
        spec_(spec),
        init_rng_(Rng::stream(config_.seed, streams::kInit)),
        batch_rng_(Rng::stream(config_.seed, streams::kBatches)),
        buffer_rng_(Rng::stream(config_.seed, streams::kBuffer)),
        contrast_rng_(Rng::stream(config_.seed, streams::kContrast)),
        buffer_(config_.baseline == Baseline::kRehearsalER ? config_.buffer_capacity : 0),
        text_(std::move(text)),
        bundle_(make_bundle()) {
    for (int t = 1; t <= static_cast<int>(scenario_.num_tasks()); ++t) {
      train_views_.push_back(materialize_task(scenario_, t, source_, Split::kTrain, transforms));
      test_views_.push_back(materialize_task(scenario_, t, source_, Split::kTest, transforms));
      if (train_views_.back().empty()) throw DataError("task " + std::to_string(t) + " has no training samples");
      if (test_views_.back().empty()) throw DataError("task " + std::to_string(t) + ": missing test split");
    }
    snapshots_.push_back(snapshot(bundle_, 0));
  }

  const ModelBundle& model() const { return bundle_; }
  ModelBundle& model() { return bundle_; }
  const RehearsalBuffer& buffer() const { return buffer_; }
  const PrototypePool& pool() const { return pool_; }
  const std::vector<ParameterSnapshot>& snapshots() const { return snapshots_; }
  const std::optional<ModelBundle>& teacher() const { return teacher_; }
  const TrainConfig& config() const { return config_; }
  const ContinualScenario& scenario() const { return scenario_; }
  const TaskDatasetView& train_view(int t) const { return train_views_.at(static_cast<std::size_t>(t - 1)); }
  const TaskDatasetView& test_view(int t) const { return test_views_.at(static_cast<std::size_t>(t - 1)); }
  int tasks_trained() const { return trained_; }
  const std::vector<StepLosses>& last_task_losses() const { return losses_; }

  void set_observer(StepObserver observer) { observer_ = std::move(observer); }

  void train_task(int t) {
    if (t != trained_ + 1) {
      throw ConfigError("train_task: expected task " + std::to_string(trained_ + 1) + ", got " + std::to_string(t));
    }
    const TaskDatasetView& data = train_view(t);
    const TaskSpec& spec = scenario_.task(t);

    const bool wants_teacher = t >= 2 && (config_.baseline == Baseline::kDistillReg ||
                                          (config_.disco && config_.baseline == Baseline::kRehearsalER));
    if (wants_teacher) {
      teacher_ = bundle_;
    } else {
      teacher_.reset();
    }
    bundle_.classifier().expand(spec.labels, init_rng_);
    if (spec_.reinit_projector_per_task && t > 1) bundle_.projector().reinitialize(init_rng_);

    std::vector<double> vel_backbone(bundle_.backbone().parameters().size(), 0.0);
    std::vector<double> vel_projector(bundle_.projector().parameters().size(), 0.0);
    std::vector<double> vel_weights(bundle_.classifier().weights().size(), 0.0);
    std::vector<double> vel_bias(bundle_.classifier().bias().size(), 0.0);

    losses_.clear();
    std::vector<std::size_t> order(data.size());
    const auto batch = static_cast<std::size_t>(config_.batch_size);
    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
      double lr = config_.learning_rate;
      for (int m : config_.milestones)
        if (epoch >= m) lr *= config_.decay;
      std::iota(order.begin(), order.end(), 0);
      batch_rng_.shuffle(std::span<std::size_t>(order));
      for (std::size_t start = 0; start < order.size(); start += batch) {
        std::vector<Sample> current;
        for (std::size_t i = start; i < std::min(start + batch, order.size()); ++i) current.push_back(data[order[i]]);
        std::vector<Sample> replay;
        if (config_.baseline == Baseline::kRehearsalER && !buffer_.empty()) replay = buffer_.sample(batch, buffer_rng_);
        losses_.push_back(step(t, current, replay, lr, vel_backbone, vel_projector, vel_weights, vel_bias));
      }
    }

    if (config_.disco) pool_.finalize_task(t);
    snapshots_.push_back(snapshot(bundle_, t));
    if (config_.baseline == Baseline::kRehearsalER) buffer_.update(data, spec.labels, buffer_rng_);
    trained_ = t;
  }

  // Row k of the accuracy matrix: accuracy on each task j <= k's test set
  // with argmax over every class seen so far.
  std::vector<double> evaluate(int k) const {
    if (k < 1 || k > trained_) throw ConfigError("evaluate: model not trained through task " + std::to_string(k));
    std::vector<double> row;
    for (int j = 1; j <= k; ++j) {
      const TaskDatasetView& test = test_view(j);
      const auto preds = predict(bundle_, to_matrix(test));
      std::size_t correct = 0;
      for (std::size_t i = 0; i < test.size(); ++i) correct += preds[i] == test[i].label ? 1 : 0;
      row.push_back(100.0 * static_cast<double>(correct) / static_cast<double>(test.size()));
    }
    return row;
  }

  // Logits of the current model on every test sample of tasks 1..k.
  LogitLog logit_log(int k) const {
    LogitLog log;
    log.class_order = bundle_.classifier().labels();
    std::vector<Matrix> blocks;
    Eigen::Index rows = 0;
    for (int j = 1; j <= k; ++j) {
      blocks.push_back(bundle_.logits(to_matrix(test_view(j))));
      rows += blocks.back().rows();
      for (const auto& s : test_view(j)) {
        log.labels.push_back(s.label);
        log.task_ids.push_back(j);
      }
    }
    log.logits = Matrix(rows, static_cast<Eigen::Index>(log.class_order.size()));
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
      log.logits.middleRows(at, b.rows()) = b;
      at += b.rows();
    }
    return log;
  }

  // Trains every task in order, evaluating after each.
  RunRecord run(const std::function<void(int)>& after_task = {}) {
    RunRecord record;
    for (int t = trained_ + 1; t <= static_cast<int>(scenario_.num_tasks()); ++t) {
      train_task(t);
      record.matrix.append_row(evaluate(t));
      if (after_task) after_task(t);
    }
    record.snapshots = snapshots_;
    record.pool = pool_;
    record.final_logits = logit_log(trained_);
    return record;
  }

 private:
  ModelBundle make_bundle() {
    config_.validate();
    const std::size_t d = config_.disco && config_.prototype_mode == PrototypeMode::kText
                              ? (text_ ? text_->dim() : throw ConfigError("text prototypes need an embedding provider"))
                              : spec_.projector_dim;
    return build_model(spec_, source_.shape, d, init_rng_);
  }

  static void sgd(std::vector<double>& params, const std::vector<double>& grad, std::vector<double>& vel, double lr,
                  double momentum, double wd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i] + wd * params[i];
      vel[i] = momentum * vel[i] + g;
      params[i] -= lr * vel[i];
    }
  }

  StepLosses step(int t, const std::vector<Sample>& current, const std::vector<Sample>& replay, double lr,
                  std::vector<double>& vel_backbone, std::vector<double>& vel_projector, std::vector<double>& vel_weights,
                  std::vector<double>& vel_bias) {
    const std::size_t dim = source_.shape.size();
    const auto n_cur = static_cast<Eigen::Index>(current.size());
    const auto n_rep = static_cast<Eigen::Index>(replay.size());
    std::vector<Sample> all = current;
    all.insert(all.end(), replay.begin(), replay.end());
    std::vector<int> labels, cur_labels, rep_labels;
    for (const auto& s : current) cur_labels.push_back(s.label);
    for (const auto& s : replay) rep_labels.push_back(s.label);
    labels = cur_labels;
    labels.insert(labels.end(), rep_labels.begin(), rep_labels.end());
    if (observer_.on_batch) observer_.on_batch(t, cur_labels, rep_labels);
    if (observer_.on_step) observer_.on_step(t, teacher_ ? &*teacher_ : nullptr);

    const Matrix x = to_matrix(all, dim);
    ForwardCache cache;
    const Matrix h = bundle_.backbone().forward(x, &cache);

    std::vector<double> g_backbone(bundle_.backbone().parameters().size(), 0.0);
    std::vector<double> g_projector(bundle_.projector().parameters().size(), 0.0);
    std::vector<double> g_weights(bundle_.classifier().weights().size(), 0.0);
    std::vector<double> g_bias(bundle_.classifier().bias().size(), 0.0);

    std::vector<int> targets;
    for (int label : labels) targets.push_back(bundle_.classifier().row_of(label));
    auto [ce, dlogits] = cross_entropy(bundle_.classifier().forward(h), targets);
    Matrix dh = bundle_.classifier().backward(h, dlogits, g_weights, g_bias);

    StepLosses out;
    out.baseline = ce;
    if (config_.baseline == Baseline::kDistillReg && teacher_) {
      const Matrix ht = teacher_->features(x.topRows(n_cur));
      const Matrix diff = h.topRows(n_cur) - ht;
      const double scale = config_.distill_weight / (static_cast<double>(n_cur) * static_cast<double>(h.cols()));
      out.baseline += scale * diff.squaredNorm();
      dh.topRows(n_cur) += (2.0 * scale) * diff;
    }

    if (config_.disco) {
      const Matrix z = bundle_.projector().forward(h);
      const Matrix z_cur = z.topRows(n_cur);
      Vector batch_proto;
      if (config_.prototype_mode == PrototypeMode::kImage) {
        batch_proto = batch_prototype(z_cur).value;
      } else {
        std::set<int> present(cur_labels.begin(), cur_labels.end());
        std::vector<std::string> names;
        for (int label : present) names.push_back(source_.class_name(label));
        batch_proto = text_prototype(names, *text_).value;
      }
      const Vector positive = pool_.accumulate(batch_proto);
      const LossResult tc = tcon(z_cur, positive, pool_.previous(t), config_.cosine);
      const CconResult cc = ccon(z_cur, cur_labels, contrast_rng_, config_.cosine);
      out.tcon = tc.value;
      out.ccon = cc.value;
      Matrix dz = Matrix::Zero(z.rows(), z.cols());
      dz.topRows(n_cur) = config_.weights.tcon * tc.grad + config_.weights.ccon * cc.grad;
      if (config_.baseline == Baseline::kRehearsalER && teacher_ && n_rep > 0) {
        const Matrix zt = teacher_->projector().forward(teacher_->features(x.bottomRows(n_rep)));
        const LossResult cd = ccd(z.bottomRows(n_rep), zt, rep_labels, config_.ccd_normalization, config_.cosine);
        out.ccd = cd.value;
        dz.bottomRows(n_rep) = config_.weights.ccd * cd.grad;
      }
      dh += bundle_.projector().backward(h, dz, g_projector);
    }
    out.total = total_loss(out.baseline, out.tcon, out.ccon, out.ccd, config_.weights);

    bundle_.backbone().backward(cache, dh, g_backbone);
    sgd(bundle_.backbone().parameters(), g_backbone, vel_backbone, lr, config_.momentum, config_.weight_decay);
    sgd(bundle_.projector().parameters(), g_projector, vel_projector, lr, config_.momentum, config_.weight_decay);
    sgd(bundle_.classifier().weights(), g_weights, vel_weights, lr, config_.momentum, config_.weight_decay);
    sgd(bundle_.classifier().bias(), g_bias, vel_bias, lr, config_.momentum, config_.weight_decay);
    return out;
  }

  const ContinualScenario& scenario_;
  const DatasetSource& source_;
  TrainConfig config_;
  ModelSpec spec_;
  Rng init_rng_, batch_rng_, buffer_rng_, contrast_rng_;
  RehearsalBuffer buffer_;
  std::shared_ptr<const TextEmbeddingProvider> text_;
  ModelBundle bundle_;
  std::optional<ModelBundle> teacher_;
  PrototypePool pool_;
  std::vector<ParameterSnapshot> snapshots_;
  std::vector<TaskDatasetView> train_views_, test_views_;
  std::vector<StepLosses> losses_;
  StepObserver observer_;
  int trained_ = 0;
};

// Writes `task_id,label,f0,...` for every sample of the given test views
// (task ids 1..views.size()), using raw backbone or projected features.
inline std::size_t dump_features(const ModelBundle& bundle, const std::vector<TaskDatasetView>& views, std::ostream& sink,
                                 bool projected = false) {
  const std::size_t width = projected ? bundle.projector().out_dim() : bundle.feature_dim();
  sink << "task_id,label";
  for (std::size_t i = 0; i < width; ++i) sink << ",f" << i;
  sink << "\n";
  std::size_t records = 0;
  char buf[32];
  for (const TaskDatasetView& test : views) {
    Matrix f = bundle.features(to_matrix(test));
    if (projected) f = bundle.projector().forward(f);
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      sink << test.task_id() << "," << test[static_cast<std::size_t>(r)].label;
      for (Eigen::Index c = 0; c < f.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.9g", f(r, c));
        sink << "," << buf;
      }
      sink << "\n";
      ++records;
    }
  }
  if (!sink) throw DataError("dump_features: write failed");
  return records;
}

inline std::size_t dump_features(const ContinualTrainer& trainer, int k, std::ostream& sink, bool projected = false) {
  if (k < 1 || k > trainer.tasks_trained()) throw ConfigError("dump_features: model not trained through task " + std::to_string(k));
  std::vector<TaskDatasetView> views;
  for (int j = 1; j <= k; ++j) views.push_back(trainer.test_view(j));
  return dump_features(trainer.model(), views, sink, projected);
}

}  // namespace disco
