#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "disco/engine.hpp"

using namespace disco;

namespace {

DatasetSource blobs(int classes, int train_per_class = 20, int test_per_class = 10) {
  BlobOptions o;
  o.num_classes = classes;
  o.shape = flat_shape(6);
  o.train_per_class = train_per_class;
  o.test_per_class = test_per_class;
  o.seed = 1;
  return make_blobs(o);
}

TrainConfig small_train(bool disco = true) {
  TrainConfig c;
  c.epochs = 2;
  c.milestones = {1};
  c.learning_rate = 0.02;
  c.batch_size = 8;
  c.buffer_capacity = 20;
  c.disco = disco;
  c.seed = 3;
  return c;
}

ModelSpec small_model() {
  ModelSpec m;
  m.hidden = 12;
  m.feature_dim = 6;
  m.projector_dim = 8;
  return m;
}

std::vector<int> labels_of(const TaskDatasetView& v) {
  std::set<int> s;
  for (const auto& x : v) s.insert(x.label);
  return {s.begin(), s.end()};
}

}  // namespace

TEST(Buffer, PerClassQuotaShrinks) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  const auto t1 = materialize_task(sc, 1, src, Split::kTrain);
  const auto t2 = materialize_task(sc, 2, src, Split::kTrain);
  RehearsalBuffer buf(20);
  Rng rng(0);
  buf = update_buffer(buf, t1, sc.task(1).labels, rng);
  EXPECT_EQ(buf.size(), 20u);
  for (const auto& [label, items] : buf.store()) EXPECT_EQ(items.size(), 10u);
  buf = update_buffer(buf, t2, sc.task(2).labels, rng);
  EXPECT_EQ(buf.size(), 20u);
  for (const auto& [label, items] : buf.store()) EXPECT_EQ(items.size(), 5u);
  EXPECT_EQ(buf.labels().size(), 4u);
}

TEST(Buffer, ExemplarsComeFromTheirTask) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  const auto t1 = materialize_task(sc, 1, src, Split::kTrain);
  RehearsalBuffer buf(6);
  Rng rng(1);
  buf.update(t1, sc.task(1).labels, rng);
  for (const auto& [label, items] : buf.store()) {
    for (const auto& s : items) {
      EXPECT_EQ(s.label, label);
      const bool found = std::any_of(t1.begin(), t1.end(), [&](const Sample& x) { return x.id == s.id && x.x == s.x; });
      EXPECT_TRUE(found);
    }
  }
  const auto drawn = buf.sample(100, rng);
  EXPECT_EQ(drawn.size(), 6u);
  std::set<std::size_t> ids;
  for (const auto& s : drawn) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 6u);
}

TEST(Buffer, CapacityBelowClassCount) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 1, 0);
  RehearsalBuffer buf(3);
  Rng rng(2);
  buf.update(materialize_task(sc, 1, src, Split::kTrain), sc.task(1).labels, rng);
  EXPECT_EQ(buf.size(), 3u);
  EXPECT_LE(buf.size(), buf.capacity());
}

TEST(TrainConfig, Validation) {
  TrainConfig c = small_train();
  c.buffer_capacity = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_train();
  c.milestones = {2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_train();
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_train();
  c.baseline = Baseline::kDistillReg;
  c.buffer_capacity = 0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Trainer, FirstTaskHasNoTaskContrast) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  tr.train_task(1);
  ASSERT_FALSE(tr.last_task_losses().empty());
  for (const auto& l : tr.last_task_losses()) {
    EXPECT_EQ(l.tcon, 0.0);
    EXPECT_EQ(l.ccd, 0.0);
  }
  EXPECT_FALSE(tr.teacher().has_value());
  tr.train_task(2);
  double tcon_sum = 0.0;
  for (const auto& l : tr.last_task_losses()) tcon_sum += l.tcon;
  EXPECT_GT(tcon_sum, 0.0);
  EXPECT_EQ(tr.pool().size(), 2u);
  EXPECT_THROW(tr.train_task(1), ConfigError);
}

TEST(Trainer, ClassifierGrowsPerTask) {
  const auto src = blobs(6);
  const auto sc = split_even(6, 3, 0);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  for (int t = 1; t <= 3; ++t) {
    tr.train_task(t);
    EXPECT_EQ(tr.model().classifier().labels().size(), static_cast<std::size_t>(2 * t));
    EXPECT_EQ(tr.evaluate(t).size(), static_cast<std::size_t>(t));
  }
  EXPECT_EQ(tr.snapshots().size(), 4u);
}

TEST(Trainer, DeterministicForFixedSeed) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  ContinualTrainer a(sc, src, small_train(), small_model());
  ContinualTrainer b(sc, src, small_train(), small_model());
  const auto ra = a.run();
  const auto rb = b.run();
  EXPECT_EQ(ra.matrix, rb.matrix);
  EXPECT_EQ(a.model().parameter_hash(), b.model().parameter_hash());
  EXPECT_EQ(ra.snapshots.back().values, rb.snapshots.back().values);
}

TEST(Trainer, ZeroWeightsMatchPlainBaseline) {
  const auto src = blobs(6);
  const auto sc = split_even(6, 3, 0);
  TrainConfig zero = small_train(true);
  zero.weights = LossWeights{0, 0, 0};
  ContinualTrainer with(sc, src, zero, small_model());
  ContinualTrainer plain(sc, src, small_train(false), small_model());
  const auto rw = with.run();
  const auto rp = plain.run();
  EXPECT_EQ(rw.matrix, rp.matrix);
  EXPECT_EQ(with.model().backbone().parameters(), plain.model().backbone().parameters());
}

TEST(Trainer, TeacherStaysFrozenDuringTask) {
  const auto src = blobs(6);
  const auto sc = split_even(6, 3, 0);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  std::map<int, std::set<std::uint64_t>> hashes;
  tr.set_observer(StepObserver{{}, [&](int task, const ModelBundle* teacher) {
                                 if (teacher) hashes[task].insert(teacher->parameter_hash());
                               }});
  tr.run();
  EXPECT_FALSE(hashes.contains(1));
  ASSERT_EQ(hashes.size(), 2u);
  for (const auto& [task, set] : hashes) EXPECT_EQ(set.size(), 1u) << "task " << task;
  EXPECT_NE(*hashes[2].begin(), *hashes[3].begin());
}

TEST(Trainer, CurrentBatchOnlyHoldsCurrentTaskData) {
  const auto src = blobs(6);
  const auto sc = split_even(6, 3, 0);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  int violations = 0, replay_batches = 0;
  tr.set_observer(StepObserver{[&](int task, const std::vector<int>& cur, const std::vector<int>& rep) {
                                 const auto& own = sc.task(task).labels;
                                 for (int l : cur)
                                   if (std::find(own.begin(), own.end(), l) == own.end()) ++violations;
                                 for (int l : rep)
                                   if (sc.task_of(l) >= task) ++violations;
                                 if (!rep.empty()) ++replay_batches;
                                 if (task == 1 && !rep.empty()) ++violations;
                               },
                               {}});
  tr.run();
  EXPECT_EQ(violations, 0);
  EXPECT_GT(replay_batches, 0);
}

TEST(Trainer, EvaluateIsPure) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  tr.train_task(1);
  const auto h = tr.model().parameter_hash();
  const auto first = tr.evaluate(1);
  EXPECT_EQ(tr.evaluate(1), first);
  EXPECT_EQ(tr.model().parameter_hash(), h);
  EXPECT_THROW(tr.evaluate(2), ConfigError);
}

TEST(Trainer, EvaluateMatchesManualCount) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  tr.train_task(1);
  tr.train_task(2);
  const auto row = tr.evaluate(2);
  for (int j = 1; j <= 2; ++j) {
    const auto& test = tr.test_view(j);
    const Matrix logits = tr.model().logits(to_matrix(test));
    const auto& order = tr.model().classifier().labels();
    int correct = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c)
        if (logits(r, c) > logits(r, best)) best = c;
      correct += order[static_cast<std::size_t>(best)] == test[static_cast<std::size_t>(r)].label;
    }
    EXPECT_DOUBLE_EQ(row[static_cast<std::size_t>(j - 1)], 100.0 * correct / static_cast<double>(test.size()));
  }
}

TEST(Trainer, DistillBaselineUsesTeacherWithoutBuffer) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  TrainConfig c = small_train(false);
  c.baseline = Baseline::kDistillReg;
  c.buffer_capacity = 0;
  ContinualTrainer tr(sc, src, c, small_model());
  tr.run();
  EXPECT_TRUE(tr.teacher().has_value());
  EXPECT_TRUE(tr.buffer().empty());
}

TEST(Trainer, TextPrototypesNeedProvider) {
  const auto src = blobs(4);
  const auto sc = split_even(4, 2, 0);
  TrainConfig c = small_train();
  c.prototype_mode = PrototypeMode::kText;
  EXPECT_THROW(ContinualTrainer(sc, src, c, small_model()), ConfigError);
  ContinualTrainer tr(sc, src, c, small_model(), {}, std::make_shared<HashTextEmbedding>(16, 0));
  tr.run();
  EXPECT_EQ(tr.model().projector().out_dim(), 16u);
  EXPECT_EQ(tr.pool().size(), 2u);
}

TEST(DumpFeatures, CardinalityAndStability) {
  const auto src = blobs(4, 20, 10);
  const auto sc = split_even(4, 2, 0);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  tr.run();
  std::ostringstream a, b;
  // 2 tasks x 2 classes x 10 test samples.
  EXPECT_EQ(dump_features(tr, 2, a), 40u);
  dump_features(tr, 2, b);
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "task_id,label,f0,f1,f2,f3,f4,f5");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 40);
  std::ostringstream one, proj;
  EXPECT_EQ(dump_features(tr, 1, one), 20u);
  dump_features(tr, 1, proj, true);
  EXPECT_EQ(proj.str().substr(0, proj.str().find('\n')), "task_id,label,f0,f1,f2,f3,f4,f5,f6,f7");
  EXPECT_THROW(dump_features(tr, 3, one), ConfigError);
}

TEST(Trainer, LabelsOfTasksAreDisjoint) {
  const auto src = blobs(6);
  const auto sc = split_even(6, 3, 4);
  ContinualTrainer tr(sc, src, small_train(), small_model());
  std::set<int> seen;
  for (int t = 1; t <= 3; ++t) {
    for (int l : labels_of(tr.train_view(t))) EXPECT_TRUE(seen.insert(l).second);
    EXPECT_EQ(labels_of(tr.test_view(t)), sc.task(t).labels);
  }
}
