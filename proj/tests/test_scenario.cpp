#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "disco/dataset.hpp"
#include "disco/scenario.hpp"
#include "disco/transforms.hpp"
#include "test_util.hpp"

using namespace disco;

namespace {

std::vector<std::size_t> sizes_of(const ContinualScenario& s) {
  std::vector<std::size_t> out;
  for (const auto& t : s.tasks()) out.push_back(t.labels.size());
  return out;
}

}  // namespace

TEST(SplitEven, HundredClassesTenTasks) {
  const auto s = split_even(100, 10, 7);
  EXPECT_EQ(sizes_of(s), std::vector<std::size_t>(10, 10));
  EXPECT_EQ(s.num_classes(), 100u);
  EXPECT_EQ(s.mode(), ScenarioMode::kCIL);
}

TEST(SplitEven, TenClassesFiveTasks) {
  EXPECT_EQ(sizes_of(split_even(10, 5, 3)), std::vector<std::size_t>(5, 2));
}

TEST(SplitEven, SingleTaskHoldsEverything) {
  const auto s = split_even(10, 1, 3);
  ASSERT_EQ(s.num_tasks(), 1u);
  EXPECT_EQ(s.task(1).labels, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(SplitEven, RejectsBadArguments) {
  EXPECT_THROW(split_even(10, 3, 0), ConfigError);
  EXPECT_THROW(split_even(10, 0, 0), ConfigError);
}

TEST(SplitEven, SeedChangesPermutation) {
  EXPECT_NE(split_even(100, 10, 1).task(1).labels, split_even(100, 10, 2).task(1).labels);
  EXPECT_EQ(split_even(100, 10, 1), split_even(100, 10, 1));
}

TEST(SplitBaseIncrement, B50Steps) {
  EXPECT_EQ(sizes_of(split_base_increment(100, 50, 5, 0)), (std::vector<std::size_t>{50, 10, 10, 10, 10, 10}));
  std::vector<std::size_t> ten{50};
  ten.insert(ten.end(), 10, 5);
  EXPECT_EQ(sizes_of(split_base_increment(100, 50, 10, 0)), ten);
  EXPECT_EQ(sizes_of(split_base_increment(100, 100, 0, 0)), std::vector<std::size_t>{100});
}

TEST(SplitBaseIncrement, RejectsRemainder) {
  EXPECT_THROW(split_base_increment(100, 50, 7, 0), ConfigError);
  EXPECT_THROW(split_base_increment(100, 50, 0, 0), ConfigError);
  EXPECT_THROW(split_base_increment(100, 0, 5, 0), ConfigError);
}

TEST(Scenario, CumulativeLabelsGrow) {
  const auto s = split_even(12, 4, 5);
  std::size_t prev = 0;
  for (int t = 1; t <= 4; ++t) {
    const auto cum = s.cumulative_labels(t);
    EXPECT_GT(cum.size(), prev);
    prev = cum.size();
    for (int label : s.task(t).labels) EXPECT_TRUE(std::binary_search(cum.begin(), cum.end(), label));
  }
  EXPECT_EQ(prev, 12u);
}

TEST(Scenario, RejectsOverlapAndBadIds) {
  EXPECT_THROW(ContinualScenario({{1, {0, 1}, {}, {}}, {2, {1, 2}, {}, {}}}, ScenarioMode::kCIL, 0), ConfigError);
  EXPECT_THROW(ContinualScenario({{2, {0}, {}, {}}}, ScenarioMode::kCIL, 0), ConfigError);
  EXPECT_THROW(ContinualScenario({{1, {}, {}, {}}}, ScenarioMode::kCIL, 0), ConfigError);
  EXPECT_THROW(ContinualScenario({}, ScenarioMode::kCIL, 0), ConfigError);
}

TEST(Scenario, TaskOfLabel) {
  const ContinualScenario s({{1, {0, 1, 2, 3, 4}, {}, {}}, {2, {5, 6, 7, 8, 9}, {}, {}}}, ScenarioMode::kCIL, 0);
  EXPECT_EQ(s.task_of(7), 2);
  EXPECT_EQ(s.task_of(0), 1);
  EXPECT_EQ(s.task_of(42), 0);
}

TEST(AttachDomains, SixDomainOrder) {
  const std::vector<std::string> order{"real", "brush", "lamuse", "plum", "peasant", "candy"};
  const auto s = attach_domains(split_even(60, 6, 1), order, {});
  EXPECT_EQ(s.mode(), ScenarioMode::kCILD);
  EXPECT_EQ(s.domain_order(), order);
  for (int t = 1; t <= 6; ++t) EXPECT_EQ(*s.task(t).domain, order[static_cast<std::size_t>(t - 1)]);
}

TEST(AttachDomains, RejectsDuplicatesAndLengthMismatch) {
  EXPECT_THROW(attach_domains(split_even(60, 6, 1), std::vector<std::string>(6, "real"), {}), ConfigError);
  EXPECT_THROW(attach_domains(split_even(30, 3, 1), {"real", "brush"}, {}), ConfigError);
}

TEST(AttachDomains, MapsTransforms) {
  const auto s = attach_domains(split_even(4, 2, 0), {"a", "b"}, {{"b", "contrast_inversion"}});
  EXPECT_FALSE(s.task(1).transform.has_value());
  EXPECT_EQ(*s.task(2).transform, "contrast_inversion");
}

TEST(AttachDomains, StripRecoversPartition) {
  const auto base = split_even(20, 4, 9);
  const auto cild = attach_domains(base, {"w", "x", "y", "z"}, {{"x", "block_shuffle"}});
  EXPECT_EQ(strip_domains(cild), base);
}

TEST(AttachDomains, CilCounterpartUsesFirstDomain) {
  const auto cild = attach_domains(split_even(20, 4, 9), {"w", "x", "y", "z"}, {{"w", "channel_permutation"}});
  const auto cil = cil_counterpart(cild);
  EXPECT_EQ(cil.mode(), ScenarioMode::kCIL);
  for (int t = 1; t <= 4; ++t) {
    EXPECT_EQ(*cil.task(t).domain, "w");
    EXPECT_EQ(*cil.task(t).transform, "channel_permutation");
    EXPECT_EQ(cil.task(t).labels, cild.task(t).labels);
  }
}

TEST(ScenarioSerialization, RoundTripAndByteStable) {
  const auto s = attach_domains(split_base_increment(20, 10, 5, 4), {"a", "b", "c", "d", "e", "f"},
                                {{"c", "hue_rotation"}});
  const std::string text = serialize(s);
  EXPECT_NE(text.find("scenario_format: 1"), std::string::npos);
  EXPECT_EQ(serialize(split_base_increment(20, 10, 5, 4)), serialize(split_base_increment(20, 10, 5, 4)));
  EXPECT_EQ(parse_scenario(text), s);
  EXPECT_EQ(serialize(parse_scenario(text)), text);
}

TEST(ScenarioSerialization, RejectsUnknownVersion) {
  std::string text = serialize(split_even(4, 2, 0));
  text.replace(text.find("scenario_format: 1"), 18, "scenario_format: 9");
  EXPECT_THROW(parse_scenario(text), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Materialize, TaskSampleCounts) {
  BlobOptions o;
  o.num_classes = 100;
  o.shape = flat_shape(2);
  o.train_per_class = 500;
  o.test_per_class = 100;
  const auto src = make_blobs(o);
  const auto s = split_even(100, 10, 0);
  const auto view = materialize_task(s, 1, src, Split::kTrain);
  EXPECT_EQ(view.size(), 5000u);
  EXPECT_EQ(materialize_task(s, 1, src, Split::kTest).size(), 1000u);
}

TEST(Materialize, NeverLeaksOtherLabels) {
  BlobOptions o;
  o.num_classes = 6;
  o.train_per_class = 7;
  const auto src = make_blobs(o);
  const auto s = split_even(6, 3, 11);
  for (int t = 1; t <= 3; ++t) {
    const auto& labels = s.task(t).labels;
    std::size_t n = 0;
    for (const auto& sample : materialize_task(s, t, src, Split::kTrain)) {
      EXPECT_TRUE(std::binary_search(labels.begin(), labels.end(), sample.label));
      ++n;
    }
    EXPECT_EQ(n, 14u);
  }
}

TEST(Materialize, AppliesTransformDeterministically) {
  BlobOptions o;
  o.num_classes = 2;
  o.shape = Shape{3, 4, 4};
  o.train_per_class = 3;
  const auto src = make_blobs(o);
  const auto s = attach_domains(split_even(2, 2, 0), {"real", "inv"}, {{"inv", "contrast_inversion"}});
  const auto a = materialize_task(s, 2, src, Split::kTrain);
  const auto b = materialize_task(s, 2, src, Split::kTrain);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].x, b[i].x);
  const auto& raw = *std::find_if(src.train.begin(), src.train.end(), [&](const Sample& x) { return x.id == a[0].id; });
  EXPECT_DOUBLE_EQ(a[0].x[0], 1.0 - raw.x[0]);
}

namespace {

// Manifest of two-element vector files over domains "real" and "clip".
std::filesystem::path write_domain_manifest(const std::filesystem::path& dir, const std::vector<std::string>& domains) {
  std::ostringstream m;
  m << "path,label,domain\n";
  int n = 0;
  for (const auto& d : domains)
    for (int label = 0; label < 4; ++label)
      for (int k = 0; k < 3; ++k) {
        const std::string file = "s" + std::to_string(n++) + ".txt";
        disco::test::write_file(dir / file, std::to_string(label) + " " + std::to_string(k) + "\n");
        m << file << "," << label << "," << d << "\n";
      }
  disco::test::write_file(dir / "manifest.csv", m.str());
  return dir / "manifest.csv";
}

}  // namespace

TEST(Materialize, CildFiltersByDomain) {
  disco::test::TempDir tmp;
  const auto manifest = load_manifest(write_domain_manifest(tmp.path(), {"real", "clip"}));
  const auto src = load_manifest_source(manifest, manifest);
  EXPECT_TRUE(src.has_domains());
  const auto s = attach_domains(split_even(4, 2, 0), {"real", "clip"}, {});
  const auto view = materialize_task(s, 2, src, Split::kTrain);
  EXPECT_EQ(view.size(), 6u);
  for (const auto& sample : view) EXPECT_EQ(sample.domain, "clip");
}

TEST(Materialize, MissingDomainIsNamed) {
  disco::test::TempDir tmp;
  const auto manifest = load_manifest(write_domain_manifest(tmp.path(), {"real"}));
  const auto src = load_manifest_source(manifest, manifest);
  const auto s = attach_domains(split_even(4, 2, 0), {"real", "sketch"}, {});
  try {
    materialize_task(s, 2, src, Split::kTrain);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sketch"), std::string::npos);
  }
}

TEST(Manifest, HeaderRequired) {
  std::istringstream bad("file,label,domain\na.txt,0,real\n");
  EXPECT_THROW(parse_manifest(bad), DataError);
  std::istringstream good("path,label,domain\na.txt,0,real\nb.txt,1,clip\n");
  const auto m = parse_manifest(good);
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[1].label, 1);
  EXPECT_EQ(m.domains(), (std::set<std::string>{"clip", "real"}));
}

TEST(Manifest, RejectsBadLabel) {
  std::istringstream in("path,label,domain\na.txt,cat,real\n");
  EXPECT_THROW(parse_manifest(in), DataError);
}

// ---------------------------------------------------------------------------

TEST(Transforms, RegistryAndUnknownId) {
  for (const char* id : {"identity", "channel_permutation", "hue_rotation", "gaussian_blur", "contrast_inversion", "block_shuffle"}) {
    EXPECT_TRUE(is_registered_transform(id)) << id;
  }
  EXPECT_THROW(make_transform("oil_paint", 0, {}), ConfigError);
}

TEST(Transforms, SameSeedBitIdentical) {
  const Shape shape{3, 4, 4};
  std::vector<double> x(shape.size());
  Rng rng(5);
  for (double& v : x) v = rng.uniform01();
  for (const auto& [id, kind] : transform_registry()) {
    const auto a = make_transform(id, 17, {}).apply(x, shape);
    const auto b = make_transform(id, 17, {}).apply(x, shape);
    EXPECT_EQ(a, b) << id;
    EXPECT_EQ(a.size(), x.size()) << id;
  }
}

TEST(Transforms, NonIdentityStylesChangeInput) {
  const Shape shape{3, 4, 4};
  std::vector<double> x(shape.size());
  Rng rng(8);
  for (double& v : x) v = rng.uniform01();
  for (const char* id : {"channel_permutation", "hue_rotation", "gaussian_blur", "contrast_inversion", "block_shuffle"}) {
    EXPECT_NE(make_transform(id, 3, {}).apply(x, shape), x) << id;
  }
  EXPECT_EQ(make_transform("identity", 3, {}).apply(x, shape), x);
}

TEST(Transforms, ChannelPermutationIsDerangement) {
  const Shape shape{4, 1, 1};
  const std::vector<double> x{0, 1, 2, 3};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto y = make_transform("channel_permutation", seed, {}).apply(x, shape);
    auto sorted = y;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, x);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NE(y[i], x[i]);
  }
}

TEST(Transforms, HueNeedsThreeChannels) {
  const std::vector<double> x(8, 0.5);
  EXPECT_THROW(make_transform("hue_rotation", 0, {}).apply(x, Shape{2, 2, 2}), ConfigError);
  EXPECT_THROW(make_transform("identity", 0, {}).apply(x, Shape{3, 2, 2}), DataError);
}

TEST(Transforms, ContrastPivotParameter) {
  const std::vector<double> x{0.2, 0.9};
  const auto y = make_transform("contrast_inversion", 0, {{"pivot", 1.0}}).apply(x, flat_shape(2));
  EXPECT_DOUBLE_EQ(y[0], 1.8);
  EXPECT_DOUBLE_EQ(y[1], 1.1);
}
