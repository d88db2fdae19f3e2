#include <cstdlib>

#include <gtest/gtest.h>

#include "disco/config.hpp"
#include "test_util.hpp"

using namespace disco;

namespace {

const char* kMinimal = R"(format_version: 1
seed: 4
output_dir: runs/x
scenario:
  num_classes: 6
  num_tasks: 3
train:
  epochs: 3
  milestones: [2]
)";

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, DefaultsFillMissingFields) {
  const auto c = parse_config_text(kMinimal);
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.train.seed, 4u);
  EXPECT_EQ(c.scenario.dataset, "blobs");
  EXPECT_EQ(c.train.weights, LossWeights{});
  EXPECT_TRUE(c.train.disco);
  EXPECT_EQ(c.train.ccd_normalization, CcdNormalization::kMean);
}

TEST(Config, EmitParseRoundTripIsIdempotent) {
  const auto c = parse_config_text(kMinimal);
  const std::string once = emit_config(c);
  const std::string twice = emit_config(parse_config_text(once));
  EXPECT_EQ(once, twice);
  EXPECT_EQ(config_hash(c), config_hash(parse_config_text(once)));
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"blobs.yaml", "cild_blobs.yaml"}) {
    const auto c = load_config(std::filesystem::path(DISCO_SOURCE_DIR) / "configs" / name);
    EXPECT_EQ(c.format_version, 1) << name;
  }
}

TEST(Config, DiagnosticsNameTheField) {
  EXPECT_NE(error_of(std::string(kMinimal) + "bogus: 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(error_of("format_version: 2\n").find("format_version"), std::string::npos);
  EXPECT_NE(error_of("scenario:\n  num_classes: 7\n  num_tasks: 3\n").find("scenario.num_tasks"), std::string::npos);
  EXPECT_NE(error_of("train:\n  baseline: icarl\n").find("train.baseline"), std::string::npos);
  EXPECT_NE(error_of("disco:\n  lambda_ccd: -1\n").find("lambda_ccd"), std::string::npos);
  EXPECT_NE(error_of("scenario:\n  num_classes: abc\n").find("scenario.num_classes"), std::string::npos);
  EXPECT_NE(error_of("scenario:\n  domain_order: [a, a]\n  num_tasks: 2\n").find("distinct"), std::string::npos);
  EXPECT_NE(error_of("scenario:\n  domain_transforms: {a: warp}\n").find("warp"), std::string::npos);
  EXPECT_FALSE(error_of("[1, 2]").empty());
  EXPECT_FALSE(error_of("a: [").empty());
}

TEST(Config, SeveralErrorsReportedTogether) {
  const std::string msg = error_of("scenario:\n  noise: -1\n  train_per_class: 0\n");
  EXPECT_NE(msg.find("scenario.noise"), std::string::npos);
  EXPECT_NE(msg.find("scenario.train_per_class"), std::string::npos);
}

TEST(Config, OverridesAppliedTogether) {
  auto c = parse_config_text(kMinimal);
  set_config_values(c, {{"train.epochs", "10"}, {"train.milestones", "[6, 8]"}, {"lambda_ccd", "2.5"}});
  EXPECT_EQ(c.train.epochs, 10);
  EXPECT_EQ(c.train.milestones, (std::vector<int>{6, 8}));
  EXPECT_EQ(c.train.weights.ccd, 2.5);
  EXPECT_THROW(set_config_value(c, "train.nope", "1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "nope", "1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "train.epochs", "0"), ConfigError);
}

TEST(Config, OutputRootOverride) {
  auto c = parse_config_text(kMinimal);
  ::unsetenv("DISCO_OUT");
  EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("runs/x"));
  ::setenv("DISCO_OUT", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("/tmp/elsewhere/runs/x"));
  c.output_dir = "/abs/path";
  EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("/abs/path"));
  ::unsetenv("DISCO_OUT");
}
