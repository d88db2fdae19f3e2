#pragma once

// Experiment configuration: a YAML document with `format_version: 1`.
// Parsing collects every field-level problem before failing so a single run
// reports all of them. Resolution fills defaults and emits a fully concrete
// document; resolving a resolved document is the identity.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "disco/engine.hpp"
#include "disco/error.hpp"

namespace disco {

struct ScenarioConfig {
  std::string dataset = "blobs";  // blobs | moons | manifest
  std::string manifest_train;
  std::string manifest_test;
  int num_classes = 10;
  std::string split = "even";  // even | base_increment
  int num_tasks = 5;
  int base = 0;
  int increments = 0;
  std::vector<std::string> domain_order;  // empty: plain CIL
  std::map<std::string, std::string> domain_transforms;
  std::map<std::string, std::map<std::string, double>> transform_params;
  std::vector<std::size_t> input_shape{16};  // [dim] or [channels, height, width]
  int train_per_class = 100;
  int test_per_class = 50;
  double center_scale = 1.0;
  double noise = 0.5;
  std::uint64_t data_seed = 0;

  Shape shape() const {
    if (input_shape.size() == 1) return flat_shape(input_shape[0]);
    return Shape{input_shape[0], input_shape[1], input_shape[2]};
  }
};

struct ExperimentConfig {
  int format_version = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  bool dump_features = true;
  bool dump_projected = false;
  ScenarioConfig scenario;
  ModelSpec model;
  TrainConfig train;
  std::size_t text_dim = 128;
};

namespace detail {

class FieldReader {
 public:
  explicit FieldReader(std::vector<std::string>& errors) : errors_(errors) {}

  template <typename T>
  void read(const YAML::Node& parent, const std::string& section, const std::string& key, T& out) {
    const std::string path = section.empty() ? key : section + "." + key;
    seen_.insert(path);
    if (!parent || !parent.IsMap()) return;
    const YAML::Node node = parent[key];
    if (!node) return;
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      errors_.push_back(path + ": cannot parse value '" + describe(node) + "'");
    }
  }

  // Reports keys in `node` that no read() call asked for.
  void reject_unknown(const YAML::Node& node, const std::string& section) {
    if (!node || !node.IsMap()) return;
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      const std::string path = section.empty() ? key : section + "." + key;
      if (!seen_.contains(path) && !sections_.contains(path)) errors_.push_back(path + ": unknown key");
    }
  }

  void section(const std::string& path) { sections_.insert(path); }

 private:
  static std::string describe(const YAML::Node& node) {
    if (node.IsScalar()) return node.Scalar();
    YAML::Emitter e;
    e << YAML::Flow << node;
    return e.c_str();
  }

  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  std::set<std::string> sections_;
};

template <typename E>
void read_enum(FieldReader& r, const YAML::Node& node, const std::string& section, const std::string& key, E& out,
               const std::map<std::string, E>& names, std::vector<std::string>& errors) {
  std::optional<std::string> text;
  std::string value;
  r.read(node, section, key, value);
  if (value.empty()) return;
  auto it = names.find(value);
  if (it == names.end()) {
    std::string allowed;
    for (const auto& [n, v] : names) allowed += (allowed.empty() ? "" : ", ") + n;
    errors.push_back(section + "." + key + ": '" + value + "' is not one of " + allowed);
    return;
  }
  out = it->second;
}

}  // namespace detail

// Semantic checks that need the whole document.
inline void validate_config(const ExperimentConfig& c, std::vector<std::string>& errors) {
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  check(c.format_version == 1, "format_version: only version 1 is supported");
  const auto& s = c.scenario;
  check(s.dataset == "blobs" || s.dataset == "moons" || s.dataset == "manifest",
        "scenario.dataset: expected blobs, moons or manifest");
  if (s.dataset == "manifest") check(!s.manifest_train.empty(), "scenario.manifest_train: required for manifest datasets");
  check(s.num_classes >= 1, "scenario.num_classes: must be >= 1");
  check(s.split == "even" || s.split == "base_increment", "scenario.split: expected even or base_increment");
  if (s.split == "even") {
    check(s.num_tasks >= 1, "scenario.num_tasks: must be >= 1");
    check(s.num_tasks >= 1 && s.num_classes % s.num_tasks == 0, "scenario.num_tasks: must divide scenario.num_classes");
  } else {
    check(s.base >= 1 && s.base <= s.num_classes, "scenario.base: must lie in [1, num_classes]");
    check(s.increments >= 0, "scenario.increments: must be >= 0");
    const int rest = s.num_classes - s.base;
    check(s.increments == 0 ? rest == 0 : rest % s.increments == 0,
          "scenario.increments: must divide num_classes - base");
  }
  check(s.input_shape.size() == 1 || s.input_shape.size() == 3, "scenario.input_shape: expected [dim] or [c, h, w]");
  for (std::size_t v : s.input_shape) check(v >= 1, "scenario.input_shape: entries must be positive");
  check(s.train_per_class >= 1, "scenario.train_per_class: must be >= 1");
  check(s.test_per_class >= 1, "scenario.test_per_class: must be >= 1");
  check(s.noise >= 0.0, "scenario.noise: must be non-negative");
  std::set<std::string> domains(s.domain_order.begin(), s.domain_order.end());
  check(domains.size() == s.domain_order.size(), "scenario.domain_order: domain tags must be distinct");
  for (const auto& [tag, id] : s.domain_transforms) {
    check(is_registered_transform(id), "scenario.domain_transforms." + tag + ": unknown transform '" + id + "'");
  }
  if (c.model.backbone == BackboneKind::kCnn) {
    check(s.input_shape.size() == 3, "model.backbone: cnn needs a [c, h, w] scenario.input_shape");
  }
  check(c.model.hidden >= 1 && c.model.feature_dim >= 1 && c.model.projector_dim >= 1,
        "model: hidden, feature_dim and projector_dim must be positive");
  check(c.text_dim >= 1, "disco.text_dim: must be positive");
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
}

inline ExperimentConfig parse_config(const YAML::Node& doc) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  detail::FieldReader r(errors);
  if (!doc || !doc.IsMap()) throw ConfigError("config: document must be a mapping");

  r.read(doc, "", "format_version", c.format_version);
  r.read(doc, "", "seed", c.seed);
  r.read(doc, "", "output_dir", c.output_dir);
  r.read(doc, "", "dump_features", c.dump_features);
  r.read(doc, "", "dump_projected", c.dump_projected);
  for (const char* sec : {"scenario", "model", "train", "disco"}) r.section(sec);
  r.reject_unknown(doc, "");

  const YAML::Node s = doc["scenario"];
  auto& sc = c.scenario;
  r.read(s, "scenario", "dataset", sc.dataset);
  r.read(s, "scenario", "manifest_train", sc.manifest_train);
  r.read(s, "scenario", "manifest_test", sc.manifest_test);
  r.read(s, "scenario", "num_classes", sc.num_classes);
  r.read(s, "scenario", "split", sc.split);
  r.read(s, "scenario", "num_tasks", sc.num_tasks);
  r.read(s, "scenario", "base", sc.base);
  r.read(s, "scenario", "increments", sc.increments);
  r.read(s, "scenario", "domain_order", sc.domain_order);
  r.read(s, "scenario", "domain_transforms", sc.domain_transforms);
  r.read(s, "scenario", "transform_params", sc.transform_params);
  r.read(s, "scenario", "input_shape", sc.input_shape);
  r.read(s, "scenario", "train_per_class", sc.train_per_class);
  r.read(s, "scenario", "test_per_class", sc.test_per_class);
  r.read(s, "scenario", "center_scale", sc.center_scale);
  r.read(s, "scenario", "noise", sc.noise);
  r.read(s, "scenario", "data_seed", sc.data_seed);
  r.reject_unknown(s, "scenario");

  const YAML::Node m = doc["model"];
  detail::read_enum(r, m, "model", "backbone", c.model.backbone,
                    {{"mlp", BackboneKind::kMlp}, {"cnn", BackboneKind::kCnn}}, errors);
  r.read(m, "model", "hidden", c.model.hidden);
  r.read(m, "model", "feature_dim", c.model.feature_dim);
  r.read(m, "model", "projector_dim", c.model.projector_dim);
  std::vector<std::size_t> channels{c.model.cnn_channels1, c.model.cnn_channels2};
  r.read(m, "model", "cnn_channels", channels);
  if (channels.size() == 2) {
    c.model.cnn_channels1 = channels[0];
    c.model.cnn_channels2 = channels[1];
  } else {
    errors.push_back("model.cnn_channels: expected two entries");
  }
  r.read(m, "model", "reinit_projector_per_task", c.model.reinit_projector_per_task);
  r.reject_unknown(m, "model");

  const YAML::Node t = doc["train"];
  auto& tc = c.train;
  r.read(t, "train", "epochs", tc.epochs);
  r.read(t, "train", "milestones", tc.milestones);
  r.read(t, "train", "learning_rate", tc.learning_rate);
  r.read(t, "train", "decay", tc.decay);
  r.read(t, "train", "weight_decay", tc.weight_decay);
  r.read(t, "train", "momentum", tc.momentum);
  r.read(t, "train", "batch_size", tc.batch_size);
  detail::read_enum(r, t, "train", "baseline", tc.baseline,
                    {{"rehearsal_er", Baseline::kRehearsalER}, {"distill_reg", Baseline::kDistillReg}}, errors);
  r.read(t, "train", "buffer_capacity", tc.buffer_capacity);
  r.read(t, "train", "distill_weight", tc.distill_weight);
  r.reject_unknown(t, "train");

  const YAML::Node d = doc["disco"];
  r.read(d, "disco", "enabled", tc.disco);
  r.read(d, "disco", "lambda_tcon", tc.weights.tcon);
  r.read(d, "disco", "lambda_ccon", tc.weights.ccon);
  r.read(d, "disco", "lambda_ccd", tc.weights.ccd);
  detail::read_enum(r, d, "disco", "prototype_mode", tc.prototype_mode,
                    {{"image", PrototypeMode::kImage}, {"text", PrototypeMode::kText}}, errors);
  detail::read_enum(r, d, "disco", "ccd_normalization", tc.ccd_normalization,
                    {{"mean", CcdNormalization::kMean}, {"sum", CcdNormalization::kSum}}, errors);
  r.read(d, "disco", "norm_floor", tc.cosine.norm_floor);
  r.read(d, "disco", "norm_floor_eps", tc.cosine.eps);
  r.read(d, "disco", "text_dim", c.text_dim);
  r.reject_unknown(d, "disco");

  tc.seed = c.seed;
  if (errors.empty()) validate_config(c, errors);
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string emit_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "format_version" << YAML::Value << c.format_version;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  out << YAML::Key << "dump_features" << YAML::Value << c.dump_features;
  out << YAML::Key << "dump_projected" << YAML::Value << c.dump_projected;

  const auto& s = c.scenario;
  out << YAML::Key << "scenario" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "dataset" << YAML::Value << s.dataset;
  out << YAML::Key << "manifest_train" << YAML::Value << s.manifest_train;
  out << YAML::Key << "manifest_test" << YAML::Value << s.manifest_test;
  out << YAML::Key << "num_classes" << YAML::Value << s.num_classes;
  out << YAML::Key << "split" << YAML::Value << s.split;
  out << YAML::Key << "num_tasks" << YAML::Value << s.num_tasks;
  out << YAML::Key << "base" << YAML::Value << s.base;
  out << YAML::Key << "increments" << YAML::Value << s.increments;
  out << YAML::Key << "domain_order" << YAML::Value << YAML::Flow << s.domain_order;
  out << YAML::Key << "domain_transforms" << YAML::Value << YAML::Flow << s.domain_transforms;
  out << YAML::Key << "transform_params" << YAML::Value << YAML::Flow << s.transform_params;
  out << YAML::Key << "input_shape" << YAML::Value << YAML::Flow << s.input_shape;
  out << YAML::Key << "train_per_class" << YAML::Value << s.train_per_class;
  out << YAML::Key << "test_per_class" << YAML::Value << s.test_per_class;
  out << YAML::Key << "center_scale" << YAML::Value << s.center_scale;
  out << YAML::Key << "noise" << YAML::Value << s.noise;
  out << YAML::Key << "data_seed" << YAML::Value << s.data_seed;
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "backbone" << YAML::Value << to_string(c.model.backbone);
  out << YAML::Key << "hidden" << YAML::Value << c.model.hidden;
  out << YAML::Key << "feature_dim" << YAML::Value << c.model.feature_dim;
  out << YAML::Key << "projector_dim" << YAML::Value << c.model.projector_dim;
  out << YAML::Key << "cnn_channels" << YAML::Value << YAML::Flow
      << std::vector<std::size_t>{c.model.cnn_channels1, c.model.cnn_channels2};
  out << YAML::Key << "reinit_projector_per_task" << YAML::Value << c.model.reinit_projector_per_task;
  out << YAML::EndMap;

  const auto& t = c.train;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << t.epochs;
  out << YAML::Key << "milestones" << YAML::Value << YAML::Flow << t.milestones;
  out << YAML::Key << "learning_rate" << YAML::Value << t.learning_rate;
  out << YAML::Key << "decay" << YAML::Value << t.decay;
  out << YAML::Key << "weight_decay" << YAML::Value << t.weight_decay;
  out << YAML::Key << "momentum" << YAML::Value << t.momentum;
  out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  out << YAML::Key << "baseline" << YAML::Value << to_string(t.baseline);
  out << YAML::Key << "buffer_capacity" << YAML::Value << t.buffer_capacity;
  out << YAML::Key << "distill_weight" << YAML::Value << t.distill_weight;
  out << YAML::EndMap;

  out << YAML::Key << "disco" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << t.disco;
  out << YAML::Key << "lambda_tcon" << YAML::Value << t.weights.tcon;
  out << YAML::Key << "lambda_ccon" << YAML::Value << t.weights.ccon;
  out << YAML::Key << "lambda_ccd" << YAML::Value << t.weights.ccd;
  out << YAML::Key << "prototype_mode" << YAML::Value << to_string(t.prototype_mode);
  out << YAML::Key << "ccd_normalization" << YAML::Value << to_string(t.ccd_normalization);
  out << YAML::Key << "norm_floor" << YAML::Value << t.cosine.norm_floor;
  out << YAML::Key << "norm_floor_eps" << YAML::Value << t.cosine.eps;
  out << YAML::Key << "text_dim" << YAML::Value << c.text_dim;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// Applies the DISCO_OUT override to a relative output directory.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& c) {
  std::filesystem::path p(c.output_dir);
  if (const char* root = std::getenv("DISCO_OUT"); root && *root && p.is_relative()) return std::filesystem::path(root) / p;
  return p;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string text = emit_config(c);
  return fnv1a(text.data(), text.size());
}

// Sets dotted keys (or bare lambda_* keys) from their string forms, e.g. for
// sweep grids and command-line overrides. Validation runs once, after every
// assignment.
inline void set_config_values(ExperimentConfig& c, const std::vector<std::pair<std::string, std::string>>& assignments) {
  YAML::Node doc = YAML::Load(emit_config(c));
  for (const auto& [key, value] : assignments) {
    std::string path = key;
    if (path.rfind("lambda_", 0) == 0) path = "disco." + path;
    const auto dot = path.find('.');
    YAML::Node scalar = YAML::Load(value);
    if (dot == std::string::npos) {
      if (!doc[path]) throw ConfigError("unknown config key '" + key + "'");
      doc[path] = scalar;
    } else {
      const std::string section = path.substr(0, dot), field = path.substr(dot + 1);
      if (!doc[section] || !doc[section][field]) throw ConfigError("unknown config key '" + key + "'");
      doc[section][field] = scalar;
    }
  }
  c = parse_config(doc);
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  set_config_values(c, {{key, value}});
}

}  // namespace disco
