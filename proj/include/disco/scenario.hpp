#pragma once

// Class-incremental task sequences, optionally with a distinct input domain
// per task.

#include <algorithm>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "disco/dataset.hpp"
#include "disco/error.hpp"
#include "disco/random.hpp"
#include "disco/transforms.hpp"

namespace disco {

struct TaskSpec {
  int task_id = 1;          // 1-based
  std::vector<int> labels;  // ascending
  std::optional<std::string> domain;
  std::optional<std::string> transform;  // registered transform id

  bool operator==(const TaskSpec&) const = default;
};

enum class ScenarioMode { kCIL, kCILD };

inline std::string to_string(ScenarioMode mode) { return mode == ScenarioMode::kCIL ? "CIL" : "CILD"; }

inline ScenarioMode parse_mode(const std::string& s) {
  if (s == "CIL") return ScenarioMode::kCIL;
  if (s == "CILD") return ScenarioMode::kCILD;
  throw ConfigError("unknown scenario mode '" + s + "' (expected CIL or CILD)");
}

class ContinualScenario {
 public:
  ContinualScenario(std::vector<TaskSpec> tasks, ScenarioMode mode, std::uint64_t seed)
      : tasks_(std::move(tasks)), mode_(mode), seed_(seed) {
    validate();
  }

  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  std::size_t num_tasks() const { return tasks_.size(); }
  ScenarioMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }

  const TaskSpec& task(int t) const {
    if (t < 1 || static_cast<std::size_t>(t) > tasks_.size()) {
      throw ConfigError("task index " + std::to_string(t) + " outside 1.." + std::to_string(tasks_.size()));
    }
    return tasks_[static_cast<std::size_t>(t - 1)];
  }

  // Union of C_1..C_t, ascending.
  std::vector<int> cumulative_labels(int t) const {
    std::set<int> acc;
    for (int k = 1; k <= t; ++k) acc.insert(task(k).labels.begin(), task(k).labels.end());
    return {acc.begin(), acc.end()};
  }

  std::size_t num_classes() const { return cumulative_labels(static_cast<int>(tasks_.size())).size(); }

  // Task owning `label`, or 0 when no task does.
  int task_of(int label) const {
    for (const auto& t : tasks_)
      if (std::binary_search(t.labels.begin(), t.labels.end(), label)) return t.task_id;
    return 0;
  }

  std::vector<std::string> domain_order() const {
    std::vector<std::string> out;
    for (const auto& t : tasks_)
      if (t.domain) out.push_back(*t.domain);
    return out;
  }

  bool operator==(const ContinualScenario& o) const {
    return tasks_ == o.tasks_ && mode_ == o.mode_ && seed_ == o.seed_;
  }

 private:
  void validate() {
    if (tasks_.empty()) throw ConfigError("scenario has no tasks");
    std::set<int> seen;
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      auto& t = tasks_[i];
      if (t.task_id != static_cast<int>(i + 1)) {
        throw ConfigError("task ids must run 1..T in order; position " + std::to_string(i + 1) + " has id " +
                          std::to_string(t.task_id));
      }
      if (t.labels.empty()) throw ConfigError("task " + std::to_string(t.task_id) + " has an empty label set");
      std::sort(t.labels.begin(), t.labels.end());
      for (int label : t.labels) {
        if (!seen.insert(label).second) {
          throw ConfigError("label " + std::to_string(label) + " appears in more than one task");
        }
      }
    }
    if (mode_ == ScenarioMode::kCIL) {
      for (const auto& t : tasks_) {
        if (t.transform != tasks_.front().transform || t.domain != tasks_.front().domain) {
          throw ConfigError("CIL scenario requires one domain and transform for every task");
        }
      }
    } else {
      for (const auto& t : tasks_) {
        if (!t.domain) throw ConfigError("CILD scenario: task " + std::to_string(t.task_id) + " has no domain");
      }
      for (std::size_t i = 1; i < tasks_.size(); ++i) {
        if (tasks_[i].domain == tasks_[i - 1].domain) {
          throw ConfigError("CILD scenario: tasks " + std::to_string(i) + " and " + std::to_string(i + 1) +
                            " share domain '" + *tasks_[i].domain + "'");
        }
      }
    }
  }

  std::vector<TaskSpec> tasks_;
  ScenarioMode mode_;
  std::uint64_t seed_;
};

// Class ids 0..n-1 shuffled by the mt19937_64 stream (seed, kClassOrder).
inline std::vector<int> class_order(int num_classes, std::uint64_t seed) {
  std::vector<int> ids(static_cast<std::size_t>(num_classes));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = Rng::stream(seed, streams::kClassOrder);
  rng.shuffle(std::span<int>(ids));
  return ids;
}

namespace detail {
inline ContinualScenario partition(const std::vector<int>& order, const std::vector<int>& sizes, std::uint64_t seed) {
  std::vector<TaskSpec> tasks;
  std::size_t pos = 0;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    TaskSpec spec;
    spec.task_id = static_cast<int>(t + 1);
    spec.labels.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(sizes[t])));
    pos += static_cast<std::size_t>(sizes[t]);
    tasks.push_back(std::move(spec));
  }
  return ContinualScenario(std::move(tasks), ScenarioMode::kCIL, seed);
}
}  // namespace detail

inline ContinualScenario split_even(int num_classes, int num_tasks, std::uint64_t seed) {
  if (num_tasks < 1) throw ConfigError("split_even: num_tasks must be >= 1, got " + std::to_string(num_tasks));
  if (num_classes < 1) throw ConfigError("split_even: num_classes must be >= 1");
  if (num_classes % num_tasks != 0) {
    throw ConfigError("split_even: " + std::to_string(num_tasks) + " tasks do not divide " +
                      std::to_string(num_classes) + " classes");
  }
  return detail::partition(class_order(num_classes, seed),
                           std::vector<int>(static_cast<std::size_t>(num_tasks), num_classes / num_tasks), seed);
}

// B{base}-{increments}: `base` classes in the first task, the rest spread over
// `increments` equal tasks.
inline ContinualScenario split_base_increment(int num_classes, int base, int increments, std::uint64_t seed) {
  if (base < 1) throw ConfigError("split_base_increment: base must be >= 1");
  if (base > num_classes) throw ConfigError("split_base_increment: base exceeds num_classes");
  if (increments < 0) throw ConfigError("split_base_increment: increments must be >= 0");
  const int rest = num_classes - base;
  if (increments == 0 ? rest != 0 : rest % increments != 0) {
    throw ConfigError("split_base_increment: " + std::to_string(rest) + " remaining classes cannot be split into " +
                      std::to_string(increments) + " equal tasks");
  }
  std::vector<int> sizes{base};
  for (int i = 0; i < increments; ++i) sizes.push_back(rest / increments);
  return detail::partition(class_order(num_classes, seed), sizes, seed);
}

// Transform used for a domain tag: an explicit mapping wins, then registered
// transform names; otherwise the domain is assumed to be native to the data.
inline std::optional<std::string> transform_for(const std::string& domain,
                                                const std::map<std::string, std::string>& mapping) {
  if (auto it = mapping.find(domain); it != mapping.end()) return it->second;
  if (is_registered_transform(domain)) return domain;
  return std::nullopt;
}

inline ContinualScenario attach_domains(const ContinualScenario& scenario, const std::vector<std::string>& domain_order,
                                        const std::map<std::string, std::string>& transforms = {}) {
  if (domain_order.size() != scenario.num_tasks()) {
    throw ConfigError("attach_domains: " + std::to_string(domain_order.size()) + " domains for " +
                      std::to_string(scenario.num_tasks()) + " tasks");
  }
  std::set<std::string> seen;
  for (const auto& d : domain_order) {
    if (!seen.insert(d).second) throw ConfigError("attach_domains: duplicate domain '" + d + "'");
  }
  auto tasks = scenario.tasks();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    tasks[i].domain = domain_order[i];
    tasks[i].transform = transform_for(domain_order[i], transforms);
  }
  return ContinualScenario(std::move(tasks), ScenarioMode::kCILD, scenario.seed());
}

// Same label partition with every task in the first domain of the CILD order.
inline ContinualScenario cil_counterpart(const ContinualScenario& scenario) {
  auto tasks = scenario.tasks();
  for (auto& t : tasks) {
    t.domain = tasks.front().domain;
    t.transform = tasks.front().transform;
  }
  return ContinualScenario(std::move(tasks), ScenarioMode::kCIL, scenario.seed());
}

inline ContinualScenario strip_domains(const ContinualScenario& scenario) {
  auto tasks = scenario.tasks();
  for (auto& t : tasks) {
    t.domain.reset();
    t.transform.reset();
  }
  return ContinualScenario(std::move(tasks), ScenarioMode::kCIL, scenario.seed());
}

// ---------------------------------------------------------------------------
// Serialization (`scenario_format: 1`).

inline std::string serialize(const ContinualScenario& scenario) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "scenario_format" << YAML::Value << 1;
  out << YAML::Key << "seed" << YAML::Value << scenario.seed();
  out << YAML::Key << "mode" << YAML::Value << to_string(scenario.mode());
  out << YAML::Key << "domain_order" << YAML::Value << YAML::Flow << scenario.domain_order();
  out << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
  for (const auto& t : scenario.tasks()) {
    out << YAML::BeginMap;
    out << YAML::Key << "task_id" << YAML::Value << t.task_id;
    out << YAML::Key << "labels" << YAML::Value << YAML::Flow << t.labels;
    if (t.domain) out << YAML::Key << "domain" << YAML::Value << *t.domain;
    if (t.transform) out << YAML::Key << "transform" << YAML::Value << *t.transform;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

inline ContinualScenario parse_scenario(const std::string& text) {
  try {
    const YAML::Node doc = YAML::Load(text);
    if (!doc["scenario_format"] || doc["scenario_format"].as<int>() != 1) {
      throw ConfigError("scenario document: missing or unsupported scenario_format (expected 1)");
    }
    std::vector<TaskSpec> tasks;
    for (const auto& node : doc["tasks"]) {
      TaskSpec t;
      t.task_id = node["task_id"].as<int>();
      t.labels = node["labels"].as<std::vector<int>>();
      if (node["domain"]) t.domain = node["domain"].as<std::string>();
      if (node["transform"]) t.transform = node["transform"].as<std::string>();
      tasks.push_back(std::move(t));
    }
    return ContinualScenario(std::move(tasks), parse_mode(doc["mode"].as<std::string>()),
                             doc["seed"].as<std::uint64_t>());
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scenario document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Materialization.

enum class Split { kTrain, kTest };

// Immutable samples of one task, already filtered and transformed.
class TaskDatasetView {
 public:
  TaskDatasetView(int task_id, Shape shape, std::vector<Sample> samples)
      : task_id_(task_id), shape_(shape), samples_(std::move(samples)) {}

  int task_id() const { return task_id_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  auto begin() const { return samples_.cbegin(); }
  auto end() const { return samples_.cend(); }

 private:
  int task_id_;
  Shape shape_;
  std::vector<Sample> samples_;
};

struct TransformSettings {
  std::uint64_t seed = 0;
  std::map<std::string, DomainTransform::Params> params;  // per transform id
};

inline TaskDatasetView materialize_task(const ContinualScenario& scenario, int t, const DatasetSource& source,
                                        Split split, const TransformSettings& settings = {}) {
  const TaskSpec& spec = scenario.task(t);
  const auto& pool = split == Split::kTrain ? source.train : source.test;
  const bool filter_domain = spec.domain && source.has_domains();

  std::map<std::pair<int, std::string>, std::size_t> counts;
  for (const auto& s : pool) counts[{s.label, s.domain}]++;
  std::vector<std::string> gaps;
  for (int label : spec.labels) {
    const std::string domain = filter_domain ? *spec.domain : std::string();
    bool found = false;
    if (filter_domain) {
      found = counts.contains({label, domain});
    } else {
      for (const auto& [key, n] : counts) found = found || key.first == label;
    }
    if (!found) {
      gaps.push_back(filter_domain ? "(label " + std::to_string(label) + ", domain " + domain + ")"
                                   : "(label " + std::to_string(label) + ")");
    }
  }
  if (!gaps.empty()) {
    std::string msg = "task " + std::to_string(t) + " (" + (split == Split::kTrain ? "train" : "test") +
                      "): source lacks";
    for (const auto& g : gaps) msg += " " + g;
    if (filter_domain && !source.labels().empty()) {
      bool domain_present = std::any_of(pool.begin(), pool.end(), [&](const Sample& s) { return s.domain == *spec.domain; });
      if (!domain_present) msg += "; domain \"" + *spec.domain + "\" is missing entirely";
    }
    throw DataError(msg);
  }

  std::optional<DomainTransform> transform;
  if (spec.transform) {
    auto it = settings.params.find(*spec.transform);
    transform = make_transform(*spec.transform, settings.seed,
                               it == settings.params.end() ? DomainTransform::Params{} : it->second);
  }

  std::vector<Sample> out;
  for (const auto& s : pool) {
    if (!std::binary_search(spec.labels.begin(), spec.labels.end(), s.label)) continue;
    if (filter_domain && s.domain != *spec.domain) continue;
    Sample copy = s;
    if (transform) copy.x = transform->apply(s.x, source.shape);
    out.push_back(std::move(copy));
  }
  return TaskDatasetView(t, source.shape, std::move(out));
}

}  // namespace disco
