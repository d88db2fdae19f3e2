#pragma once

// Config-driven experiment runs and reports over run directories.
//
// Run directory layout:
//   config.txt                  resolved config
//   scenario.txt                scenario document
//   accuracy_matrix.csv         row k holds k comma-separated accuracies
//   snapshots/task_{t}.bin|txt  feature-extractor snapshots, t = 0..T
//   prototypes/pool.bin, index.txt
//   features/after_task_{k}.csv
//   final_logits.csv            final-model logits on every test sample
//   model/                      final parameters (for export-features)
//   summary.json                metrics, written by report()

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "disco/config.hpp"
#include "disco/engine.hpp"
#include "disco/metrics.hpp"
#include "disco/prototypes.hpp"
#include "disco/scenario.hpp"

namespace disco {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline std::string format_double(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed for " + p.string());
}

// ---------------------------------------------------------------------------
// Building blocks from a config.

inline DatasetSource build_source(const ExperimentConfig& c) {
  const auto& s = c.scenario;
  if (s.dataset == "blobs") {
    BlobOptions o;
    o.num_classes = s.num_classes;
    o.shape = s.shape();
    o.train_per_class = s.train_per_class;
    o.test_per_class = s.test_per_class;
    o.center_scale = s.center_scale;
    o.noise = s.noise;
    o.seed = s.data_seed;
    return make_blobs(o);
  }
  if (s.dataset == "moons") {
    MoonOptions o;
    o.num_classes = s.num_classes;
    o.train_per_class = s.train_per_class;
    o.test_per_class = s.test_per_class;
    o.noise = s.noise;
    o.seed = s.data_seed;
    return make_moons(o);
  }
  const DatasetManifest train = load_manifest(s.manifest_train);
  const DatasetManifest test = s.manifest_test.empty() ? DatasetManifest{} : load_manifest(s.manifest_test);
  return load_manifest_source(train, test);
}

inline ContinualScenario build_scenario(const ExperimentConfig& c) {
  const auto& s = c.scenario;
  ContinualScenario base = s.split == "even" ? split_even(s.num_classes, s.num_tasks, c.seed)
                                             : split_base_increment(s.num_classes, s.base, s.increments, c.seed);
  if (s.domain_order.empty()) return base;
  return attach_domains(base, s.domain_order, s.domain_transforms);
}

inline TransformSettings build_transform_settings(const ExperimentConfig& c) {
  TransformSettings t;
  t.seed = c.scenario.data_seed;
  t.params = c.scenario.transform_params;
  return t;
}

// ---------------------------------------------------------------------------
// Artifact I/O.

inline std::string accuracy_csv(const AccuracyMatrix& m) {
  std::string out;
  for (const auto& row : m.rows()) {
    for (std::size_t j = 0; j < row.size(); ++j) out += (j ? "," : "") + format_double(row[j]);
    out += "\n";
  }
  return out;
}

inline AccuracyMatrix read_accuracy_csv(const fs::path& p) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& f : split(line, ',')) row.push_back(std::stod(f));
    rows.push_back(std::move(row));
  }
  return AccuracyMatrix(std::move(rows));
}

inline void write_logits(const fs::path& p, const LogitLog& log) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << "task_id,label";
  for (int c : log.class_order) out << ",c" << c;
  out << "\n";
  for (Eigen::Index r = 0; r < log.logits.rows(); ++r) {
    out << log.task_ids[static_cast<std::size_t>(r)] << "," << log.labels[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < log.logits.cols(); ++c) out << "," << format_double(log.logits(r, c));
    out << "\n";
  }
}

inline LogitLog read_logits(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  LogitLog log;
  if (!std::getline(in, line)) throw DataError(p.string() + ": empty");
  const auto header = split(line, ',');
  for (std::size_t i = 2; i < header.size(); ++i) log.class_order.push_back(std::stoi(header[i].substr(1)));
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw DataError(p.string() + ": ragged row");
    log.task_ids.push_back(std::stoi(f[0]));
    log.labels.push_back(std::stoi(f[1]));
    std::vector<double> row;
    for (std::size_t i = 2; i < f.size(); ++i) row.push_back(std::stod(f[i]));
    rows.push_back(std::move(row));
  }
  log.logits = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(log.class_order.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) log.logits(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return log;
}

// Exact double vectors for model state: 8-byte LE count, then LE doubles.
inline void write_doubles(const fs::path& p, const std::vector<double>& v) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  const auto count = static_cast<std::uint64_t>(v.size());
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>(count >> (8 * i)));
  for (double d : v) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>(bits >> (8 * i)));
  }
}

inline std::vector<double> read_doubles(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  auto read_u64 = [&]() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      const int c = in.get();
      if (c == EOF) throw DataError(p.string() + ": truncated");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
  };
  std::vector<double> out(static_cast<std::size_t>(read_u64()));
  for (double& d : out) d = std::bit_cast<double>(read_u64());
  return out;
}

inline void save_model(const fs::path& dir, const ModelBundle& bundle) {
  fs::create_directories(dir);
  write_doubles(dir / "backbone.bin", bundle.backbone().parameters());
  write_doubles(dir / "projector.bin", bundle.projector().parameters());
  write_doubles(dir / "classifier_weights.bin", bundle.classifier().weights());
  write_doubles(dir / "classifier_bias.bin", bundle.classifier().bias());
  std::string labels;
  for (int l : bundle.classifier().labels()) labels += std::to_string(l) + "\n";
  write_text(dir / "classifier_labels.txt", labels);
  write_text(dir / "architecture.txt", bundle.architecture() + "\n");
}

inline ModelBundle load_model(const fs::path& dir, const ExperimentConfig& c, const Shape& shape) {
  Rng rng = Rng::stream(c.seed, streams::kInit);
  const std::size_t d = c.train.disco && c.train.prototype_mode == PrototypeMode::kText ? c.text_dim : c.model.projector_dim;
  ModelBundle bundle = build_model(c.model, shape, d, rng);
  if (read_text(dir / "architecture.txt") != bundle.architecture() + "\n") {
    throw DataError("saved model architecture does not match the run config");
  }
  std::vector<int> labels;
  std::istringstream in(read_text(dir / "classifier_labels.txt"));
  for (int l; in >> l;) labels.push_back(l);
  bundle.classifier().expand(labels, rng);
  auto assign = [](std::vector<double>& dst, std::vector<double> src, const char* what) {
    if (dst.size() != src.size()) throw DataError(std::string("saved model: ") + what + " size mismatch");
    dst = std::move(src);
  };
  assign(bundle.backbone().parameters(), read_doubles(dir / "backbone.bin"), "backbone");
  assign(bundle.projector().parameters(), read_doubles(dir / "projector.bin"), "projector");
  assign(bundle.classifier().weights(), read_doubles(dir / "classifier_weights.bin"), "classifier");
  assign(bundle.classifier().bias(), read_doubles(dir / "classifier_bias.bin"), "classifier bias");
  return bundle;
}

// ---------------------------------------------------------------------------
// run

struct RunResult {
  fs::path dir;
  AccuracyMatrix matrix;
};

inline std::shared_ptr<const TextEmbeddingProvider> default_text_provider(const ExperimentConfig& c) {
  return std::make_shared<HashTextEmbedding>(c.text_dim, c.seed);
}

// Trains every task and writes the full artifact set under `dir`.
inline RunResult run_experiment(const ExperimentConfig& config, const fs::path& dir) {
  const DatasetSource source = build_source(config);
  const ContinualScenario scenario = build_scenario(config);
  ContinualTrainer trainer(scenario, source, config.train, config.model, build_transform_settings(config),
                           default_text_provider(config));

  fs::create_directories(dir);
  fs::create_directories(dir / "snapshots");
  write_text(dir / "config.txt", emit_config(config));
  write_text(dir / "scenario.txt", serialize(scenario));
  write_snapshot(dir / "snapshots" / "task_0.bin", trainer.snapshots().front());

  RunRecord record = trainer.run([&](int k) {
    write_snapshot(dir / "snapshots" / ("task_" + std::to_string(k) + ".bin"), trainer.snapshots().back());
    if (config.dump_features) {
      fs::create_directories(dir / "features");
      std::ofstream out(dir / "features" / ("after_task_" + std::to_string(k) + ".csv"));
      dump_features(trainer, k, out, config.dump_projected);
    }
  });
  record.config_hash = config_hash(config);

  write_text(dir / "accuracy_matrix.csv", accuracy_csv(record.matrix));
  if (config.train.disco) write_pool(dir / "prototypes", record.pool);
  write_logits(dir / "final_logits.csv", record.final_logits);
  save_model(dir / "model", trainer.model());
  json info;
  info["config_hash"] = hex64(record.config_hash);
  info["tasks"] = scenario.num_tasks();
  info["seed"] = config.seed;
  info["mode"] = to_string(scenario.mode());
  write_text(dir / "run_info.json", info.dump(2) + "\n");
  return {dir, record.matrix};
}

// Re-exports features of a finished run from its saved model.
inline std::size_t export_features(const fs::path& run_dir, const fs::path& out_file, bool projected,
                                   std::optional<int> up_to = std::nullopt) {
  const ExperimentConfig config = load_config(run_dir / "config.txt");
  const DatasetSource source = build_source(config);
  const ContinualScenario scenario = parse_scenario(read_text(run_dir / "scenario.txt"));
  const ModelBundle bundle = load_model(run_dir / "model", config, source.shape);
  const int k = up_to.value_or(static_cast<int>(scenario.num_tasks()));
  if (k < 1 || k > static_cast<int>(scenario.num_tasks())) throw ConfigError("export-features: task out of range");
  std::vector<TaskDatasetView> views;
  for (int j = 1; j <= k; ++j) views.push_back(materialize_task(scenario, j, source, Split::kTest, build_transform_settings(config)));
  if (!out_file.parent_path().empty()) fs::create_directories(out_file.parent_path());
  std::ofstream out(out_file);
  if (!out) throw DataError("cannot write " + out_file.string());
  return dump_features(bundle, views, out, projected);
}

// Seeds seed, seed+1, ... for repeated runs.
inline std::vector<std::uint64_t> seed_list(std::uint64_t first, int count) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(first + static_cast<std::uint64_t>(i));
  return out;
}

// Runs jobs on up to `workers` threads; each job is an isolated run.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& job) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(workers, static_cast<int>(count)); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// report

struct RunMetrics {
  std::string run;
  std::size_t tasks = 0;
  double aa = 0.0;
  std::optional<double> fm;
  double ia = 0.0;
  std::optional<double> piv, pfts;
  std::optional<double> tia, ita_first;
  std::vector<double> aa_curve, forgetting, first_task_curve, ita;
  std::vector<std::string> warnings;
};

inline RunMetrics compute_run_metrics(const fs::path& dir) {
  RunMetrics m;
  m.run = dir.string();
  const AccuracyMatrix matrix = read_accuracy_csv(dir / "accuracy_matrix.csv");
  m.tasks = matrix.num_tasks();
  const auto aa = average_accuracy(matrix);
  m.aa = aa.overall;
  m.aa_curve = aa.per_task;
  m.ia = initial_accuracy(matrix);
  for (std::size_t k = 1; k <= matrix.num_tasks(); ++k) m.first_task_curve.push_back(matrix.at(k, 1));
  if (matrix.num_tasks() >= 2) {
    const auto f = forgetting_measure(matrix);
    m.fm = f.overall;
    m.forgetting = f.per_task;
  } else {
    m.warnings.push_back("FM undefined for a single task");
  }

  std::vector<ParameterSnapshot> snaps;
  bool complete = true;
  for (std::size_t t = 0; t <= matrix.num_tasks(); ++t) {
    const fs::path p = dir / "snapshots" / ("task_" + std::to_string(t) + ".bin");
    if (!fs::exists(p)) {
      complete = false;
      break;
    }
    snaps.push_back(read_snapshot(p));
  }
  if (!complete) {
    m.warnings.push_back("snapshots missing; PIV/PFTS omitted");
  } else if (snaps.size() < 3) {
    m.warnings.push_back("fewer than 2 task transitions; PIV/PFTS omitted");
  } else {
    const auto s = piv_pfts(snaps);
    m.piv = s.piv;
    m.pfts = s.pfts;
  }

  if (fs::exists(dir / "final_logits.csv") && fs::exists(dir / "scenario.txt")) {
    const auto scenario = parse_scenario(read_text(dir / "scenario.txt"));
    const auto log = read_logits(dir / "final_logits.csv");
    m.tia = task_inference_accuracy(predictions_from(log), scenario);
    for (int j = 1; j <= static_cast<int>(scenario.num_tasks()); ++j) m.ita.push_back(intra_task_accuracy(log, scenario, j));
    m.ita_first = m.ita.front();
  } else {
    m.warnings.push_back("final logits missing; TIA/ITA omitted");
  }
  return m;
}

inline json to_json(const RunMetrics& m) {
  json j;
  j["run"] = m.run;
  j["tasks"] = m.tasks;
  j["AA"] = m.aa;
  j["FM"] = m.fm ? json(*m.fm) : json(nullptr);
  j["IA"] = m.ia;
  if (m.piv) j["PIV"] = *m.piv;
  if (m.pfts) j["PFTS"] = *m.pfts;
  if (m.tia) j["TIA"] = *m.tia;
  if (m.ita_first) j["ITA_first"] = *m.ita_first;
  j["AA_k"] = m.aa_curve;
  j["forgetting"] = m.forgetting;
  j["first_task_accuracy"] = m.first_task_curve;
  j["ITA"] = m.ita;
  if (!m.warnings.empty()) j["warnings"] = m.warnings;
  return j;
}

// Mean of each scalar metric present in every run; curves averaged when
// lengths agree.
inline json mean_metrics(const std::vector<RunMetrics>& runs) {
  json j;
  auto mean_of = [&](auto getter) -> std::optional<double> {
    double sum = 0.0;
    for (const auto& r : runs) {
      const std::optional<double> v = getter(r);
      if (!v) return std::nullopt;
      sum += *v;
    }
    return sum / static_cast<double>(runs.size());
  };
  auto put = [&](const char* key, std::optional<double> v) {
    if (v) j[key] = *v;
  };
  j["runs"] = runs.size();
  put("AA", mean_of([](const RunMetrics& r) { return std::optional<double>(r.aa); }));
  put("FM", mean_of([](const RunMetrics& r) { return r.fm; }));
  put("IA", mean_of([](const RunMetrics& r) { return std::optional<double>(r.ia); }));
  put("PIV", mean_of([](const RunMetrics& r) { return r.piv; }));
  put("PFTS", mean_of([](const RunMetrics& r) { return r.pfts; }));
  put("TIA", mean_of([](const RunMetrics& r) { return r.tia; }));
  put("ITA_first", mean_of([](const RunMetrics& r) { return r.ita_first; }));
  auto mean_curve = [&](auto member) {
    std::vector<double> out;
    for (const auto& r : runs)
      if ((r.*member).size() != (runs.front().*member).size()) return out;
    out.assign((runs.front().*member).size(), 0.0);
    for (const auto& r : runs)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += (r.*member)[i] / static_cast<double>(runs.size());
    return out;
  };
  j["AA_k"] = mean_curve(&RunMetrics::aa_curve);
  j["forgetting"] = mean_curve(&RunMetrics::forgetting);
  j["first_task_accuracy"] = mean_curve(&RunMetrics::first_task_curve);
  return j;
}

struct Report {
  std::vector<RunMetrics> runs;
  json document;
};

// Computes metrics for each run directory, writes summary.json into each,
// and (when `out_dir` is set) report.json, aa_curve.csv and forgetting.csv.
inline Report report(const std::vector<fs::path>& run_dirs, const std::optional<fs::path>& out_dir = std::nullopt,
                     std::ostream* warnings = nullptr) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  Report rep;
  for (const auto& d : run_dirs) {
    if (!fs::exists(d / "accuracy_matrix.csv")) throw DataError("report: " + d.string() + " has no accuracy_matrix.csv");
    rep.runs.push_back(compute_run_metrics(d));
    write_text(d / "summary.json", to_json(rep.runs.back()).dump(2) + "\n");
    if (warnings)
      for (const auto& w : rep.runs.back().warnings) *warnings << "warning: " << d.string() << ": " << w << "\n";
  }
  rep.document["runs"] = json::array();
  for (const auto& r : rep.runs) rep.document["runs"].push_back(to_json(r));
  if (rep.runs.size() > 1) rep.document["mean"] = mean_metrics(rep.runs);
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_text(*out_dir / "report.json", rep.document.dump(2) + "\n");
    std::string aa = "run,k,AA_k\n", fm = "run,task,f_j\n";
    for (const auto& r : rep.runs) {
      for (std::size_t k = 0; k < r.aa_curve.size(); ++k) aa += r.run + "," + std::to_string(k + 1) + "," + format_double(r.aa_curve[k], "%.6f") + "\n";
      for (std::size_t j = 0; j < r.forgetting.size(); ++j) fm += r.run + "," + std::to_string(j + 1) + "," + format_double(r.forgetting[j], "%.6f") + "\n";
    }
    write_text(*out_dir / "aa_curve.csv", aa);
    write_text(*out_dir / "forgetting.csv", fm);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Multi-seed runs, sweeps and CIL/CILD comparison.

inline std::vector<fs::path> run_seeds(const ExperimentConfig& config, const fs::path& root,
                                       const std::vector<std::uint64_t>& seeds, int jobs = 1) {
  std::vector<fs::path> dirs(seeds.size());
  std::vector<std::string> failures(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    ExperimentConfig c = config;
    c.seed = seeds[i];
    c.train.seed = seeds[i];
    dirs[i] = root / ("seed_" + std::to_string(seeds[i]));
    c.output_dir = dirs[i].string();
    try {
      run_experiment(c, dirs[i]);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  for (const auto& f : failures)
    if (!f.empty()) throw Error(f);
  return dirs;
}

struct GridAxis {
  std::string key;
  std::vector<double> values;
};

// Parses `key=v1,v2,...`.
inline GridAxis parse_grid_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--grid expects key=v1,v2,... (got '" + spec + "')");
  GridAxis axis;
  axis.key = spec.substr(0, eq);
  if (axis.key.rfind("disco.", 0) == 0) axis.key = axis.key.substr(6);
  if (axis.key != "lambda_tcon" && axis.key != "lambda_ccon" && axis.key != "lambda_ccd") {
    throw ConfigError("--grid: unsupported key '" + axis.key + "' (expected lambda_tcon, lambda_ccon or lambda_ccd)");
  }
  for (const auto& v : split(spec.substr(eq + 1), ',')) {
    try {
      std::size_t used = 0;
      axis.values.push_back(std::stod(v, &used));
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError("--grid " + axis.key + ": '" + v + "' is not a number");
    }
  }
  if (axis.values.empty()) throw ConfigError("--grid " + axis.key + ": no values");
  return axis;
}

struct SweepRow {
  LossWeights weights;
  bool is_default = false;
  std::vector<fs::path> runs;
  std::optional<json> mean;
  std::string status = "ok";
};

inline std::vector<SweepRow> sweep(const ExperimentConfig& config, const std::vector<GridAxis>& axes,
                                   const std::vector<std::uint64_t>& seeds, const fs::path& root, int jobs = 1) {
  std::vector<double> tcon{config.train.weights.tcon}, ccon{config.train.weights.ccon}, ccd{config.train.weights.ccd};
  for (const auto& a : axes) {
    if (a.key == "lambda_tcon") tcon = a.values;
    if (a.key == "lambda_ccon") ccon = a.values;
    if (a.key == "lambda_ccd") ccd = a.values;
  }
  std::vector<SweepRow> rows;
  for (double t : tcon)
    for (double c : ccon)
      for (double d : ccd) {
        SweepRow row;
        row.weights = LossWeights{t, c, d};
        row.is_default = row.weights == LossWeights{};
        rows.push_back(row);
      }
  for (auto& row : rows) {
    const std::string name = "tcon_" + format_double(row.weights.tcon, "%g") + "_ccon_" + format_double(row.weights.ccon, "%g") +
                             "_ccd_" + format_double(row.weights.ccd, "%g");
    try {
      ExperimentConfig c = config;
      c.train.weights = row.weights;
      c.train.validate();
      row.runs = run_seeds(c, root / name, seeds, jobs);
      const Report rep = report(row.runs);
      row.mean = mean_metrics(rep.runs);
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
  }

  fs::create_directories(root);
  std::string csv = "lambda_tcon,lambda_ccon,lambda_ccd,default,AA,FM,IA,PIV,PFTS,status\n";
  json doc = json::array();
  for (const auto& row : rows) {
    auto cell = [&](const char* key) {
      return row.mean && row.mean->contains(key) ? format_double((*row.mean)[key].get<double>(), "%.4f") : std::string();
    };
    std::string status = row.status;
    for (char& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    csv += format_double(row.weights.tcon, "%g") + "," + format_double(row.weights.ccon, "%g") + "," +
           format_double(row.weights.ccd, "%g") + "," + (row.is_default ? "yes" : "no") + "," + cell("AA") + "," +
           cell("FM") + "," + cell("IA") + "," + cell("PIV") + "," + cell("PFTS") + "," + status + "\n";
    json j;
    j["lambda_tcon"] = row.weights.tcon;
    j["lambda_ccon"] = row.weights.ccon;
    j["lambda_ccd"] = row.weights.ccd;
    j["default"] = row.is_default;
    j["status"] = row.status;
    j["runs"] = json::array();
    for (const auto& r : row.runs) j["runs"].push_back(r.string());
    if (row.mean) j["mean"] = *row.mean;
    doc.push_back(j);
  }
  write_text(root / "sweep.csv", csv);
  write_text(root / "sweep.json", doc.dump(2) + "\n");
  return rows;
}

struct ComparisonArm {
  std::string name;
  std::vector<fs::path> runs;
  json mean;
};

struct Comparison {
  ComparisonArm cil, cild;
  json deltas;
  std::string table;
};

inline std::string signed_delta(double v) {
  const std::string body = format_double(std::abs(v), "%.2f");
  return (v < 0.0 ? "-" : "+") + body;
}

// Same label partition twice: every task in domain_order[0] (CIL) and one
// domain per task (CILD).
inline Comparison compare_cil_cild(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                   const fs::path& root, int jobs = 1) {
  if (config.scenario.domain_order.empty()) throw ConfigError("compare: scenario.domain_order is required");
  // Pre-flight: both arms must materialize before any training starts.
  {
    const DatasetSource source = build_source(config);
    const ContinualScenario cild = build_scenario(config);
    const ContinualScenario cil = cil_counterpart(cild);
    for (const auto* s : {&cil, &cild})
      for (int t = 1; t <= static_cast<int>(s->num_tasks()); ++t) {
        materialize_task(*s, t, source, Split::kTrain, build_transform_settings(config));
        materialize_task(*s, t, source, Split::kTest, build_transform_settings(config));
      }
  }
  Comparison cmp;
  cmp.cil.name = "CIL";
  cmp.cild.name = "CILD";

  auto run_arm = [&](bool domain_shift, const fs::path& arm_root) {
    std::vector<fs::path> dirs(seeds.size());
    std::vector<std::string> failures(seeds.size());
    parallel_for(seeds.size(), jobs, [&](std::size_t i) {
      try {
        ExperimentConfig c = config;
        c.seed = seeds[i];
        c.train.seed = seeds[i];
        dirs[i] = arm_root / ("seed_" + std::to_string(seeds[i]));
        c.output_dir = dirs[i].string();
        const DatasetSource source = build_source(c);
        const ContinualScenario cild = build_scenario(c);
        const ContinualScenario scenario = domain_shift ? cild : cil_counterpart(cild);
        ContinualTrainer trainer(scenario, source, c.train, c.model, build_transform_settings(c), default_text_provider(c));
        fs::create_directories(dirs[i] / "snapshots");
        write_text(dirs[i] / "config.txt", emit_config(c));
        write_text(dirs[i] / "scenario.txt", serialize(scenario));
        write_snapshot(dirs[i] / "snapshots" / "task_0.bin", trainer.snapshots().front());
        RunRecord rec = trainer.run([&](int k) {
          write_snapshot(dirs[i] / "snapshots" / ("task_" + std::to_string(k) + ".bin"), trainer.snapshots().back());
        });
        write_text(dirs[i] / "accuracy_matrix.csv", accuracy_csv(rec.matrix));
        write_logits(dirs[i] / "final_logits.csv", rec.final_logits);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    });
    for (const auto& f : failures)
      if (!f.empty()) throw Error(f);
    return dirs;
  };
  cmp.cil.runs = run_arm(false, root / "cil");
  cmp.cild.runs = run_arm(true, root / "cild");
  cmp.cil.mean = mean_metrics(report(cmp.cil.runs).runs);
  cmp.cild.mean = mean_metrics(report(cmp.cild.runs).runs);

  const char* keys[] = {"AA", "FM", "PIV", "PFTS"};
  std::ostringstream table;
  table << "| Scenario | AA | FM | PIV | PFTS |\n|---|---|---|---|---|\n";
  auto value = [](const json& j, const char* k) -> std::optional<double> {
    return j.contains(k) ? std::optional<double>(j[k].get<double>()) : std::nullopt;
  };
  table << "| CIL";
  for (const char* k : keys) {
    const auto v = value(cmp.cil.mean, k);
    table << " | " << (v ? format_double(*v, "%.2f") : "-");
  }
  table << " |\n| CILD";
  for (const char* k : keys) {
    const auto a = value(cmp.cil.mean, k), b = value(cmp.cild.mean, k);
    table << " | " << (b ? format_double(*b, "%.2f") : "-");
    if (a && b) table << " (" << signed_delta(*b - *a) << ")";
  }
  table << " |\n| delta";
  for (const char* k : keys) {
    const auto a = value(cmp.cil.mean, k), b = value(cmp.cild.mean, k);
    if (a && b) {
      cmp.deltas[k] = *b - *a;
      table << " | " << signed_delta(*b - *a);
    } else {
      table << " | -";
    }
  }
  table << " |\n";
  cmp.table = table.str();

  fs::create_directories(root);
  json doc;
  doc["CIL"] = cmp.cil.mean;
  doc["CILD"] = cmp.cild.mean;
  doc["delta"] = cmp.deltas;
  doc["seeds"] = seeds;
  write_text(root / "compare.json", doc.dump(2) + "\n");
  write_text(root / "compare.md", cmp.table);
  return cmp;
}

}  // namespace disco
