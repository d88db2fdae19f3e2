#pragma once

// In-memory labelled datasets, synthetic generators, and manifest ingestion.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "disco/error.hpp"
#include "disco/random.hpp"
#include "disco/transforms.hpp"

namespace disco {

struct Sample {
  std::vector<double> x;
  int label = 0;
  std::string domain;  // empty for domain-agnostic sources
  std::size_t id = 0;  // stable index within its split
};

// Train and test pools over a fixed label space.
struct DatasetSource {
  Shape shape;
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::map<int, std::string> class_names;

  // True when samples carry real domain tags (manifest sources).
  bool has_domains() const {
    return std::any_of(train.begin(), train.end(), [](const Sample& s) { return !s.domain.empty(); });
  }

  std::string class_name(int label) const {
    auto it = class_names.find(label);
    return it == class_names.end() ? "class_" + std::to_string(label) : it->second;
  }

  std::set<int> labels() const {
    std::set<int> out;
    for (const auto& s : train) out.insert(s.label);
    return out;
  }
};

struct BlobOptions {
  int num_classes = 10;
  Shape shape = flat_shape(16);
  int train_per_class = 100;
  int test_per_class = 50;
  double center_scale = 1.0;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

// Isotropic Gaussian clusters, one per class.
inline DatasetSource make_blobs(const BlobOptions& opt) {
  if (opt.num_classes < 1 || opt.train_per_class < 1 || opt.test_per_class < 1 || opt.shape.size() == 0) {
    throw ConfigError("blobs: num_classes, per-class counts and dimension must be positive");
  }
  Rng rng = Rng::stream(opt.seed, streams::kData);
  const std::size_t dim = opt.shape.size();
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(opt.num_classes), std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = rng.normal(0.0, opt.center_scale);

  DatasetSource src;
  src.shape = opt.shape;
  auto fill = [&](std::vector<Sample>& out, int per_class) {
    for (int label = 0; label < opt.num_classes; ++label) {
      for (int n = 0; n < per_class; ++n) {
        Sample s;
        s.label = label;
        s.id = out.size();
        s.x.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) s.x[i] = centers[static_cast<std::size_t>(label)][i] + rng.normal(0.0, opt.noise);
        out.push_back(std::move(s));
      }
    }
  };
  fill(src.train, opt.train_per_class);
  fill(src.test, opt.test_per_class);
  return src;
}

struct MoonOptions {
  int num_classes = 10;  // rounded up to pairs of moons
  int train_per_class = 100;
  int test_per_class = 50;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

// Interleaving half-circles; class 2k and 2k+1 form the k-th pair, pairs laid
// out on a grid so every class is learnable.
inline DatasetSource make_moons(const MoonOptions& opt) {
  if (opt.num_classes < 1 || opt.train_per_class < 1 || opt.test_per_class < 1) {
    throw ConfigError("moons: num_classes and per-class counts must be positive");
  }
  Rng rng = Rng::stream(opt.seed, streams::kData);
  DatasetSource src;
  src.shape = flat_shape(2);
  auto fill = [&](std::vector<Sample>& out, int per_class) {
    for (int label = 0; label < opt.num_classes; ++label) {
      const int pair = label / 2;
      const double ox = 4.0 * (pair % 4), oy = 3.0 * (pair / 4);
      for (int n = 0; n < per_class; ++n) {
        const double t = std::numbers::pi * rng.uniform01();
        Sample s;
        s.label = label;
        s.id = out.size();
        if (label % 2 == 0) {
          s.x = {ox + std::cos(t), oy + std::sin(t)};
        } else {
          s.x = {ox + 1.0 - std::cos(t), oy + 0.5 - std::sin(t)};
        }
        s.x[0] += rng.normal(0.0, opt.noise);
        s.x[1] += rng.normal(0.0, opt.noise);
        out.push_back(std::move(s));
      }
    }
  };
  fill(src.train, opt.train_per_class);
  fill(src.test, opt.test_per_class);
  return src;
}

// ---------------------------------------------------------------------------
// Manifests: `path,label,domain` per line with a mandatory header.

struct ManifestRecord {
  std::string path;
  int label = 0;
  std::string domain;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path root;  // directory relative paths resolve against

  std::set<std::string> domains() const {
    std::set<std::string> out;
    for (const auto& r : records) out.insert(r.domain);
    return out;
  }
};

inline std::string trim(std::string s) {
  const auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline DatasetManifest parse_manifest(std::istream& in, std::filesystem::path root = {}) {
  DatasetManifest manifest;
  manifest.root = std::move(root);
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest: empty input, header 'path,label,domain' required");
  if (split(trim(line), ',') != std::vector<std::string>{"path", "label", "domain"}) {
    throw DataError("manifest: header must be 'path,label,domain', got '" + trim(line) + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 3) {
      throw DataError("manifest line " + std::to_string(lineno) + ": expected 3 fields, got " +
                      std::to_string(fields.size()));
    }
    ManifestRecord rec;
    rec.path = fields[0];
    try {
      std::size_t used = 0;
      rec.label = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(lineno) + ": label '" + fields[1] + "' is not an integer");
    }
    rec.domain = fields[2];
    if (rec.path.empty()) throw DataError("manifest line " + std::to_string(lineno) + ": empty path");
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

inline DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  return parse_manifest(in, file.parent_path());
}

// Reads a binary PGM (P5) or PPM (P6) into [0,1] channel-major values.
inline std::vector<double> read_netpbm(const std::filesystem::path& file, Shape& shape) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open sample " + file.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw DataError(file.string() + ": unsupported netpbm type " + magic);
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    long v = 0;
    in >> v;
    return v;
  };
  const long width = next_int(), height = next_int(), maxval = next_int();
  in.get();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) throw DataError(file.string() + ": bad netpbm header");
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t plane = static_cast<std::size_t>(width * height);
  std::vector<unsigned char> raw(plane * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError(file.string() + ": truncated pixel data");
  shape = Shape{channels, static_cast<std::size_t>(height), static_cast<std::size_t>(width)};
  std::vector<double> out(raw.size());
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < channels; ++c)
      out[c * plane + p] = raw[p * channels + c] / static_cast<double>(maxval);
  return out;
}

// Reads a whitespace- or comma-separated vector of numbers.
inline std::vector<double> read_vector_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open sample " + file.string());
  std::vector<double> out;
  std::string token;
  while (in >> token) {
    for (const auto& part : split(token, ',')) {
      if (part.empty()) continue;
      try {
        out.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw DataError(file.string() + ": non-numeric token '" + part + "'");
      }
    }
  }
  if (out.empty()) throw DataError(file.string() + ": empty sample");
  return out;
}

inline std::vector<double> load_sample(const std::filesystem::path& file, Shape& shape) {
  const auto ext = file.extension().string();
  if (ext == ".pgm" || ext == ".ppm") return read_netpbm(file, shape);
  auto v = read_vector_file(file);
  shape = flat_shape(v.size());
  return v;
}

inline std::vector<Sample> load_manifest_samples(const DatasetManifest& manifest, Shape& shape) {
  std::vector<Sample> out;
  out.reserve(manifest.records.size());
  std::optional<Shape> common;
  for (const auto& rec : manifest.records) {
    std::filesystem::path p(rec.path);
    if (p.is_relative()) p = manifest.root / p;
    Shape s;
    Sample sample;
    sample.x = load_sample(p, s);
    if (common && !(*common == s)) throw DataError(p.string() + ": sample shape differs from earlier samples");
    common = s;
    sample.label = rec.label;
    sample.domain = rec.domain;
    sample.id = out.size();
    out.push_back(std::move(sample));
  }
  if (common) shape = *common;
  return out;
}

// Builds a source from train/test manifests.
inline DatasetSource load_manifest_source(const DatasetManifest& train, const DatasetManifest& test) {
  DatasetSource src;
  Shape train_shape, test_shape;
  src.train = load_manifest_samples(train, train_shape);
  src.test = load_manifest_samples(test, test_shape);
  if (src.train.empty()) throw DataError("training manifest has no records");
  if (!src.test.empty() && !(train_shape == test_shape)) throw DataError("train and test samples differ in shape");
  src.shape = train_shape;
  return src;
}

}  // namespace disco
