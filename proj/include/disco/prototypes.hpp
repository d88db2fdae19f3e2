#pragma once

// Task prototypes: batch means of projected features accumulated into one
// running mean per task, text-embedding prototypes, and the prompt-key
// variant for prompt-pool models.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "disco/error.hpp"
#include "disco/model.hpp"
#include "disco/random.hpp"

namespace disco {

struct EmbeddingError : Error {
  using Error::Error;
};

struct BatchPrototype {
  Vector value;
  std::size_t batch_index = 1;
};

inline BatchPrototype batch_prototype(const Matrix& projected) {
  if (projected.rows() == 0) throw DataError("batch_prototype: empty batch");
  if (!projected.allFinite()) throw NumericError("batch_prototype: non-finite feature");
  return BatchPrototype{projected.colwise().mean().transpose(), 1};
}

// Running mean over the batch prototypes of one task:
//   p_i = ((i-1)/i) p_{i-1} + (1/i) batch_i
struct MomentumState {
  Vector p;
  std::size_t count = 0;  // i, number of batches folded in
};

inline MomentumState momentum_update(MomentumState state, const Vector& batch) {
  if (state.count > 0 && state.p.size() != batch.size()) {
    throw DataError("momentum_update: dimension " + std::to_string(batch.size()) + " != accumulated " +
                    std::to_string(state.p.size()));
  }
  const auto i = static_cast<double>(state.count + 1);
  if (state.count == 0) {
    state.p = batch;
  } else {
    state.p = ((i - 1.0) / i) * state.p + (1.0 / i) * batch;
  }
  state.count += 1;
  return state;
}

class PrototypePool {
 public:
  const std::map<int, Vector>& prototypes() const { return finalized_; }
  const MomentumState& state() const { return state_; }
  bool contains(int task_id) const { return finalized_.contains(task_id); }
  std::size_t size() const { return finalized_.size(); }

  const Vector& at(int task_id) const {
    auto it = finalized_.find(task_id);
    if (it == finalized_.end()) throw DataError("prototype pool has no task " + std::to_string(task_id));
    return it->second;
  }

  // Returns the accumulated prototype after folding in `batch`.
  const Vector& accumulate(const Vector& batch) {
    state_ = momentum_update(std::move(state_), batch);
    return state_.p;
  }

  // Prototypes of tasks strictly before `t`, in task order.
  std::vector<Vector> previous(int t) const {
    std::vector<Vector> out;
    for (const auto& [id, p] : finalized_)
      if (id < t) out.push_back(p);
    return out;
  }

  void finalize_task(int task_id) {
    if (state_.count == 0) throw DataError("finalize_task: no batches accumulated for task " + std::to_string(task_id));
    if (finalized_.contains(task_id)) throw DataError("finalize_task: task " + std::to_string(task_id) + " already finalized");
    finalized_.emplace(task_id, state_.p);
    state_ = {};
  }

  // Restores a persisted entry.
  void insert(int task_id, Vector p) {
    if (!finalized_.emplace(task_id, std::move(p)).second) {
      throw DataError("prototype pool: duplicate task " + std::to_string(task_id));
    }
  }

 private:
  std::map<int, Vector> finalized_;
  MomentumState state_;
};

inline PrototypePool finalize_task(PrototypePool pool, int task_id) {
  pool.finalize_task(task_id);
  return pool;
}

// `prototypes/pool.bin` holds one vector record per task back to back;
// `prototypes/index.txt` maps each task id to its record's byte offset.
inline void write_pool(const std::filesystem::path& dir, const PrototypePool& pool) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "pool.bin", std::ios::binary);
  std::ofstream index(dir / "index.txt");
  if (!bin || !index) throw DataError("cannot write prototype pool under " + dir.string());
  for (const auto& [task_id, p] : pool.prototypes()) {
    index << task_id << " " << static_cast<std::uint64_t>(bin.tellp()) << "\n";
    write_vector_binary(bin, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
  }
}

inline PrototypePool read_pool(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.txt");
  std::ifstream bin(dir / "pool.bin", std::ios::binary);
  if (!index || !bin) throw DataError("cannot read prototype pool under " + dir.string());
  PrototypePool pool;
  int task_id = 0;
  std::uint64_t offset = 0;
  while (index >> task_id >> offset) {
    bin.seekg(static_cast<std::streamoff>(offset));
    auto values = read_vector_binary(bin);
    pool.insert(task_id, Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Text prototypes.

class TextEmbeddingProvider {
 public:
  virtual ~TextEmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector embed(const std::string& prompt) const = 0;
};

// Offline stand-in for a text encoder: each whitespace token maps to a fixed
// pseudorandom direction, the whole string adds a smaller order-sensitive
// component, and the sum is unit-normalised. Prompts sharing class names get
// correlated embeddings; reordering names changes the vector.
class HashTextEmbedding final : public TextEmbeddingProvider {
 public:
  explicit HashTextEmbedding(std::size_t dim = 128, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
    if (dim_ == 0) throw ConfigError("text embedding dimension must be positive");
  }

  std::size_t dim() const override { return dim_; }

  Vector embed(const std::string& prompt) const override {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(dim_));
    std::size_t start = 0;
    while (start < prompt.size()) {
      const auto end = std::min(prompt.find(' ', start), prompt.size());
      if (end > start) v += direction(prompt.substr(start, end - start));
      start = end + 1;
    }
    v += 0.25 * direction("\x1f" + prompt);
    const double n = v.norm();
    if (!(n > 0.0)) throw EmbeddingError("empty prompt");
    return v / n;
  }

 private:
  Vector direction(const std::string& token) const {
    Rng rng(fnv1a(token.data(), token.size(), seed_ ^ 0x7465787465ULL));
    Vector d(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = rng.normal();
    return d / d.norm();
  }

  std::size_t dim_;
  std::uint64_t seed_;
};

inline std::string text_prompt(const std::vector<std::string>& class_names) {
  std::string prompt = "a photo of ";
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (i) prompt += " or ";
    prompt += class_names[i];
  }
  return prompt;
}

inline BatchPrototype text_prototype(const std::vector<std::string>& class_names, const TextEmbeddingProvider& provider) {
  if (class_names.empty()) throw DataError("text_prototype: empty class list");
  const std::string prompt = text_prompt(class_names);
  Vector v;
  try {
    v = provider.embed(prompt);
  } catch (const EmbeddingError&) {
    throw;
  } catch (const std::exception& e) {
    throw EmbeddingError("embedding '" + prompt + "' failed: " + e.what());
  }
  if (static_cast<std::size_t>(v.size()) != provider.dim() || !v.allFinite()) {
    throw EmbeddingError("embedding '" + prompt + "' returned an invalid vector");
  }
  return BatchPrototype{std::move(v), 1};
}

// Mean of the `n` most frequently selected keys; ties go to the lower index.
inline BatchPrototype prompt_key_prototype(const std::vector<std::size_t>& frequencies, const Matrix& keys, std::size_t n) {
  if (static_cast<std::size_t>(keys.rows()) != frequencies.size()) {
    throw DataError("prompt_key_prototype: frequency table and key count differ");
  }
  const auto selected = static_cast<std::size_t>(std::count_if(frequencies.begin(), frequencies.end(), [](std::size_t f) { return f > 0; }));
  if (n == 0 || selected < n) {
    throw DataError("prompt_key_prototype: " + std::to_string(selected) + " keys selected, need " + std::to_string(n));
  }
  std::vector<std::size_t> order(frequencies.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frequencies[a] > frequencies[b]; });
  Vector mean = Vector::Zero(keys.cols());
  for (std::size_t i = 0; i < n; ++i) mean += keys.row(static_cast<Eigen::Index>(order[i])).transpose();
  return BatchPrototype{mean / static_cast<double>(n), 1};
}

}  // namespace disco
