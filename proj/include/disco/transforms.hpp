#pragma once

// Deterministic parametric domain transforms.
//
// Each transform is a per-domain "style": its random parameters (channel
// permutation, block order) are drawn once from (seed, transform id) and then
// applied identically to every sample. Applying the same transform with the
// same seed to the same sample is bit-identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "disco/error.hpp"
#include "disco/random.hpp"

namespace disco {

// Channel-major sample geometry.
struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

inline Shape flat_shape(std::size_t dim) { return Shape{1, 1, dim}; }

enum class TransformKind {
  kIdentity,
  kChannelPermutation,
  kHueRotation,
  kGaussianBlur,
  kContrastInversion,
  kBlockShuffle,
};

class DomainTransform {
 public:
  using Params = std::map<std::string, double>;

  DomainTransform() = default;

  DomainTransform(std::string id, TransformKind kind, Params params, std::uint64_t seed)
      : id_(std::move(id)), kind_(kind), params_(std::move(params)), seed_(seed) {}

  const std::string& id() const { return id_; }
  TransformKind kind() const { return kind_; }
  const Params& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  double param(const std::string& key, double fallback) const {
    auto it = params_.find(key);
    return it == params_.end() ? fallback : it->second;
  }

  std::vector<double> apply(std::span<const double> sample, const Shape& shape) const {
    if (sample.size() != shape.size()) {
      throw DataError("transform '" + id_ + "': sample size " + std::to_string(sample.size()) +
                      " does not match shape size " + std::to_string(shape.size()));
    }
    switch (kind_) {
      case TransformKind::kIdentity:
        return {sample.begin(), sample.end()};
      case TransformKind::kChannelPermutation:
        return permute_channels(sample, shape);
      case TransformKind::kHueRotation:
        return rotate_hue(sample, shape);
      case TransformKind::kGaussianBlur:
        return blur(sample, shape);
      case TransformKind::kContrastInversion:
        return invert(sample);
      case TransformKind::kBlockShuffle:
        return shuffle_blocks(sample, shape);
    }
    return {sample.begin(), sample.end()};
  }

 private:
  Rng param_rng() const {
    return Rng::stream(fnv1a(id_.data(), id_.size(), seed_), streams::kTransform);
  }

  // Random permutation with no fixed points when n > 1, so the style always
  // changes the input.
  std::vector<std::size_t> derangement(std::size_t n) const {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    if (n < 2) return perm;
    Rng rng = param_rng();
    // Sattolo's algorithm yields a single n-cycle.
    for (std::size_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_index(i));
      std::swap(perm[i], perm[j]);
    }
    return perm;
  }

  std::vector<double> permute_channels(std::span<const double> x, const Shape& s) const {
    const auto perm = derangement(s.channels);
    const std::size_t plane = s.height * s.width;
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < s.channels; ++c) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(perm[c] * plane), plane,
                  out.begin() + static_cast<std::ptrdiff_t>(c * plane));
    }
    return out;
  }

  // Rotation about the grey axis of RGB space.
  std::vector<double> rotate_hue(std::span<const double> x, const Shape& s) const {
    if (s.channels != 3) {
      throw ConfigError("transform '" + id_ + "': hue rotation needs 3 channels, got " +
                        std::to_string(s.channels));
    }
    const double angle = param("degrees", 120.0) * std::numbers::pi / 180.0;
    const double c = std::cos(angle);
    const double k = std::sin(angle) / std::sqrt(3.0);
    const double third = (1.0 - c) / 3.0;
    const double m[3][3] = {{c + third, third - k, third + k},
                            {third + k, c + third, third - k},
                            {third - k, third + k, c + third}};
    const std::size_t plane = s.height * s.width;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < plane; ++i) {
      const double rgb[3] = {x[i], x[plane + i], x[2 * plane + i]};
      for (std::size_t r = 0; r < 3; ++r) {
        out[r * plane + i] = m[r][0] * rgb[0] + m[r][1] * rgb[1] + m[r][2] * rgb[2];
      }
    }
    return out;
  }

  // Separable Gaussian blur with clamped borders.
  std::vector<double> blur(std::span<const double> x, const Shape& s) const {
    const double sigma = param("sigma", 1.0);
    if (!(sigma > 0.0)) return {x.begin(), x.end()};
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(2.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
      const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
      kernel[static_cast<std::size_t>(i + radius)] = w;
      total += w;
    }
    for (double& w : kernel) w /= total;

    const auto h = static_cast<std::ptrdiff_t>(s.height);
    const auto w = static_cast<std::ptrdiff_t>(s.width);
    auto clamp = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return std::clamp<std::ptrdiff_t>(v, 0, hi - 1); };
    std::vector<double> tmp(x.size()), out(x.size());
    for (std::size_t c = 0; c < s.channels; ++c) {
      const std::size_t base = c * s.height * s.width;
      for (std::ptrdiff_t r = 0; r < h; ++r) {
        for (std::ptrdiff_t q = 0; q < w; ++q) {
          double acc = 0.0;
          for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
            acc += kernel[static_cast<std::size_t>(i + radius)] *
                   x[base + static_cast<std::size_t>(r * w + clamp(q + i, w))];
          }
          tmp[base + static_cast<std::size_t>(r * w + q)] = acc;
        }
      }
      for (std::ptrdiff_t r = 0; r < h; ++r) {
        for (std::ptrdiff_t q = 0; q < w; ++q) {
          double acc = 0.0;
          for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
            acc += kernel[static_cast<std::size_t>(i + radius)] *
                   tmp[base + static_cast<std::size_t>(clamp(r + i, h) * w + q)];
          }
          out[base + static_cast<std::size_t>(r * w + q)] = acc;
        }
      }
    }
    return out;
  }

  // x -> 2*pivot - x
  std::vector<double> invert(std::span<const double> x) const {
    const double pivot = param("pivot", 0.5);
    std::vector<double> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), [pivot](double v) { return 2.0 * pivot - v; });
    return out;
  }

  // Permutes the grid of block x block tiles; remainder rows/columns stay put.
  // Flat inputs (height 1) shuffle contiguous runs of `block` coordinates.
  std::vector<double> shuffle_blocks(std::span<const double> x, const Shape& s) const {
    const auto block = static_cast<std::size_t>(std::max(1.0, param("block", 2.0)));
    const std::size_t bh = s.height == 1 ? 1 : block;
    const std::size_t rows = s.height / bh;
    const std::size_t cols = s.width / block;
    const auto perm = derangement(rows * cols);
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t c = 0; c < s.channels; ++c) {
      const std::size_t base = c * s.height * s.width;
      for (std::size_t dst = 0; dst < perm.size(); ++dst) {
        const std::size_t src = perm[dst];
        const std::size_t sr = (src / cols) * bh, sc = (src % cols) * block;
        const std::size_t dr = (dst / cols) * bh, dc = (dst % cols) * block;
        for (std::size_t i = 0; i < bh; ++i) {
          for (std::size_t j = 0; j < block; ++j) {
            out[base + (dr + i) * s.width + dc + j] = x[base + (sr + i) * s.width + sc + j];
          }
        }
      }
    }
    return out;
  }

  std::string id_ = "identity";
  TransformKind kind_ = TransformKind::kIdentity;
  Params params_;
  std::uint64_t seed_ = 0;
};

// Registered transform names. "real" is an alias of identity.
inline const std::map<std::string, TransformKind>& transform_registry() {
  static const std::map<std::string, TransformKind> registry = {
      {"identity", TransformKind::kIdentity},
      {"real", TransformKind::kIdentity},
      {"channel_permutation", TransformKind::kChannelPermutation},
      {"hue_rotation", TransformKind::kHueRotation},
      {"gaussian_blur", TransformKind::kGaussianBlur},
      {"contrast_inversion", TransformKind::kContrastInversion},
      {"block_shuffle", TransformKind::kBlockShuffle},
  };
  return registry;
}

inline bool is_registered_transform(const std::string& id) {
  return transform_registry().contains(id);
}

inline DomainTransform make_transform(const std::string& id, std::uint64_t seed,
                                      DomainTransform::Params params = {}) {
  auto it = transform_registry().find(id);
  if (it == transform_registry().end()) {
    std::string known;
    for (const auto& [name, kind] : transform_registry()) known += (known.empty() ? "" : ", ") + name;
    throw ConfigError("unknown domain transform '" + id + "' (known: " + known + ")");
  }
  return DomainTransform(id, it->second, std::move(params), seed);
}

}  // namespace disco
