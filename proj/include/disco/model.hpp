#pragma once

// Decoupled feature extractor / projector / classifier with flat parameter
// storage. Every parameterised part keeps its weights in one contiguous
// std::vector<double>; that vector's order is the canonical ordering used by
// snapshots, the optimizer and the interference metrics.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "disco/error.hpp"
#include "disco/random.hpp"
#include "disco/transforms.hpp"

namespace disco {

// Batches are stored one sample per row.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMatrixMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Activations kept from a forward pass for the matching backward pass.
struct ForwardCache {
  std::vector<Matrix> tensors;
};

class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string architecture() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;

  virtual Matrix forward(const Matrix& x, ForwardCache* cache) const = 0;

  // Adds dL/dθ for the batch to `grad` (same length as parameters()).
  virtual void backward(const ForwardCache& cache, const Matrix& grad_out, std::span<double> grad) const = 0;

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

 protected:
  std::vector<double> params_;
};

// Linear -> ReLU -> Linear -> ReLU -> Linear.
class MlpBackbone final : public Backbone {
 public:
  MlpBackbone(std::size_t input_dim, std::size_t hidden, std::size_t feature_dim, Rng& rng)
      : sizes_{input_dim, hidden, hidden, feature_dim} {
    if (input_dim == 0 || hidden == 0 || feature_dim == 0) throw ConfigError("mlp: dimensions must be positive");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double scale = std::sqrt(2.0 / static_cast<double>(sizes_[l]));
      for (std::size_t i = 0; i < sizes_[l + 1] * sizes_[l]; ++i) params_.push_back(rng.normal(0.0, scale));
      params_.insert(params_.end(), sizes_[l + 1], 0.0);
    }
  }

  std::string architecture() const override {
    return "mlp:" + std::to_string(sizes_[0]) + "-" + std::to_string(sizes_[1]) + "-" + std::to_string(sizes_[2]) +
           "-" + std::to_string(sizes_[3]);
  }
  std::size_t input_dim() const override { return sizes_.front(); }
  std::size_t output_dim() const override { return sizes_.back(); }
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<MlpBackbone>(*this); }

  Matrix forward(const Matrix& x, ForwardCache* cache) const override {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) throw DataError("mlp: input width mismatch");
    if (cache) cache->tensors.clear();
    Matrix a = x;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(sizes_[l]), out = static_cast<Eigen::Index>(sizes_[l + 1]);
      ConstRowMatrixMap w(params_.data() + offset, out, in);
      Eigen::Map<const Vector> b(params_.data() + offset + static_cast<std::size_t>(out * in), out);
      offset += static_cast<std::size_t>(out * in + out);
      if (cache) cache->tensors.push_back(a);
      Matrix z = a * w.transpose();
      z.rowwise() += b.transpose();
      if (l + 2 < sizes_.size()) {
        if (cache) cache->tensors.push_back(z);
        a = z.cwiseMax(0.0);
      } else {
        a = std::move(z);
      }
    }
    return a;
  }

  void backward(const ForwardCache& cache, const Matrix& grad_out, std::span<double> grad) const override {
    // tensors: a0, z1, a1, z2, a2
    Matrix g = grad_out;
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets.push_back(offset);
      offset += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
    }
    for (std::size_t l = sizes_.size() - 1; l-- > 0;) {
      const auto in = static_cast<Eigen::Index>(sizes_[l]), out = static_cast<Eigen::Index>(sizes_[l + 1]);
      const Matrix& input = l == 0 ? cache.tensors[0] : cache.tensors[2 * l];
      RowMatrixMap dw(grad.data() + offsets[l], out, in);
      Eigen::Map<Vector> db(grad.data() + offsets[l] + static_cast<std::size_t>(out * in), out);
      dw.noalias() += g.transpose() * input;
      db += g.colwise().sum().transpose();
      if (l == 0) break;
      ConstRowMatrixMap w(params_.data() + offsets[l], out, in);
      Matrix prev = g * w;
      const Matrix& z = cache.tensors[2 * l - 1];
      g = prev.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    }
  }

 private:
  std::vector<std::size_t> sizes_;
};

// conv3x3 -> ReLU -> avgpool2 -> conv3x3 -> ReLU -> global avgpool -> linear.
class SmallCnnBackbone final : public Backbone {
 public:
  SmallCnnBackbone(Shape input, std::size_t channels1, std::size_t channels2, std::size_t feature_dim, Rng& rng)
      : in_(input), c1_(channels1), c2_(channels2), d_(feature_dim) {
    if (input.size() == 0 || c1_ == 0 || c2_ == 0 || d_ == 0) throw ConfigError("cnn: dimensions must be positive");
    if (input.height < 2 || input.width < 2) throw ConfigError("cnn: input must be at least 2x2");
    ph_ = in_.height / 2;
    pw_ = in_.width / 2;
    auto init = [&](std::size_t count, std::size_t fan_in) {
      const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_.push_back(rng.normal(0.0, scale));
    };
    init(c1_ * in_.channels * 9, in_.channels * 9);
    params_.insert(params_.end(), c1_, 0.0);
    init(c2_ * c1_ * 9, c1_ * 9);
    params_.insert(params_.end(), c2_, 0.0);
    init(d_ * c2_, c2_);
    params_.insert(params_.end(), d_, 0.0);
  }

  std::string architecture() const override {
    return "cnn:" + std::to_string(in_.channels) + "x" + std::to_string(in_.height) + "x" + std::to_string(in_.width) +
           "-" + std::to_string(c1_) + "-" + std::to_string(c2_) + "-" + std::to_string(d_);
  }
  std::size_t input_dim() const override { return in_.size(); }
  std::size_t output_dim() const override { return d_; }
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<SmallCnnBackbone>(*this); }

  Matrix forward(const Matrix& x, ForwardCache* cache) const override {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) throw DataError("cnn: input width mismatch");
    const auto n = x.rows();
    const Offsets o = offsets();
    const std::size_t hw = in_.height * in_.width, phw = ph_ * pw_;
    Matrix z1(n, static_cast<Eigen::Index>(c1_ * hw));
    Matrix pooled(n, static_cast<Eigen::Index>(c1_ * phw));
    Matrix z2(n, static_cast<Eigen::Index>(c2_ * phw));
    Matrix gap(n, static_cast<Eigen::Index>(c2_));
    std::vector<double> in_buf, a1(c1_ * hw), p1(c1_ * phw), out2(c2_ * phw);
    for (Eigen::Index r = 0; r < n; ++r) {
      in_buf.resize(static_cast<std::size_t>(x.cols()));
      for (Eigen::Index c = 0; c < x.cols(); ++c) in_buf[static_cast<std::size_t>(c)] = x(r, c);
      conv_forward(in_buf, in_.channels, in_.height, in_.width, o.w1, o.b1, c1_, a1);
      for (std::size_t i = 0; i < a1.size(); ++i) z1(r, static_cast<Eigen::Index>(i)) = a1[i];
      for (double& v : a1) v = std::max(v, 0.0);
      for (std::size_t c = 0; c < c1_; ++c)
        for (std::size_t i = 0; i < ph_; ++i)
          for (std::size_t j = 0; j < pw_; ++j) {
            const double* plane = a1.data() + c * hw;
            p1[c * phw + i * pw_ + j] = 0.25 * (plane[(2 * i) * in_.width + 2 * j] + plane[(2 * i) * in_.width + 2 * j + 1] +
                                                plane[(2 * i + 1) * in_.width + 2 * j] +
                                                plane[(2 * i + 1) * in_.width + 2 * j + 1]);
          }
      for (std::size_t i = 0; i < p1.size(); ++i) pooled(r, static_cast<Eigen::Index>(i)) = p1[i];
      conv_forward(p1, c1_, ph_, pw_, o.w2, o.b2, c2_, out2);
      for (std::size_t i = 0; i < out2.size(); ++i) z2(r, static_cast<Eigen::Index>(i)) = out2[i];
      for (std::size_t c = 0; c < c2_; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < phw; ++i) acc += std::max(out2[c * phw + i], 0.0);
        gap(r, static_cast<Eigen::Index>(c)) = acc / static_cast<double>(phw);
      }
    }
    ConstRowMatrixMap w3(params_.data() + o.w3, static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(c2_));
    Eigen::Map<const Vector> b3(params_.data() + o.b3, static_cast<Eigen::Index>(d_));
    Matrix out = gap * w3.transpose();
    out.rowwise() += b3.transpose();
    if (cache) cache->tensors = {x, z1, pooled, z2, gap};
    return out;
  }

  void backward(const ForwardCache& cache, const Matrix& grad_out, std::span<double> grad) const override {
    const Offsets o = offsets();
    const Matrix& x = cache.tensors[0];
    const Matrix& z1 = cache.tensors[1];
    const Matrix& pooled = cache.tensors[2];
    const Matrix& z2 = cache.tensors[3];
    const Matrix& gap = cache.tensors[4];
    const std::size_t hw = in_.height * in_.width, phw = ph_ * pw_;

    RowMatrixMap dw3(grad.data() + o.w3, static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(c2_));
    Eigen::Map<Vector> db3(grad.data() + o.b3, static_cast<Eigen::Index>(d_));
    dw3.noalias() += grad_out.transpose() * gap;
    db3 += grad_out.colwise().sum().transpose();
    ConstRowMatrixMap w3(params_.data() + o.w3, static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(c2_));
    const Matrix dgap = grad_out * w3;

    std::vector<double> dz2(c2_ * phw), in_p1(c1_ * phw), dp1(c1_ * phw), dz1(c1_ * hw), in_x(in_.size()), unused;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < c2_; ++c)
        for (std::size_t i = 0; i < phw; ++i) {
          const double pre = z2(r, static_cast<Eigen::Index>(c * phw + i));
          dz2[c * phw + i] = pre > 0.0 ? dgap(r, static_cast<Eigen::Index>(c)) / static_cast<double>(phw) : 0.0;
        }
      for (std::size_t i = 0; i < in_p1.size(); ++i) in_p1[i] = pooled(r, static_cast<Eigen::Index>(i));
      std::fill(dp1.begin(), dp1.end(), 0.0);
      conv_backward(in_p1, c1_, ph_, pw_, o.w2, c2_, dz2, grad.data() + o.w2, grad.data() + o.b2, dp1);
      std::fill(dz1.begin(), dz1.end(), 0.0);
      for (std::size_t c = 0; c < c1_; ++c)
        for (std::size_t i = 0; i < ph_; ++i)
          for (std::size_t j = 0; j < pw_; ++j) {
            const double g = 0.25 * dp1[c * phw + i * pw_ + j];
            for (std::size_t di = 0; di < 2; ++di)
              for (std::size_t dj = 0; dj < 2; ++dj) {
                const std::size_t idx = c * hw + (2 * i + di) * in_.width + 2 * j + dj;
                if (z1(r, static_cast<Eigen::Index>(idx)) > 0.0) dz1[idx] = g;
              }
          }
      for (std::size_t i = 0; i < in_x.size(); ++i) in_x[i] = x(r, static_cast<Eigen::Index>(i));
      unused.assign(in_x.size(), 0.0);
      conv_backward(in_x, in_.channels, in_.height, in_.width, o.w1, c1_, dz1, grad.data() + o.w1,
                    grad.data() + o.b1, unused);
    }
  }

 private:
  struct Offsets {
    std::size_t w1, b1, w2, b2, w3, b3;
  };

  Offsets offsets() const {
    Offsets o{};
    o.w1 = 0;
    o.b1 = o.w1 + c1_ * in_.channels * 9;
    o.w2 = o.b1 + c1_;
    o.b2 = o.w2 + c2_ * c1_ * 9;
    o.w3 = o.b2 + c2_;
    o.b3 = o.w3 + d_ * c2_;
    return o;
  }

  // 3x3 convolution, stride 1, zero padding 1.
  void conv_forward(const std::vector<double>& in, std::size_t cin, std::size_t h, std::size_t w, std::size_t wofs,
                    std::size_t bofs, std::size_t cout, std::vector<double>& out) const {
    out.assign(cout * h * w, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
      const double bias = params_[bofs + co];
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = bias;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ki = 0; ki < 3; ++ki) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + ki) - 1;
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kj = 0; kj < 3; ++kj) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + kj) - 1;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += params_[wofs + ((co * cin + ci) * 3 + ki) * 3 + kj] *
                       in[(ci * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)];
              }
            }
          out[(co * h + i) * w + j] = acc;
        }
    }
  }

  void conv_backward(const std::vector<double>& in, std::size_t cin, std::size_t h, std::size_t w, std::size_t wofs,
                     std::size_t cout, const std::vector<double>& dout, double* dweight, double* dbias,
                     std::vector<double>& din) const {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double g = dout[(co * h + i) * w + j];
          if (g == 0.0) continue;
          dbias[co] += g;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ki = 0; ki < 3; ++ki) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + ki) - 1;
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kj = 0; kj < 3; ++kj) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + kj) - 1;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t widx = ((co * cin + ci) * 3 + ki) * 3 + kj;
                const std::size_t xidx = (ci * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj);
                dweight[widx] += g * in[xidx];
                din[xidx] += g * params_[wofs + widx];
              }
            }
        }
  }

  Shape in_;
  std::size_t c1_, c2_, d_;
  std::size_t ph_ = 0, pw_ = 0;
};

// Bias-free linear map R^D -> R^d, weights row-major (d x D).
class Projector {
 public:
  Projector() = default;
  Projector(std::size_t in_dim, std::size_t out_dim, Rng& rng) : in_(in_dim), out_(out_dim) { reinitialize(rng); }

  void reinitialize(Rng& rng) {
    weights_.resize(in_ * out_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_));
    for (double& w : weights_) w = rng.normal(0.0, scale);
  }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  std::vector<double>& parameters() { return weights_; }
  const std::vector<double>& parameters() const { return weights_; }

  Matrix forward(const Matrix& features) const { return features * map().transpose(); }

  // Accumulates dL/dW into grad and returns dL/dfeatures.
  Matrix backward(const Matrix& features, const Matrix& grad_out, std::span<double> grad) const {
    RowMatrixMap dw(grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dw.noalias() += grad_out.transpose() * features;
    return grad_out * map();
  }

 private:
  ConstRowMatrixMap map() const {
    return ConstRowMatrixMap(weights_.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  }

  std::size_t in_ = 0, out_ = 0;
  std::vector<double> weights_;
};

// One row per class label, in order of first appearance.
class Classifier {
 public:
  Classifier() = default;
  explicit Classifier(std::size_t feature_dim) : dim_(feature_dim) {}

  std::size_t feature_dim() const { return dim_; }
  const std::vector<int>& labels() const { return labels_; }
  std::size_t rows() const { return labels_.size(); }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }

  // Row index of `label`, or -1.
  int row_of(int label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    return it == labels_.end() ? -1 : static_cast<int>(it - labels_.begin());
  }

  // Appends zero-mean rows (std 0.01) for new labels; existing rows untouched.
  void expand(const std::vector<int>& new_labels, Rng& rng) {
    for (int label : new_labels) {
      if (row_of(label) >= 0) throw ConfigError("expand_classifier: label " + std::to_string(label) + " already has a row");
    }
    for (std::size_t i = 0; i < new_labels.size(); ++i)
      for (std::size_t j = i + 1; j < new_labels.size(); ++j)
        if (new_labels[i] == new_labels[j]) throw ConfigError("expand_classifier: duplicate new label");
    for (int label : new_labels) {
      labels_.push_back(label);
      for (std::size_t i = 0; i < dim_; ++i) weights_.push_back(rng.normal(0.0, 0.01));
      bias_.push_back(0.0);
    }
  }

  Matrix forward(const Matrix& features) const {
    Matrix out = features * weight_map().transpose();
    out.rowwise() += Eigen::Map<const Vector>(bias_.data(), static_cast<Eigen::Index>(bias_.size())).transpose();
    return out;
  }

  Matrix backward(const Matrix& features, const Matrix& grad_out, std::span<double> dweights, std::span<double> dbias) const {
    RowMatrixMap dw(dweights.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(dim_));
    dw.noalias() += grad_out.transpose() * features;
    Eigen::Map<Vector>(dbias.data(), static_cast<Eigen::Index>(rows())) += grad_out.colwise().sum().transpose();
    return grad_out * weight_map();
  }

 private:
  ConstRowMatrixMap weight_map() const {
    return ConstRowMatrixMap(weights_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(dim_));
  }

  std::size_t dim_ = 0;
  std::vector<int> labels_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

class ModelBundle {
 public:
  ModelBundle(std::unique_ptr<Backbone> backbone, std::size_t projector_dim, Rng& rng)
      : backbone_(std::move(backbone)),
        projector_(backbone_->output_dim(), projector_dim, rng),
        classifier_(backbone_->output_dim()) {}

  ModelBundle(const ModelBundle& o)
      : backbone_(o.backbone_->clone()), projector_(o.projector_), classifier_(o.classifier_) {}
  ModelBundle& operator=(const ModelBundle& o) {
    if (this != &o) {
      backbone_ = o.backbone_->clone();
      projector_ = o.projector_;
      classifier_ = o.classifier_;
    }
    return *this;
  }
  ModelBundle(ModelBundle&&) noexcept = default;
  ModelBundle& operator=(ModelBundle&&) noexcept = default;

  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  Projector& projector() { return projector_; }
  const Projector& projector() const { return projector_; }
  Classifier& classifier() { return classifier_; }
  const Classifier& classifier() const { return classifier_; }

  std::size_t feature_dim() const { return backbone_->output_dim(); }

  std::string architecture() const {
    return backbone_->architecture() + "|proj:" + std::to_string(projector_.out_dim());
  }

  std::uint64_t architecture_hash() const {
    const auto a = backbone_->architecture();
    return fnv1a(a.data(), a.size());
  }

  // Hash over every parameter byte; used to prove a teacher stays frozen.
  std::uint64_t parameter_hash() const {
    auto h = fnv1a(backbone_->parameters().data(), backbone_->parameters().size() * sizeof(double));
    h = fnv1a(projector_.parameters().data(), projector_.parameters().size() * sizeof(double), h);
    h = fnv1a(classifier_.weights().data(), classifier_.weights().size() * sizeof(double), h);
    return fnv1a(classifier_.bias().data(), classifier_.bias().size() * sizeof(double), h);
  }

  Matrix features(const Matrix& x) const { return backbone_->forward(x, nullptr); }
  Matrix logits(const Matrix& x) const { return classifier_.forward(features(x)); }

 private:
  std::unique_ptr<Backbone> backbone_;
  Projector projector_;
  Classifier classifier_;
};

inline ModelBundle expand_classifier(ModelBundle bundle, const std::vector<int>& new_labels, Rng& rng) {
  bundle.classifier().expand(new_labels, rng);
  return bundle;
}

// ---------------------------------------------------------------------------
// Snapshots of the feature extractor.

struct ParameterSnapshot {
  int task_id = 0;
  std::vector<double> values;
  std::uint64_t architecture_hash = 0;

  std::size_t count() const { return values.size(); }
};

inline ParameterSnapshot snapshot(const ModelBundle& bundle, int task_id = 0) {
  return ParameterSnapshot{task_id, bundle.backbone().parameters(), bundle.architecture_hash()};
}

inline void restore(ModelBundle& bundle, const ParameterSnapshot& snap) {
  auto& params = bundle.backbone().parameters();
  if (snap.values.size() != params.size()) {
    throw DataError("restore: snapshot has " + std::to_string(snap.values.size()) + " values, model has " +
                    std::to_string(params.size()));
  }
  if (snap.architecture_hash != 0 && snap.architecture_hash != bundle.architecture_hash()) {
    throw DataError("restore: snapshot architecture differs from model");
  }
  params = snap.values;
}

// Vector file: 8-byte little-endian count, then that many little-endian
// IEEE-754 float32 values.
inline void write_vector_binary(std::ostream& out, std::span<const double> values) {
  const auto count = static_cast<std::uint64_t>(values.size());
  unsigned char header[8];
  for (int i = 0; i < 8; ++i) header[i] = static_cast<unsigned char>(count >> (8 * i));
  out.write(reinterpret_cast<const char*>(header), 8);
  std::vector<unsigned char> body(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) body[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw DataError("failed writing vector data");
}

inline std::vector<double> read_vector_binary(std::istream& in) {
  unsigned char header[8];
  if (!in.read(reinterpret_cast<char*>(header), 8)) throw DataError("vector file: truncated count");
  std::uint64_t count = 0;
  for (int i = 0; i < 8; ++i) count |= static_cast<std::uint64_t>(header[i]) << (8 * i);
  std::vector<unsigned char> body(static_cast<std::size_t>(count) * 4);
  if (!in.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size()))) {
    throw DataError("vector file: truncated payload (expected " + std::to_string(count) + " floats)");
  }
  std::vector<double> values(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(body[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

// Writes `<stem>.bin` and the `<stem>.txt` sidecar.
inline void write_snapshot(const std::filesystem::path& bin_path, const ParameterSnapshot& snap) {
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + bin_path.string());
    write_vector_binary(out, snap.values);
  }
  auto side = bin_path;
  side.replace_extension(".txt");
  std::ofstream meta(side);
  if (!meta) throw DataError("cannot write " + side.string());
  meta << "task_id: " << snap.task_id << "\narchitecture_hash: " << hex64(snap.architecture_hash) << "\n";
}

inline ParameterSnapshot read_snapshot(const std::filesystem::path& bin_path) {
  ParameterSnapshot snap;
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw DataError("cannot open snapshot " + bin_path.string());
  snap.values = read_vector_binary(in);
  auto side = bin_path;
  side.replace_extension(".txt");
  std::ifstream meta(side);
  std::string key, value;
  while (meta >> key >> value) {
    if (key == "task_id:") snap.task_id = std::stoi(value);
    if (key == "architecture_hash:") snap.architecture_hash = std::stoull(value, nullptr, 16);
  }
  return snap;
}

// ---------------------------------------------------------------------------
// Prompt pool (key-value prompts selected by query-key cosine similarity).

struct PromptPool {
  Matrix keys;                  // M x d
  std::vector<Matrix> prompts;  // M entries of L_p x d
  std::size_t top_n = 1;

  std::size_t size() const { return static_cast<std::size_t>(keys.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(keys.cols()); }
};

inline PromptPool make_prompt_pool(std::size_t pool_size, std::size_t dim, std::size_t prompt_length,
                                   std::size_t top_n, Rng& rng) {
  if (top_n < 1 || top_n > pool_size) throw ConfigError("prompt pool: need 1 <= top_n <= pool size");
  PromptPool pool;
  pool.top_n = top_n;
  pool.keys = Matrix(static_cast<Eigen::Index>(pool_size), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < pool.keys.size(); ++i) pool.keys.data()[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t m = 0; m < pool_size; ++m) {
    Matrix p(static_cast<Eigen::Index>(prompt_length), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-1.0, 1.0);
    pool.prompts.push_back(std::move(p));
  }
  return pool;
}

struct KeySelection {
  std::vector<std::vector<std::size_t>> per_sample;  // top-N key indices, best first
  std::vector<std::size_t> frequency;                // length M
};

// Top-N keys per query by cosine similarity; ties go to the lower key index.
inline KeySelection select_keys(const PromptPool& pool, const Matrix& queries) {
  if (pool.top_n < 1 || pool.top_n > pool.size()) {
    throw ConfigError("select_keys: top_n " + std::to_string(pool.top_n) + " exceeds pool size " +
                      std::to_string(pool.size()));
  }
  if (static_cast<std::size_t>(queries.cols()) != pool.dim()) {
    throw DataError("select_keys: query dimension " + std::to_string(queries.cols()) + " != key dimension " +
                    std::to_string(pool.dim()));
  }
  const Vector key_norms = pool.keys.rowwise().norm();
  KeySelection sel;
  sel.frequency.assign(pool.size(), 0);
  std::vector<std::size_t> order(pool.size());
  std::vector<double> sims(pool.size());
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const double qn = queries.row(q).norm();
    for (std::size_t m = 0; m < pool.size(); ++m) {
      const auto mi = static_cast<Eigen::Index>(m);
      const double denom = qn * key_norms(mi);
      sims[m] = denom > 0.0 ? queries.row(q).dot(pool.keys.row(mi)) / denom : 0.0;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool.top_n));
    for (std::size_t k : chosen) ++sel.frequency[k];
    sel.per_sample.push_back(std::move(chosen));
  }
  return sel;
}

}  // namespace disco
