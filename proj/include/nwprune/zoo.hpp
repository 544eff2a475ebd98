#pragma once

// Architecture builders for the benchmark CIFAR-10 networks plus seeded
// weight generators used by tests, demos and the shipped architecture files.
//
// VGG-16 follows the widely used CIFAR variant: 13 conv3x3 layers, each
// followed by batchnorm and relu, five 2x2 max pools, a 1x1 average pool and
// a single 512->10 linear classifier.
//
// ResNet-(6n+2) uses identity shortcuts. Where a stage halves the resolution
// and doubles the width, the shortcut subsamples with a 1x1 stride-2 average
// pool and appends zero channels, so no shortcut carries parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nwprune/bundle.hpp"
#include "nwprune/cluster.hpp"
#include "nwprune/featurize.hpp"
#include "nwprune/prng.hpp"

namespace nwprune {

/// Appends layers to a graph while tracking channel counts and spatial size.
/// Each new layer consumes the current cursor, then becomes the cursor.
class GraphBuilder {
 public:
  GraphBuilder(std::int64_t in_channels, Spatial in_spatial) : channels_(in_channels), spatial_(in_spatial) {}

  const std::string& cursor() const { return cursor_; }
  void set_cursor(const std::string& id) {
    const LayerSpec& l = graph_.at(id);
    cursor_ = id;
    channels_ = l.out_channels;
    spatial_ = l.out_spatial;
  }
  std::int64_t channels() const { return channels_; }
  Spatial spatial() const { return spatial_; }

  GraphBuilder& conv(const std::string& id, std::int64_t out, std::int64_t k, std::int64_t stride = 1,
                     std::int64_t padding = -1, bool bias = false, const std::string& stage = {}) {
    LayerSpec l = start(id, LayerKind::conv2d);
    l.out_channels = out;
    l.kernel = k;
    l.stride = stride;
    l.padding = padding < 0 ? k / 2 : padding;
    l.bias = bias;
    l.stage = stage;
    return push(std::move(l));
  }
  GraphBuilder& bn(const std::string& id, const std::string& stage = {}) {
    LayerSpec l = start(id, LayerKind::batchnorm);
    l.stage = stage;
    return push(std::move(l));
  }
  GraphBuilder& relu(const std::string& id) { return push(start(id, LayerKind::relu)); }
  GraphBuilder& maxpool(const std::string& id, std::int64_t window, std::int64_t stride) {
    LayerSpec l = start(id, LayerKind::maxpool);
    l.window = window;
    l.stride = stride;
    return push(std::move(l));
  }
  GraphBuilder& avgpool(const std::string& id, std::int64_t window, std::int64_t stride) {
    LayerSpec l = start(id, LayerKind::avgpool);
    l.window = window;
    l.stride = stride;
    return push(std::move(l));
  }
  GraphBuilder& flatten(const std::string& id) {
    LayerSpec l = start(id, LayerKind::flatten);
    l.out_channels = channels_ * spatial_.area();
    return push(std::move(l));
  }
  GraphBuilder& linear(const std::string& id, std::int64_t out, bool bias = true) {
    LayerSpec l = start(id, LayerKind::linear);
    l.out_channels = out;
    l.bias = bias;
    return push(std::move(l));
  }
  GraphBuilder& zeropad(const std::string& id, std::int64_t extra) {
    LayerSpec l = start(id, LayerKind::zeropad);
    l.out_channels = channels_ + extra;
    return push(std::move(l));
  }
  /// Joins the cursor with `other` through an add layer.
  GraphBuilder& add(const std::string& id, const std::string& other) {
    LayerSpec l = start(id, LayerKind::add);
    push(std::move(l));
    graph_.edges.emplace_back(other, id);
    return *this;
  }

  ArchGraph finish() const {
    ArchGraph g = graph_;
    g.outputs = {cursor_};
    return g;
  }

 private:
  LayerSpec start(const std::string& id, LayerKind kind) const {
    LayerSpec l;
    l.id = id;
    l.kind = kind;
    l.in_channels = channels_;
    l.out_channels = channels_;
    l.in_spatial = spatial_;
    return l;
  }
  GraphBuilder& push(LayerSpec l) {
    l.out_spatial = expected_out_spatial(l);
    if (cursor_.empty())
      graph_.inputs.push_back(l.id);
    else
      graph_.edges.emplace_back(cursor_, l.id);
    cursor_ = l.id;
    channels_ = l.out_channels;
    spatial_ = l.out_spatial;
    graph_.layers.push_back(std::move(l));
    return *this;
  }

  ArchGraph graph_;
  std::string cursor_;
  std::int64_t channels_;
  Spatial spatial_;
};

inline constexpr std::int64_t kVgg16Widths[] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};

inline ArchGraph vgg16_graph(std::int64_t num_classes = 10) {
  GraphBuilder b(3, {32, 32});
  // Pool after conv 2, 4, 7, 10, 13.
  const int pool_after[] = {2, 4, 7, 10, 13};
  int pool = 0;
  for (int i = 1; i <= 13; ++i) {
    const std::string n = std::to_string(i);
    b.conv("conv" + n, kVgg16Widths[i - 1], 3).bn("bn" + n).relu("relu" + n);
    if (pool < 5 && pool_after[pool] == i) b.maxpool("pool" + std::to_string(++pool), 2, 2);
  }
  b.avgpool("avgpool", 1, 1).flatten("flatten").linear("fc", num_classes);
  return b.finish();
}

/// CIFAR ResNet with 6n+2 layers (depth 56 -> n = 9, depth 110 -> n = 18).
inline ArchGraph resnet_graph(int depth, std::int64_t num_classes = 10) {
  if (depth < 8 || (depth - 2) % 6 != 0) throw std::invalid_argument("resnet depth must be 6n+2");
  const int blocks = (depth - 2) / 6;
  GraphBuilder b(3, {32, 32});
  b.conv("conv1", 16, 3).bn("bn1").relu("relu1");
  std::int64_t width = 16;
  for (int s = 1; s <= 3; ++s) {
    const std::string stage = "stage" + std::to_string(s);
    for (int k = 0; k < blocks; ++k) {
      const std::string p = stage + ".block" + std::to_string(k) + ".";
      const std::string block_in = b.cursor();
      const bool down = s > 1 && k == 0;
      const std::int64_t out = down ? width * 2 : width;
      b.conv(p + "conv_a", out, 3, down ? 2 : 1, 1, false, stage).bn(p + "bn_a", stage).relu(p + "relu_a");
      b.conv(p + "conv_b", out, 3, 1, 1, false, stage).bn(p + "bn_b", stage);
      const std::string residual = b.cursor();
      std::string shortcut = block_in;
      if (down) {
        b.set_cursor(block_in);
        b.avgpool(p + "down_pool", 1, 2).zeropad(p + "down_pad", out - width);
        shortcut = b.cursor();
      }
      b.set_cursor(residual);
      b.add(p + "add", shortcut).relu(p + "relu_out");
      width = out;
    }
  }
  b.avgpool("avgpool", 8, 8).flatten("flatten").linear("fc", num_classes);
  return b.finish();
}

namespace zoo_detail {

inline std::vector<float> uniform(std::int64_t n, std::uint64_t seed, const std::string& name, float lo, float hi) {
  SplitMix64 rng = layer_stream(seed, name);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform01();
  return v;
}

}  // namespace zoo_detail

/// Gives every conv, batchnorm and linear layer seeded random weights.
/// Tensor names are "<layer>.weight", "<layer>.bias", and for batchnorm
/// "<layer>.scale/.shift/.mean/.var". Each tensor draws from its own stream,
/// so values do not depend on layer order.
inline ModelBundle attach_random_weights(ArchGraph graph, std::uint64_t seed) {
  ModelBundle b;
  auto add = [&](const std::string& name, std::vector<std::int64_t> shape, float lo, float hi) {
    TensorRecord t;
    t.name = name;
    t.shape = std::move(shape);
    t.data = zoo_detail::uniform(t.numel(), seed, name, lo, hi);
    b.tensors.push_back(std::move(t));
    return name;
  };
  for (auto& l : graph.layers) {
    l.weight_refs.clear();
    switch (l.kind) {
      case LayerKind::conv2d: {
        const float bound = 1.0f / std::sqrt(static_cast<float>(l.in_channels * l.kernel * l.kernel));
        l.weight_refs.push_back(add(l.id + ".weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}, -bound, bound));
        if (l.bias) l.weight_refs.push_back(add(l.id + ".bias", {l.out_channels}, -bound, bound));
        break;
      }
      case LayerKind::batchnorm:
        l.weight_refs.push_back(add(l.id + ".scale", {l.out_channels}, 0.5f, 1.5f));
        l.weight_refs.push_back(add(l.id + ".shift", {l.out_channels}, -0.1f, 0.1f));
        l.weight_refs.push_back(add(l.id + ".mean", {l.out_channels}, -0.1f, 0.1f));
        l.weight_refs.push_back(add(l.id + ".var", {l.out_channels}, 0.5f, 1.5f));
        break;
      case LayerKind::linear: {
        const float bound = 1.0f / std::sqrt(static_cast<float>(l.in_channels));
        l.weight_refs.push_back(add(l.id + ".weight", {l.out_channels, l.in_channels}, -bound, bound));
        if (l.bias) l.weight_refs.push_back(add(l.id + ".bias", {l.out_channels}, -bound, bound));
        break;
      }
      default:
        break;
    }
  }
  b.graph = std::move(graph);
  return b;
}

/// Guarantees enforced by plant_clusters.
struct PlantSpec {
  double within_min = 0.95;  // every same-group pair has cosine >= this
  double cross_max = 0.3;    // every cross-group pair has cosine <= this
  double noise = 0.08;       // member perturbation norm relative to a unit prototype
};

/// Overwrites a conv layer's kernel so its filters form exactly `groups`
/// tight groups. Returns each filter's group label.
///
/// Prototypes come from a random orthonormal basis and its negation when the
/// filter dimension is small, or are plain random vectors otherwise. Members
/// are prototype + noise, scaled by a random positive factor. The construction
/// is checked against `spec` and redrawn on failure.
inline std::vector<std::int64_t> plant_clusters(ModelBundle& bundle, const std::string& layer_id,
                                                std::int64_t groups, std::uint64_t seed, PlantSpec spec = {}) {
  const LayerSpec& layer = bundle.graph.at(layer_id);
  if (layer.kind != LayerKind::conv2d || layer.weight_refs.empty())
    throw TypeError("plant_clusters: " + layer_id + " is not a weighted conv2d layer");
  TensorRecord& kernel = *bundle.find_tensor(layer.weight_refs.front());
  const std::int64_t n = kernel.shape[0];
  const std::int64_t p = kernel.numel() / n;
  if (groups < 1 || groups > n) throw std::invalid_argument("plant_clusters: need 1 <= groups <= filters");
  if (groups > 2 * p) throw std::invalid_argument("plant_clusters: too many groups for the filter dimension");

  for (int attempt = 0; attempt < 64; ++attempt) {
    SplitMix64 rng = layer_stream(seed + static_cast<std::uint64_t>(attempt) * 0x632BE59BD9B4E019ULL, layer_id);
    auto draw = [&] { return static_cast<double>(rng.uniform_sym()); };

    Eigen::MatrixXd protos(p, groups);
    const bool use_basis = p < 256;
    const std::int64_t basis = use_basis ? std::min(groups, p) : groups;
    for (std::int64_t g = 0; g < basis; ++g) {
      Eigen::VectorXd v(p);
      for (std::int64_t i = 0; i < p; ++i) v(i) = draw();
      if (use_basis)
        for (std::int64_t h = 0; h < g; ++h) v -= protos.col(h).dot(v) * protos.col(h);
      protos.col(g) = v.normalized();
    }
    for (std::int64_t g = basis; g < groups; ++g) protos.col(g) = -protos.col(g - basis);

    // Every group gets one filter, the rest are spread at random; positions shuffled.
    std::vector<std::int64_t> label(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
      label[i] = i < groups ? i : static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(groups)));
    for (std::int64_t i = n - 1; i > 0; --i)
      std::swap(label[i], label[rng.bounded(static_cast<std::uint64_t>(i + 1))]);

    for (std::int64_t f = 0; f < n; ++f) {
      Eigen::VectorXd noise(p);
      for (std::int64_t i = 0; i < p; ++i) noise(i) = draw();
      const double scale = 0.5 + 1.5 * (draw() + 1.0) / 2.0;
      const Eigen::VectorXd v = scale * (protos.col(label[f]) + spec.noise * noise.normalized());
      for (std::int64_t i = 0; i < p; ++i) kernel.data[f * p + i] = static_cast<float>(v(i));
    }

    const SimilarityMatrix s = similarity_matrix(kernel_matrix(bundle, layer_id));
    bool ok = true;
    for (std::int64_t i = 0; i < n && ok; ++i)
      for (std::int64_t j = i + 1; j < n && ok; ++j)
        ok = label[i] == label[j] ? s(i, j) >= spec.within_min : s(i, j) <= spec.cross_max;
    if (ok) return label;
  }
  throw Error("plant_clusters: could not satisfy the separation spec for " + layer_id);
}

}  // namespace nwprune
