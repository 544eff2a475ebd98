#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nwprune/error.hpp"

namespace nwprune {

enum class LayerKind {
  conv2d,
  batchnorm,
  relu,
  maxpool,
  avgpool,
  flatten,
  linear,
  add,
  // Appends zero-valued channels; the parameter-free shortcut used where a
  // residual stage doubles its width.
  zeropad,
};

inline constexpr std::array<std::pair<LayerKind, std::string_view>, 9> kLayerKindNames{{
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::relu, "relu"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool, "avgpool"},
    {LayerKind::flatten, "flatten"},
    {LayerKind::linear, "linear"},
    {LayerKind::add, "add"},
    {LayerKind::zeropad, "zeropad"},
}};

inline std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kLayerKindNames)
    if (k == kind) return name;
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kLayerKindNames)
    if (n == name) return k;
  throw UnsupportedError("unknown layer kind '" + std::string(name) + "'");
}

/// Height x width of an activation plane.
struct Spatial {
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t area() const { return h * w; }
  friend bool operator==(const Spatial&, const Spatial&) = default;
};

/// One node of the architecture graph.
///
/// Channel counts live on the layer so that architecture-only files carry
/// everything the cost model needs. For `linear` the channel fields are
/// in/out features; for `flatten` out_channels = in_channels * h * w.
///
/// weight_refs is positional and either empty (architecture-only) or complete:
///   conv2d    [kernel] or [kernel, bias]      kernel = [out, in, k, k]
///   batchnorm [scale, shift, mean, var]       each   = [channels]
///   linear    [weight] or [weight, bias]      weight = [out, in]
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> weight_refs;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  Spatial in_spatial;
  Spatial out_spatial;
  std::int64_t kernel = 0;   // conv2d
  std::int64_t stride = 1;   // conv2d, pools
  std::int64_t padding = 0;  // conv2d
  std::int64_t window = 0;   // pools
  bool bias = false;         // conv2d, linear
  double eps = 1e-5;         // batchnorm
  std::string stage;         // optional tag for per-stage thresholds

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using Edge = std::pair<std::string, std::string>;

struct ArchGraph {
  std::vector<LayerSpec> layers;
  std::vector<Edge> edges;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  friend bool operator==(const ArchGraph&, const ArchGraph&) = default;

  const LayerSpec* find(std::string_view id) const {
    auto it = std::find_if(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.id == id; });
    return it == layers.end() ? nullptr : &*it;
  }
  LayerSpec* find(std::string_view id) {
    return const_cast<LayerSpec*>(std::as_const(*this).find(id));
  }

  const LayerSpec& at(std::string_view id) const {
    const LayerSpec* l = find(id);
    if (l == nullptr) throw Error("unknown layer '" + std::string(id) + "'");
    return *l;
  }

  /// Predecessors in edge-list order.
  std::vector<std::string> predecessors(std::string_view id) const {
    std::vector<std::string> out;
    for (const auto& [from, to] : edges)
      if (to == id) out.push_back(from);
    return out;
  }

  std::vector<std::string> successors(std::string_view id) const {
    std::vector<std::string> out;
    for (const auto& [from, to] : edges)
      if (from == id) out.push_back(to);
    return out;
  }

  bool is_output(std::string_view id) const {
    return std::find(outputs.begin(), outputs.end(), id) != outputs.end();
  }

  /// Topological order of layer ids, ties resolved by declaration order.
  /// Returns nullopt when the graph has a cycle or an edge names an unknown layer.
  std::optional<std::vector<std::string>> topo_order() const {
    std::map<std::string, std::size_t, std::less<>> index;
    for (std::size_t i = 0; i < layers.size(); ++i) index.emplace(layers[i].id, i);
    std::vector<std::size_t> indegree(layers.size(), 0);
    std::vector<std::vector<std::size_t>> adj(layers.size());
    for (const auto& [from, to] : edges) {
      auto f = index.find(from);
      auto t = index.find(to);
      if (f == index.end() || t == index.end()) return std::nullopt;
      adj[f->second].push_back(t->second);
      ++indegree[t->second];
    }
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (indegree[i] == 0) ready.push(i);
    std::vector<std::string> order;
    order.reserve(layers.size());
    while (!ready.empty()) {
      const std::size_t i = ready.top();
      ready.pop();
      order.push_back(layers[i].id);
      for (std::size_t j : adj[i])
        if (--indegree[j] == 0) ready.push(j);
    }
    if (order.size() != layers.size()) return std::nullopt;
    return order;
  }

  std::vector<std::string> topo_order_or_throw() const {
    auto order = topo_order();
    if (!order) throw ValidationError("graph has a cycle or dangling edge");
    return *std::move(order);
  }
};

/// Output size of a sliding window along one axis.
inline std::int64_t window_out(std::int64_t in, std::int64_t window, std::int64_t stride,
                               std::int64_t padding) {
  if (stride <= 0) return -1;
  const std::int64_t span = in + 2 * padding - window;
  if (span < 0) return 0;
  return span / stride + 1;
}

/// Output spatial size implied by a layer's hyperparameters and its input size.
inline Spatial expected_out_spatial(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv2d:
      return {window_out(l.in_spatial.h, l.kernel, l.stride, l.padding),
              window_out(l.in_spatial.w, l.kernel, l.stride, l.padding)};
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return {window_out(l.in_spatial.h, l.window, l.stride, 0),
              window_out(l.in_spatial.w, l.window, l.stride, 0)};
    case LayerKind::flatten:
    case LayerKind::linear:
      return {1, 1};
    default:
      return l.in_spatial;
  }
}

}  // namespace nwprune
