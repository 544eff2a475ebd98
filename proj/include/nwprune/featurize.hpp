#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nwprune/bundle.hpp"
#include "nwprune/error.hpp"

namespace nwprune {

/// Kernel matrix of a conv layer: one column per filter, p = k*k*in_channels rows.
///
/// Columns are stored contiguously, each flattened in-channel-major, then
/// kernel row, then kernel column. That is exactly the [out, in, k, k]
/// row-major storage of the kernel tensor, so column i is kernel slice i
/// reinterpreted rather than permuted.
struct FilterMatrix {
  static constexpr std::string_view flatten_order = "in_channel-major, then kernel-row, then kernel-column";

  std::string layer_id;
  std::string tensor_name;
  std::int64_t in_channels = 0;
  std::int64_t kernel = 0;
  std::int64_t rows = 0;  // p
  std::int64_t cols = 0;  // n, the filter count
  std::vector<float> data;

  std::span<const float> column(std::int64_t i) const {
    return {data.data() + i * rows, static_cast<std::size_t>(rows)};
  }
};

inline FilterMatrix kernel_matrix(const ModelBundle& bundle, std::string_view layer_id) {
  const LayerSpec& layer = bundle.graph.at(layer_id);
  if (layer.kind != LayerKind::conv2d)
    throw TypeError("layer " + layer.id + " is " + std::string(to_string(layer.kind)) + ", not conv2d");
  if (layer.weight_refs.empty()) throw Error("layer " + layer.id + " has no weights (architecture-only bundle)");
  const TensorRecord* kernel = bundle.find_tensor(layer.weight_refs.front());
  if (kernel == nullptr) throw Error("layer " + layer.id + ": missing tensor " + layer.weight_refs.front());
  if (kernel->shape.size() != 4 || kernel->shape[2] != kernel->shape[3])
    throw ShapeError("layer " + layer.id + ": kernel must be [out, in, k, k]");

  FilterMatrix fm;
  fm.layer_id = layer.id;
  fm.tensor_name = kernel->name;
  fm.cols = kernel->shape[0];
  fm.in_channels = kernel->shape[1];
  fm.kernel = kernel->shape[2];
  fm.rows = fm.kernel * fm.kernel * fm.in_channels;
  fm.data = kernel->data;
  return fm;
}

/// Rebuilds a conv kernel tensor from the kept columns, in keep order.
inline TensorRecord unflatten(const FilterMatrix& fm, std::span<const std::int64_t> keep) {
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] >= fm.cols)
      throw IndexError("filter index " + std::to_string(keep[i]) + " out of range [0, " + std::to_string(fm.cols) +
                       ")");
    if (i > 0 && keep[i] <= keep[i - 1]) throw IndexError("keep indices must be strictly increasing");
  }
  TensorRecord t;
  t.name = fm.tensor_name;
  t.shape = {static_cast<std::int64_t>(keep.size()), fm.in_channels, fm.kernel, fm.kernel};
  t.data.reserve(keep.size() * static_cast<std::size_t>(fm.rows));
  for (auto i : keep) {
    auto col = fm.column(i);
    t.data.insert(t.data.end(), col.begin(), col.end());
  }
  return t;
}

inline TensorRecord unflatten(const FilterMatrix& fm) {
  std::vector<std::int64_t> all(static_cast<std::size_t>(fm.cols));
  for (std::int64_t i = 0; i < fm.cols; ++i) all[static_cast<std::size_t>(i)] = i;
  return unflatten(fm, all);
}

}  // namespace nwprune
