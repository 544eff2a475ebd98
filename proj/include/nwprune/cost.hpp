#pragma once

// FLOP and parameter accounting.
//
// One multiply-accumulate counts as one FLOP, and only conv2d and linear
// layers contribute. For a conv the count is k*k*in*out*h*w with h x w the
// output plane. Many profilers report 2 FLOPs per MAC; numbers here are half
// of theirs by construction.
//
// Parameter modes:
//   weights  conv/linear weights only (no biases, no batchnorm)
//   full     adds conv/linear biases and batchnorm scale + shift

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "nwprune/graph.hpp"
#include "nwprune/io.hpp"
#include "nwprune/plan.hpp"

namespace nwprune {

enum class ParamMode { weights, full };

inline std::int64_t layer_flops(const LayerSpec& l, std::int64_t in_channels, std::int64_t out_channels) {
  switch (l.kind) {
    case LayerKind::conv2d:
      return l.kernel * l.kernel * in_channels * out_channels * l.out_spatial.area();
    case LayerKind::linear:
      return in_channels * out_channels;
    default:
      return 0;
  }
}

inline std::int64_t layer_params(const LayerSpec& l, std::int64_t in_channels, std::int64_t out_channels,
                                 ParamMode mode = ParamMode::weights) {
  const bool full = mode == ParamMode::full;
  switch (l.kind) {
    case LayerKind::conv2d:
      return l.kernel * l.kernel * in_channels * out_channels + (full && l.bias ? out_channels : 0);
    case LayerKind::linear:
      return in_channels * out_channels + (full && l.bias ? out_channels : 0);
    case LayerKind::batchnorm:
      return full ? 2 * out_channels : 0;
    default:
      return 0;
  }
}

inline double reduction_pct(std::int64_t before, std::int64_t after) {
  if (before <= 0) return 0.0;
  return 100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(before));
}

struct LayerCost {
  std::string layer_id;
  LayerKind kind = LayerKind::conv2d;
  Spatial spatial;  // output plane
  std::int64_t maps_before = 0;
  std::int64_t maps_after = 0;
  std::int64_t flops = 0;
  std::int64_t params = 0;
  std::int64_t flops_after = 0;
  std::int64_t params_after = 0;

  double flop_reduction_pct() const { return reduction_pct(flops, flops_after); }
  double param_reduction_pct() const { return reduction_pct(params, params_after); }
};

struct CostReport {
  std::vector<LayerCost> layers;  // every layer with nonzero cost, graph order
  std::int64_t flops = 0;
  std::int64_t params = 0;
  std::int64_t flops_after = 0;
  std::int64_t params_after = 0;

  double flop_reduction_pct() const { return reduction_pct(flops, flops_after); }
  double param_reduction_pct() const { return reduction_pct(params, params_after); }

  const LayerCost* find(std::string_view id) const {
    for (const auto& l : layers)
      if (l.layer_id == id) return &l;
    return nullptr;
  }
};

namespace detail {

inline void require_valid_graph(const ArchGraph& g) {
  ModelBundle probe;
  probe.graph = g;
  for (auto& l : probe.graph.layers) l.weight_refs.clear();
  require_valid(probe);
}

inline bool same_topology(const ArchGraph& a, const ArchGraph& b) {
  if (a.edges != b.edges || a.inputs != b.inputs || a.outputs != b.outputs || a.layers.size() != b.layers.size())
    return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.id != y.id || x.kind != y.kind || x.kernel != y.kernel || x.stride != y.stride || x.padding != y.padding ||
        x.window != y.window || x.in_spatial != y.in_spatial || x.out_spatial != y.out_spatial)
      return false;
  }
  return true;
}

}  // namespace detail

/// Per-layer and total cost comparison of two graphs differing only in channel counts.
inline CostReport diff_cost(const ArchGraph& before, const ArchGraph& after, ParamMode mode = ParamMode::weights) {
  detail::require_valid_graph(before);
  detail::require_valid_graph(after);
  if (!detail::same_topology(before, after)) throw ShapeError("diff_cost: graphs differ beyond channel counts");

  CostReport r;
  for (std::size_t i = 0; i < before.layers.size(); ++i) {
    const LayerSpec& b = before.layers[i];
    const LayerSpec& a = after.layers[i];
    LayerCost c;
    c.layer_id = b.id;
    c.kind = b.kind;
    c.spatial = b.out_spatial;
    c.maps_before = b.out_channels;
    c.maps_after = a.out_channels;
    c.flops = layer_flops(b, b.in_channels, b.out_channels);
    c.flops_after = layer_flops(a, a.in_channels, a.out_channels);
    c.params = layer_params(b, b.in_channels, b.out_channels, mode);
    c.params_after = layer_params(a, a.in_channels, a.out_channels, mode);
    r.flops += c.flops;
    r.flops_after += c.flops_after;
    r.params += c.params;
    r.params_after += c.params_after;
    if (c.flops != 0 || c.params != 0) r.layers.push_back(std::move(c));
  }
  return r;
}

/// Baseline cost of one graph (before == after).
inline CostReport model_cost(const ArchGraph& g, ParamMode mode = ParamMode::weights) { return diff_cost(g, g, mode); }

/// Cost of the graph the plan would produce, compared with the original.
inline CostReport diff_cost(const ArchGraph& before, const PrunePlan& plan, ParamMode mode = ParamMode::weights) {
  std::map<std::string, std::int64_t> widths;
  for (const auto& lp : plan.layers) widths[lp.layer_id] = static_cast<std::int64_t>(lp.keep.size());
  return diff_cost(before, resize_graph(before, widths), mode);
}

// --- rendering ------------------------------------------------------------------

/// "1.8E+06"-style two-significant-digit scientific notation.
inline std::string sci2(std::int64_t v) { return fmt::format("{:.1E}", static_cast<double>(v)); }

inline std::string format_cost_text(const CostReport& r) {
  std::size_t w = 5;
  for (const auto& c : r.layers) w = std::max(w, c.layer_id.size());
  std::string out = fmt::format("{:<{}} {:>9} {:>7} {:>9} {:>9} {:>7} {:>9} {:>7}\n", "layer", w, "v x h", "#Maps",
                                "FLOP", "#Params", "#Maps", "FLOP", "FLOP%");
  for (const auto& c : r.layers) {
    out += fmt::format("{:<{}} {:>9} {:>7} {:>9} {:>9} {:>7} {:>9} {:>6.1f}%\n", c.layer_id, w,
                       fmt::format("{}x{}", c.spatial.h, c.spatial.w), c.maps_before, sci2(c.flops), sci2(c.params),
                       c.maps_after, sci2(c.flops_after), c.flop_reduction_pct());
  }
  out += fmt::format("{:<{}} {:>9} {:>7} {:>9} {:>9} {:>7} {:>9} {:>6.1f}%\n", "total", w, "", "", sci2(r.flops),
                     sci2(r.params), "", sci2(r.flops_after), r.flop_reduction_pct());
  out += fmt::format("FLOP   {:.3E} -> {:.3E}  ({:.1f}% pruned)\n", static_cast<double>(r.flops),
                     static_cast<double>(r.flops_after), r.flop_reduction_pct());
  out += fmt::format("params {:.3E} -> {:.3E}  ({:.1f}% pruned)\n", static_cast<double>(r.params),
                     static_cast<double>(r.params_after), r.param_reduction_pct());
  return out;
}

inline std::string format_cost_csv(const CostReport& r) {
  std::string out = "layer_id,v,h,maps_before,maps_after,flops_before,flops_after,params_before,params_after,flop_pct\n";
  for (const auto& c : r.layers)
    out += fmt::format("{},{},{},{},{},{},{},{},{},{:.1f}\n", c.layer_id, c.spatial.h, c.spatial.w, c.maps_before,
                       c.maps_after, c.flops, c.flops_after, c.params, c.params_after, c.flop_reduction_pct());
  out += fmt::format("total,,,,,{},{},{},{},{:.1f}\n", r.flops, r.flops_after, r.params, r.params_after,
                     r.flop_reduction_pct());
  return out;
}

inline json to_json(const CostReport& r) {
  json layers = json::array();
  for (const auto& c : r.layers)
    layers.push_back({{"layer_id", c.layer_id},
                      {"kind", std::string(to_string(c.kind))},
                      {"v", c.spatial.h},
                      {"h", c.spatial.w},
                      {"maps_before", c.maps_before},
                      {"maps_after", c.maps_after},
                      {"flops_before", c.flops},
                      {"flops_after", c.flops_after},
                      {"params_before", c.params},
                      {"params_after", c.params_after},
                      {"flop_pct", c.flop_reduction_pct()}});
  return json{{"layers", layers},
              {"total",
               {{"flops_before", r.flops},
                {"flops_after", r.flops_after},
                {"params_before", r.params},
                {"params_after", r.params_after},
                {"flop_pct", r.flop_reduction_pct()},
                {"param_pct", r.param_reduction_pct()}}}};
}

}  // namespace nwprune
