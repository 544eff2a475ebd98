#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nwprune/graph.hpp"

namespace nwprune {

/// A named float32 tensor, row-major.
struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  }
  std::size_t nbytes() const { return data.size() * sizeof(float); }
};

/// Element-exact comparison (distinguishes -0.0 from 0.0 and compares NaN payloads).
inline bool bit_equal(const TensorRecord& a, const TensorRecord& b) {
  return a.name == b.name && a.shape == b.shape && a.data.size() == b.data.size() &&
         (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.nbytes()) == 0);
}

struct ModelBundle {
  std::vector<TensorRecord> tensors;
  ArchGraph graph;
  std::map<std::string, std::string> metadata;

  const TensorRecord* find_tensor(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  TensorRecord* find_tensor(std::string_view name) {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  bool has_weights(const LayerSpec& layer) const { return !layer.weight_refs.empty(); }
};

inline bool bit_equal(const ModelBundle& a, const ModelBundle& b) {
  if (a.graph != b.graph || a.metadata != b.metadata || a.tensors.size() != b.tensors.size())
    return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (!bit_equal(a.tensors[i], b.tensors[i])) return false;
  return true;
}

/// One violated invariant. `rule` is a short stable phrase ("shape mismatch").
struct Diagnostic {
  std::string subject;  // "layer conv3" or "tensor conv3.weight"
  std::string rule;
  std::string detail;

  std::string str() const { return subject + ": " + rule + (detail.empty() ? "" : " (" + detail + ")"); }
};

namespace detail {

inline std::string shape_str(const std::vector<std::int64_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::string spatial_str(Spatial s) { return std::to_string(s.h) + "x" + std::to_string(s.w); }

class Diagnoser {
 public:
  void layer(const LayerSpec& l, std::string rule, std::string detail = {}) {
    out_.push_back({"layer " + l.id, std::move(rule), std::move(detail)});
  }
  void tensor(std::string_view name, std::string rule, std::string detail = {}) {
    out_.push_back({"tensor " + std::string(name), std::move(rule), std::move(detail)});
  }
  void graph(std::string rule, std::string detail = {}) {
    out_.push_back({"graph", std::move(rule), std::move(detail)});
  }
  std::vector<Diagnostic> take() { return std::move(out_); }

 private:
  std::vector<Diagnostic> out_;
};

inline void check_layer_local(const LayerSpec& l, Diagnoser& d) {
  if (l.in_channels <= 0 || l.out_channels <= 0)
    d.layer(l, "channel count", "channels must be positive");
  if (l.in_spatial.h <= 0 || l.in_spatial.w <= 0 || l.out_spatial.h <= 0 || l.out_spatial.w <= 0)
    d.layer(l, "spatial size", "spatial sizes must be positive");

  switch (l.kind) {
    case LayerKind::conv2d:
      if (l.kernel < 1) d.layer(l, "kernel size", "square kernel k >= 1 required");
      if (l.stride < 1) d.layer(l, "stride", "stride must be >= 1");
      if (l.padding < 0) d.layer(l, "padding", "padding must be >= 0");
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      if (l.window < 1) d.layer(l, "pool window", "window must be >= 1");
      if (l.stride < 1) d.layer(l, "stride", "stride must be >= 1");
      break;
    case LayerKind::batchnorm:
      if (!(l.eps > 0.0)) d.layer(l, "epsilon", "batchnorm eps must be positive");
      [[fallthrough]];
    case LayerKind::relu:
    case LayerKind::add:
      if (l.in_channels != l.out_channels) d.layer(l, "channel mismatch", "layer must preserve channels");
      break;
    case LayerKind::flatten:
      if (l.out_channels != l.in_channels * l.in_spatial.area())
        d.layer(l, "channel mismatch", "flatten must output channels*h*w features");
      break;
    case LayerKind::linear:
      if (l.in_spatial != Spatial{1, 1}) d.layer(l, "spatial mismatch", "linear input must be 1x1");
      break;
    case LayerKind::zeropad:
      if (l.out_channels < l.in_channels) d.layer(l, "channel mismatch", "zeropad cannot shrink channels");
      break;
  }
  if (l.kind != LayerKind::maxpool && l.kind != LayerKind::avgpool && l.kind != LayerKind::conv2d &&
      l.kind != LayerKind::flatten && l.kind != LayerKind::linear && l.in_spatial != l.out_spatial)
    d.layer(l, "spatial mismatch", "layer must preserve spatial size");
  if (l.stride >= 1 && l.out_spatial != expected_out_spatial(l))
    d.layer(l, "spatial mismatch",
            "declared " + spatial_str(l.out_spatial) + ", expected " + spatial_str(expected_out_spatial(l)));
}

inline void check_weights(const ModelBundle& b, const LayerSpec& l, Diagnoser& d) {
  if (l.weight_refs.empty()) return;
  std::vector<std::vector<std::int64_t>> expected;
  switch (l.kind) {
    case LayerKind::conv2d:
      expected.push_back({l.out_channels, l.in_channels, l.kernel, l.kernel});
      if (l.bias) expected.push_back({l.out_channels});
      break;
    case LayerKind::batchnorm:
      expected.assign(4, {l.out_channels});
      break;
    case LayerKind::linear:
      expected.push_back({l.out_channels, l.in_channels});
      if (l.bias) expected.push_back({l.out_channels});
      break;
    default:
      d.layer(l, "weight refs", std::string(to_string(l.kind)) + " layers carry no weights");
      return;
  }
  if (l.weight_refs.size() != expected.size()) {
    d.layer(l, "weight refs",
            "expected " + std::to_string(expected.size()) + " refs, got " + std::to_string(l.weight_refs.size()));
    return;
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const TensorRecord* t = b.find_tensor(l.weight_refs[i]);
    if (t == nullptr) {
      d.layer(l, "missing tensor", l.weight_refs[i]);
    } else if (t->shape != expected[i]) {
      d.layer(l, "shape mismatch",
              "tensor " + t->name + " is " + shape_str(t->shape) + ", graph implies " + shape_str(expected[i]));
    }
  }
}

}  // namespace detail

/// Checks every bundle invariant and returns one diagnostic per violation.
/// An empty result means the bundle is well formed.
inline std::vector<Diagnostic> validate_bundle(const ModelBundle& b) {
  detail::Diagnoser d;

  std::set<std::string, std::less<>> tensor_names;
  for (const auto& t : b.tensors) {
    if (!tensor_names.insert(t.name).second) d.tensor(t.name, "duplicate tensor name");
    bool positive = true;
    for (auto s : t.shape) positive = positive && s > 0;
    if (!positive) d.tensor(t.name, "shape", "dimensions must be positive");
    if (positive && static_cast<std::int64_t>(t.data.size()) != t.numel())
      d.tensor(t.name, "size mismatch",
               "shape " + detail::shape_str(t.shape) + " vs " + std::to_string(t.data.size()) + " elements");
  }

  const ArchGraph& g = b.graph;
  std::set<std::string, std::less<>> ids;
  for (const auto& l : g.layers)
    if (!ids.insert(l.id).second) d.layer(l, "duplicate layer id");

  bool edges_ok = true;
  for (const auto& [from, to] : g.edges) {
    if (!ids.contains(from) || !ids.contains(to)) {
      d.graph("unknown layer", "edge " + from + " -> " + to);
      edges_ok = false;
    }
  }
  for (const auto& id : g.inputs)
    if (!ids.contains(id)) d.graph("unknown layer", "input " + id);
  for (const auto& id : g.outputs)
    if (!ids.contains(id)) d.graph("unknown layer", "output " + id);
  if (!g.layers.empty() && g.inputs.empty()) d.graph("no inputs");

  if (edges_ok && !g.topo_order()) d.graph("cycle");

  // Reachability from the declared inputs.
  if (edges_ok) {
    std::set<std::string, std::less<>> seen(g.inputs.begin(), g.inputs.end());
    std::vector<std::string> stack(g.inputs.begin(), g.inputs.end());
    while (!stack.empty()) {
      auto id = std::move(stack.back());
      stack.pop_back();
      for (auto& s : g.successors(id))
        if (seen.insert(s).second) stack.push_back(std::move(s));
    }
    for (const auto& l : g.layers)
      if (!seen.contains(l.id)) d.layer(l, "unreachable");
  }

  for (const auto& l : g.layers) {
    detail::check_layer_local(l, d);
    detail::check_weights(b, l, d);

    const auto preds = g.predecessors(l.id);
    const bool is_input = std::find(g.inputs.begin(), g.inputs.end(), l.id) != g.inputs.end();
    if (is_input) {
      if (!preds.empty()) d.layer(l, "fan-in", "input layers have no predecessors");
    } else if (l.kind == LayerKind::add) {
      if (preds.size() != 2) d.layer(l, "add arity", "add needs exactly two inputs");
    } else if (preds.size() != 1) {
      d.layer(l, "fan-in", "expected one predecessor, got " + std::to_string(preds.size()));
    }

    for (const auto& p : preds) {
      const LayerSpec* pl = g.find(p);
      if (pl == nullptr) continue;
      if (pl->out_channels != l.in_channels)
        d.layer(l, "channel mismatch",
                p + " produces " + std::to_string(pl->out_channels) + ", expects " + std::to_string(l.in_channels));
      if (pl->out_spatial != l.in_spatial)
        d.layer(l, "spatial mismatch",
                p + " produces " + detail::spatial_str(pl->out_spatial) + ", expects " +
                    detail::spatial_str(l.in_spatial));
    }
    if (l.kind == LayerKind::add && preds.size() == 2) {
      const LayerSpec* a = g.find(preds[0]);
      const LayerSpec* c = g.find(preds[1]);
      if (a != nullptr && c != nullptr) {
        if (a->out_channels != c->out_channels)
          d.layer(l, "shortcut channel mismatch",
                  std::to_string(a->out_channels) + " vs " + std::to_string(c->out_channels));
        if (a->out_spatial != c->out_spatial)
          d.layer(l, "shortcut spatial mismatch",
                  detail::spatial_str(a->out_spatial) + " vs " + detail::spatial_str(c->out_spatial));
      }
    }
  }
  return d.take();
}

inline std::string format_diagnostics(const std::vector<Diagnostic>& diags) {
  std::string s;
  for (const auto& d : diags) s += d.str() + "\n";
  return s;
}

/// Throws ValidationError listing every diagnostic when the bundle is invalid.
inline void require_valid(const ModelBundle& b) {
  auto diags = validate_bundle(b);
  if (!diags.empty()) throw ValidationError("invalid bundle:\n" + format_diagnostics(diags));
}

}  // namespace nwprune
