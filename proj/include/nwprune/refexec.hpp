#pragma once

// Direct-summation forward evaluator used as a test oracle for pruning plans.
// Loops are written out in full and accumulate in double; nothing here is
// meant to be fast.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "nwprune/bundle.hpp"
#include "nwprune/error.hpp"

namespace nwprune {

/// [channels, height, width] feature maps, or [features] after flatten/linear.
struct ActivationTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t channels() const { return shape.empty() ? 0 : shape[0]; }
  std::int64_t height() const { return shape.size() == 3 ? shape[1] : 1; }
  std::int64_t width() const { return shape.size() == 3 ? shape[2] : 1; }
  std::int64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  }
};

namespace refexec_detail {

inline const TensorRecord& weight(const ModelBundle& b, const LayerSpec& l, std::size_t i) {
  if (i >= l.weight_refs.size()) throw Error("layer " + l.id + " has no weights; cannot execute");
  const TensorRecord* t = b.find_tensor(l.weight_refs[i]);
  if (t == nullptr) throw Error("layer " + l.id + ": missing tensor " + l.weight_refs[i]);
  return *t;
}

inline ActivationTensor conv2d(const ModelBundle& b, const LayerSpec& l, const ActivationTensor& x) {
  const TensorRecord& w = weight(b, l, 0);
  const TensorRecord* bias = l.bias ? &weight(b, l, 1) : nullptr;
  const std::int64_t cin = x.channels(), h = x.height(), wd = x.width();
  const std::int64_t k = l.kernel, oh = l.out_spatial.h, ow = l.out_spatial.w, cout = l.out_channels;
  ActivationTensor y{{cout, oh, ow}, std::vector<float>(static_cast<std::size_t>(cout * oh * ow))};
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double acc = bias ? double{bias->data[o]} : 0.0;
        for (std::int64_t c = 0; c < cin; ++c)
          for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t iy = oy * l.stride - l.padding + ky;
              const std::int64_t ix = ox * l.stride - l.padding + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += double{w.data[((o * cin + c) * k + ky) * k + kx]} * double{x.data[(c * h + iy) * wd + ix]};
            }
        y.data[(o * oh + oy) * ow + ox] = static_cast<float>(acc);
      }
  return y;
}

inline ActivationTensor batchnorm(const ModelBundle& b, const LayerSpec& l, ActivationTensor x) {
  const auto &scale = weight(b, l, 0), &shift = weight(b, l, 1), &mean = weight(b, l, 2), &var = weight(b, l, 3);
  const std::int64_t plane = x.height() * x.width();
  for (std::int64_t c = 0; c < x.channels(); ++c) {
    const double inv = 1.0 / std::sqrt(double{var.data[c]} + l.eps);
    for (std::int64_t i = 0; i < plane; ++i) {
      float& v = x.data[c * plane + i];
      v = static_cast<float>((double{v} - mean.data[c]) * inv * scale.data[c] + shift.data[c]);
    }
  }
  return x;
}

inline ActivationTensor pool(const LayerSpec& l, const ActivationTensor& x, bool is_max) {
  const std::int64_t ch = x.channels(), h = x.height(), wd = x.width();
  const std::int64_t oh = l.out_spatial.h, ow = l.out_spatial.w;
  ActivationTensor y{{ch, oh, ow}, std::vector<float>(static_cast<std::size_t>(ch * oh * ow))};
  for (std::int64_t c = 0; c < ch; ++c)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
        for (std::int64_t ky = 0; ky < l.window; ++ky)
          for (std::int64_t kx = 0; kx < l.window; ++kx) {
            const double v = x.data[(c * h + oy * l.stride + ky) * wd + ox * l.stride + kx];
            acc = is_max ? std::max(acc, v) : acc + v;
          }
        if (!is_max) acc /= static_cast<double>(l.window * l.window);
        y.data[(c * oh + oy) * ow + ox] = static_cast<float>(acc);
      }
  return y;
}

inline ActivationTensor linear(const ModelBundle& b, const LayerSpec& l, const ActivationTensor& x) {
  const TensorRecord& w = weight(b, l, 0);
  const TensorRecord* bias = l.bias ? &weight(b, l, 1) : nullptr;
  const std::int64_t in = l.in_channels, out = l.out_channels;
  ActivationTensor y{{out}, std::vector<float>(static_cast<std::size_t>(out))};
  for (std::int64_t o = 0; o < out; ++o) {
    double acc = bias ? double{bias->data[o]} : 0.0;
    for (std::int64_t i = 0; i < in; ++i) acc += double{w.data[o * in + i]} * double{x.data[i]};
    y.data[o] = static_cast<float>(acc);
  }
  return y;
}

inline std::vector<std::int64_t> expected_input_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::linear) return {l.in_channels};
  return {l.in_channels, l.in_spatial.h, l.in_spatial.w};
}

inline bool shape_matches(const ActivationTensor& x, const LayerSpec& l) {
  // A linear layer accepts [C] or [C, 1, 1].
  if (l.kind == LayerKind::linear) return x.numel() == l.in_channels && x.height() == 1 && x.width() == 1;
  return x.shape == expected_input_shape(l);
}

}  // namespace refexec_detail

/// Evaluates the network on one input. The graph must have exactly one input
/// and one output layer.
inline ActivationTensor forward(const ModelBundle& bundle, const ActivationTensor& input) {
  const ArchGraph& g = bundle.graph;
  if (g.inputs.size() != 1 || g.outputs.size() != 1)
    throw UnsupportedError("forward: graph must have exactly one input and one output");
  if (input.numel() != static_cast<std::int64_t>(input.data.size()))
    throw ShapeError("forward: input data does not match its shape");

  std::map<std::string, ActivationTensor, std::less<>> acts;
  for (const auto& id : g.topo_order_or_throw()) {
    const LayerSpec& l = g.at(id);
    const auto preds = g.predecessors(id);
    std::vector<const ActivationTensor*> in;
    if (preds.empty()) {
      in.push_back(&input);
    } else {
      for (const auto& p : preds) in.push_back(&acts.at(p));
    }
    for (const auto* x : in)
      if (!refexec_detail::shape_matches(*x, l))
        throw ShapeError("forward: layer " + l.id + " received input of unexpected shape");

    const ActivationTensor& x = *in.front();
    ActivationTensor y;
    switch (l.kind) {
      case LayerKind::conv2d:
        y = refexec_detail::conv2d(bundle, l, x);
        break;
      case LayerKind::batchnorm:
        y = refexec_detail::batchnorm(bundle, l, x);
        break;
      case LayerKind::relu:
        y = x;
        for (auto& v : y.data) v = std::max(v, 0.0f);
        break;
      case LayerKind::maxpool:
        y = refexec_detail::pool(l, x, true);
        break;
      case LayerKind::avgpool:
        y = refexec_detail::pool(l, x, false);
        break;
      case LayerKind::flatten:
        y = ActivationTensor{{x.numel()}, x.data};
        break;
      case LayerKind::linear:
        y = refexec_detail::linear(bundle, l, x);
        break;
      case LayerKind::add:
        if (in.size() != 2) throw ShapeError("forward: add layer " + l.id + " needs two inputs");
        y = x;
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += in[1]->data[i];
        break;
      case LayerKind::zeropad: {
        y.shape = {l.out_channels, x.height(), x.width()};
        y.data = x.data;
        y.data.resize(static_cast<std::size_t>(y.numel()), 0.0f);
        break;
      }
    }
    if (l.kind != LayerKind::flatten && l.kind != LayerKind::linear &&
        y.shape != std::vector<std::int64_t>{l.out_channels, l.out_spatial.h, l.out_spatial.w})
      throw ShapeError("forward: layer " + l.id + " produced an unexpected shape");
    acts.emplace(id, std::move(y));
  }
  return acts.at(g.outputs.front());
}

/// Input shape the graph's entry layer expects.
inline std::vector<std::int64_t> input_shape(const ArchGraph& g) {
  if (g.inputs.size() != 1) throw UnsupportedError("graph must have exactly one input");
  return refexec_detail::expected_input_shape(g.at(g.inputs.front()));
}

}  // namespace nwprune
