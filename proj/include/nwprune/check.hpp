#pragma once

// Verification of a (before, after, plan) triple, as run by `nwprune check`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "nwprune/bundle.hpp"
#include "nwprune/io.hpp"
#include "nwprune/plan.hpp"
#include "nwprune/prng.hpp"
#include "nwprune/refexec.hpp"

namespace nwprune {

/// Copy of `bundle` in which every channel the plan drops contributes nothing
/// downstream: its input slices in consuming conv/linear kernels and its
/// batchnorm scale are set to zero. Pruning that bundle must not change the
/// network output.
inline ModelBundle zero_downstream(const ModelBundle& bundle, const PrunePlan& plan) {
  ModelBundle out = bundle;
  for (const auto& e : plan.edits) {
    for (const auto& l : out.graph.layers) {
      if (l.weight_refs.empty()) continue;
      const bool consumer_kernel =
          (l.kind == LayerKind::conv2d || l.kind == LayerKind::linear) && l.weight_refs[0] == e.tensor && e.axis == 1;
      const bool bn_scale = l.kind == LayerKind::batchnorm && l.weight_refs[0] == e.tensor && e.axis == 0;
      if (!consumer_kernel && !bn_scale) continue;

      TensorRecord& t = *out.find_tensor(e.tensor);
      const std::int64_t extent = t.shape[static_cast<std::size_t>(e.axis)];
      std::int64_t outer = 1, inner = 1;
      for (std::int64_t i = 0; i < e.axis; ++i) outer *= t.shape[static_cast<std::size_t>(i)];
      for (std::size_t i = static_cast<std::size_t>(e.axis) + 1; i < t.shape.size(); ++i) inner *= t.shape[i];
      const auto dropped = complement(e.keep, extent);
      for (std::int64_t o = 0; o < outer; ++o)
        for (auto d : dropped)
          std::fill_n(t.data.begin() + (o * extent + d) * inner, inner, 0.0f);
    }
  }
  return out;
}

/// Seeded input with entries uniform in [-1, 1).
inline ActivationTensor random_input(const ArchGraph& g, std::uint64_t seed) {
  ActivationTensor x;
  x.shape = input_shape(g);
  SplitMix64 rng(seed);
  x.data.resize(static_cast<std::size_t>(x.numel()));
  for (auto& v : x.data) v = rng.uniform_sym();
  return x;
}

inline double max_abs_diff(const ActivationTensor& a, const ActivationTensor& b) {
  if (a.shape != b.shape) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(double{a.data[i]} - double{b.data[i]}));
  return m;
}

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string message;
};

struct CheckOptions {
  int inputs = 25;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
};

struct CheckResult {
  std::vector<CheckLine> lines;
  bool passed() const {
    return std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.passed; });
  }
};

/// Runs the hash, shape, validity, application and functional-equivalence
/// checks. Later checks are skipped once an earlier one makes them meaningless.
inline CheckResult run_checks(const ModelBundle& before, const ModelBundle& after, const PrunePlan& plan,
                              const CheckOptions& opt = {}) {
  CheckResult r;
  auto add = [&](std::string name, bool ok, std::string msg) {
    r.lines.push_back({std::move(name), ok, std::move(msg)});
    return ok;
  };

  const std::string sha = bundle_sha256(before);
  if (!add("hash", sha == plan.provenance.bundle_sha256,
           sha == plan.provenance.bundle_sha256 ? "plan provenance matches input bundle"
                                                 : "hash mismatch: plan built for " + plan.provenance.bundle_sha256))
    return r;

  auto diags = plan_diagnostics(before, plan);
  for (const auto& lp : plan.layers) {
    const LayerSpec* l = after.graph.find(lp.layer_id);
    if (l == nullptr)
      diags.push_back("layer " + lp.layer_id + ": shape: missing from pruned bundle");
    else if (l->out_channels != static_cast<std::int64_t>(lp.keep.size()))
      diags.push_back(fmt::format("layer {}: shape: pruned bundle has {} filters, plan keeps {}", lp.layer_id,
                                  l->out_channels, lp.keep.size()));
  }
  if (!add("shape", diags.empty(), diags.empty() ? "plan partitions every layer's filters" : diags.front())) return r;

  const auto vdiags = validate_bundle(after);
  if (!add("validate", vdiags.empty(), vdiags.empty() ? "pruned bundle is valid" : vdiags.front().str())) return r;

  ModelBundle expected;
  try {
    expected = slice_bundle(before, plan);
  } catch (const Error& e) {
    add("apply", false, e.what());
    return r;
  }
  expected.metadata = after.metadata;
  if (!add("apply", bit_equal(expected, after),
           bit_equal(expected, after) ? "pruned bundle equals plan applied to input"
                                      : "pruned bundle differs from plan applied to input"))
    return r;

  const bool weighted = !before.tensors.empty();
  if (!weighted) {
    add("equivalence", true, "skipped: architecture-only bundle");
    return r;
  }
  const ModelBundle zeroed = zero_downstream(before, plan);
  const ModelBundle zeroed_pruned = slice_bundle(zeroed, plan);
  double worst = 0.0;
  for (int i = 0; i < opt.inputs; ++i) {
    const ActivationTensor x = random_input(before.graph, opt.seed + static_cast<std::uint64_t>(i));
    worst = std::max(worst, max_abs_diff(forward(zeroed, x), forward(zeroed_pruned, x)));
  }
  add("equivalence", worst <= opt.tolerance,
      fmt::format("zero-downstream outputs agree on {} inputs, max |diff| = {:.3g} (tol {:.1g})", opt.inputs, worst,
                  opt.tolerance));
  return r;
}

}  // namespace nwprune
