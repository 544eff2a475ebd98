#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nwprune/bundle.hpp"
#include "nwprune/cluster.hpp"
#include "nwprune/featurize.hpp"
#include "nwprune/io.hpp"
#include "nwprune/parallel.hpp"
#include "nwprune/prng.hpp"

namespace nwprune {

enum class Heuristic {
  A,  // keep one representative per cluster
  B,  // drop n - n_f filters uniformly at random
};

enum class RepMode {
  random,       // seeded draw within each cluster
  first_index,  // smallest member of each cluster
};

struct PruneConfig {
  double default_tau = 0.54;
  std::map<std::string, double> per_stage_tau;
  std::set<std::string> skip_layers;
  Heuristic heuristic = Heuristic::A;
  std::uint64_t seed = 0;
  // Only convs whose output never reaches an `add` are pruned, so identity
  // shortcuts keep matching widths.
  bool residual_rule = true;
  RepMode rep = RepMode::random;

  friend bool operator==(const PruneConfig&, const PruneConfig&) = default;
};

struct LayerPlan {
  std::string layer_id;
  std::vector<std::int64_t> keep;
  std::vector<std::int64_t> drop;
  std::int64_t n_original = 0;
  std::int64_t n_f = 0;

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

/// Keep `keep` (ascending) along `axis` of tensor `tensor`.
struct TensorEdit {
  std::string tensor;
  std::int64_t axis = 0;
  std::vector<std::int64_t> keep;

  friend bool operator==(const TensorEdit&, const TensorEdit&) = default;
};

struct ClusterSummary {
  std::string layer_id;
  double tau = 0.0;
  std::int64_t n_f = 0;

  friend bool operator==(const ClusterSummary&, const ClusterSummary&) = default;
};

struct PlanProvenance {
  std::string bundle_sha256;
  std::string tool_version{kToolVersion};
  std::vector<ClusterSummary> clusterings;

  friend bool operator==(const PlanProvenance&, const PlanProvenance&) = default;
};

struct PrunePlan {
  PruneConfig config;
  std::vector<LayerPlan> layers;  // one entry per conv2d layer, graph order
  std::vector<TensorEdit> edits;
  PlanProvenance provenance;

  friend bool operator==(const PrunePlan&, const PrunePlan&) = default;

  const LayerPlan* find(std::string_view id) const {
    for (const auto& l : layers)
      if (l.layer_id == id) return &l;
    return nullptr;
  }
};

// --- configuration ------------------------------------------------------------

inline void validate_config(const PruneConfig& c, const ArchGraph& g) {
  auto check_tau = [](double t, const std::string& what) {
    if (!(t >= -1.0 && t <= 1.0)) throw ConfigError(what + " tau " + std::to_string(t) + " outside [-1, 1]");
  };
  check_tau(c.default_tau, "default");
  for (const auto& [stage, t] : c.per_stage_tau) check_tau(t, "stage '" + stage + "'");
  for (const auto& id : c.skip_layers)
    if (g.find(id) == nullptr) throw ConfigError("skip list names unknown layer '" + id + "'");
}

inline double layer_tau(const LayerSpec& layer, const PruneConfig& c) {
  if (!layer.stage.empty()) {
    auto it = c.per_stage_tau.find(layer.stage);
    if (it != c.per_stage_tau.end()) return it->second;
  }
  return c.default_tau;
}

/// Where a conv's output channels flow before reaching a consumer that
/// absorbs them (a conv's or linear's input axis).
struct ChannelReach {
  bool feeds_residual = false;  // reaches an `add` or `zeropad`
  bool terminal = false;        // output leaves the network unabsorbed
};

inline ChannelReach channel_reach(const ArchGraph& g, std::string_view conv_id) {
  ChannelReach r;
  std::vector<std::string> stack{std::string(conv_id)};
  std::set<std::string, std::less<>> seen;
  while (!stack.empty()) {
    const std::string id = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(id).second) continue;
    if (g.is_output(id)) r.terminal = true;
    for (auto& s : g.successors(id)) {
      const LayerSpec& sl = g.at(s);
      switch (sl.kind) {
        case LayerKind::conv2d:
        case LayerKind::linear:
          break;
        case LayerKind::add:
        case LayerKind::zeropad:
          r.feeds_residual = true;
          break;
        default:
          stack.push_back(std::move(s));
      }
    }
  }
  return r;
}

/// Conv layers the config allows to be clustered and pruned, in graph order.
inline std::vector<std::string> prunable_layers(const ArchGraph& g, const PruneConfig& c) {
  std::vector<std::string> out;
  for (const auto& l : g.layers) {
    if (l.kind != LayerKind::conv2d || c.skip_layers.contains(l.id)) continue;
    const ChannelReach r = channel_reach(g, l.id);
    if (r.terminal || (c.residual_rule && r.feeds_residual)) continue;
    out.push_back(l.id);
  }
  return out;
}

// --- filter selection ---------------------------------------------------------

/// Heuristic A: one member per cluster, ascending. Random mode draws a member
/// uniformly from each cluster (clusters in label order) using the stream for
/// (seed, layer_id).
inline std::vector<std::int64_t> select_representatives(const Clustering& clustering, std::uint64_t seed,
                                                        std::string_view layer_id = {},
                                                        RepMode mode = RepMode::random) {
  SplitMix64 rng = layer_stream(seed, layer_id);
  std::vector<std::int64_t> keep;
  keep.reserve(static_cast<std::size_t>(clustering.n_f));
  for (const auto& members : clustering.clusters()) {
    if (mode == RepMode::first_index)
      keep.push_back(members.front());
    else
      keep.push_back(members[rng.bounded(members.size())]);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

/// Heuristic B: a uniformly random subset of n_original - n_f indices, ascending.
/// Partial Fisher-Yates over 0..n-1: for i < k, swap(i, i + bounded(n - i)).
inline std::vector<std::int64_t> random_prune_set(std::int64_t n_original, std::int64_t n_f, std::uint64_t seed,
                                                  std::string_view layer_id = {}) {
  if (n_f < 0 || n_f > n_original)
    throw std::invalid_argument("random_prune_set: need 0 <= n_f <= n_original, got n_f=" + std::to_string(n_f) +
                                ", n_original=" + std::to_string(n_original));
  SplitMix64 rng = layer_stream(seed, layer_id);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n_original));
  std::iota(idx.begin(), idx.end(), std::int64_t{0});
  const std::int64_t k = n_original - n_f;
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(n_original - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<std::int64_t> drop(idx.begin(), idx.begin() + k);
  std::sort(drop.begin(), drop.end());
  return drop;
}

inline std::vector<std::int64_t> complement(std::span<const std::int64_t> sorted_subset, std::int64_t n) {
  std::vector<std::int64_t> out;
  std::size_t j = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (j < sorted_subset.size() && sorted_subset[j] == i)
      ++j;
    else
      out.push_back(i);
  }
  return out;
}

// --- propagation --------------------------------------------------------------

/// Tensor edits implied by keeping only `keep` of conv `conv_id`'s filters:
/// the conv's own kernel (and bias), every batchnorm on the path, the input
/// axis of each consuming conv, and the input features of a linear layer after
/// a flatten (feature = c*h*w + y*w + x).
inline std::vector<TensorEdit> propagate_keep(const ArchGraph& g, const LayerSpec& conv,
                                              const std::vector<std::int64_t>& keep) {
  std::vector<TensorEdit> edits;
  if (!conv.weight_refs.empty()) {
    edits.push_back({conv.weight_refs[0], 0, keep});
    if (conv.weight_refs.size() > 1) edits.push_back({conv.weight_refs[1], 0, keep});
  }
  if (g.is_output(conv.id)) throw UnsupportedError("layer " + conv.id + " is a network output; cannot drop channels");

  struct Flow {
    std::string layer;
    std::vector<std::int64_t> keep;
  };
  std::vector<Flow> stack;
  for (auto& s : g.successors(conv.id)) stack.push_back({std::move(s), keep});

  while (!stack.empty()) {
    Flow f = std::move(stack.back());
    stack.pop_back();
    const LayerSpec& l = g.at(f.layer);
    switch (l.kind) {
      case LayerKind::conv2d:
        if (!l.weight_refs.empty()) edits.push_back({l.weight_refs[0], 1, f.keep});
        continue;
      case LayerKind::linear:
        if (!l.weight_refs.empty()) edits.push_back({l.weight_refs[0], 1, f.keep});
        continue;
      case LayerKind::add:
      case LayerKind::zeropad:
        throw UnsupportedError("dropping channels of " + conv.id + " reaches " + std::string(to_string(l.kind)) +
                               " layer " + l.id + "; residual shortcuts need matching channels");
      case LayerKind::batchnorm:
        for (const auto& ref : l.weight_refs) edits.push_back({ref, 0, f.keep});
        break;
      case LayerKind::flatten: {
        const std::int64_t hw = l.in_spatial.area();
        std::vector<std::int64_t> features;
        features.reserve(f.keep.size() * static_cast<std::size_t>(hw));
        for (auto c : f.keep)
          for (std::int64_t s = 0; s < hw; ++s) features.push_back(c * hw + s);
        f.keep = std::move(features);
        break;
      }
      case LayerKind::relu:
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        break;
    }
    if (g.is_output(l.id))
      throw UnsupportedError("dropping channels of " + conv.id + " changes network output " + l.id);
    for (auto& s : g.successors(l.id)) stack.push_back({std::move(s), f.keep});
  }
  return edits;
}

/// Copy of the graph with new output widths for the given convs and every
/// downstream channel count recomputed.
inline ArchGraph resize_graph(const ArchGraph& g, const std::map<std::string, std::int64_t>& conv_out) {
  ArchGraph out = g;
  for (const auto& id : g.topo_order_or_throw()) {
    LayerSpec& l = *out.find(id);
    const LayerSpec& orig = g.at(id);
    const auto preds = out.predecessors(id);
    if (!preds.empty()) l.in_channels = out.at(preds.front()).out_channels;
    switch (l.kind) {
      case LayerKind::conv2d:
        if (auto it = conv_out.find(id); it != conv_out.end()) l.out_channels = it->second;
        break;
      case LayerKind::linear:
        break;
      case LayerKind::flatten:
        l.out_channels = l.in_channels * l.in_spatial.area();
        break;
      case LayerKind::zeropad:
        l.out_channels = l.in_channels + (orig.out_channels - orig.in_channels);
        break;
      default:
        l.out_channels = l.in_channels;
    }
  }
  return out;
}

// --- plan construction --------------------------------------------------------

/// Clusters every prunable layer at its configured threshold. Layers are
/// distributed over `jobs` worker threads; results do not depend on `jobs`.
inline std::map<std::string, Clustering> cluster_layers(const ModelBundle& bundle, const PruneConfig& config,
                                                        unsigned jobs = 1) {
  validate_config(config, bundle.graph);
  const auto ids = prunable_layers(bundle.graph, config);
  std::vector<Clustering> results(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t i) {
    const LayerSpec& l = bundle.graph.at(ids[i]);
    results[i] = agglomerate(kernel_matrix(bundle, l.id), layer_tau(l, config));
  });

  std::map<std::string, Clustering> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(results[i]));
  return out;
}

inline PrunePlan build_plan(const ModelBundle& bundle, const PruneConfig& config,
                            const std::map<std::string, Clustering>& clusterings) {
  const ArchGraph& g = bundle.graph;
  validate_config(config, g);
  const auto prunable = prunable_layers(g, config);
  for (const auto& [id, c] : clusterings) {
    const LayerSpec* l = g.find(id);
    if (l == nullptr || l->kind != LayerKind::conv2d)
      throw ConfigError("clustering given for '" + id + "', which is not a conv2d layer");
    if (std::find(prunable.begin(), prunable.end(), id) == prunable.end())
      throw ConfigError("clustering given for protected layer '" + id + "'");
    if (c.size() != l->out_channels)
      throw ConfigError("clustering for '" + id + "' covers " + std::to_string(c.size()) + " filters, layer has " +
                        std::to_string(l->out_channels));
  }
  for (const auto& id : prunable)
    if (!clusterings.contains(id)) throw ConfigError("no clustering provided for prunable layer '" + id + "'");

  PrunePlan plan;
  plan.config = config;
  plan.provenance.bundle_sha256 = bundle_sha256(bundle);
  for (const auto& l : g.layers) {
    if (l.kind != LayerKind::conv2d) continue;
    LayerPlan lp;
    lp.layer_id = l.id;
    lp.n_original = l.out_channels;
    auto it = clusterings.find(l.id);
    if (it == clusterings.end()) {
      lp.keep = complement({}, l.out_channels);
      lp.n_f = l.out_channels;
      plan.layers.push_back(std::move(lp));
      continue;
    }
    const Clustering& c = it->second;
    lp.n_f = c.n_f;
    if (config.heuristic == Heuristic::A) {
      lp.keep = select_representatives(c, config.seed, l.id, config.rep);
      lp.drop = complement(lp.keep, l.out_channels);
    } else {
      lp.drop = random_prune_set(l.out_channels, c.n_f, config.seed, l.id);
      lp.keep = complement(lp.drop, l.out_channels);
    }
    plan.provenance.clusterings.push_back({l.id, c.tau, c.n_f});
    // Structural check runs even for empty drops so an unsupported graph fails early.
    auto edits = propagate_keep(g, l, lp.keep);
    if (!lp.drop.empty()) plan.edits.insert(plan.edits.end(), edits.begin(), edits.end());
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

/// Clusters, then plans. The usual entry point.
inline PrunePlan make_plan(const ModelBundle& bundle, const PruneConfig& config, unsigned jobs = 1) {
  return build_plan(bundle, config, cluster_layers(bundle, config, jobs));
}

// --- plan application ---------------------------------------------------------

inline TensorRecord slice_axis(const TensorRecord& t, std::int64_t axis, std::span<const std::int64_t> keep) {
  if (axis < 0 || axis >= static_cast<std::int64_t>(t.shape.size()))
    throw IndexError("tensor " + t.name + ": axis " + std::to_string(axis) + " out of range");
  const std::int64_t extent = t.shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] >= extent)
      throw IndexError("tensor " + t.name + ": index " + std::to_string(keep[i]) + " out of range on axis " +
                       std::to_string(axis));
    if (i > 0 && keep[i] <= keep[i - 1]) throw IndexError("tensor " + t.name + ": keep indices not increasing");
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= t.shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < t.shape.size(); ++i) inner *= t.shape[i];

  TensorRecord out;
  out.name = t.name;
  out.shape = t.shape;
  out.shape[static_cast<std::size_t>(axis)] = static_cast<std::int64_t>(keep.size());
  out.data.reserve(static_cast<std::size_t>(outer * inner) * keep.size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (auto k : keep) {
      const auto begin = t.data.begin() + (o * extent + k) * inner;
      out.data.insert(out.data.end(), begin, begin + inner);
    }
  return out;
}

/// Structural problems with a plan relative to a bundle; empty when consistent.
inline std::vector<std::string> plan_diagnostics(const ModelBundle& bundle, const PrunePlan& plan) {
  std::vector<std::string> out;
  for (const auto& lp : plan.layers) {
    const LayerSpec* l = bundle.graph.find(lp.layer_id);
    if (l == nullptr || l->kind != LayerKind::conv2d) {
      out.push_back("layer " + lp.layer_id + ": shape: not a conv2d layer of this bundle");
      continue;
    }
    if (lp.n_original != l->out_channels)
      out.push_back("layer " + lp.layer_id + ": shape: plan expects " + std::to_string(lp.n_original) +
                    " filters, layer has " + std::to_string(l->out_channels));
    std::vector<std::int64_t> all = lp.keep;
    all.insert(all.end(), lp.drop.begin(), lp.drop.end());
    std::sort(all.begin(), all.end());
    std::vector<std::int64_t> expect(static_cast<std::size_t>(lp.n_original));
    std::iota(expect.begin(), expect.end(), std::int64_t{0});
    if (all != expect) out.push_back("layer " + lp.layer_id + ": shape: keep and drop do not partition the filters");
    if (static_cast<std::int64_t>(lp.drop.size()) != lp.n_original - lp.n_f)
      out.push_back("layer " + lp.layer_id + ": shape: |drop| != n_original - n_f");
    if (!std::is_sorted(lp.keep.begin(), lp.keep.end()) || !std::is_sorted(lp.drop.begin(), lp.drop.end()))
      out.push_back("layer " + lp.layer_id + ": shape: index lists not sorted");
  }
  return out;
}

/// Applies the plan without checking provenance. The input is not modified.
inline ModelBundle slice_bundle(const ModelBundle& bundle, const PrunePlan& plan) {
  if (auto diags = plan_diagnostics(bundle, plan); !diags.empty()) {
    std::string msg = "plan does not fit bundle:";
    for (const auto& d : diags) msg += "\n" + d;
    throw ShapeError(msg);
  }
  ModelBundle out = bundle;
  for (const auto& e : plan.edits) {
    TensorRecord* t = out.find_tensor(e.tensor);
    if (t == nullptr) throw IndexError("plan edits unknown tensor '" + e.tensor + "'");
    *t = slice_axis(*t, e.axis, e.keep);
  }
  std::map<std::string, std::int64_t> widths;
  for (const auto& lp : plan.layers) widths[lp.layer_id] = static_cast<std::int64_t>(lp.keep.size());
  out.graph = resize_graph(bundle.graph, widths);
  require_valid(out);
  return out;
}

/// Applies a plan built against exactly this bundle.
inline ModelBundle apply_plan(const ModelBundle& bundle, const PrunePlan& plan) {
  const std::string sha = bundle_sha256(bundle);
  if (sha != plan.provenance.bundle_sha256)
    throw ProvenanceError("plan was built for bundle " + plan.provenance.bundle_sha256 + ", got " + sha);
  return slice_bundle(bundle, plan);
}

// --- serialization ------------------------------------------------------------

inline json to_json(const PruneConfig& c) {
  return json{{"default_tau", c.default_tau},
              {"per_stage_tau", c.per_stage_tau},
              {"skip_layers", c.skip_layers},
              {"heuristic", c.heuristic == Heuristic::A ? "A" : "B"},
              {"seed", c.seed},
              {"residual_rule", c.residual_rule},
              {"rep", c.rep == RepMode::random ? "random" : "first-index"}};
}

inline Heuristic parse_heuristic(std::string_view s) {
  if (s == "A" || s == "a") return Heuristic::A;
  if (s == "B" || s == "b") return Heuristic::B;
  throw ConfigError("heuristic must be A or B, got '" + std::string(s) + "'");
}

inline RepMode parse_rep_mode(std::string_view s) {
  if (s == "random") return RepMode::random;
  if (s == "first-index") return RepMode::first_index;
  throw ConfigError("rep must be random or first-index, got '" + std::string(s) + "'");
}

/// Fields absent from `j` keep their values from `base`.
inline PruneConfig config_from_json(const json& j, PruneConfig base = {}) {
  try {
    if (j.contains("default_tau")) base.default_tau = j.at("default_tau").get<double>();
    if (j.contains("per_stage_tau")) base.per_stage_tau = j.at("per_stage_tau").get<std::map<std::string, double>>();
    if (j.contains("skip_layers")) base.skip_layers = j.at("skip_layers").get<std::set<std::string>>();
    if (j.contains("heuristic")) base.heuristic = parse_heuristic(j.at("heuristic").get<std::string>());
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("residual_rule")) base.residual_rule = j.at("residual_rule").get<bool>();
    if (j.contains("rep")) base.rep = parse_rep_mode(j.at("rep").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return base;
}

inline json to_json(const PrunePlan& p) {
  json layers = json::array();
  for (const auto& l : p.layers)
    layers.push_back(
        {{"layer_id", l.layer_id}, {"keep", l.keep}, {"drop", l.drop}, {"n_original", l.n_original}, {"n_f", l.n_f}});
  json edits = json::array();
  for (const auto& e : p.edits) edits.push_back({{"tensor", e.tensor}, {"axis", e.axis}, {"keep", e.keep}});
  json clusterings = json::array();
  for (const auto& c : p.provenance.clusterings)
    clusterings.push_back({{"layer_id", c.layer_id}, {"tau", c.tau}, {"n_f", c.n_f}});
  return json{{"config", to_json(p.config)},
              {"layers", layers},
              {"edits", edits},
              {"provenance",
               {{"bundle_sha256", p.provenance.bundle_sha256},
                {"tool_version", p.provenance.tool_version},
                {"clusterings", clusterings}}}};
}

inline PrunePlan plan_from_json(const json& j) {
  PrunePlan p;
  try {
    p.config = config_from_json(j.at("config"));
    for (const auto& l : j.at("layers"))
      p.layers.push_back({l.at("layer_id").get<std::string>(), l.at("keep").get<std::vector<std::int64_t>>(),
                          l.at("drop").get<std::vector<std::int64_t>>(), l.at("n_original").get<std::int64_t>(),
                          l.at("n_f").get<std::int64_t>()});
    for (const auto& e : j.at("edits"))
      p.edits.push_back({e.at("tensor").get<std::string>(), e.at("axis").get<std::int64_t>(),
                         e.at("keep").get<std::vector<std::int64_t>>()});
    const auto& prov = j.at("provenance");
    p.provenance.bundle_sha256 = prov.at("bundle_sha256").get<std::string>();
    p.provenance.tool_version = prov.at("tool_version").get<std::string>();
    if (prov.contains("clusterings"))
      for (const auto& c : prov.at("clusterings"))
        p.provenance.clusterings.push_back(
            {c.at("layer_id").get<std::string>(), c.at("tau").get<double>(), c.at("n_f").get<std::int64_t>()});
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed plan: ") + e.what());
  }
  return p;
}

inline std::string encode_plan(const PrunePlan& p) { return to_json(p).dump(1) + "\n"; }

inline void write_plan(const PrunePlan& p, const std::filesystem::path& path) { write_file(path, encode_plan(p)); }

inline PrunePlan read_plan(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("plan '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return plan_from_json(j);
}

}  // namespace nwprune
