#include <random>
#include <set>

#include <gtest/gtest.h>

#include "nwprune/nwprune.hpp"
#include "support/toy_nets.hpp"

using namespace nwprune;
using namespace nwprune::testing;

namespace {

// conv_l filters form the groups {0, 2}, {1}, {3, 4}.
ModelBundle five_filter_bundle() {
  ModelBundle b = attach_random_weights(five_filter_net(), 1);
  TensorRecord& k = *b.find_tensor("conv_l.weight");
  const std::int64_t p = 18;
  std::fill(k.data.begin(), k.data.end(), 0.0f);
  auto set = [&](int f, int axis, float v) { k.data[f * p + axis] = v; };
  set(0, 0, 1.0f);
  set(2, 0, 2.0f);
  set(2, 5, 0.1f);
  set(1, 1, 1.0f);
  set(3, 2, 1.0f);
  set(4, 2, 1.5f);
  set(4, 7, -0.2f);
  return b;
}

const TensorEdit* find_edit(const PrunePlan& p, const std::string& tensor) {
  for (const auto& e : p.edits)
    if (e.tensor == tensor) return &e;
  return nullptr;
}

PruneConfig first_index_config() {
  PruneConfig c;
  c.rep = RepMode::first_index;
  return c;
}

}  // namespace

TEST(Plan, FiveFilterExamplePropagation) {
  const ModelBundle b = five_filter_bundle();
  const PrunePlan plan = make_plan(b, first_index_config());
  const LayerPlan* lp = plan.find("conv_l");
  ASSERT_NE(lp, nullptr);
  EXPECT_EQ(lp->n_f, 3);
  EXPECT_EQ(lp->keep, (std::vector<std::int64_t>{0, 1, 3}));
  EXPECT_EQ(lp->drop, (std::vector<std::int64_t>{2, 4}));

  // conv_next is the network output and stays whole.
  const LayerPlan* next = plan.find("conv_next");
  ASSERT_NE(next, nullptr);
  EXPECT_TRUE(next->drop.empty());

  std::set<std::pair<std::string, std::int64_t>> edited;
  for (const auto& e : plan.edits) {
    edited.insert({e.tensor, e.axis});
    EXPECT_EQ(e.keep, lp->keep) << e.tensor;
  }
  const std::set<std::pair<std::string, std::int64_t>> expected{
      {"conv_l.weight", 0}, {"bn_l.scale", 0}, {"bn_l.shift", 0}, {"bn_l.mean", 0}, {"bn_l.var", 0},
      {"conv_next.weight", 1}};
  EXPECT_EQ(edited, expected);

  const ModelBundle pruned = apply_plan(b, plan);
  EXPECT_EQ(pruned.find_tensor("conv_l.weight")->shape, (std::vector<std::int64_t>{3, 2, 3, 3}));
  EXPECT_EQ(pruned.find_tensor("conv_next.weight")->shape, (std::vector<std::int64_t>{3, 3, 3, 3}));
  EXPECT_EQ(pruned.graph.at("bn_l").out_channels, 3);
  EXPECT_EQ(pruned.graph.at("conv_next").in_channels, 3);
  // kept slices are copied bit for bit
  const auto& before = b.find_tensor("conv_next.weight")->data;
  const auto& after = pruned.find_tensor("conv_next.weight")->data;
  for (std::int64_t o = 0; o < 3; ++o)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t q = 0; q < 9; ++q)
        EXPECT_EQ(after[(o * 3 + c) * 9 + q], before[(o * 5 + lp->keep[c]) * 9 + q]);
}

TEST(Plan, RandomRepresentativesComeFromEachCluster) {
  const ModelBundle b = five_filter_bundle();
  PruneConfig c;
  std::set<std::vector<std::int64_t>> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    c.seed = seed;
    const PrunePlan plan = make_plan(b, c);
    const auto& keep = plan.find("conv_l")->keep;
    ASSERT_EQ(keep.size(), 3u);
    auto kept_from = [&](std::initializer_list<std::int64_t> group) {
      return std::count_if(keep.begin(), keep.end(),
                           [&](std::int64_t k) { return std::find(group.begin(), group.end(), k) != group.end(); });
    };
    EXPECT_EQ(kept_from({0, 2}), 1);
    EXPECT_EQ(kept_from({1}), 1);
    EXPECT_EQ(kept_from({3, 4}), 1);
    seen.insert(keep);
    EXPECT_EQ(plan, make_plan(b, c)) << "seed " << seed;
  }
  EXPECT_EQ(seen.size(), 4u);
}

TEST(Plan, HeuristicBDropsTheSameNumber) {
  const ModelBundle b = five_filter_bundle();
  PruneConfig c;
  c.heuristic = Heuristic::B;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    c.seed = seed;
    const PrunePlan plan = make_plan(b, c);
    const LayerPlan& lp = *plan.find("conv_l");
    EXPECT_EQ(lp.n_f, 3);
    EXPECT_EQ(lp.drop.size(), 2u);
    EXPECT_TRUE(std::is_sorted(lp.drop.begin(), lp.drop.end()));
  }
}

TEST(Plan, RandomPruneSetIsUniform) {
  // Every 2-subset of 5 should appear about equally often over many seeds.
  std::map<std::vector<std::int64_t>, int> counts;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) counts[random_prune_set(5, 3, static_cast<std::uint64_t>(s), "layer")]++;
  ASSERT_EQ(counts.size(), 10u);
  double chi2 = 0.0;
  for (const auto& [subset, n] : counts) chi2 += (n - draws / 10.0) * (n - draws / 10.0) / (draws / 10.0);
  EXPECT_LT(chi2, 27.9);  // 9 degrees of freedom, p = 0.001

  EXPECT_EQ(random_prune_set(5, 3, 1, "a"), random_prune_set(5, 3, 1, "a"));
  EXPECT_TRUE(random_prune_set(7, 7, 1, "a").empty());
  EXPECT_EQ(random_prune_set(4, 0, 1, "a").size(), 4u);
  EXPECT_THROW(random_prune_set(4, 5, 1, "a"), std::invalid_argument);
  EXPECT_THROW(random_prune_set(4, -1, 1, "a"), std::invalid_argument);
}

TEST(Plan, StreamsDependOnLayerId) {
  int differ = 0;
  for (std::uint64_t s = 0; s < 20; ++s) differ += random_prune_set(64, 32, s, "conv1") != random_prune_set(64, 32, s, "conv2");
  EXPECT_GT(differ, 15);
}

TEST(Plan, SplitMixReferenceValues) {
  // First outputs for seed 1234567 from the published reference implementation.
  SplitMix64 rng(1234567);
  EXPECT_EQ(rng.next(), 6457827717110365317ULL);
  EXPECT_EQ(rng.next(), 3203168211198807973ULL);
  EXPECT_EQ(rng.next(), 9817491932198370423ULL);
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Plan, ResidualRuleProtectsShortcutConvs) {
  const ArchGraph g = resnet_graph(20);
  const auto prunable = prunable_layers(g, PruneConfig{});
  ASSERT_EQ(prunable.size(), 9u);
  for (const auto& id : prunable) EXPECT_NE(id.find("conv_a"), std::string::npos) << id;

  const ChannelReach stem = channel_reach(g, "conv1");
  EXPECT_TRUE(stem.feeds_residual);
  EXPECT_FALSE(channel_reach(g, "stage1.block0.conv_a").feeds_residual);
  EXPECT_TRUE(channel_reach(g, "stage3.block2.conv_b").feeds_residual);

  PruneConfig off;
  off.residual_rule = false;
  EXPECT_EQ(prunable_layers(g, off).size(), 19u);
  const ModelBundle b = attach_random_weights(g, 3);
  off.default_tau = 0.0;
  EXPECT_THROW(make_plan(b, off), UnsupportedError);
}

TEST(Plan, TerminalConvIsProtected) {
  const auto prunable = prunable_layers(toy_chain(), PruneConfig{});
  EXPECT_EQ(prunable, (std::vector<std::string>{"conv1"}));
}

TEST(Plan, SkipListAndConfigErrors) {
  const ModelBundle b = attach_random_weights(desk_vgg(), 2);
  PruneConfig c;
  c.skip_layers = {"conv1", "conv4"};
  const PrunePlan plan = make_plan(b, c);
  EXPECT_TRUE(plan.find("conv1")->drop.empty());
  EXPECT_TRUE(plan.find("conv4")->drop.empty());
  for (const auto& s : plan.provenance.clusterings) EXPECT_NE(s.layer_id, "conv1");

  PruneConfig bad;
  bad.skip_layers = {"conv99"};
  EXPECT_THROW(make_plan(b, bad), ConfigError);
  bad = {};
  bad.default_tau = 1.5;
  EXPECT_THROW(make_plan(b, bad), ConfigError);
  bad = {};
  bad.per_stage_tau["stage1"] = -2.0;
  EXPECT_THROW(make_plan(b, bad), ConfigError);
}

TEST(Plan, PerStageThresholds) {
  const ModelBundle b = attach_random_weights(resnet_graph(20), 4);
  PruneConfig c;
  c.default_tau = 1.0;
  c.per_stage_tau = {{"stage2", -1.0}};
  const PrunePlan plan = make_plan(b, c);
  for (const auto& s : plan.provenance.clusterings) {
    const bool stage2 = s.layer_id.rfind("stage2", 0) == 0;
    EXPECT_EQ(s.tau, stage2 ? -1.0 : 1.0) << s.layer_id;
    EXPECT_EQ(s.n_f, stage2 ? 1 : b.graph.at(s.layer_id).out_channels) << s.layer_id;
  }
}

TEST(Plan, FlattenExpandsChannelsToFeatures) {
  const ModelBundle b = attach_random_weights(desk_vgg(), 5);
  const LayerSpec& conv6 = b.graph.at("conv6");
  const std::vector<std::int64_t> keep{1, 4, 30};
  const auto edits = propagate_keep(b.graph, conv6, keep);
  const TensorEdit* fc = nullptr;
  for (const auto& e : edits)
    if (e.tensor == "fc.weight") fc = &e;
  ASSERT_NE(fc, nullptr);
  EXPECT_EQ(fc->axis, 1);
  EXPECT_EQ(fc->keep, (std::vector<std::int64_t>{4, 5, 6, 7, 16, 17, 18, 19, 120, 121, 122, 123}));
}

TEST(Plan, ResizeGraphUpdatesDownstreamCounts) {
  const ArchGraph g = resize_graph(desk_vgg(), {{"conv6", 20}, {"conv1", 3}});
  EXPECT_EQ(g.at("bn6").in_channels, 20);
  EXPECT_EQ(g.at("flatten").out_channels, 80);
  EXPECT_EQ(g.at("fc").in_channels, 80);
  EXPECT_EQ(g.at("conv2").in_channels, 3);
  ModelBundle probe;
  probe.graph = g;
  EXPECT_TRUE(validate_bundle(probe).empty());
}

TEST(Plan, ProvenanceIsEnforced) {
  const ModelBundle b = five_filter_bundle();
  const PrunePlan plan = make_plan(b, PruneConfig{});
  EXPECT_EQ(plan.provenance.bundle_sha256, bundle_sha256(b));
  EXPECT_EQ(plan.provenance.tool_version, kToolVersion);
  ModelBundle other = b;
  other.metadata["x"] = "y";
  EXPECT_THROW(apply_plan(other, plan), ProvenanceError);
  EXPECT_NO_THROW(slice_bundle(other, plan));
}

TEST(Plan, DiagnosticsCatchBrokenPartitions) {
  const ModelBundle b = five_filter_bundle();
  PrunePlan plan = make_plan(b, first_index_config());
  EXPECT_TRUE(plan_diagnostics(b, plan).empty());
  PrunePlan broken = plan;
  broken.layers[0].drop.push_back(0);
  const auto d = plan_diagnostics(b, broken);
  ASSERT_FALSE(d.empty());
  EXPECT_NE(d.front().find("shape:"), std::string::npos);
  EXPECT_THROW(slice_bundle(b, broken), ShapeError);
}

TEST(Plan, JsonRoundTrip) {
  const ModelBundle b = attach_random_weights(desk_vgg(), 6);
  PruneConfig c;
  c.default_tau = 0.1;
  c.seed = 99;
  c.skip_layers = {"conv2"};
  c.per_stage_tau = {{"s", 0.25}};
  const PrunePlan plan = make_plan(b, c);
  const std::string text = encode_plan(plan);
  const PrunePlan back = plan_from_json(json::parse(text));
  EXPECT_EQ(back, plan);
  EXPECT_EQ(encode_plan(back), text);
  EXPECT_THROW(plan_from_json(json::parse("{\"config\": {}}")), FormatError);
}

TEST(Plan, JobsDoNotChangeResult) {
  ModelBundle b = attach_random_weights(desk_vgg(), 7);
  plant_clusters(b, "conv3", 5, 7);
  plant_clusters(b, "conv5", 9, 7);
  PruneConfig c;
  c.seed = 5;
  EXPECT_EQ(make_plan(b, c, 1), make_plan(b, c, 4));
}

TEST(Plan, ArchitectureOnlyBundlesCanBeSliced) {
  ModelBundle arch;
  arch.graph = desk_vgg();
  const ModelBundle weighted = attach_random_weights(desk_vgg(), 1);
  const PrunePlan wplan = make_plan(weighted, PruneConfig{});
  PrunePlan plan = wplan;
  plan.edits.clear();
  plan.provenance.bundle_sha256 = bundle_sha256(arch);
  const ModelBundle out = apply_plan(arch, plan);
  for (const auto& lp : plan.layers)
    EXPECT_EQ(out.graph.at(lp.layer_id).out_channels, static_cast<std::int64_t>(lp.keep.size()));
}

TEST(Plan, SoundOnRandomResidualNets) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const ModelBundle b = attach_random_weights(random_toy_net(rng), static_cast<std::uint64_t>(trial));
    ASSERT_TRUE(validate_bundle(b).empty()) << format_diagnostics(validate_bundle(b));
    PruneConfig c;
    c.default_tau = std::uniform_real_distribution<double>(-0.5, 0.8)(rng);
    c.heuristic = trial % 2 ? Heuristic::A : Heuristic::B;
    c.seed = static_cast<std::uint64_t>(trial);
    const PrunePlan plan = make_plan(b, c);
    EXPECT_TRUE(plan_diagnostics(b, plan).empty());
    const ModelBundle out = apply_plan(b, plan);
    EXPECT_TRUE(validate_bundle(out).empty());
    for (const auto& lp : plan.layers) {
      EXPECT_EQ(static_cast<std::int64_t>(lp.keep.size()), lp.n_f);
      EXPECT_EQ(out.graph.at(lp.layer_id).out_channels, lp.n_f);
    }
  }
}

TEST(Plan, RejectsInconsistentClusterings) {
  const ModelBundle b = five_filter_bundle();
  auto clusterings = cluster_layers(b, PruneConfig{});
  auto wrong_layer = clusterings;
  wrong_layer["conv_next"] = wrong_layer.at("conv_l");
  EXPECT_THROW(build_plan(b, PruneConfig{}, wrong_layer), ConfigError);
  auto missing = clusterings;
  missing.clear();
  EXPECT_THROW(build_plan(b, PruneConfig{}, missing), ConfigError);
  auto short_one = clusterings;
  short_one["conv_l"].assignments.pop_back();
  EXPECT_THROW(build_plan(b, PruneConfig{}, short_one), ConfigError);
}
