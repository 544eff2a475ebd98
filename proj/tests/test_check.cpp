#include <random>

#include <gtest/gtest.h>

#include "nwprune/nwprune.hpp"
#include "support/toy_nets.hpp"

using namespace nwprune;
using namespace nwprune::testing;

namespace {

ModelBundle planted_desk_vgg(std::uint64_t seed) {
  ModelBundle b = attach_random_weights(desk_vgg(), seed);
  plant_clusters(b, "conv2", 3, seed);
  plant_clusters(b, "conv4", 6, seed);
  plant_clusters(b, "conv6", 10, seed);
  return b;
}

const CheckLine& line(const CheckResult& r, const std::string& name) {
  for (const auto& l : r.lines)
    if (l.name == name) return l;
  throw std::runtime_error("no check line " + name);
}

}  // namespace

TEST(Check, ZeroDownstreamPruningIsANoOp) {
  const ModelBundle b = planted_desk_vgg(1);
  const PrunePlan plan = make_plan(b, PruneConfig{});
  const CheckResult r = run_checks(b, apply_plan(b, plan), plan);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.lines.size(), 5u);
  EXPECT_TRUE(line(r, "equivalence").passed) << line(r, "equivalence").message;
}

TEST(Check, ZeroDownstreamZeroesTheRightSlices) {
  const ModelBundle b = planted_desk_vgg(2);
  const PrunePlan plan = make_plan(b, PruneConfig{});
  const ModelBundle z = zero_downstream(b, plan);
  const LayerPlan& lp = *plan.find("conv6");
  ASSERT_FALSE(lp.drop.empty());
  for (auto d : lp.drop) {
    EXPECT_EQ(z.find_tensor("bn6.scale")->data[d], 0.0f);
    for (std::int64_t o = 0; o < 10; ++o)
      for (std::int64_t s = 0; s < 4; ++s) EXPECT_EQ(z.find_tensor("fc.weight")->data[o * 128 + d * 4 + s], 0.0f);
  }
  for (auto k : lp.keep) EXPECT_NE(z.find_tensor("bn6.scale")->data[k], 0.0f);
  // The pruned conv's own kernel is untouched.
  EXPECT_TRUE(bit_equal(*z.find_tensor("conv6.weight"), *b.find_tensor("conv6.weight")));
}

TEST(Check, WithoutZeroingOutputsDiffer) {
  const ModelBundle b = planted_desk_vgg(3);
  const PrunePlan plan = make_plan(b, PruneConfig{});
  const ActivationTensor x = random_input(b.graph, 0);
  EXPECT_GT(max_abs_diff(forward(b, x), forward(apply_plan(b, plan), x)), 1e-4);
}

TEST(Check, DetectsHashMismatch) {
  const ModelBundle b = planted_desk_vgg(4);
  PrunePlan plan = make_plan(b, PruneConfig{});
  const ModelBundle after = apply_plan(b, plan);
  plan.provenance.bundle_sha256 = std::string(64, '0');
  const CheckResult r = run_checks(b, after, plan);
  EXPECT_FALSE(r.passed());
  EXPECT_EQ(r.lines.size(), 1u);
  EXPECT_NE(r.lines[0].message.find("hash"), std::string::npos);
}

TEST(Check, DetectsWrongPrunedBundle) {
  const ModelBundle b = planted_desk_vgg(5);
  const PrunePlan plan = make_plan(b, PruneConfig{});
  ModelBundle after = apply_plan(b, plan);
  after.find_tensor("conv3.weight")->data[0] += 1.0f;
  const CheckResult r = run_checks(b, after, plan);
  EXPECT_FALSE(r.passed());
  EXPECT_FALSE(line(r, "apply").passed);

  const ModelBundle unpruned = b;
  const CheckResult s = run_checks(b, unpruned, plan);
  EXPECT_FALSE(line(s, "shape").passed);
  EXPECT_NE(line(s, "shape").message.find("shape:"), std::string::npos);
}

TEST(Check, ArchitectureOnlySkipsEquivalence) {
  ModelBundle arch;
  arch.graph = desk_vgg();
  PrunePlan plan;
  plan.provenance.bundle_sha256 = bundle_sha256(arch);
  for (const auto& l : arch.graph.layers)
    if (l.kind == LayerKind::conv2d) plan.layers.push_back({l.id, complement({}, l.out_channels), {}, l.out_channels, l.out_channels});
  const CheckResult r = run_checks(arch, apply_plan(arch, plan), plan);
  EXPECT_TRUE(r.passed());
  EXPECT_NE(line(r, "equivalence").message.find("skipped"), std::string::npos);
}

TEST(Check, NoOpOnRandomResidualNets) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 10; ++i) {
    const ModelBundle b = attach_random_weights(random_toy_net(rng), static_cast<std::uint64_t>(i));
    PruneConfig c;
    c.default_tau = 0.0;
    c.seed = static_cast<std::uint64_t>(i);
    const PrunePlan plan = make_plan(b, c);
    const CheckResult r = run_checks(b, apply_plan(b, plan), plan, {5, 1e-5, 0});
    EXPECT_TRUE(r.passed()) << "net " << i << ": " << r.lines.back().message;
  }
}
