#include <gtest/gtest.h>

#include "nwprune/nwprune.hpp"
#include "support/oracles.hpp"
#include "support/toy_nets.hpp"

using namespace nwprune;

namespace {

const std::vector<std::int64_t> kPrunedMaps{32, 58, 125, 128, 256, 254, 252, 299, 164, 121, 59, 104, 129};

std::map<std::string, std::int64_t> vgg_widths(const std::vector<std::int64_t>& maps) {
  std::map<std::string, std::int64_t> w;
  for (std::size_t i = 0; i < maps.size(); ++i) w["conv" + std::to_string(i + 1)] = maps[i];
  return w;
}

}  // namespace

TEST(Cost, VggBaselineMatchesClosedForm) {
  const CostReport r = model_cost(vgg16_graph());
  const auto ref = oracle::vgg16({64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512});
  EXPECT_EQ(r.flops, ref.flops);
  EXPECT_EQ(r.params, ref.params);
  EXPECT_EQ(r.flops, 313201664);
  EXPECT_EQ(r.params, 14715584);
  EXPECT_EQ(r.flops_after, r.flops);
}

TEST(Cost, ResNetBaselinesMatchClosedForm) {
  for (int depth : {20, 56, 110}) {
    const CostReport r = model_cost(resnet_graph(depth));
    const auto ref = oracle::resnet(depth);
    EXPECT_EQ(r.flops, ref.flops) << depth;
    EXPECT_EQ(r.params, ref.params) << depth;
  }
  EXPECT_EQ(model_cost(resnet_graph(56)).flops, 125485696);
  EXPECT_EQ(model_cost(resnet_graph(110)).params, 1719856);
}

TEST(Cost, PrunedVggMatchesClosedForm) {
  const ArchGraph g = vgg16_graph();
  const CostReport r = diff_cost(g, resize_graph(g, vgg_widths(kPrunedMaps)));
  const auto ref = oracle::vgg16(kPrunedMaps);
  EXPECT_EQ(r.flops_after, ref.flops);
  EXPECT_EQ(r.params_after, ref.params);
  EXPECT_NEAR(r.flop_reduction_pct(), 40.46, 0.01);
  EXPECT_NEAR(r.param_reduction_pct(), 78.10, 0.01);
}

TEST(Cost, PerLayerReductionCountsInputAndOutputPruning) {
  const ArchGraph g = vgg16_graph();
  const CostReport r = diff_cost(g, resize_graph(g, vgg_widths(kPrunedMaps)));
  // conv2 loses output maps 64 -> 58 and input maps 64 -> 32
  const LayerCost* c2 = r.find("conv2");
  ASSERT_NE(c2, nullptr);
  EXPECT_EQ(c2->flops_after, 9 * 32 * 58 * 1024);
  EXPECT_NEAR(c2->flop_reduction_pct(), 54.7, 0.05);
  EXPECT_NEAR(r.find("conv1")->flop_reduction_pct(), 50.0, 1e-12);
  EXPECT_EQ(r.find("conv5")->maps_after, 256);
  const LayerCost* fc = r.find("fc");
  ASSERT_NE(fc, nullptr);
  EXPECT_EQ(fc->flops_after, 129 * 10);
  EXPECT_EQ(r.layers.size(), 14u);
}

TEST(Cost, ScientificRendering) {
  const CostReport r = model_cost(vgg16_graph());
  EXPECT_EQ(sci2(r.find("conv1")->flops), "1.8E+06");
  EXPECT_EQ(sci2(r.find("conv1")->params), "1.7E+03");
  EXPECT_EQ(sci2(r.find("conv2")->flops), "3.8E+07");
  EXPECT_EQ(sci2(r.find("conv11")->flops), "9.4E+06");
  EXPECT_EQ(sci2(r.find("conv13")->params), "2.4E+06");
  const std::string text = format_cost_text(r);
  EXPECT_NE(text.find("32x32"), std::string::npos);
  EXPECT_NE(text.find("3.132E+08"), std::string::npos);
}

TEST(Cost, FullParameterMode) {
  const ArchGraph g = nwprune::testing::desk_vgg();
  const CostReport weights = model_cost(g);
  const CostReport full = model_cost(g, ParamMode::full);
  // six batchnorms with scale and shift, plus the classifier bias
  const std::int64_t bn = 2 * (8 + 8 + 16 + 16 + 32 + 32);
  EXPECT_EQ(full.params, weights.params + bn + 10);
  EXPECT_EQ(full.flops, weights.flops);
}

TEST(Cost, PlanOverload) {
  ModelBundle b = attach_random_weights(nwprune::testing::desk_vgg(), 3);
  plant_clusters(b, "conv4", 4, 3);
  const PrunePlan plan = make_plan(b, PruneConfig{});
  std::map<std::string, std::int64_t> widths;
  for (const auto& lp : plan.layers) widths[lp.layer_id] = static_cast<std::int64_t>(lp.keep.size());
  const CostReport a = diff_cost(b.graph, plan);
  const CostReport c = diff_cost(b.graph, resize_graph(b.graph, widths));
  EXPECT_EQ(a.flops_after, c.flops_after);
  EXPECT_EQ(a.find("conv4")->maps_after, 4);
  EXPECT_EQ(a.flops_after, model_cost(apply_plan(b, plan).graph).flops);
}

TEST(Cost, RejectsDifferentTopologies) {
  EXPECT_THROW(diff_cost(vgg16_graph(), resnet_graph(20)), ShapeError);
  ArchGraph broken = vgg16_graph();
  broken.find("conv2")->in_channels = 3;
  EXPECT_THROW(model_cost(broken), ValidationError);
}

TEST(Cost, CsvAndJson) {
  const ArchGraph g = vgg16_graph();
  const CostReport r = diff_cost(g, resize_graph(g, vgg_widths(kPrunedMaps)));
  const std::string csv = format_cost_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "layer_id,v,h,maps_before,maps_after,flops_before,flops_after,params_before,params_after,flop_pct");
  EXPECT_NE(csv.find("conv1,32,32,64,32,1769472,884736,1728,864,50.0\n"), std::string::npos);
  EXPECT_NE(csv.find("total,,,,,313201664,"), std::string::npos);
  const json j = to_json(r);
  EXPECT_EQ(j.at("total").at("flops_before").get<std::int64_t>(), 313201664);
  EXPECT_EQ(j.at("layers").size(), 14u);
}

TEST(Cost, LinearAndParameterFreeLayers) {
  LayerSpec fc;
  fc.kind = LayerKind::linear;
  EXPECT_EQ(layer_flops(fc, 512, 10), 5120);
  fc.bias = true;
  EXPECT_EQ(layer_params(fc, 512, 10), 5120);
  EXPECT_EQ(layer_params(fc, 512, 10, ParamMode::full), 5130);
  LayerSpec relu;
  relu.kind = LayerKind::relu;
  EXPECT_EQ(layer_flops(relu, 64, 64), 0);
  EXPECT_EQ(layer_params(relu, 64, 64, ParamMode::full), 0);
}
