// nwprune-zoo: write architecture-only or synthetic weighted bundles for the
// VGG-16 / ResNet CIFAR-10 networks.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "nwprune/nwprune.hpp"

using namespace nwprune;

namespace {

// Retained maps per VGG-16 conv layer in the reference pruning result at tau = 0.54.
constexpr std::int64_t kVggPrunedMaps[] = {32, 58, 125, 128, 256, 254, 252, 299, 164, 121, 59, 104, 129};

ArchGraph build(const std::string& arch, std::map<std::string, std::string>& meta) {
  if (arch == "vgg16") {
    meta["model"] = "vgg16";
    meta["head"] = "single linear 512->10 after 1x1 average pool";
    return vgg16_graph();
  }
  if (arch.rfind("resnet", 0) == 0) {
    const int depth = std::stoi(arch.substr(6));
    meta["model"] = arch;
    meta["shortcut"] = "identity; stride-2 average pool + zero channel padding at stage transitions";
    return resnet_graph(depth);
  }
  throw ConfigError("unknown architecture '" + arch + "' (vgg16, resnet<6n+2>)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate benchmark-network bundles"};
  std::string arch;
  std::filesystem::path out;
  std::string weights = "none";
  std::uint64_t seed = 0;
  std::vector<std::string> plant;
  bool plant_table = false;

  app.add_option("arch", arch, "vgg16 | resnet56 | resnet110 | resnet<6n+2>")->required();
  app.add_option("-o,--out", out, "Output bundle")->required();
  app.add_option("--weights", weights, "none (architecture-only), random, or planted")
      ->check(CLI::IsMember({"none", "random", "planted"}))
      ->capture_default_str();
  app.add_option("--seed", seed, "Weight seed")->capture_default_str();
  app.add_option("--plant", plant, "layer=groups: plant that many tight filter groups (repeatable)");
  app.add_flag("--vgg-pruned-maps", plant_table,
               "vgg16 only: plant groups matching the reference pruned map counts (32,58,...,129)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    ModelBundle b;
    std::map<std::string, std::string> meta;
    ArchGraph g = build(arch, meta);
    if (weights == "none") {
      b.graph = std::move(g);
    } else {
      b = attach_random_weights(std::move(g), seed);
      meta["seed"] = std::to_string(seed);
    }
    meta["source"] = "nwprune-zoo";
    meta["weights"] = weights;
    b.metadata = meta;

    if (weights == "planted") {
      std::map<std::string, std::int64_t> groups;
      if (plant_table) {
        if (arch != "vgg16") throw ConfigError("--vgg-pruned-maps requires vgg16");
        for (int i = 0; i < 13; ++i) groups["conv" + std::to_string(i + 1)] = kVggPrunedMaps[i];
      }
      for (const auto& p : plant) {
        const auto eq = p.find('=');
        if (eq == std::string::npos) throw ConfigError("--plant expects layer=groups");
        groups[p.substr(0, eq)] = std::stoll(p.substr(eq + 1));
      }
      for (const auto& [layer, n] : groups) plant_clusters(b, layer, n, seed);
    } else if (!plant.empty() || plant_table) {
      throw ConfigError("--plant options need --weights planted");
    }
    write_bundle(b, out);
    std::cout << fmt::format("wrote {} ({} layers, {} tensors)\n", out.string(), b.graph.layers.size(),
                             b.tensors.size());
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
