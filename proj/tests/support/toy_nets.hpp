#pragma once

// Small networks and random instances shared by the test suites.

#include <cstdint>
#include <random>
#include <string>

#include "nwprune/nwprune.hpp"

namespace nwprune::testing {

/// conv(3->4) - bn - relu - conv(4->2), 5x5 input.
inline ArchGraph toy_chain() {
  GraphBuilder b(3, {5, 5});
  b.conv("conv1", 4, 3).bn("bn1").relu("relu1").conv("conv2", 2, 3);
  return b.finish();
}

/// Two-layer net with five filters in the first conv, as in the pruning schema.
inline ArchGraph five_filter_net() {
  GraphBuilder b(2, {4, 4});
  b.conv("conv_l", 5, 3).bn("bn_l").relu("relu_l").conv("conv_next", 3, 3);
  return b.finish();
}

/// VGG-style net small enough for the reference executor: widths 8,8 | 16,16 | 32,32
/// with 2x2 pools, ending in a 32x2x2 flatten and a linear classifier.
inline ArchGraph desk_vgg() {
  GraphBuilder b(3, {16, 16});
  const std::int64_t widths[] = {8, 8, 16, 16, 32, 32};
  for (int i = 0; i < 6; ++i) {
    const std::string n = std::to_string(i + 1);
    b.conv("conv" + n, widths[i], 3).bn("bn" + n).relu("relu" + n);
    if (i % 2 == 1) b.maxpool("pool" + n, 2, 2);
  }
  b.flatten("flatten").linear("fc", 10);
  return b.finish();
}

/// Random small architecture mixing plain conv layers, identity residual
/// blocks, width-doubling residual blocks, pools and a flatten + linear head.
inline ArchGraph random_toy_net(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  GraphBuilder b(pick(1, 3), {pick(6, 9), pick(6, 9)});
  int id = 0;
  auto name = [&](const std::string& s) { return s + std::to_string(id); };

  b.conv(name("stem"), pick(2, 6), 3, 1, 1).bn(name("stem_bn")).relu(name("stem_relu"));
  const int segments = pick(2, 5);
  for (int s = 0; s < segments; ++s, ++id) {
    const std::string stage = "stage" + std::to_string(pick(1, 3));
    switch (pick(0, 3)) {
      case 0:  // plain
        b.conv(name("plain"), pick(2, 7), pick(1, 3) == 2 ? 1 : 3, 1, -1, pick(0, 1) == 1, stage)
            .bn(name("plain_bn"))
            .relu(name("plain_relu"));
        break;
      case 1: {  // identity residual block
        const std::string in = b.cursor();
        const std::int64_t width = b.channels();
        b.conv(name("res_a"), pick(2, 6), 3, 1, 1, false, stage).bn(name("res_bn_a")).relu(name("res_relu_a"));
        b.conv(name("res_b"), width, 3, 1, 1, false, stage).bn(name("res_bn_b"));
        b.add(name("res_add"), in).relu(name("res_relu"));
        break;
      }
      case 2: {  // width-doubling block, only while the plane is large enough
        if (b.spatial().h < 4 || b.spatial().w < 4) break;
        const std::string in = b.cursor();
        const std::int64_t width = b.channels();
        b.conv(name("down_a"), pick(2, 6), 3, 2, 1, false, stage).bn(name("down_bn_a")).relu(name("down_relu_a"));
        b.conv(name("down_b"), 2 * width, 3, 1, 1, false, stage).bn(name("down_bn_b"));
        const std::string residual = b.cursor();
        b.set_cursor(in);
        b.avgpool(name("down_pool"), 1, 2).zeropad(name("down_pad"), width);
        const std::string shortcut = b.cursor();
        b.set_cursor(residual);
        b.add(name("down_add"), shortcut).relu(name("down_relu"));
        break;
      }
      default:
        if (b.spatial().h >= 4 && b.spatial().w >= 4) b.maxpool(name("pool"), 2, 2);
        break;
    }
  }
  if (pick(0, 1) == 1 && b.spatial().h >= 2 && b.spatial().w >= 2) b.avgpool("head_pool", 2, 2);
  b.flatten("flatten").linear("fc", pick(2, 5), pick(0, 1) == 1);
  return b.finish();
}

/// p x n filter matrix; `groups` > 0 plants loose groups around shared
/// directions so that merges happen across the whole threshold range.
inline FilterMatrix random_filter_matrix(std::mt19937_64& rng, std::int64_t rows, std::int64_t cols,
                                         std::int64_t groups = 0, double spread = 0.5) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  FilterMatrix fm;
  fm.layer_id = "random";
  fm.tensor_name = "random.weight";
  fm.in_channels = rows;
  fm.kernel = 1;
  fm.rows = rows;
  fm.cols = cols;
  fm.data.resize(static_cast<std::size_t>(rows * cols));
  std::vector<std::vector<float>> centers(static_cast<std::size_t>(groups), std::vector<float>(rows));
  for (auto& c : centers)
    for (auto& v : c) v = normal(rng);
  std::uniform_int_distribution<std::int64_t> which(0, groups > 0 ? groups - 1 : 0);
  for (std::int64_t j = 0; j < cols; ++j) {
    const auto g = which(rng);
    for (std::int64_t i = 0; i < rows; ++i) {
      float v = normal(rng);
      if (groups > 0) v = centers[g][i] + static_cast<float>(spread) * v;
      fm.data[j * rows + i] = v;
    }
  }
  return fm;
}

}  // namespace nwprune::testing
