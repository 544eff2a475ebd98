// Clusters the filters of one conv layer and prints n_f over a threshold grid.
//
//   cluster_layer bundle.nwb conv9

#include <iostream>

#include "nwprune/nwprune.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: cluster_layer <bundle.nwb> <conv layer id>\n";
    return 2;
  }
  try {
    const nwprune::ModelBundle bundle = nwprune::read_bundle(argv[1]);
    const nwprune::FilterMatrix fm = nwprune::kernel_matrix(bundle, argv[2]);
    std::cout << fm.layer_id << ": " << fm.cols << " filters of dimension " << fm.rows << "\n";

    const auto taus = nwprune::tau_grid(0.1, 1.0, 0.1);
    for (const auto& p : nwprune::sweep(fm, taus)) std::cout << "  tau " << p.tau << "  n_f " << p.n_f << "\n";

    const nwprune::Clustering c = nwprune::agglomerate(fm, 0.54);
    std::cout << "at tau 0.54: " << c.n_f << " clusters after " << c.merge_log.size() << " merges\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
