#pragma once

#include "nwprune/bundle.hpp"
#include "nwprune/check.hpp"
#include "nwprune/cluster.hpp"
#include "nwprune/cost.hpp"
#include "nwprune/error.hpp"
#include "nwprune/featurize.hpp"
#include "nwprune/graph.hpp"
#include "nwprune/io.hpp"
#include "nwprune/parallel.hpp"
#include "nwprune/plan.hpp"
#include "nwprune/prng.hpp"
#include "nwprune/refexec.hpp"
#include "nwprune/zoo.hpp"
