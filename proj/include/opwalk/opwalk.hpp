#pragma once

// Umbrella header for the oriented-percolation walk laboratory.

#include "opwalk/cache.hpp"
#include "opwalk/cluster.hpp"
#include "opwalk/common.hpp"
#include "opwalk/config.hpp"
#include "opwalk/environment.hpp"
#include "opwalk/experiments.hpp"
#include "opwalk/measures.hpp"
#include "opwalk/partition.hpp"
#include "opwalk/prefactor.hpp"
#include "opwalk/report.hpp"
#include "opwalk/runner.hpp"
#include "opwalk/walk.hpp"
