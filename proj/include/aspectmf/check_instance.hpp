#pragma once

#include <cstdint>

#include "aspectmf/data.hpp"
#include "aspectmf/model.hpp"
#include "aspectmf/temporal.hpp"

namespace aspectmf {

// Small random problem with every group populated: 5 users, 8 items, D = 3,
// 3 trust edges, ratings over a 100-day span, all aspects on, non-zero
// regularizers.
struct CheckInstance {
  RatingDataset train;
  TrustNetwork trust;
  HyperParams hyper;
  AspectConfig cfg;
  TemporalContext ctx;
  ModelParams params;
  double step_size = 1e-3;  // full-batch step that descends monotonically here
};

CheckInstance make_check_instance(std::uint64_t seed = 42);

}  // namespace aspectmf
