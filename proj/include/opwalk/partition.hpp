#pragma once

// Partition of Z^d into aligned boxes of a fixed side length.

#include "opwalk/common.hpp"

namespace opwalk {

struct BoxPartition {
  int d = 1;
  int side = 1;
  Coords offset{};

  BoxPartition() = default;
  BoxPartition(int d_, int side_, Coords off = {}) : d(d_), side(side_), offset(off) {
    if (side < 1) throw ConfigError("partition side must be >= 1");
  }

  Coords box_id(const Coords& x) const {
    Coords id{};
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      int v = x[ii] - offset[ii];
      id[ii] = (v >= 0) ? v / side : -((-v - 1) / side + 1);
    }
    return id;
  }

  SiteKey box_key(const Coords& x) const { return pack_site(box_id(x), d); }

  SpatialBox box_bounds(const Coords& id) const {
    SpatialBox b;
    b.d = d;
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      b.lo[ii] = offset[ii] + id[ii] * side;
      b.hi[ii] = b.lo[ii] + side - 1;
    }
    return b;
  }
};

}  // namespace opwalk
