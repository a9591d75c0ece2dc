#pragma once

// Shared primitives: coordinate handling, packed site keys, counter-based
// hashing, small numeric helpers, error types and a deterministic chunked
// parallel-for used by the Monte Carlo drivers.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace opwalk {

inline constexpr int kMaxDim = 4;
inline constexpr int kMaxNeighbours = 81;  // 3^kMaxDim

using Coords = std::array<int, kMaxDim>;  // axes >= d are zero

inline Coords make_coords(std::initializer_list<int> xs) {
  Coords c{};
  int i = 0;
  for (int v : xs) c[static_cast<std::size_t>(i++)] = v;
  return c;
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateMeasureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hashing / RNG

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based per-site hash: depends only on (seed, absolute coordinates).
inline std::uint64_t site_hash(std::uint64_t seed, const Coords& x, int d,
                               std::int64_t t) {
  std::uint64_t h = mix64(seed ^ 0x8f1bbcdc2f1b3141ULL);
  for (int i = 0; i < d; ++i)
    h = mix64(h ^ (static_cast<std::uint64_t>(static_cast<std::int64_t>(x[static_cast<std::size_t>(i)])) +
                   0x165667b19e3779f9ULL * static_cast<std::uint64_t>(i + 1)));
  return mix64(h ^ static_cast<std::uint64_t>(t) ^ 0xd6e8feb86659fd93ULL);
}

inline double hash_to_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Stream seed for Monte Carlo repetition r of a base seed.
inline std::uint64_t rep_seed(std::uint64_t base, std::uint64_t r) {
  return mix64(base + 0x9e3779b97f4a7c15ULL * (r + 1));
}

// Small sequential generator for path sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double next_unit() { return hash_to_unit(next_u64()); }
  // uniform in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(next_unit() * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Spatial boxes

struct SpatialBox {
  int d = 1;
  Coords lo{};
  Coords hi{};

  static SpatialBox centered(int d, const std::vector<int>& extents) {
    if (d < 1 || d > kMaxDim) throw ConfigError("dimension must be in [1,4]");
    if (static_cast<int>(extents.size()) != d)
      throw ConfigError("extents size must equal dimension");
    SpatialBox b;
    b.d = d;
    for (int i = 0; i < d; ++i) {
      if (extents[static_cast<std::size_t>(i)] < 0)
        throw ConfigError("spatial extent must be positive");
      b.lo[static_cast<std::size_t>(i)] = -extents[static_cast<std::size_t>(i)];
      b.hi[static_cast<std::size_t>(i)] = extents[static_cast<std::size_t>(i)];
    }
    return b;
  }

  std::int64_t volume() const {
    std::int64_t v = 1;
    for (int i = 0; i < d; ++i)
      v *= static_cast<std::int64_t>(hi[static_cast<std::size_t>(i)]) -
               lo[static_cast<std::size_t>(i)] + 1;
    return v;
  }

  int side(int axis) const {
    return hi[static_cast<std::size_t>(axis)] - lo[static_cast<std::size_t>(axis)] + 1;
  }

  bool contains(const Coords& x) const {
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      if (x[ii] < lo[ii] || x[ii] > hi[ii]) return false;
    }
    return true;
  }

  // Row-major (axis 0 slowest, axis d-1 fastest).
  std::int64_t index(const Coords& x) const {
    std::int64_t idx = 0;
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      idx = idx * side(i) + (x[ii] - lo[ii]);
    }
    return idx;
  }

  Coords coords(std::int64_t idx) const {
    Coords x{};
    for (int i = d - 1; i >= 0; --i) {
      auto ii = static_cast<std::size_t>(i);
      int s = side(i);
      x[ii] = lo[ii] + static_cast<int>(idx % s);
      idx /= s;
    }
    return x;
  }

  SpatialBox expanded(int r) const {
    SpatialBox b = *this;
    for (int i = 0; i < d; ++i) {
      b.lo[static_cast<std::size_t>(i)] -= r;
      b.hi[static_cast<std::size_t>(i)] += r;
    }
    return b;
  }

  SpatialBox shrunk(int r) const {
    SpatialBox b = expanded(-r);
    for (int i = 0; i < d; ++i)
      if (b.lo[static_cast<std::size_t>(i)] > b.hi[static_cast<std::size_t>(i)])
        throw GeometryError("box shrinks to empty; enlarge the window");
    return b;
  }

  SpatialBox shifted(const Coords& y) const {
    SpatialBox b = *this;
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      b.lo[ii] += y[ii];
      b.hi[ii] += y[ii];
    }
    return b;
  }

  SpatialBox intersect(const SpatialBox& o) const {
    SpatialBox b = *this;
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      b.lo[ii] = std::max(b.lo[ii], o.lo[ii]);
      b.hi[ii] = std::min(b.hi[ii], o.hi[ii]);
    }
    return b;
  }

  bool covers(const SpatialBox& o) const {
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      if (o.lo[ii] < lo[ii] || o.hi[ii] > hi[ii]) return false;
    }
    return true;
  }

  // Wrap a coordinate vector onto this box (torus semantics).
  Coords wrap(Coords x) const {
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      int L = side(i);
      int v = (x[ii] - lo[ii]) % L;
      if (v < 0) v += L;
      x[ii] = lo[ii] + v;
    }
    return x;
  }

  bool operator==(const SpatialBox& o) const {
    if (d != o.d) return false;
    for (int i = 0; i < d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      if (lo[ii] != o.lo[ii] || hi[ii] != o.hi[ii]) return false;
    }
    return true;
  }
};

// Iterate every coordinate of a box in row-major order.
template <typename Fn>
inline void for_each_site(const SpatialBox& box, Fn&& fn) {
  Coords x = box.lo;
  const std::int64_t n = box.volume();
  for (std::int64_t i = 0; i < n; ++i) {
    fn(x);
    for (int axis = box.d - 1; axis >= 0; --axis) {
      auto a = static_cast<std::size_t>(axis);
      if (x[a] < box.hi[a]) {
        ++x[a];
        break;
      }
      x[a] = box.lo[a];
    }
  }
}

// ---------------------------------------------------------------------------
// Packed site keys (order: lexicographic by coordinates)

using SiteKey = std::uint64_t;
inline constexpr int kKeyRange = 32000;  // |coordinate| bound for packing

inline SiteKey pack_site(const Coords& x, int d) {
  SiteKey k = 0;
  for (int i = 0; i < d; ++i) {
    int v = x[static_cast<std::size_t>(i)];
    if (v < -kKeyRange || v > kKeyRange)
      throw GeometryError("coordinate exceeds packable range");
    k = (k << 16) | static_cast<std::uint64_t>(static_cast<std::uint16_t>(v + 32768));
  }
  return k;
}

inline Coords unpack_site(SiteKey k, int d) {
  Coords x{};
  for (int i = d - 1; i >= 0; --i) {
    x[static_cast<std::size_t>(i)] = static_cast<int>(k & 0xffffULL) - 32768;
    k >>= 16;
  }
  return x;
}

// 3^d neighbour offsets, lexicographic; offset index sum (u_i+1)*3^(d-1-i).
inline const std::vector<Coords>& neighbour_offsets(int d) {
  static std::array<std::vector<Coords>, kMaxDim + 1> cache;
  auto& v = cache[static_cast<std::size_t>(d)];
  if (v.empty()) {
    int n = 1;
    for (int i = 0; i < d; ++i) n *= 3;
    v.reserve(static_cast<std::size_t>(n));
    for (int code = 0; code < n; ++code) {
      Coords u{};
      int c = code;
      for (int i = d - 1; i >= 0; --i) {
        u[static_cast<std::size_t>(i)] = c % 3 - 1;
        c /= 3;
      }
      v.push_back(u);
    }
  }
  return v;
}

inline int pow3(int d) {
  int n = 1;
  for (int i = 0; i < d; ++i) n *= 3;
  return n;
}

// ---------------------------------------------------------------------------
// Numeric helpers

struct KahanSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double v) {
    double y = v - c;
    double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LinearFit linear_fit(const std::vector<double>& x,
                            const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw ConfigError("linear_fit needs >= 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of empty set");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr m;
  if (v.empty()) return m;
  double s = 0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double q = 0;
    for (double x : v) q += (x - m.mean) * (x - m.mean);
    m.stderr_ = std::sqrt(q / (static_cast<double>(v.size()) *
                               static_cast<double>(v.size() - 1)));
  }
  return m;
}

inline std::string format_g(double v, int digits = 12) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

inline std::string format_exact(double v) { return format_g(v, 17); }

// ---------------------------------------------------------------------------
// Deterministic chunked parallelism. Work is split into fixed-size chunks;
// the caller merges per-chunk results in chunk order, so the outcome does not
// depend on the number of worker threads.

inline void parallel_chunks(std::int64_t items, std::int64_t chunk_size,
                            int threads,
                            const std::function<void(std::int64_t chunk_index,
                                                     std::int64_t begin,
                                                     std::int64_t end)>& fn) {
  if (items <= 0) return;
  const std::int64_t n_chunks = (items + chunk_size - 1) / chunk_size;
  if (threads <= 1 || n_chunks == 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c)
      fn(c, c * chunk_size, std::min(items, (c + 1) * chunk_size));
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::int64_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::int64_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      fn(c, c * chunk_size, std::min(items, (c + 1) * chunk_size));
    }
  };
  const int nt = static_cast<int>(std::min<std::int64_t>(threads, n_chunks));
  pool.reserve(static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace opwalk
