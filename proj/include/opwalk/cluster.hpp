#pragma once

// Truncated backbone field xi^(T): indicator of an open directed path from a
// site to the horizon slice T, computed by backward dynamic programming one
// slice at a time (word-parallel in d = 1). Also open-path reachability, the
// finite-range surrogate, and cluster-geometry diagnostics.

#include <optional>
#include <ostream>

#include "opwalk/environment.hpp"

namespace opwalk {

class BackboneField {
 public:
  BackboneField() = default;

  BackboneField(EnvironmentWindow env, std::int64_t horizon)
      : env_(std::move(env)), horizon_(horizon) {
    if (horizon_ > env_.time_hi() || horizon_ < env_.time_lo())
      throw GeometryError("backbone horizon outside window; enlarge the time range");
    box_ = env_.bounds();
    t_lo_ = env_.time_lo();
    svol_ = box_.volume();
    swords_ = (svol_ + 63) / 64;
    bits_.assign(static_cast<std::size_t>(swords_ * (horizon_ - t_lo_ + 1)), 0);
    if (env_.dim() == 1 && !env_.is_view())
      build_words_1d();
    else
      build_generic();
  }

  const EnvironmentWindow& env() const { return env_; }
  int dim() const { return env_.dim(); }
  std::int64_t horizon() const { return horizon_; }
  const SpatialBox& bounds() const { return box_; }
  std::int64_t time_lo() const { return t_lo_; }
  BoundaryMode boundary() const { return env_.boundary(); }

  // Raw packed access for propagation inner loops (no range checks).
  std::int64_t slice_base(std::int64_t t) const {
    return (t - t_lo_) * swords_ * 64;
  }
  bool xi_raw(std::int64_t bit_idx) const { return bit(bit_idx); }

  bool xi(Coords x, std::int64_t t) const {
    if (t < t_lo_ || t > horizon_)
      throw GeometryError("xi query outside [window start, horizon]");
    if (env_.boundary() == BoundaryMode::periodic)
      x = box_.wrap(x);
    else if (!box_.contains(x))
      throw GeometryError("xi query outside window; enlarge the window");
    return bit(slice_base(t) + box_.index(x));
  }

  double slice_density(std::int64_t t) const {
    std::int64_t on = 0;
    for_each_site(box_, [&](const Coords& x) { on += xi(x, t); });
    return static_cast<double>(on) / static_cast<double>(svol_);
  }

  // Fraction of sites (t <= up_to) on which two fields disagree.
  static double disagreement_fraction(const BackboneField& a, const BackboneField& b,
                                      std::int64_t up_to) {
    if (!(a.box_ == b.box_) || a.t_lo_ != b.t_lo_)
      throw GeometryError("disagreement_fraction needs identical geometry");
    std::int64_t diff = 0, total = 0;
    for (std::int64_t t = a.t_lo_; t <= up_to; ++t)
      for_each_site(a.box_, [&](const Coords& x) {
        diff += (a.xi(x, t) != b.xi(x, t));
        ++total;
      });
    return static_cast<double>(diff) / static_cast<double>(total);
  }

  bool same_bits(const BackboneField& o) const {
    return box_ == o.box_ && t_lo_ == o.t_lo_ && horizon_ == o.horizon_ &&
           bits_ == o.bits_;
  }

  // Binary dump ("OPB1"): environment header plus horizon, then the packed
  // xi bits in continuous row-major site order.
  void write_binary(std::ostream& os) const {
    os.write("OPB1", 4);
    env_.write_header_tail(os);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
      b[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(horizon_) >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
    unsigned char byte = 0;
    int fill = 0;
    for (std::int64_t t = t_lo_; t <= horizon_; ++t)
      for (std::int64_t i = 0; i < svol_; ++i) {
        if (bit(slice_base(t) + i)) byte |= 1u << fill;
        if (++fill == 8) {
          os.put(static_cast<char>(byte));
          byte = 0;
          fill = 0;
        }
      }
    if (fill) os.put(static_cast<char>(byte));
  }

 private:
  bool bit(std::int64_t idx) const {
    return (bits_[static_cast<std::size_t>(idx >> 6)] >> (idx & 63)) & 1ULL;
  }
  void set_bit(std::int64_t idx) {
    bits_[static_cast<std::size_t>(idx >> 6)] |= 1ULL << (idx & 63);
  }

  void build_words_1d() {
    const bool wrap = env_.boundary() == BoundaryMode::periodic;
    for (std::int64_t t = horizon_; t >= t_lo_; --t) {
      const std::uint64_t* ew = env_.slice_words(env_.storage_time(t));
      std::uint64_t* xw = bits_.data() + (t - t_lo_) * swords_;
      if (t == horizon_) {
        for (std::int64_t w = 0; w < swords_; ++w) xw[w] = ew[w];
        continue;
      }
      const std::uint64_t* nx = xw + swords_;
      for (std::int64_t w = 0; w < swords_; ++w) {
        std::uint64_t ng = nx[w] | (nx[w] << 1) | (nx[w] >> 1);
        if (w > 0) ng |= nx[w - 1] >> 63;
        if (w + 1 < swords_) ng |= nx[w + 1] << 63;
        xw[w] = ew[w] & ng;
      }
      if (wrap && svol_ > 1) {
        const std::int64_t last = svol_ - 1;
        if ((nx[last >> 6] >> (last & 63)) & 1ULL) xw[0] |= ew[0] & 1ULL;
        if (nx[0] & 1ULL) {
          const std::uint64_t m = 1ULL << (last & 63);
          xw[last >> 6] |= ew[last >> 6] & m;
        }
      }
    }
  }

  void build_generic() {
    const auto& offs = neighbour_offsets(env_.dim());
    const bool wrap = env_.boundary() == BoundaryMode::periodic;
    for (std::int64_t t = horizon_; t >= t_lo_; --t) {
      const std::int64_t base = slice_base(t);
      for_each_site(box_, [&](const Coords& x) {
        if (!env_.is_open(x, t)) return;
        bool alive = (t == horizon_);
        if (!alive) {
          for (const Coords& u : offs) {
            Coords y = x;
            for (int i = 0; i < box_.d; ++i)
              y[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
            if (wrap)
              y = box_.wrap(y);
            else if (!box_.contains(y))
              continue;
            if (bit(base + swords_ * 64 + box_.index(y))) {
              alive = true;
              break;
            }
          }
        }
        if (alive) set_bit(base + box_.index(x));
      });
    }
  }

  EnvironmentWindow env_;
  std::int64_t horizon_ = 0;
  SpatialBox box_;
  std::int64_t t_lo_ = 0;
  std::int64_t svol_ = 0;
  std::int64_t swords_ = 0;
  std::vector<std::uint64_t> bits_;
};

inline BackboneField compute_backbone(const EnvironmentWindow& env,
                                      std::int64_t horizon) {
  return BackboneField(env, horizon);
}

// Same construction with an explicit cutoff; kept separate so two-field
// comparisons read naturally at call sites.
inline BackboneField truncated_surrogate(const EnvironmentWindow& env,
                                         std::int64_t cutoff_time) {
  return BackboneField(env, cutoff_time);
}

namespace detail {

// Forward reachable sets through open sites, slice by slice.
class ReachFront {
 public:
  ReachFront(const EnvironmentWindow& env, const Coords& x, std::int64_t m)
      : env_(&env), box_(env.bounds()), t_(m) {
    const Coords x0 =
        env.boundary() == BoundaryMode::periodic ? box_.wrap(x) : x;
    if (!box_.contains(x0))
      throw GeometryError("start outside the window; enlarge the window");
    cur_.assign(static_cast<std::size_t>(box_.volume()), 0);
    if (env.is_open(x0, m)) cur_[static_cast<std::size_t>(box_.index(x0))] = 1;
  }

  void advance() {  // to slice t_+1
    const auto& offs = neighbour_offsets(box_.d);
    const bool wrap = env_->boundary() == BoundaryMode::periodic;
    std::vector<std::uint8_t> nxt(cur_.size(), 0);
    for_each_site(box_, [&](const Coords& x) {
      if (!cur_[static_cast<std::size_t>(box_.index(x))]) return;
      for (const Coords& u : offs) {
        Coords y = x;
        for (int i = 0; i < box_.d; ++i)
          y[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
        if (wrap)
          y = box_.wrap(y);
        else if (!box_.contains(y))
          continue;
        if (env_->is_open(y, t_ + 1))
          nxt[static_cast<std::size_t>(box_.index(y))] = 1;
      }
    });
    cur_.swap(nxt);
    ++t_;
  }

  bool at(const Coords& x) const {
    return cur_[static_cast<std::size_t>(box_.index(x))] != 0;
  }
  const std::vector<std::uint8_t>& front() const { return cur_; }
  std::int64_t time() const { return t_; }

 private:
  const EnvironmentWindow* env_;
  SpatialBox box_;
  std::int64_t t_;
  std::vector<std::uint8_t> cur_;
};

}  // namespace detail

// True iff a directed open path (endpoints included) joins (x,m) to (y,n).
inline bool reaches(const EnvironmentWindow& env, const Coords& x, std::int64_t m,
                    const Coords& y, std::int64_t n) {
  if (m > n) throw GeometryError("reaches requires m <= n");
  detail::ReachFront f(env, x, m);
  while (f.time() < n) f.advance();
  return f.at(env.boundary() == BoundaryMode::periodic ? env.bounds().wrap(y) : y);
}

// Earliest common reachable site of (x,start) and (y,start) that stays
// connected to the window's deep horizon; absent if none by max_T.
inline std::optional<std::pair<Coords, std::int64_t>> intersection_time(
    const EnvironmentWindow& env, const Coords& x, const Coords& y,
    std::int64_t start_time, std::int64_t max_T) {
  if (max_T > env.time_hi())
    throw GeometryError("max_T beyond window; enlarge the time range");
  const BackboneField bb(env, env.time_hi());
  detail::ReachFront fx(env, x, start_time), fy(env, y, start_time);
  const SpatialBox& box = env.bounds();
  for (std::int64_t t = start_time; t <= max_T; ++t) {
    if (t > start_time) {
      fx.advance();
      fy.advance();
    }
    const auto& a = fx.front();
    const auto& b = fy.front();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.size()); ++i) {
      auto ii = static_cast<std::size_t>(i);
      if (a[ii] && b[ii]) {
        Coords z = box.coords(i);
        if (bb.xi(z, t)) return std::make_pair(z, t);
      }
    }
  }
  return std::nullopt;
}

struct SurvivalGap {
  double frequency = 0.0;
  double stderr_ = 0.0;
  std::int64_t n = 0;
  int reps = 0;
};

// Fraction of seeded environments whose origin has an open path to slice n
// but none to the deep horizon n + deep_margin.
inline SurvivalGap survival_gap(double p, int d, std::int64_t n, int reps,
                                std::uint64_t base_seed, std::int64_t deep_margin = 100) {
  if (reps < 1) throw ConfigError("survival_gap needs reps >= 1");
  const std::int64_t deep = n + deep_margin;
  const std::vector<int> extents(static_cast<std::size_t>(d),
                                 static_cast<int>(deep) + 1);
  std::int64_t hits = 0;
  const Coords origin{};
  for (int r = 0; r < reps; ++r) {
    const auto env = EnvironmentWindow::sample(d, extents, 0, deep, p,
                                               rep_seed(base_seed, static_cast<std::uint64_t>(r)),
                                               BoundaryMode::open);
    const BackboneField shallow(env, n);
    if (!shallow.xi(origin, 0)) continue;
    const BackboneField deep_bb(env, deep);
    if (!deep_bb.xi(origin, 0)) ++hits;
  }
  SurvivalGap g;
  g.n = n;
  g.reps = reps;
  g.frequency = static_cast<double>(hits) / static_cast<double>(reps);
  g.stderr_ = std::sqrt(std::max(0.0, g.frequency * (1.0 - g.frequency) /
                                          static_cast<double>(reps)));
  return g;
}

}  // namespace opwalk
