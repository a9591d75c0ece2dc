#pragma once

// Quenched transition kernel on a backbone field, exact distribution
// propagation, path sampling, annealed-law estimation (exact enumeration of
// the dependency cone, or seeded Monte Carlo with shared multi-time passes)
// and the hitting-time diagnostic.

#include <map>

#include "opwalk/cluster.hpp"

namespace opwalk {

enum class SliceLabel { quenched, annealed, hybrid };

inline const char* to_string(SliceLabel l) {
  switch (l) {
    case SliceLabel::quenched: return "quenched";
    case SliceLabel::annealed: return "annealed";
    default: return "hybrid";
  }
}

struct Provenance {
  bool exact = true;
  std::uint64_t base_seed = 0;
  int reps = 0;
  std::string note;
};

struct DistributionSlice {
  int d = 1;
  std::int64_t time = 0;
  SliceLabel label = SliceLabel::quenched;
  Provenance prov;
  std::map<SiteKey, double> mass;
  std::map<SiteKey, double> var;  // per-site variance of the mean (MC only)

  double total() const {
    KahanSum s;
    for (const auto& [k, v] : mass) s.add(v);
    return s.value();
  }
  double at(SiteKey k) const {
    auto it = mass.find(k);
    return it == mass.end() ? 0.0 : it->second;
  }
  double at(const Coords& x) const { return at(pack_site(x, d)); }
  double var_at(SiteKey k) const {
    auto it = var.find(k);
    return it == var.end() ? 0.0 : it->second;
  }
  double mass_drift() const { return std::abs(1.0 - total()); }

  // Largest sup-norm distance of the support from a reference site.
  int support_radius(const Coords& ref) const {
    int r = 0;
    for (const auto& [k, v] : mass) {
      (void)v;
      Coords x = unpack_site(k, d);
      for (int i = 0; i < d; ++i)
        r = std::max(r, std::abs(x[static_cast<std::size_t>(i)] -
                                 ref[static_cast<std::size_t>(i)]));
    }
    return r;
  }
};

struct KernelRow {
  Coords origin{};
  std::int64_t time = 0;
  int d = 1;
  bool on_cluster = false;
  std::array<double, kMaxNeighbours> w{};  // by neighbour-offset index

  double sum() const {
    double s = 0;
    for (int i = 0; i < pow3(d); ++i) s += w[static_cast<std::size_t>(i)];
    return s;
  }
};

// Uniform on the backbone neighbours when the origin carries the xi bit,
// uniform on the full 3^d neighbourhood otherwise.
inline KernelRow step_distribution(const BackboneField& f, const Coords& x,
                                   std::int64_t n) {
  if (n + 1 > f.horizon() || n < f.time_lo())
    throw GeometryError("kernel row needs n+1 within the field horizon");
  KernelRow row;
  row.origin = x;
  row.time = n;
  row.d = f.dim();
  const auto& offs = neighbour_offsets(row.d);
  const int noff = pow3(row.d);
  row.on_cluster = f.xi(x, n);
  if (!row.on_cluster) {
    const double u = 1.0 / noff;
    for (int o = 0; o < noff; ++o) row.w[static_cast<std::size_t>(o)] = u;
    return row;
  }
  int open[kMaxNeighbours];
  int k = 0;
  for (int o = 0; o < noff; ++o) {
    Coords y = x;
    for (int i = 0; i < row.d; ++i)
      y[static_cast<std::size_t>(i)] += offs[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)];
    bool bit = false;
    if (f.boundary() == BoundaryMode::periodic) {
      bit = f.xi(y, n + 1);
    } else if (f.bounds().contains(y)) {
      bit = f.xi(y, n + 1);
    }
    if (bit) open[k++] = o;
  }
  if (k == 0)
    throw GeometryError("backbone site without successor inside the window; "
                        "enlarge the window");
  const double u = 1.0 / k;
  for (int i = 0; i < k; ++i) row.w[static_cast<std::size_t>(open[i])] = u;
  return row;
}

// ---------------------------------------------------------------------------
// Dense forward propagation through the quenched kernel.

enum class EdgePolicy { strict, clip, wrap };

class DensePropagator {
 public:
  DensePropagator(const BackboneField& field, SpatialBox box, std::int64_t t0,
                  EdgePolicy policy)
      : field_(&field), box_(box), t_(t0), policy_(policy) {
    if (field.boundary() == BoundaryMode::periodic) {
      policy_ = EdgePolicy::wrap;
      if (!(box_ == field.bounds()))
        throw GeometryError("periodic propagation must use the full torus slice");
    } else if (policy_ == EdgePolicy::strict) {
      if (!(box_ == field.bounds()))
        throw GeometryError("strict propagation must use the full window slice");
    } else if (policy_ == EdgePolicy::wrap) {
      throw GeometryError("wrap policy requires a periodic field");
    } else {
      if (!field.bounds().covers(box_.expanded(1)))
        throw GeometryError("clip propagation needs a one-site margin inside the window");
    }
    cur_.assign(static_cast<std::size_t>(box_.volume()), 0.0);
    nxt_.assign(cur_.size(), 0.0);
    active_ = box_;
    empty_ = true;
  }

  std::int64_t time() const { return t_; }
  const SpatialBox& box() const { return box_; }
  const std::vector<double>& values() const { return cur_; }

  void set_mass(const Coords& x, double m) {
    Coords y = policy_ == EdgePolicy::wrap ? box_.wrap(x) : x;
    if (!box_.contains(y)) throw GeometryError("initial mass outside working box");
    cur_[static_cast<std::size_t>(box_.index(y))] = m;
    note_active(y);
  }

  void fill_ones() {
    std::fill(cur_.begin(), cur_.end(), 1.0);
    active_ = box_;
    empty_ = false;
  }

  void init_from(const std::map<SiteKey, double>& mass, int d) {
    for (const auto& [k, v] : mass) set_mass(unpack_site(k, d), v);
  }

  void step() {
    if (t_ + 1 > field_->horizon())
      throw GeometryError("propagation beyond field horizon; enlarge the horizon");
    const int d = box_.d;
    const auto& offs = neighbour_offsets(d);
    const int noff = pow3(d);
    const double unif = 1.0 / noff;
    std::fill(nxt_.begin(), nxt_.end(), 0.0);

    // Per-offset linear-index deltas, valid at interior sites.
    std::int64_t delta[kMaxNeighbours];
    for (int o = 0; o < noff; ++o) {
      std::int64_t dd = 0;
      for (int i = 0; i < d; ++i)
        dd = dd * box_.side(i) + offs[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)];
      delta[o] = dd;
    }
    const std::int64_t fnext = field_->slice_base(t_ + 1);
    const bool same_space = box_ == field_->bounds();

    const SpatialBox src = empty_ ? box_ : active_;
    for_each_site(src, [&](const Coords& x) {
      const std::int64_t bidx = box_.index(x);
      const double m = cur_[static_cast<std::size_t>(bidx)];
      if (m == 0.0) return;
      bool edge = false;
      for (int i = 0; i < d; ++i) {
        auto ii = static_cast<std::size_t>(i);
        if (x[ii] == box_.lo[ii] || x[ii] == box_.hi[ii]) {
          edge = true;
          break;
        }
      }
      if (edge && policy_ == EdgePolicy::strict)
        throw GeometryError("walk cone reached the window edge; enlarge the window");

      const bool on = field_->xi(x, t_);
      if (!edge && same_space) {
        // interior fast path: shared linear deltas for xi reads and scatter
        if (on) {
          std::int64_t tg[kMaxNeighbours];
          int k = 0;
          for (int o = 0; o < noff; ++o) {
            const std::int64_t idx = bidx + delta[o];
            if (field_->xi_raw(fnext + idx)) tg[k++] = idx;
          }
          const double share = m / k;
          for (int i = 0; i < k; ++i) nxt_[static_cast<std::size_t>(tg[i])] += share;
        } else {
          const double share = m * unif;
          for (int o = 0; o < noff; ++o)
            nxt_[static_cast<std::size_t>(bidx + delta[o])] += share;
        }
        return;
      }

      // general path (edges, wrap, or distinct index spaces)
      std::int64_t tg[kMaxNeighbours];
      int k = 0;
      int dropped = 0;
      for (int o = 0; o < noff; ++o) {
        Coords y = x;
        for (int i = 0; i < d; ++i)
          y[static_cast<std::size_t>(i)] += offs[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)];
        if (policy_ == EdgePolicy::wrap) y = box_.wrap(y);
        const bool inside = box_.contains(y);
        if (on) {
          if (!field_->xi(y, t_ + 1)) continue;  // y is in bounds: clip keeps margin 1
          if (inside)
            tg[k++] = box_.index(y);
          else
            ++dropped;
        } else {
          if (inside)
            tg[k++] = box_.index(y);
          else
            ++dropped;
        }
      }
      if (on) {
        const double share = m / (k + dropped);
        for (int i = 0; i < k; ++i) nxt_[static_cast<std::size_t>(tg[i])] += share;
      } else {
        const double share = m * unif;
        for (int i = 0; i < k; ++i) nxt_[static_cast<std::size_t>(tg[i])] += share;
      }
    });

    cur_.swap(nxt_);
    ++t_;
    if (!empty_) active_ = active_.expanded(1).intersect(box_);
  }

  double total() const {
    KahanSum s;
    for (double v : cur_) s.add(v);
    return s.value();
  }

  // Zero the mass at sites whose xi bit is set at the current time.
  void kill_on_cluster() {
    for_each_site(active_, [&](const Coords& x) {
      if (field_->xi(x, t_))
        cur_[static_cast<std::size_t>(box_.index(x))] = 0.0;
    });
  }

  // Zero the mass outside a sup-norm ball (absorbing barrier).
  void mask_outside(const SpatialBox& keep) {
    for_each_site(active_, [&](const Coords& x) {
      if (!keep.contains(x)) cur_[static_cast<std::size_t>(box_.index(x))] = 0.0;
    });
  }

  std::map<SiteKey, double> sparse() const {
    std::map<SiteKey, double> m;
    for_each_site(box_, [&](const Coords& x) {
      const double v = cur_[static_cast<std::size_t>(box_.index(x))];
      if (v != 0.0) m.emplace(pack_site(x, box_.d), v);
    });
    return m;
  }

 private:
  void note_active(const Coords& x) {
    if (empty_) {
      active_.lo = x;
      active_.hi = x;
      active_.d = box_.d;
      empty_ = false;
      return;
    }
    for (int i = 0; i < box_.d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      active_.lo[ii] = std::min(active_.lo[ii], x[ii]);
      active_.hi[ii] = std::max(active_.hi[ii], x[ii]);
    }
  }

  const BackboneField* field_;
  SpatialBox box_;
  std::int64_t t_;
  EdgePolicy policy_;
  std::vector<double> cur_, nxt_;
  SpatialBox active_;
  bool empty_;
};

// ---------------------------------------------------------------------------
// Window sizing

struct FieldOptions {
  BoundaryMode boundary = BoundaryMode::open;
  std::int64_t horizon_margin = -1;  // -1: auto rule
  int extra_extent = 0;
};

inline std::int64_t auto_horizon_margin(int d, std::int64_t extent,
                                        std::int64_t n_steps) {
  double vol = static_cast<double>(n_steps + 1);
  for (int i = 0; i < d; ++i) vol *= static_cast<double>(2 * extent + 1);
  const auto bits = static_cast<std::int64_t>(std::ceil(std::log2(std::max(2.0, vol))));
  return std::max<std::int64_t>(50, 20 * bits);
}

// Seeded window + backbone sized for an n-step walk from (start, m):
// start +- (n+1) spatially, horizon m + n + margin.
inline BackboneField make_walk_field(int d, double p, std::uint64_t seed,
                                     const Coords& start, std::int64_t m,
                                     std::int64_t n_steps,
                                     const FieldOptions& opt = {}) {
  std::vector<int> extents;
  for (int i = 0; i < d; ++i)
    extents.push_back(std::abs(start[static_cast<std::size_t>(i)]) +
                      static_cast<int>(n_steps) + 1 + opt.extra_extent);
  const std::int64_t margin =
      opt.horizon_margin >= 0
          ? opt.horizon_margin
          : auto_horizon_margin(d, extents[0], n_steps);
  const std::int64_t horizon = m + n_steps + margin;
  auto env = EnvironmentWindow::sample(d, extents, m, horizon, p, seed, opt.boundary);
  return BackboneField(std::move(env), horizon);
}

// ---------------------------------------------------------------------------
// Quenched propagation

inline void check_walk_window(const BackboneField& f, const Coords& start,
                              std::int64_t m, std::int64_t n_steps) {
  if (m < f.time_lo())
    throw GeometryError("walk starts before the window; enlarge the time range");
  if (m + n_steps + 1 > f.horizon())
    throw GeometryError("walk horizon m + n + 1 exceeds the field horizon; "
                        "enlarge the horizon");
  if (f.boundary() == BoundaryMode::open) {
    SpatialBox cone = SpatialBox::centered(f.dim(), std::vector<int>(
                                               static_cast<std::size_t>(f.dim()),
                                               static_cast<int>(n_steps) + 1))
                          .shifted(start);
    if (!f.bounds().covers(cone))
      throw GeometryError("walk cone start +- (n+1) leaves the window; "
                          "enlarge the window");
  }
}

inline std::vector<DistributionSlice> propagate_quenched_multi(
    const BackboneField& f, const Coords& start, std::int64_t m,
    const std::vector<std::int64_t>& checkpoints) {
  if (checkpoints.empty()) throw ConfigError("no checkpoints given");
  for (std::size_t i = 1; i < checkpoints.size(); ++i)
    if (checkpoints[i] <= checkpoints[i - 1])
      throw ConfigError("checkpoints must be strictly increasing");
  check_walk_window(f, start, m, checkpoints.back());
  DensePropagator prop(f, f.bounds(), m,
                       f.boundary() == BoundaryMode::periodic ? EdgePolicy::wrap
                                                              : EdgePolicy::strict);
  prop.set_mass(start, 1.0);
  std::vector<DistributionSlice> out;
  std::size_t next = 0;
  for (std::int64_t s = 0; s <= checkpoints.back(); ++s) {
    if (s > 0) prop.step();
    if (next < checkpoints.size() && s == checkpoints[next]) {
      DistributionSlice sl;
      sl.d = f.dim();
      sl.time = m + s;
      sl.label = SliceLabel::quenched;
      sl.prov.exact = true;
      sl.prov.base_seed = f.env().seed();
      sl.mass = prop.sparse();
      out.push_back(std::move(sl));
      ++next;
    }
  }
  return out;
}

inline DistributionSlice propagate_quenched(const BackboneField& f,
                                            const Coords& start, std::int64_t m,
                                            std::int64_t n_steps) {
  return propagate_quenched_multi(f, start, m, {n_steps}).front();
}

// Path consistent with step_distribution at every step.
inline std::vector<Coords> sample_path(const BackboneField& f, const Coords& start,
                                       std::int64_t m, std::int64_t n_steps,
                                       Rng& rng) {
  check_walk_window(f, start, m, n_steps);
  std::vector<Coords> path{start};
  Coords x = start;
  const auto& offs = neighbour_offsets(f.dim());
  for (std::int64_t s = 0; s < n_steps; ++s) {
    const KernelRow row = step_distribution(f, x, m + s);
    double u = rng.next_unit();
    int pick = pow3(f.dim()) - 1;
    double acc = 0.0;
    for (int o = 0; o < pow3(f.dim()); ++o) {
      acc += row.w[static_cast<std::size_t>(o)];
      if (u < acc) {
        pick = o;
        break;
      }
    }
    for (int i = 0; i < f.dim(); ++i)
      x[static_cast<std::size_t>(i)] +=
          offs[static_cast<std::size_t>(pick)][static_cast<std::size_t>(i)];
    if (f.boundary() == BoundaryMode::periodic) x = f.bounds().wrap(x);
    path.push_back(x);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Annealed laws

// Exact enumeration over the dependency cone {(z,s): |z-start| <= s-m <= T-m}.
// Sites outside the cone cannot influence the law of the first n steps.
inline DistributionSlice estimate_annealed_exact(int d, double p, const Coords& start,
                                                 std::int64_t m, std::int64_t n_steps,
                                                 std::int64_t horizon = -1) {
  if (horizon < 0) horizon = m + n_steps;
  if (horizon < m + n_steps)
    throw GeometryError("exact annealed horizon must cover the walk");
  // Work in a window centred at the origin and translate the result onto
  // start at the end (the annealed law is translation invariant).
  const auto reach = static_cast<int>(horizon - m);
  const std::vector<int> extents(static_cast<std::size_t>(d), reach + 1);
  const SpatialBox rect = SpatialBox::centered(d, extents);
  const std::int64_t svol = rect.volume();
  const std::int64_t total = svol * (horizon - m + 1);

  // collect cone sites; all other sites stay closed
  std::vector<std::int64_t> cone;  // flattened storage indices
  for (std::int64_t s = m; s <= horizon; ++s) {
    const std::int64_t base = (s - m) * svol;
    for_each_site(rect, [&](const Coords& z) {
      int dist = 0;
      for (int i = 0; i < d; ++i)
        dist = std::max(dist, std::abs(z[static_cast<std::size_t>(i)]));
      if (dist <= s - m) cone.push_back(base + rect.index(z));
    });
  }
  std::vector<std::int64_t> free;
  const bool forced_open = p >= 1.0, forced_closed = p <= 0.0;
  if (!forced_open && !forced_closed) free = cone;
  if (free.size() > 24)
    throw CapacityError("dependency slab has " + std::to_string(free.size()) +
                        " free sites; exact enumeration is capped at 24");

  std::vector<std::uint8_t> occ(static_cast<std::size_t>(total), 0);
  if (forced_open)
    for (std::int64_t idx : cone) occ[static_cast<std::size_t>(idx)] = 1;

  std::map<SiteKey, double> acc;
  const std::uint64_t count = 1ULL << free.size();
  std::vector<int> ext_vec(static_cast<std::size_t>(d), reach + 1);
  for (std::uint64_t a = 0; a < count; ++a) {
    double weight = 1.0;
    for (std::size_t i = 0; i < free.size(); ++i) {
      const bool open_bit = (a >> i) & 1ULL;
      occ[static_cast<std::size_t>(free[i])] = open_bit ? 1 : 0;
      weight *= open_bit ? p : 1.0 - p;
    }
    auto env = EnvironmentWindow::from_occupancy(d, ext_vec, m, horizon, p,
                                                 BoundaryMode::open, occ);
    BackboneField f(std::move(env), horizon);
    DensePropagator prop(f, f.bounds(), m, EdgePolicy::strict);
    prop.set_mass(Coords{}, 1.0);
    for (std::int64_t s = 0; s < n_steps; ++s) prop.step();
    for (const auto& [k, v] : prop.sparse()) {
      Coords x = unpack_site(k, d);
      for (int i = 0; i < d; ++i)
        x[static_cast<std::size_t>(i)] += start[static_cast<std::size_t>(i)];
      acc[pack_site(x, d)] += weight * v;
    }
  }
  DistributionSlice out;
  out.d = d;
  out.time = m + n_steps;
  out.label = SliceLabel::annealed;
  out.prov.exact = true;
  out.prov.note = "enumeration";
  out.mass = std::move(acc);
  return out;
}

struct AnnealedOptions {
  FieldOptions field;
  int threads = 1;
  int chunk = 8;
};

// Monte Carlo annealed laws at several checkpoint times from one pass per
// environment. Deterministic for fixed (reps, base_seed) regardless of the
// thread count: chunks are merged in index order.
inline std::vector<DistributionSlice> annealed_ensemble(
    int d, double p, const Coords& start, std::int64_t m,
    const std::vector<std::int64_t>& checkpoints, int reps,
    std::uint64_t base_seed, const AnnealedOptions& opt = {}) {
  if (reps < 1) throw ConfigError("annealed_ensemble needs reps >= 1");
  if (checkpoints.empty()) throw ConfigError("no checkpoints given");
  for (std::size_t i = 1; i < checkpoints.size(); ++i)
    if (checkpoints[i] <= checkpoints[i - 1])
      throw ConfigError("checkpoints must be strictly increasing");
  const std::int64_t n_max = checkpoints.back();
  SpatialBox box = SpatialBox::centered(
      d, std::vector<int>(static_cast<std::size_t>(d), static_cast<int>(n_max)))
                       .shifted(start);
  const std::size_t vol = static_cast<std::size_t>(box.volume());
  const std::size_t nt = checkpoints.size();

  struct Partial {
    std::vector<double> sum, sumsq;
  };
  const std::int64_t n_chunks =
      (static_cast<std::int64_t>(reps) + opt.chunk - 1) / opt.chunk;
  std::vector<Partial> partials(static_cast<std::size_t>(n_chunks));

  parallel_chunks(reps, opt.chunk, opt.threads, [&](std::int64_t c, std::int64_t b,
                                                    std::int64_t e) {
    Partial part;
    part.sum.assign(vol * nt, 0.0);
    part.sumsq.assign(vol * nt, 0.0);
    for (std::int64_t r = b; r < e; ++r) {
      const BackboneField f = make_walk_field(
          d, p, rep_seed(base_seed, static_cast<std::uint64_t>(r)), start, m, n_max,
          opt.field);
      DensePropagator prop(f, f.bounds(), m,
                           f.boundary() == BoundaryMode::periodic
                               ? EdgePolicy::wrap
                               : EdgePolicy::strict);
      prop.set_mass(start, 1.0);
      std::size_t next = 0;
      for (std::int64_t s = 0; s <= n_max; ++s) {
        if (s > 0) prop.step();
        if (next < nt && s == checkpoints[next]) {
          for_each_site(box, [&](const Coords& x) {
            const double v =
                prop.values()[static_cast<std::size_t>(f.bounds().index(x))];
            if (v != 0.0) {
              const std::size_t slot =
                  next * vol + static_cast<std::size_t>(box.index(x));
              part.sum[slot] += v;
              part.sumsq[slot] += v * v;
            }
          });
          ++next;
        }
      }
    }
    partials[static_cast<std::size_t>(c)] = std::move(part);
  });

  std::vector<double> sum(vol * nt, 0.0), sumsq(vol * nt, 0.0);
  for (const auto& part : partials)
    for (std::size_t i = 0; i < vol * nt; ++i) {
      sum[i] += part.sum[i];
      sumsq[i] += part.sumsq[i];
    }

  std::vector<DistributionSlice> out(nt);
  const double R = static_cast<double>(reps);
  for (std::size_t ci = 0; ci < nt; ++ci) {
    auto& sl = out[ci];
    sl.d = d;
    sl.time = m + checkpoints[ci];
    sl.label = SliceLabel::annealed;
    sl.prov.exact = false;
    sl.prov.base_seed = base_seed;
    sl.prov.reps = reps;
    for_each_site(box, [&](const Coords& x) {
      const std::size_t slot = ci * vol + static_cast<std::size_t>(box.index(x));
      if (sum[slot] == 0.0) return;
      const double mean = sum[slot] / R;
      const SiteKey k = pack_site(x, d);
      sl.mass.emplace(k, mean);
      if (reps > 1) {
        double v = (sumsq[slot] - sum[slot] * sum[slot] / R) / (R - 1.0) / R;
        sl.var.emplace(k, std::max(0.0, v));
      }
    });
  }
  return out;
}

enum class AnnealedMode { exact, mc };

inline DistributionSlice estimate_annealed(int d, double p, const Coords& start,
                                           std::int64_t m, std::int64_t n_steps,
                                           AnnealedMode mode, int reps = 0,
                                           std::uint64_t base_seed = 0,
                                           const AnnealedOptions& opt = {}) {
  if (mode == AnnealedMode::exact) {
    std::int64_t horizon = m + n_steps;
    if (opt.field.horizon_margin > 0) horizon += opt.field.horizon_margin;
    return estimate_annealed_exact(d, p, start, m, n_steps, horizon);
  }
  return annealed_ensemble(d, p, start, m, {n_steps}, reps, base_seed, opt).front();
}

// ---------------------------------------------------------------------------
// Hitting the cluster

struct HittingTail {
  double frequency = 0.0;
  double stderr_ = 0.0;
  std::int64_t n = 0;
  int reps = 0;
};

// Annealed probability that the walk stays off the backbone for i = 1..n,
// estimated by the exact per-environment mass of the killed propagation.
inline HittingTail hitting_tail(int d, double p, std::int64_t n, int reps,
                                std::uint64_t base_seed, const FieldOptions& opt = {},
                                int threads = 1) {
  std::vector<double> vals(static_cast<std::size_t>(reps), 0.0);
  parallel_chunks(reps, 8, threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
    for (std::int64_t r = b; r < e; ++r) {
      const BackboneField f = make_walk_field(
          d, p, rep_seed(base_seed, static_cast<std::uint64_t>(r)), Coords{}, 0, n,
          opt);
      DensePropagator prop(f, f.bounds(), 0,
                           f.boundary() == BoundaryMode::periodic
                               ? EdgePolicy::wrap
                               : EdgePolicy::strict);
      prop.set_mass(Coords{}, 1.0);
      for (std::int64_t s = 1; s <= n; ++s) {
        prop.step();
        prop.kill_on_cluster();
      }
      vals[static_cast<std::size_t>(r)] = prop.total();
    }
  });
  const MeanStderr ms = mean_stderr(vals);
  HittingTail h;
  h.frequency = ms.mean;
  h.stderr_ = ms.stderr_;
  h.n = n;
  h.reps = reps;
  return h;
}

}  // namespace opwalk
