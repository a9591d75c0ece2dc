#pragma once

// Prefactor fields psi_N(x, n) = sum over starts y of the N-step quenched
// probability of reaching x at time n: the push-forward of the all-ones field
// through the quenched kernel. Includes the point-of-view kernel row g,
// harmonicity and box-concentration diagnostics, Cesaro averages and the
// invariance/uniqueness probes.

#include <optional>

#include "opwalk/walk.hpp"

namespace opwalk {

struct PrefactorSlice {
  int d = 1;
  std::int64_t time = 0;
  int depth = 0;  // N
  SpatialBox region;
  std::vector<double> values;  // dense row-major over region
  BoundaryMode boundary = BoundaryMode::open;
  std::int64_t horizon = 0;

  double at(const Coords& x) const {
    Coords y = boundary == BoundaryMode::periodic ? region.wrap(x) : x;
    if (!region.contains(y))
      throw GeometryError("prefactor query outside stored region");
    return values[static_cast<std::size_t>(region.index(y))];
  }
  bool covers(const Coords& x) const {
    return boundary == BoundaryMode::periodic || region.contains(x);
  }
  double mean() const {
    KahanSum s;
    for (double v : values) s.add(v);
    return s.value() / static_cast<double>(values.size());
  }
  double moment(int k) const {
    KahanSum s;
    for (double v : values) {
      double t = 1.0;
      for (int i = 0; i < k; ++i) t *= v;
      s.add(t);
    }
    return s.value() / static_cast<double>(values.size());
  }
};

inline SpatialBox default_prefactor_core(const BackboneField& f, int N) {
  if (f.boundary() == BoundaryMode::periodic) return f.bounds();
  return f.bounds().shrunk(N + 1);
}

// Forward recursion psi_k(x,t) = sum_y psi_{k-1}(y,t-1) K((y,t-1))[x],
// initialised to ones at slice n-N. Open-boundary slices are exact on their
// core region: every path feeding a core site stays inside core + ball(N).
inline PrefactorSlice compute_prefactor(const BackboneField& f, std::int64_t n,
                                        int N,
                                        std::optional<SpatialBox> core_opt = {}) {
  if (N < 0) throw ConfigError("prefactor depth must be >= 0");
  if (n - N < f.time_lo())
    throw GeometryError("prefactor start slice n-N before window start");
  if (n > f.horizon())
    throw GeometryError("prefactor slice beyond horizon; enlarge the horizon");
  const SpatialBox core = core_opt ? *core_opt : default_prefactor_core(f, N);
  PrefactorSlice out;
  out.d = f.dim();
  out.time = n;
  out.depth = N;
  out.region = core;
  out.boundary = f.boundary();
  out.horizon = f.horizon();
  if (f.boundary() == BoundaryMode::periodic) {
    DensePropagator prop(f, f.bounds(), n - N, EdgePolicy::wrap);
    prop.fill_ones();
    for (int k = 0; k < N; ++k) prop.step();
    out.values = prop.values();
    return out;
  }
  if (!f.bounds().covers(core.expanded(N + 1)))
    throw GeometryError("prefactor core needs an N+1 margin; enlarge the window");
  DensePropagator prop(f, core.expanded(N), n - N, EdgePolicy::clip);
  prop.fill_ones();
  for (int k = 0; k < N; ++k) prop.step();
  out.values.resize(static_cast<std::size_t>(core.volume()));
  for_each_site(core, [&](const Coords& x) {
    out.values[static_cast<std::size_t>(core.index(x))] =
        prop.values()[static_cast<std::size_t>(prop.box().index(x))];
  });
  return out;
}

// Kernel row of the environment seen from the particle: the xi-ratio row at
// open origins with an occupied forward neighbourhood, uniform otherwise.
// Coincides with step_distribution at every site.
inline KernelRow pov_weights(const BackboneField& f, const Coords& x,
                             std::int64_t n) {
  if (n + 1 > f.horizon() || n < f.time_lo())
    throw GeometryError("pov row needs n+1 within the field horizon");
  KernelRow row;
  row.origin = x;
  row.time = n;
  row.d = f.dim();
  const auto& offs = neighbour_offsets(row.d);
  const int noff = pow3(row.d);
  int open[kMaxNeighbours];
  int k = 0;
  for (int o = 0; o < noff; ++o) {
    Coords y = x;
    for (int i = 0; i < row.d; ++i)
      y[static_cast<std::size_t>(i)] += offs[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)];
    bool bit = false;
    if (f.boundary() == BoundaryMode::periodic)
      bit = f.xi(y, n + 1);
    else if (f.bounds().contains(y))
      bit = f.xi(y, n + 1);
    if (bit) open[k++] = o;
  }
  const bool ratio_branch = f.env().is_open(x, n) && k > 0;
  row.on_cluster = ratio_branch;
  if (ratio_branch) {
    const double u = 1.0 / k;
    for (int i = 0; i < k; ++i) row.w[static_cast<std::size_t>(open[i])] = u;
  } else {
    const double u = 1.0 / noff;
    for (int o = 0; o < noff; ++o) row.w[static_cast<std::size_t>(o)] = u;
  }
  return row;
}

// Max over core sites of |psi_N(x,n) - sum_y K((y,n-1))[x] psi_{N-1}(y,n-1)|
// with both slices built independently from their own recursions.
inline double check_harmonicity(const BackboneField& f, std::int64_t n, int N,
                                std::optional<SpatialBox> core_opt = {}) {
  if (N < 1) throw ConfigError("harmonicity check needs N >= 1");
  const SpatialBox core = core_opt ? *core_opt : default_prefactor_core(f, N);
  const PrefactorSlice top = compute_prefactor(f, n, N, core);
  const bool periodic = f.boundary() == BoundaryMode::periodic;
  const SpatialBox below_region = periodic ? core : core.expanded(1);
  const PrefactorSlice bottom = compute_prefactor(f, n - 1, N - 1, below_region);

  std::vector<double> acc(static_cast<std::size_t>(core.volume()), 0.0);
  const auto& offs = neighbour_offsets(f.dim());
  for_each_site(below_region, [&](const Coords& y) {
    const KernelRow row = step_distribution(f, y, n - 1);
    const double by = bottom.at(y);
    for (int o = 0; o < pow3(f.dim()); ++o) {
      const double w = row.w[static_cast<std::size_t>(o)];
      if (w == 0.0) continue;
      Coords x = y;
      for (int i = 0; i < f.dim(); ++i)
        x[static_cast<std::size_t>(i)] += offs[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)];
      if (periodic) x = core.wrap(x);
      if (!core.contains(x)) continue;
      acc[static_cast<std::size_t>(core.index(x))] += by * w;
    }
  });
  double res = 0.0;
  for_each_site(core, [&](const Coords& x) {
    res = std::max(res, std::abs(top.at(x) -
                                 acc[static_cast<std::size_t>(core.index(x))]));
  });
  return res;
}

struct BoxConcentration {
  int box_side = 0;
  double epsilon = 0.0;
  std::vector<double> deviations;  // |box average - 1| per full box
  double exceed_fraction = 0.0;    // fraction above epsilon
};

inline BoxConcentration box_concentration(const PrefactorSlice& psi, int M,
                                          double epsilon) {
  if (M < 1) throw ConfigError("box side must be >= 1");
  BoxConcentration out;
  out.box_side = M;
  out.epsilon = epsilon;
  const SpatialBox& r = psi.region;
  // lattice of full boxes anchored at the region's lower corner
  std::vector<int> counts(static_cast<std::size_t>(r.d));
  for (int i = 0; i < r.d; ++i)
    counts[static_cast<std::size_t>(i)] = r.side(i) / M;
  std::vector<int> idx(static_cast<std::size_t>(r.d), 0);
  for (;;) {
    SpatialBox box;
    box.d = r.d;
    for (int i = 0; i < r.d; ++i) {
      auto ii = static_cast<std::size_t>(i);
      box.lo[ii] = r.lo[ii] + idx[ii] * M;
      box.hi[ii] = box.lo[ii] + M - 1;
    }
    KahanSum s;
    for_each_site(box, [&](const Coords& x) { s.add(psi.at(x)); });
    out.deviations.push_back(
        std::abs(s.value() / static_cast<double>(box.volume()) - 1.0));
    int axis = r.d - 1;
    for (; axis >= 0; --axis) {
      auto ai = static_cast<std::size_t>(axis);
      if (++idx[ai] < counts[ai]) break;
      idx[ai] = 0;
    }
    if (axis < 0) break;
  }
  int exceed = 0;
  for (double v : out.deviations) exceed += v > epsilon;
  out.exceed_fraction = out.deviations.empty()
                            ? 0.0
                            : static_cast<double>(exceed) /
                                  static_cast<double>(out.deviations.size());
  return out;
}

// Pointwise average of psi_0 .. psi_{N_max-1} at a common target slice.
inline PrefactorSlice cesaro_prefactor(const BackboneField& f, std::int64_t n,
                                       int N_max,
                                       std::optional<SpatialBox> core_opt = {}) {
  if (N_max < 1) throw ConfigError("cesaro_prefactor needs N_max >= 1");
  const SpatialBox core =
      core_opt ? *core_opt : default_prefactor_core(f, N_max - 1);
  PrefactorSlice avg = compute_prefactor(f, n, 0, core);
  avg.depth = N_max;
  for (int N = 1; N < N_max; ++N) {
    const PrefactorSlice s = compute_prefactor(f, n, N, core);
    for (std::size_t i = 0; i < avg.values.size(); ++i)
      avg.values[i] += s.values[i];
  }
  for (auto& v : avg.values) v /= static_cast<double>(N_max);
  return avg;
}

// ---------------------------------------------------------------------------
// Invariance probe for the point of view of the particle

struct PatchFunctional {
  enum class Kind { const_one, xi_origin, patch_density };
  Kind kind = Kind::xi_origin;
  int radius = 0;
  int time_depth = 0;

  double eval(const BackboneField& f, const Coords& x, std::int64_t n) const {
    switch (kind) {
      case Kind::const_one:
        return 1.0;
      case Kind::xi_origin:
        return f.xi(x, n) ? 1.0 : 0.0;
      case Kind::patch_density: {
        SpatialBox patch = SpatialBox::centered(
                               f.dim(), std::vector<int>(static_cast<std::size_t>(f.dim()), radius))
                               .shifted(x);
        std::int64_t on = 0, tot = 0;
        for (std::int64_t s = 0; s <= time_depth; ++s)
          for_each_site(patch, [&](const Coords& y) {
            on += f.xi(y, n + s);
            ++tot;
          });
        return static_cast<double>(on) / static_cast<double>(tot);
      }
    }
    return 0.0;
  }

  std::int64_t lookahead() const {
    return kind == Kind::patch_density ? time_depth : 0;
  }
};

struct InvarianceGap {
  double gap = 0.0;
  double stderr_ = 0.0;
  std::vector<double> per_seed;  // signed slice-averaged differences
};

// Monte Carlo estimate of |E[psi_N f] - E[psi_N (Nf)]| on periodic windows,
// slice-averaged per seed for variance reduction.
inline InvarianceGap invariance_gap(int d, double p, int extent, int N,
                                    const PatchFunctional& fn, int seeds,
                                    std::uint64_t base_seed,
                                    std::int64_t horizon_margin = 50) {
  const std::int64_t n0 = N;  // reference slice; window starts at 0
  const std::int64_t horizon = n0 + 1 + fn.lookahead() + horizon_margin;
  InvarianceGap out;
  const auto& offs = neighbour_offsets(d);
  for (int s = 0; s < seeds; ++s) {
    auto env = EnvironmentWindow::sample(
        d, std::vector<int>(static_cast<std::size_t>(d), extent), 0, horizon, p,
        rep_seed(base_seed, static_cast<std::uint64_t>(s)), BoundaryMode::periodic);
    BackboneField f(std::move(env), horizon);
    const PrefactorSlice psi = compute_prefactor(f, n0, N);
    KahanSum diff;
    for_each_site(f.bounds(), [&](const Coords& x) {
      const double fx = fn.eval(f, x, n0);
      const KernelRow g = pov_weights(f, x, n0);
      double nf = 0.0;
      for (int o = 0; o < pow3(d); ++o) {
        const double w = g.w[static_cast<std::size_t>(o)];
        if (w == 0.0) continue;
        Coords y = x;
        for (int i = 0; i < d; ++i)
          y[static_cast<std::size_t>(i)] += offs[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)];
        nf += w * fn.eval(f, f.bounds().wrap(y), n0 + 1);
      }
      diff.add(psi.at(x) * (fx - nf));
    });
    out.per_seed.push_back(diff.value() /
                           static_cast<double>(f.bounds().volume()));
  }
  const MeanStderr ms = mean_stderr(out.per_seed);
  out.gap = std::abs(ms.mean);
  out.stderr_ = ms.stderr_;
  return out;
}

// L1 gap of two prefactor constructions weighted by an annealed law.
inline double uniqueness_probe(const DistributionSlice& annealed,
                               const PrefactorSlice& a, const PrefactorSlice& b) {
  if (annealed.time != a.time || annealed.time != b.time)
    throw GeometryError("uniqueness probe needs slices at one time");
  KahanSum s;
  for (const auto& [k, w] : annealed.mass) {
    const Coords x = unpack_site(k, annealed.d);
    if (!a.covers(x) || !b.covers(x))
      throw GeometryError("prefactor regions do not cover the annealed support");
    s.add(w * std::abs(a.at(x) - b.at(x)));
  }
  return s.value();
}

}  // namespace opwalk
