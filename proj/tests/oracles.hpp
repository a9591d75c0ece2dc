#pragma once

// Independent reference implementations used only by tests: brute-force path
// enumeration, simple-random-walk closed forms, and a chi-square tail.
// These re-derive probabilities from raw field bits and never call the
// propagation code they are checking.

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "opwalk/cluster.hpp"
#include "opwalk/walk.hpp"

namespace oracle {

using namespace opwalk;

// Open-path existence by depth-first search.
inline bool reaches_dfs(const EnvironmentWindow& env, Coords x, std::int64_t m,
                        const Coords& y, std::int64_t n) {
  if (env.boundary() == BoundaryMode::periodic) x = env.bounds().wrap(x);
  if (env.boundary() == BoundaryMode::open && !env.bounds().contains(x))
    return false;
  if (!env.is_open(x, m)) return false;
  if (m == n) {
    Coords yy = env.boundary() == BoundaryMode::periodic ? env.bounds().wrap(y) : y;
    for (int i = 0; i < env.dim(); ++i)
      if (x[static_cast<std::size_t>(i)] != yy[static_cast<std::size_t>(i)])
        return false;
    return true;
  }
  for (const Coords& u : neighbour_offsets(env.dim())) {
    Coords z = x;
    for (int i = 0; i < env.dim(); ++i)
      z[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
    if (reaches_dfs(env, z, m + 1, y, n)) return true;
  }
  return false;
}

// Existence of an open path from (x,t) to any site of slice T.
inline bool backbone_bit_dfs(const EnvironmentWindow& env, Coords x,
                             std::int64_t t, std::int64_t T) {
  if (env.boundary() == BoundaryMode::periodic) x = env.bounds().wrap(x);
  if (env.boundary() == BoundaryMode::open && !env.bounds().contains(x))
    return false;
  if (!env.is_open(x, t)) return false;
  if (t == T) return true;
  for (const Coords& u : neighbour_offsets(env.dim())) {
    Coords z = x;
    for (int i = 0; i < env.dim(); ++i)
      z[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
    if (backbone_bit_dfs(env, z, t + 1, T)) return true;
  }
  return false;
}

// Exhaustive 3^(d n)-path enumeration of the quenched law. The kernel is
// re-derived from the xi bits: uniform over occupied forward neighbours on
// the backbone, uniform over all neighbours off it.
inline std::map<SiteKey, double> enumerate_quenched(const BackboneField& f,
                                                    const Coords& start,
                                                    std::int64_t m,
                                                    int n_steps) {
  std::map<SiteKey, double> law;
  const int d = f.dim();
  const auto& offs = neighbour_offsets(d);
  std::function<void(Coords, std::int64_t, double)> go = [&](Coords x,
                                                             std::int64_t t,
                                                             double prob) {
    if (t == m + n_steps) {
      law[pack_site(x, d)] += prob;
      return;
    }
    const bool on = f.xi(x, t);
    int occupied = 0;
    if (on) {
      for (const Coords& u : offs) {
        Coords y = x;
        for (int i = 0; i < d; ++i)
          y[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
        if (f.boundary() == BoundaryMode::periodic)
          y = f.bounds().wrap(y);
        else if (!f.bounds().contains(y))
          continue;
        occupied += f.xi(y, t + 1);
      }
    }
    for (const Coords& u : offs) {
      Coords y = x;
      for (int i = 0; i < d; ++i)
        y[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
      if (f.boundary() == BoundaryMode::periodic) y = f.bounds().wrap(y);
      if (on) {
        if (!f.bounds().contains(y) && f.boundary() == BoundaryMode::open)
          continue;
        if (!f.xi(y, t + 1)) continue;
        go(y, t + 1, prob / occupied);
      } else {
        go(y, t + 1, prob / static_cast<double>(offs.size()));
      }
    }
  };
  go(start, m, 1.0);
  return law;
}

// Exact simple-random-walk law: d-fold product of the n-fold convolution of
// uniform{-1,0,1}.
inline std::vector<double> srw_axis_pmf(int n) {
  std::vector<double> pmf{1.0};
  for (int s = 0; s < n; ++s) {
    std::vector<double> nxt(pmf.size() + 2, 0.0);
    for (std::size_t i = 0; i < pmf.size(); ++i)
      for (int o = 0; o < 3; ++o) nxt[i + static_cast<std::size_t>(o)] += pmf[i] / 3.0;
    pmf.swap(nxt);
  }
  return pmf;  // index i corresponds to displacement i - n
}

inline double srw_pmf(int d, int n, const Coords& x) {
  const auto axis = srw_axis_pmf(n);
  double v = 1.0;
  for (int i = 0; i < d; ++i) {
    const int off = x[static_cast<std::size_t>(i)] + n;
    if (off < 0 || off >= static_cast<int>(axis.size())) return 0.0;
    v *= axis[static_cast<std::size_t>(off)];
  }
  return v;
}

// Upper regularized incomplete gamma Q(a, x), for the chi-square tail
// P(X > x) = Q(k/2, x/2).
inline double gammq(double a, double x) {
  if (x < 0 || a <= 0) return 1.0;
  auto gln = std::lgamma(a);
  if (x < a + 1.0) {  // series for P, return 1 - P
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-14) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - gln);
  }
  // continued fraction for Q
  double b = x + 1.0 - a, c = 1e300, dd = 1.0 / b, h = dd;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    dd = an * dd + b;
    if (std::abs(dd) < 1e-300) dd = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    dd = 1.0 / dd;
    const double del = dd * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-14) break;
  }
  return std::exp(-x + a * std::log(x) - gln) * h;
}

inline double chi2_sf(double x, double dof) { return gammq(0.5 * dof, 0.5 * x); }

}  // namespace oracle
