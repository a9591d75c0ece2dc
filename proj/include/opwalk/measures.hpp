#pragma once

// Hybrid measures bridging the quenched and annealed laws, space-time
// convolution with the quenched continuation, L1 distances, the local-limit
// error functionals and the diffusivity estimate.

#include "opwalk/partition.hpp"
#include "opwalk/prefactor.hpp"

namespace opwalk {

enum class HybridKind { ann_pre, que, box_que_pre, convolution };

inline const char* to_string(HybridKind k) {
  switch (k) {
    case HybridKind::ann_pre: return "ann-pre";
    case HybridKind::que: return "que";
    case HybridKind::box_que_pre: return "box-que-pre";
    default: return "convolution";
  }
}

struct HybridMeasure {
  DistributionSlice slice;
  HybridKind kind = HybridKind::que;
  int box_side = 0;  // partition descriptor where applicable
  double Z = 1.0;
  int degenerate_boxes = 0;
};

inline HybridMeasure as_hybrid(const DistributionSlice& s, HybridKind kind) {
  HybridMeasure h;
  h.slice = s;
  h.kind = kind;
  return h;
}

// mass(x) = annealed(x) psi(x) / Z with Z returned alongside.
inline HybridMeasure ann_times_pre(const DistributionSlice& annealed,
                                   const PrefactorSlice& psi) {
  if (annealed.time != psi.time)
    throw GeometryError("ann_times_pre needs matching times");
  HybridMeasure out;
  out.kind = HybridKind::ann_pre;
  out.slice.d = annealed.d;
  out.slice.time = annealed.time;
  out.slice.label = SliceLabel::hybrid;
  out.slice.prov = annealed.prov;
  KahanSum z;
  for (const auto& [k, a] : annealed.mass) {
    const Coords x = unpack_site(k, annealed.d);
    if (!psi.covers(x))
      throw GeometryError("prefactor region does not cover the annealed support");
    z.add(a * psi.at(x));
  }
  out.Z = z.value();
  if (out.Z <= 0.0)
    throw DegenerateMeasureError("annealed support carries zero prefactor mass");
  for (const auto& [k, a] : annealed.mass) {
    const double m = a * psi.at(unpack_site(k, annealed.d)) / out.Z;
    if (m != 0.0) out.slice.mass.emplace(k, m);
  }
  return out;
}

// mass(x) = quenched(box of x) psi(x) / sum of psi over the box. Boxes with
// positive quenched mass but zero psi-sum are redistributed uniformly and
// flagged (possible only through horizon truncation).
inline HybridMeasure box_que_times_pre(const DistributionSlice& quenched,
                                       const PrefactorSlice& psi,
                                       const BoxPartition& part) {
  if (quenched.time != psi.time)
    throw GeometryError("box_que_times_pre needs matching times");
  HybridMeasure out;
  out.kind = HybridKind::box_que_pre;
  out.box_side = part.side;
  out.slice.d = quenched.d;
  out.slice.time = quenched.time;
  out.slice.label = SliceLabel::hybrid;
  out.slice.prov = quenched.prov;
  std::map<SiteKey, double> box_mass;
  for (const auto& [k, q] : quenched.mass)
    box_mass[part.box_key(unpack_site(k, quenched.d))] += q;
  for (const auto& [bk, q] : box_mass) {
    if (q == 0.0) continue;
    const SpatialBox box = part.box_bounds(unpack_site(bk, quenched.d));
    KahanSum psum;
    for_each_site(box, [&](const Coords& x) {
      if (!psi.covers(x))
        throw GeometryError("prefactor region does not cover a quenched box");
      psum.add(psi.at(x));
    });
    if (psum.value() > 0.0) {
      for_each_site(box, [&](const Coords& x) {
        const double m = q * psi.at(x) / psum.value();
        if (m != 0.0) out.slice.mass.emplace(pack_site(x, quenched.d), m);
      });
    } else {
      ++out.degenerate_boxes;
      const double m = q / static_cast<double>(box.volume());
      for_each_site(box, [&](const Coords& x) {
        out.slice.mass.emplace(pack_site(x, quenched.d), m);
      });
    }
  }
  return out;
}

// k-step quenched continuation: mass(x, n) = sum_y nu(y, n-k) P^(y,n-k)(X_n=x).
inline HybridMeasure convolve(const HybridMeasure& nu, const BackboneField& f,
                              std::int64_t k) {
  if (k < 0) throw ConfigError("convolution step count must be >= 0");
  HybridMeasure out;
  out.kind = HybridKind::convolution;
  out.box_side = nu.box_side;
  out.Z = nu.Z;
  out.slice.d = nu.slice.d;
  out.slice.time = nu.slice.time + k;
  out.slice.label = SliceLabel::hybrid;
  out.slice.prov = nu.slice.prov;
  if (k == 0) {
    out.slice.mass = nu.slice.mass;
    return out;
  }
  if (nu.slice.time + k + 1 > f.horizon())
    throw GeometryError("continuation beyond horizon; enlarge the horizon");
  DensePropagator prop(f, f.bounds(), nu.slice.time,
                       f.boundary() == BoundaryMode::periodic ? EdgePolicy::wrap
                                                              : EdgePolicy::strict);
  prop.init_from(nu.slice.mass, nu.slice.d);
  for (std::int64_t s = 0; s < k; ++s) prop.step();
  out.slice.mass = prop.sparse();
  return out;
}

inline HybridMeasure convolve(const DistributionSlice& nu, const BackboneField& f,
                              std::int64_t k) {
  return convolve(as_hybrid(nu, HybridKind::que), f, k);
}

// sum_x |A(x) - B(x)| over one time slice; lies in [0, 2] for laws.
inline double l1_distance(const DistributionSlice& a, const DistributionSlice& b) {
  if (a.time != b.time)
    throw GeometryError("l1_distance needs slices at the same time");
  KahanSum s;
  auto ia = a.mass.begin();
  auto ib = b.mass.begin();
  while (ia != a.mass.end() || ib != b.mass.end()) {
    if (ib == b.mass.end() || (ia != a.mass.end() && ia->first < ib->first)) {
      s.add(std::abs(ia->second));
      ++ia;
    } else if (ia == a.mass.end() || ib->first < ia->first) {
      s.add(std::abs(ib->second));
      ++ib;
    } else {
      s.add(std::abs(ia->second - ib->second));
      ++ia;
      ++ib;
    }
  }
  return s.value();
}

inline double l1_distance(const HybridMeasure& a, const HybridMeasure& b) {
  return l1_distance(a.slice, b.slice);
}

// sum_x |P_omega(X_n=x) - annealed(x) psi(x)|  (not Z-normalised).
inline double qlclt_error(const DistributionSlice& quenched,
                          const DistributionSlice& annealed,
                          const PrefactorSlice& psi) {
  if (quenched.time != annealed.time || quenched.time != psi.time)
    throw GeometryError("qlclt_error needs matching times");
  DistributionSlice reweighted;
  reweighted.d = annealed.d;
  reweighted.time = annealed.time;
  for (const auto& [k, a] : annealed.mass) {
    const Coords x = unpack_site(k, annealed.d);
    if (!psi.covers(x))
      throw GeometryError("prefactor region does not cover the annealed support");
    reweighted.mass.emplace(k, a * psi.at(x));
  }
  return l1_distance(quenched, reweighted);
}

struct GaussianReference {
  int d = 1;
  double sigma2 = 1.0;
  std::int64_t n = 1;

  double density(const Coords& x) const {
    if (sigma2 <= 0.0) throw ConfigError("sigma2 must be positive");
    const double nn = static_cast<double>(std::max<std::int64_t>(1, n));
    double q = 0.0;
    for (int i = 0; i < d; ++i) {
      const double xi = static_cast<double>(x[static_cast<std::size_t>(i)]);
      q += xi * xi;
    }
    const double norm =
        std::pow(2.0 * 3.14159265358979323846 * nn * sigma2, -0.5 * d);
    return norm * std::exp(-q / (2.0 * nn * sigma2));
  }
};

// sum_x |annealed(x) - gaussian density(x)| over a box that captures the
// gaussian tails.
inline double lclt_error(const DistributionSlice& annealed,
                         const GaussianReference& ref) {
  const double sd = std::sqrt(ref.sigma2 * static_cast<double>(std::max<std::int64_t>(1, ref.n)));
  const int R = std::max(annealed.support_radius(Coords{}),
                         static_cast<int>(std::ceil(8.0 * sd)) + 2);
  KahanSum s;
  SpatialBox box = SpatialBox::centered(
      ref.d, std::vector<int>(static_cast<std::size_t>(ref.d), R));
  for_each_site(box, [&](const Coords& x) {
    s.add(std::abs(annealed.at(x) - ref.density(x)));
  });
  return s.value();
}

struct Sigma2Estimate {
  double sigma2 = 0.0;
  std::vector<double> per_axis;
  double isotropy_rel_dev = 0.0;  // max relative deviation across axes
};

// Least-squares slope of the per-axis variance against n.
inline Sigma2Estimate estimate_sigma2(const std::vector<DistributionSlice>& slices,
                                      const std::vector<std::int64_t>& ns) {
  if (slices.size() != ns.size() || slices.size() < 2)
    throw ConfigError("estimate_sigma2 needs >= 2 slices");
  const int d = slices.front().d;
  Sigma2Estimate out;
  std::vector<double> xs(ns.begin(), ns.end());
  for (int axis = 0; axis < d; ++axis) {
    std::vector<double> vars;
    for (const auto& sl : slices) {
      double mean = 0.0;
      for (const auto& [k, m] : sl.mass)
        mean += m * unpack_site(k, d)[static_cast<std::size_t>(axis)];
      double v = 0.0;
      for (const auto& [k, m] : sl.mass) {
        const double c =
            unpack_site(k, d)[static_cast<std::size_t>(axis)] - mean;
        v += m * c * c;
      }
      vars.push_back(v);
    }
    out.per_axis.push_back(linear_fit(xs, vars).slope);
  }
  double s = 0.0;
  for (double v : out.per_axis) s += v;
  out.sigma2 = s / d;
  for (double v : out.per_axis)
    out.isotropy_rel_dev =
        std::max(out.isotropy_rel_dev, std::abs(v - out.sigma2) /
                                           std::max(1e-300, std::abs(out.sigma2)));
  return out;
}

struct HybridLimits {
  double L1 = 0.0, L2 = 0.0, L3 = 0.0;
  std::int64_t k = 0;
  int ell = 0;
  int degenerate_boxes = 0;
};

// The three L1 norms of the hybrid-measure chain at time n with
// k = ceil(n^eps) continuation steps and boxes of side ell = ceil(n^delta).
inline HybridLimits hybrid_limits(const BackboneField& f, std::int64_t n,
                                  double eps, double delta,
                                  const DistributionSlice& ann_n,
                                  const DistributionSlice& ann_nk,
                                  const DistributionSlice& que_nk,
                                  const PrefactorSlice& psi_n,
                                  const PrefactorSlice& psi_nk) {
  if (!(0 < 2 * delta && 2 * delta < eps && eps < 0.25))
    throw ConfigError("hybrid limits need 0 < 2 delta < eps < 1/4");
  HybridLimits out;
  out.k = static_cast<std::int64_t>(std::ceil(std::pow(static_cast<double>(n), eps)));
  out.ell = static_cast<int>(std::ceil(std::pow(static_cast<double>(n), delta)));
  if (ann_n.time != n || ann_nk.time != n - out.k || que_nk.time != n - out.k ||
      psi_n.time != n || psi_nk.time != n - out.k)
    throw GeometryError("hybrid limits: ingredient times do not match n and n-k");
  const BoxPartition part(f.dim(), out.ell);

  const HybridMeasure ann_pre_n = ann_times_pre(ann_n, psi_n);
  const HybridMeasure ann_pre_nk = ann_times_pre(ann_nk, psi_nk);
  const HybridMeasure boxq_nk = box_que_times_pre(que_nk, psi_nk, part);
  out.degenerate_boxes = boxq_nk.degenerate_boxes;

  const HybridMeasure conv_ann = convolve(ann_pre_nk, f, out.k);
  const HybridMeasure conv_boxq = convolve(boxq_nk, f, out.k);
  const HybridMeasure conv_que = convolve(que_nk, f, out.k);

  out.L1 = l1_distance(ann_pre_n, conv_ann);
  out.L2 = l1_distance(conv_ann, conv_boxq);
  out.L3 = l1_distance(conv_boxq, conv_que);
  return out;
}

}  // namespace opwalk
