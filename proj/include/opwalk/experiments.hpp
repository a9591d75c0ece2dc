#pragma once

// Box-level total variation statistics, the multiscale lambda ladder,
// good/social box classification, the two-stage quenched-annealed coupling,
// pair mixing and the annealed derivative-estimate measurements.

#include "opwalk/measures.hpp"

namespace opwalk {

// sum over partition boxes of |A(box) - B(box)|.
inline double tv_on_boxes(const DistributionSlice& a, const DistributionSlice& b,
                          const BoxPartition& part) {
  if (a.time != b.time)
    throw GeometryError("tv_on_boxes needs slices at the same time");
  std::map<SiteKey, double> abox, bbox;
  for (const auto& [k, v] : a.mass) abox[part.box_key(unpack_site(k, a.d))] += v;
  for (const auto& [k, v] : b.mass) bbox[part.box_key(unpack_site(k, b.d))] += v;
  KahanSum s;
  auto ia = abox.begin();
  auto ib = bbox.begin();
  while (ia != abox.end() || ib != bbox.end()) {
    if (ib == bbox.end() || (ia != abox.end() && ia->first < ib->first)) {
      s.add(std::abs(ia->second));
      ++ia;
    } else if (ia == abox.end() || ib->first < ia->first) {
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

// ---------------------------------------------------------------------------
// Scale ladder

struct ScaleLadder {
  std::int64_t N = 0;
  double theta = 0.0;
  std::int64_t M = 0;
  int r = 0;                          // r(N)
  std::vector<std::int64_t> n;        // n_0 = N, n_1 .. n_r
  std::vector<std::int64_t> Nk;       // checkpoint times N_0 .. N_r
  std::vector<int> box_side;          // floor(n_k^theta)
  std::vector<double> lambda;         // filled by scale_ladder
};

inline std::int64_t isqrt_i64(std::int64_t v) {
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(v)));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

// n_j = floor(N^(1/2^j)) via iterated integer square roots; r(N) is minimal
// with n_r^theta <= M.
inline ScaleLadder ladder_arithmetic(std::int64_t N, double theta, std::int64_t M) {
  if (N < 4) throw ConfigError("ladder needs N >= 4");
  if (theta <= 0 || theta >= 1) throw ConfigError("ladder needs theta in (0,1)");
  if (M < 1) throw ConfigError("ladder needs M >= 1");
  ScaleLadder lad;
  lad.N = N;
  lad.theta = theta;
  lad.M = M;
  lad.n.push_back(N);
  if (std::pow(static_cast<double>(N), theta) <= static_cast<double>(M) + 1e-12)
    throw ConfigError("ladder needs N^theta > M so that r(N) >= 1");
  for (;;) {
    const std::int64_t nj = isqrt_i64(lad.n.back());
    lad.n.push_back(nj);
    if (std::pow(static_cast<double>(nj), theta) <= static_cast<double>(M) + 1e-12)
      break;
    if (nj <= 1) break;
  }
  lad.r = static_cast<int>(lad.n.size()) - 1;
  std::int64_t tail = 0;
  for (int j = 1; j <= lad.r; ++j) tail += lad.n[static_cast<std::size_t>(j)];
  const std::int64_t N0 = N - tail;
  if (N0 < 1) throw GeometryError("ladder checkpoints exhaust N; increase N");
  lad.Nk.push_back(N0);
  for (int k = 1; k <= lad.r; ++k)
    lad.Nk.push_back(lad.Nk.back() + lad.n[static_cast<std::size_t>(k)]);
  for (int k = 0; k <= lad.r; ++k)
    lad.box_side.push_back(std::max(
        1, static_cast<int>(std::floor(std::pow(
               static_cast<double>(lad.n[static_cast<std::size_t>(k)]), theta)))));
  return lad;
}

// lambda_k: box-level TV between the exact quenched law and the annealed
// reference at each checkpoint time N_k, boxes of side floor(n_k^theta).
inline ScaleLadder scale_ladder(const BackboneField& f,
                                const std::vector<DistributionSlice>& annealed_at_Nk,
                                std::int64_t N, double theta, std::int64_t M) {
  ScaleLadder lad = ladder_arithmetic(N, theta, M);
  if (annealed_at_Nk.size() != lad.Nk.size())
    throw ConfigError("scale_ladder needs one annealed slice per checkpoint");
  const auto quenched = propagate_quenched_multi(f, Coords{}, 0, lad.Nk);
  for (std::size_t k = 0; k < lad.Nk.size(); ++k) {
    if (annealed_at_Nk[k].time != lad.Nk[k])
      throw GeometryError("annealed slice time does not match checkpoint");
    lad.lambda.push_back(tv_on_boxes(quenched[k], annealed_at_Nk[k],
                                     BoxPartition(f.dim(), lad.box_side[k])));
  }
  return lad;
}

// ---------------------------------------------------------------------------
// Good boxes

struct GoodBoxes {
  std::vector<std::pair<SiteKey, bool>> boxes;  // box id -> good
  double good_fraction = 0.0;
  double threshold = 0.0;
  std::int64_t n_k = 0;
};

// Exact probability of max_{s<=n} |X_s - start| > R via an absorbing DP.
inline double escape_probability(const BackboneField& f, const Coords& start,
                                 std::int64_t m, std::int64_t n, int R) {
  if (R >= n) return 0.0;  // the walk cannot leave the ball
  DensePropagator prop(f, f.bounds(), m, EdgePolicy::strict);
  prop.set_mass(start, 1.0);
  const SpatialBox ball =
      SpatialBox::centered(f.dim(),
                           std::vector<int>(static_cast<std::size_t>(f.dim()), R))
          .shifted(start);
  for (std::int64_t s = 1; s <= n; ++s) {
    prop.step();
    prop.mask_outside(ball);
  }
  return std::max(0.0, 1.0 - prop.total());
}

// A site is good when its xi bit is 0, or both the box-level TV against the
// shifted annealed reference (minus its MC standard error) stays below
// n_k^(theta d - d/2 - eps) and the escape probability stays below
// C n_k^(-c log n_k). A box is good when every site in it is good.
inline GoodBoxes classify_good(const BackboneField& f, const BoxPartition& part,
                               std::int64_t m, std::int64_t n_k, double theta,
                               double eps, const DistributionSlice& annealed_nk,
                               double C, double c, const SpatialBox& region) {
  const int d = f.dim();
  GoodBoxes out;
  out.n_k = n_k;
  out.threshold = std::pow(static_cast<double>(n_k),
                           theta * d - 0.5 * d - eps);
  const int fine_side = std::max(
      1, static_cast<int>(std::floor(std::pow(static_cast<double>(n_k), theta))));
  const BoxPartition fine(d, fine_side);
  const double logn = std::log(static_cast<double>(n_k));
  const double escape_bound = C * std::pow(static_cast<double>(n_k), -c * logn);
  const int escape_radius = static_cast<int>(
      std::floor(std::sqrt(static_cast<double>(n_k)) * logn * logn * logn));

  // shifted annealed box mass around a start x: sum of point estimates
  auto annealed_box = [&](const SpatialBox& box, const Coords& x, double& se2) {
    double a = 0.0;
    se2 = 0.0;
    for_each_site(box, [&](const Coords& z) {
      Coords rel = z;
      for (int i = 0; i < d; ++i)
        rel[static_cast<std::size_t>(i)] -= x[static_cast<std::size_t>(i)];
      const SiteKey k = pack_site(rel, d);
      a += annealed_nk.at(k);
      se2 += annealed_nk.var_at(k);
    });
    return a;
  };

  auto site_good = [&](const Coords& x) {
    if (!f.xi(x, m)) return true;
    if (escape_probability(f, x, m, n_k, escape_radius) > escape_bound)
      return false;
    // sup over fine boxes of |quenched box mass - shifted annealed box mass|
    const DistributionSlice q = propagate_quenched(f, x, m, n_k);
    std::map<SiteKey, double> qbox;
    for (const auto& [k, v] : q.mass)
      qbox[fine.box_key(unpack_site(k, d))] += v;
    std::map<SiteKey, char> keys;
    for (const auto& [bk, v] : qbox) {
      (void)v;
      keys[bk] = 1;
    }
    for (const auto& [k, v] : annealed_nk.mass) {
      (void)v;
      Coords z = unpack_site(k, d);
      for (int i = 0; i < d; ++i)
        z[static_cast<std::size_t>(i)] += x[static_cast<std::size_t>(i)];
      keys[fine.box_key(z)] = 1;
    }
    for (const auto& [bk, dummy] : keys) {
      (void)dummy;
      double se2 = 0.0;
      const double av =
          annealed_box(fine.box_bounds(unpack_site(bk, d)), x, se2);
      const double qv = qbox.count(bk) ? qbox.at(bk) : 0.0;
      if (std::abs(qv - av) - std::sqrt(se2) > out.threshold) return false;
    }
    return true;
  };

  // classify every partition box fully contained in the region
  Coords id_lo = part.box_id(region.lo);
  Coords id_hi = part.box_id(region.hi);
  SpatialBox ids;
  ids.d = d;
  ids.lo = id_lo;
  ids.hi = id_hi;
  int good = 0, total = 0;
  for_each_site(ids, [&](const Coords& id) {
    const SpatialBox box = part.box_bounds(id);
    if (!region.covers(box)) return;
    bool g = true;
    for_each_site(box, [&](const Coords& x) {
      if (g && !site_good(x)) g = false;
    });
    out.boxes.emplace_back(pack_site(id, d), g);
    good += g;
    ++total;
  });
  out.good_fraction =
      total ? static_cast<double>(good) / static_cast<double>(total) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Social boxes

struct SocialBoxes {
  std::vector<std::pair<SiteKey, bool>> boxes;
  double social_fraction = 0.0;
  std::int64_t steps = 0;
};

namespace detail {

// Sites reachable with positive quenched probability after `steps` steps.
inline std::vector<std::uint8_t> walk_support(const BackboneField& f,
                                              const Coords& start, std::int64_t m,
                                              std::int64_t steps) {
  const SpatialBox& box = f.bounds();
  if (!box.contains(f.boundary() == BoundaryMode::periodic ? box.wrap(start)
                                                           : start))
    throw GeometryError("support start outside the window; enlarge the window");
  std::vector<std::uint8_t> cur(static_cast<std::size_t>(box.volume()), 0);
  cur[static_cast<std::size_t>(box.index(
      f.boundary() == BoundaryMode::periodic ? box.wrap(start) : start))] = 1;
  const auto& offs = neighbour_offsets(f.dim());
  const bool wrap = f.boundary() == BoundaryMode::periodic;
  for (std::int64_t s = 0; s < steps; ++s) {
    std::vector<std::uint8_t> nxt(cur.size(), 0);
    for_each_site(box, [&](const Coords& x) {
      if (!cur[static_cast<std::size_t>(box.index(x))]) return;
      const bool on = f.xi(x, m + s);
      for (const Coords& u : offs) {
        Coords y = x;
        for (int i = 0; i < f.dim(); ++i)
          y[static_cast<std::size_t>(i)] += u[static_cast<std::size_t>(i)];
        if (wrap)
          y = box.wrap(y);
        else if (!box.contains(y))
          throw GeometryError("support cone leaves the window; enlarge it");
        if (on && !f.xi(y, m + s + 1)) continue;
        nxt[static_cast<std::size_t>(box.index(y))] = 1;
      }
    });
    cur.swap(nxt);
  }
  return cur;
}

}  // namespace detail

// A box is social at time N when every pair of its sites admits a common
// site with positive quenched probability after ceil(C M) steps.
inline SocialBoxes classify_social(const BackboneField& f, int M, double C,
                                   std::int64_t at_time, const SpatialBox& region) {
  const int d = f.dim();
  const BoxPartition part(d, M);
  SocialBoxes out;
  out.steps = static_cast<std::int64_t>(std::ceil(C * M));
  if (at_time + out.steps + 1 > f.horizon())
    throw GeometryError("social horizon N + ceil(CM) beyond field horizon");
  Coords id_lo = part.box_id(region.lo);
  Coords id_hi = part.box_id(region.hi);
  SpatialBox ids;
  ids.d = d;
  ids.lo = id_lo;
  ids.hi = id_hi;
  int social = 0, total = 0;
  for_each_site(ids, [&](const Coords& id) {
    const SpatialBox box = part.box_bounds(id);
    if (!region.covers(box)) return;
    std::vector<std::vector<std::uint8_t>> supports;
    for_each_site(box, [&](const Coords& x) {
      supports.push_back(detail::walk_support(f, x, at_time, out.steps));
    });
    bool soc = true;
    for (std::size_t i = 0; i < supports.size() && soc; ++i)
      for (std::size_t j = i + 1; j < supports.size() && soc; ++j) {
        bool meet = false;
        for (std::size_t s = 0; s < supports[i].size(); ++s)
          if (supports[i][s] && supports[j][s]) {
            meet = true;
            break;
          }
        if (!meet) soc = false;
      }
    out.boxes.emplace_back(pack_site(id, d), soc);
    social += soc;
    ++total;
  });
  out.social_fraction =
      total ? static_cast<double>(social) / static_cast<double>(total) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Two-stage coupling of the annealed and quenched laws at time N

struct CouplingResult {
  double theta_diag = 0.0;     // probability both walks sit on the same site
  double stage1_diag = 0.0;    // coupled box mass at time N - M
  double stage1_tv = 0.0;      // box-level TV at time N - M
  double marg_res_ann = 0.0;   // sup |Theta ann-marginal - annealed law|
  double marg_res_que = 0.0;   // sup |Theta que-marginal - quenched law|
};

// Stage 1 couples the box laws at time N-M TV-optimally (shared mass on the
// diagonal, surpluses paired in deterministic box order). Stage 2 continues
// both walks conditionally independently to time N.
inline CouplingResult build_coupling(const BackboneField& f, std::int64_t N, int M,
                                     int ann_reps, std::uint64_t ann_seed,
                                     int threads = 1) {
  const int d = f.dim();
  if (N <= M) throw ConfigError("coupling needs N > M");
  const BoxPartition part(d, M);
  check_walk_window(f, Coords{}, 0, N);

  // quenched side: slice at N-M, box masses, per-box continuations
  const auto que = propagate_quenched_multi(f, Coords{}, 0, {N - M, N});
  const DistributionSlice& que_nm = que[0];
  const DistributionSlice& que_n = que[1];
  std::map<SiteKey, double> qbox;
  for (const auto& [k, v] : que_nm.mass)
    qbox[part.box_key(unpack_site(k, d))] += v;
  std::map<SiteKey, std::map<SiteKey, double>> que_cont;  // box -> law at N
  for (const auto& [bk, bq] : qbox) {
    DistributionSlice masked;
    masked.d = d;
    masked.time = N - M;
    const SpatialBox bb = part.box_bounds(unpack_site(bk, d));
    for (const auto& [k, v] : que_nm.mass)
      if (bb.contains(unpack_site(k, d))) masked.mass.emplace(k, v / bq);
    que_cont[bk] = convolve(masked, f, M).slice.mass;
  }

  // annealed side over its own seeded ensemble: box masses at N-M, the law at
  // N, and per-box joint continuations, all from the same environments
  const std::int64_t n_chunks = (ann_reps + 7) / 8;
  struct Part {
    std::map<SiteKey, double> abox;
    std::map<SiteKey, double> law_n;
    std::map<SiteKey, std::map<SiteKey, double>> joint;  // box -> unnormalised
  };
  std::vector<Part> parts(static_cast<std::size_t>(n_chunks));
  parallel_chunks(ann_reps, 8, threads, [&](std::int64_t ci, std::int64_t b,
                                            std::int64_t e) {
    Part part_acc;
    for (std::int64_t r = b; r < e; ++r) {
      const BackboneField fr = make_walk_field(
          d, f.env().p(), rep_seed(ann_seed, static_cast<std::uint64_t>(r)),
          Coords{}, 0, N);
      const auto sl = propagate_quenched_multi(fr, Coords{}, 0, {N - M});
      std::map<SiteKey, std::map<SiteKey, double>> masked_by_box;
      for (const auto& [k, v] : sl[0].mass)
        masked_by_box[part.box_key(unpack_site(k, d))].emplace(k, v);
      for (const auto& [bk, masked] : masked_by_box) {
        DistributionSlice ms;
        ms.d = d;
        ms.time = N - M;
        ms.mass = masked;
        const double bq = ms.total();
        part_acc.abox[bk] += bq;
        const auto cont = convolve(ms, fr, M).slice.mass;
        auto& acc = part_acc.joint[bk];
        for (const auto& [k, v] : cont) {
          acc[k] += v;
          part_acc.law_n[k] += v;
        }
      }
    }
    parts[static_cast<std::size_t>(ci)] = std::move(part_acc);
  });
  std::map<SiteKey, double> abox, ann_n;
  std::map<SiteKey, std::map<SiteKey, double>> ann_joint;
  for (const auto& pt : parts) {
    for (const auto& [k, v] : pt.abox) abox[k] += v;
    for (const auto& [k, v] : pt.law_n) ann_n[k] += v;
    for (const auto& [bk, mp] : pt.joint)
      for (const auto& [k, v] : mp) ann_joint[bk][k] += v;
  }
  const double R = static_cast<double>(ann_reps);
  for (auto& [k, v] : abox) v /= R;
  for (auto& [k, v] : ann_n) v /= R;
  for (auto& [bk, mp] : ann_joint)
    for (auto& [k, v] : mp) v /= R;

  // stage 1: TV-optimal coupling of the box laws (shared mass on the
  // diagonal, surpluses paired in deterministic box order)
  CouplingResult res;
  std::map<std::pair<SiteKey, SiteKey>, double> theta1;
  {
    std::map<SiteKey, char> keys;
    for (const auto& [k, v] : abox) {
      (void)v;
      keys[k] = 1;
    }
    for (const auto& [k, v] : qbox) {
      (void)v;
      keys[k] = 1;
    }
    std::map<SiteKey, double> a_sur, q_sur;
    KahanSum diag, tv;
    for (const auto& [k, dummy] : keys) {
      (void)dummy;
      const double a = abox.count(k) ? abox.at(k) : 0.0;
      const double q = qbox.count(k) ? qbox.at(k) : 0.0;
      const double shared = std::min(a, q);
      if (shared > 0) theta1[{k, k}] = shared;
      if (a > q) a_sur[k] = a - q;
      if (q > a) q_sur[k] = q - a;
      diag.add(shared);
      tv.add(std::abs(a - q));
    }
    auto ia = a_sur.begin();
    auto iq = q_sur.begin();
    while (ia != a_sur.end() && iq != q_sur.end()) {
      const double m2 = std::min(ia->second, iq->second);
      if (m2 > 0) theta1[{ia->first, iq->first}] += m2;
      ia->second -= m2;
      iq->second -= m2;
      if (ia->second <= 1e-300) ++ia;
      if (iq != q_sur.end() && iq->second <= 1e-300) ++iq;
    }
    res.stage1_diag = diag.value();
    res.stage1_tv = tv.value();
  }

  // stage 2: conditionally independent continuations
  KahanSum theta_diag;
  std::map<SiteKey, double> marg_a, marg_q;
  for (const auto& [pair_key, w] : theta1) {
    const SiteKey ba = pair_key.first, bq = pair_key.second;
    if (!ann_joint.count(ba) || !que_cont.count(bq)) continue;
    const auto& ja = ann_joint.at(ba);
    const double anorm = abox.at(ba);
    const auto& jq = que_cont.at(bq);
    KahanSum dot;
    auto it1 = ja.begin();
    auto it2 = jq.begin();
    while (it1 != ja.end() && it2 != jq.end()) {
      if (it1->first < it2->first)
        ++it1;
      else if (it2->first < it1->first)
        ++it2;
      else {
        dot.add((it1->second / anorm) * it2->second);
        ++it1;
        ++it2;
      }
    }
    theta_diag.add(w * dot.value());
    for (const auto& [k, v] : ja) marg_a[k] += w * v / anorm;
    for (const auto& [k, v] : jq) marg_q[k] += w * v;
  }
  res.theta_diag = theta_diag.value();
  for (const auto& [k, v] : ann_n)
    res.marg_res_ann = std::max(res.marg_res_ann,
                                std::abs(v - (marg_a.count(k) ? marg_a[k] : 0.0)));
  for (const auto& [k, v] : marg_a)
    if (!ann_n.count(k)) res.marg_res_ann = std::max(res.marg_res_ann, v);
  for (const auto& [k, v] : que_n.mass)
    res.marg_res_que = std::max(res.marg_res_que,
                                std::abs(v - (marg_q.count(k) ? marg_q[k] : 0.0)));
  for (const auto& [k, v] : marg_q)
    if (!que_n.mass.count(k)) res.marg_res_que = std::max(res.marg_res_que, v);
  return res;
}

// ---------------------------------------------------------------------------
// Pair mixing and derivative estimates

// True total variation distance of the exact quenched laws from two starts.
inline double pair_tv(const BackboneField& f, const Coords& x, const Coords& y,
                      std::int64_t n, std::int64_t m = 0) {
  const auto a = propagate_quenched(f, x, m, n);
  const auto b = propagate_quenched(f, y, m, n);
  return 0.5 * l1_distance(a, b);
}

struct DerivativeRow {
  std::int64_t n = 0;
  double start_space = 0.0;   // scaled sup over targets, start shifted by e_1
  double start_time = 0.0;    // start shifted by one time step
  double target_space = 0.0;  // target shifted by e_1
  double target_time = 0.0;   // slice n vs n-1
  double partition_stat = 0.0;
  double se_start_space = 0.0;
  double se_start_time = 0.0;
  int reps = 0;
};

// Paired-seed annealed differences scaled by n^((d+1)/2), plus the partition
// max-minus-value statistic scaled by n^(1/2 - 3 d eps).
inline DerivativeRow derivative_estimates_at(int d, double p, std::int64_t n,
                                             int reps, std::uint64_t seed,
                                             double part_eps, int threads = 1) {
  SpatialBox box = SpatialBox::centered(
      d, std::vector<int>(static_cast<std::size_t>(d), static_cast<int>(n) + 1));
  const std::size_t vol = static_cast<std::size_t>(box.volume());
  struct Part {
    std::vector<double> base, b2, ds, ds2, dt, dt2, prev;
  };
  const std::int64_t n_chunks = (reps + 7) / 8;
  std::vector<Part> parts(static_cast<std::size_t>(n_chunks));
  Coords e1{};
  e1[0] = 1;
  parallel_chunks(reps, 8, threads, [&](std::int64_t ci, std::int64_t b,
                                        std::int64_t e) {
    Part pt;
    pt.base.assign(vol, 0.0);
    pt.b2.assign(vol, 0.0);
    pt.ds.assign(vol, 0.0);
    pt.ds2.assign(vol, 0.0);
    pt.dt.assign(vol, 0.0);
    pt.dt2.assign(vol, 0.0);
    pt.prev.assign(vol, 0.0);
    for (std::int64_t r = b; r < e; ++r) {
      const std::uint64_t s = rep_seed(seed, static_cast<std::uint64_t>(r));
      const BackboneField f0 =
          make_walk_field(d, p, s, Coords{}, 0, n, FieldOptions{.extra_extent = 1});
      const auto sl = propagate_quenched_multi(f0, Coords{}, 0, {n - 1, n});
      const auto s_shift = propagate_quenched(f0, e1, 0, n);
      // one fewer step from time 1 reaches the same slice n
      DensePropagator prop(f0, f0.bounds(), 1, EdgePolicy::strict);
      prop.set_mass(Coords{}, 1.0);
      for (std::int64_t t = 0; t < n - 1; ++t) prop.step();
      const auto t_shift = prop.sparse();
      auto add = [&](const std::map<SiteKey, double>& mp, std::vector<double>& acc,
                     std::vector<double>* acc2, double sign) {
        for (const auto& [k, v] : mp) {
          const Coords x = unpack_site(k, d);
          if (!box.contains(x)) continue;
          const auto idx = static_cast<std::size_t>(box.index(x));
          acc[idx] += sign * v;
          (void)acc2;
        }
      };
      add(sl[1].mass, pt.base, nullptr, 1.0);
      for (const auto& [k, v] : sl[1].mass) {
        const auto idx = static_cast<std::size_t>(box.index(unpack_site(k, d)));
        pt.b2[idx] += v * v;
      }
      add(sl[0].mass, pt.prev, nullptr, 1.0);
      // per-env paired differences with their squares
      std::map<SiteKey, double> dsm, dtm;
      for (const auto& [k, v] : s_shift.mass) dsm[k] += v;
      for (const auto& [k, v] : sl[1].mass) dsm[k] -= v;
      for (const auto& [k, v] : t_shift) dtm[k] += v;
      for (const auto& [k, v] : sl[1].mass) dtm[k] -= v;
      for (const auto& [k, v] : dsm) {
        const Coords x = unpack_site(k, d);
        if (!box.contains(x)) continue;
        const auto idx = static_cast<std::size_t>(box.index(x));
        pt.ds[idx] += v;
        pt.ds2[idx] += v * v;
      }
      for (const auto& [k, v] : dtm) {
        const Coords x = unpack_site(k, d);
        if (!box.contains(x)) continue;
        const auto idx = static_cast<std::size_t>(box.index(x));
        pt.dt[idx] += v;
        pt.dt2[idx] += v * v;
      }
    }
    parts[static_cast<std::size_t>(ci)] = std::move(pt);
  });
  Part tot;
  tot.base.assign(vol, 0.0);
  tot.b2.assign(vol, 0.0);
  tot.ds.assign(vol, 0.0);
  tot.ds2.assign(vol, 0.0);
  tot.dt.assign(vol, 0.0);
  tot.dt2.assign(vol, 0.0);
  tot.prev.assign(vol, 0.0);
  for (const auto& pt : parts)
    for (std::size_t i = 0; i < vol; ++i) {
      tot.base[i] += pt.base[i];
      tot.b2[i] += pt.b2[i];
      tot.ds[i] += pt.ds[i];
      tot.ds2[i] += pt.ds2[i];
      tot.dt[i] += pt.dt[i];
      tot.dt2[i] += pt.dt2[i];
      tot.prev[i] += pt.prev[i];
    }
  const double R = static_cast<double>(reps);
  const double scale = std::pow(static_cast<double>(n), 0.5 * (d + 1));
  DerivativeRow row;
  row.n = n;
  row.reps = reps;
  auto sup_scaled = [&](const std::vector<double>& sum,
                        const std::vector<double>& sumsq, double& se_out) {
    double best = 0.0, se = 0.0;
    for (std::size_t i = 0; i < vol; ++i) {
      const double mean = std::abs(sum[i] / R);
      if (mean > best) {
        best = mean;
        if (reps > 1) {
          const double v =
              std::max(0.0, (sumsq[i] - sum[i] * sum[i] / R) / (R - 1.0) / R);
          se = std::sqrt(v);
        }
      }
    }
    se_out = se * scale;
    return best * scale;
  };
  row.start_space = sup_scaled(tot.ds, tot.ds2, row.se_start_space);
  row.start_time = sup_scaled(tot.dt, tot.dt2, row.se_start_time);
  // target shifts from the mean slice
  double ts = 0.0, tt = 0.0;
  for_each_site(box, [&](const Coords& x) {
    const auto i = static_cast<std::size_t>(box.index(x));
    Coords xe = x;
    xe[0] += 1;
    double neighbour = 0.0;
    if (box.contains(xe))
      neighbour = tot.base[static_cast<std::size_t>(box.index(xe))];
    ts = std::max(ts, std::abs(tot.base[i] - neighbour) / R);
    tt = std::max(tt, std::abs(tot.base[i] - tot.prev[i]) / R);
  });
  row.target_space = ts * scale;
  row.target_time = tt * scale;
  // partition statistic on the mean slice
  const int side = std::max(
      1, static_cast<int>(std::floor(std::pow(static_cast<double>(n), part_eps))));
  const BoxPartition part(d, side);
  std::map<SiteKey, double> box_max;
  std::map<SiteKey, double> box_sum;
  std::map<SiteKey, std::int64_t> box_cnt;
  for_each_site(box, [&](const Coords& x) {
    const double v = tot.base[static_cast<std::size_t>(box.index(x))] / R;
    const SiteKey bk = part.box_key(x);
    auto it = box_max.find(bk);
    if (it == box_max.end() || v > it->second) box_max[bk] = v;
    box_sum[bk] += v;
    box_cnt[bk] += 1;
  });
  KahanSum pstat;
  for (const auto& [bk, mx] : box_max)
    pstat.add(mx * static_cast<double>(box_cnt[bk]) - box_sum[bk]);
  row.partition_stat =
      pstat.value() * std::pow(static_cast<double>(n), 0.5 - 3.0 * d * part_eps);
  return row;
}

}  // namespace opwalk
