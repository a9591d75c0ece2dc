#pragma once

// Experiment drivers: reproducible named diagnostics over the simulation
// modules, with seed management, annealed-law caching and CSV report output.

#include <chrono>
#include <ctime>
#include <filesystem>

#include "json.hpp"
#include "opwalk/cache.hpp"
#include "opwalk/config.hpp"
#include "opwalk/experiments.hpp"
#include "opwalk/report.hpp"

namespace opwalk {

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "gen",     "backbone",  "propagate",   "annealed",    "prefactor",
      "qlclt",   "lclt",      "ladder",      "goodboxes",   "socialboxes",
      "couple",  "pairtv",    "intersect",   "hits",        "hybrid",
      "derivatives", "invariance", "pc"};
  return names;
}

namespace detail {

inline std::uint64_t quenched_seed(const ExperimentConfig& c, int s) {
  return rep_seed(c.seed_base, static_cast<std::uint64_t>(s));
}

inline std::uint64_t annealed_seed(const ExperimentConfig& c) {
  return mix64(c.seed_base ^ 0xa11ea1edULL);
}

inline FieldOptions field_options(const ExperimentConfig& c,
                                  BoundaryMode boundary = BoundaryMode::open,
                                  int extra = 0) {
  FieldOptions o;
  o.boundary = boundary;
  o.horizon_margin = c.horizon_margin;
  o.extra_extent = extra;
  return o;
}

inline void write_slice_csv(const std::string& path, const DistributionSlice& sl) {
  std::ostringstream os;
  for (int i = 0; i < sl.d; ++i) os << 'x' << i + 1 << ',';
  os << "mass\n";
  for (const auto& [k, v] : sl.mass) {
    const Coords x = unpack_site(k, sl.d);
    for (int i = 0; i < sl.d; ++i) os << x[static_cast<std::size_t>(i)] << ',';
    os << format_g(v, 17) << '\n';
  }
  write_text_file(path, os.str());
}

inline void write_slice_sidecar(const std::string& path, const DistributionSlice& sl,
                                double p) {
  nlohmann::json j;
  j["label"] = to_string(sl.label);
  j["n"] = sl.time;
  j["p"] = p;
  j["d"] = sl.d;
  j["exact"] = sl.prov.exact;
  j["reps"] = sl.prov.reps;
  j["seed"] = sl.prov.base_seed;
  write_text_file(path, j.dump(2) + "\n");
}

inline void write_prefactor_csv(const std::string& path, const PrefactorSlice& psi) {
  std::ostringstream os;
  for (int i = 0; i < psi.d; ++i) os << 'x' << i + 1 << ',';
  os << "value\n";
  for_each_site(psi.region, [&](const Coords& x) {
    for (int i = 0; i < psi.d; ++i) os << x[static_cast<std::size_t>(i)] << ',';
    os << format_g(psi.at(x), 17) << '\n';
  });
  write_text_file(path, os.str());
}

inline void write_prefactor_sidecar(const std::string& path,
                                    const PrefactorSlice& psi, double p) {
  nlohmann::json j;
  j["n"] = psi.time;
  j["N"] = psi.depth;
  j["horizon"] = psi.horizon;
  j["boundary"] = to_string(psi.boundary);
  j["p"] = p;
  j["d"] = psi.d;
  write_text_file(path, j.dump(2) + "\n");
}

inline void add_median(DiagnosticReport& rep, const std::string& stat,
                       std::vector<double> vals, std::int64_t n,
                       const ExperimentConfig& c) {
  if (vals.empty()) return;
  rep.add(stat, n, c.p, c.d, 0, median_of(std::move(vals)));
}

// ---------------------------------------------------------------------------

inline void run_gen(const ExperimentConfig& c, DiagnosticReport& rep,
                    const std::string& out) {
  const int extent = static_cast<int>(c.get_int("extent", 50));
  const std::int64_t t_hi = c.get_int("t_hi", 50);
  const BoundaryMode bm = c.get_str("boundary", "open") == "periodic"
                              ? BoundaryMode::periodic
                              : BoundaryMode::open;
  for (int s = 0; s < c.seeds; ++s) {
    const auto env = EnvironmentWindow::sample(
        c.d, std::vector<int>(static_cast<std::size_t>(c.d), extent), 0, t_hi,
        c.p, quenched_seed(c, s), bm);
    {
      std::ofstream os(out + "/field_s" + std::to_string(s) + ".opw1",
                       std::ios::binary);
      env.write_binary(os);
    }
    const std::int64_t volume = env.slice_volume() * (t_hi + 1);
    if (c.get_int("text_dump", volume <= 20000 ? 1 : 0)) {
      std::ofstream os(out + "/field_s" + std::to_string(s) + ".txt");
      env.write_sparse_text(os);
    }
    rep.add("open_fraction", 0, c.p, c.d, quenched_seed(c, s),
            env.slice_open_fraction(0));
  }
}

inline void run_backbone(const ExperimentConfig& c, DiagnosticReport& rep,
                         const std::string& out) {
  const std::int64_t horizon = c.n_list.front();
  const int extent = static_cast<int>(c.get_int("extent", 40));
  for (int s = 0; s < c.seeds; ++s) {
    const auto env = EnvironmentWindow::sample(
        c.d, std::vector<int>(static_cast<std::size_t>(c.d), extent), 0, horizon,
        c.p, quenched_seed(c, s), BoundaryMode::open);
    const BackboneField f(env, horizon);
    {
      std::ofstream os(out + "/backbone_s" + std::to_string(s) + ".opb1",
                       std::ios::binary);
      f.write_binary(os);
    }
    rep.add("xi_density_t0", 0, c.p, c.d, quenched_seed(c, s), f.slice_density(0));
    rep.add("xi_density_mid", horizon / 2, c.p, c.d, quenched_seed(c, s),
            f.slice_density(horizon / 2));
  }
}

inline void run_propagate(const ExperimentConfig& c, DiagnosticReport& rep,
                          const std::string& out) {
  const std::int64_t n_max = *std::max_element(c.n_list.begin(), c.n_list.end());
  for (int s = 0; s < c.seeds; ++s) {
    const auto f = make_walk_field(c.d, c.p, quenched_seed(c, s), Coords{}, 0,
                                   n_max, field_options(c));
    std::vector<std::int64_t> cps(c.n_list.begin(), c.n_list.end());
    std::sort(cps.begin(), cps.end());
    const auto slices = propagate_quenched_multi(f, Coords{}, 0, cps);
    for (const auto& sl : slices) {
      const std::string base = out + "/quenched_n" + std::to_string(sl.time) +
                               "_s" + std::to_string(s);
      write_slice_csv(base + ".csv", sl);
      write_slice_sidecar(base + ".json", sl, c.p);
      rep.add("mass_drift", sl.time, c.p, c.d, quenched_seed(c, s),
              sl.mass_drift());
      rep.add("support_radius", sl.time, c.p, c.d, quenched_seed(c, s),
              sl.support_radius(Coords{}));
    }
  }
}

inline void run_annealed(const ExperimentConfig& c, DiagnosticReport& rep,
                         const std::string& out) {
  const std::string mode = c.get_str("mode", "mc");
  if (mode == "exact") {
    for (auto n : c.n_list) {
      const auto sl = estimate_annealed_exact(c.d, c.p, Coords{}, 0, n);
      const std::string base = out + "/annealed_exact_n" + std::to_string(n);
      write_slice_csv(base + ".csv", sl);
      write_slice_sidecar(base + ".json", sl, c.p);
      rep.add("annealed_total", n, c.p, c.d, 0, sl.total());
    }
    return;
  }
  const int reps = static_cast<int>(c.get_int("reps", 2000));
  AnnealedCache cache;
  AnnealedOptions opt;
  opt.field = field_options(c);
  opt.threads = c.threads;
  std::vector<std::int64_t> cps(c.n_list.begin(), c.n_list.end());
  std::sort(cps.begin(), cps.end());
  const auto slices =
      cache.ensemble(c.d, c.p, Coords{}, 0, cps, reps, annealed_seed(c), opt);
  for (const auto& sl : slices) {
    const std::string base = out + "/annealed_n" + std::to_string(sl.time);
    write_slice_csv(base + ".csv", sl);
    write_slice_sidecar(base + ".json", sl, c.p);
    double max_se = 0.0;
    for (const auto& [k, v] : sl.var) {
      (void)k;
      max_se = std::max(max_se, std::sqrt(v));
    }
    rep.add("annealed_total", sl.time, c.p, c.d, annealed_seed(c), sl.total());
    rep.add("annealed_max_stderr", sl.time, c.p, c.d, annealed_seed(c), max_se);
  }
}

inline void run_prefactor(const ExperimentConfig& c, DiagnosticReport& rep,
                          const std::string& out) {
  const int N = static_cast<int>(c.get_int("depth", 16));
  const int extent = static_cast<int>(c.get_int("extent", 64));
  const double epsilon = c.get_num("epsilon", 0.25);
  const auto m_list = c.get_int_list("M", {4, 16});
  const std::int64_t margin = c.horizon_margin >= 0 ? c.horizon_margin : 50;
  const std::int64_t horizon = N + 1 + margin;
  for (int s = 0; s < c.seeds; ++s) {
    auto env = EnvironmentWindow::sample(
        c.d, std::vector<int>(static_cast<std::size_t>(c.d), extent), 0, horizon,
        c.p, quenched_seed(c, s), BoundaryMode::periodic);
    const BackboneField f(std::move(env), horizon);
    const PrefactorSlice psi = compute_prefactor(f, N, N);
    const std::string base =
        out + "/prefactor_N" + std::to_string(N) + "_s" + std::to_string(s);
    write_prefactor_csv(base + ".csv", psi);
    write_prefactor_sidecar(base + ".json", psi, c.p);
    rep.add("psi_slice_mean", N, c.p, c.d, quenched_seed(c, s), psi.mean());
    rep.add("harmonicity_residual", N, c.p, c.d, quenched_seed(c, s),
            check_harmonicity(f, N, std::min(N, 8)));
    for (auto M : m_list) {
      const auto bc = box_concentration(psi, static_cast<int>(M), epsilon);
      rep.add("box_exceed_fraction", M, c.p, c.d, quenched_seed(c, s),
              bc.exceed_fraction);
    }
  }
}

inline void run_qlclt(const ExperimentConfig& c, DiagnosticReport& rep,
                      const std::string&) {
  const int reps = static_cast<int>(c.get_int("reps", 4000));
  const std::int64_t depth_key = c.get_int("prefactor_depth", 0);
  std::vector<std::int64_t> cps(c.n_list.begin(), c.n_list.end());
  std::sort(cps.begin(), cps.end());
  const std::int64_t n_max = cps.back();
  AnnealedCache cache;
  AnnealedOptions aopt;
  aopt.field = field_options(c);
  aopt.threads = c.threads;
  const auto ann =
      cache.ensemble(c.d, c.p, Coords{}, 0, cps, reps, annealed_seed(c), aopt);
  std::map<std::int64_t, std::vector<double>> err_by_n, z_by_n;
  const auto depth = [&](std::int64_t n) {
    return static_cast<int>(depth_key > 0 ? std::min<std::int64_t>(depth_key, n) : n);
  };
  for (int s = 0; s < c.seeds; ++s) {
    const auto f = make_walk_field(
        c.d, c.p, quenched_seed(c, s), Coords{}, 0, n_max,
        field_options(c, BoundaryMode::open, static_cast<int>(depth(n_max)) + 2));
    const auto que = propagate_quenched_multi(f, Coords{}, 0, cps);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      const std::int64_t n = cps[i];
      const int N = depth(n);
      const SpatialBox core = f.bounds().shrunk(N + 1);
      const PrefactorSlice psi = cesaro_prefactor(f, n, N, core);
      const double err = qlclt_error(que[i], ann[i], psi);
      const double z = ann_times_pre(ann[i], psi).Z;
      err_by_n[n].push_back(err);
      z_by_n[n].push_back(z);
      rep.add("qlclt_error", n, c.p, c.d, quenched_seed(c, s), err);
      rep.add("Z", n, c.p, c.d, quenched_seed(c, s), z);
      if (que[i].mass_drift() > 1e-9)
        rep.add("mass_drift_defect", n, c.p, c.d, quenched_seed(c, s),
                que[i].mass_drift());
    }
  }
  for (auto n : cps) {
    add_median(rep, "qlclt_error_median", err_by_n[n], n, c);
    add_median(rep, "Z_median", z_by_n[n], n, c);
    int in_window = 0;
    for (double z : z_by_n[n]) in_window += (z >= 0.9 && z <= 1.1);
    rep.add("Z_in_0.9_1.1_fraction", n, c.p, c.d, 0,
            static_cast<double>(in_window) /
                static_cast<double>(z_by_n[n].size()));
  }
}

inline void run_lclt(const ExperimentConfig& c, DiagnosticReport& rep,
                     const std::string&) {
  const int reps = static_cast<int>(c.get_int("reps", 2000));
  const double sigma2_key = c.get_num("sigma2", 0.0);
  std::vector<std::int64_t> cps(c.n_list.begin(), c.n_list.end());
  std::sort(cps.begin(), cps.end());
  AnnealedCache cache;
  AnnealedOptions aopt;
  aopt.field = field_options(c);
  aopt.threads = c.threads;
  const auto ann =
      cache.ensemble(c.d, c.p, Coords{}, 0, cps, reps, annealed_seed(c), aopt);
  double sigma2 = sigma2_key;
  if (sigma2 <= 0.0) {
    if (cps.size() < 2)
      throw ConfigError("lclt needs sigma2 or >= 2 values of n to estimate it");
    const auto est = estimate_sigma2(ann, cps);
    sigma2 = est.sigma2;
    rep.add("sigma2_estimate", cps.back(), c.p, c.d, annealed_seed(c), est.sigma2);
    rep.add("sigma2_isotropy_rel_dev", cps.back(), c.p, c.d, annealed_seed(c),
            est.isotropy_rel_dev);
    for (int a = 0; a < c.d; ++a)
      rep.add("sigma2_axis" + std::to_string(a + 1), cps.back(), c.p, c.d,
              annealed_seed(c), est.per_axis[static_cast<std::size_t>(a)]);
  }
  for (std::size_t i = 0; i < cps.size(); ++i) {
    GaussianReference ref{c.d, sigma2, cps[i]};
    rep.add("lclt_error", cps[i], c.p, c.d, annealed_seed(c),
            lclt_error(ann[i], ref));
  }
}

inline void run_ladder(const ExperimentConfig& c, DiagnosticReport& rep,
                       const std::string& out) {
  const std::int64_t N = *std::max_element(c.n_list.begin(), c.n_list.end());
  const double theta = c.get_num("theta", 0.4);
  const std::int64_t M = c.get_int("M", 2);
  const int reps = static_cast<int>(c.get_int("reps", 300));
  const double bound_C = c.get_num("ladder_C", 1.0);
  const double bound_alpha = c.get_num("ladder_alpha", 0.1);
  const ScaleLadder arithmetic = ladder_arithmetic(N, theta, M);
  AnnealedCache cache;
  AnnealedOptions aopt;
  aopt.field = field_options(c);
  aopt.threads = c.threads;
  const auto ann = cache.ensemble(c.d, c.p, Coords{}, 0, arithmetic.Nk, reps,
                                  annealed_seed(c), aopt);
  int ok_count = 0;
  for (int s = 0; s < c.seeds; ++s) {
    const auto f = make_walk_field(c.d, c.p, quenched_seed(c, s), Coords{}, 0, N,
                                   field_options(c));
    const ScaleLadder lad = scale_ladder(f, ann, N, theta, M);
    std::ostringstream os;
    os << "k,n_k,N_k,lambda_k\n";
    bool ok = true;
    for (int k = 0; k <= lad.r; ++k) {
      os << k << ',' << lad.n[static_cast<std::size_t>(k)] << ','
         << lad.Nk[static_cast<std::size_t>(k)] << ','
         << format_g(lad.lambda[static_cast<std::size_t>(k)], 17) << '\n';
      rep.add("lambda_k", lad.Nk[static_cast<std::size_t>(k)], c.p, c.d,
              quenched_seed(c, s), lad.lambda[static_cast<std::size_t>(k)]);
      if (k >= 1) {
        const double allowance =
            bound_C * std::pow(static_cast<double>(
                                   lad.n[static_cast<std::size_t>(k)]),
                               -bound_alpha);
        if (lad.lambda[static_cast<std::size_t>(k)] >
            lad.lambda[static_cast<std::size_t>(k - 1)] + allowance)
          ok = false;
      }
    }
    write_text_file(out + "/ladder_s" + std::to_string(s) + ".csv", os.str());
    rep.add("ladder_ok", N, c.p, c.d, quenched_seed(c, s), ok ? 1.0 : 0.0);
    ok_count += ok;
  }
  rep.add("ladder_ok_fraction", N, c.p, c.d, 0,
          static_cast<double>(ok_count) / static_cast<double>(c.seeds));
}

inline void run_goodboxes(const ExperimentConfig& c, DiagnosticReport& rep,
                          const std::string&) {
  const double theta = c.get_num("theta", 0.4);
  const double eps = c.get_num("eps", 0.05);
  const double C = c.get_num("C", 1.0);
  const double cc = c.get_num("c", 0.01);
  const int region_boxes = static_cast<int>(c.get_int("region_boxes", 6));
  const int reps = static_cast<int>(c.get_int("reps", 2000));
  AnnealedCache cache;
  AnnealedOptions aopt;
  aopt.field = field_options(c);
  aopt.threads = c.threads;
  std::map<std::int64_t, std::vector<double>> frac_by_nk;
  for (auto n_k : c.n_list) {
    const int coarse_side = std::max(
        1, static_cast<int>(std::floor(
               std::pow(static_cast<double>(n_k * n_k), theta))));
    const int R = (region_boxes * coarse_side) / 2 + coarse_side;
    const auto ann = cache.ensemble(c.d, c.p, Coords{}, 0, {n_k}, reps,
                                    annealed_seed(c), aopt);
    for (int s = 0; s < c.seeds; ++s) {
      const auto f = make_walk_field(
          c.d, c.p, quenched_seed(c, s), Coords{}, 0, n_k,
          field_options(c, BoundaryMode::open, R + 2));
      const SpatialBox region = SpatialBox::centered(
          c.d, std::vector<int>(static_cast<std::size_t>(c.d), R));
      const auto gb = classify_good(f, BoxPartition(c.d, coarse_side), 0, n_k,
                                    theta, eps, ann.front(), C, cc, region);
      frac_by_nk[n_k].push_back(gb.good_fraction);
      rep.add("good_fraction", n_k, c.p, c.d, quenched_seed(c, s),
              gb.good_fraction);
    }
    add_median(rep, "good_fraction_median", frac_by_nk[n_k], n_k, c);
  }
}

inline void run_socialboxes(const ExperimentConfig& c, DiagnosticReport& rep,
                            const std::string&) {
  const auto m_list = c.get_int_list("M", {2, 4, 8});
  const double C = c.get_num("C", 4.0);
  const int region_boxes = static_cast<int>(c.get_int("region_boxes", 32));
  for (auto M : m_list) {
    const auto steps = static_cast<std::int64_t>(
        std::ceil(C * static_cast<double>(M)));
    const int R = static_cast<int>(region_boxes * M / 2 + M);
    std::vector<double> fracs;
    std::int64_t nonsocial = 0, total = 0;
    for (int s = 0; s < c.seeds; ++s) {
      const auto f = make_walk_field(
          c.d, c.p, quenched_seed(c, s), Coords{}, 0, steps,
          field_options(c, BoundaryMode::open, R + 2));
      const SpatialBox region = SpatialBox::centered(
          c.d, std::vector<int>(static_cast<std::size_t>(c.d), R));
      const auto sb = classify_social(f, static_cast<int>(M), C, 0, region);
      fracs.push_back(1.0 - sb.social_fraction);
      for (const auto& [bk, soc] : sb.boxes) {
        (void)bk;
        ++total;
        nonsocial += !soc;
      }
      rep.add("nonsocial_fraction", M, c.p, c.d, quenched_seed(c, s),
              1.0 - sb.social_fraction);
    }
    add_median(rep, "nonsocial_fraction_median", fracs, M, c);
    rep.add("nonsocial_fraction_pooled", M, c.p, c.d, 0,
            total ? static_cast<double>(nonsocial) / static_cast<double>(total)
                  : 0.0,
            0.0);
    rep.add("nonsocial_boxes_pooled", M, c.p, c.d, 0,
            static_cast<double>(nonsocial));
  }
}

inline void run_couple(const ExperimentConfig& c, DiagnosticReport& rep,
                       const std::string&) {
  const std::int64_t N = c.n_list.front();
  const int M = static_cast<int>(c.get_int("M", 5));
  const int reps = static_cast<int>(c.get_int("reps", 400));
  for (int s = 0; s < c.seeds; ++s) {
    const auto f = make_walk_field(c.d, c.p, quenched_seed(c, s), Coords{}, 0, N,
                                   field_options(c));
    const auto res = build_coupling(f, N, M, reps, annealed_seed(c), c.threads);
    rep.add("theta_diag", N, c.p, c.d, quenched_seed(c, s), res.theta_diag);
    rep.add("stage1_diag", N, c.p, c.d, quenched_seed(c, s), res.stage1_diag);
    rep.add("stage1_tv", N, c.p, c.d, quenched_seed(c, s), res.stage1_tv);
    rep.add("coupling_marginal_residual_ann", N, c.p, c.d, quenched_seed(c, s),
            res.marg_res_ann);
    rep.add("coupling_marginal_residual_que", N, c.p, c.d, quenched_seed(c, s),
            res.marg_res_que);
  }
}

inline void run_pairtv(const ExperimentConfig& c, DiagnosticReport& rep,
                       const std::string&) {
  const int sep = static_cast<int>(c.get_int("separation", 1));
  std::vector<std::int64_t> cps(c.n_list.begin(), c.n_list.end());
  std::sort(cps.begin(), cps.end());
  const std::int64_t n_max = cps.back();
  std::map<std::int64_t, std::vector<double>> tv_by_n;
  for (int s = 0; s < c.seeds; ++s) {
    const auto f = make_walk_field(c.d, c.p, quenched_seed(c, s), Coords{}, 0,
                                   n_max, field_options(c, BoundaryMode::open,
                                                        sep + 24));
    // adjacent on-cluster pair nearest to the origin
    bool found = false;
    Coords a{}, b{};
    for (int x = 0; x <= 20 && !found; x = x >= 0 ? -(x + 1) : -x) {
      Coords u{};
      u[0] = x;
      Coords v = u;
      v[0] += sep;
      if (f.xi(u, 0) && f.xi(v, 0)) {
        a = u;
        b = v;
        found = true;
      }
    }
    if (!found) {
      rep.add("pairtv_skipped", 0, c.p, c.d, quenched_seed(c, s), 1.0);
      continue;
    }
    for (auto n : cps) {
      const double tv = pair_tv(f, a, b, n);
      tv_by_n[n].push_back(tv);
      rep.add("pair_tv", n, c.p, c.d, quenched_seed(c, s), tv);
    }
  }
  for (auto n : cps) add_median(rep, "pair_tv_median", tv_by_n[n], n, c);
}

inline void run_intersect(const ExperimentConfig& c, DiagnosticReport& rep,
                          const std::string&) {
  const auto m_list = c.get_int_list("M", {2, 4, 8});
  const double C = c.get_num("C", 4.0);
  for (auto M : m_list) {
    const auto T = static_cast<std::int64_t>(std::ceil(C * static_cast<double>(M)));
    const std::int64_t deep = T + c.get_int("deep_margin", 50);
    const int extent = static_cast<int>(deep + M + 2);
    int valid = 0, misses = 0;
    for (int s = 0; s < c.seeds; ++s) {
      const auto env = EnvironmentWindow::sample(
          c.d, std::vector<int>(static_cast<std::size_t>(c.d), extent), 0, deep,
          c.p, quenched_seed(c, s), BoundaryMode::open);
      Coords x{}, y{};
      y[0] = static_cast<int>(M);
      const BackboneField bb(env, deep);
      if (!bb.xi(x, 0) || !bb.xi(y, 0)) continue;  // needs both on the cluster
      ++valid;
      if (!intersection_time(env, x, y, 0, T)) ++misses;
    }
    rep.add("nonintersect_fraction", M, c.p, c.d, 0,
            valid ? static_cast<double>(misses) / valid : 0.0);
    rep.add("intersect_valid_seeds", M, c.p, c.d, 0, valid);
  }
}

inline void run_hits(const ExperimentConfig& c, DiagnosticReport& rep,
                     const std::string&) {
  const int reps = static_cast<int>(c.get_int("reps", 10000));
  std::vector<double> xs, ys;
  int zero_points = 0;
  for (auto n : c.n_list) {
    const auto h = hitting_tail(c.d, c.p, n, reps, c.seed_base,
                                field_options(c), c.threads);
    rep.add("hit_frequency", n, c.p, c.d, c.seed_base, h.frequency, h.stderr_);
    if (h.frequency > 0.0) {
      xs.push_back(static_cast<double>(n));
      ys.push_back(std::log(h.frequency));
    } else {
      ++zero_points;
    }
  }
  rep.add("hits_zero_points", 0, c.p, c.d, c.seed_base, zero_points);
  if (xs.size() >= 2) {
    const LinearFit fit = linear_fit(xs, ys);
    rep.add("hits_log_slope", 0, c.p, c.d, c.seed_base, fit.slope);
    rep.add("hits_log_r2", 0, c.p, c.d, c.seed_base, fit.r2);
  }
}

inline void run_hybrid(const ExperimentConfig& c, DiagnosticReport& rep,
                       const std::string&) {
  const double eps = c.get_num("eps", 0.24);
  const double delta = c.get_num("delta", 0.1);
  const int reps = static_cast<int>(c.get_int("reps", 4000));
  const int depth = static_cast<int>(c.get_int("prefactor_depth", 64));
  std::vector<std::int64_t> ns(c.n_list.begin(), c.n_list.end());
  std::sort(ns.begin(), ns.end());
  const std::int64_t n_max = ns.back();
  // shared annealed checkpoints: n and n-k for every n
  std::vector<std::int64_t> cps;
  for (auto n : ns) {
    const auto k = static_cast<std::int64_t>(
        std::ceil(std::pow(static_cast<double>(n), eps)));
    cps.push_back(n - k);
    cps.push_back(n);
  }
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  AnnealedCache cache;
  AnnealedOptions aopt;
  aopt.field = field_options(c);
  aopt.threads = c.threads;
  const auto ann =
      cache.ensemble(c.d, c.p, Coords{}, 0, cps, reps, annealed_seed(c), aopt);
  for (const auto& sl : ann) {
    double max_se = 0.0;
    for (const auto& [k, v] : sl.var) {
      (void)k;
      max_se = std::max(max_se, std::sqrt(v));
    }
    rep.add("annealed_max_stderr", sl.time, c.p, c.d, annealed_seed(c), max_se);
  }
  auto ann_at = [&](std::int64_t t) -> const DistributionSlice& {
    for (std::size_t i = 0; i < cps.size(); ++i)
      if (cps[i] == t) return ann[i];
    throw ConfigError("missing annealed checkpoint");
  };
  std::map<std::int64_t, std::array<std::vector<double>, 3>> limits_by_n;
  const int extent =
      static_cast<int>(n_max) + 1 + depth +
      static_cast<int>(std::ceil(std::pow(static_cast<double>(n_max), delta))) + 4;
  const std::int64_t margin =
      c.horizon_margin >= 0 ? c.horizon_margin
                            : auto_horizon_margin(c.d, extent, n_max);
  for (int s = 0; s < c.seeds; ++s) {
    // the window starts depth slices early so every Cesaro term down at the
    // n-k slice has its start slice inside the window
    auto env = EnvironmentWindow::sample(
        c.d, std::vector<int>(static_cast<std::size_t>(c.d), extent), -depth,
        n_max + margin, c.p, quenched_seed(c, s), BoundaryMode::open);
    const BackboneField f(std::move(env), n_max + margin);
    const auto que = propagate_quenched_multi(f, Coords{}, 0, cps);
    auto que_at = [&](std::int64_t t) -> const DistributionSlice& {
      for (std::size_t i = 0; i < cps.size(); ++i)
        if (cps[i] == t) return que[i];
      throw ConfigError("missing quenched checkpoint");
    };
    const SpatialBox core = f.bounds().shrunk(depth + 1);
    for (auto n : ns) {
      const auto k = static_cast<std::int64_t>(
          std::ceil(std::pow(static_cast<double>(n), eps)));
      const PrefactorSlice psi_n = cesaro_prefactor(f, n, depth, core);
      const PrefactorSlice psi_nk = cesaro_prefactor(f, n - k, depth, core);
      const auto hl = hybrid_limits(f, n, eps, delta, ann_at(n), ann_at(n - k),
                                    que_at(n - k), psi_n, psi_nk);
      limits_by_n[n][0].push_back(hl.L1);
      limits_by_n[n][1].push_back(hl.L2);
      limits_by_n[n][2].push_back(hl.L3);
      rep.add("hybrid_L1", n, c.p, c.d, quenched_seed(c, s), hl.L1);
      rep.add("hybrid_L2", n, c.p, c.d, quenched_seed(c, s), hl.L2);
      rep.add("hybrid_L3", n, c.p, c.d, quenched_seed(c, s), hl.L3);
      if (hl.degenerate_boxes)
        rep.add("hybrid_degenerate_boxes", n, c.p, c.d, quenched_seed(c, s),
                hl.degenerate_boxes);
    }
  }
  for (auto n : ns) {
    add_median(rep, "hybrid_L1_median", limits_by_n[n][0], n, c);
    add_median(rep, "hybrid_L2_median", limits_by_n[n][1], n, c);
    add_median(rep, "hybrid_L3_median", limits_by_n[n][2], n, c);
  }
}

inline void run_derivatives(const ExperimentConfig& c, DiagnosticReport& rep,
                            const std::string&) {
  const int reps = static_cast<int>(c.get_int("reps", 800));
  const double part_eps = c.get_num("eps", 0.25);
  for (auto n : c.n_list) {
    const auto row = derivative_estimates_at(c.d, c.p, n, reps,
                                             annealed_seed(c), part_eps,
                                             c.threads);
    rep.add("deriv_start_space", n, c.p, c.d, annealed_seed(c), row.start_space,
            row.se_start_space);
    rep.add("deriv_start_time", n, c.p, c.d, annealed_seed(c), row.start_time,
            row.se_start_time);
    rep.add("deriv_target_space", n, c.p, c.d, annealed_seed(c),
            row.target_space);
    rep.add("deriv_target_time", n, c.p, c.d, annealed_seed(c), row.target_time);
    rep.add("deriv_partition_stat", n, c.p, c.d, annealed_seed(c),
            row.partition_stat);
  }
}

inline void run_invariance(const ExperimentConfig& c, DiagnosticReport& rep,
                           const std::string&) {
  const int extent = static_cast<int>(c.get_int("extent", 40));
  PatchFunctional fn;
  const std::string kind = c.get_str("f", "xi0");
  if (kind == "one")
    fn.kind = PatchFunctional::Kind::const_one;
  else if (kind == "patch") {
    fn.kind = PatchFunctional::Kind::patch_density;
    fn.radius = static_cast<int>(c.get_int("radius", 1));
    fn.time_depth = static_cast<int>(c.get_int("time_depth", 1));
  } else {
    fn.kind = PatchFunctional::Kind::xi_origin;
  }
  for (auto N : c.n_list) {
    const auto g = invariance_gap(c.d, c.p, extent, static_cast<int>(N), fn,
                                  c.seeds, c.seed_base);
    rep.add("invariance_gap", N, c.p, c.d, c.seed_base, g.gap, g.stderr_);
    std::vector<double> devs;
    for (std::size_t i = 0; i < g.per_seed.size(); ++i) {
      devs.push_back(std::abs(g.per_seed[i]));
      rep.add("invariance_dev", N, c.p, c.d,
              rep_seed(c.seed_base, static_cast<std::uint64_t>(i)),
              std::abs(g.per_seed[i]));
    }
    add_median(rep, "invariance_dev_median", devs, N, c);
  }
}

// Survival frequency to a deep horizon; used by the p_c bisection helper.
inline double survival_frequency(int d, double p, std::int64_t T, int reps,
                                 std::uint64_t base_seed) {
  const std::vector<int> extents(static_cast<std::size_t>(d),
                                 static_cast<int>(T) + 1);
  int hits = 0;
  for (int r = 0; r < reps; ++r) {
    const auto env = EnvironmentWindow::sample(
        d, extents, 0, T, p, rep_seed(base_seed, static_cast<std::uint64_t>(r)),
        BoundaryMode::open);
    const BackboneField bb(env, T);
    hits += bb.xi(Coords{}, 0);
  }
  return static_cast<double>(hits) / static_cast<double>(reps);
}

inline void run_pc(const ExperimentConfig& c, DiagnosticReport& rep,
                   const std::string&) {
  double lo = c.get_num("lo", 0.3), hi = c.get_num("hi", 0.9);
  const double tau = c.get_num("tau", 0.05);
  const std::int64_t T = c.get_int("T", 200);
  const int reps = static_cast<int>(c.get_int("reps", 400));
  const int iters = static_cast<int>(c.get_int("iters", 12));
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double s = survival_frequency(c.d, mid, T, reps, c.seed_base);
    rep.add("pc_bisection_p", i, mid, c.d, c.seed_base, s);
    if (s >= tau)
      hi = mid;
    else
      lo = mid;
  }
  const double pc = 0.5 * (lo + hi);
  rep.add("pc_estimate", T, pc, c.d, c.seed_base, pc);
  AnnealedCache cache;
  std::filesystem::create_directories(cache.dir());
  std::ostringstream ss;
  ss << "d = " << c.d << "\npc = " << format_g(pc, 12) << "\nT = " << T
     << "\ntau = " << format_g(tau, 12) << "\nreps = " << reps << '\n';
  write_text_file(cache.dir() + "/pc_d" + std::to_string(c.d) + ".txt", ss.str());
}

}  // namespace detail

inline DiagnosticReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  DiagnosticReport rep;
  rep.run_id = config.run_id();
  std::filesystem::create_directories(config.out_dir);
  const std::string& out = config.out_dir;
  const std::string& e = config.experiment;
  using namespace detail;
  if (e == "gen")
    run_gen(config, rep, out);
  else if (e == "backbone")
    run_backbone(config, rep, out);
  else if (e == "propagate")
    run_propagate(config, rep, out);
  else if (e == "annealed")
    run_annealed(config, rep, out);
  else if (e == "prefactor")
    run_prefactor(config, rep, out);
  else if (e == "qlclt")
    run_qlclt(config, rep, out);
  else if (e == "lclt")
    run_lclt(config, rep, out);
  else if (e == "ladder")
    run_ladder(config, rep, out);
  else if (e == "goodboxes")
    run_goodboxes(config, rep, out);
  else if (e == "socialboxes")
    run_socialboxes(config, rep, out);
  else if (e == "couple")
    run_couple(config, rep, out);
  else if (e == "pairtv")
    run_pairtv(config, rep, out);
  else if (e == "intersect")
    run_intersect(config, rep, out);
  else if (e == "hits")
    run_hits(config, rep, out);
  else if (e == "hybrid")
    run_hybrid(config, rep, out);
  else if (e == "derivatives")
    run_derivatives(config, rep, out);
  else if (e == "invariance")
    run_invariance(config, rep, out);
  else if (e == "pc")
    run_pc(config, rep, out);
  else {
    std::string names;
    for (const auto& nm : experiment_names()) names += nm + " ";
    throw ConfigError("unknown experiment '" + e + "'; valid: " + names);
  }
  const auto t1 = std::chrono::steady_clock::now();
  rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

  write_text_file(out + "/report.csv", rep.csv_body());
  write_text_file(out + "/config.cfg", config.serialized());
  nlohmann::json meta;
  meta["run_id"] = rep.run_id;
  meta["experiment"] = config.experiment;
  meta["wall_seconds"] = rep.wall_seconds;
  meta["rows"] = rep.rows.size();
  meta["completed_unix"] = static_cast<std::int64_t>(std::time(nullptr));
  write_text_file(out + "/meta.json", meta.dump(2) + "\n");
  return rep;
}

}  // namespace opwalk
