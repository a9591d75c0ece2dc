#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "opwalk/experiments.hpp"

using namespace opwalk;

TEST_CASE("box-level total variation", "[experiments]") {
  auto f = make_walk_field(1, 0.8, 10, Coords{}, 0, 12);
  const auto a = propagate_quenched(f, Coords{}, 0, 12);
  SECTION("identical slices give zero") {
    REQUIRE(tv_on_boxes(a, a, BoxPartition(1, 4)) == 0.0);
  }
  SECTION("side one equals the l1 distance") {
    auto g = make_walk_field(1, 0.8, 11, Coords{}, 0, 12);
    const auto b = propagate_quenched(g, Coords{}, 0, 12);
    REQUIRE(tv_on_boxes(a, b, BoxPartition(1, 1)) ==
            Catch::Approx(l1_distance(a, b)).margin(1e-14));
  }
  SECTION("p=1 quenched against exact annealed is zero") {
    auto full = make_walk_field(1, 1.0, 3, Coords{}, 0, 10);
    const auto que = propagate_quenched(full, Coords{}, 0, 10);
    const auto ann = estimate_annealed_exact(1, 1.0, Coords{}, 0, 10);
    REQUIRE(tv_on_boxes(que, ann, BoxPartition(1, 3)) < 1e-12);
  }
  SECTION("coarsening never increases the value") {
    auto g = make_walk_field(1, 0.6, 12, Coords{}, 0, 12);
    const auto b = propagate_quenched(g, Coords{}, 0, 12);
    const double fine = tv_on_boxes(a, b, BoxPartition(1, 2));
    const double mid = tv_on_boxes(a, b, BoxPartition(1, 4));
    const double coarse = tv_on_boxes(a, b, BoxPartition(1, 8));
    REQUIRE(mid <= fine + 1e-14);
    REQUIRE(coarse <= mid + 1e-14);
  }
}

TEST_CASE("ladder arithmetic", "[experiments]") {
  const auto lad = ladder_arithmetic(256, 0.4, 1);
  REQUIRE(lad.n == std::vector<std::int64_t>{256, 16, 4, 2, 1});
  REQUIRE(lad.r == 4);
  REQUIRE(lad.Nk.back() == 256);
  for (std::size_t k = 1; k < lad.Nk.size(); ++k)
    REQUIRE(lad.Nk[k] - lad.Nk[k - 1] == lad.n[k]);
  // minimal r with n_r^theta <= M
  REQUIRE(ladder_arithmetic(256, 0.4, 2).r == 2);   // 4^0.4 = 1.74
  REQUIRE(ladder_arithmetic(256, 0.4, 5).r == 1);   // 16^0.4 = 3.03
  REQUIRE(ladder_arithmetic(4096, 0.4, 2).r == 3);  // 2^0.4 = 1.32
  REQUIRE_THROWS_AS(ladder_arithmetic(4, 0.4, 100), ConfigError);
}

TEST_CASE("lambda ladder", "[experiments]") {
  SECTION("p=1 gives zero at every level") {
    const std::int64_t N = 64;
    auto f = make_walk_field(1, 1.0, 2, Coords{}, 0, N);
    const auto lad0 = ladder_arithmetic(N, 0.4, 2);
    const auto ann = annealed_ensemble(1, 1.0, Coords{}, 0, lad0.Nk, 2, 5);
    const auto lad = scale_ladder(f, ann, N, 0.4, 2);
    for (double l : lad.lambda) REQUIRE(l < 1e-10);
  }
  SECTION("the finest level equals a direct box TV") {
    const std::int64_t N = 100;
    auto f = make_walk_field(1, 0.8, 21, Coords{}, 0, N);
    const auto arith = ladder_arithmetic(N, 0.4, 2);
    const auto ann = annealed_ensemble(1, 0.8, Coords{}, 0, arith.Nk, 50, 5);
    const auto lad = scale_ladder(f, ann, N, 0.4, 2);
    const auto que = propagate_quenched(f, Coords{}, 0, arith.Nk.back());
    const double direct = tv_on_boxes(
        que, ann.back(), BoxPartition(1, arith.box_side.back()));
    REQUIRE(lad.lambda.back() == Catch::Approx(direct).margin(1e-14));
  }
}

TEST_CASE("escape probability", "[experiments]") {
  SECTION("radius at least n means no escape") {
    auto f = make_walk_field(1, 0.8, 5, Coords{}, 0, 10);
    REQUIRE(escape_probability(f, Coords{}, 0, 10, 10) == 0.0);
  }
  SECTION("simple random walk leaves radius 1 by step 2 with probability 2/9") {
    auto f = make_walk_field(1, 0.0, 5, Coords{}, 0, 4);
    REQUIRE(escape_probability(f, Coords{}, 0, 2, 1) ==
            Catch::Approx(2.0 / 9.0).margin(1e-14));
  }
}

TEST_CASE("good boxes", "[experiments]") {
  const SpatialBox region = SpatialBox::centered(1, {12});
  SECTION("p=1: all boxes good") {
    auto f = make_walk_field(1, 1.0, 4, Coords{}, 0, 16,
                             FieldOptions{.extra_extent = 14});
    const auto ann = estimate_annealed_exact(1, 1.0, Coords{}, 0, 16);
    const auto gb = classify_good(f, BoxPartition(1, 9), 0, 16, 0.4, 0.05, ann,
                                  1.0, 0.01, region);
    REQUIRE(gb.good_fraction == 1.0);
    REQUIRE(gb.boxes.size() == 2);
  }
  SECTION("p=0: off-cluster sites are good by definition") {
    auto f = make_walk_field(1, 0.0, 4, Coords{}, 0, 16,
                             FieldOptions{.extra_extent = 14});
    const auto ann = estimate_annealed_exact(1, 0.0, Coords{}, 0, 16);
    const auto gb = classify_good(f, BoxPartition(1, 9), 0, 16, 0.4, 0.05, ann,
                                  1.0, 0.01, region);
    REQUIRE(gb.good_fraction == 1.0);
  }
  SECTION("a box with one violating on-cluster site is bad") {
    // force a violation by giving the classifier a bogus annealed reference
    // concentrated far away: the box-TV condition then fails at cluster sites
    auto f = make_walk_field(1, 1.0, 4, Coords{}, 0, 16,
                             FieldOptions{.extra_extent = 14});
    DistributionSlice bogus;
    bogus.d = 1;
    bogus.time = 16;
    bogus.mass.emplace(pack_site(make_coords({12}), 1), 1.0);
    const auto gb = classify_good(f, BoxPartition(1, 9), 0, 16, 0.4, 0.05,
                                  bogus, 1.0, 0.01, region);
    REQUIRE(gb.good_fraction == 0.0);
  }
}

TEST_CASE("social boxes", "[experiments]") {
  SECTION("p=1: all boxes social") {
    auto f = make_walk_field(1, 1.0, 4, Coords{}, 0, 20,
                             FieldOptions{.extra_extent = 30});
    const auto sb = classify_social(f, 4, 1.0, 0,
                                    SpatialBox::centered(1, {16}));
    REQUIRE(sb.social_fraction == 1.0);
  }
  SECTION("singleton boxes are social") {
    auto f = make_walk_field(1, 0.5, 9, Coords{}, 0, 8,
                             FieldOptions{.extra_extent = 20});
    const auto sb = classify_social(f, 1, 4.0, 0, SpatialBox::centered(1, {10}));
    REQUIRE(sb.social_fraction == 1.0);
  }
  SECTION("non-social fraction decreases from M=2 to M=4") {
    double prev = 1.1;
    for (int M : {2, 4}) {
      std::vector<double> fr;
      for (int s = 0; s < 15; ++s) {
        const auto steps = static_cast<std::int64_t>(4 * M);
        auto f = make_walk_field(1, 0.8, 6000 + s, Coords{}, 0, steps,
                                 FieldOptions{.extra_extent = 18 * M});
        const auto sb =
            classify_social(f, M, 4.0, 0, SpatialBox::centered(1, {16 * M}));
        fr.push_back(1.0 - sb.social_fraction);
      }
      const double med = median_of(fr);
      REQUIRE(med <= prev + 1e-12);
      prev = med;
    }
  }
  SECTION("a region larger than the window is a geometry error") {
    auto f = make_walk_field(1, 0.8, 3, Coords{}, 0, 8,
                             FieldOptions{.extra_extent = 4});
    REQUIRE_THROWS_AS(classify_social(f, 2, 4.0, 0,
                                      SpatialBox::centered(1, {100})),
                      GeometryError);
  }
}

TEST_CASE("two-stage coupling", "[experiments]") {
  SECTION("p=1: exact marginals and the closed-form diagonal mass") {
    const std::int64_t N = 30;
    const int M = 5;
    auto f = make_walk_field(1, 1.0, 8, Coords{}, 0, N);
    const auto res = build_coupling(f, N, M, 3, 99);
    REQUIRE(res.stage1_diag == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(res.stage1_tv < 1e-12);
    REQUIRE(res.marg_res_ann < 1e-12);
    REQUIRE(res.marg_res_que < 1e-12);
    // oracle: identical box stage, conditionally independent uniform-kernel
    // continuations
    const auto axis_nm = oracle::srw_axis_pmf(static_cast<int>(N) - M);
    const auto axis_m = oracle::srw_axis_pmf(M);
    const BoxPartition part(1, M);
    std::map<SiteKey, double> boxmass;
    std::map<SiteKey, std::map<int, double>> cont;  // box -> x -> joint mass
    for (int u = -(static_cast<int>(N) - M); u <= static_cast<int>(N) - M; ++u) {
      const double qu = axis_nm[static_cast<std::size_t>(u + static_cast<int>(N) - M)];
      const SiteKey bk = part.box_key(make_coords({u}));
      boxmass[bk] += qu;
      for (int o = -M; o <= M; ++o)
        cont[bk][u + o] += qu * axis_m[static_cast<std::size_t>(o + M)];
    }
    double expect = 0;
    for (const auto& [bk, mp] : cont) {
      double dot = 0;
      for (const auto& [x, v] : mp) {
        (void)x;
        dot += (v / boxmass[bk]) * (v / boxmass[bk]);
      }
      expect += boxmass[bk] * dot;
    }
    REQUIRE(res.theta_diag == Catch::Approx(expect).margin(1e-10));
  }
  SECTION("marginal residuals stay tiny on a random instance") {
    const std::int64_t N = 40;
    auto f = make_walk_field(1, 0.8, 17, Coords{}, 0, N);
    const auto res = build_coupling(f, N, 5, 60, 5);
    REQUIRE(res.marg_res_ann < 1e-10);
    REQUIRE(res.marg_res_que < 1e-10);
    REQUIRE(res.theta_diag > 0.0);
  }
}

TEST_CASE("pair mixing", "[experiments]") {
  SECTION("equal starts give zero") {
    auto f = make_walk_field(1, 0.8, 3, Coords{}, 0, 20,
                             FieldOptions{.extra_extent = 2});
    REQUIRE(pair_tv(f, make_coords({1}), make_coords({1}), 20) == 0.0);
  }
  SECTION("p=1 matches the shifted-trinomial closed form and decreases") {
    auto f = make_walk_field(1, 1.0, 3, Coords{}, 0, 64,
                             FieldOptions{.extra_extent = 4});
    double prev = 2.0;
    for (std::int64_t n : {16, 32, 64}) {
      const auto axis = oracle::srw_axis_pmf(static_cast<int>(n));
      double tv = 0;
      for (int x = -static_cast<int>(n) - 2; x <= static_cast<int>(n) + 2; ++x) {
        const int i = x + static_cast<int>(n);
        const double a =
            (i >= 0 && i < static_cast<int>(axis.size())) ? axis[static_cast<std::size_t>(i)] : 0.0;
        const int j = x - 2 + static_cast<int>(n);
        const double b =
            (j >= 0 && j < static_cast<int>(axis.size())) ? axis[static_cast<std::size_t>(j)] : 0.0;
        tv += std::abs(a - b);
      }
      tv *= 0.5;
      const double got = pair_tv(f, make_coords({0}), make_coords({2}), n);
      REQUIRE(got == Catch::Approx(tv).margin(1e-12));
      REQUIRE(got < prev);
      prev = got;
    }
  }
}

TEST_CASE("annealed derivative estimates", "[experiments]") {
  SECTION("p=0 matches the simple-random-walk finite differences") {
    const std::int64_t n = 25;
    const auto row = derivative_estimates_at(1, 0.0, n, 1, 3, 0.25);
    const auto pmf_n = oracle::srw_axis_pmf(static_cast<int>(n));
    const auto pmf_nm1 = oracle::srw_axis_pmf(static_cast<int>(n) - 1);
    auto at = [&](const std::vector<double>& v, int x, int nn) {
      const int i = x + nn;
      return (i >= 0 && i < static_cast<int>(v.size())) ? v[static_cast<std::size_t>(i)] : 0.0;
    };
    double ss = 0, st = 0;
    for (int x = -26; x <= 26; ++x) {
      ss = std::max(ss, std::abs(at(pmf_n, x - 1, 25) - at(pmf_n, x, 25)));
      st = std::max(st, std::abs(at(pmf_nm1, x, 24) - at(pmf_n, x, 25)));
    }
    const double scale = std::pow(25.0, 1.0);
    REQUIRE(row.start_space == Catch::Approx(ss * scale).margin(1e-12));
    REQUIRE(row.start_time == Catch::Approx(st * scale).margin(1e-12));
    REQUIRE(row.target_space == Catch::Approx(ss * scale).margin(1e-12));
    REQUIRE(row.target_time == Catch::Approx(st * scale).margin(1e-12));
  }
  SECTION("a zero shift has zero difference") {
    const auto sl = estimate_annealed_exact(1, 0.7, Coords{}, 0, 3);
    double sup = 0;
    for (const auto& [k, v] : sl.mass) sup = std::max(sup, std::abs(v - sl.at(k)));
    REQUIRE(sup == 0.0);
  }
  SECTION("scaled sups stay within a factor 3 across n at p=0") {
    std::vector<double> ss, pt;
    for (std::int64_t n : {25, 50, 100}) {
      const auto row = derivative_estimates_at(1, 0.0, n, 1, 3, 0.25);
      ss.push_back(row.start_space);
      pt.push_back(row.partition_stat);
    }
    for (const auto& v : {ss, pt}) {
      const double lo = *std::min_element(v.begin(), v.end());
      const double hi = *std::max_element(v.begin(), v.end());
      REQUIRE(hi < 3.0 * lo);
    }
  }
}
