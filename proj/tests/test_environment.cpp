#include <catch2/catch_amalgamated.hpp>
#include <sstream>

#include "opwalk/environment.hpp"

using namespace opwalk;

TEST_CASE("degenerate p gives constant fields", "[environment]") {
  auto all_open = sample_environment(1, {10}, {0, 10}, 1.0, 7);
  auto all_closed = sample_environment(2, {4, 4}, {-3, 3}, 0.0, 7);
  for_each_site(all_open.bounds(), [&](const Coords& x) {
    REQUIRE(all_open.is_open(x, 5));
  });
  for_each_site(all_closed.bounds(), [&](const Coords& x) {
    REQUIRE_FALSE(all_closed.is_open(x, -2));
  });
}

TEST_CASE("empirical open fraction near p", "[environment]") {
  auto env = sample_environment(1, {5000}, {0, 0}, 0.6, 123);
  const double n = 10001.0;
  const double frac = env.slice_open_fraction(0);
  const double sd = std::sqrt(0.6 * 0.4 / n);
  REQUIRE(std::abs(frac - 0.6) < 4 * sd);
}

TEST_CASE("identical arguments reproduce identical bits", "[environment]") {
  auto a = sample_environment(2, {20, 12}, {0, 30}, 0.37, 991);
  auto b = sample_environment(2, {20, 12}, {0, 30}, 0.37, 991);
  REQUIRE(a.same_occupancy(b));
  std::ostringstream da, db;
  a.write_binary(da);
  b.write_binary(db);
  REQUIRE(da.str() == db.str());
}

TEST_CASE("bits are counter-hashed from absolute coordinates", "[environment]") {
  // windows of different geometry agree on their common sites
  auto small = sample_environment(1, {8}, {2, 6}, 0.5, 55);
  auto large = sample_environment(1, {30}, {0, 20}, 0.5, 55);
  for_each_site(small.bounds(), [&](const Coords& x) {
    for (std::int64_t t = 2; t <= 6; ++t)
      REQUIRE(small.is_open(x, t) == large.is_open(x, t));
  });
  // and match the definitional per-site hash
  const std::uint64_t thr = open_threshold(0.5);
  for_each_site(small.bounds(), [&](const Coords& x) {
    const bool predicted = (site_hash(55, x, 1, 3) >> 11) < thr;
    REQUIRE(small.is_open(x, 3) == predicted);
  });
}

TEST_CASE("shift views", "[environment]") {
  auto env = sample_environment(2, {12, 12}, {0, 14}, 0.5, 42);
  SECTION("zero shift is the identity") {
    auto v = shift_view(env, Coords{}, 0);
    REQUIRE(v.is_open(make_coords({3, -2}), 4) ==
            env.is_open(make_coords({3, -2}), 4));
  }
  SECTION("shift then inverse shift is the identity") {
    auto v = shift_view(shift_view(env, make_coords({3, -1}), 2),
                        make_coords({-3, 1}), -2);
    REQUIRE(v.is_open(make_coords({-5, 5}), 7) ==
            env.is_open(make_coords({-5, 5}), 7));
    REQUIRE_FALSE(v.is_view());
  }
  SECTION("view reads match direct reads at 100 probes") {
    auto v = shift_view(env, make_coords({2, 0}), 1);
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
      Coords x = make_coords({static_cast<int>(rng.next_below(17)) - 8,
                              static_cast<int>(rng.next_below(17)) - 8});
      const auto t = static_cast<std::int64_t>(rng.next_below(13));
      REQUIRE(v.is_open(x, t) ==
              env.is_open(make_coords({x[0] + 2, x[1]}), t + 1));
    }
  }
  SECTION("shift covariance as a property") {
    Rng rng(77);
    for (int i = 0; i < 40; ++i) {
      Coords y = make_coords({static_cast<int>(rng.next_below(7)) - 3,
                              static_cast<int>(rng.next_below(7)) - 3});
      const auto m = static_cast<std::int64_t>(rng.next_below(5));
      auto v = shift_view(env, y, m);
      Coords x = make_coords({static_cast<int>(rng.next_below(9)) - 4,
                              static_cast<int>(rng.next_below(9)) - 4});
      const auto t = static_cast<std::int64_t>(rng.next_below(8));
      REQUIRE(v.is_open(x, t) ==
              env.is_open(make_coords({x[0] + y[0], x[1] + y[1]}), t + m));
    }
  }
}

TEST_CASE("lag-1 spatial autocorrelation is small", "[environment]") {
  auto env = sample_environment(1, {50000}, {0, 0}, 0.5, 2024);
  double mean = env.slice_open_fraction(0);
  double num = 0, den = 0;
  double prev = env.is_open(make_coords({-50000}), 0) - mean;
  for (int x = -49999; x <= 50000; ++x) {
    const double cur = env.is_open(make_coords({x}), 0) - mean;
    num += prev * cur;
    den += cur * cur;
    prev = cur;
  }
  REQUIRE(std::abs(num / den) < 0.02);
}

TEST_CASE("periodic boundaries wrap space but never time", "[environment]") {
  auto env = sample_environment(1, {5}, {0, 8}, 0.5, 31, BoundaryMode::periodic);
  for (int x = -5; x <= 5; ++x)
    REQUIRE(env.is_open(make_coords({x}), 3) ==
            env.is_open(make_coords({x + 11}), 3));
  REQUIRE_THROWS_AS(env.is_open(make_coords({0}), 9), GeometryError);
  auto open_env = sample_environment(1, {5}, {0, 8}, 0.5, 31);
  REQUIRE_THROWS_AS(open_env.is_open(make_coords({6}), 0), GeometryError);
}

TEST_CASE("invalid geometry is rejected", "[environment]") {
  REQUIRE_THROWS_AS(sample_environment(1, {10}, {5, 4}, 0.5, 1), ConfigError);
  REQUIRE_THROWS_AS(sample_environment(1, {-2}, {0, 4}, 0.5, 1), ConfigError);
  REQUIRE_THROWS_AS(sample_environment(1, {10}, {0, 4}, 1.5, 1), ConfigError);
}

TEST_CASE("binary dump round-trips and text dump lists open sites",
          "[environment]") {
  auto env = sample_environment(2, {6, 5}, {-2, 9}, 0.44, 8181);
  std::stringstream bin;
  env.write_binary(bin);
  auto back = EnvironmentWindow::read_binary(bin);
  REQUIRE(back.same_occupancy(env));
  REQUIRE(back.p() == env.p());
  REQUIRE(back.seed() == env.seed());

  std::stringstream txt;
  env.write_sparse_text(txt);
  std::int64_t open_sites = 0;
  for (std::int64_t t = -2; t <= 9; ++t)
    for_each_site(env.bounds(), [&](const Coords& x) {
      open_sites += env.is_open(x, t);
    });
  std::string line;
  std::int64_t lines = 0;
  while (std::getline(txt, line))
    if (!line.empty()) {
      ++lines;
      std::istringstream ls(line);
      int x0, x1;
      std::int64_t t;
      ls >> x0 >> x1 >> t;
      REQUIRE(env.is_open(make_coords({x0, x1}), t));
    }
  REQUIRE(lines == open_sites);
}
