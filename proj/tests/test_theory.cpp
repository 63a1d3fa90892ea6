#include <catch2/catch_amalgamated.hpp>

#include "vclab/theory.hpp"

using namespace vclab;
using Catch::Approx;

namespace {

TabularGame make_game(long k, long s, std::vector<double> pd, std::vector<double> pg) {
  TabularGame g;
  g.k_count = k;
  g.support = s;
  g.p_d = std::move(pd);
  g.p_g = std::move(pg);
  g.prior.assign(static_cast<std::size_t>(k), 1.0 / static_cast<double>(k));
  g.validate();
  return g;
}

}  // namespace

TEST_CASE("optimal classifier splits real/fake mass evenly at equilibrium") {
  auto game = make_game(2, 3, {0.2, 0.3, 0.5, 0.6, 0.1, 0.3}, {0.2, 0.3, 0.5, 0.6, 0.1, 0.3});
  auto cl = optimal_classifier(game);
  for (long y = 0; y < 3; ++y)
    for (long k = 0; k < 2; ++k)
      REQUIRE(cl.at(k, y) == Approx(cl.at(2 + k, y)).margin(1e-15));
}

TEST_CASE("optimal classifier on disjoint supports is certain") {
  auto game = make_game(1, 2, {1.0, 0.0}, {0.0, 1.0});
  auto cl = optimal_classifier(game);
  REQUIRE(cl.at(0, 0) == Approx(1.0));  // real at y1
  REQUIRE(cl.at(1, 1) == Approx(1.0));  // fake at y2
  REQUIRE(cl.at(0, 1) == Approx(0.0));
  REQUIRE(cl.at(1, 0) == Approx(0.0));
}

TEST_CASE("optimal classifier hand case with uniform generator rows") {
  auto game = make_game(2, 2, {1.0, 0.0, 0.0, 1.0}, {0.5, 0.5, 0.5, 0.5});
  auto cl = optimal_classifier(game);
  // at y1: denominator = 0.5*1 + 0.5*0 + 0.5*0.5 + 0.5*0.5 = 1
  REQUIRE(cl.at(0, 0) == Approx(0.5));
  REQUIRE(cl.at(1, 0) == Approx(0.0));
  REQUIRE(cl.at(2, 0) == Approx(0.25));
  REQUIRE(cl.at(3, 0) == Approx(0.25));
}

TEST_CASE("optimal classifier columns sum to one and commute with relabeling") {
  auto game = TabularGame::random(3, 8, 42);
  auto cl = optimal_classifier(game);
  for (long y = 0; y < 8; ++y) {
    double total = 0.0;
    for (long c = 0; c < 6; ++c) total += cl.at(c, y);
    REQUIRE(total == Approx(1.0).margin(1e-12));
  }
  // permute support points
  std::vector<long> perm = {3, 0, 7, 1, 5, 2, 6, 4};
  TabularGame pg = game;
  for (long k = 0; k < 3; ++k)
    for (long y = 0; y < 8; ++y) {
      pg.p_d[static_cast<std::size_t>(k * 8 + y)] = game.pd(k, perm[static_cast<std::size_t>(y)]);
      pg.p_g[static_cast<std::size_t>(k * 8 + y)] = game.pg(k, perm[static_cast<std::size_t>(y)]);
    }
  auto pcl = optimal_classifier(pg);
  for (long c = 0; c < 6; ++c)
    for (long y = 0; y < 8; ++y)
      REQUIRE(pcl.at(c, y) == Approx(cl.at(c, perm[static_cast<std::size_t>(y)])).margin(1e-15));
}

TEST_CASE("closed-form classifier is the best response") {
  auto game = TabularGame::random(3, 8, 7);
  auto opt = optimal_classifier(game);
  auto self_check = classifier_best_response_check(game, opt);
  REQUIRE(self_check.candidate_is_optimal);
  REQUIRE(self_check.gap == Approx(0.0).margin(1e-12));

  SECTION("a uniform candidate on a non-uniform game loses") {
    TabularClassifier unif;
    unif.classes = 6;
    unif.support = 8;
    unif.p.assign(48, 1.0 / 6.0);
    auto check = classifier_best_response_check(game, unif);
    REQUIRE_FALSE(check.candidate_is_optimal);
    REQUIRE(check.gap > 0.0);
  }
  SECTION("random perturbations never beat the closed form") {
    Rng rng(99);
    for (int trial = 0; trial < 300; ++trial) {
      TabularClassifier cand = opt;
      for (long y = 0; y < 8; ++y) {
        double total = 0.0;
        for (long c = 0; c < 6; ++c) {
          auto& v = cand.p[static_cast<std::size_t>(c * 8 + y)];
          v = std::max(1e-9, v + rng.uniform(-0.05, 0.05));
          total += v;
        }
        for (long c = 0; c < 6; ++c) cand.p[static_cast<std::size_t>(c * 8 + y)] /= total;
      }
      REQUIRE(classifier_best_response_check(game, cand).gap >= 0.0);
    }
  }
}

TEST_CASE("generator loss at the optimal classifier reduces to expected KL") {
  SECTION("matched distributions give exactly zero") {
    auto game = make_game(2, 4, {0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25},
                          {0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25});
    REQUIRE(generator_loss_at_optimum(game) == Approx(0.0).margin(1e-15));
  }
  SECTION("hand KL for a binary support") {
    auto game = make_game(1, 2, {0.5, 0.5}, {0.25, 0.75});
    const double expected = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
    REQUIRE(generator_loss_at_optimum(game) == Approx(expected).epsilon(1e-12));
    REQUIRE(generator_loss_at_optimum(game) == Approx(0.1308).margin(5e-5));
  }
  SECTION("mass outside the data support gives +infinity") {
    auto game = make_game(1, 2, {1.0, 0.0}, {0.5, 0.5});
    REQUIRE(std::isinf(generator_loss_at_optimum(game)));
  }
  SECTION("the two routes agree to 1e-10 on random games") {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
      auto game = TabularGame::random(3, 8, seed);
      const double a = expected_kl(game);
      const double b = generator_loss_with_optimal_classifier(game);
      REQUIRE(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(a)));
      REQUIRE(a >= 0.0);
      REQUIRE(a > 0.0);  // random p_G differs from p_d
    }
  }
}

TEST_CASE("solver stays at the equilibrium fixed point") {
  auto base = TabularGame::random(3, 8, 11);
  TabularGame game = base;
  game.p_g = game.p_d;  // start at the optimum
  auto r = solve_tabular_game(game, TabularFormulation::AStar1, 500, 0.3);
  for (double kl : r.kl_trajectory) REQUIRE(kl < 1e-6);
}

TEST_CASE("solver drives the expected KL below 1e-3 on random games") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto game = TabularGame::random(3, 8, seed);
    auto r = solve_tabular_game(game, TabularFormulation::AStar1, 5000, 0.3);
    REQUIRE(r.kl_trajectory.back() < 1e-3);
    REQUIRE_FALSE(r.diverged);
  }
}

TEST_CASE("merged-fake-class dynamics leave the classifier at chance level") {
  auto game = TabularGame::random(3, 8, 5);
  auto r = solve_tabular_game(game, TabularFormulation::AStar2, 5000, 0.3);
  const double real_prob = astargan2_real_probability(r.final_game);
  REQUIRE(real_prob >= 0.45);
  REQUIRE(real_prob <= 0.55);
}

TEST_CASE("cross-entropy adversarial-only dynamics also contract toward the data") {
  auto game = TabularGame::random(3, 8, 21);
  auto r = solve_tabular_game(game, TabularFormulation::CStarAdvOnly, 5000, 0.3);
  REQUIRE(r.kl_trajectory.back() < r.kl_trajectory.front());
}

TEST_CASE("solver rejects generators without full support") {
  auto game = make_game(1, 2, {0.5, 0.5}, {1.0, 0.0});
  REQUIRE_THROWS_AS(solve_tabular_game(game, TabularFormulation::AStar1, 10, 0.1),
                    std::invalid_argument);
}

TEST_CASE("trajectory CSV has one row per step") {
  auto game = TabularGame::random(2, 4, 3);
  auto r = solve_tabular_game(game, TabularFormulation::AStar1, 50, 0.3);
  auto path = std::filesystem::temp_directory_path() / "vclab_kl.csv";
  write_kl_trajectory_csv(path, r);
  std::ifstream is(path);
  std::string line;
  long rows = 0;
  std::getline(is, line);
  REQUIRE(line == "step,expected_kl,kl_domain1,kl_domain2");
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 50);
  std::filesystem::remove(path);
}
