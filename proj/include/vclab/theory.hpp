#pragma once

// Tabular oracle for the augmented-classifier minimax game on finite support,
// independent of the neural stack: the closed-form optimal classifier, the
// reduction of the generator's adversarial loss to an expected KL divergence,
// and an alternating best-response / projected-gradient solver.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "core/io.hpp"
#include "core/random.hpp"
#include "core/tensor.hpp"

namespace vclab {

/// Finite-support game: K real distributions p_d(y|k), K generator
/// distributions p_G(y|k), and a domain prior (uniform by default).
struct TabularGame {
  long k_count = 0;
  long support = 0;
  std::vector<double> p_d;    // [K*S], rows sum to 1
  std::vector<double> p_g;    // [K*S], rows sum to 1
  std::vector<double> prior;  // [K], sums to 1

  double pd(long k, long y) const { return p_d[static_cast<std::size_t>(k * support + y)]; }
  double pg(long k, long y) const { return p_g[static_cast<std::size_t>(k * support + y)]; }

  void validate() const {
    if (k_count < 1 || support < 1) throw std::invalid_argument("tabular game: empty support");
    auto check_rows = [&](const std::vector<double>& m, const char* name) {
      if (static_cast<long>(m.size()) != k_count * support)
        throw std::invalid_argument(std::string("tabular game: ") + name + " has wrong size");
      for (long k = 0; k < k_count; ++k) {
        double row = 0.0;
        for (long y = 0; y < support; ++y) {
          const double v = m[static_cast<std::size_t>(k * support + y)];
          if (v < 0.0) throw std::invalid_argument(std::string(name) + " has negative entries");
          row += v;
        }
        if (std::abs(row - 1.0) > 1e-12)
          throw std::invalid_argument(std::string(name) + " row " + std::to_string(k + 1) +
                                      " does not sum to 1");
      }
    };
    check_rows(p_d, "p_d");
    check_rows(p_g, "p_g");
    double total = 0.0;
    for (double v : prior) total += v;
    if (prior.size() != static_cast<std::size_t>(k_count) || std::abs(total - 1.0) > 1e-12)
      throw std::invalid_argument("tabular game: prior must be a K-distribution");
  }

  /// Random full-support game: rows are normalized uniforms in [0.05, 1].
  static TabularGame random(long k, long s, std::uint64_t seed) {
    TabularGame g;
    g.k_count = k;
    g.support = s;
    g.prior.assign(static_cast<std::size_t>(k), 1.0 / static_cast<double>(k));
    Rng rng(seed);
    auto fill = [&](std::vector<double>& m) {
      m.resize(static_cast<std::size_t>(k * s));
      for (long row = 0; row < k; ++row) {
        double total = 0.0;
        for (long y = 0; y < s; ++y) {
          const double v = rng.uniform(0.05, 1.0);
          m[static_cast<std::size_t>(row * s + y)] = v;
          total += v;
        }
        for (long y = 0; y < s; ++y) m[static_cast<std::size_t>(row * s + y)] /= total;
      }
    };
    fill(g.p_d);
    fill(g.p_g);
    g.validate();
    return g;
  }
};

/// Column-conditional classifier over 2K classes: p(class|y).
struct TabularClassifier {
  long classes = 0;
  long support = 0;
  std::vector<double> p;  // [classes*S], columns sum to 1

  double at(long cls, long y) const { return p[static_cast<std::size_t>(cls * support + y)]; }
};

/// Closed-form minimizer of the classifier's adversarial loss for a fixed
/// generator: p*(k|y) ∝ p(k) p_d(y|k) and p*(K+k|y) ∝ p(k) p_G(y|k), with the
/// shared normalizer playing the simplex multiplier. Zero-mass support points
/// get uniform columns (the objective does not constrain them).
inline TabularClassifier optimal_classifier(const TabularGame& game) {
  game.validate();
  const long k_count = game.k_count, s = game.support;
  TabularClassifier cl;
  cl.classes = 2 * k_count;
  cl.support = s;
  cl.p.assign(static_cast<std::size_t>(cl.classes * s), 0.0);
  for (long y = 0; y < s; ++y) {
    double denom = 0.0;
    for (long k = 0; k < k_count; ++k)
      denom += game.prior[static_cast<std::size_t>(k)] * (game.pd(k, y) + game.pg(k, y));
    if (denom <= 0.0) {
      for (long c = 0; c < cl.classes; ++c)
        cl.p[static_cast<std::size_t>(c * s + y)] = 1.0 / static_cast<double>(cl.classes);
      continue;
    }
    for (long k = 0; k < k_count; ++k) {
      cl.p[static_cast<std::size_t>(k * s + y)] =
          game.prior[static_cast<std::size_t>(k)] * game.pd(k, y) / denom;
      cl.p[static_cast<std::size_t>((k_count + k) * s + y)] =
          game.prior[static_cast<std::size_t>(k)] * game.pg(k, y) / denom;
    }
  }
  return cl;
}

/// L_adv^A value of an arbitrary classifier: −E_real log p(k|y) − E_fake log p(K+k|y).
inline double classifier_adv_loss(const TabularGame& game, const TabularClassifier& cl) {
  if (cl.classes != 2 * game.k_count || cl.support != game.support)
    throw std::invalid_argument("classifier_adv_loss: classifier shape mismatch");
  const long k_count = game.k_count, s = game.support;
  double loss = 0.0;
  for (long k = 0; k < k_count; ++k) {
    const double pk = game.prior[static_cast<std::size_t>(k)];
    for (long y = 0; y < s; ++y) {
      const double wd = pk * game.pd(k, y);
      if (wd > 0.0) {
        const double p = cl.at(k, y);
        if (p <= 0.0) return std::numeric_limits<double>::infinity();
        loss -= wd * std::log(p);
      }
      const double wg = pk * game.pg(k, y);
      if (wg > 0.0) {
        const double p = cl.at(k_count + k, y);
        if (p <= 0.0) return std::numeric_limits<double>::infinity();
        loss -= wg * std::log(p);
      }
    }
  }
  return loss;
}

struct BestResponseCheck {
  bool candidate_is_optimal = false;
  double gap = 0.0;  // L(candidate) − L(closed form)
};

inline BestResponseCheck classifier_best_response_check(const TabularGame& game,
                                                        const TabularClassifier& candidate) {
  const double l_opt = classifier_adv_loss(game, optimal_classifier(game));
  const double l_cand = classifier_adv_loss(game, candidate);
  BestResponseCheck out;
  out.gap = l_cand - l_opt;
  out.candidate_is_optimal = l_cand <= l_opt + 1e-9;
  return out;
}

/// Route (a): E_{k~prior} KL[p_G(·|k) ‖ p_d(·|k)]; +inf when p_G puts mass
/// where p_d has none.
inline double expected_kl(const TabularGame& game) {
  double total = 0.0;
  for (long k = 0; k < game.k_count; ++k) {
    const double pk = game.prior[static_cast<std::size_t>(k)];
    for (long y = 0; y < game.support; ++y) {
      const double g = game.pg(k, y);
      if (g <= 0.0) continue;
      const double d = game.pd(k, y);
      if (d <= 0.0) return std::numeric_limits<double>::infinity();
      total += pk * g * std::log(g / d);
    }
  }
  return total;
}

/// Route (b): the generator's adversarial loss with the closed-form optimal
/// classifier substituted in.
inline double generator_loss_with_optimal_classifier(const TabularGame& game) {
  TabularClassifier cl = optimal_classifier(game);
  const long k_count = game.k_count;
  double loss = 0.0;
  for (long k = 0; k < k_count; ++k) {
    const double pk = game.prior[static_cast<std::size_t>(k)];
    for (long y = 0; y < game.support; ++y) {
      const double g = game.pg(k, y);
      if (g <= 0.0) continue;
      const double p_real = cl.at(k, y);
      const double p_fake = cl.at(k_count + k, y);
      if (p_real <= 0.0) return std::numeric_limits<double>::infinity();
      loss += pk * g * (std::log(p_fake) - std::log(p_real));
    }
  }
  return loss;
}

/// The two routes must agree: this is the identity behind the equilibrium
/// theorem. Returns the value (possibly +inf) or throws on disagreement.
inline double generator_loss_at_optimum(const TabularGame& game) {
  const double a = expected_kl(game);
  const double b = generator_loss_with_optimal_classifier(game);
  if (std::isinf(a) && std::isinf(b)) return a;
  if (std::abs(a - b) > 1e-10 * std::max({1.0, std::abs(a), std::abs(b)}))
    throw numerical_error("generator_loss_at_optimum: KL and plug-in routes disagree: " +
                          std::to_string(a) + " vs " + std::to_string(b));
  return b;
}

// ---------------------------------------------------------------------------
// Alternating best-response / projected-gradient solver

enum class TabularFormulation { AStar1, AStar2, CStarAdvOnly };

inline TabularFormulation tabular_formulation_from_name(const std::string& s) {
  if (s == "a-stargan1") return TabularFormulation::AStar1;
  if (s == "a-stargan2") return TabularFormulation::AStar2;
  if (s == "c-stargan-adv-only") return TabularFormulation::CStarAdvOnly;
  throw std::invalid_argument("unknown tabular formulation '" + s + "'");
}

struct TabularSolveResult {
  std::vector<double> kl_trajectory;               // E_k KL after each step
  std::vector<std::vector<double>> kl_per_domain;  // per-domain KL after each step
  TabularGame final_game;
  bool diverged = false;  // KL increased on more than half the steps
};

/// Alternates the exact classifier best response with a gradient step on
/// softmax-parameterized generator rows. Tracks E_k KL(p_G ‖ p_d) per step.
inline TabularSolveResult solve_tabular_game(const TabularGame& start,
                                             TabularFormulation formulation, long steps = 5000,
                                             double step_size = 0.3) {
  start.validate();
  for (double v : start.p_g)
    if (v <= 0.0)
      throw std::invalid_argument("solve_tabular_game: p_G must start with full support");
  const long k_count = start.k_count, s = start.support;
  TabularGame game = start;
  std::vector<double> theta(game.p_g.size());
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = std::log(game.p_g[i]);

  auto refresh_pg = [&]() {
    for (long k = 0; k < k_count; ++k) {
      double mx = -std::numeric_limits<double>::infinity();
      for (long y = 0; y < s; ++y)
        mx = std::max(mx, theta[static_cast<std::size_t>(k * s + y)]);
      double total = 0.0;
      for (long y = 0; y < s; ++y) {
        const double e = std::exp(theta[static_cast<std::size_t>(k * s + y)] - mx);
        game.p_g[static_cast<std::size_t>(k * s + y)] = e;
        total += e;
      }
      for (long y = 0; y < s; ++y) game.p_g[static_cast<std::size_t>(k * s + y)] /= total;
    }
  };

  // f_k(y): the generator's per-point loss under the frozen best-response
  // classifier; its p_G-centered form is the softmax gradient.
  auto f_of = [&](long k, long y) {
    const double clamp = 50.0;
    double f;
    switch (formulation) {
      case TabularFormulation::AStar1:
        f = std::log(std::max(game.pg(k, y), 1e-300)) -
            std::log(std::max(game.pd(k, y), 1e-300));
        break;
      case TabularFormulation::AStar2: {
        double mix = 0.0;
        for (long j = 0; j < k_count; ++j)
          mix += game.prior[static_cast<std::size_t>(j)] * game.pg(j, y);
        f = std::log(std::max(mix, 1e-300)) -
            std::log(std::max(game.prior[static_cast<std::size_t>(k)] * game.pd(k, y), 1e-300));
        break;
      }
      case TabularFormulation::CStarAdvOnly:
        // non-saturating generator loss against D* = p_d / (p_d + p_G)
        f = std::log1p(game.pg(k, y) / std::max(game.pd(k, y), 1e-300));
        break;
    }
    return std::min(clamp, std::max(-clamp, f));
  };

  TabularSolveResult out;
  out.kl_trajectory.reserve(static_cast<std::size_t>(steps));
  long increases = 0;
  double prev_kl = expected_kl(game);
  for (long step = 0; step < steps; ++step) {
    for (long k = 0; k < k_count; ++k) {
      double mean_f = 0.0;
      for (long y = 0; y < s; ++y) mean_f += game.pg(k, y) * f_of(k, y);
      const double pk = game.prior[static_cast<std::size_t>(k)];
      for (long y = 0; y < s; ++y)
        theta[static_cast<std::size_t>(k * s + y)] -=
            step_size * pk * game.pg(k, y) * (f_of(k, y) - mean_f);
    }
    refresh_pg();
    const double kl = expected_kl(game);
    std::vector<double> per_domain(static_cast<std::size_t>(k_count), 0.0);
    for (long k = 0; k < k_count; ++k) {
      double acc = 0.0;
      for (long y = 0; y < s; ++y) {
        const double g = game.pg(k, y);
        if (g > 0.0 && game.pd(k, y) > 0.0) acc += g * std::log(g / game.pd(k, y));
      }
      per_domain[static_cast<std::size_t>(k)] = acc;
    }
    out.kl_trajectory.push_back(kl);
    out.kl_per_domain.push_back(std::move(per_domain));
    if (kl > prev_kl) ++increases;
    prev_kl = kl;
  }
  out.final_game = game;
  out.diverged = increases * 2 > steps;
  return out;
}

/// Probability that the merged-fake-class optimal classifier assigns "real"
/// to a sample drawn from the generator mixture: E_{y~p̄_G}[p̄_d/(p̄_d + p̄_G)].
inline double astargan2_real_probability(const TabularGame& game) {
  double acc = 0.0;
  for (long y = 0; y < game.support; ++y) {
    double mix_d = 0.0, mix_g = 0.0;
    for (long k = 0; k < game.k_count; ++k) {
      mix_d += game.prior[static_cast<std::size_t>(k)] * game.pd(k, y);
      mix_g += game.prior[static_cast<std::size_t>(k)] * game.pg(k, y);
    }
    if (mix_d + mix_g > 0.0) acc += mix_g * mix_d / (mix_d + mix_g);
  }
  return acc;
}

/// Trajectory CSV: step, expected KL, then one column per domain.
inline void write_kl_trajectory_csv(const std::filesystem::path& path,
                                    const TabularSolveResult& r) {
  atomic_write(path, [&](std::ostream& os) {
    os << "step,expected_kl";
    if (!r.kl_per_domain.empty())
      for (std::size_t k = 0; k < r.kl_per_domain.front().size(); ++k)
        os << ",kl_domain" << (k + 1);
    os << '\n';
    char buf[64];
    for (std::size_t i = 0; i < r.kl_trajectory.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.kl_trajectory[i]);
      os << (i + 1) << ',' << buf;
      for (double v : r.kl_per_domain[i]) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << ',' << buf;
      }
      os << '\n';
    }
  });
}

}  // namespace vclab
