#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"
#include "vclab/checkpoint.hpp"
#include "vclab/nets.hpp"

using namespace vclab;
using Catch::Approx;

namespace {

Tensor<double> random_feats(Rng& rng, long b, long q, long n) {
  std::vector<double> v(static_cast<std::size_t>(b * q * n));
  for (auto& e : v) e = rng.normal();
  return Tensor<double>::from_values({b, q, n}, std::move(v));
}

}  // namespace

TEST_CASE("generator preserves shape for Q in {8,28,36} and N multiple of 4") {
  for (bool two_d : {false, true}) {
    for (long q : {8L, 28L, 36L}) {
      Rng rng(17);
      GeneratorSettings s;
      s.two_d = two_d;
      s.q = q;
      s.k = 3;
      s.divisor = 8;
      Generator<double> g("g", rng, s);
      for (long n : {8L, 20L, 32L}) {
        auto x = random_feats(rng, 2, q, n);
        auto y = g.forward(x, {1, 3});
        REQUIRE(y.shape() == Shape({2, q, n}));
      }
    }
  }
}

TEST_CASE("generator rejects bad lengths and labels") {
  Rng rng(5);
  GeneratorSettings s;
  s.q = 8;
  s.k = 4;
  s.divisor = 8;
  Generator<double> g("g", rng, s);
  auto x = random_feats(rng, 1, 8, 30);
  REQUIRE_THROWS_AS(g.forward(x, {1}), std::invalid_argument);
  auto ok = random_feats(rng, 1, 8, 32);
  REQUIRE_THROWS_AS(g.forward(ok, {0}), std::invalid_argument);
  REQUIRE_THROWS_AS(g.forward(ok, {5}), std::invalid_argument);
}

TEST_CASE("changing only the conditioning index changes the output") {
  Rng rng(23);
  GeneratorSettings s;
  s.q = 8;
  s.k = 4;
  s.divisor = 4;
  Generator<double> g("g", rng, s);
  auto x = random_feats(rng, 1, 8, 16);
  auto y1 = g.forward(x, {1});
  auto y2 = g.forward(x, {2});
  double max_diff = 0;
  for (std::size_t i = 0; i < y1.values().size(); ++i)
    max_diff = std::max(max_diff, std::abs(y1.values()[i] - y2.values()[i]));
  REQUIRE(max_diff > 0.0);
}

TEST_CASE("gradient of the output w.r.t. the one-hot input is nonzero at init") {
  Rng rng(29);
  GeneratorSettings s;
  s.q = 4;
  s.k = 3;
  s.divisor = 8;
  Generator<double> g("g", rng, s);
  auto x = random_feats(rng, 2, 4, 8);
  auto onehot = one_hot_rows<double>({1, 2}, 3);
  onehot.set_requires_grad(true);
  auto y = g.forward_with_onehot(x, onehot);
  backward(sum(mul(y, y)));
  REQUIRE(onehot.grad().defined());
  double norm = 0;
  for (double v : onehot.grad().values()) norm += v * v;
  REQUIRE(norm > 0.0);
}

TEST_CASE("generator gradient w.r.t. the input matches finite differences") {
  Rng rng(31);
  GeneratorSettings s;
  s.q = 4;
  s.k = 2;
  s.divisor = 8;
  Generator<double> g("g", rng, s);
  auto x = random_feats(rng, 2, 4, 8);
  x.set_requires_grad(true);
  auto loss = [&] {
    auto y = g.forward(x, {1, 2});
    return mean(mul(y, y));
  };
  REQUIRE(oracles::gradcheck<double>(loss, {&x}, 1e-5, 1e-5, 1e-8) <= 1.0);
}

TEST_CASE("patch product aggregation follows the hand cases") {
  // all patch probabilities 1 -> product 1
  auto ones = Tensor<double>::from_values({1, 3}, {1.0, 1.0, 1.0});
  REQUIRE(vclab::exp(log_product_of_patches(ones)).values()[0] == Approx(1.0));
  // patches [0.5, 0.5] -> 0.25
  auto halves = Tensor<double>::from_values({1, 2}, {0.5, 0.5});
  REQUIRE(vclab::exp(log_product_of_patches(halves)).values()[0] == Approx(0.25));
  // score head: sum of patches [1.5, -0.5] -> 1.0
  auto scores = Tensor<double>::from_values({1, 2}, {1.5, -0.5});
  REQUIRE(sum_axes(scores, {1}).values()[0] == Approx(1.0));
}

TEST_CASE("conditional discriminator emits probabilities and their product") {
  Rng rng(37);
  DiscriminatorSettings s;
  s.q = 8;
  s.k = 4;
  s.divisor = 4;
  PatchDiscriminator<double> d("d", rng, s);
  auto x = random_feats(rng, 2, 8, 32);
  Rng step(1);
  auto out = d.forward(x, {1, 2}, step, false);
  for (double p : out.patches.values()) {
    REQUIRE(p > 0.0);
    REQUIRE(p < 1.0);
  }
  // d equals the product of the patch probabilities
  for (long b = 0; b < 2; ++b) {
    double prod = 1.0;
    const long P = out.patches.dim(1);
    for (long j = 0; j < P; ++j)
      prod *= out.patches.values()[static_cast<std::size_t>(b * P + j)];
    REQUIRE(out.d.values()[static_cast<std::size_t>(b)] == Approx(prod).epsilon(1e-12));
  }
  REQUIRE_THROWS_AS(d.forward(x, {}, step, false), std::invalid_argument);
}

TEST_CASE("critic head sums unbounded patch scores") {
  Rng rng(41);
  CriticSettings s;
  s.q = 8;
  s.k = 4;
  s.divisor = 4;
  CriticClassifier<double> dc("dc", rng, s);
  auto x = random_feats(rng, 2, 8, 32);
  Rng step(1);
  auto out = dc.forward(x, step, false);
  for (long b = 0; b < 2; ++b) {
    double total = 0.0;
    const long P = out.d_patches.dim(1);
    for (long j = 0; j < P; ++j)
      total += out.d_patches.values()[static_cast<std::size_t>(b * P + j)];
    REQUIRE(out.d_score.values()[static_cast<std::size_t>(b)] == Approx(total).margin(1e-12));
  }
  // classifier head normalizes over K
  for (long b = 0; b < 2; ++b) {
    double mass = 0.0;
    for (long c = 0; c < 4; ++c)
      mass += std::exp(out.agg_logp.values()[static_cast<std::size_t>(b * 4 + c)]);
    REQUIRE(mass == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("segment aggregation is the renormalized product of distributions") {
  // two segments (0.8,0.2) and (0.5,0.5) -> unnormalized (0.4,0.1) -> (0.8,0.2)
  std::vector<double> seg = {std::log(0.8), std::log(0.5), std::log(0.2), std::log(0.5)};
  auto seg_logp = Tensor<double>::from_values({1, 2, 2}, seg);
  auto agg = aggregate_segment_logp(seg_logp);
  REQUIRE(std::exp(agg.values()[0]) == Approx(0.8).epsilon(1e-12));
  REQUIRE(std::exp(agg.values()[1]) == Approx(0.2).epsilon(1e-12));
  // single segment -> that segment's softmax
  auto one = Tensor<double>::from_values({1, 2, 1}, {std::log(0.3), std::log(0.7)});
  auto agg1 = aggregate_segment_logp(one);
  REQUIRE(std::exp(agg1.values()[0]) == Approx(0.3).epsilon(1e-12));
  // uniform per-segment distributions -> uniform output
  auto unif = Tensor<double>::full({1, 4, 3}, std::log(0.25));
  auto agg_u = aggregate_segment_logp(unif);
  for (double lp : agg_u.values()) REQUIRE(std::exp(lp) == Approx(0.25).epsilon(1e-12));
}

TEST_CASE("classifier output sums to one within 1e-12") {
  Rng rng(43);
  for (long classes : {4L, 8L, 5L}) {  // K, 2K, K+1 for K=4
    ClassifierSettings s;
    s.q = 8;
    s.classes = classes;
    s.intermediate = 64;
    s.divisor = 8;
    SegmentClassifier<double> c("c", rng, s);
    auto x = random_feats(rng, 2, 8, 32);
    Rng step(1);
    auto out = c.forward(x, step, false);
    for (long b = 0; b < 2; ++b) {
      double mass = 0.0;
      for (long l = 0; l < classes; ++l)
        mass += std::exp(out.agg_logp.values()[static_cast<std::size_t>(b * classes + l)]);
      REQUIRE(mass == Approx(1.0).epsilon(1e-12));
      // per-segment distributions also sum to one
      const long S = out.seg_logp.dim(2);
      for (long seg = 0; seg < S; ++seg) {
        double m = 0.0;
        for (long l = 0; l < classes; ++l)
          m += std::exp(out.seg_logp.values()[static_cast<std::size_t>((b * classes + l) * S + seg)]);
        REQUIRE(m == Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("dropout is active only in training mode") {
  Rng rng(47);
  ClassifierSettings s;
  s.q = 8;
  s.classes = 4;
  s.divisor = 4;
  SegmentClassifier<double> c("c", rng, s);
  auto x = random_feats(rng, 2, 8, 16);
  Rng e1(99), e2(99), t1(99);
  auto eval1 = c.forward(x, e1, false);
  auto eval2 = c.forward(x, e2, false);
  REQUIRE(eval1.agg_logp.values() == eval2.agg_logp.values());
  auto train1 = c.forward(x, t1, true);
  REQUIRE(train1.agg_logp.values() != eval1.agg_logp.values());
}

TEST_CASE("checkpoint round-trips parameters and adam state bit-exactly") {
  Rng rng(53);
  GeneratorSettings s;
  s.q = 4;
  s.k = 2;
  s.divisor = 8;
  Generator<double> g("g", rng, s);
  // give the adam state some structure
  for (auto* p : g.parameters()) {
    for (auto& m : p->adam_m) m = rng.normal();
    for (auto& v : p->adam_v) v = std::abs(rng.normal());
    p->adam_t = 7;
  }
  Checkpoint ck;
  for (auto* p : g.parameters()) ck.entries.push_back(checkpoint_entry(*p));
  ck.meta_json = R"({"purpose":"test"})";
  auto path = std::filesystem::temp_directory_path() / "vclab_test.vcck";
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  REQUIRE(back.meta_json == ck.meta_json);
  REQUIRE(back.entries.size() == ck.entries.size());

  Rng rng2(999);
  Generator<double> g2("g", rng2, s);
  for (auto* p : g2.parameters()) {
    const CheckpointEntry* e = back.find(p->name);
    REQUIRE(e != nullptr);
    restore_parameter(*p, *e);
  }
  auto ps1 = g.parameters();
  auto ps2 = g2.parameters();
  for (std::size_t i = 0; i < ps1.size(); ++i) {
    REQUIRE(ps1[i]->value.values() == ps2[i]->value.values());
    REQUIRE(ps1[i]->adam_m == ps2[i]->adam_m);
    REQUIRE(ps1[i]->adam_t == ps2[i]->adam_t);
  }
  std::filesystem::remove(path);
}
