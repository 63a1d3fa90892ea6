#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"
#include "vclab/objectives.hpp"

using namespace vclab;
using Catch::Approx;

namespace {

Tensor<double> probs(std::vector<double> v) {
  Shape s{static_cast<long>(v.size())};
  return Tensor<double>::from_values(s, std::move(v));
}

/// log-probability rows [B,L] from probability rows
Tensor<double> logp_rows(long b, long l, std::vector<double> p) {
  for (auto& v : p) v = std::log(v);
  return Tensor<double>::from_values({b, l}, std::move(p));
}

struct MicroStar {
  Rng rng{101};
  GeneratorSettings gs;
  Generator<double> g;
  StarBatch<double> batch;

  explicit MicroStar(long q = 4, long n = 8, long b = 3, long k = 2)
      : gs{false, q, k, 8, 0.05}, g("g", rng, gs) {
    std::vector<double> xv(static_cast<std::size_t>(b * q * n)), yv(xv.size());
    for (auto& e : xv) e = rng.normal();
    for (auto& e : yv) e = rng.normal();
    batch.x = Tensor<double>::from_values({b, q, n}, std::move(xv));
    batch.y = Tensor<double>::from_values({b, q, n}, std::move(yv));
    batch.src = {1, 2, 1};
    batch.trg = {2, 1, 1};
    batch.y_dom = {1, 1, 2};
  }
};

template <typename Net>
std::vector<Tensor<double>*> leaf_tensors(Net& net) {
  std::vector<Tensor<double>*> out;
  for (auto* p : net.parameters()) out.push_back(&p->value);
  return out;
}

}  // namespace

TEST_CASE("adversarial cross-entropy closed forms") {
  // perfect discriminator: D(y)=1 on real, D(G(x))=0 on fake -> loss ~ 0
  auto perfect = add(neg_mean_log(probs({1.0})), neg_mean_log1m(probs({0.0})));
  REQUIRE(perfect.item() == Approx(0.0).margin(1e-5));
  // D(G(x)) = 0.5 -> non-saturating loss -ln 0.5
  REQUIRE(neg_mean_log(probs({0.5})).item() == Approx(0.6931471805599453).epsilon(1e-12));
  // saturating alternative: ln 0.5
  REQUIRE(mean_log1m(probs({0.5})).item() == Approx(-0.6931471805599453).epsilon(1e-12));
  // conditional pair: D(y,k)=0.9 real, D(G,k)=0.1 fake -> -ln 0.9 - ln 0.9
  auto czero = add(neg_mean_log(probs({0.9})), neg_mean_log1m(probs({0.1})));
  REQUIRE(czero.item() == Approx(-2.0 * std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("probability clamping keeps losses finite and counts warnings") {
  const long before = prob_clamp_warning_count();
  auto l = neg_mean_log(probs({0.0, 1.0, 0.5}));
  REQUIRE(std::isfinite(l.item()));
  REQUIRE(prob_clamp_warning_count() == before + 2);
}

TEST_CASE("domain classification closed forms") {
  // mass 1 on the right class -> 0
  auto sure = logp_rows(1, 4, {1.0, 1e-30, 1e-30, 1e-30});
  REQUIRE(nll_of_labels(sure, {1}).item() == Approx(0.0).margin(1e-9));
  // uniform classifier with K=4 -> ln 4
  auto unif = logp_rows(2, 4, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25});
  REQUIRE(nll_of_labels(unif, {3, 1}).item() == Approx(std::log(4.0)).epsilon(1e-12));
  // zero probability is floored, not -inf
  auto hole = logp_rows(1, 2, {1e-300, 1.0});
  REQUIRE(std::isfinite(nll_of_labels(hole, {1}).item()));
  REQUIRE_THROWS_AS(nll_of_labels(unif, {5, 1}), std::invalid_argument);
}

TEST_CASE("rho losses match hand computations") {
  auto x = probs({1.0, 2.0});
  auto r = probs({1.5, 2.5});
  REQUIRE(rho_loss(x, r, 1.0).item() == Approx(0.5).epsilon(1e-12));
  REQUIRE(rho_loss(x, r, 2.0).item() == Approx(0.25).epsilon(1e-12));
  REQUIRE(rho_loss(x, x, 1.0).item() == 0.0);
  // constant-output map on zeros: |1-0| -> 1
  REQUIRE(rho_loss(probs({1.0, 1.0}), probs({0.0, 0.0}), 1.0).item() == Approx(1.0));
  auto bad = probs({1.0});
  REQUIRE_THROWS_AS(rho_loss(x, bad, 1.0), std::invalid_argument);
}

TEST_CASE("augmented classifier loss closed forms") {
  // p(k|G) = p(K+k|G) = 0.5: the two generator terms cancel
  auto even = logp_rows(1, 4, {0.5, 1e-30, 0.5, 1e-30});
  auto g_even = sub(nll_of_labels(even, {1}), nll_of_labels(even, {3}));
  REQUIRE(g_even.item() == Approx(0.0).margin(1e-12));
  // p(k|G)=0.25, p(K+k|G)=0.5 -> ln 2
  auto skew = logp_rows(1, 4, {0.25, 0.25, 0.5, 1e-30});
  auto g_skew = sub(nll_of_labels(skew, {1}), nll_of_labels(skew, {3}));
  REQUIRE(g_skew.item() == Approx(std::log(2.0)).epsilon(1e-12));
  // all mass on the fake class: clamped log keeps it large but finite
  auto fake_sure = logp_rows(1, 4, {1e-300, 1e-300, 1.0, 1e-300});
  auto g_bad = sub(nll_of_labels(fake_sure, {1}), nll_of_labels(fake_sure, {3}));
  REQUIRE(std::isfinite(g_bad.item()));
  REQUIRE(g_bad.item() > 10.0);
}

TEST_CASE("generator loss decreases as real-class mass displaces fake-class mass") {
  double prev = std::numeric_limits<double>::infinity();
  for (double p : {0.1, 0.3, 0.5, 0.7}) {
    auto row = logp_rows(1, 4, {p, 0.2, 0.8 - p, 1e-30});
    const double val = sub(nll_of_labels(row, {1}), nll_of_labels(row, {3})).item();
    REQUIRE(val < prev);
    prev = val;
  }
}

TEST_CASE("gradient penalty hand cases") {
  Rng rng(5);
  const long b = 4, d = 4;
  std::vector<double> rv(b * d), fv(b * d);
  for (auto& e : rv) e = rng.normal();
  for (auto& e : fv) e = rng.normal();
  auto real = Tensor<double>::from_values({b, d}, rv);
  auto fake = Tensor<double>::from_values({b, d}, fv);

  SECTION("unit-gradient linear critic gives zero penalty") {
    std::vector<double> w(d, 0.5);  // |w| = 1 for d = 4
    auto wt = Tensor<double>::from_values({d}, w);
    Rng step(9);
    auto pen = gradient_penalty(
        [&](const Tensor<double>& xhat) {
          return sum_axes(mul(xhat, broadcast_axes(wt, xhat.shape(), {0})), {1});
        },
        real, fake, step);
    REQUIRE(pen.item() < 1e-20);
  }
  SECTION("D(x) = 2*sum(x) over 4 elements gives (4-1)^2") {
    Rng step(9);
    auto pen = gradient_penalty(
        [&](const Tensor<double>& xhat) { return scalar_mul(sum_axes(xhat, {1}), 2.0); }, real,
        fake, step);
    REQUIRE(pen.item() == Approx(9.0).epsilon(1e-12));
  }
  SECTION("constant critic gives penalty 1") {
    Rng step(9);
    auto pen = gradient_penalty(
        [&](const Tensor<double>& xhat) {
          return scalar_mul(sum_axes(xhat, {1}), 0.0);
        },
        real, fake, step);
    REQUIRE(pen.item() == Approx(1.0).margin(1e-12));
  }
  SECTION("unequal batch shapes are rejected") {
    auto small = Tensor<double>::from_values({2, d}, std::vector<double>(2 * d, 0.0));
    Rng step(9);
    auto fn = [&](const Tensor<double>& xhat) { return sum_axes(xhat, {1}); };
    REQUIRE_THROWS_AS(gradient_penalty(fn, real, small, step), std::invalid_argument);
  }
}

TEST_CASE("full objectives compose the weighted sums") {
  auto s = [](double v) { return Tensor<double>::scalar(v); };

  SECTION("all component losses zero gives zero objectives") {
    ObjectiveComponents<double> c;
    c.adv_g = s(0);
    c.cls_g = s(0);
    c.cyc = s(0);
    c.id = s(0);
    c.adv_d = s(0);
    c.cls_c = s(0);
    LossWeights w;  // all ones
    auto out = full_objectives(Formulation::CStarGan, w, c);
    REQUIRE(out.i_g.item() == 0.0);
    REQUIRE(out.i_d.item() == 0.0);
    REQUIRE(out.i_c->item() == 0.0);
  }
  SECTION("cross-entropy star form with unit weights sums the components") {
    ObjectiveComponents<double> c;
    c.adv_g = s(1);
    c.cls_g = s(2);
    c.cyc = s(3);
    c.id = s(4);
    c.adv_d = s(0.7);
    c.cls_c = s(0.9);
    auto out = full_objectives(Formulation::CStarGan, LossWeights{}, c);
    REQUIRE(out.i_g.item() == Approx(10.0));
    REQUIRE(out.i_d.item() == Approx(0.7));
    REQUIRE(out.i_c->item() == Approx(0.9));
  }
  SECTION("Wasserstein form at published weights") {
    ObjectiveComponents<double> c;
    c.adv_g = s(-0.5);  // −E[D(fake)] through the generator
    c.cls_g = s(0.1);
    c.cyc = s(0.2);
    c.id = s(0.3);
    c.w_fake_mean = s(1.0);
    c.w_real_mean = s(3.0);
    c.gp = s(9.0);
    c.cls_c = s(0.4);
    auto out = full_objectives(Formulation::WStarGan, default_weights(Formulation::WStarGan), c);
    REQUIRE(out.i_g.item() == Approx(10 * -0.5 + 10 * 0.1 + 0.2 + 0.3));  // −3.5
    REQUIRE(out.i_d.item() == Approx(10 * (1.0 - 3.0) + 10 * 9.0));
    REQUIRE(out.i_c->item() == Approx(10 * 0.4));
  }
  SECTION("pairwise form leaves the discriminator objective unweighted") {
    ObjectiveComponents<double> c;
    c.adv_g = s(1);
    c.adv_f = s(2);
    c.cyc = s(3);
    c.id = s(4);
    c.adv_d_x = s(0.25);
    c.adv_d_y = s(0.5);
    LossWeights w;
    w.adv = 2.0;
    auto out = full_objectives(Formulation::CycleGan, w, c);
    REQUIRE(out.i_g.item() == Approx(2 * 1 + 2 * 2 + 3 + 4));
    REQUIRE(out.i_d.item() == Approx(0.75));
    REQUIRE_FALSE(out.i_c.has_value());
  }
  SECTION("weight/formulation mismatches are rejected") {
    ObjectiveComponents<double> c;
    c.adv_g = s(1);
    c.cls_g = s(1);
    c.cyc = s(1);
    c.id = s(1);
    c.adv_d = s(1);
    c.cls_c = s(1);
    LossWeights w;
    w.gp = 10.0;
    REQUIRE_THROWS_AS(full_objectives(Formulation::CStarGan, w, c), std::invalid_argument);
    REQUIRE_THROWS_AS(full_objectives(Formulation::AStarGan1, LossWeights{}, c),
                      std::invalid_argument);
    ObjectiveComponents<double> missing;
    missing.adv_g = s(1);
    REQUIRE_THROWS_AS(full_objectives(Formulation::CStarGan, LossWeights{}, missing),
                      std::invalid_argument);
  }
}

TEST_CASE("star losses are permutation-invariant over the minibatch") {
  MicroStar m;
  Rng net_rng(7);
  DiscriminatorSettings ds{m.gs.q, m.gs.k, 8, 0.2, 0.05};
  PatchDiscriminator<double> d("d", net_rng, ds);
  ClassifierSettings cs{m.gs.q, m.gs.k, 16, 8, 0.2, 0.05};
  SegmentClassifier<double> c("c", net_rng, cs);

  GanStepOptions opt;
  opt.training = false;  // dropout off so the check isolates the batch means

  auto eval_losses = [&](const StarBatch<double>& b) {
    auto adv = cstargan_adv_losses(d, m.g, b, opt);
    auto cls = domain_classification_losses(c, m.g, b, opt);
    auto cyc = stargan_cycle_loss(m.g, b, 1.0);
    auto id = stargan_identity_loss(m.g, b, 1.0);
    return std::vector<double>{adv.loss_net.item(), adv.loss_g.item(), cls.loss_net.item(),
                               cls.loss_g.item(), cyc.item(), id.item()};
  };
  auto base = eval_losses(m.batch);

  // permute rows 0,1,2 -> 2,0,1
  StarBatch<double> p;
  const long q = m.gs.q, n = 8;
  auto permute_rows = [&](const Tensor<double>& t) {
    std::vector<long> idx;
    for (long b : {2L, 0L, 1L})
      for (long i = 0; i < q * n; ++i) idx.push_back(b * q * n + i);
    return take(t, idx, t.shape());
  };
  p.x = permute_rows(m.batch.x);
  p.y = permute_rows(m.batch.y);
  p.src = {m.batch.src[2], m.batch.src[0], m.batch.src[1]};
  p.trg = {m.batch.trg[2], m.batch.trg[0], m.batch.trg[1]};
  p.y_dom = {m.batch.y_dom[2], m.batch.y_dom[0], m.batch.y_dom[1]};
  auto perm = eval_losses(p);
  for (std::size_t i = 0; i < base.size(); ++i) REQUIRE(perm[i] == Approx(base[i]).margin(1e-12));
}

TEST_CASE("cross-entropy star losses match finite differences on micro nets") {
  MicroStar m;
  Rng net_rng(13);
  DiscriminatorSettings ds{m.gs.q, m.gs.k, 8, 0.2, 0.05};
  PatchDiscriminator<double> d("d", net_rng, ds);
  ClassifierSettings cs{m.gs.q, m.gs.k, 16, 8, 0.2, 0.05};
  SegmentClassifier<double> c("c", net_rng, cs);
  LossWeights w;

  auto g_loss = [&] {
    Rng step(42);
    GanStepOptions opt;
    opt.rng = &step;
    auto fake = m.g.forward(m.batch.x, m.batch.trg);
    auto adv = cstargan_adv_losses(d, m.g, m.batch, opt, fake);
    auto cls = domain_classification_losses(c, m.g, m.batch, opt, fake);
    ObjectiveComponents<double> comp;
    comp.adv_g = adv.loss_g;
    comp.cls_g = cls.loss_g;
    comp.cyc = stargan_cycle_loss(m.g, m.batch, 2.0, fake);
    comp.id = stargan_identity_loss(m.g, m.batch, 2.0);
    comp.adv_d = adv.loss_net;
    comp.cls_c = cls.loss_net;
    return full_objectives(Formulation::CStarGan, w, comp).i_g;
  };
  auto g_leaves = leaf_tensors(m.g);
  REQUIRE(oracles::gradcheck<double>(g_loss, g_leaves, 1e-6, 1e-4, 1e-7, 40) <= 1.0);

  auto d_loss = [&] {
    Rng step(42);
    GanStepOptions opt;
    opt.rng = &step;
    opt.detach_fakes = true;
    return cstargan_adv_losses(d, m.g, m.batch, opt).loss_net;
  };
  auto d_leaves = leaf_tensors(d);
  REQUIRE(oracles::gradcheck<double>(d_loss, d_leaves, 1e-5, 1e-4, 1e-7, 40) <= 1.0);

  auto c_loss = [&] {
    Rng step(42);
    GanStepOptions opt;
    opt.rng = &step;
    opt.detach_fakes = true;
    return domain_classification_losses(c, m.g, m.batch, opt).loss_net;
  };
  auto c_leaves = leaf_tensors(c);
  REQUIRE(oracles::gradcheck<double>(c_loss, c_leaves, 1e-5, 1e-4, 1e-7, 40) <= 1.0);
}

TEST_CASE("Wasserstein critic objective with penalty matches finite differences") {
  MicroStar m;
  Rng net_rng(17);
  CriticSettings ws{m.gs.q, m.gs.k, 16, 0.2, 0.05};
  CriticClassifier<double> dc("dc", net_rng, ws);
  LossWeights w = default_weights(Formulation::WStarGan);

  auto d_loss = [&] {
    Rng step(42);
    GanStepOptions opt;
    opt.rng = &step;
    opt.detach_fakes = true;
    return wstargan_losses(dc, m.g, m.batch, w, opt).i_d;
  };
  auto leaves = leaf_tensors(dc);
  REQUIRE(oracles::gradcheck<double>(d_loss, leaves, 1e-5, 1e-4, 1e-6, 30) <= 1.0);

  auto g_loss = [&] {
    Rng step(42);
    GanStepOptions opt;
    opt.rng = &step;
    auto fake = m.g.forward(m.batch.x, m.batch.trg);
    auto parts = wstargan_losses(dc, m.g, m.batch, w, opt, fake);
    ObjectiveComponents<double> comp;
    comp.adv_g = scalar_mul(parts.g_adv_term, 1.0 / w.adv);  // unweighted −E[D(fake)]
    comp.cls_g = parts.cls_g;
    comp.cyc = stargan_cycle_loss(m.g, m.batch, 2.0, fake);
    comp.id = stargan_identity_loss(m.g, m.batch, 2.0);
    comp.w_fake_mean = Tensor<double>::scalar(0);
    comp.w_real_mean = Tensor<double>::scalar(0);
    comp.gp = Tensor<double>::scalar(0);
    comp.cls_c = Tensor<double>::scalar(0);
    return full_objectives(Formulation::WStarGan, w, comp).i_g;
  };
  auto g_leaves = leaf_tensors(m.g);
  REQUIRE(oracles::gradcheck<double>(g_loss, g_leaves, 1e-6, 1e-4, 1e-6, 30) <= 1.0);
}

TEST_CASE("augmented classifier losses match finite differences on micro nets") {
  MicroStar m;
  Rng net_rng(19);
  for (bool merged : {false, true}) {
    const long classes = merged ? m.gs.k + 1 : 2 * m.gs.k;
    ClassifierSettings as{m.gs.q, classes, 64, 16, 0.2, 0.05};
    SegmentClassifier<double> a("a", net_rng, as);

    auto a_loss = [&] {
      Rng step(42);
      GanStepOptions opt;
      opt.rng = &step;
      opt.detach_fakes = true;
      return merged ? astargan2_losses(a, m.g, m.batch, opt).loss_net
                    : astargan1_losses(a, m.g, m.batch, opt).loss_net;
    };
    auto a_leaves = leaf_tensors(a);
    REQUIRE(oracles::gradcheck<double>(a_loss, a_leaves, 1e-5, 1e-4, 1e-7, 30) <= 1.0);

    auto g_loss = [&] {
      Rng step(42);
      GanStepOptions opt;
      opt.rng = &step;
      auto adv = merged ? astargan2_losses(a, m.g, m.batch, opt)
                        : astargan1_losses(a, m.g, m.batch, opt);
      ObjectiveComponents<double> comp;
      comp.adv_g = adv.loss_g;
      comp.cyc = stargan_cycle_loss(m.g, m.batch, 2.0);
      comp.id = stargan_identity_loss(m.g, m.batch, 2.0);
      comp.adv_d = adv.loss_net;
      return full_objectives(Formulation::AStarGan1, default_weights(Formulation::AStarGan1), comp)
          .i_g;
    };
    auto g_leaves = leaf_tensors(m.g);
    REQUIRE(oracles::gradcheck<double>(g_loss, g_leaves, 1e-6, 1e-4, 1e-7, 30) <= 1.0);
  }
}

TEST_CASE("pairwise cycle losses match hand cases and finite differences") {
  Rng net_rng(23);
  GeneratorSettings gs{false, 4, 0, 8, 0.05};
  Generator<double> g("g", net_rng, gs);
  Generator<double> f("f", net_rng, gs);
  DiscriminatorSettings ds{4, 0, 8, 0.2, 0.05};
  PatchDiscriminator<double> dx("dx", net_rng, ds);
  PatchDiscriminator<double> dy("dy", net_rng, ds);

  PairBatch<double> batch;
  Rng data(3);
  std::vector<double> xv(2 * 4 * 8), yv(2 * 4 * 8);
  for (auto& e : xv) e = data.normal();
  for (auto& e : yv) e = data.normal();
  batch.x = Tensor<double>::from_values({2, 4, 8}, std::move(xv));
  batch.y = Tensor<double>::from_values({2, 4, 8}, std::move(yv));

  auto gf_loss = [&] {
    Rng step(42);
    GanStepOptions opt;
    opt.rng = &step;
    auto fy = g.forward(batch.x, {});
    auto fx = f.forward(batch.y, {});
    auto adv = cyclegan_adv_losses(dx, dy, g, f, batch, opt, fy, fx);
    ObjectiveComponents<double> comp;
    comp.adv_g = adv.loss_g;
    comp.adv_f = adv.loss_f;
    comp.cyc = cyclegan_cycle_loss(g, f, batch, 2.0, fy, fx);
    comp.id = cyclegan_identity_loss(g, f, batch, 2.0);
    comp.adv_d_x = adv.loss_d_x;
    comp.adv_d_y = adv.loss_d_y;
    return full_objectives(Formulation::CycleGan, LossWeights{}, comp).i_g;
  };
  std::vector<Tensor<double>*> leaves;
  for (auto* p : g.parameters()) leaves.push_back(&p->value);
  for (auto* p : f.parameters()) leaves.push_back(&p->value);
  REQUIRE(oracles::gradcheck<double>(gf_loss, leaves, 1e-6, 1e-4, 1e-7, 25) <= 1.0);

  auto d_loss = [&] {
    Rng step(42);
    GanStepOptions opt;
    opt.rng = &step;
    opt.detach_fakes = true;
    auto adv = cyclegan_adv_losses(dx, dy, g, f, batch, opt);
    return add(adv.loss_d_x, adv.loss_d_y);
  };
  std::vector<Tensor<double>*> d_leaves;
  for (auto* p : dx.parameters()) d_leaves.push_back(&p->value);
  for (auto* p : dy.parameters()) d_leaves.push_back(&p->value);
  REQUIRE(oracles::gradcheck<double>(d_loss, d_leaves, 1e-6, 1e-4, 1e-7, 25) <= 1.0);
}
