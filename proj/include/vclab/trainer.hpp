#pragma once

// Alternating minimax optimization for the five formulations: presets carry
// the published hyperparameters, batches are sampled per the formulation's
// scheme, and every step applies exactly one Adam update per player, with the
// discriminator/classifier players first and the generator(s) last.

#include <functional>
#include <map>

#include <json.hpp>

#include "checkpoint.hpp"
#include "features.hpp"
#include "objectives.hpp"

namespace vclab {

enum class Precision { F32, F64 };

inline const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }
inline Precision precision_from_name(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw std::invalid_argument("unknown precision '" + s + "' (use f32 or f64)");
}

struct TrainConfig {
  Formulation formulation = Formulation::CStarGan;
  LossWeights weights;
  double alpha_g = 5e-4;
  double alpha_dc = 2e-6;
  double beta1_g = 0.9;
  double beta1_dc = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  long iterations = 700000;
  long batch_size = 16;
  long segment_len = 64;
  std::uint64_t rng_seed = 1;
  long checkpoint_interval = 0;  // 0: final checkpoint only
  Precision precision = Precision::F64;
  std::string preset = "paper";
  long net_divisor = 1;
  bool generator_2d = false;
  int source_domain = 1;  // pairwise formulation only
  int target_domain = 2;

  /// Published defaults for a formulation (weights, learning rates, I).
  static TrainConfig defaults(Formulation f) {
    TrainConfig c;
    c.formulation = f;
    c.weights = default_weights(f);
    switch (f) {
      case Formulation::CycleGan:
        c.alpha_dc = 5e-6;
        c.iterations = 350000;
        break;
      case Formulation::CStarGan:
        c.alpha_dc = 2e-6;
        c.iterations = 700000;
        break;
      case Formulation::WStarGan:
        c.alpha_dc = 5e-6;
        c.iterations = 350000;
        break;
      case Formulation::AStarGan1:
      case Formulation::AStarGan2:
        c.alpha_dc = 2e-6;
        c.iterations = 350000;
        break;
    }
    return c;
  }

  /// Desk-scale preset: quarter-width nets, shorter segments, a desk-scale
  /// iteration count, and a discriminator/classifier rate that keeps the
  /// adversary competitive over a few thousand steps.
  void apply_preset(const std::string& name) {
    preset = name;
    if (name == "paper") {
      net_divisor = 1;
      return;
    }
    if (name == "tiny") {
      net_divisor = 4;
      segment_len = 32;
      iterations = 4000;
      alpha_dc = 1e-4;
      return;
    }
    throw std::invalid_argument("unknown preset '" + name + "' (use paper or tiny)");
  }

  void validate() const {
    weights.validate();
    if (alpha_g <= 0 || alpha_dc <= 0) throw std::invalid_argument("learning rates must be > 0");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2 (batch statistics)");
    if (segment_len < 4 || segment_len % 4 != 0)
      throw std::invalid_argument("segment length must be a positive multiple of 4");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"formulation", formulation_name(formulation)},
                          {"lambda_adv", weights.adv},
                          {"lambda_cls", weights.cls},
                          {"lambda_cyc", weights.cyc},
                          {"lambda_id", weights.id},
                          {"lambda_gp", weights.gp},
                          {"rho", weights.rho},
                          {"alpha_g", alpha_g},
                          {"alpha_dc", alpha_dc},
                          {"beta1_g", beta1_g},
                          {"beta1_dc", beta1_dc},
                          {"beta2", beta2},
                          {"adam_eps", adam_eps},
                          {"iterations", iterations},
                          {"batch_size", batch_size},
                          {"segment_len", segment_len},
                          {"rng_seed", rng_seed},
                          {"checkpoint_interval", checkpoint_interval},
                          {"precision", precision_name(precision)},
                          {"preset", preset},
                          {"net_divisor", net_divisor},
                          {"generator_2d", generator_2d},
                          {"source_domain", source_domain},
                          {"target_domain", target_domain}};
  }

  /// Missing keys fall back to the published defaults of the formulation
  /// (after the preset, when one is named).
  static TrainConfig from_json(const nlohmann::json& j,
                               std::optional<Formulation> formulation_override = {}) {
    Formulation f = formulation_override
                        ? *formulation_override
                        : formulation_from_name(j.at("formulation").get<std::string>());
    TrainConfig c = defaults(f);
    if (j.contains("preset")) c.apply_preset(j.at("preset").get<std::string>());
    auto get = [&](const char* key, auto& slot) {
      if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("lambda_adv", c.weights.adv);
    get("lambda_cls", c.weights.cls);
    get("lambda_cyc", c.weights.cyc);
    get("lambda_id", c.weights.id);
    get("lambda_gp", c.weights.gp);
    get("rho", c.weights.rho);
    get("alpha_g", c.alpha_g);
    get("alpha_dc", c.alpha_dc);
    get("beta1_g", c.beta1_g);
    get("beta1_dc", c.beta1_dc);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("iterations", c.iterations);
    get("batch_size", c.batch_size);
    get("segment_len", c.segment_len);
    get("rng_seed", c.rng_seed);
    get("checkpoint_interval", c.checkpoint_interval);
    get("net_divisor", c.net_divisor);
    get("generator_2d", c.generator_2d);
    get("source_domain", c.source_domain);
    get("target_domain", c.target_domain);
    if (j.contains("precision"))
      c.precision = precision_from_name(j.at("precision").get<std::string>());
    return c;
  }
};

// ---------------------------------------------------------------------------
// State

template <typename Real>
struct TrainState {
  TrainConfig config;
  long q = 0;
  long k_count = 0;
  std::vector<std::string> domain_names;
  std::vector<DomainStats> stats;
  double frame_shift_ms = 8.0;
  Rng rng{0};
  long step = 0;

  std::optional<Generator<Real>> g, f2;              // f2: reverse map (pairwise form)
  std::optional<PatchDiscriminator<Real>> d, d_x, d_y;
  std::optional<SegmentClassifier<Real>> c, a;
  std::optional<CriticClassifier<Real>> dc;

  std::map<std::string, std::vector<double>> history;

  std::vector<Parameter<Real>*> generator_params() {
    std::vector<Parameter<Real>*> out;
    if (g) for (auto* p : g->parameters()) out.push_back(p);
    if (f2) for (auto* p : f2->parameters()) out.push_back(p);
    return out;
  }
  std::vector<Parameter<Real>*> adversary_params() {
    std::vector<Parameter<Real>*> out;
    if (d) for (auto* p : d->parameters()) out.push_back(p);
    if (d_x) for (auto* p : d_x->parameters()) out.push_back(p);
    if (d_y) for (auto* p : d_y->parameters()) out.push_back(p);
    if (a) for (auto* p : a->parameters()) out.push_back(p);
    if (dc) for (auto* p : dc->parameters()) out.push_back(p);
    return out;
  }
  std::vector<Parameter<Real>*> classifier_params() {
    std::vector<Parameter<Real>*> out;
    if (c) for (auto* p : c->parameters()) out.push_back(p);
    return out;
  }
  std::vector<Parameter<Real>*> all_params() {
    auto out = generator_params();
    for (auto* p : adversary_params()) out.push_back(p);
    for (auto* p : classifier_params()) out.push_back(p);
    return out;
  }
};

template <typename Real>
TrainState<Real> init_state(const TrainConfig& cfg, long q, long k_count,
                            const std::vector<std::string>& names,
                            const std::vector<DomainStats>& stats, double frame_shift_ms) {
  cfg.validate();
  TrainState<Real> st;
  st.config = cfg;
  st.q = q;
  st.k_count = k_count;
  st.domain_names = names;
  st.stats = stats;
  st.frame_shift_ms = frame_shift_ms;
  st.rng = Rng(cfg.rng_seed);
  const long div = cfg.net_divisor;

  switch (cfg.formulation) {
    case Formulation::CycleGan: {
      if (cfg.source_domain == cfg.target_domain)
        throw std::invalid_argument("pairwise training needs two distinct domains");
      GeneratorSettings gs{cfg.generator_2d, q, 0, div, 0.02};
      st.g.emplace("G", st.rng, gs);
      st.f2.emplace("F", st.rng, gs);
      DiscriminatorSettings ds{q, 0, div, 0.2, 0.02};
      st.d_x.emplace("DX", st.rng, ds);
      st.d_y.emplace("DY", st.rng, ds);
      break;
    }
    case Formulation::CStarGan: {
      GeneratorSettings gs{cfg.generator_2d, q, k_count, div, 0.02};
      st.g.emplace("G", st.rng, gs);
      DiscriminatorSettings ds{q, k_count, div, 0.2, 0.02};
      st.d.emplace("D", st.rng, ds);
      ClassifierSettings cs{q, k_count, 16, div, 0.2, 0.02};
      st.c.emplace("C", st.rng, cs);
      break;
    }
    case Formulation::WStarGan: {
      GeneratorSettings gs{cfg.generator_2d, q, k_count, div, 0.02};
      st.g.emplace("G", st.rng, gs);
      CriticSettings ws{q, k_count, div, 0.2, 0.02};
      st.dc.emplace("DC", st.rng, ws);
      break;
    }
    case Formulation::AStarGan1:
    case Formulation::AStarGan2: {
      GeneratorSettings gs{cfg.generator_2d, q, k_count, div, 0.02};
      st.g.emplace("G", st.rng, gs);
      const long classes = cfg.formulation == Formulation::AStarGan1 ? 2 * k_count : k_count + 1;
      ClassifierSettings as{q, classes, 64, div, 0.2, 0.02};
      st.a.emplace("A", st.rng, as);
      break;
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Minibatch assembly

/// Corpus normalized per domain once; batches copy random segments from it.
template <typename Real>
struct PreparedCorpus {
  long q = 0;
  long k_count = 0;
  std::vector<std::vector<FeatureSequence>> normalized;  // per domain
  std::vector<std::pair<int, int>> pool;                 // (domain 1-based, utterance index)

  static PreparedCorpus prepare(const DomainCorpus& corpus) {
    PreparedCorpus p;
    p.k_count = corpus.domain_count();
    if (p.k_count < 1) throw std::invalid_argument("corpus has no domains");
    p.q = corpus.utterances.front().front().q;
    for (long k = 0; k < p.k_count; ++k) {
      if (corpus.utterances[static_cast<std::size_t>(k)].empty())
        throw std::invalid_argument("corpus domain '" +
                                    corpus.names[static_cast<std::size_t>(k)] +
                                    "' has no utterances");
      std::vector<FeatureSequence> norm;
      for (const auto& u : corpus.utterances[static_cast<std::size_t>(k)]) {
        norm.push_back(normalize(u, corpus.stats[static_cast<std::size_t>(k)]));
        p.pool.push_back({static_cast<int>(k + 1),
                          static_cast<int>(norm.size() - 1)});
      }
      p.normalized.push_back(std::move(norm));
    }
    return p;
  }
};

namespace detail {

/// Copy a random segment of fixed length (edge-replicated when short).
template <typename Real>
void copy_segment(const FeatureSequence& u, long start, long seg, Real* dst) {
  for (long qi = 0; qi < u.q; ++qi)
    for (long j = 0; j < seg; ++j)
      dst[qi * seg + j] = static_cast<Real>(u.at(qi, std::min(u.n - 1, start + j)));
}

}  // namespace detail

/// k' and x are drawn jointly and uniformly from the pooled corpus; targets k
/// and the real-sample domains are uniform over 1..K.
template <typename Real>
StarBatch<Real> assemble_star_batch(TrainState<Real>& st, const PreparedCorpus<Real>& prep) {
  const long b = st.config.batch_size, seg = st.config.segment_len, q = st.q;
  StarBatch<Real> batch;
  std::vector<Real> xv(static_cast<std::size_t>(b * q * seg));
  std::vector<Real> yv(static_cast<std::size_t>(b * q * seg));
  batch.src.resize(static_cast<std::size_t>(b));
  batch.trg.resize(static_cast<std::size_t>(b));
  batch.y_dom.resize(static_cast<std::size_t>(b));
  for (long i = 0; i < b; ++i) {
    const auto [dom, idx] = prep.pool[static_cast<std::size_t>(st.rng.index(
        static_cast<long>(prep.pool.size())))];
    const FeatureSequence& u =
        prep.normalized[static_cast<std::size_t>(dom - 1)][static_cast<std::size_t>(idx)];
    const long start = u.n > seg ? st.rng.index(u.n - seg + 1) : 0;
    detail::copy_segment(u, start, seg, xv.data() + i * q * seg);
    batch.src[static_cast<std::size_t>(i)] = dom;
    batch.trg[static_cast<std::size_t>(i)] = static_cast<int>(1 + st.rng.index(st.k_count));
  }
  for (long i = 0; i < b; ++i) {
    const int dom = static_cast<int>(1 + st.rng.index(st.k_count));
    const auto& utts = prep.normalized[static_cast<std::size_t>(dom - 1)];
    const FeatureSequence& u =
        utts[static_cast<std::size_t>(st.rng.index(static_cast<long>(utts.size())))];
    const long start = u.n > seg ? st.rng.index(u.n - seg + 1) : 0;
    detail::copy_segment(u, start, seg, yv.data() + i * q * seg);
    batch.y_dom[static_cast<std::size_t>(i)] = dom;
  }
  batch.x = Tensor<Real>::from_values({b, q, seg}, std::move(xv));
  batch.y = Tensor<Real>::from_values({b, q, seg}, std::move(yv));
  return batch;
}

/// Pairwise batch: x from the source domain, y from the target domain.
template <typename Real>
PairBatch<Real> assemble_pair_batch(TrainState<Real>& st, const PreparedCorpus<Real>& prep) {
  const long b = st.config.batch_size, seg = st.config.segment_len, q = st.q;
  PairBatch<Real> batch;
  std::vector<Real> xv(static_cast<std::size_t>(b * q * seg));
  std::vector<Real> yv(static_cast<std::size_t>(b * q * seg));
  auto fill = [&](int dom, std::vector<Real>& buf) {
    const auto& utts = prep.normalized[static_cast<std::size_t>(dom - 1)];
    for (long i = 0; i < b; ++i) {
      const FeatureSequence& u =
          utts[static_cast<std::size_t>(st.rng.index(static_cast<long>(utts.size())))];
      const long start = u.n > seg ? st.rng.index(u.n - seg + 1) : 0;
      detail::copy_segment(u, start, seg, buf.data() + i * q * seg);
    }
  };
  fill(st.config.source_domain, xv);
  fill(st.config.target_domain, yv);
  batch.x = Tensor<Real>::from_values({b, q, seg}, std::move(xv));
  batch.y = Tensor<Real>::from_values({b, q, seg}, std::move(yv));
  return batch;
}

// ---------------------------------------------------------------------------
// One training step

namespace detail {

template <typename Real>
double finite_loss(const Tensor<Real>& t, const char* term) {
  const double v = static_cast<double>(t.item());
  if (!std::isfinite(v))
    throw numerical_error(std::string("training aborted: loss term '") + term +
                          "' is non-finite");
  return v;
}

template <typename Real>
void update_player(TrainState<Real>& st, std::vector<Parameter<Real>*> params,
                   const Tensor<Real>& objective, double lr, double beta1) {
  auto all = st.all_params();
  zero_grads(all);
  backward(objective);
  AdamConfig cfg{lr, beta1, st.config.beta2, st.config.adam_eps};
  adam_step(params, cfg);
}

}  // namespace detail

/// Exactly one Adam update per player: discriminator/classifier players
/// first, then the generator(s). Returns the per-term losses of this step.
template <typename Real>
std::map<std::string, double> train_step(TrainState<Real>& st, const PreparedCorpus<Real>& prep) {
  const TrainConfig& cfg = st.config;
  const Real rho = static_cast<Real>(cfg.weights.rho);
  std::map<std::string, double> out;
  GanStepOptions opt;
  opt.rng = &st.rng;
  opt.training = true;

  switch (cfg.formulation) {
    case Formulation::CycleGan: {
      PairBatch<Real> batch = assemble_pair_batch(st, prep);
      Tensor<Real> fy = st.g->forward(batch.x, {});
      Tensor<Real> fx = st.f2->forward(batch.y, {});
      {
        GanStepOptions dopt = opt;
        dopt.detach_fakes = true;
        auto adv = cyclegan_adv_losses(*st.d_x, *st.d_y, *st.g, *st.f2, batch, dopt, fy.detach(),
                                       fx.detach());
        Tensor<Real> i_d = add(adv.loss_d_x, adv.loss_d_y);
        out["adv_dx"] = detail::finite_loss(adv.loss_d_x, "adv_dx");
        out["adv_dy"] = detail::finite_loss(adv.loss_d_y, "adv_dy");
        out["obj_d"] = detail::finite_loss(i_d, "obj_d");
        std::vector<Parameter<Real>*> dparams;
        for (auto* p : st.d_x->parameters()) dparams.push_back(p);
        for (auto* p : st.d_y->parameters()) dparams.push_back(p);
        detail::update_player(st, dparams, i_d, cfg.alpha_dc, cfg.beta1_dc);
      }
      {
        GanStepOptions gopt = opt;
        gopt.scope = LossScope::GenSide;
        auto adv = cyclegan_adv_losses(*st.d_x, *st.d_y, *st.g, *st.f2, batch, gopt, fy, fx);
        ObjectiveComponents<Real> comp;
        comp.adv_g = adv.loss_g;
        comp.adv_f = adv.loss_f;
        comp.cyc = cyclegan_cycle_loss(*st.g, *st.f2, batch, rho, fy, fx);
        comp.id = cyclegan_identity_loss(*st.g, *st.f2, batch, rho);
        comp.adv_d_x = Tensor<Real>::scalar(0);  // not this player's objective
        comp.adv_d_y = Tensor<Real>::scalar(0);
        auto obj = full_objectives(cfg.formulation, cfg.weights, comp);
        out["adv_g"] = detail::finite_loss(adv.loss_g, "adv_g");
        out["adv_f"] = detail::finite_loss(adv.loss_f, "adv_f");
        out["cyc"] = detail::finite_loss(*comp.cyc, "cyc");
        out["id"] = detail::finite_loss(*comp.id, "id");
        out["obj_g"] = detail::finite_loss(obj.i_g, "obj_g");
        detail::update_player(st, st.generator_params(), obj.i_g, cfg.alpha_g, cfg.beta1_g);
      }
      break;
    }
    case Formulation::CStarGan: {
      StarBatch<Real> batch = assemble_star_batch(st, prep);
      Tensor<Real> fake = st.g->forward(batch.x, batch.trg);
      {
        GanStepOptions dopt = opt;
        dopt.detach_fakes = true;
        auto adv = cstargan_adv_losses(*st.d, *st.g, batch, dopt, fake.detach());
        Tensor<Real> i_d = scalar_mul(adv.loss_net, static_cast<Real>(cfg.weights.adv));
        out["adv_d"] = detail::finite_loss(adv.loss_net, "adv_d");
        out["obj_d"] = detail::finite_loss(i_d, "obj_d");
        std::vector<Parameter<Real>*> dparams = st.d->parameters();
        detail::update_player(st, dparams, i_d, cfg.alpha_dc, cfg.beta1_dc);
      }
      {
        GanStepOptions copt = opt;
        copt.detach_fakes = true;
        copt.scope = LossScope::NetSide;  // the classifier trains on real samples only
        auto cls = domain_classification_losses(*st.c, *st.g, batch, copt);
        Tensor<Real> i_c = scalar_mul(cls.loss_net, static_cast<Real>(cfg.weights.cls));
        out["cls_c"] = detail::finite_loss(cls.loss_net, "cls_c");
        out["obj_c"] = detail::finite_loss(i_c, "obj_c");
        detail::update_player(st, st.classifier_params(), i_c, cfg.alpha_dc, cfg.beta1_dc);
      }
      {
        GanStepOptions gopt = opt;
        gopt.scope = LossScope::GenSide;
        auto adv = cstargan_adv_losses(*st.d, *st.g, batch, gopt, fake);
        auto cls = domain_classification_losses(*st.c, *st.g, batch, gopt, fake);
        ObjectiveComponents<Real> comp;
        comp.adv_g = adv.loss_g;
        comp.cls_g = cls.loss_g;
        comp.cyc = stargan_cycle_loss(*st.g, batch, rho, fake);
        comp.id = stargan_identity_loss(*st.g, batch, rho);
        comp.adv_d = Tensor<Real>::scalar(0);  // not this player's objective
        comp.cls_c = Tensor<Real>::scalar(0);
        auto obj = full_objectives(cfg.formulation, cfg.weights, comp);
        out["adv_g"] = detail::finite_loss(adv.loss_g, "adv_g");
        out["cls_g"] = detail::finite_loss(cls.loss_g, "cls_g");
        out["cyc"] = detail::finite_loss(*comp.cyc, "cyc");
        out["id"] = detail::finite_loss(*comp.id, "id");
        out["obj_g"] = detail::finite_loss(obj.i_g, "obj_g");
        detail::update_player(st, st.generator_params(), obj.i_g, cfg.alpha_g, cfg.beta1_g);
      }
      break;
    }
    case Formulation::WStarGan: {
      StarBatch<Real> batch = assemble_star_batch(st, prep);
      Tensor<Real> fake = st.g->forward(batch.x, batch.trg);
      {
        GanStepOptions dopt = opt;
        dopt.detach_fakes = true;
        auto parts = wstargan_losses(*st.dc, *st.g, batch, cfg.weights, dopt, fake.detach());
        Tensor<Real> i_dc = add(parts.i_d, parts.i_c);
        out["w_dist"] = detail::finite_loss(parts.w_distance, "w_dist");
        out["gp"] = detail::finite_loss(parts.penalty, "gp");
        out["cls_c"] = detail::finite_loss(parts.i_c, "cls_c");
        out["obj_d"] = detail::finite_loss(parts.i_d, "obj_d");
        detail::update_player(st, st.adversary_params(), i_dc, cfg.alpha_dc, cfg.beta1_dc);
      }
      {
        GanStepOptions gopt = opt;
        gopt.scope = LossScope::GenSide;
        auto parts = wstargan_losses(*st.dc, *st.g, batch, cfg.weights, gopt, fake);
        ObjectiveComponents<Real> comp;
        comp.adv_g = scalar_mul(parts.g_adv_term, static_cast<Real>(1.0 / cfg.weights.adv));
        comp.cls_g = parts.cls_g;
        comp.cyc = stargan_cycle_loss(*st.g, batch, rho, fake);
        comp.id = stargan_identity_loss(*st.g, batch, rho);
        comp.w_fake_mean = Tensor<Real>::scalar(0);
        comp.w_real_mean = Tensor<Real>::scalar(0);
        comp.gp = Tensor<Real>::scalar(0);
        comp.cls_c = Tensor<Real>::scalar(0);
        auto obj = full_objectives(cfg.formulation, cfg.weights, comp);
        out["adv_g"] = detail::finite_loss(parts.g_adv_term, "adv_g");
        out["cls_g"] = detail::finite_loss(parts.cls_g, "cls_g");
        out["cyc"] = detail::finite_loss(*comp.cyc, "cyc");
        out["id"] = detail::finite_loss(*comp.id, "id");
        out["obj_g"] = detail::finite_loss(obj.i_g, "obj_g");
        detail::update_player(st, st.generator_params(), obj.i_g, cfg.alpha_g, cfg.beta1_g);
      }
      break;
    }
    case Formulation::AStarGan1:
    case Formulation::AStarGan2: {
      StarBatch<Real> batch = assemble_star_batch(st, prep);
      const bool merged = cfg.formulation == Formulation::AStarGan2;
      Tensor<Real> fake = st.g->forward(batch.x, batch.trg);
      {
        GanStepOptions aopt = opt;
        aopt.detach_fakes = true;
        auto adv = merged ? astargan2_losses(*st.a, *st.g, batch, aopt, fake.detach())
                          : astargan1_losses(*st.a, *st.g, batch, aopt, fake.detach());
        Tensor<Real> i_a = scalar_mul(adv.loss_net, static_cast<Real>(cfg.weights.adv));
        out["adv_a"] = detail::finite_loss(adv.loss_net, "adv_a");
        out["obj_d"] = detail::finite_loss(i_a, "obj_d");
        detail::update_player(st, st.adversary_params(), i_a, cfg.alpha_dc, cfg.beta1_dc);
      }
      {
        GanStepOptions gopt = opt;
        gopt.scope = LossScope::GenSide;
        auto adv = merged ? astargan2_losses(*st.a, *st.g, batch, gopt, fake)
                          : astargan1_losses(*st.a, *st.g, batch, gopt, fake);
        ObjectiveComponents<Real> comp;
        comp.adv_g = adv.loss_g;
        comp.cyc = stargan_cycle_loss(*st.g, batch, rho, fake);
        comp.id = stargan_identity_loss(*st.g, batch, rho);
        comp.adv_d = Tensor<Real>::scalar(0);  // not this player's objective
        auto obj = full_objectives(cfg.formulation, cfg.weights, comp);
        out["adv_g"] = detail::finite_loss(adv.loss_g, "adv_g");
        out["cyc"] = detail::finite_loss(*comp.cyc, "cyc");
        out["id"] = detail::finite_loss(*comp.id, "id");
        out["obj_g"] = detail::finite_loss(obj.i_g, "obj_g");
        detail::update_player(st, st.generator_params(), obj.i_g, cfg.alpha_g, cfg.beta1_g);
      }
      break;
    }
  }
  st.step += 1;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpointing of full training state

template <typename Real>
Checkpoint state_checkpoint(TrainState<Real>& st) {
  Checkpoint ck;
  for (auto* p : st.all_params()) ck.entries.push_back(checkpoint_entry(*p));
  nlohmann::json meta;
  meta["config"] = st.config.to_json();
  meta["q"] = st.q;
  meta["k_count"] = st.k_count;
  meta["step"] = st.step;
  meta["rng_state"] = st.rng.state();
  meta["frame_shift_ms"] = st.frame_shift_ms;
  meta["domain_names"] = st.domain_names;
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : st.stats) {
    nlohmann::json e;
    e["psi"] = s.psi;
    e["zeta"] = s.zeta;
    if (s.mu_logf0) {
      e["mu_logf0"] = *s.mu_logf0;
      e["sigma_logf0"] = *s.sigma_logf0;
    }
    stats.push_back(e);
  }
  meta["stats"] = stats;
  ck.meta_json = meta.dump();
  return ck;
}

template <typename Real>
TrainState<Real> state_from_checkpoint(const Checkpoint& ck) {
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  TrainConfig cfg = TrainConfig::from_json(meta.at("config"));
  std::vector<std::string> names = meta.at("domain_names").get<std::vector<std::string>>();
  std::vector<DomainStats> stats;
  for (const auto& e : meta.at("stats")) {
    DomainStats s;
    s.psi = e.at("psi").get<std::vector<double>>();
    s.zeta = e.at("zeta").get<std::vector<double>>();
    if (e.contains("mu_logf0")) {
      s.mu_logf0 = e.at("mu_logf0").get<double>();
      s.sigma_logf0 = e.at("sigma_logf0").get<double>();
    }
    stats.push_back(std::move(s));
  }
  TrainState<Real> st = init_state<Real>(cfg, meta.at("q").get<long>(),
                                         meta.at("k_count").get<long>(), names, stats,
                                         meta.value("frame_shift_ms", 8.0));
  for (auto* p : st.all_params()) {
    const CheckpointEntry* e = ck.find(p->name);
    if (!e) throw std::runtime_error("checkpoint is missing parameter '" + p->name + "'");
    restore_parameter(*p, *e);
  }
  st.step = meta.at("step").get<long>();
  st.rng.restore(meta.at("rng_state").get<std::string>());
  return st;
}

// ---------------------------------------------------------------------------
// Full runs

using StepCallback = std::function<void(long step, const std::map<std::string, double>&)>;

/// Runs I steps from a fresh state; writes periodic checkpoints when out_dir
/// is non-empty. The loss history keeps one entry per step for every term.
template <typename Real>
TrainState<Real> train(const DomainCorpus& corpus, const TrainConfig& cfg,
                       const std::filesystem::path& out_dir = {},
                       const StepCallback& callback = {}) {
  auto prep = PreparedCorpus<Real>::prepare(corpus);
  if (cfg.formulation == Formulation::CycleGan) {
    if (cfg.source_domain < 1 || cfg.source_domain > prep.k_count || cfg.target_domain < 1 ||
        cfg.target_domain > prep.k_count)
      throw std::invalid_argument("pairwise domains out of range");
  }
  TrainState<Real> st = init_state<Real>(cfg, prep.q, prep.k_count, corpus.names, corpus.stats,
                                         corpus.frame_shift_ms);
  for (long it = 0; it < cfg.iterations; ++it) {
    auto losses = train_step(st, prep);
    for (const auto& [term, value] : losses) st.history[term].push_back(value);
    if (callback) callback(st.step, losses);
    if (!out_dir.empty() && cfg.checkpoint_interval > 0 &&
        st.step % cfg.checkpoint_interval == 0 && st.step < cfg.iterations) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06ld.vcck", st.step);
      save_checkpoint(out_dir / name, state_checkpoint(st));
    }
  }
  if (!out_dir.empty()) save_checkpoint(out_dir / "final.vcck", state_checkpoint(st));
  return st;
}

/// Loss history as CSV rows (step, term, value), terms in sorted order.
template <typename Real>
void write_loss_csv(const std::filesystem::path& path, const TrainState<Real>& st) {
  atomic_write(path, [&](std::ostream& os) {
    os << "step,term,value\n";
    char buf[64];
    if (st.history.empty()) return;
    const std::size_t steps = st.history.begin()->second.size();
    for (std::size_t i = 0; i < steps; ++i) {
      for (const auto& [term, values] : st.history) {
        std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
        os << (i + 1) << ',' << term << ',' << buf << '\n';
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Conversion through a trained generator

/// Normalize by the utterance's own voiced-frame statistics (the input domain
/// is unknown at test time), pad to a multiple of 4, run the generator, crop,
/// and adjust the output statistics to the target domain. F0 moves through
/// the log-Gaussian transform when both sides carry F0 statistics.
template <typename Real>
FeatureSequence convert_utterance(const Generator<Real>& g, const FeatureSequence& input,
                                  int target, const std::vector<DomainStats>& stats) {
  if (target < 1 || target > static_cast<int>(stats.size()))
    throw std::invalid_argument("target domain " + std::to_string(target) + " out of range [1," +
                                std::to_string(stats.size()) + "]");
  const DomainStats self = compute_stats({input});
  FeatureSequence norm = normalize(input, self);
  auto [padded, orig_n] = pad_to_multiple(norm, 4);
  std::vector<Real> xv(padded.data.begin(), padded.data.end());
  Tensor<Real> x = Tensor<Real>::from_values({1, padded.q, padded.n}, std::move(xv));
  Tensor<Real> y;
  {
    GradMode off(false);
    std::vector<int> labels{target};
    if (g.settings().k == 0) labels.clear();
    y = g.forward(x, labels);
  }
  FeatureSequence out;
  out.q = input.q;
  out.n = padded.n;
  out.frame_shift_ms = input.frame_shift_ms;
  out.data.assign(y.values().begin(), y.values().end());
  out.voiced = padded.voiced;
  out.f0 = padded.f0;
  out = crop_frames(out, orig_n);
  out.voiced = input.voiced;
  const DomainStats& trg = stats[static_cast<std::size_t>(target - 1)];
  out = convert_postprocess(out, trg);
  if (input.has_f0() && self.mu_logf0 && trg.mu_logf0)
    out.f0 = convert_f0(input.f0, self, trg);
  else
    out.f0 = input.f0;
  return out;
}

}  // namespace vclab
