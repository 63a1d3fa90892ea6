#pragma once

// Training losses for the five adversarial formulations (pairwise cycle GAN,
// cross-entropy star GAN, Wasserstein star GAN with gradient penalty, and the
// two augmented-classifier variants), written as pure functions of network
// outputs. Expectations are batch means throughout.

#include <optional>
#include <type_traits>

#include "nets.hpp"

namespace vclab {

enum class Formulation { CycleGan, CStarGan, WStarGan, AStarGan1, AStarGan2 };

/// Optional precomputed generator output; type_identity keeps the parameter
/// out of template deduction so plain Tensor arguments convert.
template <typename Real>
using MaybeTensor = std::optional<Tensor<std::type_identity_t<Real>>>;

inline const char* formulation_name(Formulation f) {
  switch (f) {
    case Formulation::CycleGan: return "cyclegan";
    case Formulation::CStarGan: return "c-stargan";
    case Formulation::WStarGan: return "w-stargan";
    case Formulation::AStarGan1: return "a-stargan1";
    case Formulation::AStarGan2: return "a-stargan2";
  }
  return "?";
}

inline Formulation formulation_from_name(const std::string& s) {
  for (Formulation f : {Formulation::CycleGan, Formulation::CStarGan, Formulation::WStarGan,
                        Formulation::AStarGan1, Formulation::AStarGan2})
    if (s == formulation_name(f)) return f;
  throw std::invalid_argument("unknown formulation '" + s + "'");
}

struct LossWeights {
  double adv = 1.0;
  double cls = 1.0;
  double cyc = 1.0;
  double id = 1.0;
  double gp = 0.0;
  double rho = 1.0;  // norm exponent, >= 1

  void validate() const {
    if (adv < 0 || cls < 0 || cyc < 0 || id < 0 || gp < 0)
      throw std::invalid_argument("loss weights must be non-negative");
    if (rho < 1.0) throw std::invalid_argument("rho must be >= 1");
  }
};

/// Published hyperparameter defaults per formulation.
inline LossWeights default_weights(Formulation f) {
  LossWeights w;
  switch (f) {
    case Formulation::CycleGan:
    case Formulation::CStarGan:
      break;  // all ones
    case Formulation::WStarGan:
      w.adv = 10.0;
      w.cls = 10.0;
      w.gp = 10.0;
      break;
    case Formulation::AStarGan1:
    case Formulation::AStarGan2:
      w.cls = 0.0;  // the augmented classifier plays both roles
      break;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Value-level building blocks

constexpr double kProbEps = 1e-7;
constexpr double kLogProbFloor = 1e-12;

/// Counts how often discriminator probabilities had to be clamped; a steadily
/// growing count flags a saturated discriminator.
inline long& prob_clamp_warning_count() {
  static long count = 0;
  return count;
}

template <typename Real>
Tensor<Real> guarded_prob(const Tensor<Real>& p) {
  prob_clamp_warning_count() +=
      count_outside(p, static_cast<Real>(kProbEps), static_cast<Real>(1.0 - kProbEps));
  return clamp(p, static_cast<Real>(kProbEps), static_cast<Real>(1.0 - kProbEps));
}

template <typename Real>
Tensor<Real> neg_mean_log(const Tensor<Real>& probs) {
  return neg(mean(vclab::log(guarded_prob(probs))));
}

template <typename Real>
Tensor<Real> neg_mean_log1m(const Tensor<Real>& probs) {
  return neg(mean(vclab::log(scalar_add(neg(guarded_prob(probs)), Real(1)))));
}

template <typename Real>
Tensor<Real> mean_log1m(const Tensor<Real>& probs) {
  return mean(vclab::log(scalar_add(neg(guarded_prob(probs)), Real(1))));
}

/// −mean log p(class_i | sample_i) from aggregated log-probabilities [B,L];
/// classes are 1-based. Zero probabilities are floored at 1e-12.
template <typename Real>
Tensor<Real> nll_of_labels(const Tensor<Real>& agg_logp, const std::vector<int>& classes) {
  const long B = agg_logp.dim(0), L = agg_logp.dim(1);
  if (static_cast<long>(classes.size()) != B)
    throw std::invalid_argument("nll_of_labels: label count does not match batch");
  std::vector<long> idx(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 1 || classes[i] > L)
      throw std::invalid_argument("nll_of_labels: class " + std::to_string(classes[i]) +
                                  " out of range [1," + std::to_string(L) + "]");
    idx[i] = static_cast<long>(i) * L + classes[i] - 1;
  }
  Tensor<Real> sel = take(agg_logp, idx, {B});
  sel = clamp(sel, static_cast<Real>(std::log(kLogProbFloor)), Real(0));
  return neg(mean(sel));
}

/// mean |a - b|^rho, normalized by element count so weights are
/// shape-independent.
template <typename Real>
Tensor<Real> rho_loss(const Tensor<Real>& a, const Tensor<Real>& b, Real rho) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("rho_loss: shape mismatch between reconstruction " +
                                shape_str(a.shape()) + " and reference " + shape_str(b.shape()));
  return mean(abs_pow(sub(a, b), rho));
}

// ---------------------------------------------------------------------------
// Batches and options

template <typename Real>
struct StarBatch {
  Tensor<Real> x;          // [B,Q,N] source samples from arbitrary domains
  std::vector<int> src;    // 1-based source domain of each x row
  std::vector<int> trg;    // 1-based target domain, drawn uniformly
  Tensor<Real> y;          // [B,Q,N] real samples for the (k, y ~ p(y|k)) terms
  std::vector<int> y_dom;  // 1-based domain of each y row
};

template <typename Real>
struct PairBatch {
  Tensor<Real> x;  // domain X samples
  Tensor<Real> y;  // domain Y samples
};

/// Which side of an adversarial loss pair a caller needs; skipping the other
/// side avoids its network forwards.
enum class LossScope { Both, NetSide, GenSide };

struct GanStepOptions {
  bool non_saturating = true;  // generator adversarial flavor (pairwise formulation)
  bool detach_fakes = false;   // true in discriminator/classifier update phases
  bool training = true;        // dropout switch
  Rng* rng = nullptr;          // step RNG: dropout masks and penalty pairing
  LossScope scope = LossScope::Both;
};

namespace detail {
inline Rng& step_rng(const GanStepOptions& opt) {
  static Rng fallback(0);
  if (opt.rng) return *opt.rng;
  if (opt.training)
    throw std::invalid_argument("objectives: training-mode forward needs the step RNG");
  return fallback;
}
}  // namespace detail

template <typename Real>
Tensor<Real> generator_fake(const Generator<Real>& g, const Tensor<Real>& x,
                            const std::vector<int>& labels, bool detach) {
  if (detach) {
    GradMode off(false);
    return g.forward(x, labels);
  }
  return g.forward(x, labels);
}

// ---------------------------------------------------------------------------
// Pairwise cycle-consistent formulation

template <typename Real>
struct CycleGanAdv {
  Tensor<Real> loss_d_y;  // −E log D_Y(y) − E log(1 − D_Y(G(x)))
  Tensor<Real> loss_g;    // non-saturating −E log D_Y(G(x)), or E log(1 − D_Y(G(x)))
  Tensor<Real> loss_d_x;
  Tensor<Real> loss_f;
};

template <typename Real>
CycleGanAdv<Real> cyclegan_adv_losses(const PatchDiscriminator<Real>& d_x,
                                      const PatchDiscriminator<Real>& d_y,
                                      const Generator<Real>& g, const Generator<Real>& f,
                                      const PairBatch<Real>& batch, const GanStepOptions& opt,
                                      MaybeTensor<Real> fake_y = {},
                                      MaybeTensor<Real> fake_x = {}) {
  Rng& rng = detail::step_rng(opt);
  Tensor<Real> fy = fake_y ? *fake_y : generator_fake(g, batch.x, {}, opt.detach_fakes);
  Tensor<Real> fx = fake_x ? *fake_x : generator_fake(f, batch.y, {}, opt.detach_fakes);
  auto dy_fake = d_y.forward(fy, {}, rng, opt.training);
  auto dx_fake = d_x.forward(fx, {}, rng, opt.training);
  CycleGanAdv<Real> out;
  if (opt.scope != LossScope::GenSide) {
    auto dy_real = d_y.forward(batch.y, {}, rng, opt.training);
    auto dx_real = d_x.forward(batch.x, {}, rng, opt.training);
    out.loss_d_y = add(neg_mean_log(dy_real.d), neg_mean_log1m(dy_fake.d));
    out.loss_d_x = add(neg_mean_log(dx_real.d), neg_mean_log1m(dx_fake.d));
  }
  if (opt.scope != LossScope::NetSide) {
    out.loss_g = opt.non_saturating ? neg_mean_log(dy_fake.d) : mean_log1m(dy_fake.d);
    out.loss_f = opt.non_saturating ? neg_mean_log(dx_fake.d) : mean_log1m(dx_fake.d);
  }
  return out;
}

/// E_x |F(G(x)) − x|^rho + E_y |G(F(y)) − y|^rho
template <typename Real>
Tensor<Real> cyclegan_cycle_loss(const Generator<Real>& g, const Generator<Real>& f,
                                 const PairBatch<Real>& batch, Real rho,
                                 MaybeTensor<Real> fake_y = {},
                                 MaybeTensor<Real> fake_x = {}) {
  Tensor<Real> fy = fake_y ? *fake_y : g.forward(batch.x, {});
  Tensor<Real> fx = fake_x ? *fake_x : f.forward(batch.y, {});
  return add(rho_loss(f.forward(fy, {}), batch.x, rho), rho_loss(g.forward(fx, {}), batch.y, rho));
}

/// E_x |F(x) − x|^rho + E_y |G(y) − y|^rho
template <typename Real>
Tensor<Real> cyclegan_identity_loss(const Generator<Real>& g, const Generator<Real>& f,
                                    const PairBatch<Real>& batch, Real rho) {
  return add(rho_loss(f.forward(batch.x, {}), batch.x, rho),
             rho_loss(g.forward(batch.y, {}), batch.y, rho));
}

// ---------------------------------------------------------------------------
// Cross-entropy star formulation

template <typename Real>
struct AdvPairLosses {
  Tensor<Real> loss_net;  // discriminator / augmented-classifier loss
  Tensor<Real> loss_g;    // generator loss
};

template <typename Real>
AdvPairLosses<Real> cstargan_adv_losses(const PatchDiscriminator<Real>& d,
                                        const Generator<Real>& g, const StarBatch<Real>& batch,
                                        const GanStepOptions& opt,
                                        MaybeTensor<Real> fake = {}) {
  if (d.settings().k == 0)
    throw std::invalid_argument("cstargan_adv_losses: conditional discriminator required");
  Rng& rng = detail::step_rng(opt);
  Tensor<Real> fk = fake ? *fake : generator_fake(g, batch.x, batch.trg, opt.detach_fakes);
  auto d_fake = d.forward(fk, batch.trg, rng, opt.training);
  AdvPairLosses<Real> out;
  if (opt.scope != LossScope::GenSide) {
    auto d_real = d.forward(batch.y, batch.y_dom, rng, opt.training);
    out.loss_net = add(neg_mean_log(d_real.d), neg_mean_log1m(d_fake.d));
  }
  if (opt.scope != LossScope::NetSide) out.loss_g = neg_mean_log(d_fake.d);
  return out;
}

/// Classifier trained on real samples only; the generator term evaluates the
/// classifier on converted samples at the target label.
template <typename Real>
AdvPairLosses<Real> domain_classification_losses(const SegmentClassifier<Real>& c,
                                                 const Generator<Real>& g,
                                                 const StarBatch<Real>& batch,
                                                 const GanStepOptions& opt,
                                                 MaybeTensor<Real> fake = {}) {
  Rng& rng = detail::step_rng(opt);
  AdvPairLosses<Real> out;
  if (opt.scope != LossScope::GenSide) {
    auto c_real = c.forward(batch.y, rng, opt.training);
    out.loss_net = nll_of_labels(c_real.agg_logp, batch.y_dom);
  }
  if (opt.scope != LossScope::NetSide) {
    Tensor<Real> fk = fake ? *fake : generator_fake(g, batch.x, batch.trg, opt.detach_fakes);
    auto c_fake = c.forward(fk, rng, opt.training);
    out.loss_g = nll_of_labels(c_fake.agg_logp, batch.trg);
  }
  return out;
}

/// E |G(G(x,k),k') − x|^rho with k the drawn target and k' the source domain.
template <typename Real>
Tensor<Real> stargan_cycle_loss(const Generator<Real>& g, const StarBatch<Real>& batch, Real rho,
                                MaybeTensor<Real> fake = {}) {
  Tensor<Real> fk = fake ? *fake : g.forward(batch.x, batch.trg);
  return rho_loss(g.forward(fk, batch.src), batch.x, rho);
}

/// E |G(x,k') − x|^rho for x already in domain k'.
template <typename Real>
Tensor<Real> stargan_identity_loss(const Generator<Real>& g, const StarBatch<Real>& batch,
                                   Real rho) {
  return rho_loss(g.forward(batch.x, batch.src), batch.x, rho);
}

// ---------------------------------------------------------------------------
// Gradient penalty and the Wasserstein star formulation

/// E[(‖∇_x̂ D(x̂)‖₂ − 1)²] over per-pair interpolates x̂ = ε·x_real + (1−ε)·x_fake
/// with ε ~ U[0,1]; the fake batch is shuffled once for the pairing. score_of
/// must return the per-sample critic scores [B].
template <typename Real, typename ScoreFn>
Tensor<Real> gradient_penalty(ScoreFn&& score_of, const Tensor<Real>& real,
                              const Tensor<Real>& fake, Rng& rng) {
  if (real.shape() != fake.shape())
    throw std::invalid_argument("gradient_penalty: real/fake batches must have equal shapes");
  const long B = real.dim(0);
  const long per = real.size() / B;
  std::vector<long> perm(static_cast<std::size_t>(B));
  std::iota(perm.begin(), perm.end(), 0L);
  rng.shuffle(perm);
  std::vector<Real> mix(static_cast<std::size_t>(real.size()));
  const auto& rv = real.values();
  const auto& fv = fake.values();
  for (long b = 0; b < B; ++b) {
    const Real e = static_cast<Real>(rng.uniform());
    const long src = perm[static_cast<std::size_t>(b)];
    for (long i = 0; i < per; ++i)
      mix[static_cast<std::size_t>(b * per + i)] =
          e * rv[static_cast<std::size_t>(b * per + i)] +
          (Real(1) - e) * fv[static_cast<std::size_t>(src * per + i)];
  }
  Tensor<Real> xhat = Tensor<Real>::from_values(real.shape(), std::move(mix), true);
  Tensor<Real> scores = score_of(xhat);
  Tensor<Real> grad = gradients(sum(scores), {xhat}, /*create_graph=*/true)[0];
  for (long b = 0; b < B; ++b)
    for (long i = 0; i < per; ++i)
      if (!std::isfinite(static_cast<double>(grad.values()[static_cast<std::size_t>(b * per + i)])))
        throw numerical_error("gradient_penalty: non-finite critic gradient at sample " +
                              std::to_string(b));
  std::vector<int> tail_axes;
  for (int i = 1; i < real.rank(); ++i) tail_axes.push_back(i);
  Tensor<Real> sq = sum_axes(mul(grad, grad), tail_axes);  // [B]
  Tensor<Real> nrm = vclab::sqrt(scalar_add(sq, static_cast<Real>(1e-30)));
  return mean(abs_pow(scalar_add(nrm, Real(-1)), Real(2)));
}

template <typename Real>
struct WStarGanLosses {
  Tensor<Real> g_adv_term;   // −λ_adv E[D(G(x,k))], graph through G when fakes are live
  Tensor<Real> i_d;          // λ_adv (E[D(fake)] − E[D(real)]) + λ_gp penalty
  Tensor<Real> i_c;          // λ_cls L_cls^C (real samples)
  Tensor<Real> cls_g;        // unweighted classifier loss on converted samples
  Tensor<Real> penalty;      // unweighted gradient penalty
  Tensor<Real> w_distance;   // E[D(real)] − E[D(fake)], the distance estimate
};

template <typename Real>
WStarGanLosses<Real> wstargan_losses(const CriticClassifier<Real>& dc, const Generator<Real>& g,
                                     const StarBatch<Real>& batch, const LossWeights& w,
                                     const GanStepOptions& opt,
                                     MaybeTensor<Real> fake = {}) {
  Rng& rng = detail::step_rng(opt);
  Tensor<Real> fk = fake ? *fake : generator_fake(g, batch.x, batch.trg, opt.detach_fakes);
  auto out_fake = dc.forward(fk, rng, opt.training);
  Tensor<Real> mean_fake = mean(out_fake.d_score);
  WStarGanLosses<Real> out;
  out.g_adv_term = scalar_mul(neg(mean_fake), static_cast<Real>(w.adv));
  out.cls_g = nll_of_labels(out_fake.agg_logp, batch.trg);
  if (opt.scope != LossScope::GenSide) {
    auto out_real = dc.forward(batch.y, rng, opt.training);
    Tensor<Real> mean_real = mean(out_real.d_score);
    Tensor<Real> pen = gradient_penalty(
        [&](const Tensor<Real>& xhat) { return dc.d_score_only(xhat, rng, opt.training); },
        batch.y, fk.detach(), rng);
    out.i_d = add(scalar_mul(sub(mean_fake, mean_real), static_cast<Real>(w.adv)),
                  scalar_mul(pen, static_cast<Real>(w.gp)));
    out.i_c = scalar_mul(nll_of_labels(out_real.agg_logp, batch.y_dom), static_cast<Real>(w.cls));
    out.penalty = pen;
    out.w_distance = sub(mean_real, mean_fake);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmented-classifier formulations

/// 2K-class variant: classes 1..K are the real domains, K+1..2K the fake ones.
template <typename Real>
AdvPairLosses<Real> astargan1_losses(const SegmentClassifier<Real>& a, const Generator<Real>& g,
                                     const StarBatch<Real>& batch, const GanStepOptions& opt,
                                     MaybeTensor<Real> fake = {}) {
  const long classes = a.settings().classes;
  if (classes % 2 != 0)
    throw std::invalid_argument("astargan1_losses: classifier must have 2K outputs");
  const int k_count = static_cast<int>(classes / 2);
  Rng& rng = detail::step_rng(opt);
  Tensor<Real> fk = fake ? *fake : generator_fake(g, batch.x, batch.trg, opt.detach_fakes);
  auto out_fake = a.forward(fk, rng, opt.training);
  std::vector<int> fake_classes(batch.trg.size());
  for (std::size_t i = 0; i < batch.trg.size(); ++i) fake_classes[i] = batch.trg[i] + k_count;
  AdvPairLosses<Real> out;
  if (opt.scope != LossScope::GenSide) {
    auto out_real = a.forward(batch.y, rng, opt.training);
    out.loss_net = add(nll_of_labels(out_real.agg_logp, batch.y_dom),
                       nll_of_labels(out_fake.agg_logp, fake_classes));
  }
  if (opt.scope != LossScope::NetSide)
    out.loss_g = sub(nll_of_labels(out_fake.agg_logp, batch.trg),
                     nll_of_labels(out_fake.agg_logp, fake_classes));
  return out;
}

/// (K+1)-class variant: all fakes share class K+1.
template <typename Real>
AdvPairLosses<Real> astargan2_losses(const SegmentClassifier<Real>& a, const Generator<Real>& g,
                                     const StarBatch<Real>& batch, const GanStepOptions& opt,
                                     MaybeTensor<Real> fake = {}) {
  const long classes = a.settings().classes;
  const int fake_class = static_cast<int>(classes);  // K+1
  Rng& rng = detail::step_rng(opt);
  Tensor<Real> fk = fake ? *fake : generator_fake(g, batch.x, batch.trg, opt.detach_fakes);
  auto out_fake = a.forward(fk, rng, opt.training);
  std::vector<int> fake_classes(batch.trg.size(), fake_class);
  AdvPairLosses<Real> out;
  if (opt.scope != LossScope::GenSide) {
    auto out_real = a.forward(batch.y, rng, opt.training);
    out.loss_net = add(nll_of_labels(out_real.agg_logp, batch.y_dom),
                       nll_of_labels(out_fake.agg_logp, fake_classes));
  }
  if (opt.scope != LossScope::NetSide)
    out.loss_g = sub(nll_of_labels(out_fake.agg_logp, batch.trg),
                     nll_of_labels(out_fake.agg_logp, fake_classes));
  return out;
}

// ---------------------------------------------------------------------------
// Full objectives

template <typename Real>
struct ObjectiveComponents {
  std::optional<Tensor<Real>> adv_g;  // generator adversarial loss; for the
                                      // Wasserstein form this is −E[D(fake)]
  std::optional<Tensor<Real>> adv_f;  // second generator (pairwise form)
  std::optional<Tensor<Real>> adv_d_x, adv_d_y;  // pairwise discriminator losses
  std::optional<Tensor<Real>> adv_d;             // star discriminator/classifier loss
  std::optional<Tensor<Real>> cls_c, cls_g;
  std::optional<Tensor<Real>> cyc, id;
  std::optional<Tensor<Real>> gp;           // unweighted penalty (Wasserstein form)
  std::optional<Tensor<Real>> w_fake_mean;  // E[D(fake)] on the critic path
  std::optional<Tensor<Real>> w_real_mean;  // E[D(real)]
};

template <typename Real>
struct FullObjectives {
  Tensor<Real> i_g;
  Tensor<Real> i_d;  // discriminator, critic, or augmented classifier objective
  std::optional<Tensor<Real>> i_c;
};

namespace detail {
template <typename Real>
const Tensor<Real>& need(const std::optional<Tensor<Real>>& c, const char* what) {
  if (!c) throw std::invalid_argument(std::string("full_objectives: missing component ") + what);
  return *c;
}
template <typename Real>
Tensor<Real> wsum(std::initializer_list<std::pair<double, Tensor<Real>>> terms) {
  Tensor<Real> acc;
  for (const auto& [w, t] : terms) {
    Tensor<Real> scaled = scalar_mul(t, static_cast<Real>(w));
    acc = acc.defined() ? add(acc, scaled) : scaled;
  }
  return acc;
}
}  // namespace detail

template <typename Real>
FullObjectives<Real> full_objectives(Formulation f, const LossWeights& w,
                                     const ObjectiveComponents<Real>& c) {
  using detail::need;
  using detail::wsum;
  w.validate();
  const bool wasserstein = f == Formulation::WStarGan;
  const bool augmented = f == Formulation::AStarGan1 || f == Formulation::AStarGan2;
  if (!wasserstein && (w.gp != 0.0 || c.gp))
    throw std::invalid_argument("full_objectives: gradient penalty only enters the Wasserstein form");
  if (augmented && (c.cls_c || c.cls_g))
    throw std::invalid_argument(
        "full_objectives: classification components do not apply to the augmented form");
  FullObjectives<Real> out;
  switch (f) {
    case Formulation::CycleGan:
      out.i_g = wsum<Real>({{w.adv, need(c.adv_g, "adv_g")},
                            {w.adv, need(c.adv_f, "adv_f")},
                            {w.cyc, need(c.cyc, "cyc")},
                            {w.id, need(c.id, "id")}});
      out.i_d = add(need(c.adv_d_x, "adv_d_x"), need(c.adv_d_y, "adv_d_y"));
      break;
    case Formulation::CStarGan:
      out.i_g = wsum<Real>({{w.adv, need(c.adv_g, "adv_g")},
                            {w.cls, need(c.cls_g, "cls_g")},
                            {w.cyc, need(c.cyc, "cyc")},
                            {w.id, need(c.id, "id")}});
      out.i_d = scalar_mul(need(c.adv_d, "adv_d"), static_cast<Real>(w.adv));
      out.i_c = scalar_mul(need(c.cls_c, "cls_c"), static_cast<Real>(w.cls));
      break;
    case Formulation::WStarGan:
      out.i_g = wsum<Real>({{w.adv, need(c.adv_g, "adv_g")},
                            {w.cls, need(c.cls_g, "cls_g")},
                            {w.cyc, need(c.cyc, "cyc")},
                            {w.id, need(c.id, "id")}});
      out.i_d = wsum<Real>({{w.adv, sub(need(c.w_fake_mean, "w_fake_mean"),
                                        need(c.w_real_mean, "w_real_mean"))},
                            {w.gp, need(c.gp, "gp")}});
      out.i_c = scalar_mul(need(c.cls_c, "cls_c"), static_cast<Real>(w.cls));
      break;
    case Formulation::AStarGan1:
    case Formulation::AStarGan2:
      out.i_g = wsum<Real>({{w.adv, need(c.adv_g, "adv_g")},
                            {w.cyc, need(c.cyc, "cyc")},
                            {w.id, need(c.id, "id")}});
      out.i_d = scalar_mul(need(c.adv_d, "adv_d"), static_cast<Real>(w.adv));
      break;
  }
  return out;
}

}  // namespace vclab
