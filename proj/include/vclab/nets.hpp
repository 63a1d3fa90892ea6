#pragma once

// Generator, patch discriminators, and segment classifiers: fully
// convolutional GLU stacks over Q x N feature sequences, parameterized in
// feature dimension Q, sequence length N, and domain count K. The domain
// index enters as a one-hot vector appended to every conv-layer input along
// the channel axis, repeated over the spatial axes.

#include <optional>
#include <string>
#include <vector>

#include "core/adam.hpp"
#include "core/nn.hpp"

namespace vclab {

inline long scaled_width(long base, long divisor) { return std::max<long>(1, base / divisor); }

/// One-hot rows for 1-based domain labels.
template <typename Real>
Tensor<Real> one_hot_rows(const std::vector<int>& labels, long k) {
  std::vector<Real> v(labels.size() * static_cast<std::size_t>(k), Real(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || labels[i] > k)
      throw std::invalid_argument("domain label " + std::to_string(labels[i]) +
                                  " out of range [1," + std::to_string(k) + "]");
    v[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(labels[i] - 1)] = Real(1);
  }
  return Tensor<Real>::from_values({static_cast<long>(labels.size()), k}, std::move(v));
}

/// Append a broadcast one-hot [B,K] to x [B,C,H,W] along channels.
template <typename Real>
Tensor<Real> append_condition(const Tensor<Real>& x, const Tensor<Real>& onehot) {
  Shape big{x.dim(0), onehot.dim(1), x.dim(2), x.dim(3)};
  Tensor<Real> cond = broadcast_axes(onehot, big, {2, 3});
  return concat<Real>({x, cond}, 1);
}

/// Product of per-patch probabilities, carried as a sum of logs: [B,P] -> [B].
template <typename Real>
Tensor<Real> log_product_of_patches(const Tensor<Real>& patch_probs) {
  return sum_axes(vclab::log(patch_probs), {1});
}

/// Renormalized product of per-segment distributions in the log domain:
/// [B,L,S] log-probabilities -> [B,L].
template <typename Real>
Tensor<Real> aggregate_segment_logp(const Tensor<Real>& seg_logp) {
  return log_softmax(sum_axes(seg_logp, {2}), 1);
}

// ---------------------------------------------------------------------------
// Generator

struct GeneratorSettings {
  bool two_d = false;  // 1D treats x as Q channels over N; 2D as a 1-channel Q x N image
  long q = 8;
  long k = 4;  // 0 builds an unconditional generator (the pairwise formulation)
  long divisor = 1;
  double init_gain = 0.02;
};

/// Two stride-2 GLU downsampling stages, a squeeze bottleneck, two stride-2
/// transposed-conv GLU stages back up, and a linear projection to Q channels.
/// Output shape equals input shape whenever N is a multiple of 4 (and, for the
/// 2D variant, Q is a multiple of 4).
template <typename Real>
class Generator {
 public:
  Generator() = default;

  Generator(const std::string& name, Rng& rng, GeneratorSettings s) : s_(s) {
    const long div = s.divisor;
    const long w0 = scaled_width(32, div), w1 = scaled_width(64, div),
               w2 = scaled_width(128, div), w3 = scaled_width(64, div),
               w4 = scaled_width(8, div);
    const long cond = s.k;
    const NormGroups ng = s.two_d ? NormGroups::PerChannelHeight : NormGroups::PerChannel;

    struct Stage {
      long in, out;
      ConvGeom g;
      bool up;
      long out_h;
    };
    std::vector<Stage> stages;
    if (s.two_d) {
      if (s.q % 4 != 0)
        throw std::invalid_argument("2D generator needs Q divisible by 4, got " +
                                    std::to_string(s.q));
      const long q = s.q, qh = q / 2, qq = q / 4;
      stages = {
          {1, w0, {3, 9, 1, 1, 1, 4}, false, q},
          {w0, w1, {4, 8, 2, 2, 1, 3}, false, qh},
          {w1, w2, {4, 8, 2, 2, 1, 3}, false, qq},
          {w2, w3, {3, 5, 1, 1, 1, 2}, false, qq},
          {w3, w4, {qq, 5, qq, 1, 0, 2}, false, 1},
          {w4, w3, {qq, 5, qq, 1, 0, 2}, true, qq},
          {w3, w2, {4, 8, 2, 2, 1, 3}, true, qh},
          {w2, w1, {4, 8, 2, 2, 1, 3}, true, q},
          {w1, w0, {3, 5, 1, 1, 1, 2}, false, q},
      };
    } else {
      stages = {
          {s.q, w0, {1, 9, 1, 1, 0, 4}, false, 1},
          {w0, w1, {1, 8, 1, 2, 0, 3}, false, 1},
          {w1, w2, {1, 8, 1, 2, 0, 3}, false, 1},
          {w2, w3, {1, 5, 1, 1, 0, 2}, false, 1},
          {w3, w4, {1, 5, 1, 1, 0, 2}, false, 1},
          {w4, w3, {1, 5, 1, 1, 0, 2}, true, 1},
          {w3, w2, {1, 8, 1, 2, 0, 3}, true, 1},
          {w2, w1, {1, 8, 1, 2, 0, 3}, true, 1},
          {w1, w0, {1, 5, 1, 1, 0, 2}, false, 1},
      };
    }
    int idx = 0;
    for (const Stage& st : stages) {
      const std::string lname = name + "/glu" + std::to_string(idx++);
      if (st.up)
        blocks_.push_back(GluConvBlock<Real>::up(lname, rng, st.in + cond, st.out, st.g, true, ng,
                                                 st.out_h));
      else
        blocks_.push_back(GluConvBlock<Real>::down(lname, rng, st.in + cond, st.out, st.g, true,
                                                   ng, st.out_h));
    }
    const long proj_in = w0 + cond;
    const long proj_out = s.two_d ? 1 : s.q;
    ConvGeom pg = s.two_d ? ConvGeom{3, 9, 1, 1, 1, 4} : ConvGeom{1, 9, 1, 1, 0, 4};
    proj_ = Conv2dLayer<Real>(name + "/proj", rng, proj_in, proj_out, pg, true, s.init_gain);
  }

  const GeneratorSettings& settings() const { return s_; }

  /// Image-form forward: x is [B,1,Q,N] (2D) or [B,Q,1,N] (1D); onehot [B,K]
  /// (undefined when unconditional).
  Tensor<Real> forward_image(const Tensor<Real>& x, const Tensor<Real>& onehot) const {
    Tensor<Real> h = x;
    for (const auto& b : blocks_) {
      if (s_.k > 0) h = append_condition(h, onehot);
      h = b.forward(h);
    }
    if (s_.k > 0) h = append_condition(h, onehot);
    return proj_.forward(h);
  }

  /// Feature-form forward: x is [B,Q,N]; labels are 1-based target domains.
  Tensor<Real> forward(const Tensor<Real>& x, const std::vector<int>& labels) const {
    Tensor<Real> onehot;
    if (s_.k > 0) onehot = one_hot_rows<Real>(labels, s_.k);
    return forward_with_onehot(x, onehot);
  }

  Tensor<Real> forward_with_onehot(const Tensor<Real>& x, const Tensor<Real>& onehot) const {
    const long B = x.dim(0), Q = x.dim(1), N = x.dim(2);
    if (Q != s_.q)
      throw std::invalid_argument("generator built for Q=" + std::to_string(s_.q) + ", got " +
                                  std::to_string(Q));
    if (N % 4 != 0)
      throw std::invalid_argument("generator input length must be a multiple of 4, got " +
                                  std::to_string(N));
    Tensor<Real> img =
        s_.two_d ? reshape(x, {B, 1, Q, N}) : reshape(x, {B, Q, 1, N});
    Tensor<Real> y = forward_image(img, onehot);
    return reshape(y, {B, Q, N});
  }

  std::vector<Parameter<Real>*> parameters() {
    std::vector<Parameter<Real>*> out;
    for (auto& b : blocks_) b.collect(out);
    out.push_back(&proj_.weight);
    if (proj_.bias) out.push_back(&*proj_.bias);
    return out;
  }

 private:
  GeneratorSettings s_;
  std::vector<GluConvBlock<Real>> blocks_;
  Conv2dLayer<Real> proj_;
};

// ---------------------------------------------------------------------------
// Patch discriminator (cross-entropy formulations)

struct DiscriminatorSettings {
  long q = 8;
  long k = 0;  // 0 = unconditional
  long divisor = 1;
  double dropout = 0.2;
  double init_gain = 0.02;
};

/// GLU-conv stack assigning one probability to each local segment; the final
/// D value is the product of patch probabilities, carried as a sum of logs.
template <typename Real>
class PatchDiscriminator {
 public:
  struct Output {
    Tensor<Real> patches;  // [B,P] probabilities in (0,1)
    Tensor<Real> log_d;    // [B] sum of patch log-probabilities
    Tensor<Real> d;        // [B] product of patch probabilities
  };

  PatchDiscriminator() = default;

  PatchDiscriminator(const std::string& name, Rng& rng, DiscriminatorSettings s) : s_(s) {
    const long w = scaled_width(32, s.divisor);
    const long cond = s.k;
    struct Stage {
      long in, out;
      ConvGeom g;
    };
    const std::vector<Stage> stages = {
        {1, w, {3, 9, 1, 1, 1, 4}},
        {w, w, {3, 8, 1, 2, 1, 3}},
        {w, w, {3, 8, 1, 2, 1, 3}},
        {w, w, {3, 6, 1, 2, 1, 2}},
    };
    int idx = 0;
    for (const Stage& st : stages)
      blocks_.push_back(GluConvBlock<Real>::down(name + "/glu" + std::to_string(idx++), rng,
                                                 st.in + cond, st.out, st.g, false,
                                                 NormGroups::PerChannel, 0));
    head_ = Conv2dLayer<Real>(name + "/head", rng, w + cond, 1, ConvGeom{s.q, 5, s.q, 1, 0, 2},
                              true, s.init_gain);
  }

  const DiscriminatorSettings& settings() const { return s_; }

  Output forward(const Tensor<Real>& feats, const std::vector<int>& labels, Rng& rng,
                 bool training) const {
    if (s_.k > 0 && labels.empty())
      throw std::invalid_argument("conditional discriminator needs domain labels");
    const long B = feats.dim(0), Q = feats.dim(1), N = feats.dim(2);
    Tensor<Real> onehot;
    if (s_.k > 0) onehot = one_hot_rows<Real>(labels, s_.k);
    Tensor<Real> h = reshape(feats, {B, 1, Q, N});
    for (const auto& b : blocks_) {
      if (s_.k > 0) h = append_condition(h, onehot);
      h = dropout(b.forward(h), s_.dropout, rng, training);
    }
    if (s_.k > 0) h = append_condition(h, onehot);
    Tensor<Real> logits = head_.forward(h);  // [B,1,1,P]
    const long P = logits.dim(3);
    Tensor<Real> probs = reshape(sigmoid(logits), {B, P});
    Output out;
    out.patches = probs;
    out.log_d = log_product_of_patches(probs);
    out.d = vclab::exp(out.log_d);
    return out;
  }

  std::vector<Parameter<Real>*> parameters() {
    std::vector<Parameter<Real>*> out;
    for (auto& b : blocks_) b.collect(out);
    out.push_back(&head_.weight);
    if (head_.bias) out.push_back(&*head_.bias);
    return out;
  }

 private:
  DiscriminatorSettings s_;
  std::vector<GluConvBlock<Real>> blocks_;
  Conv2dLayer<Real> head_;
};

// ---------------------------------------------------------------------------
// Segment classifier (domain classifier C and augmented classifier A)

struct ClassifierSettings {
  long q = 8;
  long classes = 4;        // K, 2K, or K+1
  long intermediate = 16;  // 16 for the domain classifier, 64 for the augmented one
  long divisor = 1;
  double dropout = 0.2;
  double init_gain = 0.02;
};

/// Per-segment softmax distributions over L classes; the aggregate is the
/// renormalized product of segment distributions, carried in the log domain.
template <typename Real>
class SegmentClassifier {
 public:
  struct Output {
    Tensor<Real> seg_logp;  // [B,L,S]
    Tensor<Real> agg_logp;  // [B,L]
  };

  SegmentClassifier() = default;

  SegmentClassifier(const std::string& name, Rng& rng, ClassifierSettings s) : s_(s) {
    const long m = scaled_width(s.intermediate, s.divisor);
    struct Stage {
      long in, out;
      ConvGeom g;
    };
    const std::vector<Stage> stages = {
        {1, m, {3, 9, 1, 1, 1, 4}},
        {m, m, {3, 8, 1, 2, 1, 3}},
        {m, m, {3, 8, 1, 2, 1, 3}},
        {m, m, {3, 6, 1, 1, 1, 2}},
    };
    int idx = 0;
    for (const Stage& st : stages)
      blocks_.push_back(GluConvBlock<Real>::down(name + "/glu" + std::to_string(idx++), rng,
                                                 st.in, st.out, st.g, false,
                                                 NormGroups::PerChannel, 0));
    head_ = Conv2dLayer<Real>(name + "/head", rng, m, s.classes,
                              ConvGeom{s.q, 5, s.q, 1, 0, 2}, true, s.init_gain);
  }

  const ClassifierSettings& settings() const { return s_; }

  Output forward(const Tensor<Real>& feats, Rng& rng, bool training) const {
    const long B = feats.dim(0), Q = feats.dim(1), N = feats.dim(2);
    Tensor<Real> h = reshape(feats, {B, 1, Q, N});
    for (const auto& b : blocks_) h = dropout(b.forward(h), s_.dropout, rng, training);
    Tensor<Real> logits = head_.forward(h);  // [B,L,1,S]
    const long S = logits.dim(3);
    Tensor<Real> seg = log_softmax(reshape(logits, {B, s_.classes, S}), 1);
    Output out;
    out.seg_logp = seg;
    out.agg_logp = aggregate_segment_logp(seg);
    return out;
  }

  std::vector<Parameter<Real>*> parameters() {
    std::vector<Parameter<Real>*> out;
    for (auto& b : blocks_) b.collect(out);
    out.push_back(&head_.weight);
    if (head_.bias) out.push_back(&*head_.bias);
    return out;
  }

 private:
  ClassifierSettings s_;
  std::vector<GluConvBlock<Real>> blocks_;
  Conv2dLayer<Real> head_;
};

// ---------------------------------------------------------------------------
// Shared-trunk critic + classifier (Wasserstein formulation)

struct CriticSettings {
  long q = 8;
  long k = 4;
  long divisor = 1;
  double dropout = 0.2;
  double init_gain = 0.02;
};

/// One GLU trunk with two heads: an unbounded per-patch score head (final D is
/// the sum of scores) and a K-way per-segment classification head.
template <typename Real>
class CriticClassifier {
 public:
  struct Output {
    Tensor<Real> d_patches;  // [B,P] raw scores
    Tensor<Real> d_score;    // [B] sum of patch scores
    Tensor<Real> seg_logp;   // [B,K,S]
    Tensor<Real> agg_logp;   // [B,K]
  };

  CriticClassifier() = default;

  CriticClassifier(const std::string& name, Rng& rng, CriticSettings s) : s_(s) {
    const long t0 = scaled_width(64, s.divisor), t1 = scaled_width(128, s.divisor),
               t2 = scaled_width(128, s.divisor), t3 = scaled_width(256, s.divisor);
    struct Stage {
      long in, out;
      ConvGeom g;
    };
    const std::vector<Stage> stages = {
        {1, t0, {4, 6, 2, 2, 1, 2}},
        {t0, t1, {3, 8, 1, 2, 1, 3}},
        {t1, t2, {4, 8, 2, 2, 1, 3}},
        {t2, t3, {3, 9, 1, 1, 1, 4}},
    };
    long h = s.q;
    int idx = 0;
    for (const Stage& st : stages) {
      blocks_.push_back(GluConvBlock<Real>::down(name + "/glu" + std::to_string(idx++), rng,
                                                 st.in, st.out, st.g, false,
                                                 NormGroups::PerChannel, 0));
      h = conv_out_size(h, st.g.kh, st.g.sh, st.g.ph);
    }
    trunk_h_ = h;
    d_head_ = Conv2dLayer<Real>(name + "/d_head", rng, t3, 1, ConvGeom{h, 5, h, 1, 0, 2}, true,
                                s.init_gain);
    c_head_ = Conv2dLayer<Real>(name + "/c_head", rng, t3, s.k, ConvGeom{h, 5, h, 1, 0, 2}, true,
                                s.init_gain);
  }

  const CriticSettings& settings() const { return s_; }

  Output forward(const Tensor<Real>& feats, Rng& rng, bool training) const {
    Tensor<Real> trunk = trunk_forward(feats, rng, training);
    Output out;
    fill_d(trunk, out);
    fill_c(trunk, out);
    return out;
  }

  /// Critic head only; used by the gradient penalty path.
  Tensor<Real> d_score_only(const Tensor<Real>& feats, Rng& rng, bool training) const {
    Output out;
    fill_d(trunk_forward(feats, rng, training), out);
    return out.d_score;
  }

  std::vector<Parameter<Real>*> parameters() {
    std::vector<Parameter<Real>*> out;
    for (auto& b : blocks_) b.collect(out);
    for (auto* l : {&d_head_, &c_head_}) {
      out.push_back(&l->weight);
      if (l->bias) out.push_back(&*l->bias);
    }
    return out;
  }

 private:
  Tensor<Real> trunk_forward(const Tensor<Real>& feats, Rng& rng, bool training) const {
    const long B = feats.dim(0), Q = feats.dim(1), N = feats.dim(2);
    Tensor<Real> h = reshape(feats, {B, 1, Q, N});
    for (const auto& b : blocks_) h = dropout(b.forward(h), s_.dropout, rng, training);
    return h;
  }

  void fill_d(const Tensor<Real>& trunk, Output& out) const {
    Tensor<Real> scores = d_head_.forward(trunk);  // [B,1,1,P]
    const long B = scores.dim(0), P = scores.dim(3);
    out.d_patches = reshape(scores, {B, P});
    out.d_score = sum_axes(out.d_patches, {1});
  }

  void fill_c(const Tensor<Real>& trunk, Output& out) const {
    Tensor<Real> logits = c_head_.forward(trunk);  // [B,K,1,S]
    const long B = logits.dim(0), S = logits.dim(3);
    Tensor<Real> seg = log_softmax(reshape(logits, {B, s_.k, S}), 1);
    out.seg_logp = seg;
    out.agg_logp = aggregate_segment_logp(seg);
  }

  CriticSettings s_;
  std::vector<GluConvBlock<Real>> blocks_;
  Conv2dLayer<Real> d_head_;
  Conv2dLayer<Real> c_head_;
  long trunk_h_ = 0;
};

}  // namespace vclab
