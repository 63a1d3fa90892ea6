#pragma once

// Objective evaluation: frame-level mel-cepstral distortion, its average
// along the optimal dynamic-time-warping path, modulation spectra of
// coefficient trajectories, and discriminator/classifier statistics over
// converted samples.

#include <span>

#include "features.hpp"
#include "nets.hpp"

namespace vclab {

#if defined(__GNUC__) || defined(__clang__)
#define VCLAB_NOINLINE __attribute__((noinline))
#else
#define VCLAB_NOINLINE
#endif

/// (10/ln 10) * sqrt(2 * sum_{q=2}^{Q} (a_q - b_q)^2); the first coefficient
/// is excluded. Kept out of line so every call site computes identical bits
/// regardless of contraction settings.
VCLAB_NOINLINE inline double mcd_frame(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mcd_frame: dimension mismatch");
  if (a.size() < 2) throw std::invalid_argument("mcd_frame: needs Q >= 2");
  double acc = 0.0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return (10.0 / std::log(10.0)) * std::sqrt(2.0 * acc);
}

struct DtwResult {
  double mean_db = 0.0;
  double total_db = 0.0;
  std::vector<std::pair<long, long>> path;  // 0-based (i,j), starts (0,0), ends (N-1,M-1)
};

/// Average frame MCD along the minimum-cost monotone alignment with step set
/// {(1,0),(0,1),(1,1)} and fixed endpoints; the average is over path length.
inline DtwResult dtw_mcd(const FeatureSequence& converted, const FeatureSequence& target) {
  if (converted.q != target.q) throw std::invalid_argument("dtw_mcd: feature dimension mismatch");
  if (converted.n < 1 || target.n < 1) throw std::invalid_argument("dtw_mcd: empty sequence");
  const long n = converted.n, m = target.n, q = converted.q;

  // frame-major copies so frames are contiguous
  std::vector<double> a(static_cast<std::size_t>(n * q)), b(static_cast<std::size_t>(m * q));
  for (long i = 0; i < n; ++i)
    for (long qi = 0; qi < q; ++qi) a[static_cast<std::size_t>(i * q + qi)] = converted.at(qi, i);
  for (long j = 0; j < m; ++j)
    for (long qi = 0; qi < q; ++qi) b[static_cast<std::size_t>(j * q + qi)] = target.at(qi, j);
  auto cost = [&](long i, long j) {
    return mcd_frame(std::span<const double>(&a[static_cast<std::size_t>(i * q)], static_cast<std::size_t>(q)),
                     std::span<const double>(&b[static_cast<std::size_t>(j * q)], static_cast<std::size_t>(q)));
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(static_cast<std::size_t>(n * m), inf);
  std::vector<std::int8_t> step(static_cast<std::size_t>(n * m), 0);  // 0 diag, 1 up(i-1), 2 left(j-1)
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < m; ++j) {
      const double c = cost(i, j);
      if (i == 0 && j == 0) {
        acc[0] = c;
        continue;
      }
      double best = inf;
      std::int8_t dir = 0;
      if (i > 0 && j > 0 && acc[static_cast<std::size_t>((i - 1) * m + (j - 1))] < best) {
        best = acc[static_cast<std::size_t>((i - 1) * m + (j - 1))];
        dir = 0;
      }
      if (i > 0 && acc[static_cast<std::size_t>((i - 1) * m + j)] < best) {
        best = acc[static_cast<std::size_t>((i - 1) * m + j)];
        dir = 1;
      }
      if (j > 0 && acc[static_cast<std::size_t>(i * m + (j - 1))] < best) {
        best = acc[static_cast<std::size_t>(i * m + (j - 1))];
        dir = 2;
      }
      acc[static_cast<std::size_t>(i * m + j)] = c + best;
      step[static_cast<std::size_t>(i * m + j)] = dir;
    }
  }

  DtwResult out;
  out.total_db = acc[static_cast<std::size_t>(n * m - 1)];
  long i = n - 1, j = m - 1;
  out.path.push_back({i, j});
  while (i != 0 || j != 0) {
    const std::int8_t dir = step[static_cast<std::size_t>(i * m + j)];
    if (i == 0)
      --j;
    else if (j == 0)
      --i;
    else if (dir == 0) {
      --i;
      --j;
    } else if (dir == 1)
      --i;
    else
      --j;
    out.path.push_back({i, j});
  }
  std::reverse(out.path.begin(), out.path.end());
  out.mean_db = out.total_db / static_cast<double>(out.path.size());
  return out;
}

// ---------------------------------------------------------------------------
// Modulation spectrum

namespace detail {

/// In-place iterative radix-2 FFT on interleaved complex data.
inline void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if ((n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t u = i + k, v = i + k + len / 2;
        const double tr = re[v] * cr - im[v] * ci;
        const double ti = re[v] * ci + im[v] * cr;
        re[v] = re[u] - tr;
        im[v] = im[u] - ti;
        re[u] += tr;
        im[u] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

}  // namespace detail

struct ModulationSpectrum {
  std::vector<double> freq_hz;    // bins 0..window/2
  std::vector<double> power_db;   // floored at -120 dB
  long utterances_used = 0;
  long utterances_skipped = 0;    // shorter than the window
};

/// Averaged periodogram of the mean-removed dim-th coefficient trajectory:
/// Hann-windowed segments (hop = window/2, zero-padded final segment),
/// averaged over segments and then utterances. dim is 0-based.
inline ModulationSpectrum modulation_spectrum(const std::vector<const FeatureSequence*>& seqs,
                                              long dim, long window = 128, long hop = 64) {
  if ((window & (window - 1)) != 0)
    throw std::invalid_argument("modulation_spectrum: window must be a power of two");
  std::vector<double> hann(static_cast<std::size_t>(window));
  double wsum2 = 0.0;
  for (long i = 0; i < window; ++i) {
    hann[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                              static_cast<double>(window)));
    wsum2 += hann[static_cast<std::size_t>(i)] * hann[static_cast<std::size_t>(i)];
  }

  ModulationSpectrum out;
  const long bins = window / 2 + 1;
  std::vector<double> mean_power(static_cast<std::size_t>(bins), 0.0);
  double frame_shift_ms = 8.0;
  for (const FeatureSequence* s : seqs) {
    if (dim >= s->q) throw std::invalid_argument("modulation_spectrum: dimension out of range");
    if (s->n < window) {
      ++out.utterances_skipped;
      continue;
    }
    frame_shift_ms = s->frame_shift_ms;
    std::vector<double> traj(static_cast<std::size_t>(s->n));
    double mu = 0.0;
    for (long i = 0; i < s->n; ++i) mu += s->at(dim, i);
    mu /= static_cast<double>(s->n);
    for (long i = 0; i < s->n; ++i) traj[static_cast<std::size_t>(i)] = s->at(dim, i) - mu;

    std::vector<double> utt_power(static_cast<std::size_t>(bins), 0.0);
    long segments = 0;
    for (long start = 0; start < s->n; start += hop) {
      std::vector<double> re(static_cast<std::size_t>(window), 0.0);
      std::vector<double> im(static_cast<std::size_t>(window), 0.0);
      const long avail = std::min(window, s->n - start);
      for (long i = 0; i < avail; ++i)
        re[static_cast<std::size_t>(i)] =
            traj[static_cast<std::size_t>(start + i)] * hann[static_cast<std::size_t>(i)];
      detail::fft_radix2(re, im);
      for (long f = 0; f < bins; ++f)
        utt_power[static_cast<std::size_t>(f)] +=
            (re[static_cast<std::size_t>(f)] * re[static_cast<std::size_t>(f)] +
             im[static_cast<std::size_t>(f)] * im[static_cast<std::size_t>(f)]) /
            wsum2;
      ++segments;
    }
    for (long f = 0; f < bins; ++f)
      mean_power[static_cast<std::size_t>(f)] +=
          utt_power[static_cast<std::size_t>(f)] / static_cast<double>(segments);
    ++out.utterances_used;
  }
  if (out.utterances_used == 0)
    throw std::invalid_argument("modulation_spectrum: every trajectory is shorter than the window");

  const double fs = 1000.0 / frame_shift_ms;
  out.freq_hz.resize(static_cast<std::size_t>(bins));
  out.power_db.resize(static_cast<std::size_t>(bins));
  for (long f = 0; f < bins; ++f) {
    out.freq_hz[static_cast<std::size_t>(f)] =
        static_cast<double>(f) * fs / static_cast<double>(window);
    const double p = mean_power[static_cast<std::size_t>(f)] / static_cast<double>(out.utterances_used);
    out.power_db[static_cast<std::size_t>(f)] = 10.0 * std::log10(p + 1e-12);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adversary report

/// Mean realness and target share of per-segment augmented-classifier
/// distributions: realness = sum_{k<=K} p_k, target share = p_t / sum_{k<=K} p_k.
struct AugmentedProbs {
  double real_prob = 0.0;
  double target_prob = 0.0;
};

inline AugmentedProbs augmented_segment_probs(const Tensor<double>& seg_logp, long k_count,
                                              int target) {
  const long l = seg_logp.dim(1), s_count = seg_logp.dim(2);
  if (target < 1 || target > k_count)
    throw std::invalid_argument("augmented_segment_probs: target out of range");
  AugmentedProbs out;
  for (long s = 0; s < s_count; ++s) {
    double real_mass = 0.0;
    for (long k = 0; k < k_count; ++k)
      real_mass += std::exp(seg_logp.values()[static_cast<std::size_t>(k * s_count + s)]);
    const double p_t =
        std::exp(seg_logp.values()[static_cast<std::size_t>((target - 1) * s_count + s)]);
    out.real_prob += real_mass;
    out.target_prob += p_t / real_mass;
  }
  (void)l;
  out.real_prob /= static_cast<double>(s_count);
  out.target_prob /= static_cast<double>(s_count);
  return out;
}

struct ConversionSample {
  int source = 0;
  int target = 0;
  const FeatureSequence* features = nullptr;  // converted, raw feature space
};

struct AdversaryRow {
  int source = 0;
  int target = 0;
  double mean_d = 0.0;            // discriminator probability (or critic score)
  double mean_target_prob = 0.0;  // classifier probability of the target domain
  double mean_real_prob = 0.0;    // augmented formulations only
  long count = 0;
};

namespace detail {

inline Tensor<double> normalized_batch1(const FeatureSequence& x, const DomainStats& stats) {
  FeatureSequence n = normalize(x, stats);
  return Tensor<double>::from_values({1, n.q, n.n}, std::move(n.data));
}

template <typename Fn>
std::vector<AdversaryRow> per_pair_rows(const std::vector<ConversionSample>& conversions,
                                        Fn&& accumulate) {
  std::vector<AdversaryRow> rows;
  auto row_of = [&](int s, int t) -> AdversaryRow& {
    for (auto& r : rows)
      if (r.source == s && r.target == t) return r;
    rows.push_back(AdversaryRow{s, t, 0, 0, 0, 0});
    return rows.back();
  };
  for (const auto& c : conversions) {
    AdversaryRow& r = row_of(c.source, c.target);
    accumulate(c, r);
    r.count += 1;
  }
  for (auto& r : rows) {
    r.mean_d /= static_cast<double>(r.count);
    r.mean_target_prob /= static_cast<double>(r.count);
    r.mean_real_prob /= static_cast<double>(r.count);
  }
  return rows;
}

}  // namespace detail

/// Cross-entropy formulation: direct conditional D probability and the
/// domain classifier's probability of the target.
inline std::vector<AdversaryRow> adversary_report_cstargan(
    const PatchDiscriminator<double>& d, const SegmentClassifier<double>& c,
    const std::vector<ConversionSample>& conversions, const std::vector<DomainStats>& stats) {
  Rng rng(0);
  return detail::per_pair_rows(conversions, [&](const ConversionSample& cv, AdversaryRow& r) {
    auto x = detail::normalized_batch1(*cv.features, stats[static_cast<std::size_t>(cv.target - 1)]);
    auto d_out = d.forward(x, {cv.target}, rng, false);
    auto c_out = c.forward(x, rng, false);
    r.mean_d += d_out.d.values()[0];
    r.mean_target_prob += std::exp(c_out.agg_logp.values()[static_cast<std::size_t>(cv.target - 1)]);
  });
}

/// Wasserstein formulation: critic score (unbounded) and classifier head.
inline std::vector<AdversaryRow> adversary_report_wstargan(
    const CriticClassifier<double>& dc, const std::vector<ConversionSample>& conversions,
    const std::vector<DomainStats>& stats) {
  Rng rng(0);
  return detail::per_pair_rows(conversions, [&](const ConversionSample& cv, AdversaryRow& r) {
    auto x = detail::normalized_batch1(*cv.features, stats[static_cast<std::size_t>(cv.target - 1)]);
    auto out = dc.forward(x, rng, false);
    r.mean_d += out.d_score.values()[0];
    r.mean_target_prob += std::exp(out.agg_logp.values()[static_cast<std::size_t>(cv.target - 1)]);
  });
}

/// Augmented formulations: per-segment realness and target share.
inline std::vector<AdversaryRow> adversary_report_astargan(
    const SegmentClassifier<double>& a, long k_count,
    const std::vector<ConversionSample>& conversions, const std::vector<DomainStats>& stats) {
  Rng rng(0);
  return detail::per_pair_rows(conversions, [&](const ConversionSample& cv, AdversaryRow& r) {
    auto x = detail::normalized_batch1(*cv.features, stats[static_cast<std::size_t>(cv.target - 1)]);
    auto out = a.forward(x, rng, false);
    auto probs = augmented_segment_probs(out.seg_logp, k_count, cv.target);
    r.mean_real_prob += probs.real_prob;
    r.mean_target_prob += probs.target_prob;
    r.mean_d += probs.real_prob;  // realness doubles as the D-style output
  });
}

// ---------------------------------------------------------------------------
// CSV reports

struct McdUtteranceRow {
  std::string source, target, utterance;
  double mcd_db;
};

inline void write_mcd_utterance_csv(const std::filesystem::path& path,
                                    const std::vector<McdUtteranceRow>& rows) {
  atomic_write(path, [&](std::ostream& os) {
    os << "source,target,utterance,mcd_db\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.mcd_db);
      os << r.source << ',' << r.target << ',' << r.utterance << ',' << buf << '\n';
    }
  });
}

/// Per-pair aggregate rows: mean with a 95% normal-approximation interval
/// (1.96 * stderr). Utterances weigh equally.
inline void write_mcd_pair_csv(const std::filesystem::path& path,
                               const std::vector<McdUtteranceRow>& rows) {
  struct Agg {
    std::string source, target;
    double sum = 0, sq = 0;
    long count = 0;
  };
  std::vector<Agg> aggs;
  for (const auto& r : rows) {
    Agg* a = nullptr;
    for (auto& e : aggs)
      if (e.source == r.source && e.target == r.target) a = &e;
    if (!a) {
      aggs.push_back(Agg{r.source, r.target, 0, 0, 0});
      a = &aggs.back();
    }
    a->sum += r.mcd_db;
    a->sq += r.mcd_db * r.mcd_db;
    a->count += 1;
  }
  atomic_write(path, [&](std::ostream& os) {
    os << "source,target,mean_mcd_db,ci95_db,utterances\n";
    char buf[128];
    for (const auto& a : aggs) {
      const double mean = a.sum / static_cast<double>(a.count);
      const double var = std::max(0.0, a.sq / static_cast<double>(a.count) - mean * mean);
      const double ci =
          a.count > 1 ? 1.96 * std::sqrt(var / static_cast<double>(a.count - 1)) : 0.0;
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g", mean, ci);
      os << a.source << ',' << a.target << ',' << buf << ',' << a.count << '\n';
    }
  });
}

inline void write_modspec_csv(const std::filesystem::path& path, const ModulationSpectrum& ms) {
  atomic_write(path, [&](std::ostream& os) {
    os << "freq_hz,power_db\n";
    char buf[64];
    for (std::size_t i = 0; i < ms.freq_hz.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g", ms.freq_hz[i], ms.power_db[i]);
      os << buf << '\n';
    }
  });
}

inline void write_adversary_csv(const std::filesystem::path& path,
                                const std::vector<AdversaryRow>& rows) {
  atomic_write(path, [&](std::ostream& os) {
    os << "source,target,mean_d,mean_target_prob,mean_real_prob,utterances\n";
    char buf[128];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", r.mean_d, r.mean_target_prob,
                    r.mean_real_prob);
      os << r.source << ',' << r.target << ',' << buf << ',' << r.count << '\n';
    }
  });
}

}  // namespace vclab
