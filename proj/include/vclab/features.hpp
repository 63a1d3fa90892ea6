#pragma once

// Acoustic-feature data model: Q x N per-frame feature sequences with
// optional voicing mask and F0 track, per-domain statistics, normalization,
// conversion post-processing, the log-F0 transform, VCF1 file I/O, corpus
// manifests, and a synthetic multi-domain toy corpus.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/io.hpp"
#include "core/random.hpp"

namespace vclab {

/// Q x N feature matrix, stored trajectory-major: data[q*N + n].
struct FeatureSequence {
  long q = 0;
  long n = 0;
  std::vector<double> data;
  double frame_shift_ms = 8.0;
  std::vector<std::uint8_t> voiced;  // optional, length n when present
  std::vector<double> f0;            // optional, Hz, 0 exactly where unvoiced

  double& at(long qi, long ni) { return data[static_cast<std::size_t>(qi * n + ni)]; }
  double at(long qi, long ni) const { return data[static_cast<std::size_t>(qi * n + ni)]; }

  bool has_mask() const { return !voiced.empty(); }
  bool has_f0() const { return !f0.empty(); }
  bool is_voiced(long ni) const { return voiced.empty() || voiced[static_cast<std::size_t>(ni)]; }

  void validate() const {
    if (n < 1 || q < 1) throw std::invalid_argument("feature sequence must be at least 1x1");
    if (static_cast<long>(data.size()) != q * n)
      throw std::invalid_argument("feature data size does not match QxN");
    if (!voiced.empty() && static_cast<long>(voiced.size()) != n)
      throw std::invalid_argument("voiced mask length must equal N");
    if (!f0.empty() && static_cast<long>(f0.size()) != n)
      throw std::invalid_argument("f0 length must equal N");
    for (double v : f0)
      if (v < 0.0) throw std::invalid_argument("f0 must be non-negative");
    if (!f0.empty() && !voiced.empty()) {
      for (long i = 0; i < n; ++i) {
        const bool unvoiced = voiced[static_cast<std::size_t>(i)] == 0;
        if (unvoiced && f0[static_cast<std::size_t>(i)] != 0.0)
          throw std::invalid_argument("f0 must be exactly 0 on unvoiced frames");
      }
    }
  }
};

/// Per-domain feature statistics over voiced frames.
struct DomainStats {
  std::vector<double> psi;   // per-dimension mean
  std::vector<double> zeta;  // per-dimension standard deviation (population)
  std::optional<double> mu_logf0;
  std::optional<double> sigma_logf0;
};

struct DomainCorpus {
  std::vector<std::string> names;                          // size K
  std::vector<std::vector<FeatureSequence>> utterances;    // per domain
  std::vector<DomainStats> stats;                          // per domain
  double frame_shift_ms = 8.0;

  long domain_count() const { return static_cast<long>(names.size()); }
};

inline long& postprocess_warning_count() {
  static long count = 0;
  return count;
}

// ---------------------------------------------------------------------------
// Statistics and normalization

/// Mean/std per dimension over the voiced frames of all utterances
/// (population std); log-F0 stats when every utterance carries F0.
inline DomainStats compute_stats(const std::vector<FeatureSequence>& utterances) {
  if (utterances.empty()) throw std::invalid_argument("compute_stats: no utterances");
  const long q = utterances.front().q;
  long voiced_total = 0;
  std::vector<double> sum(static_cast<std::size_t>(q), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(q), 0.0);
  double f0_sum = 0.0, f0_sq = 0.0;
  long f0_count = 0;
  bool all_f0 = true;
  for (const auto& u : utterances) {
    if (u.q != q) throw std::invalid_argument("compute_stats: mixed feature dimensions");
    u.validate();
    all_f0 = all_f0 && u.has_f0();
    for (long ni = 0; ni < u.n; ++ni) {
      if (!u.is_voiced(ni)) continue;
      ++voiced_total;
      for (long qi = 0; qi < q; ++qi) {
        const double v = u.at(qi, ni);
        sum[static_cast<std::size_t>(qi)] += v;
        sq[static_cast<std::size_t>(qi)] += v * v;
      }
      if (u.has_f0() && u.f0[static_cast<std::size_t>(ni)] > 0.0) {
        const double lf = std::log(u.f0[static_cast<std::size_t>(ni)]);
        f0_sum += lf;
        f0_sq += lf * lf;
        ++f0_count;
      }
    }
  }
  if (voiced_total < 2)
    throw std::invalid_argument("compute_stats: need at least 2 voiced frames, got " +
                                std::to_string(voiced_total));
  DomainStats s;
  s.psi.resize(static_cast<std::size_t>(q));
  s.zeta.resize(static_cast<std::size_t>(q));
  for (long qi = 0; qi < q; ++qi) {
    const double m = sum[static_cast<std::size_t>(qi)] / static_cast<double>(voiced_total);
    const double var =
        sq[static_cast<std::size_t>(qi)] / static_cast<double>(voiced_total) - m * m;
    if (var <= 0.0)
      throw std::invalid_argument("compute_stats: dimension " + std::to_string(qi + 1) +
                                  " has zero variance (degenerate corpus)");
    s.psi[static_cast<std::size_t>(qi)] = m;
    s.zeta[static_cast<std::size_t>(qi)] = std::sqrt(var);
  }
  if (all_f0 && f0_count >= 2) {
    const double m = f0_sum / static_cast<double>(f0_count);
    const double var = f0_sq / static_cast<double>(f0_count) - m * m;
    if (var > 0.0) {
      s.mu_logf0 = m;
      s.sigma_logf0 = std::sqrt(var);
    }
  }
  return s;
}

/// x_{q,n} <- (x_{q,n} - psi_q) / zeta_q, all frames.
inline FeatureSequence normalize(const FeatureSequence& x, const DomainStats& s) {
  FeatureSequence out = x;
  for (long qi = 0; qi < x.q; ++qi) {
    const double m = s.psi[static_cast<std::size_t>(qi)];
    const double inv = 1.0 / s.zeta[static_cast<std::size_t>(qi)];
    for (long ni = 0; ni < x.n; ++ni) out.at(qi, ni) = (x.at(qi, ni) - m) * inv;
  }
  return out;
}

inline FeatureSequence denormalize(const FeatureSequence& x, const DomainStats& s) {
  FeatureSequence out = x;
  for (long qi = 0; qi < x.q; ++qi) {
    const double m = s.psi[static_cast<std::size_t>(qi)];
    const double sd = s.zeta[static_cast<std::size_t>(qi)];
    for (long ni = 0; ni < x.n; ++ni) out.at(qi, ni) = x.at(qi, ni) * sd + m;
  }
  return out;
}

/// Affine map per dimension so the output's voiced-frame mean/std equal the
/// target statistics exactly. A zero-variance dimension passes through
/// unchanged (the affine is undefined there) and bumps the warning counter.
inline FeatureSequence convert_postprocess(const FeatureSequence& yhat, const DomainStats& trg) {
  FeatureSequence out = yhat;
  long voiced_total = 0;
  for (long ni = 0; ni < yhat.n; ++ni)
    if (yhat.is_voiced(ni)) ++voiced_total;
  if (voiced_total < 1) throw std::invalid_argument("convert_postprocess: no voiced frames");
  for (long qi = 0; qi < yhat.q; ++qi) {
    double sum = 0.0, sq = 0.0;
    for (long ni = 0; ni < yhat.n; ++ni) {
      if (!yhat.is_voiced(ni)) continue;
      const double v = yhat.at(qi, ni);
      sum += v;
      sq += v * v;
    }
    const double m = sum / static_cast<double>(voiced_total);
    const double var = sq / static_cast<double>(voiced_total) - m * m;
    if (var <= 0.0) {
      ++postprocess_warning_count();
      continue;
    }
    const double scale = trg.zeta[static_cast<std::size_t>(qi)] / std::sqrt(var);
    const double shift = trg.psi[static_cast<std::size_t>(qi)];
    for (long ni = 0; ni < yhat.n; ++ni)
      out.at(qi, ni) = (yhat.at(qi, ni) - m) * scale + shift;
  }
  return out;
}

/// Log-Gaussian normalized F0 transform on voiced frames; unvoiced stay 0.
inline std::vector<double> convert_f0(const std::vector<double>& f0, const DomainStats& src,
                                      const DomainStats& trg) {
  if (!src.mu_logf0 || !trg.mu_logf0)
    throw std::invalid_argument("convert_f0: both domains need log-F0 statistics");
  std::vector<double> out(f0.size());
  const double mu_s = *src.mu_logf0, sd_s = *src.sigma_logf0;
  const double mu_t = *trg.mu_logf0, sd_t = *trg.sigma_logf0;
  for (std::size_t i = 0; i < f0.size(); ++i) {
    if (f0[i] < 0.0) throw std::invalid_argument("convert_f0: negative f0");
    if (f0[i] == 0.0) {
      out[i] = 0.0;
      continue;
    }
    out[i] = std::exp((std::log(f0[i]) - mu_s) * (sd_t / sd_s) + mu_t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Padding

/// Edge-replication padding on the time axis up to the next multiple of m.
/// Returns the padded sequence and the original length; crop_frames inverts.
inline std::pair<FeatureSequence, long> pad_to_multiple(const FeatureSequence& x, long m = 4) {
  if (m < 1) throw std::invalid_argument("pad_to_multiple: m must be >= 1");
  const long rem = x.n % m;
  if (rem == 0) return {x, x.n};
  const long pad = m - rem;
  FeatureSequence out;
  out.q = x.q;
  out.n = x.n + pad;
  out.frame_shift_ms = x.frame_shift_ms;
  out.data.resize(static_cast<std::size_t>(out.q * out.n));
  for (long qi = 0; qi < x.q; ++qi) {
    for (long ni = 0; ni < x.n; ++ni) out.at(qi, ni) = x.at(qi, ni);
    for (long ni = x.n; ni < out.n; ++ni) out.at(qi, ni) = x.at(qi, x.n - 1);
  }
  if (x.has_mask()) {
    out.voiced = x.voiced;
    out.voiced.resize(static_cast<std::size_t>(out.n), x.voiced.back());
  }
  if (x.has_f0()) {
    out.f0 = x.f0;
    out.f0.resize(static_cast<std::size_t>(out.n), x.f0.back());
  }
  return {out, x.n};
}

inline FeatureSequence crop_frames(const FeatureSequence& x, long n) {
  if (n > x.n) throw std::invalid_argument("crop_frames: cannot grow");
  FeatureSequence out;
  out.q = x.q;
  out.n = n;
  out.frame_shift_ms = x.frame_shift_ms;
  out.data.resize(static_cast<std::size_t>(out.q * n));
  for (long qi = 0; qi < x.q; ++qi)
    for (long ni = 0; ni < n; ++ni) out.at(qi, ni) = x.at(qi, ni);
  if (x.has_mask()) out.voiced.assign(x.voiced.begin(), x.voiced.begin() + n);
  if (x.has_f0()) out.f0.assign(x.f0.begin(), x.f0.begin() + n);
  return out;
}

// ---------------------------------------------------------------------------
// VCF1 file format
// magic "VCF1"; u32 version=1; u32 Q; u32 N; u32 flags (bit0: f0 present,
// bit1: mask present); f32 little-endian data, frame-major (N frames x Q);
// then f0 (N x f32) and mask (N bytes, 0/1) per flags.

inline void write_vcf1(const std::filesystem::path& path, const FeatureSequence& x) {
  x.validate();
  atomic_write(path, [&](std::ostream& os) {
    os.write("VCF1", 4);
    detail::write_le<std::uint32_t>(os, 1);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.q));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(x.n));
    std::uint32_t flags = 0;
    if (x.has_f0()) flags |= 1u;
    if (x.has_mask()) flags |= 2u;
    detail::write_le<std::uint32_t>(os, flags);
    for (long ni = 0; ni < x.n; ++ni)
      for (long qi = 0; qi < x.q; ++qi)
        detail::write_le<float>(os, static_cast<float>(x.at(qi, ni)));
    if (x.has_f0())
      for (double v : x.f0) detail::write_le<float>(os, static_cast<float>(v));
    if (x.has_mask())
      for (std::uint8_t b : x.voiced) os.put(static_cast<char>(b ? 1 : 0));
  });
}

inline FeatureSequence read_vcf1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open feature file " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "VCF1", 4) != 0)
    throw std::runtime_error(path.string() + " is not a VCF1 feature file");
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != 1)
    throw std::runtime_error("unsupported VCF1 version " + std::to_string(version));
  FeatureSequence x;
  x.q = static_cast<long>(detail::read_le<std::uint32_t>(is));
  x.n = static_cast<long>(detail::read_le<std::uint32_t>(is));
  const auto flags = detail::read_le<std::uint32_t>(is);
  x.data.resize(static_cast<std::size_t>(x.q * x.n));
  for (long ni = 0; ni < x.n; ++ni)
    for (long qi = 0; qi < x.q; ++qi)
      x.at(qi, ni) = static_cast<double>(detail::read_le<float>(is));
  if (flags & 1u) {
    x.f0.resize(static_cast<std::size_t>(x.n));
    for (auto& v : x.f0) v = static_cast<double>(detail::read_le<float>(is));
  }
  if (flags & 2u) {
    x.voiced.resize(static_cast<std::size_t>(x.n));
    for (auto& b : x.voiced) b = static_cast<std::uint8_t>(is.get() ? 1 : 0);
  } else if (flags & 1u) {
    // ingestion convention: voicing decided by f0 > 0
    x.voiced.resize(static_cast<std::size_t>(x.n));
    for (long ni = 0; ni < x.n; ++ni)
      x.voiced[static_cast<std::size_t>(ni)] = x.f0[static_cast<std::size_t>(ni)] > 0.0 ? 1 : 0;
  }
  if (!is) throw std::runtime_error("truncated feature file " + path.string());
  x.validate();
  return x;
}

// ---------------------------------------------------------------------------
// Corpus manifest (JSON): domain names and file paths, plus the frame shift.

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<std::string>& names,
                           const std::vector<std::vector<std::string>>& files,
                           double frame_shift_ms) {
  nlohmann::json j;
  j["version"] = 1;
  j["frame_shift_ms"] = frame_shift_ms;
  j["domains"] = nlohmann::json::array();
  for (std::size_t k = 0; k < names.size(); ++k)
    j["domains"].push_back({{"name", names[k]}, {"files", files[k]}});
  atomic_write(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

/// Load a manifest and its feature files; statistics are computed from
/// exactly the listed utterances.
inline DomainCorpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  nlohmann::json j = nlohmann::json::parse(is);
  DomainCorpus corpus;
  corpus.frame_shift_ms = j.value("frame_shift_ms", 8.0);
  const auto base = manifest_path.parent_path();
  for (const auto& d : j.at("domains")) {
    corpus.names.push_back(d.at("name").get<std::string>());
    std::vector<FeatureSequence> utts;
    for (const auto& f : d.at("files")) {
      auto p = base / f.get<std::string>();
      FeatureSequence x = read_vcf1(p);
      x.frame_shift_ms = corpus.frame_shift_ms;
      utts.push_back(std::move(x));
    }
    if (utts.empty())
      throw std::runtime_error("manifest domain '" + corpus.names.back() + "' lists no files");
    corpus.utterances.push_back(std::move(utts));
  }
  if (corpus.names.empty()) throw std::runtime_error("manifest lists no domains");
  for (const auto& utts : corpus.utterances) corpus.stats.push_back(compute_stats(utts));
  return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic toy corpus: domain identity is a mean shift plus a linear mixing
// map over shared low-frequency sinusoidal content, so per-dimension moment
// matching alone cannot fake a domain, but a linear conditional map can.

struct ToyStyle {
  double mean_scale = 2.0;
  double noise_sigma = 0.25;
};

inline ToyStyle toy_style_from_name(const std::string& name) {
  if (name == "gaussian-domains") return ToyStyle{};
  throw std::invalid_argument("unknown toy corpus style '" + name + "'");
}

namespace detail {

/// Deterministic ±1 sign pattern per domain: all +, all −, alternating, ...
inline std::vector<double> domain_direction(long k, long q) {
  std::vector<double> v(static_cast<std::size_t>(q));
  if (k == 1)
    std::fill(v.begin(), v.end(), 1.0);
  else if (k == 2)
    std::fill(v.begin(), v.end(), -1.0);
  else if (k == 3)
    for (long i = 0; i < q; ++i) v[static_cast<std::size_t>(i)] = (i % 2 == 0) ? 1.0 : -1.0;
  else if (k == 4)
    for (long i = 0; i < q; ++i) v[static_cast<std::size_t>(i)] = (i % 2 == 0) ? -1.0 : 1.0;
  else {
    Rng r(static_cast<std::uint64_t>(9000 + k));
    for (auto& e : v) e = r.uniform() < 0.5 ? -1.0 : 1.0;
  }
  return v;
}

/// Rotation by a domain-specific angle in each (2p, 2p+1) coordinate plane,
/// with mild per-dimension scaling. Applied to a Q-vector in place.
struct DomainMixer {
  std::vector<double> cosines, sines, scales;

  DomainMixer(long k, long q, long k_count) {
    const long planes = q / 2;
    cosines.resize(static_cast<std::size_t>(planes));
    sines.resize(static_cast<std::size_t>(planes));
    const double base = (static_cast<double>(k - 1) / static_cast<double>(k_count + 1)) * 3.14159265358979323846;
    for (long p = 0; p < planes; ++p) {
      const double theta = base * (1.0 + 0.3 * static_cast<double>(p));
      cosines[static_cast<std::size_t>(p)] = std::cos(theta);
      sines[static_cast<std::size_t>(p)] = std::sin(theta);
    }
    scales.resize(static_cast<std::size_t>(q));
    for (long i = 0; i < q; ++i)
      scales[static_cast<std::size_t>(i)] =
          0.8 + 0.45 * (static_cast<double>((i * 7 + k * 3) % 5) / 4.0);
  }

  void apply(std::vector<double>& frame) const {
    const long q = static_cast<long>(frame.size());
    for (long p = 0; p + 1 < q; p += 2) {
      const double a = frame[static_cast<std::size_t>(p)];
      const double b = frame[static_cast<std::size_t>(p + 1)];
      const double c = cosines[static_cast<std::size_t>(p / 2)];
      const double s = sines[static_cast<std::size_t>(p / 2)];
      frame[static_cast<std::size_t>(p)] = c * a - s * b;
      frame[static_cast<std::size_t>(p + 1)] = s * a + c * b;
    }
    for (long i = 0; i < q; ++i) frame[static_cast<std::size_t>(i)] *= scales[static_cast<std::size_t>(i)];
  }
};

}  // namespace detail

/// Each domain k draws frames around m_k + A_k * (content + noise) where the
/// sinusoidal content trajectories are shared across domains per utterance
/// index. Deterministic under the seed.
inline DomainCorpus synth_toy_corpus(long k_count, long q, long utts_per_domain,
                                     long frames_per_utt, std::uint64_t seed,
                                     const ToyStyle& style = ToyStyle{}) {
  if (k_count < 2) throw std::invalid_argument("toy corpus needs at least 2 domains");
  if (q < 2) throw std::invalid_argument("toy corpus needs feature dimension >= 2");
  Rng rng(seed);

  // shared content: two sinusoids per dimension, phases per utterance
  struct Content {
    std::vector<double> freq1, freq2, phase1, phase2;
  };
  std::vector<Content> contents(static_cast<std::size_t>(utts_per_domain));
  for (auto& c : contents) {
    c.freq1.resize(static_cast<std::size_t>(q));
    c.freq2.resize(static_cast<std::size_t>(q));
    c.phase1.resize(static_cast<std::size_t>(q));
    c.phase2.resize(static_cast<std::size_t>(q));
    for (long i = 0; i < q; ++i) {
      c.freq1[static_cast<std::size_t>(i)] = 1.0 / rng.uniform(16.0, 64.0);
      c.freq2[static_cast<std::size_t>(i)] = 1.0 / rng.uniform(8.0, 24.0);
      c.phase1[static_cast<std::size_t>(i)] = rng.uniform(0.0, 6.28318530717958647692);
      c.phase2[static_cast<std::size_t>(i)] = rng.uniform(0.0, 6.28318530717958647692);
    }
  }
  auto content_at = [&](const Content& c, long qi, long ni) {
    const double amp = 0.5 + 0.35 * static_cast<double>(qi % 4);
    const double two_pi = 6.28318530717958647692;
    return amp * (std::sin(two_pi * c.freq1[static_cast<std::size_t>(qi)] * ni +
                           c.phase1[static_cast<std::size_t>(qi)]) +
                  0.5 * std::sin(two_pi * c.freq2[static_cast<std::size_t>(qi)] * ni +
                                 c.phase2[static_cast<std::size_t>(qi)]));
  };

  DomainCorpus corpus;
  for (long k = 1; k <= k_count; ++k) {
    corpus.names.push_back("domain" + std::to_string(k));
    const auto dir = detail::domain_direction(k, q);
    const detail::DomainMixer mixer(k, q, k_count);
    const double logf0_mu = std::log(100.0 + 25.0 * static_cast<double>(k));
    std::vector<FeatureSequence> utts;
    for (long u = 0; u < utts_per_domain; ++u) {
      FeatureSequence x;
      x.q = q;
      x.n = frames_per_utt;
      x.data.resize(static_cast<std::size_t>(q * frames_per_utt));
      x.voiced.assign(static_cast<std::size_t>(frames_per_utt), 1);  // toy frames all voiced
      x.f0.resize(static_cast<std::size_t>(frames_per_utt));
      const double f0_phase = rng.uniform(0.0, 6.28318530717958647692);
      std::vector<double> frame(static_cast<std::size_t>(q));
      for (long ni = 0; ni < frames_per_utt; ++ni) {
        for (long qi = 0; qi < q; ++qi)
          frame[static_cast<std::size_t>(qi)] =
              content_at(contents[static_cast<std::size_t>(u)], qi, ni) +
              style.noise_sigma * rng.normal();
        mixer.apply(frame);
        for (long qi = 0; qi < q; ++qi)
          x.at(qi, ni) = frame[static_cast<std::size_t>(qi)] +
                         style.mean_scale * dir[static_cast<std::size_t>(qi)];
        x.f0[static_cast<std::size_t>(ni)] =
            std::exp(logf0_mu + 0.1 * std::sin(0.15 * static_cast<double>(ni) + f0_phase) +
                     0.02 * rng.normal());
      }
      utts.push_back(std::move(x));
    }
    corpus.utterances.push_back(std::move(utts));
  }
  for (const auto& utts : corpus.utterances) corpus.stats.push_back(compute_stats(utts));
  return corpus;
}

/// Write a corpus to disk as VCF1 files plus a manifest.
inline void save_corpus(const DomainCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::vector<std::string>> files;
  for (long k = 0; k < corpus.domain_count(); ++k) {
    const auto sub = corpus.names[static_cast<std::size_t>(k)];
    std::filesystem::create_directories(dir / sub);
    std::vector<std::string> domain_files;
    const auto& utts = corpus.utterances[static_cast<std::size_t>(k)];
    for (std::size_t u = 0; u < utts.size(); ++u) {
      char name[32];
      std::snprintf(name, sizeof(name), "utt%04zu.vcf1", u);
      const std::string rel = sub + "/" + name;
      write_vcf1(dir / rel, utts[u]);
      domain_files.push_back(rel);
    }
    files.push_back(std::move(domain_files));
  }
  write_manifest(dir / "manifest.json", corpus.names, files, corpus.frame_shift_ms);
}

}  // namespace vclab
