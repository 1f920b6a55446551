#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "itnet/config.hpp"
#include "itnet/epochs.hpp"
#include "itnet/random.hpp"

namespace itnet {

struct Electrode {
  const char* name;
  float x, y;
};

// 22-electrode motor-imagery montage on the unit disc: nose towards +y, Cz at the
// origin, 0.2 units per 10 % step.
inline constexpr std::array<Electrode, 22> kMotorMontage{{
    {"Fz", 0.0f, 0.4f},    {"FC3", -0.4f, 0.2f}, {"FC1", -0.2f, 0.2f}, {"FCz", 0.0f, 0.2f},
    {"FC2", 0.2f, 0.2f},   {"FC4", 0.4f, 0.2f},  {"C5", -0.6f, 0.0f},  {"C3", -0.4f, 0.0f},
    {"C1", -0.2f, 0.0f},   {"Cz", 0.0f, 0.0f},   {"C2", 0.2f, 0.0f},   {"C4", 0.4f, 0.0f},
    {"C6", 0.6f, 0.0f},    {"CP3", -0.4f, -0.2f}, {"CP1", -0.2f, -0.2f}, {"CPz", 0.0f, -0.2f},
    {"CP2", 0.2f, -0.2f},  {"CP4", 0.4f, -0.2f}, {"P1", -0.2f, -0.4f}, {"Pz", 0.0f, -0.4f},
    {"P2", 0.2f, -0.4f},   {"POz", 0.0f, -0.6f},
}};

struct Montage {
  std::vector<std::string> names;
  std::vector<std::array<float, 2>> xy;
};

// The 22-electrode montage for n == 22; otherwise n electrodes on concentric rings.
inline Montage default_montage(std::size_t n) {
  Montage m;
  if (n == kMotorMontage.size()) {
    for (const auto& e : kMotorMontage) {
      m.names.emplace_back(e.name);
      m.xy.push_back({e.x, e.y});
    }
    return m;
  }
  // Ring k (k >= 1) holds 6k electrodes at radius proportional to k.
  std::size_t rings = 0;
  for (std::size_t cap = 1; cap < n;) cap += 6 * ++rings;
  std::size_t placed = 0;
  for (std::size_t k = 0; placed < n; ++k) {
    const std::size_t slots = k == 0 ? 1 : 6 * k;
    const std::size_t take = std::min(slots, n - placed);
    const double radius = rings == 0 ? 0.0 : 0.8 * static_cast<double>(k) / static_cast<double>(rings);
    for (std::size_t i = 0; i < take; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(take) + 0.5 * std::numbers::pi;
      m.names.push_back("E" + std::to_string(placed + 1));
      m.xy.push_back({static_cast<float>(radius * std::cos(a)), static_cast<float>(radius * std::sin(a))});
      ++placed;
    }
  }
  return m;
}

// Unit-norm spatial weights of a Gaussian bump centred at (cx, cy).
inline std::vector<double> gaussian_mixing(const std::vector<std::array<float, 2>>& xy, double cx, double cy,
                                           double width) {
  std::vector<double> w(xy.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const double dx = xy[i][0] - cx, dy = xy[i][1] - cy;
    w[i] = std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
    norm += w[i] * w[i];
  }
  norm = std::sqrt(norm);
  for (auto& v : w) v /= norm;
  return w;
}

struct SynthSource {
  double center_freq = 10.0;
  double bandwidth = 2.0;
  double amplitude = 1.0;
  std::vector<double> mixing;  // per-channel weights, unit Euclidean norm
};

struct SynthSpec {
  std::size_t n_trials = 200;
  std::size_t n_channels = 8;
  std::size_t n_classes = 2;
  double fs = 125.0;
  double duration_s = 3.0;
  std::vector<std::vector<SynthSource>> class_sources;  // indexed by class
  // Sources present in every trial regardless of class.
  std::vector<SynthSource> shared_sources;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  std::vector<std::string> channel_names;  // empty: default montage
  std::vector<std::array<float, 2>> channel_xy;

  std::size_t n_samples() const { return static_cast<std::size_t>(std::llround(duration_s * fs)); }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synth spec: " + m); };
    if (n_trials < n_classes) fail("need at least one trial per class");
    if (n_classes < 1) fail("n_classes must be >= 1");
    if (n_channels < 1) fail("n_channels must be >= 1");
    if (!(fs > 0.0) || n_samples() < 1) fail("fs and duration must give at least one sample");
    if (class_sources.size() != n_classes) fail("one source list per class is required");
    if (!channel_names.empty() && (channel_names.size() != n_channels || channel_xy.size() != n_channels))
      fail("channel names/coordinates must match n_channels");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
    auto check = [&](const SynthSource& s) {
      if (!(s.center_freq > 0.0) || s.center_freq >= fs / 2.0)
        fail("center_freq " + std::to_string(s.center_freq) + " must lie in (0, fs/2)");
      if (!(s.bandwidth >= 0.0) || s.center_freq + s.bandwidth / 2.0 >= fs / 2.0 ||
          s.center_freq - s.bandwidth / 2.0 <= 0.0)
        fail("source band must lie inside (0, fs/2)");
      if (s.mixing.size() != n_channels) fail("mixing column length must equal n_channels");
      double nrm = 0.0;
      for (double v : s.mixing) nrm += v * v;
      if (std::abs(std::sqrt(nrm) - 1.0) > 1e-6) fail("mixing columns must have unit norm");
    };
    for (const auto& cls : class_sources)
      for (const auto& s : cls) check(s);
    for (const auto& s : shared_sources) check(s);
  }
};

inline constexpr std::size_t kCarrierTones = 24;

// Band-limited noise: random-phase tones spread over [f - bw/2, f + bw/2],
// normalized to unit RMS over the trial.
inline std::vector<double> band_carrier(const SynthSource& src, double fs, std::size_t S, Rng& rng) {
  std::vector<double> x(S, 0.0);
  for (std::size_t k = 0; k < kCarrierTones; ++k) {
    const double f = src.center_freq + src.bandwidth * (uniform01(rng) - 0.5);
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    for (std::size_t t = 0; t < S; ++t)
      x[t] += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / fs + phase);
  }
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(S));
  if (rms > 0.0)
    for (auto& v : x) v /= rms;
  return x;
}

inline EpochSet synth_generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t N = spec.n_trials, C = spec.n_channels, S = spec.n_samples(), K = spec.n_classes;
  EpochSet e;
  e.fs = static_cast<float>(spec.fs);
  for (std::size_t k = 0; k < K; ++k) e.class_names.push_back("class" + std::to_string(k));
  if (spec.channel_names.empty()) {
    auto m = default_montage(C);
    e.channel_names = std::move(m.names);
    e.channel_xy = std::move(m.xy);
  } else {
    e.channel_names = spec.channel_names;
    e.channel_xy = spec.channel_xy;
  }
  e.source = "synth:" + std::to_string(spec.seed);

  Rng label_rng = derive_rng(spec.seed, 1);
  e.labels.resize(N);
  for (std::size_t i = 0; i < N; ++i) e.labels[i] = static_cast<std::uint32_t>(i % K);
  shuffle(e.labels, label_rng);

  e.trials = Tensor<float>(Shape{N, C, S});
  Rng rng = derive_rng(spec.seed, 2);
  std::vector<double> trial(C * S);
  auto add_source = [&](const SynthSource& src) {
    const auto carrier = band_carrier(src, spec.fs, S, rng);
    for (std::size_t c = 0; c < C; ++c) {
      const double w = src.amplitude * src.mixing[c];
      for (std::size_t t = 0; t < S; ++t) trial[c * S + t] += w * carrier[t];
    }
  };
  for (std::size_t n = 0; n < N; ++n) {
    std::fill(trial.begin(), trial.end(), 0.0);
    for (const auto& src : spec.class_sources[e.labels[n]]) add_source(src);
    for (const auto& src : spec.shared_sources) add_source(src);
    if (spec.noise_sigma > 0.0)
      for (auto& v : trial) v += spec.noise_sigma * standard_normal(rng);
    for (std::size_t i = 0; i < C * S; ++i) e.trials[n * C * S + i] = static_cast<float>(trial[i]);
  }
  return e;
}

// Noise level for a target SNR, defined as the mean (over classes) total power of
// the planted sources (class-specific plus shared, unit-RMS carriers through
// unit-norm mixing columns) over the total white-noise power C * sigma^2.
inline double noise_sigma_for_snr(const SynthSpec& spec, double snr_db) {
  double power = 0.0;
  for (const auto& cls : spec.class_sources)
    for (const auto& s : cls) power += s.amplitude * s.amplitude;
  power /= static_cast<double>(std::max<std::size_t>(1, spec.class_sources.size()));
  for (const auto& s : spec.shared_sources) power += s.amplitude * s.amplitude;
  if (!(power > 0.0)) throw std::invalid_argument("synth spec: SNR needs at least one source with nonzero amplitude");
  return std::sqrt(power / (static_cast<double>(spec.n_channels) * std::pow(10.0, snr_db / 10.0)));
}

// "freq bw amp x y width" entries separated by ';'; the mixing column is a
// Gaussian bump centred at (x, y) on the montage.
inline std::vector<SynthSource> parse_sources(const std::string& text, const std::vector<std::array<float, 2>>& xy,
                                              const std::string& key) {
  std::vector<SynthSource> out;
  for (const auto& entry : split(text, ';')) {
    if (entry.empty()) continue;
    std::vector<double> v;
    for (const auto& tok : split(entry, ' '))
      if (!tok.empty()) v.push_back(parse_value<double>(tok, key));
    if (v.size() != 6) throw ConfigError(key + ": source needs 'freq bw amp x y width', got '" + entry + "'");
    if (!(v[5] > 0.0)) throw ConfigError(key + ": source width must be positive");
    out.push_back({v[0], v[1], v[2], gaussian_mixing(xy, v[3], v[4], v[5])});
  }
  return out;
}

// Default class k source: 10 + 12k Hz, centred on a circle of radius 0.4.
inline std::string default_class_source(std::size_t k, std::size_t classes) {
  const double a = 0.5 * std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
  return format_real(10.0 + 12.0 * static_cast<double>(k)) + " 2 1 " + format_real(std::round(400.0 * std::cos(a)) / 1000.0) +
         " " + format_real(std::round(400.0 * std::sin(a)) / 1000.0) + " 0.4";
}

// Reads synth.* keys. `effective` receives every value actually used, so the
// resolved spec can be echoed.
inline SynthSpec read_synth_spec(ConfigReader& r, KeyValues& effective, const std::string& prefix = "synth.") {
  SynthSpec s;
  r.read(prefix + "n_trials", s.n_trials);
  r.read(prefix + "n_channels", s.n_channels);
  r.read(prefix + "n_classes", s.n_classes);
  r.read(prefix + "fs", s.fs);
  r.read(prefix + "duration_s", s.duration_s);
  r.read(prefix + "noise_sigma", s.noise_sigma);
  r.read(prefix + "seed", s.seed);
  if (s.n_channels < 1 || s.n_classes < 1) throw ConfigError("synth: n_channels and n_classes must be >= 1");
  const auto montage = default_montage(s.n_channels);
  for (std::size_t k = 0; k < s.n_classes; ++k) {
    const std::string key = prefix + "class" + std::to_string(k);
    std::string text = default_class_source(k, s.n_classes);
    r.read(key, text);
    s.class_sources.push_back(parse_sources(text, montage.xy, key));
    effective[key] = text;
  }
  std::string shared;
  r.read(prefix + "shared", shared);
  s.shared_sources = parse_sources(shared, montage.xy, prefix + "shared");
  if (!shared.empty()) effective[prefix + "shared"] = shared;
  if (const auto* snr = r.raw(prefix + "snr_db")) {
    if (r.has(prefix + "noise_sigma")) throw ConfigError("synth: set either noise_sigma or snr_db, not both");
    const double db = parse_value<double>(*snr, prefix + "snr_db");
    s.noise_sigma = noise_sigma_for_snr(s, db);
    effective[prefix + "snr_db"] = *snr;
  }
  effective[prefix + "n_trials"] = std::to_string(s.n_trials);
  effective[prefix + "n_channels"] = std::to_string(s.n_channels);
  effective[prefix + "n_classes"] = std::to_string(s.n_classes);
  effective[prefix + "fs"] = format_real(s.fs);
  effective[prefix + "duration_s"] = format_real(s.duration_s);
  if (!effective.count(prefix + "snr_db")) effective[prefix + "noise_sigma"] = format_real(s.noise_sigma);
  effective[prefix + "seed"] = std::to_string(s.seed);
  return s;
}

}  // namespace itnet
