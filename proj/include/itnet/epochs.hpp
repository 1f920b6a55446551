#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "itnet/config.hpp"
#include "itnet/io.hpp"
#include "itnet/tensor.hpp"

namespace itnet {

// A labelled set of fixed-length multichannel trials, shape (trial, channel, sample).
struct EpochSet {
  Tensor<float> trials;
  std::vector<std::uint32_t> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> channel_names;
  std::vector<std::array<float, 2>> channel_xy;
  float fs = 0.0f;
  // Provenance tag used by the access instrumentation; not serialized.
  std::string source;

  std::size_t n_trials() const { return trials.rank() == 3 ? trials.extent(0) : 0; }
  std::size_t n_channels() const { return channel_names.size(); }
  std::size_t n_samples() const { return trials.rank() == 3 ? trials.extent(2) : 0; }
  std::size_t n_classes() const { return class_names.size(); }

  float& at(std::size_t n, std::size_t c, std::size_t s) {
    return trials[(n * trials.extent(1) + c) * trials.extent(2) + s];
  }
  float at(std::size_t n, std::size_t c, std::size_t s) const {
    return trials[(n * trials.extent(1) + c) * trials.extent(2) + s];
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("epoch set: " + m); };
    if (trials.rank() != 3) fail("trials must be rank 3, got " + shape_string(trials.shape()));
    if (channel_names.size() != trials.extent(1)) fail("channel name count does not match channel axis");
    if (channel_xy.size() != channel_names.size()) fail("channel coordinate count does not match channel names");
    if (labels.size() != trials.extent(0)) fail("label count does not match trial axis");
    if (class_names.empty()) fail("at least one class name is required");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= class_names.size())
        fail("label " + std::to_string(labels[i]) + " of trial " + std::to_string(i) + " is out of range");
    if (!(fs > 0.0f)) fail("sampling rate must be positive");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(n_classes(), 0);
    for (auto l : labels) ++counts.at(l);
    return counts;
  }

  // Same metadata, no trials.
  EpochSet empty_like() const {
    EpochSet e = *this;
    e.trials = Tensor<float>(Shape{0, trials.extent(1), trials.extent(2)});
    e.labels.clear();
    return e;
  }

  EpochSet subset(const std::vector<std::size_t>& indices) const {
    EpochSet e = *this;
    const std::size_t per = trials.extent(1) * trials.extent(2);
    e.trials = Tensor<float>(Shape{indices.size(), trials.extent(1), trials.extent(2)});
    e.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = indices[i];
      if (src >= n_trials()) throw std::out_of_range("epoch set: subset index out of range");
      std::copy_n(trials.values().begin() + static_cast<std::ptrdiff_t>(src * per), per,
                  e.trials.values().begin() + static_cast<std::ptrdiff_t>(i * per));
      e.labels[i] = labels[src];
    }
    return e;
  }
};

// Trials of several sets with identical metadata, in order.
inline EpochSet concat_epochs(const std::vector<const EpochSet*>& sets, std::string source = "pooled") {
  if (sets.empty()) throw std::invalid_argument("concat_epochs: no sets");
  const EpochSet& first = *sets.front();
  EpochSet out = first.empty_like();
  out.source = std::move(source);
  std::size_t total = 0;
  for (const auto* s : sets) {
    if (s->n_channels() != first.n_channels() || s->n_samples() != first.n_samples())
      throw std::invalid_argument("concat_epochs: channel/sample extents differ across sets");
    if (s->class_names != first.class_names)
      throw std::invalid_argument("concat_epochs: label spaces differ across sets");
    total += s->n_trials();
  }
  out.trials = Tensor<float>(Shape{total, first.n_channels(), first.n_samples()});
  auto dst = out.trials.values().begin();
  for (const auto* s : sets) {
    dst = std::copy(s->trials.values().begin(), s->trials.values().end(), dst);
    out.labels.insert(out.labels.end(), s->labels.begin(), s->labels.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// EEGEPOCH container

inline constexpr char kEpochMagic[8] = {'E', 'E', 'G', 'E', 'P', 'O', 'C', 'H'};
inline constexpr std::uint32_t kEpochVersion = 1;

inline std::string encode_epochs(const EpochSet& set) {
  set.validate();
  ByteWriter w;
  w.put_raw(std::string_view(kEpochMagic, 8));
  w.put(kEpochVersion);
  w.put(static_cast<std::uint32_t>(set.n_trials()));
  w.put(static_cast<std::uint32_t>(set.n_channels()));
  w.put(static_cast<std::uint32_t>(set.n_samples()));
  w.put(static_cast<std::uint32_t>(set.n_classes()));
  w.put(set.fs);
  for (std::size_t c = 0; c < set.n_channels(); ++c) {
    w.put_string(set.channel_names[c]);
    w.put(set.channel_xy[c][0]);
    w.put(set.channel_xy[c][1]);
  }
  for (const auto& name : set.class_names) w.put_string(name);
  for (auto l : set.labels) w.put(l);
  for (float v : set.trials.values()) w.put(v);
  return w.bytes();
}

inline EpochSet decode_epochs(std::string_view bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  if (r.remaining() < 8 || r.get_raw(8) != std::string_view(kEpochMagic, 8))
    throw FormatException(FormatError::BadMagic, origin + ": not an EEGEPOCH file");
  const auto version = r.get<std::uint32_t>();
  if (version != kEpochVersion)
    throw FormatException(FormatError::BadVersion, origin + ": version " + std::to_string(version));
  const std::uint64_t n = r.get<std::uint32_t>();
  const std::uint64_t c = r.get<std::uint32_t>();
  const std::uint64_t s = r.get<std::uint32_t>();
  const std::uint64_t k = r.get<std::uint32_t>();
  EpochSet set;
  set.fs = r.get<float>();

  // n*c*s*4 can exceed both memory and 64 bits; refuse before allocating.
  std::uint64_t cells = 0;
  if (__builtin_mul_overflow(n, c, &cells) || __builtin_mul_overflow(cells, s, &cells) ||
      cells > (std::uint64_t{1} << 40)) {
    throw FormatException(FormatError::ExtentOverflow,
                          origin + ": declared extents " + std::to_string(n) + "x" + std::to_string(c) + "x" +
                              std::to_string(s) + " are too large");
  }
  if (c > r.remaining() / 10 + 1) r.need(c * 10);  // each channel entry is >= 10 bytes

  set.channel_names.reserve(c);
  for (std::uint64_t i = 0; i < c; ++i) {
    set.channel_names.push_back(r.get_string());
    const float x = r.get<float>();
    const float y = r.get<float>();
    set.channel_xy.push_back({x, y});
  }
  if (k > r.remaining() / 2 + 1) r.need(k * 2);
  for (std::uint64_t i = 0; i < k; ++i) set.class_names.push_back(r.get_string());
  r.need(n * 4);
  set.labels.resize(n);
  for (auto& l : set.labels) l = r.get<std::uint32_t>();
  r.need(cells * 4);
  set.trials = Tensor<float>(Shape{n, c, s});
  for (auto& v : set.trials.values()) v = r.get<float>();
  if (!r.at_end())
    throw FormatException(FormatError::BadValue, origin + ": " + std::to_string(r.remaining()) + " trailing bytes");
  for (std::size_t i = 0; i < set.labels.size(); ++i)
    if (set.labels[i] >= k)
      throw FormatException(FormatError::BadValue, origin + ": label of trial " + std::to_string(i) + " out of range");
  set.source = origin;
  return set;
}

inline void save_epochs(const EpochSet& set, const std::filesystem::path& path) {
  write_file_atomic(path, encode_epochs(set));
}

inline EpochSet load_epochs(const std::filesystem::path& path) {
  return decode_epochs(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Preprocessing

// Hamming-windowed sinc low-pass; cutoff in cycles per input sample. Unit DC gain.
inline std::vector<double> lowpass_fir(std::size_t taps, double cutoff) {
  std::vector<double> h(taps);
  const double mid = static_cast<double>(taps - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = static_cast<double>(i) - mid;
    const double sinc = t == 0.0 ? 2.0 * cutoff : std::sin(2.0 * std::numbers::pi * cutoff * t) / (std::numbers::pi * t);
    const double win = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(taps - 1));
    h[i] = sinc * win;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;
  return h;
}

namespace detail {
// Causal FIR over x, starting from zero state.
inline std::vector<double> fir_apply(const std::vector<double>& h, const std::vector<double>& x) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    const std::size_t top = std::min(h.size(), t + 1);
    for (std::size_t k = 0; k < top; ++k) acc += h[k] * x[t - k];
    y[t] = acc;
  }
  return y;
}
}  // namespace detail

// Zero-phase filtering: forward, reverse, forward, reverse, with odd-reflection
// padding at both ends to suppress start-up transients.
inline std::vector<double> filtfilt(const std::vector<double>& h, const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t pad = std::min(3 * (h.size() - 1), n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);
  auto y = detail::fir_apply(h, ext);
  std::reverse(y.begin(), y.end());
  y = detail::fir_apply(h, y);
  std::reverse(y.begin(), y.end());
  return std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(pad),
                             y.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

inline constexpr std::size_t kDecimateTaps = 63;

// Anti-aliased downsampling by an integer factor; output length floor(n/factor).
inline std::vector<double> decimate(const std::vector<double>& signal, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("decimate: factor must be >= 1");
  if (factor > signal.size()) {
    throw std::invalid_argument("decimate: factor " + std::to_string(factor) + " exceeds signal length " +
                                std::to_string(signal.size()));
  }
  if (factor == 1) return signal;
  const auto h = lowpass_fir(kDecimateTaps, 0.45 / static_cast<double>(factor));
  const auto y = filtfilt(h, signal);
  std::vector<double> out(signal.size() / factor);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y[i * factor];
  return out;
}

inline EpochSet decimate_epochs(const EpochSet& set, std::size_t factor) {
  set.validate();
  EpochSet out = set;
  const std::size_t N = set.n_trials(), C = set.n_channels(), S = set.n_samples();
  if (factor < 1 || factor > S) throw std::invalid_argument("decimate: factor must lie in [1, n_samples]");
  const std::size_t So = S / factor;
  out.trials = Tensor<float>(Shape{N, C, So});
  out.fs = set.fs / static_cast<float>(factor);
  std::vector<double> row(S);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t s = 0; s < S; ++s) row[s] = set.at(n, c, s);
      const auto y = decimate(row, factor);
      for (std::size_t s = 0; s < So; ++s) out.at(n, c, s) = static_cast<float>(y[s]);
    }
  return out;
}

// Continuous recording (channel, sample) cut into windows that start at each cue.
inline EpochSet extract_epochs(const Tensor<float>& continuous, float fs, const std::vector<std::size_t>& cue_onsets,
                               const std::vector<std::uint32_t>& labels, double duration_s,
                               std::vector<std::string> class_names, std::vector<std::string> channel_names,
                               std::vector<std::array<float, 2>> channel_xy) {
  require_rank(continuous.shape(), 2, "extract_epochs");
  if (cue_onsets.size() != labels.size()) throw std::invalid_argument("extract_epochs: one label per cue is required");
  const std::size_t C = continuous.extent(0), L = continuous.extent(1);
  const auto S = static_cast<std::size_t>(std::llround(duration_s * static_cast<double>(fs)));
  if (S == 0) throw std::invalid_argument("extract_epochs: window is shorter than one sample");
  EpochSet e;
  e.fs = fs;
  e.class_names = std::move(class_names);
  e.channel_names = std::move(channel_names);
  e.channel_xy = std::move(channel_xy);
  e.labels = labels;
  e.trials = Tensor<float>(Shape{cue_onsets.size(), C, S});
  for (std::size_t i = 0; i < cue_onsets.size(); ++i) {
    if (cue_onsets[i] + S > L) {
      throw std::invalid_argument("extract_epochs: window of cue " + std::to_string(i) + " runs past the recording");
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) e.at(i, c, s) = continuous[c * L + cue_onsets[i] + s];
  }
  e.validate();
  return e;
}

// Per-channel affine transform estimated on training trials only.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats fit_channel_stats(const EpochSet& train) {
  train.validate();
  const std::size_t N = train.n_trials(), C = train.n_channels(), S = train.n_samples();
  if (N == 0 || S == 0) throw std::invalid_argument("standardize: training set is empty");
  ChannelStats st{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(N * S);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s) sum += train.at(n, c, s);
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const double d = train.at(n, c, s) - mean;
        ss += d * d;
      }
    const double sd = std::sqrt(ss / count);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      throw std::invalid_argument("standardize: channel '" + train.channel_names[c] + "' has zero variance");
    }
    st.mean[c] = mean;
    st.stddev[c] = sd;
  }
  return st;
}

inline void apply_channel_stats(EpochSet& set, const ChannelStats& st) {
  if (set.n_channels() != st.mean.size()) throw std::invalid_argument("standardize: channel count mismatch");
  for (std::size_t n = 0; n < set.n_trials(); ++n)
    for (std::size_t c = 0; c < set.n_channels(); ++c)
      for (std::size_t s = 0; s < set.n_samples(); ++s)
        set.at(n, c, s) = static_cast<float>((set.at(n, c, s) - st.mean[c]) / st.stddev[c]);
}

// Fits on `train`, then transforms `train` and every set in `others` in place.
inline ChannelStats standardize(EpochSet& train, const std::vector<EpochSet*>& others = {}) {
  const auto st = fit_channel_stats(train);
  apply_channel_stats(train, st);
  for (auto* o : others) apply_channel_stats(*o, st);
  return st;
}

// key=value form: channels=C, mean.i, std.i (round-trip exact).
inline KeyValues channel_stats_key_values(const ChannelStats& st) {
  KeyValues kv;
  kv["channels"] = std::to_string(st.mean.size());
  for (std::size_t c = 0; c < st.mean.size(); ++c) {
    kv["mean." + std::to_string(c)] = format_real(st.mean[c]);
    kv["std." + std::to_string(c)] = format_real(st.stddev[c]);
  }
  return kv;
}

inline ChannelStats read_channel_stats(const KeyValues& kv) {
  ConfigReader r(kv);
  std::size_t C = 0;
  r.read("channels", C);
  ChannelStats st{std::vector<double>(C, NAN), std::vector<double>(C, NAN)};
  for (std::size_t c = 0; c < C; ++c) {
    r.read("mean." + std::to_string(c), st.mean[c]);
    r.read("std." + std::to_string(c), st.stddev[c]);
    if (!std::isfinite(st.mean[c]) || !(st.stddev[c] > 0.0))
      throw ConfigError("channel stats: channel " + std::to_string(c) + " is missing or has non-positive std");
  }
  r.reject_unused();
  return st;
}

}  // namespace itnet
