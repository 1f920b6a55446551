#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "itnet/config.hpp"
#include "itnet/epochs.hpp"
#include "itnet/io.hpp"
#include "itnet/linalg.hpp"
#include "itnet/model.hpp"
#include "itnet/savgol.hpp"
#include "itnet/spectrum.hpp"

namespace itnet {

struct AtlasOptions {
  double fs = 125.0;
  std::size_t savgol_l = 5;
  std::size_t savgol_p = 3;
  std::size_t pad_to = 512;
  SavgolEdge edge = SavgolEdge::Truncated;
  double pinv_cutoff = 1e-10;
};

struct SpectrumEntry {
  std::size_t branch = 0;
  std::size_t filter = 0;  // global source index, branch-major
  std::size_t kernel_extent = 0;
  std::vector<double> freq_hz;
  std::vector<double> raw;
  std::vector<double> smoothed;
};

struct PatternEntry {
  std::size_t branch = 0;
  std::size_t filter = 0;
  std::vector<double> unmixing;    // row of W
  std::vector<double> pattern;     // column of pinv(W)
  std::vector<double> normalized;  // pattern / max|pattern|, zeros when degenerate
  bool degenerate = false;
};

struct FilterAtlas {
  double fs = 0.0;
  double nyquist_hz = 0.0;
  std::vector<std::string> channel_names;
  std::vector<std::array<float, 2>> channel_xy;
  std::vector<std::size_t> branch_kernels;
  std::vector<SpectrumEntry> spectra;
  std::vector<PatternEntry> patterns;
  std::vector<std::string> warnings;
  std::string pattern_method = "pinv";

  std::string validity_note() const { return "valid below " + format_real(nyquist_hz) + " Hz"; }
};

// W stacks every branch's depthwise spatial kernels, one row per source.
template <Real T>
Eigen::MatrixXd unmixing_matrix(const ITNetModel<T>& model) {
  const auto& cfg = model.config();
  Eigen::MatrixXd W(static_cast<Eigen::Index>(cfg.source_count()), static_cast<Eigen::Index>(cfg.n_channels));
  Eigen::Index row = 0;
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    const auto& w = model.params()[model.branch_slots()[b].spatial_w].value;
    for (std::size_t f = 0; f < cfg.branches[b].filters; ++f, ++row)
      for (std::size_t c = 0; c < cfg.n_channels; ++c)
        W(row, static_cast<Eigen::Index>(c)) = static_cast<double>(w[f * cfg.n_channels + c]);
  }
  return W;
}

struct SpatialPatterns {
  Eigen::MatrixXd W;
  Eigen::MatrixXd W_plus;
};

template <Real T>
SpatialPatterns spatial_patterns(const ITNetModel<T>& model, double rel_cutoff = 1e-10) {
  SpatialPatterns sp;
  sp.W = unmixing_matrix(model);
  sp.W_plus = pseudo_inverse(sp.W, rel_cutoff);
  return sp;
}

// Channel covariance of a trial set, pooled over trials and samples.
inline Eigen::MatrixXd channel_covariance(const EpochSet& set) {
  const std::size_t N = set.n_trials(), C = set.n_channels(), S = set.n_samples();
  if (N * S < 2) throw std::invalid_argument("channel_covariance: need at least two samples");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(N * S));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < S; ++t)
        X(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n * S + t)) = set.at(n, c, t);
  X.colwise() -= X.rowwise().mean();
  return X * X.transpose() / static_cast<double>(N * S - 1);
}

// Forward-model patterns Sigma_x W^T: column i is the covariance between the
// channels and source i, proportional to its mixing column when the sources are
// mutually uncorrelated. Unlike pinv(W) this does not assume the data lie in the
// row space of W. `cov` must be computed on data in the model's input units.
template <Real T>
Eigen::MatrixXd covariance_patterns(const ITNetModel<T>& model, const Eigen::MatrixXd& cov) {
  const auto C = static_cast<Eigen::Index>(model.config().n_channels);
  if (cov.rows() != C || cov.cols() != C) throw std::invalid_argument("covariance_patterns: covariance is not C x C");
  return cov * unmixing_matrix(model).transpose();
}

// `pattern_matrix` (C x sources) replaces pinv(W) when given.
template <Real T>
FilterAtlas build_atlas(const ITNetModel<T>& model, const std::vector<std::string>& channel_names,
                        const std::vector<std::array<float, 2>>& channel_xy, const AtlasOptions& opt = {},
                        const Eigen::MatrixXd* pattern_matrix = nullptr) {
  const auto& cfg = model.config();
  if (channel_names.size() != cfg.n_channels || channel_xy.size() != cfg.n_channels)
    throw std::invalid_argument("build_atlas: channel list does not match the model's channel count");
  FilterAtlas atlas;
  atlas.fs = opt.fs;
  atlas.nyquist_hz = opt.fs / 2.0;
  atlas.channel_names = channel_names;
  atlas.channel_xy = channel_xy;

  const auto sp = spatial_patterns(model, opt.pinv_cutoff);
  if (pattern_matrix && (pattern_matrix->rows() != sp.W_plus.rows() || pattern_matrix->cols() != sp.W_plus.cols()))
    throw std::invalid_argument("build_atlas: pattern matrix must be channels x sources");
  const Eigen::MatrixXd& P = pattern_matrix ? *pattern_matrix : sp.W_plus;
  if (pattern_matrix) atlas.pattern_method = "covariance";
  std::size_t global = 0;
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    const auto [Fb, Kb] = cfg.branches[b];
    atlas.branch_kernels.push_back(Kb);
    const auto& tw = model.params()[model.branch_slots()[b].temporal_w].value;
    for (std::size_t f = 0; f < Fb; ++f, ++global) {
      SpectrumEntry s;
      s.branch = b;
      s.filter = global;
      s.kernel_extent = Kb;
      std::vector<double> kernel(Kb);
      for (std::size_t k = 0; k < Kb; ++k) kernel[k] = static_cast<double>(tw[f * Kb + k]);
      const auto spec = kernel_spectrum(kernel, opt.fs, std::max(opt.pad_to, Kb));
      for (std::size_t i = 0; i < spec.freq_hz.size(); ++i) {
        if (spec.freq_hz[i] > atlas.nyquist_hz) break;
        s.freq_hz.push_back(spec.freq_hz[i]);
        s.raw.push_back(spec.magnitude[i]);
      }
      s.smoothed = s.raw.size() >= 2 * opt.savgol_l + 1 ? savgol_smooth(s.raw, opt.savgol_l, opt.savgol_p, opt.edge) : s.raw;
      atlas.spectra.push_back(std::move(s));

      PatternEntry p;
      p.branch = b;
      p.filter = global;
      const auto row = static_cast<Eigen::Index>(global);
      double row_max = 0.0, col_max = 0.0;
      for (Eigen::Index c = 0; c < sp.W.cols(); ++c) {
        p.unmixing.push_back(sp.W(row, c));
        p.pattern.push_back(P(c, row));
        row_max = std::max(row_max, std::abs(sp.W(row, c)));
        col_max = std::max(col_max, std::abs(P(c, row)));
      }
      p.degenerate = row_max == 0.0 || col_max == 0.0;
      if (p.degenerate) {
        p.pattern.assign(p.pattern.size(), 0.0);
        p.normalized.assign(p.pattern.size(), 0.0);
        atlas.warnings.push_back("spatial filter " + std::to_string(global) + " (branch " + std::to_string(b) +
                                 ") is all zeros; its pattern is emitted as zeros");
      } else {
        for (double v : p.pattern) p.normalized.push_back(v / col_max);
      }
      atlas.patterns.push_back(std::move(p));
    }
  }
  return atlas;
}

// Frequency of the largest smoothed magnitude.
inline double spectrum_peak_hz(const SpectrumEntry& s) {
  const auto it = std::max_element(s.smoothed.begin(), s.smoothed.end());
  return s.freq_hz[static_cast<std::size_t>(it - s.smoothed.begin())];
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need equal lengths >= 2");
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Rendering

// Inverse-distance weighting; exact at an electrode.
inline double idw_interpolate(const std::vector<std::array<float, 2>>& xy, const std::vector<double>& values, double x,
                              double y, double power = 2.0) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const double d2 = (xy[i][0] - x) * (xy[i][0] - x) + (xy[i][1] - y) * (xy[i][1] - y);
    if (d2 < 1e-18) return values[i];
    const double w = 1.0 / std::pow(d2, power / 2.0);
    num += w * values[i];
    den += w;
  }
  return num / den;
}

// Grayscale symmetric about zero: -1 darkest (1), 0 mid-gray (128), +1 white (255).
// lround is odd, so gray_level(-v) == 256 - gray_level(v).
inline int gray_level(double v) {
  return 128 + static_cast<int>(std::lround(127.0 * std::clamp(v, -1.0, 1.0)));
}

namespace detail {
inline std::string gray_hex(double v) {
  char buf[8];
  const int g = gray_level(v);
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", g, g, g);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}
}  // namespace detail

// Sheet with one column per inception branch; each source gets its smoothed
// spectrum above a scalp map of its normalized pattern.
inline std::string render_atlas_svg(const FilterAtlas& atlas, int raster = 36) {
  const double cellw = 180, specH = 90, mapD = 150, gap = 24, top = 56;
  const double rowH = specH + mapD + gap * 2;
  std::size_t max_rows = 0;
  for (std::size_t b = 0; b < atlas.branch_kernels.size(); ++b) {
    std::size_t n = 0;
    for (const auto& s : atlas.spectra) n += s.branch == b;
    max_rows = std::max(max_rows, n);
  }
  const double W = cellw * static_cast<double>(atlas.branch_kernels.size()) + gap;
  const double H = top + rowH * static_cast<double>(max_rows) + gap;
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << gap << "\" y=\"18\" font-size=\"13\">Temporal/spatial filters; spectra "
    << detail::xml_escape(atlas.validity_note()) << "</text>\n";

  for (std::size_t b = 0; b < atlas.branch_kernels.size(); ++b) {
    const double x0 = gap + cellw * static_cast<double>(b);
    o << "<text x=\"" << x0 << "\" y=\"40\" font-size=\"12\">branch " << b << " (kernel " << atlas.branch_kernels[b]
      << ")</text>\n";
    std::size_t row = 0;
    for (std::size_t i = 0; i < atlas.spectra.size(); ++i) {
      const auto& s = atlas.spectra[i];
      if (s.branch != b) continue;
      const auto& p = atlas.patterns[i];
      const double y0 = top + rowH * static_cast<double>(row++);
      const double pw = cellw - gap;
      // Spectrum, scaled to its own maximum.
      double mx = 0;
      for (double v : s.smoothed) mx = std::max(mx, v);
      o << "<g><rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << specH
        << "\" fill=\"none\" stroke=\"#999\"/>\n<polyline fill=\"none\" stroke=\"black\" points=\"";
      for (std::size_t k = 0; k < s.freq_hz.size(); ++k) {
        const double px = x0 + pw * s.freq_hz[k] / atlas.nyquist_hz;
        const double py = y0 + specH - (mx > 0 ? specH * s.smoothed[k] / mx : 0);
        o << px << ',' << py << ' ';
      }
      o << "\"/>\n<text x=\"" << x0 << "\" y=\"" << y0 + specH + 12 << "\">0</text><text x=\"" << x0 + pw - 30
        << "\" y=\"" << y0 + specH + 12 << "\">" << atlas.nyquist_hz << " Hz</text>";
      o << "<text x=\"" << x0 + 3 << "\" y=\"" << y0 + 12 << "\">filter " << s.filter << ", peak "
        << spectrum_peak_hz(s) << " Hz</text></g>\n";
      // Scalp map.
      const double cx = x0 + pw / 2, cy = y0 + specH + gap + mapD / 2, R = mapD / 2;
      const double px = mapD / raster;
      o << "<g>";
      for (int iy = 0; iy < raster; ++iy)
        for (int ix = 0; ix < raster; ++ix) {
          const double ux = -1.0 + (ix + 0.5) * 2.0 / raster, uy = 1.0 - (iy + 0.5) * 2.0 / raster;
          if (ux * ux + uy * uy > 1.0) continue;
          o << "<rect x=\"" << cx - R + ix * px << "\" y=\"" << cy - R + iy * px << "\" width=\"" << px + 0.05
            << "\" height=\"" << px + 0.05 << "\" fill=\""
            << detail::gray_hex(idw_interpolate(atlas.channel_xy, p.normalized, ux, uy)) << "\"/>";
        }
      o << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << R << "\" fill=\"none\" stroke=\"black\"/>";
      o << "<path d=\"M" << cx - 8 << ',' << cy - R << " L" << cx << ',' << cy - R - 9 << " L" << cx + 8 << ','
        << cy - R << "\" fill=\"none\" stroke=\"black\"/>";
      for (std::size_t c = 0; c < atlas.channel_xy.size(); ++c) {
        o << "<circle cx=\"" << cx + R * atlas.channel_xy[c][0] << "\" cy=\"" << cy - R * atlas.channel_xy[c][1]
          << "\" r=\"2.5\" fill=\"" << detail::gray_hex(p.normalized[c]) << "\" stroke=\"#c00\" stroke-width=\"0.6\"><title>"
          << detail::xml_escape(atlas.channel_names[c]) << "</title></circle>";
      }
      if (p.degenerate) o << "<text x=\"" << cx - 30 << "\" y=\"" << cy << "\" fill=\"#c00\">degenerate</text>";
      o << "</g>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string spectrum_csv(const SpectrumEntry& s) {
  std::string out = "freq_hz,raw,smoothed\n";
  for (std::size_t i = 0; i < s.freq_hz.size(); ++i)
    out += format_real(s.freq_hz[i]) + "," + format_real(s.raw[i]) + "," + format_real(s.smoothed[i]) + "\n";
  return out;
}

inline std::string pattern_csv(const FilterAtlas& atlas, const PatternEntry& p) {
  std::string out = "channel,x,y,value\n";
  for (std::size_t c = 0; c < p.pattern.size(); ++c)
    out += atlas.channel_names[c] + "," + format_real(atlas.channel_xy[c][0]) + "," + format_real(atlas.channel_xy[c][1]) +
           "," + format_real(p.pattern[c]) + "\n";
  return out;
}

inline std::string atlas_file_stem(const SpectrumEntry& s) {
  return "b" + std::to_string(s.branch) + "_f" + std::to_string(s.filter);
}

// Writes spectrum_<stem>.csv, pattern_<stem>.csv, atlas.svg and atlas.txt.
inline void export_atlas(const FilterAtlas& atlas, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw FormatException(FormatError::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < atlas.spectra.size(); ++i) {
    const auto stem = atlas_file_stem(atlas.spectra[i]);
    write_file_atomic(out_dir / ("spectrum_" + stem + ".csv"), spectrum_csv(atlas.spectra[i]));
    write_file_atomic(out_dir / ("pattern_" + stem + ".csv"), pattern_csv(atlas, atlas.patterns[i]));
  }
  write_file_atomic(out_dir / "atlas.svg", render_atlas_svg(atlas));
  KeyValues meta;
  meta["fs_hz"] = format_real(atlas.fs);
  meta["nyquist_hz"] = format_real(atlas.nyquist_hz);
  meta["note"] = atlas.validity_note();
  meta["pattern_method"] = atlas.pattern_method;
  meta["sources"] = std::to_string(atlas.spectra.size());
  std::size_t degenerate = 0;
  for (const auto& p : atlas.patterns) degenerate += p.degenerate;
  meta["degenerate_patterns"] = std::to_string(degenerate);
  for (std::size_t i = 0; i < atlas.spectra.size(); ++i)
    meta["peak_hz." + atlas_file_stem(atlas.spectra[i])] = format_real(spectrum_peak_hz(atlas.spectra[i]));
  write_file_atomic(out_dir / "atlas.txt", format_key_values(meta));
}

}  // namespace itnet
