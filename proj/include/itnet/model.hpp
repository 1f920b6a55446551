#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "itnet/autodiff.hpp"
#include "itnet/config.hpp"
#include "itnet/io.hpp"
#include "itnet/layers.hpp"
#include "itnet/random.hpp"
#include "itnet/receptive_field.hpp"
#include "itnet/tensor.hpp"

namespace itnet {

struct InceptionBranch {
  std::size_t filters = 1;
  std::size_t kernel = 1;
  friend bool operator==(const InceptionBranch&, const InceptionBranch&) = default;
};

struct ArchConfig {
  std::size_t n_channels = 22;
  std::size_t n_samples = 375;
  std::size_t n_classes = 4;
  // Kept in ascending kernel order; filter indices in reports follow this order.
  std::vector<InceptionBranch> branches{{2, 16}, {4, 32}, {8, 64}};
  std::size_t pool1 = 4;
  std::size_t tc_blocks = 4;
  std::size_t tc_layers = 2;
  std::size_t tc_kernel = 4;
  std::size_t dilation_base = 2;
  std::size_t dr_filters = 14;
  std::size_t pool2 = 4;
  double dropout_rate = 0.4;

  std::size_t source_count() const {
    std::size_t s = 0;
    for (const auto& b : branches) s += b.filters;
    return s;
  }
  std::size_t pooled_length() const { return n_samples / pool1; }
  std::size_t feature_length() const { return pooled_length() / pool2; }
  std::size_t flat_features() const { return dr_filters * feature_length(); }
  std::uint64_t receptive_field() const {
    return receptive_field_blocks(tc_layers, tc_kernel, dilation_base, tc_blocks);
  }
  // Fraction of the pooled sequence one TC-block output can see (may exceed 1).
  double coverage_ratio() const {
    return static_cast<double>(receptive_field()) / static_cast<double>(pooled_length());
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("arch config: " + msg); };
    if (n_channels < 1) fail("n_channels must be >= 1");
    if (n_classes < 2) fail("n_classes must be >= 2");
    if (branches.empty()) fail("at least one inception branch is required");
    for (const auto& b : branches)
      if (b.filters < 1 || b.kernel < 1) fail("inception branch needs filters >= 1 and kernel >= 1");
    if (tc_layers < 1) fail("tc_layers must be >= 1");
    if (dilation_base < 1) fail("dilation_base must be >= 1");
    if (tc_kernel <= dilation_base) {
      fail("tc_kernel (" + std::to_string(tc_kernel) + ") must exceed dilation_base (" +
           std::to_string(dilation_base) + ") to avoid holes in the receptive field");
    }
    if (dr_filters < 1) fail("dr_filters must be >= 1");
    if (pool1 < 1 || pool2 < 1) fail("pool sizes must be >= 1");
    if (feature_length() < 1) fail("n_samples too short for pool1*pool2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  }

  KeyValues to_key_values(const std::string& prefix = "arch.") const {
    KeyValues kv;
    kv[prefix + "n_channels"] = std::to_string(n_channels);
    kv[prefix + "n_samples"] = std::to_string(n_samples);
    kv[prefix + "n_classes"] = std::to_string(n_classes);
    std::string br;
    for (const auto& b : branches) {
      if (!br.empty()) br += ',';
      br += std::to_string(b.filters) + "x" + std::to_string(b.kernel);
    }
    kv[prefix + "branches"] = br;
    kv[prefix + "pool1"] = std::to_string(pool1);
    kv[prefix + "tc_blocks"] = std::to_string(tc_blocks);
    kv[prefix + "tc_layers"] = std::to_string(tc_layers);
    kv[prefix + "tc_kernel"] = std::to_string(tc_kernel);
    kv[prefix + "dilation_base"] = std::to_string(dilation_base);
    kv[prefix + "dr_filters"] = std::to_string(dr_filters);
    kv[prefix + "pool2"] = std::to_string(pool2);
    kv[prefix + "dropout_rate"] = format_real(dropout_rate);
    return kv;
  }

  void read(ConfigReader& r, const std::string& prefix = "arch.") {
    r.read(prefix + "n_channels", n_channels);
    r.read(prefix + "n_samples", n_samples);
    r.read(prefix + "n_classes", n_classes);
    if (const auto* br = r.raw(prefix + "branches")) {
      branches.clear();
      for (const auto& item : split(*br, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos || x == 0 || x + 1 == item.size())
          throw ConfigError("branch '" + item + "' must look like FILTERSxKERNEL");
        branches.push_back({parse_value<std::size_t>(std::string_view(item).substr(0, x), prefix + "branches"),
                            parse_value<std::size_t>(std::string_view(item).substr(x + 1), prefix + "branches")});
      }
    }
    r.read(prefix + "pool1", pool1);
    r.read(prefix + "tc_blocks", tc_blocks);
    r.read(prefix + "tc_layers", tc_layers);
    r.read(prefix + "tc_kernel", tc_kernel);
    r.read(prefix + "dilation_base", dilation_base);
    r.read(prefix + "dr_filters", dr_filters);
    r.read(prefix + "pool2", pool2);
    r.read(prefix + "dropout_rate", dropout_rate);
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct LayerInfo {
  std::string name;
  std::string kind;
  Shape output;  // per-trial shape, batch axis omitted
};

template <Real T>
struct ModelState {
  std::vector<Tensor<T>> params;
  std::vector<BatchNormState<T>> norms;
};

// Intermediate activations captured during a forward pass.
template <Real T>
struct ForwardTrace {
  std::optional<Var<T>> inception;  // after concatenation, before activation
  std::optional<Var<T>> tc_input;   // after pool1
  std::optional<Var<T>> tc_output;
  std::optional<Var<T>> pre_flatten;
  std::optional<Var<T>> logits;
};

inline constexpr BatchNormOptions kBatchNorm{1e-3, 0.99};

template <Real T>
class ITNetModel {
 public:
  struct BranchSlots {
    std::size_t temporal_w, temporal_b, bn1_gamma, bn1_beta, spatial_w, bn2_gamma, bn2_beta;
    std::size_t bn1, bn2;
  };
  struct TcSlots {
    std::size_t w, b, gamma, beta, bn;
  };

  static ITNetModel build(const ArchConfig& config, std::uint64_t seed) {
    config.validate();
    ITNetModel m;
    m.config_ = config;
    Rng rng = derive_rng(seed, 0x1417);
    const std::size_t C = config.n_channels;
    const std::size_t F = config.source_count();

    for (std::size_t i = 0; i < config.branches.size(); ++i) {
      const auto [Fi, Ki] = config.branches[i];
      const std::string p = "inception.b" + std::to_string(i) + ".";
      BranchSlots s{};
      s.temporal_w = m.add_glorot(p + "temporal.weight", {Fi, 1, 1, Ki}, Ki, Ki * Fi, rng);
      s.temporal_b = m.add_param(p + "temporal.bias", Tensor<T>(Shape{Fi}));
      s.bn1 = m.add_norm(p + "bn1", Fi, s.bn1_gamma, s.bn1_beta);
      s.spatial_w = m.add_glorot(p + "spatial.weight", {Fi, C}, C * Fi, C, rng);
      s.bn2 = m.add_norm(p + "bn2", Fi, s.bn2_gamma, s.bn2_beta);
      m.branches_.push_back(s);
    }
    for (std::size_t j = 0; j < config.tc_blocks; ++j) {
      std::vector<TcSlots> block;
      for (std::size_t l = 0; l < config.tc_layers; ++l) {
        const std::string p = "tc.block" + std::to_string(j) + ".layer" + std::to_string(l) + ".";
        const std::size_t K = config.tc_kernel;
        TcSlots s{};
        s.w = m.add_glorot(p + "conv.weight", {F, 1, 1, K}, K * F, K, rng);
        s.b = m.add_param(p + "conv.bias", Tensor<T>(Shape{F}));
        s.bn = m.add_norm(p + "bn", F, s.gamma, s.beta);
        block.push_back(s);
      }
      m.tc_.push_back(std::move(block));
    }
    m.dr_w_ = m.add_glorot("dr.conv.weight", {config.dr_filters, F}, F, config.dr_filters, rng);
    m.dr_b_ = m.add_param("dr.conv.bias", Tensor<T>(Shape{config.dr_filters}));
    m.dr_bn_ = m.add_norm("dr.bn", config.dr_filters, m.dr_gamma_, m.dr_beta_);
    const std::size_t D = config.flat_features();
    m.fc_w_ = m.add_glorot("classifier.weight", {D, config.n_classes}, D, config.n_classes, rng);
    m.fc_b_ = m.add_param("classifier.bias", Tensor<T>(Shape{config.n_classes}));
    return m;
  }

  const ArchConfig& config() const noexcept { return config_; }
  std::vector<Parameter<T>>& params() noexcept { return params_; }
  const std::vector<Parameter<T>>& params() const noexcept { return params_; }
  std::vector<BatchNormState<T>>& norms() noexcept { return norms_; }
  const std::vector<BatchNormState<T>>& norms() const noexcept { return norms_; }
  const std::vector<std::string>& norm_names() const noexcept { return norm_names_; }
  const std::vector<BranchSlots>& branch_slots() const noexcept { return branches_; }

  Parameter<T>& param(std::string_view name) { return params_.at(index_of(name)); }
  const Parameter<T>& param(std::string_view name) const { return params_.at(index_of(name)); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  ModelState<T> state() const {
    ModelState<T> s;
    for (const auto& p : params_) s.params.push_back(p.value);
    s.norms = norms_;
    return s;
  }

  void set_state(const ModelState<T>& s) {
    if (s.params.size() != params_.size() || s.norms.size() != norms_.size()) {
      throw std::invalid_argument("model: state does not match architecture");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (s.params[i].shape() != params_[i].value.shape()) {
        throw std::invalid_argument("model: state shape mismatch for " + params_[i].name);
      }
      params_[i].value = s.params[i];
    }
    norms_ = s.norms;
  }

  // Per-layer output shapes derived from the configuration alone.
  std::vector<LayerInfo> layers() const {
    const auto& c = config_;
    const std::size_t F = c.source_count(), S = c.n_samples, P = c.pooled_length();
    std::vector<LayerInfo> out;
    for (std::size_t i = 0; i < c.branches.size(); ++i) {
      const std::string p = "inception.b" + std::to_string(i) + ".";
      const auto Fi = c.branches[i].filters;
      out.push_back({p + "temporal", "conv_temporal(same)", {Fi, c.n_channels, S}});
      out.push_back({p + "bn1", "batch_norm", {Fi, c.n_channels, S}});
      out.push_back({p + "spatial", "conv_spatial(valid)", {Fi, 1, S}});
      out.push_back({p + "bn2", "batch_norm", {Fi, 1, S}});
    }
    out.push_back({"inception.concat", "concat", {F, 1, S}});
    out.push_back({"inception.elu", "elu", {F, 1, S}});
    out.push_back({"inception.dropout", "dropout", {F, 1, S}});
    out.push_back({"inception.pool", "avg_pool_time", {F, 1, P}});
    for (std::size_t j = 0; j < c.tc_blocks; ++j) {
      for (std::size_t l = 0; l < c.tc_layers; ++l) {
        const std::string p = "tc.block" + std::to_string(j) + ".layer" + std::to_string(l) + ".";
        out.push_back({p + "conv", "conv_temporal(causal,depthwise,dilation=" +
                                       std::to_string(dilation(j)) + ")",
                       {F, 1, P}});
        out.push_back({p + "bn", "batch_norm", {F, 1, P}});
        out.push_back({p + "elu", "elu", {F, 1, P}});
        out.push_back({p + "dropout", "dropout", {F, 1, P}});
      }
      out.push_back({"tc.block" + std::to_string(j) + ".residual", "add+elu", {F, 1, P}});
    }
    out.push_back({"dr.conv", "conv_pointwise", {c.dr_filters, 1, P}});
    out.push_back({"dr.bn", "batch_norm", {c.dr_filters, 1, P}});
    out.push_back({"dr.elu", "elu", {c.dr_filters, 1, P}});
    out.push_back({"dr.dropout", "dropout", {c.dr_filters, 1, P}});
    out.push_back({"dr.pool", "avg_pool_time", {c.dr_filters, 1, c.feature_length()}});
    out.push_back({"flatten", "flatten", {c.flat_features()}});
    out.push_back({"classifier", "dense", {c.n_classes}});
    out.push_back({"softmax", "softmax_rows", {c.n_classes}});
    return out;
  }

  std::size_t dilation(std::size_t block) const {
    std::size_t d = 1;
    for (std::size_t i = 0; i < block; ++i) d *= config_.dilation_base;
    return d;
  }

  // Forward pass recording gradients into the parameters. Train mode updates
  // batch-norm running statistics and draws dropout masks from `rng`.
  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode, Rng& rng, ForwardTrace<T>* trace = nullptr) {
    auto bind = [&](std::size_t i) { return tape.parameter(params_[i]); };
    return run(tape, x, mode, rng, norms_, bind, trace);
  }

  // Class probabilities for a (N, 1, C, S) batch in inference mode.
  Tensor<T> predict(const Tensor<T>& x, ForwardTrace<T>* trace = nullptr, Tape<T>* external = nullptr) const {
    Tape<T> local;
    Tape<T>& tape = external ? *external : local;
    auto norms = norms_;
    auto bind = [&](std::size_t i) { return tape.constant(params_[i].value); };
    Rng unused(0);
    return run(tape, tape.constant(x), Mode::Infer, unused, norms, bind, trace).value();
  }

  // The temporal-convolution stack alone on a (N, F, 1, S) input.
  Var<T> forward_tc(Tape<T>& tape, const Var<T>& x, Mode mode, Rng& rng) {
    auto bind = [&](std::size_t i) { return tape.parameter(params_[i]); };
    return run_tc(tape, x, mode, rng, norms_, bind);
  }

  const std::vector<std::vector<TcSlots>>& tc_slots() const noexcept { return tc_; }

 private:
  ITNetModel() = default;

  std::size_t index_of(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("model: no parameter named " + std::string(name));
    return it->second;
  }

  std::size_t add_param(const std::string& name, Tensor<T> value) {
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value));
    return params_.size() - 1;
  }

  std::size_t add_glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> w(std::move(shape));
    for (auto& v : w.values()) v = static_cast<T>(uniform(rng, -limit, limit));
    return add_param(name, std::move(w));
  }

  std::size_t add_norm(const std::string& name, std::size_t channels, std::size_t& gamma, std::size_t& beta) {
    gamma = add_param(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
    beta = add_param(name + ".beta", Tensor<T>(Shape{channels}, T(0)));
    norms_.emplace_back(channels);
    norm_names_.push_back(name);
    return norms_.size() - 1;
  }

  template <typename Bind>
  Var<T> run_tc(Tape<T>&, Var<T> h, Mode mode, Rng& rng, std::vector<BatchNormState<T>>& norms,
                Bind& bind) const {
    const std::size_t F = config_.source_count();
    for (std::size_t j = 0; j < tc_.size(); ++j) {
      const Var<T> skip = h;
      const ConvSpec spec{config_.tc_kernel, dilation(j), Padding::Causal, true, F};
      for (const auto& s : tc_[j]) {
        h = conv_temporal(h, spec, bind(s.w), std::optional<Var<T>>(bind(s.b)));
        h = batch_norm(h, bind(s.gamma), bind(s.beta), norms[s.bn], mode, kBatchNorm);
        h = elu(h);
        h = dropout(h, config_.dropout_rate, mode, rng);
      }
      h = elu(add(h, skip));
    }
    return h;
  }

  template <typename Bind>
  Var<T> run(Tape<T>& tape, const Var<T>& x, Mode mode, Rng& rng, std::vector<BatchNormState<T>>& norms,
             Bind& bind, ForwardTrace<T>* trace) const {
    const auto& c = config_;
    const auto& xs = x.shape();
    require_rank(xs, 4, "ITNet input");
    require_extent(xs[1], 1, "ITNet input", "filter");
    require_extent(xs[2], c.n_channels, "ITNet input", "electrode");
    require_extent(xs[3], c.n_samples, "ITNet input", "time");

    std::vector<Var<T>> outs;
    for (std::size_t i = 0; i < branches_.size(); ++i) {
      const auto& s = branches_[i];
      const auto [Fi, Ki] = c.branches[i];
      Var<T> h = conv_temporal(x, ConvSpec{Ki, 1, Padding::Same, false, Fi}, bind(s.temporal_w),
                               std::optional<Var<T>>(bind(s.temporal_b)));
      h = batch_norm(h, bind(s.bn1_gamma), bind(s.bn1_beta), norms[s.bn1], mode, kBatchNorm);
      h = conv_spatial(h, bind(s.spatial_w));
      h = batch_norm(h, bind(s.bn2_gamma), bind(s.bn2_beta), norms[s.bn2], mode, kBatchNorm);
      outs.push_back(h);
    }
    Var<T> h = concat_filters(outs);
    if (trace) trace->inception = h;
    h = elu(h);
    h = dropout(h, c.dropout_rate, mode, rng);
    h = avg_pool_time(h, c.pool1);
    if (trace) trace->tc_input = h;

    h = run_tc(tape, h, mode, rng, norms, bind);
    if (trace) trace->tc_output = h;

    h = conv_pointwise(h, bind(dr_w_), std::optional<Var<T>>(bind(dr_b_)));
    h = batch_norm(h, bind(dr_gamma_), bind(dr_beta_), norms[dr_bn_], mode, kBatchNorm);
    h = elu(h);
    h = dropout(h, c.dropout_rate, mode, rng);
    h = avg_pool_time(h, c.pool2);
    if (trace) trace->pre_flatten = h;

    h = flatten(h);
    h = dense(h, bind(fc_w_), bind(fc_b_));
    if (trace) trace->logits = h;
    return softmax_rows(h);
  }

  ArchConfig config_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<BatchNormState<T>> norms_;
  std::vector<std::string> norm_names_;
  std::vector<BranchSlots> branches_;
  std::vector<std::vector<TcSlots>> tc_;
  std::size_t dr_w_ = 0, dr_b_ = 0, dr_gamma_ = 0, dr_beta_ = 0, dr_bn_ = 0;
  std::size_t fc_w_ = 0, fc_b_ = 0;
};

// ---------------------------------------------------------------------------
// ITNETMDL container: "ITNETMDL", u32 version, then one record per tensor until
// end of file: u16 name length + UTF-8 name, u8 dtype (0 real32, 1 real64),
// u8 rank, u32 extents, little-endian values. Batch-norm running moments are
// stored as "<norm>.running_mean" / "<norm>.running_var" records. The
// architecture is written next to the file as key=value text (<path>.cfg).

inline constexpr char kModelMagic[8] = {'I', 'T', 'N', 'E', 'T', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

template <Real T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <Real T>
void put_tensor_record(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
  w.put_string(name);
  w.put(static_cast<std::uint8_t>(std::is_same_v<T, float> ? 0 : 1));
  if (t.rank() > 255) throw std::invalid_argument("tensor rank exceeds 255: " + name);
  w.put(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) {
    if (e > 0xFFFFFFFFull) throw std::invalid_argument("tensor extent exceeds u32: " + name);
    w.put(static_cast<std::uint32_t>(e));
  }
  for (auto v : t.values()) w.put(v);
}

inline std::filesystem::path model_config_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".cfg";
  return p;
}

template <Real T>
std::string encode_model(const ITNetModel<T>& model) {
  ByteWriter w;
  w.put_raw(std::string_view(kModelMagic, 8));
  w.put(kModelVersion);
  for (const auto& p : model.params()) put_tensor_record(w, p.name, p.value);
  for (std::size_t i = 0; i < model.norms().size(); ++i) {
    put_tensor_record(w, model.norm_names()[i] + ".running_mean", model.norms()[i].running_mean);
    put_tensor_record(w, model.norm_names()[i] + ".running_var", model.norms()[i].running_var);
  }
  return w.bytes();
}

template <Real T>
void save_model(const ITNetModel<T>& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(model));
  write_file_atomic(model_config_path(path), format_key_values(model.config().to_key_values()));
}

// Decodes every tensor record of an ITNETMDL payload, converting to T.
template <Real T>
std::vector<NamedTensor<T>> decode_model_tensors(std::string_view bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  if (r.remaining() < 8 || r.get_raw(8) != std::string_view(kModelMagic, 8)) {
    throw FormatException(FormatError::BadMagic, origin + " is not an ITNETMDL file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion) {
    throw FormatException(FormatError::BadVersion, origin + ": version " + std::to_string(version));
  }
  std::vector<NamedTensor<T>> out;
  while (!r.at_end()) {
    NamedTensor<T> nt;
    nt.name = r.get_string();
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw FormatException(FormatError::BadValue, origin + ": unknown dtype tag for " + nt.name);
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      const auto e = r.get<std::uint32_t>();
      count *= e;
      if (count > (std::uint64_t{1} << 40)) {
        throw FormatException(FormatError::ExtentOverflow, origin + ": tensor " + nt.name + " too large");
      }
      shape.push_back(e);
    }
    const std::size_t width = dtype == 0 ? 4 : 8;
    r.need(count * width);
    std::vector<T> values(count);
    for (auto& v : values) v = dtype == 0 ? static_cast<T>(r.get<float>()) : static_cast<T>(r.get<double>());
    nt.value = Tensor<T>(std::move(shape), std::move(values));
    out.push_back(std::move(nt));
  }
  return out;
}

template <Real T>
ITNetModel<T> load_model(const std::filesystem::path& path) {
  const auto kv = load_key_values(model_config_path(path));
  ConfigReader reader(kv);
  ArchConfig config;
  config.read(reader);
  reader.reject_unused();
  auto model = ITNetModel<T>::build(config, 0);
  const auto tensors = decode_model_tensors<T>(read_file(path), path.string());

  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t.value).second) {
      throw FormatException(FormatError::BadValue, path.string() + ": duplicate tensor " + t.name);
    }
  }
  auto take = [&](const std::string& name, Tensor<T>& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatException(FormatError::BadValue, path.string() + ": missing tensor " + name);
    if (it->second->shape() != dst.shape()) {
      throw FormatException(FormatError::BadValue, path.string() + ": tensor " + name + " has shape " +
                                                       shape_string(it->second->shape()) + ", expected " +
                                                       shape_string(dst.shape()));
    }
    dst = *it->second;
    by_name.erase(it);
  };
  for (auto& p : model.params()) take(p.name, p.value);
  for (std::size_t i = 0; i < model.norms().size(); ++i) {
    take(model.norm_names()[i] + ".running_mean", model.norms()[i].running_mean);
    take(model.norm_names()[i] + ".running_var", model.norms()[i].running_var);
  }
  if (!by_name.empty()) {
    throw FormatException(FormatError::BadValue, path.string() + ": unexpected tensor " + by_name.begin()->first);
  }
  return model;
}

}  // namespace itnet
