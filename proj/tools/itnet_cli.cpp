// itnet: synth, train, evaluate, explain, plan, stats.
//
// Exit codes:
//   0  success
//   1  internal error
//   2  usage error (bad flags)
//   3  configuration error (unknown key, bad value, invalid spec/config)
//   4  I/O or file-format error (missing/corrupt file, unwritable output)
//   5  invalid data (label-space mismatch, too few subjects, degenerate statistics input)

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "itnet/itnet.hpp"

namespace fs = std::filesystem;
using namespace itnet;

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kConfig = 3, kIo = 4, kData = 5 };

// Runs `f`, turning validation failures into configuration errors.
template <typename F>
auto as_config(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

KeyValues merged_config(const std::string& file, const std::vector<std::string>& sets) {
  KeyValues kv = file.empty() ? KeyValues{} : load_key_values(file);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  auto kv = merged_config(a.spec, a.sets);
  if (a.seed) kv["synth.seed"] = std::to_string(*a.seed);
  KeyValues effective;
  const SynthSpec spec = as_config([&] {
    ConfigReader r(kv);
    auto s = read_synth_spec(r, effective);
    r.reject_unused();
    s.validate();
    return s;
  });
  const auto set = synth_generate(spec);
  save_epochs(set, a.out);
  std::printf("wrote %s: %zu trials, %zu channels, %zu samples, %zu classes, fs=%s Hz\n", a.out.c_str(), set.n_trials(),
              set.n_channels(), set.n_samples(), set.n_classes(), format_real(static_cast<double>(set.fs)).c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string scenario, data, config, out;
  std::vector<std::string> sets, targets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<double> dropout;
};

std::vector<SubjectData> load_subjects(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatException(FormatError::Io, dir.string() + " is not a directory");
  const std::string suffix = ".train.eegepoch";
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto f = e.path().filename().string();
    if (f.rfind("subject", 0) == 0 && f.size() > suffix.size() && f.ends_with(suffix))
      names.push_back(f.substr(0, f.size() - suffix.size()));
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto f = e.path().filename().string();
    const std::string tsuffix = ".test.eegepoch";
    if (f.rfind("subject", 0) == 0 && f.ends_with(tsuffix) &&
        std::find(names.begin(), names.end(), f.substr(0, f.size() - tsuffix.size())) == names.end())
      throw FormatException(FormatError::Io, "missing pair file " + (dir / (f.substr(0, f.size() - tsuffix.size()) + suffix)).string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw FormatException(FormatError::Io, "no subjectNN.train.eegepoch files in " + dir.string());
  std::vector<SubjectData> out;
  for (const auto& n : names) {
    const auto test = dir / (n + ".test.eegepoch");
    if (!fs::exists(test)) throw FormatException(FormatError::Io, "missing pair file " + test.string());
    out.push_back({n, load_epochs(dir / (n + suffix)), load_epochs(test)});
  }
  return out;
}

int cmd_train(const TrainArgs& a) {
  const Scenario scenario = as_config([&] { return parse_scenario(a.scenario); });
  auto kv = merged_config(a.config, a.sets);
  if (a.seed) kv["train.seed"] = std::to_string(*a.seed);
  if (a.jobs) kv["train.threads"] = std::to_string(*a.jobs);
  if (a.dropout) kv["arch.dropout_rate"] = format_real(*a.dropout);

  auto subjects = load_subjects(a.data);
  const auto& ref = subjects.front().train;
  ArchConfig arch;
  arch.n_channels = ref.n_channels();
  arch.n_samples = ref.n_samples();
  arch.n_classes = ref.n_classes();
  arch.dropout_rate = scenario == Scenario::Within ? 0.4 : 0.2;
  TrainConfig train = scenario == Scenario::Within ? TrainConfig::within_defaults() : TrainConfig::cross_defaults();
  as_config([&] {
    ConfigReader r(kv);
    arch.read(r);
    train.read(r);
    r.reject_unused();
    arch.validate();
    train.validate();
    return 0;
  });

  std::vector<std::size_t> targets;
  for (const auto& t : a.targets) {
    const auto it = std::find_if(subjects.begin(), subjects.end(), [&](const SubjectData& s) { return s.name == t; });
    if (it == subjects.end()) throw ConfigError("--targets: no subject named " + t);
    targets.push_back(static_cast<std::size_t>(it - subjects.begin()));
  }

  const fs::path out(a.out);
  KeyValues effective = arch.to_key_values();
  for (const auto& [k, v] : train.to_key_values()) effective[k] = v;
  effective["scenario"] = scenario_name(scenario);
  write_file_atomic(out / "config.txt", format_key_values(effective));

  const auto report = run_scenario(scenario, std::move(subjects), arch, train, nullptr, targets);
  for (const auto& s : report.subjects) {
    save_model(*s.model, out / "models" / (s.subject + ".itnetmdl"));
    write_file_atomic(out / "models" / (s.subject + ".itnetmdl.stats"),
                      format_key_values(channel_stats_key_values(s.standardization)));
    write_file_atomic(out / "history" / (s.subject + ".csv"), history_csv(s.history));
  }
  write_file_atomic(out / "accuracy.csv", accuracy_csv(report));
  write_file_atomic(out / "report.txt", format_key_values(report_key_values(report)));
  const auto jsonl = summary_jsonl(report);
  write_file_atomic(out / "summary.jsonl", jsonl);
  std::fputs(jsonl.c_str(), stdout);
  return kOk;
}

// ---------------------------------------------------------------------------

ChannelStats stats_for_model(const std::string& model, const std::string& explicit_path) {
  const fs::path p = explicit_path.empty() ? fs::path(model + ".stats") : fs::path(explicit_path);
  return read_channel_stats(load_key_values(p));
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path, const std::string& stats_path) {
  const auto model = load_model<float>(model_path);
  auto data = load_epochs(data_path);
  apply_channel_stats(data, stats_for_model(model_path, stats_path));
  const auto& c = model.config();
  if (data.n_channels() != c.n_channels || data.n_samples() != c.n_samples || data.n_classes() != c.n_classes)
    throw std::invalid_argument("evaluate: data extents do not match the model");
  const auto ev = evaluate(model, data);
  std::printf("{\"trials\":%zu,\"accuracy\":%s,\"loss\":%s}\n", data.n_trials(), format_real(100.0 * ev.accuracy).c_str(),
              format_real(ev.loss).c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct ExplainArgs {
  std::string model, out, channels, patterns = "pinv", data, stats;
  double fs = 125.0;
  std::size_t savgol_l = 5, savgol_p = 3, pad = 512;
};

int cmd_explain(const ExplainArgs& a) {
  const auto model = load_model<double>(a.model);
  const auto C = model.config().n_channels;
  AtlasOptions opt;
  opt.fs = a.fs;
  opt.savgol_l = a.savgol_l;
  opt.savgol_p = a.savgol_p;
  opt.pad_to = a.pad;
  as_config([&] {
    if (!(a.fs > 0.0)) throw std::invalid_argument("--fs must be positive");
    savgol_coeffs(a.savgol_l, a.savgol_p);
    if (a.patterns != "pinv" && a.patterns != "covariance")
      throw std::invalid_argument("--patterns must be pinv or covariance");
    if (a.patterns == "covariance" && a.data.empty()) throw std::invalid_argument("--patterns covariance needs --data");
    return 0;
  });
  std::vector<std::string> names;
  std::vector<std::array<float, 2>> xy;
  if (!a.channels.empty()) {
    const auto ref = load_epochs(a.channels);
    names = ref.channel_names;
    xy = ref.channel_xy;
  } else {
    auto m = default_montage(C);
    names = std::move(m.names);
    xy = std::move(m.xy);
  }
  std::optional<Eigen::MatrixXd> P;
  if (a.patterns == "covariance") {
    auto data = load_epochs(a.data);
    apply_channel_stats(data, stats_for_model(a.model, a.stats));
    P = covariance_patterns(model, channel_covariance(data));
  }
  const auto atlas = build_atlas(model, names, xy, opt, P ? &*P : nullptr);
  export_atlas(atlas, a.out);
  for (const auto& w : atlas.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("wrote %zu spectra, %zu patterns (%s) and atlas.svg to %s; %s\n", atlas.spectra.size(),
              atlas.patterns.size(), atlas.pattern_method.c_str(), a.out.c_str(), atlas.validity_note().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_plan(std::uint64_t target, std::uint64_t m, std::uint64_t b, std::uint64_t n) {
  const auto [T, r] = as_config([&] {
    const auto t = plan_kernel(target, m, b, n);
    return std::pair{t, receptive_field_blocks(m, t, b, n)};
  });
  std::printf("T=%llu r=%llu\n", static_cast<unsigned long long>(T), static_cast<unsigned long long>(r));
  return kOk;
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  std::string table, vs, test = "wilcoxon", column = "accuracy", method = "auto";
  bool no_continuity = false;
  double alpha = 0.05;
};

int cmd_stats(const StatsArgs& a) {
  WilcoxonOptions opt;
  as_config([&] {
    if (a.test != "wilcoxon" && a.test != "ttest") throw std::invalid_argument("--test must be wilcoxon or ttest");
    if (a.method == "auto") opt.method = WilcoxonMethod::Auto;
    else if (a.method == "exact") opt.method = WilcoxonMethod::Exact;
    else if (a.method == "normal") opt.method = WilcoxonMethod::Normal;
    else throw std::invalid_argument("--method must be auto, exact or normal");
    if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw std::invalid_argument("--alpha must lie in (0, 1)");
    return 0;
  });
  opt.continuity = !a.no_continuity;
  const auto x = read_accuracy_column(a.table, a.column);
  const auto y = read_accuracy_column(a.vs, a.column);
  if (x.size() != y.size())
    throw std::invalid_argument("stats: tables have " + std::to_string(x.size()) + " and " + std::to_string(y.size()) +
                                " rows");
  double p = 1.0;
  if (a.test == "wilcoxon") {
    const auto r = wilcoxon_one_sided(x, y, opt);
    p = r.p;
    std::printf("test=wilcoxon W=%s n=%zu method=%s p=%s", format_real(r.W).c_str(), r.n_effective,
                r.exact ? "exact" : "normal", format_real(r.p).c_str());
  } else {
    const auto r = paired_t_right(x, y);
    p = r.p;
    std::printf("test=ttest t=%s df=%s p=%s", format_real(r.t).c_str(), format_real(r.df).c_str(),
                format_real(r.p).c_str());
  }
  std::printf(" alpha=%s verdict=%s\n", format_real(a.alpha).c_str(), p < a.alpha ? "significant" : "not-significant");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ITNet EEG classifier: training, evaluation and explainability"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic EEGEPOCH cohort");
  synth->add_option("--spec", sa.spec, "key=value spec file (synth.* keys)");
  synth->add_option("--out", sa.out, "output .eegepoch file")->required();
  synth->add_option("--set", sa.sets, "override a key (key=value), repeatable");
  synth->add_option("--seed", sa.seed, "random seed (overrides synth.seed)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "run an evaluation scenario");
  train->add_option("--scenario", ta.scenario, "within | cross | cross-ft")->required();
  train->add_option("--data", ta.data, "directory with subjectNN.{train,test}.eegepoch")->required();
  train->add_option("--config", ta.config, "key=value config file (arch.*, train.*)");
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--set", ta.sets, "override a key (key=value), repeatable");
  train->add_option("--seed", ta.seed, "random seed (overrides train.seed)");
  train->add_option("--jobs", ta.jobs, "parallel folds (overrides train.threads)")->check(CLI::PositiveNumber);
  train->add_option("--dropout", ta.dropout, "dropout rate (default 0.4 within, 0.2 cross)");
  train->add_option("--targets", ta.targets, "evaluate only these subjects")->delimiter(',');

  std::string ev_model, ev_data, ev_stats;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "accuracy of a trained model on an EEGEPOCH file");
  evaluate_cmd->add_option("--model", ev_model, "model file")->required();
  evaluate_cmd->add_option("--data", ev_data, "EEGEPOCH file")->required();
  evaluate_cmd->add_option("--stats", ev_stats, "standardization stats (default <model>.stats)");

  ExplainArgs ea;
  auto* explain = app.add_subcommand("explain", "export kernel spectra and spatial patterns");
  explain->add_option("--model", ea.model, "model file")->required();
  explain->add_option("--fs", ea.fs, "sampling rate in Hz")->required();
  explain->add_option("--out", ea.out, "output directory")->required();
  explain->add_option("--channels", ea.channels, "EEGEPOCH file supplying channel names and positions");
  explain->add_option("--savgol-l", ea.savgol_l, "smoothing half-width");
  explain->add_option("--savgol-p", ea.savgol_p, "smoothing polynomial order");
  explain->add_option("--pad", ea.pad, "DFT length");
  explain->add_option("--patterns", ea.patterns, "pinv | covariance");
  explain->add_option("--data", ea.data, "EEGEPOCH file for covariance patterns");
  explain->add_option("--stats", ea.stats, "standardization stats (default <model>.stats)");

  std::uint64_t target = 0, pm = 2, pb = 2, pn = 4;
  auto* plan = app.add_subcommand("plan", "minimal TC kernel extent for a target receptive field");
  plan->add_option("--target-r", target, "receptive field in samples")->required();
  plan->add_option("--m", pm, "convolutions per block");
  plan->add_option("--b", pb, "dilation base");
  plan->add_option("--n", pn, "number of blocks");

  StatsArgs st;
  auto* stats = app.add_subcommand("stats", "compare two accuracy tables");
  stats->add_option("--table", st.table, "accuracy CSV of the proposed method")->required();
  stats->add_option("--vs", st.vs, "accuracy CSV of the baseline")->required();
  stats->add_option("--test", st.test, "wilcoxon | ttest");
  stats->add_option("--column", st.column, "column to compare");
  stats->add_option("--method", st.method, "wilcoxon p-value: auto | exact | normal");
  stats->add_flag("--no-continuity", st.no_continuity, "no continuity correction on the normal path");
  stats->add_option("--alpha", st.alpha, "significance level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(ta);
    if (*evaluate_cmd) return cmd_evaluate(ev_model, ev_data, ev_stats);
    if (*explain) return cmd_explain(ea);
    if (*plan) return cmd_plan(target, pm, pb, pn);
    if (*stats) return cmd_stats(st);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const FormatException& e) {
    std::fprintf(stderr, "file error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "file error: %s\n", e.what());
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kData;
  } catch (const std::out_of_range& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
  return kInternal;
}
