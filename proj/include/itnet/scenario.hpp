#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "itnet/config.hpp"
#include "itnet/epochs.hpp"
#include "itnet/io.hpp"
#include "itnet/model.hpp"
#include "itnet/stats.hpp"
#include "itnet/training.hpp"

namespace itnet {

enum class Scenario { Within, Cross, CrossFinetuned };

inline std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Within: return "within";
    case Scenario::Cross: return "cross";
    case Scenario::CrossFinetuned: return "cross_finetuned";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "within") return Scenario::Within;
  if (s == "cross") return Scenario::Cross;
  if (s == "cross_finetuned" || s == "cross-ft" || s == "cross_ft") return Scenario::CrossFinetuned;
  throw std::invalid_argument("unknown scenario '" + s + "' (expected within, cross or cross-ft)");
}

struct SubjectData {
  std::string name;
  EpochSet train;
  EpochSet test;
};

struct SubjectResult {
  std::string subject;
  double accuracy = 0.0;             // percent, model after the extra epochs
  double accuracy_best_epoch = 0.0;  // percent, best test accuracy seen during refitting (selection-biased)
  double cross_accuracy = NAN;       // percent, cross model before fine-tuning (cross_finetuned only)
  std::size_t selected_fold = 0;
  std::size_t epochs_run = 0;        // CV epochs of the selected fold
  std::size_t best_epoch = 0;
  std::vector<HistoryRow> history;   // selected fold's CV phase followed by the extra phase
  std::vector<std::string> pool;     // training sets the model was fitted on, with trial counts
  std::optional<ITNetModel<float>> model;
  ChannelStats standardization;
};

struct ScenarioReport {
  Scenario scenario = Scenario::Within;
  std::vector<SubjectResult> subjects;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single subject

  std::vector<double> accuracies() const {
    std::vector<double> a;
    for (const auto& s : subjects) a.push_back(s.accuracy);
    return a;
  }
};

namespace detail {

inline std::uint64_t model_seed(std::uint64_t seed, std::size_t subject, std::size_t fold, std::uint64_t phase) {
  Rng r = derive_rng(seed, 0x5EED0000ull + phase * 0x10000ull + subject * 0x100ull + fold);
  return r();
}

inline void check_label_space(const std::vector<SubjectData>& subjects) {
  if (subjects.empty()) throw std::invalid_argument("run_scenario: no subjects");
  const auto& ref = subjects.front().train;
  for (const auto& s : subjects) {
    for (const EpochSet* e : {&s.train, &s.test}) {
      if (e->class_names != ref.class_names) {
        throw std::invalid_argument("run_scenario: label-space mismatch for subject " + s.name);
      }
      if (e->n_channels() != ref.n_channels() || e->n_samples() != ref.n_samples()) {
        throw std::invalid_argument("run_scenario: trial extents of subject " + s.name + " differ from " +
                                    subjects.front().name);
      }
    }
  }
}

inline void check_arch(const ArchConfig& arch, const EpochSet& ref) {
  if (arch.n_channels != ref.n_channels() || arch.n_samples != ref.n_samples() || arch.n_classes != ref.n_classes()) {
    throw std::invalid_argument("run_scenario: architecture expects " + std::to_string(arch.n_channels) + "x" +
                                std::to_string(arch.n_samples) + " trials with " + std::to_string(arch.n_classes) +
                                " classes, data has " + std::to_string(ref.n_channels()) + "x" +
                                std::to_string(ref.n_samples()) + " with " + std::to_string(ref.n_classes()));
  }
}

inline ChannelStats fit_logged(const EpochSet& set, AccessLog* log) {
  log_access(log, Access::Stats, set, set.n_trials());
  return fit_channel_stats(set);
}

inline std::string pool_entry(const EpochSet& e) { return e.source + ":" + std::to_string(e.n_trials()); }

// CV model selection on `labeled`, refit of the best fold on all of `labeled`, and
// evaluation on `test`. `init` returns the starting model for a fold.
inline void select_and_refit(SubjectResult& out, const EpochSet& labeled, const EpochSet& test, const TrainConfig& cfg,
                             std::uint64_t stream, const std::function<ITNetModel<float>(std::size_t)>& init,
                             AccessLog* log) {
  auto folds = run_cv<float>(labeled, cfg, stream, init, log);
  const std::size_t best = select_best_fold(folds);
  auto model = init(best);
  model.set_state(folds[best].fit.best_state);
  out.selected_fold = best;
  out.epochs_run = folds[best].fit.epochs_run;
  out.best_epoch = folds[best].fit.best_epoch;
  out.history = std::move(folds[best].fit.history);
  const double before = evaluate(model, test, log).accuracy;
  Rng rng = derive_rng(cfg.seed, stream * 1000 + 999);
  const auto trace = refit_extra_epochs(model, labeled, cfg, rng, out.history, &test, log);
  const double final_acc = trace.empty() ? before : trace.back();
  double best_acc = before;
  for (double a : trace) best_acc = std::max(best_acc, a);
  out.accuracy = 100.0 * final_acc;
  out.accuracy_best_epoch = 100.0 * best_acc;
  out.model = std::move(model);
}

}  // namespace detail

inline void finalize_report(ScenarioReport& r) {
  const auto a = r.accuracies();
  r.mean = a.empty() ? 0.0 : mean_of(a);
  r.stddev = a.size() < 2 ? 0.0 : stddev_of(a);
}

// Runs one evaluation scenario over all subjects.
//   within          — CV + refit on each subject's training session; test on its test session.
//   cross           — per target, pool the other subjects' training sessions; the target is never read.
//   cross_finetuned — the cross model, further trained (CV + refit) on the target's training session.
// Standardization statistics come from the data the model is fitted on: the
// subject's training session (within) or the pool (cross and cross_finetuned).
inline ScenarioReport run_scenario(Scenario scenario, std::vector<SubjectData> subjects, const ArchConfig& arch,
                                   const TrainConfig& cfg, AccessLog* log = nullptr,
                                   const std::vector<std::size_t>& targets = {}) {
  cfg.validate();
  arch.validate();
  detail::check_label_space(subjects);
  detail::check_arch(arch, subjects.front().train);
  if (scenario != Scenario::Within && subjects.size() < 2) {
    throw std::invalid_argument("cross requires >= 2 subjects, got " + std::to_string(subjects.size()));
  }
  for (auto& s : subjects) {
    s.train.source = s.name + ".train";
    s.test.source = s.name + ".test";
  }
  std::vector<std::size_t> order = targets;
  if (order.empty())
    for (std::size_t i = 0; i < subjects.size(); ++i) order.push_back(i);

  ScenarioReport report;
  report.scenario = scenario;
  for (const std::size_t t : order) {
    if (t >= subjects.size()) throw std::out_of_range("run_scenario: target index out of range");
    const auto& subj = subjects[t];
    SubjectResult res;
    res.subject = subj.name;
    if (scenario == Scenario::Within) {
      EpochSet train = subj.train, test = subj.test;
      res.standardization = detail::fit_logged(train, log);
      apply_channel_stats(train, res.standardization);
      apply_channel_stats(test, res.standardization);
      res.pool = {detail::pool_entry(train)};
      detail::select_and_refit(res, train, test, cfg, 1 + t,
                               [&](std::size_t f) { return ITNetModel<float>::build(arch, detail::model_seed(cfg.seed, t, f, 0)); },
                               log);
    } else {
      std::vector<const EpochSet*> parts;
      std::string tag = "pool";
      for (std::size_t i = 0; i < subjects.size(); ++i) {
        if (i == t) continue;
        parts.push_back(&subjects[i].train);
        tag += (parts.size() == 1 ? ":" : "+") + subjects[i].train.source;
      }
      EpochSet pool = concat_epochs(parts, tag);
      res.standardization = detail::fit_logged(pool, log);
      apply_channel_stats(pool, res.standardization);
      EpochSet test = subj.test;
      apply_channel_stats(test, res.standardization);
      for (const auto* p : parts) res.pool.push_back(detail::pool_entry(*p));
      detail::select_and_refit(res, pool, test, cfg, 100 + t,
                               [&](std::size_t f) { return ITNetModel<float>::build(arch, detail::model_seed(cfg.seed, t, f, 1)); },
                               log);
      if (scenario == Scenario::CrossFinetuned) {
        res.cross_accuracy = res.accuracy;
        const ModelState<float> cross_state = res.model->state();
        EpochSet ft = subj.train;
        apply_channel_stats(ft, res.standardization);
        res.pool.push_back(detail::pool_entry(ft));
        SubjectResult tuned = res;
        detail::select_and_refit(tuned, ft, test, cfg, 200 + t,
                                 [&](std::size_t) {
                                   auto m = ITNetModel<float>::build(arch, 0);
                                   m.set_state(cross_state);
                                   return m;
                                 },
                                 log);
        res = std::move(tuned);
      }
    }
    report.subjects.push_back(std::move(res));
  }
  finalize_report(report);
  return report;
}

// ---------------------------------------------------------------------------
// Report files

inline std::string accuracy_csv(const ScenarioReport& r) {
  std::ostringstream os;
  os << "subject,accuracy,accuracy_best_epoch,cross_accuracy,selected_fold,epochs_run,best_epoch\n";
  for (const auto& s : r.subjects) {
    os << s.subject << ',' << format_real(s.accuracy) << ',' << format_real(s.accuracy_best_epoch) << ','
       << (std::isnan(s.cross_accuracy) ? std::string() : format_real(s.cross_accuracy)) << ',' << s.selected_fold
       << ',' << s.epochs_run << ',' << s.best_epoch << '\n';
  }
  return os.str();
}

inline std::string history_csv(const std::vector<HistoryRow>& h) {
  std::ostringstream os;
  os << "epoch,phase,train_loss,val_loss,train_acc,val_acc\n";
  auto cell = [](double v) { return std::isnan(v) ? std::string() : format_real(v); };
  for (const auto& r : h) {
    os << r.epoch << ',' << r.phase << ',' << cell(r.train_loss) << ',' << cell(r.val_loss) << ',' << cell(r.train_acc)
       << ',' << cell(r.val_acc) << '\n';
  }
  return os.str();
}

inline KeyValues report_key_values(const ScenarioReport& r) {
  KeyValues kv;
  kv["scenario"] = scenario_name(r.scenario);
  kv["subjects"] = std::to_string(r.subjects.size());
  kv["accuracy.mean"] = format_real(r.mean);
  kv["accuracy.std"] = format_real(r.stddev);
  kv["accuracy.headline"] = "final-epoch";
  kv["standardization"] = r.scenario == Scenario::Within ? "per-channel, fit on the subject's epoched training session"
                                                         : "per-channel, fit on the pooled epoched training sessions";
  for (const auto& s : r.subjects) {
    kv["subject." + s.subject + ".accuracy"] = format_real(s.accuracy);
    kv["subject." + s.subject + ".accuracy_best_epoch"] = format_real(s.accuracy_best_epoch);
    std::string pool;
    for (const auto& p : s.pool) pool += (pool.empty() ? "" : " ") + p;
    kv["subject." + s.subject + ".pool"] = pool;
  }
  return kv;
}

inline std::string json_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '"' || c == '\\') o += '\\';
    o += c;
  }
  return o;
}

inline std::string summary_jsonl(const ScenarioReport& r) {
  std::string out;
  for (const auto& s : r.subjects) {
    out += "{\"subject\":\"" + json_escape(s.subject) + "\",\"scenario\":\"" + scenario_name(r.scenario) +
           "\",\"accuracy\":" + format_real(s.accuracy) + "}\n";
  }
  return out;
}

// Reads a column of an accuracy CSV (header row required).
inline std::vector<double> read_accuracy_column(const std::filesystem::path& path, const std::string& column = "accuracy") {
  std::ifstream in(path);
  if (!in) throw FormatException(FormatError::Io, path.string() + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw FormatException(FormatError::Truncated, path.string() + ": empty table");
  const auto header = split(line, ',');
  std::size_t col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == column) col = i;
  if (col == header.size()) throw FormatException(FormatError::BadValue, path.string() + ": no column '" + column + "'");
  std::vector<double> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() <= col) {
      throw FormatException(FormatError::BadValue, path.string() + ":" + std::to_string(lineno) + ": missing cell");
    }
    out.push_back(parse_value<double>(cells[col], path.string() + ":" + std::to_string(lineno)));
  }
  return out;
}

}  // namespace itnet
