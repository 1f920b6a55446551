#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "itnet/adam.hpp"
#include "itnet/config.hpp"
#include "itnet/epochs.hpp"
#include "itnet/model.hpp"
#include "itnet/random.hpp"

namespace itnet {

struct TrainConfig {
  std::size_t max_epochs_cv = 500;
  std::size_t patience = 100;
  std::size_t extra_epochs_max = 50;
  double extra_lr = 1e-4;
  double base_lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t folds = 10;
  // Number of CV folds actually trained (0 = all). The split is always k-fold.
  std::size_t fold_limit = 0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  static TrainConfig within_defaults() { return {}; }
  static TrainConfig cross_defaults() {
    TrainConfig c;
    c.max_epochs_cv = 150;
    c.patience = 15;
    return c;
  }

  std::size_t folds_to_run() const { return fold_limit == 0 ? folds : std::min(fold_limit, folds); }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (folds < 2) fail("folds must be >= 2");
    if (patience < 1) fail("patience must be >= 1");
    if (patience >= max_epochs_cv) fail("patience must be below max_epochs_cv");
    if (batch_size < 2) fail("batch_size must be >= 2 (batch norm needs two samples)");
    if (!(base_lr >= 0.0) || !(extra_lr >= 0.0)) fail("learning rates must be >= 0");
    if (threads < 1) fail("threads must be >= 1");
  }

  KeyValues to_key_values(const std::string& prefix = "train.") const {
    KeyValues kv;
    kv[prefix + "max_epochs_cv"] = std::to_string(max_epochs_cv);
    kv[prefix + "patience"] = std::to_string(patience);
    kv[prefix + "extra_epochs_max"] = std::to_string(extra_epochs_max);
    kv[prefix + "extra_lr"] = format_real(extra_lr);
    kv[prefix + "base_lr"] = format_real(base_lr);
    kv[prefix + "batch_size"] = std::to_string(batch_size);
    kv[prefix + "folds"] = std::to_string(folds);
    kv[prefix + "fold_limit"] = std::to_string(fold_limit);
    kv[prefix + "seed"] = std::to_string(seed);
    kv[prefix + "threads"] = std::to_string(threads);
    return kv;
  }

  void read(ConfigReader& r, const std::string& prefix = "train.") {
    r.read(prefix + "max_epochs_cv", max_epochs_cv);
    r.read(prefix + "patience", patience);
    r.read(prefix + "extra_epochs_max", extra_epochs_max);
    r.read(prefix + "extra_lr", extra_lr);
    r.read(prefix + "base_lr", base_lr);
    r.read(prefix + "batch_size", batch_size);
    r.read(prefix + "folds", folds);
    r.read(prefix + "fold_limit", fold_limit);
    r.read(prefix + "seed", seed);
    r.read(prefix + "threads", threads);
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---------------------------------------------------------------------------
// Data-access instrumentation: which sources fed gradient updates, normalization
// statistics, or evaluation. Test isolation is asserted against this log.

enum class Access { Update, Stats, Eval };

class AccessLog {
 public:
  void record(Access kind, const std::string& source, std::size_t trials) {
    std::lock_guard lock(mutex_);
    counts_[{kind, source}] += trials;
  }
  std::size_t count(Access kind, const std::string& source) const {
    std::lock_guard lock(mutex_);
    const auto it = counts_.find({kind, source});
    return it == counts_.end() ? 0 : it->second;
  }
  // Sum over every source whose tag contains `needle`.
  std::size_t count_matching(Access kind, const std::string& needle) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [key, v] : counts_)
      if (key.first == kind && key.second.find(needle) != std::string::npos) n += v;
    return n;
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<Access, std::string>, std::size_t> counts_;
};

inline void log_access(AccessLog* log, Access kind, const EpochSet& set, std::size_t trials) {
  if (log) log->record(kind, set.source, trials);
}

// ---------------------------------------------------------------------------
// Splitting

// Per-class shuffle, then round-robin dealing continued across classes, so every
// fold's class count is within one of the ideal proportion.
inline std::vector<std::vector<std::size_t>> stratified_kfold(const std::vector<std::uint32_t>& labels, std::size_t k,
                                                              std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_kfold: k must be >= 2");
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [cls, idx] : by_class) {
    if (idx.size() < k) {
      throw std::invalid_argument("stratified_kfold: class " + std::to_string(cls) + " has " +
                                  std::to_string(idx.size()) + " trials, fewer than k=" + std::to_string(k));
    }
  }
  Rng rng = derive_rng(seed, 0xF01D);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (auto& [cls, idx] : by_class) {
    shuffle(idx, rng);
    for (auto i : idx) {
      folds[next].push_back(i);
      next = (next + 1) % k;
    }
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

// ---------------------------------------------------------------------------
// Batches and evaluation

template <Real T>
Tensor<T> batch_input(const EpochSet& set, const std::vector<std::size_t>& idx) {
  const std::size_t C = set.n_channels(), S = set.n_samples(), per = C * S;
  Tensor<T> x(Shape{idx.size(), 1, C, S});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = &set.trials[idx[i] * per];
    std::copy(src, src + per, x.values().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return x;
}

inline std::vector<std::uint32_t> batch_labels(const EpochSet& set, const std::vector<std::size_t>& idx) {
  std::vector<std::uint32_t> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = set.labels[idx[i]];
  return y;
}

// Splits `order` into batches of `size`; a trailing batch of one trial is merged
// into its predecessor because batch norm cannot normalize a single sample.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;  // fraction in [0, 1]
  std::vector<std::uint32_t> predictions;
};

template <Real T>
Evaluation evaluate(const ITNetModel<T>& model, const EpochSet& set, AccessLog* log = nullptr,
                    std::size_t batch = 64) {
  if (set.n_trials() == 0) throw std::invalid_argument("evaluate: empty set");
  log_access(log, Access::Eval, set, set.n_trials());
  const std::size_t K = model.config().n_classes;
  Evaluation ev;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.n_trials(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.n_trials(), start + batch); ++i) idx.push_back(i);
    const auto p = model.predict(batch_input<T>(set, idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* row = &p[r * K];
      const auto arg = static_cast<std::uint32_t>(std::max_element(row, row + K) - row);
      ev.predictions.push_back(arg);
      const std::uint32_t y = set.labels[idx[r]];
      correct += arg == y;
      loss -= std::log(std::clamp<double>(row[y], 1e-7, 1.0 - 1e-7));
    }
  }
  ev.loss = loss / static_cast<double>(set.n_trials());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(set.n_trials());
  return ev;
}

// One pass over `train` in shuffled mini-batches. Returns (mean loss, accuracy) of
// the train-mode forward passes.
template <Real T>
std::pair<double, double> train_epoch(ITNetModel<T>& model, const EpochSet& train, AdamState<T>& adam,
                                      const AdamConfig& opt, std::size_t batch_size, Rng& rng, AccessLog* log) {
  std::vector<std::size_t> order(train.n_trials());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  const std::size_t K = model.config().n_classes;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& idx : make_batches(order, batch_size)) {
    if (idx.size() < 2) throw std::invalid_argument("train_epoch: training needs at least two trials");
    const auto y = batch_labels(train, idx);
    Tape<T> tape;
    model.zero_grad();
    const auto probs = model.forward(tape, tape.constant(batch_input<T>(train, idx)), Mode::Train, rng);
    const auto loss = nll_loss(probs, y);
    tape.backward(loss);
    adam_step(model.params(), adam, opt);
    log_access(log, Access::Update, train, idx.size());
    loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
    const auto& pv = probs.value();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* row = &pv[r * K];
      correct += static_cast<std::uint32_t>(std::max_element(row, row + K) - row) == y[r];
    }
  }
  const double n = static_cast<double>(train.n_trials());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

// ---------------------------------------------------------------------------
// Early stopping

struct HistoryRow {
  std::size_t epoch = 0;  // 1-based within its phase
  std::string phase;      // "cv" or "extra"
  double train_loss = 0, val_loss = 0, train_acc = 0, val_acc = 0;
};

// Tracks the best validation loss. With patience P, training stops once P
// consecutive epochs fail to improve on the best.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("early stopping: patience must be >= 1");
  }

  // Returns true when `val_loss` is a new best.
  bool update(std::size_t epoch, double val_loss) {
    const bool improved = val_loss < best_loss_;
    if (improved) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      wait_ = 0;
    } else {
      ++wait_;
    }
    best_trace_.push_back(best_loss_);
    return improved;
  }

  bool should_stop() const noexcept { return wait_ >= patience_; }
  double best_loss() const noexcept { return best_loss_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  // Best-so-far value after each update; non-increasing by construction.
  const std::vector<double>& best_trace() const noexcept { return best_trace_; }

 private:
  std::size_t patience_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t wait_ = 0;
  std::vector<double> best_trace_;
};

template <Real T>
struct FitResult {
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val_loss = 0.0;
  double best_val_acc = 0.0;
  ModelState<T> best_state;
};

template <Real T>
using EpochCallback = std::function<void(std::size_t epoch, const ITNetModel<T>&, const HistoryRow&)>;

// Trains until validation loss stalls for `patience` epochs or max_epochs_cv is
// reached, then restores the checkpoint of the best epoch.
template <Real T>
FitResult<T> fit_with_early_stopping(ITNetModel<T>& model, const EpochSet& train, const EpochSet& val,
                                     const TrainConfig& cfg, Rng& rng, AccessLog* log = nullptr,
                                     const EpochCallback<T>& on_epoch = {}) {
  cfg.validate();
  if (val.n_trials() == 0) throw std::invalid_argument("fit: validation set is empty");
  if (train.n_trials() < 2) throw std::invalid_argument("fit: training set needs at least two trials");
  FitResult<T> res;
  AdamState<T> adam;
  const AdamConfig opt{cfg.base_lr, 0.9, 0.999, 1e-7};
  EarlyStopping stop(cfg.patience);
  res.best_state = model.state();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs_cv; ++epoch) {
    const auto [tl, ta] = train_epoch(model, train, adam, opt, cfg.batch_size, rng, log);
    const auto ev = evaluate(model, val, log);
    HistoryRow row{epoch, "cv", tl, ev.loss, ta, ev.accuracy};
    res.history.push_back(row);
    res.epochs_run = epoch;
    if (stop.update(epoch, ev.loss)) {
      res.best_state = model.state();
      res.best_epoch = epoch;
      res.best_val_loss = ev.loss;
      res.best_val_acc = ev.accuracy;
    }
    if (on_epoch) on_epoch(epoch, model, row);
    if (stop.should_stop()) break;
  }
  model.set_state(res.best_state);
  return res;
}

// Continues training on all labelled data with a fresh optimizer at extra_lr.
// When `monitor` is given (e.g. the test session) its loss/accuracy are recorded
// per epoch for plotting; it never influences training. Returns the monitor
// accuracy after each epoch (empty without a monitor).
template <Real T>
std::vector<double> refit_extra_epochs(ITNetModel<T>& model, const EpochSet& all_labeled, const TrainConfig& cfg, Rng& rng,
                                       std::vector<HistoryRow>& history, const EpochSet* monitor = nullptr,
                                       AccessLog* log = nullptr) {
  std::vector<double> monitor_acc;
  AdamState<T> adam;
  const AdamConfig opt{cfg.extra_lr, 0.9, 0.999, 1e-7};
  for (std::size_t epoch = 1; epoch <= cfg.extra_epochs_max; ++epoch) {
    const auto [tl, ta] = train_epoch(model, all_labeled, adam, opt, cfg.batch_size, rng, log);
    HistoryRow row{epoch, "extra", tl, std::nan(""), ta, std::nan("")};
    if (monitor) {
      const auto ev = evaluate(model, *monitor, log);
      row.val_loss = ev.loss;
      row.val_acc = ev.accuracy;
      monitor_acc.push_back(ev.accuracy);
    }
    history.push_back(row);
  }
  return monitor_acc;
}

// ---------------------------------------------------------------------------
// Cross-validated model selection

template <Real T>
struct FoldOutcome {
  std::size_t fold = 0;
  FitResult<T> fit;
};

// Index of the fold with the highest validation accuracy, ties broken by lower
// validation loss, then by lower fold index.
template <Real T>
std::size_t select_best_fold(const std::vector<FoldOutcome<T>>& folds) {
  if (folds.empty()) throw std::invalid_argument("select_best_fold: no folds");
  std::size_t best = 0;
  for (std::size_t i = 1; i < folds.size(); ++i) {
    const auto& a = folds[i].fit;
    const auto& b = folds[best].fit;
    if (a.best_val_acc > b.best_val_acc || (a.best_val_acc == b.best_val_acc && a.best_val_loss < b.best_val_loss))
      best = i;
  }
  return best;
}

// Runs the folds (in parallel up to cfg.threads). Each fold owns its model and RNG
// stream, so the outcome does not depend on the thread count. `init` builds the
// starting model for a fold.
template <Real T>
std::vector<FoldOutcome<T>> run_cv(const EpochSet& labeled, const TrainConfig& cfg, std::uint64_t stream,
                                   const std::function<ITNetModel<T>(std::size_t fold)>& init, AccessLog* log) {
  const auto folds = stratified_kfold(labeled.labels, cfg.folds, cfg.seed ^ (stream * 0x9E3779B97F4A7C15ull));
  const std::size_t runs = cfg.folds_to_run();
  std::vector<FoldOutcome<T>> out(runs);
  std::vector<std::exception_ptr> errors(runs);
  auto job = [&](std::size_t f) {
    try {
      std::vector<std::size_t> tr;
      for (std::size_t g = 0; g < folds.size(); ++g)
        if (g != f) tr.insert(tr.end(), folds[g].begin(), folds[g].end());
      std::sort(tr.begin(), tr.end());
      const auto train = labeled.subset(tr);
      const auto val = labeled.subset(folds[f]);
      auto model = init(f);
      Rng rng = derive_rng(cfg.seed, stream * 1000 + f + 1);
      out[f].fold = f;
      out[f].fit = fit_with_early_stopping(model, train, val, cfg, rng, log);
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };
  if (cfg.threads <= 1 || runs == 1) {
    for (std::size_t f = 0; f < runs; ++f) job(f);
  } else {
    for (std::size_t start = 0; start < runs; start += cfg.threads) {
      std::vector<std::thread> pool;
      for (std::size_t f = start; f < std::min(runs, start + cfg.threads); ++f) pool.emplace_back(job, f);
      for (auto& t : pool) t.join();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace itnet
