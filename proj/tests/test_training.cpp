#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "itnet/scenario.hpp"
#include "itnet/synth.hpp"
#include "itnet/training.hpp"

using namespace itnet;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.n_channels = 4;
  a.n_samples = 64;
  a.n_classes = 2;
  a.branches = {{2, 8}, {2, 16}};
  a.tc_blocks = 2;
  a.dr_filters = 4;
  a.dropout_rate = 0.2;
  return a;
}

SynthSpec small_spec(std::uint64_t seed, std::size_t trials = 40) {
  SynthSpec s;
  s.n_trials = trials;
  s.n_channels = 4;
  s.n_classes = 2;
  s.fs = 64.0;
  s.duration_s = 1.0;
  s.noise_sigma = 0.5;
  s.seed = seed;
  s.class_sources = {{{8.0, 2.0, 2.0, {1.0, 0.0, 0.0, 0.0}}}, {{20.0, 2.0, 2.0, {0.0, 0.0, 0.0, 1.0}}}};
  return s;
}

TrainConfig quick_cfg() {
  TrainConfig c;
  c.max_epochs_cv = 4;
  c.patience = 2;
  c.extra_epochs_max = 2;
  c.folds = 4;
  c.fold_limit = 2;
  c.batch_size = 8;
  c.seed = 7;
  return c;
}

std::vector<SubjectData> cohort(std::size_t n) {
  std::vector<SubjectData> out;
  for (std::size_t i = 0; i < n; ++i) {
    SubjectData s;
    s.name = "subject0" + std::to_string(i + 1);
    s.train = synth_generate(small_spec(100 + i));
    s.test = synth_generate(small_spec(200 + i, 20));
    out.push_back(std::move(s));
  }
  return out;
}

bool same_state(const ModelState<float>& a, const ModelState<float>& b) {
  if (a.params.size() != b.params.size() || a.norms.size() != b.norms.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].values() != b.params[i].values()) return false;
  for (std::size_t i = 0; i < a.norms.size(); ++i) {
    if (a.norms[i].running_mean.values() != b.norms[i].running_mean.values() ||
        a.norms[i].running_var.values() != b.norms[i].running_var.values())
      return false;
  }
  return true;
}

}  // namespace

TEST(TrainConfig, DefaultsAndValidation) {
  const auto w = TrainConfig::within_defaults();
  EXPECT_EQ(w.max_epochs_cv, 500u);
  EXPECT_EQ(w.patience, 100u);
  EXPECT_EQ(w.extra_epochs_max, 50u);
  EXPECT_DOUBLE_EQ(w.extra_lr, 1e-4);
  EXPECT_DOUBLE_EQ(w.base_lr, 1e-3);
  EXPECT_EQ(w.batch_size, 16u);
  EXPECT_EQ(w.folds, 10u);
  const auto c = TrainConfig::cross_defaults();
  EXPECT_EQ(c.max_epochs_cv, 150u);
  EXPECT_EQ(c.patience, 15u);
  EXPECT_NO_THROW(w.validate());
  EXPECT_NO_THROW(c.validate());

  auto bad = w;
  bad.patience = bad.max_epochs_cv;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = w;
  bad.folds = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = w;
  bad.patience = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(TrainConfig, KeyValueRoundTrip) {
  TrainConfig c = quick_cfg();
  c.extra_lr = 3.5e-5;
  c.threads = 3;
  const auto kv = c.to_key_values();
  TrainConfig back;
  ConfigReader r(kv);
  back.read(r);
  EXPECT_TRUE(r.unused().empty());
  EXPECT_EQ(back, c);
}

TEST(StratifiedKFold, ExactDivisibility) {
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(static_cast<std::uint32_t>(i % 4));
  const auto folds = stratified_kfold(labels, 10, 3);
  ASSERT_EQ(folds.size(), 10u);
  for (const auto& f : folds) {
    ASSERT_EQ(f.size(), 4u);
    std::set<std::uint32_t> cls;
    for (auto i : f) cls.insert(labels[i]);
    EXPECT_EQ(cls.size(), 4u);
  }
}

TEST(StratifiedKFold, PartitionAndBalance) {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t k = 2 + rng() % 9;
    const std::size_t K = 2 + rng() % 4;
    std::vector<std::uint32_t> labels;
    std::vector<std::size_t> per_class(K);
    for (std::size_t c = 0; c < K; ++c) {
      per_class[c] = k + rng() % 30;
      for (std::size_t i = 0; i < per_class[c]; ++i) labels.push_back(static_cast<std::uint32_t>(c));
    }
    shuffle(labels, rng);
    const auto folds = stratified_kfold(labels, k, rng());
    std::vector<int> seen(labels.size(), 0);
    for (const auto& f : folds)
      for (auto i : f) ++seen[i];
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    for (const auto& f : folds) {
      for (std::size_t c = 0; c < K; ++c) {
        const auto n = std::count_if(f.begin(), f.end(), [&](std::size_t i) { return labels[i] == c; });
        const double ideal = static_cast<double>(per_class[c]) / static_cast<double>(k);
        EXPECT_LE(std::abs(static_cast<double>(n) - ideal), 1.0);
      }
    }
  }
}

TEST(StratifiedKFold, SeedDeterminism) {
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(static_cast<std::uint32_t>(i % 3));
  const auto a = stratified_kfold(labels, 5, 11);
  EXPECT_EQ(a, stratified_kfold(labels, 5, 11));
  const auto b = stratified_kfold(labels, 5, 12);
  EXPECT_NE(a, b);
  for (const auto& f : b) EXPECT_EQ(f.size(), 12u);
}

TEST(StratifiedKFold, SmallClassRejected) {
  std::vector<std::uint32_t> labels{0, 0, 0, 0, 1, 1};
  EXPECT_THROW(stratified_kfold(labels, 3, 1), std::invalid_argument);
  EXPECT_THROW(stratified_kfold(labels, 1, 1), std::invalid_argument);
}

TEST(Batches, TrailingSingletonMerged) {
  std::vector<std::size_t> order(33);
  std::iota(order.begin(), order.end(), 0);
  const auto b = make_batches(order, 16);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].size(), 16u);
  EXPECT_EQ(b[1].size(), 17u);
  order.push_back(33);
  const auto c = make_batches(order, 16);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[2].size(), 2u);
}

TEST(EarlyStopping, WorseningScheduleStopsAtSecondEpoch) {
  EarlyStopping es(1);
  EXPECT_TRUE(es.update(1, 1.0));
  EXPECT_FALSE(es.should_stop());
  EXPECT_FALSE(es.update(2, 1.5));
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 1u);
}

TEST(EarlyStopping, PatienceCountsStalls) {
  EarlyStopping es(3);
  const std::vector<double> losses{1.0, 0.9, 0.95, 0.9, 0.91, 0.5};
  std::size_t stopped = 0;
  for (std::size_t e = 0; e < losses.size() && !stopped; ++e) {
    es.update(e + 1, losses[e]);
    if (es.should_stop()) stopped = e + 1;
  }
  EXPECT_EQ(stopped, 5u);  // equal loss is not an improvement
  EXPECT_EQ(es.best_epoch(), 2u);
}

TEST(EarlyStopping, BestTraceNonIncreasing) {
  Rng rng(3);
  EarlyStopping es(1000);
  for (std::size_t e = 1; e <= 500; ++e) es.update(e, uniform01(rng));
  const auto& t = es.best_trace();
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LE(t[i], t[i - 1]);
}

TEST(Fit, RestoresBestCheckpointBitExact) {
  const auto data = synth_generate(small_spec(1, 48));
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < data.n_trials(); ++i) (i % 4 == 0 ? va : tr).push_back(i);
  const auto train = data.subset(tr), val = data.subset(va);
  auto model = ITNetModel<float>::build(small_arch(), 3);
  TrainConfig cfg = quick_cfg();
  cfg.max_epochs_cv = 6;
  cfg.patience = 5;
  std::vector<ModelState<float>> snapshots;
  Rng rng(9);
  const auto res = fit_with_early_stopping<float>(model, train, val, cfg, rng, nullptr,
                                                  [&](std::size_t, const ITNetModel<float>& m, const HistoryRow&) {
                                                    snapshots.push_back(m.state());
                                                  });
  ASSERT_EQ(res.history.size(), res.epochs_run);
  ASSERT_GE(res.best_epoch, 1u);
  EXPECT_TRUE(same_state(model.state(), snapshots[res.best_epoch - 1]));
  double best = INFINITY;
  for (const auto& h : res.history) {
    EXPECT_EQ(h.phase, "cv");
    EXPECT_TRUE(std::isfinite(h.train_loss) && std::isfinite(h.val_loss));
    EXPECT_GE(h.val_acc, 0.0);
    EXPECT_LE(h.val_acc, 1.0);
    best = std::min(best, h.val_loss);
  }
  EXPECT_EQ(res.best_val_loss, best);
  EXPECT_EQ(res.history[res.best_epoch - 1].val_loss, best);
}

TEST(Fit, StopsPatienceEpochsAfterBest) {
  const auto data = synth_generate(small_spec(2, 32));
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < data.n_trials(); ++i) (i % 4 == 0 ? va : tr).push_back(i);
  auto model = ITNetModel<float>::build(small_arch(), 4);
  TrainConfig cfg = quick_cfg();
  cfg.max_epochs_cv = 40;
  cfg.patience = 1;
  Rng rng(1);
  const auto res = fit_with_early_stopping<float>(model, data.subset(tr), data.subset(va), cfg, rng);
  EXPECT_TRUE(res.epochs_run == res.best_epoch + 1 || res.epochs_run == cfg.max_epochs_cv);
}

TEST(Fit, EmptyValidationRejected) {
  const auto data = synth_generate(small_spec(2, 16));
  auto model = ITNetModel<float>::build(small_arch(), 4);
  Rng rng(1);
  EXPECT_THROW(fit_with_early_stopping<float>(model, data, data.empty_like(), quick_cfg(), rng), std::invalid_argument);
}

TEST(Refit, ZeroEpochsLeavesModelUnchanged) {
  const auto data = synth_generate(small_spec(3, 16));
  auto model = ITNetModel<float>::build(small_arch(), 5);
  const auto before = model.state();
  TrainConfig cfg = quick_cfg();
  cfg.extra_epochs_max = 0;
  Rng rng(1);
  std::vector<HistoryRow> h;
  const auto acc = refit_extra_epochs(model, data, cfg, rng, h, &data);
  EXPECT_TRUE(acc.empty());
  EXPECT_TRUE(h.empty());
  EXPECT_TRUE(same_state(model.state(), before));
}

TEST(Refit, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = synth_generate(small_spec(3, 16));
  auto model = ITNetModel<float>::build(small_arch(), 5);
  const auto before = model.state();
  TrainConfig cfg = quick_cfg();
  cfg.extra_lr = 0.0;
  cfg.extra_epochs_max = 3;
  Rng rng(1);
  std::vector<HistoryRow> h{{1, "cv", 0.5, 0.5, 0.5, 0.5}};
  refit_extra_epochs(model, data, cfg, rng, h);
  for (std::size_t i = 0; i < before.params.size(); ++i) EXPECT_EQ(model.state().params[i].values(), before.params[i].values());
  ASSERT_EQ(h.size(), 4u);
  EXPECT_EQ(h[0].phase, "cv");
  for (std::size_t i = 1; i < h.size(); ++i) {
    EXPECT_EQ(h[i].phase, "extra");
    EXPECT_EQ(h[i].epoch, i);
    EXPECT_TRUE(std::isfinite(h[i].train_loss));
  }
}

TEST(FoldSelection, HighestAccuracyThenLowestLoss) {
  std::vector<FoldOutcome<float>> f(4);
  const double acc[] = {0.8, 0.9, 0.9, 0.7};
  const double loss[] = {0.1, 0.5, 0.4, 0.05};
  for (int i = 0; i < 4; ++i) {
    f[i].fold = i;
    f[i].fit.best_val_acc = acc[i];
    f[i].fit.best_val_loss = loss[i];
  }
  EXPECT_EQ(select_best_fold(f), 2u);
  f[2].fit.best_val_loss = 0.5;
  EXPECT_EQ(select_best_fold(f), 1u);
}

TEST(CrossValidation, ThreadCountDoesNotChangeResults) {
  const auto data = synth_generate(small_spec(4, 32));
  TrainConfig cfg = quick_cfg();
  cfg.fold_limit = 0;
  const auto arch = small_arch();
  auto init = [&](std::size_t f) { return ITNetModel<float>::build(arch, 10 + f); };
  const auto one = run_cv<float>(data, cfg, 1, init, nullptr);
  cfg.threads = 3;
  const auto many = run_cv<float>(data, cfg, 1, init, nullptr);
  ASSERT_EQ(one.size(), 4u);
  ASSERT_EQ(many.size(), 4u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].fit.epochs_run, many[i].fit.epochs_run);
    EXPECT_EQ(one[i].fit.best_val_loss, many[i].fit.best_val_loss);
    EXPECT_TRUE(same_state(one[i].fit.best_state, many[i].fit.best_state));
  }
}

TEST(Scenario, WithinSingleSubject) {
  auto subjects = cohort(1);
  AccessLog log;
  const auto r = run_scenario(Scenario::Within, subjects, small_arch(), quick_cfg(), &log);
  ASSERT_EQ(r.subjects.size(), 1u);
  const auto& s = r.subjects[0];
  EXPECT_GE(s.accuracy, 0.0);
  EXPECT_LE(s.accuracy, 100.0);
  EXPECT_GE(s.accuracy_best_epoch, s.accuracy - 1e-12);
  EXPECT_TRUE(s.model.has_value());
  EXPECT_EQ(s.history.size(), s.epochs_run + quick_cfg().extra_epochs_max);
  EXPECT_DOUBLE_EQ(r.mean, s.accuracy);
  EXPECT_EQ(r.stddev, 0.0);
  EXPECT_THROW(run_scenario(Scenario::Cross, subjects, small_arch(), quick_cfg()), std::invalid_argument);
  EXPECT_GT(log.count(Access::Update, "subject01.train"), 0u);
  EXPECT_GT(log.count(Access::Stats, "subject01.train"), 0u);
  EXPECT_EQ(log.count_matching(Access::Update, ".test"), 0u);
  EXPECT_EQ(log.count_matching(Access::Stats, ".test"), 0u);
  EXPECT_GT(log.count(Access::Eval, "subject01.test"), 0u);
}

TEST(Scenario, CrossNeverTouchesTarget) {
  auto subjects = cohort(3);
  AccessLog log;
  const auto r = run_scenario(Scenario::Cross, subjects, small_arch(), quick_cfg(), &log, {0});
  ASSERT_EQ(r.subjects.size(), 1u);
  EXPECT_EQ(log.count_matching(Access::Update, "subject01"), 0u);
  EXPECT_EQ(log.count_matching(Access::Stats, "subject01"), 0u);
  EXPECT_GT(log.count_matching(Access::Update, "subject02.train"), 0u);
  EXPECT_GT(log.count_matching(Access::Update, "subject03.train"), 0u);
  EXPECT_EQ(r.subjects[0].pool.size(), 2u);

  // Replacing the target's training session leaves the cross model unchanged.
  auto altered = subjects;
  altered[0].train = synth_generate(small_spec(999, 24));
  const auto r2 = run_scenario(Scenario::Cross, altered, small_arch(), quick_cfg(), nullptr, {0});
  EXPECT_TRUE(same_state(r.subjects[0].model->state(), r2.subjects[0].model->state()));
  EXPECT_EQ(r.subjects[0].accuracy, r2.subjects[0].accuracy);
}

TEST(Scenario, FinetunedStartsFromCrossModel) {
  auto subjects = cohort(2);
  AccessLog log;
  const auto r = run_scenario(Scenario::CrossFinetuned, subjects, small_arch(), quick_cfg(), &log, {1});
  ASSERT_EQ(r.subjects.size(), 1u);
  const auto cross = run_scenario(Scenario::Cross, subjects, small_arch(), quick_cfg(), nullptr, {1});
  EXPECT_EQ(r.subjects[0].cross_accuracy, cross.subjects[0].accuracy);
  EXPECT_GT(log.count(Access::Update, "subject02.train"), 0u);
  EXPECT_EQ(log.count_matching(Access::Update, ".test"), 0u);
  EXPECT_EQ(log.count_matching(Access::Stats, ".test"), 0u);
  // Fine-tuning standardizes with the pool's statistics, not the target's.
  EXPECT_EQ(log.count(Access::Stats, "subject02.train"), 0u);
  EXPECT_EQ(r.subjects[0].pool.back(), "subject02.train:40");
}

TEST(Scenario, LabelSpaceMismatchRejected) {
  auto subjects = cohort(2);
  subjects[1].test.class_names = {"left", "right"};
  EXPECT_THROW(run_scenario(Scenario::Cross, subjects, small_arch(), quick_cfg()), std::invalid_argument);
  auto arch = small_arch();
  arch.n_channels = 5;
  EXPECT_THROW(run_scenario(Scenario::Within, cohort(1), arch, quick_cfg()), std::invalid_argument);
}

TEST(Scenario, DeterministicAndConsistentReport) {
  auto subjects = cohort(2);
  const auto a = run_scenario(Scenario::Within, subjects, small_arch(), quick_cfg());
  const auto b = run_scenario(Scenario::Within, subjects, small_arch(), quick_cfg());
  EXPECT_EQ(accuracy_csv(a), accuracy_csv(b));
  const auto acc = a.accuracies();
  EXPECT_NEAR(a.mean, (acc[0] + acc[1]) / 2.0, 1e-9);
  EXPECT_NEAR(a.stddev, std::abs(acc[0] - acc[1]) / std::sqrt(2.0), 1e-9);
  for (double v : acc) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST(Reports, CsvAndJsonLayouts) {
  ScenarioReport r;
  r.scenario = Scenario::Cross;
  SubjectResult s;
  s.subject = "subject01";
  s.accuracy = 75.5;
  s.accuracy_best_epoch = 80.0;
  s.pool = {"subject02.train:40"};
  s.history = {{1, "cv", 0.7, 0.69, 0.5, 0.55}, {1, "extra", 0.6, NAN, 0.6, NAN}};
  r.subjects.push_back(s);
  s.subject = "subject02";
  s.accuracy = 62.25;
  r.subjects.push_back(s);
  finalize_report(r);

  const auto csv = accuracy_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "subject,accuracy,accuracy_best_epoch,cross_accuracy,selected_fold,epochs_run,best_epoch");
  EXPECT_NE(csv.find("subject01,75.5,80,,0,0,0"), std::string::npos);
  EXPECT_EQ(history_csv(s.history), "epoch,phase,train_loss,val_loss,train_acc,val_acc\n1,cv,0.7,0.69,0.5,0.55\n1,extra,0.6,,0.6,\n");
  EXPECT_EQ(summary_jsonl(r),
            "{\"subject\":\"subject01\",\"scenario\":\"cross\",\"accuracy\":75.5}\n"
            "{\"subject\":\"subject02\",\"scenario\":\"cross\",\"accuracy\":62.25}\n");
  const auto kv = report_key_values(r);
  EXPECT_EQ(kv.at("accuracy.headline"), "final-epoch");
  EXPECT_NE(kv.at("standardization").find("epoched"), std::string::npos);
  EXPECT_EQ(kv.at("subject.subject01.pool"), "subject02.train:40");

  const auto dir = std::filesystem::temp_directory_path() / "itnet_test_reports";
  std::filesystem::create_directories(dir);
  const auto path = dir / "acc.csv";
  std::ofstream(path) << csv;
  const auto back = read_accuracy_column(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], 75.5);
  EXPECT_EQ(back[1], 62.25);
  EXPECT_EQ(read_accuracy_column(path, "accuracy_best_epoch")[0], 80.0);
  EXPECT_THROW(read_accuracy_column(path, "nope"), FormatException);
  EXPECT_THROW(read_accuracy_column(dir / "missing.csv"), FormatException);
  std::filesystem::remove_all(dir);
}

TEST(Scenario, ParseNames) {
  EXPECT_EQ(parse_scenario("within"), Scenario::Within);
  EXPECT_EQ(parse_scenario("cross"), Scenario::Cross);
  EXPECT_EQ(parse_scenario("cross-ft"), Scenario::CrossFinetuned);
  EXPECT_EQ(scenario_name(Scenario::CrossFinetuned), "cross_finetuned");
  EXPECT_THROW(parse_scenario("loso"), std::invalid_argument);
}
