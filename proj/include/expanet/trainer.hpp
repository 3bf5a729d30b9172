#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "expanet/autodiff.hpp"
#include "expanet/connectivity.hpp"
#include "expanet/eeg_io.hpp"
#include "expanet/errors.hpp"
#include "expanet/model.hpp"

namespace expanet {

struct TrainConfig {
  int n_folds = 10;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 20;
  double val_fraction = 0.10;
  uint64_t seed = 42;
  bool shuffle_labels = false;  // null-model control: permute subject labels
  double threshold = 0.5;
};

struct FoldPlan {
  int n_folds = 0;
  uint64_t seed = 0;
  std::vector<std::vector<std::string>> train_subjects;
  std::vector<std::vector<std::string>> test_subjects;

  void validate() const {
    for (int f = 0; f < n_folds; ++f) {
      std::set<std::string> tr(train_subjects[f].begin(), train_subjects[f].end());
      for (const auto& s : test_subjects[f])
        if (tr.count(s))
          throw ConfigInvalid("fold plan: subject " + s + " in both splits of fold " +
                              std::to_string(f));
    }
  }
};

namespace detail {

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Stratified subject-level folds: per-class seeded shuffle, then round-robin
// assignment (second class runs in reverse so fold sizes stay within one).
inline FoldPlan make_folds(const std::vector<std::pair<std::string, Label>>& subjects,
                           int n_folds, uint64_t seed) {
  if (n_folds < 2) throw ConfigInvalid("make_folds: need at least 2 folds");
  if (static_cast<int>(subjects.size()) < n_folds)
    throw TooFewSubjects("make_folds: " + std::to_string(subjects.size()) +
                         " subjects for " + std::to_string(n_folds) + " folds");

  std::vector<std::string> hc, mdd;
  for (const auto& [id, label] : subjects)
    (label == Label::HC ? hc : mdd).push_back(id);
  std::sort(hc.begin(), hc.end());
  std::sort(mdd.begin(), mdd.end());
  std::mt19937_64 rng(detail::mix_seed(seed, 0xf01d));
  std::shuffle(hc.begin(), hc.end(), rng);
  std::shuffle(mdd.begin(), mdd.end(), rng);

  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.test_subjects.assign(n_folds, {});
  plan.train_subjects.assign(n_folds, {});
  for (size_t i = 0; i < hc.size(); ++i)
    plan.test_subjects[i % n_folds].push_back(hc[i]);
  for (size_t i = 0; i < mdd.size(); ++i)
    plan.test_subjects[n_folds - 1 - static_cast<int>(i % n_folds)].push_back(mdd[i]);

  for (int f = 0; f < n_folds; ++f) {
    std::set<std::string> test(plan.test_subjects[f].begin(),
                               plan.test_subjects[f].end());
    for (const auto& [id, label] : subjects) {
      (void)label;
      if (!test.count(id)) plan.train_subjects[f].push_back(id);
    }
    std::sort(plan.train_subjects[f].begin(), plan.train_subjects[f].end());
    std::sort(plan.test_subjects[f].begin(), plan.test_subjects[f].end());
  }
  plan.validate();
  return plan;
}

struct MetricsRow {
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;  // percent
  int tp = 0, fp = 0, tn = 0, fn = 0;
  bool undef_precision = false, undef_recall = false;
};

inline MetricsRow evaluate(const std::vector<double>& probs,
                           const std::vector<int>& labels, double threshold = 0.5) {
  if (probs.size() != labels.size())
    throw LengthMismatch("evaluate: probs and labels differ in length");
  MetricsRow m;
  for (size_t i = 0; i < probs.size(); ++i) {
    const int pred = probs[i] >= threshold ? 1 : 0;
    if (pred == 1 && labels[i] == 1) ++m.tp;
    else if (pred == 1 && labels[i] == 0) ++m.fp;
    else if (pred == 0 && labels[i] == 0) ++m.tn;
    else ++m.fn;
  }
  const int total = m.tp + m.fp + m.tn + m.fn;
  m.accuracy = total > 0 ? 100.0 * (m.tp + m.tn) / total : 0.0;
  if (m.tp + m.fp > 0) m.precision = 100.0 * m.tp / (m.tp + m.fp);
  else m.undef_precision = true;
  if (m.tp + m.fn > 0) m.recall = 100.0 * m.tp / (m.tp + m.fn);
  else m.undef_recall = true;
  if (m.precision + m.recall > 0.0)
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

struct MetricsTable {
  std::vector<MetricsRow> folds;
  MetricsRow mean;
  MetricsRow stdev;

  void finalize() {
    const int n = static_cast<int>(folds.size());
    if (n == 0) return;
    auto acc = [&](auto get) {
      double mu = 0.0;
      for (const auto& r : folds) mu += get(r);
      mu /= n;
      double var = 0.0;
      for (const auto& r : folds) var += (get(r) - mu) * (get(r) - mu);
      return std::make_pair(mu, std::sqrt(var / n));
    };
    auto [ma, sa] = acc([](const MetricsRow& r) { return r.accuracy; });
    auto [mp, sp] = acc([](const MetricsRow& r) { return r.precision; });
    auto [mr, sr] = acc([](const MetricsRow& r) { return r.recall; });
    auto [mf, sf] = acc([](const MetricsRow& r) { return r.f1; });
    mean.accuracy = ma; stdev.accuracy = sa;
    mean.precision = mp; stdev.precision = sp;
    mean.recall = mr; stdev.recall = sr;
    mean.f1 = mf; stdev.f1 = sf;
  }
};

// Continued-fraction evaluation of the regularized incomplete beta I_x(a,b),
// modified Lentz form.
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  auto cont_frac = [](double aa, double bb, double xx) {
    const double tiny = 1e-300;
    double c = 1.0;
    double d = 1.0 - (aa + bb) * xx / (aa + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
      const double m2 = 2.0 * m;
      double num = m * (bb - m) * xx / ((aa + m2 - 1.0) * (aa + m2));
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      num = -(aa + m) * (aa + bb + m) * xx / ((aa + m2) * (aa + m2 + 1.0));
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double delta = d * c;
      h *= delta;
      if (std::abs(delta - 1.0) < 1e-15) break;
    }
    return h;
  };
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(ln_front) * cont_frac(a, b, x) / a;
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                        b * std::log1p(-x) + a * std::log(x)) *
                   cont_frac(b, a, 1.0 - x) / b;
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int dof = 0;
  bool infinite_t = false;  // zero-variance nonzero differences
};

inline TTestResult paired_t_test(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.size() != b.size())
    throw LengthMismatch("paired_t_test: unequal lengths");
  const int n = static_cast<int>(a.size());
  if (n < 2) throw TooFewSubjects("paired_t_test: need at least 2 pairs");
  std::vector<double> d(n);
  bool all_zero = true;
  for (int i = 0; i < n; ++i) {
    d[i] = a[i] - b[i];
    if (d[i] != 0.0) all_zero = false;
  }
  if (all_zero)
    throw DegenerateDifferences("paired_t_test: every difference is zero");
  double mu = 0.0;
  for (double v : d) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : d) var += (v - mu) * (v - mu);
  var /= (n - 1);

  TTestResult r;
  r.dof = n - 1;
  if (var <= 0.0) {
    r.infinite_t = true;
    r.t = mu > 0.0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = mu / std::sqrt(var / n);
  const double nu = r.dof;
  r.p = incomplete_beta(nu / 2.0, 0.5, nu / (nu + r.t * r.t));
  return r;
}

struct FoldOutcome {
  ModelBundle bundle;
  MetricsRow test_metrics;
  int epochs_trained = 0;
  double best_val_loss = 0.0;
  std::vector<double> test_probs;    // aligned with test_graph_ids
  std::vector<int> test_labels;
  std::vector<size_t> test_graph_ids;  // indices into the full graph list
};

namespace detail {

struct PreparedGraph {
  const BrainGraph* g;
  GraphIndex gi;
  double y;
  size_t orig_index;
};

inline double eval_split_loss(const std::vector<PreparedGraph>& split,
                              const FeatureScaler& scaler, const ModelParams& params) {
  if (split.empty()) return 0.0;
  double total = 0.0;
  for (const auto& pg : split) {
    ad::Tape t;
    ParamVars pv = register_params(t, params, false);
    ad::Var logit = forward_logit(t, pv, t.input(scaler.apply(pg.g->x)),
                                  t.input(pg.gi.e), pg.gi, params.cfg);
    total += bce_scalar(t.value(logit)(0, 0), pg.y);
  }
  return total / split.size();
}

}  // namespace detail

// Train on one fold's subjects with an internal validation split for early
// stopping; returns the restored-best model and segment-level test metrics.
inline FoldOutcome train_fold(const std::vector<BrainGraph>& graphs,
                              const std::vector<std::string>& train_ids,
                              const std::vector<std::string>& test_ids,
                              const TrainConfig& cfg, const ModelConfig& model_cfg,
                              int top_k, uint64_t fold_salt,
                              const std::map<std::string, Label>* label_override = nullptr) {
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, fold_salt));

  auto label_of = [&](const BrainGraph& g) {
    if (label_override) return label_override->at(g.subject_id);
    return g.label;
  };

  // Validation split: last ~10% of each class's shuffled training subjects.
  std::vector<std::string> hc_train, mdd_train;
  {
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    std::set<std::string> seen;
    for (const BrainGraph& g : graphs) {
      if (!train_set.count(g.subject_id) || seen.count(g.subject_id)) continue;
      seen.insert(g.subject_id);
      (label_of(g) == Label::HC ? hc_train : mdd_train).push_back(g.subject_id);
    }
  }
  std::sort(hc_train.begin(), hc_train.end());
  std::sort(mdd_train.begin(), mdd_train.end());
  std::shuffle(hc_train.begin(), hc_train.end(), rng);
  std::shuffle(mdd_train.begin(), mdd_train.end(), rng);
  std::set<std::string> val_set;
  auto take_val = [&](std::vector<std::string>& ids) {
    if (ids.size() < 2) return;
    const int n_val = std::max(1, static_cast<int>(std::lround(cfg.val_fraction * ids.size())));
    for (int i = 0; i < n_val && static_cast<int>(ids.size()) - i > 1; ++i)
      val_set.insert(ids[ids.size() - 1 - i]);
  };
  take_val(hc_train);
  take_val(mdd_train);

  std::vector<detail::PreparedGraph> train, val, test;
  {
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    std::set<std::string> test_set(test_ids.begin(), test_ids.end());
    for (size_t i = 0; i < graphs.size(); ++i) {
      const BrainGraph& g = graphs[i];
      detail::PreparedGraph pg{&g, make_index(g),
                               label_of(g) == Label::MDD ? 1.0 : 0.0, i};
      if (test_set.count(g.subject_id)) test.push_back(std::move(pg));
      else if (val_set.count(g.subject_id)) val.push_back(std::move(pg));
      else if (train_set.count(g.subject_id)) train.push_back(std::move(pg));
    }
  }
  if (train.empty()) throw TooFewSubjects("train_fold: empty training split");

  FoldOutcome out;
  out.bundle.top_k = top_k;
  {
    std::vector<const Matrix*> feats;
    for (const auto& pg : train) feats.push_back(&pg.g->x);
    out.bundle.scaler = FeatureScaler::fit(feats);
  }
  const FeatureScaler& scaler = out.bundle.scaler;

  ModelParams params = ModelParams::init(model_cfg, detail::mix_seed(cfg.seed, fold_salt ^ 0xa11c));
  std::vector<Matrix> std_x;
  std_x.reserve(train.size());
  for (const auto& pg : train) std_x.push_back(scaler.apply(pg.g->x));

  std::vector<ad::AdamState> adam;
  {
    int count = 0;
    for_each_param(params, [&](const std::string&, Matrix&) { ++count; });
    adam.resize(count);
  }

  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      ad::Tape t;
      ParamVars pv = register_params(t, params, true);
      ForwardOptions opt;
      opt.training = true;
      opt.rng = &rng;
      ad::Var loss_sum;
      for (size_t k = start; k < end; ++k) {
        const auto& pg = train[order[k]];
        ad::Var logit = forward_logit(t, pv, t.input(std_x[order[k]]),
                                      t.input(pg.gi.e), pg.gi, model_cfg, opt);
        ad::Var li = t.bce_with_logit(logit, pg.y);
        loss_sum = loss_sum.valid() ? t.add(loss_sum, li) : li;
      }
      ad::Var loss = t.affine(loss_sum, 1.0 / static_cast<double>(end - start));
      const double loss_val = t.value(loss)(0, 0);
      if (!std::isfinite(loss_val))
        throw DivergedLoss("train_fold: loss is not finite at epoch " +
                           std::to_string(epoch));
      t.backward(loss);
      std::vector<Matrix> grads = collect_param_grads(t, pv);
      int slot = 0;
      for_each_param(params, [&](const std::string&, Matrix& m) {
        ad::adam_step(m, grads[slot], adam[slot], cfg.lr, cfg.beta1, cfg.beta2);
        ++slot;
      });
    }

    const auto& watch = val.empty() ? train : val;
    const double val_loss = detail::eval_split_loss(watch, scaler, params);
    if (val_loss < best_val - 1e-6) {
      best_val = val_loss;
      best = params;
      best_epoch = epoch;
    }
    out.epochs_trained = epoch;
    if (epoch - best_epoch >= cfg.patience) break;
  }

  out.bundle.params = best;
  out.best_val_loss = best_val;

  for (const auto& pg : test) {
    ad::Tape t;
    ParamVars pv = register_params(t, out.bundle.params, false);
    ad::Var logit = forward_logit(t, pv, t.input(scaler.apply(pg.g->x)),
                                  t.input(pg.gi.e), pg.gi, out.bundle.params.cfg);
    out.test_probs.push_back(1.0 / (1.0 + std::exp(-t.value(logit)(0, 0))));
    out.test_labels.push_back(pg.y > 0.5 ? 1 : 0);
    out.test_graph_ids.push_back(pg.orig_index);
  }
  out.test_metrics = evaluate(out.test_probs, out.test_labels, cfg.threshold);
  return out;
}

struct CvResult {
  FoldPlan plan;
  std::vector<FoldOutcome> folds;
  MetricsTable table;
  std::map<std::string, Label> labels_used;  // after any null-model shuffle
};

inline std::vector<std::pair<std::string, Label>> collect_subjects(
    const std::vector<BrainGraph>& graphs) {
  std::map<std::string, Label> m;
  for (const BrainGraph& g : graphs) {
    auto it = m.find(g.subject_id);
    if (it == m.end()) m[g.subject_id] = g.label;
    else if (it->second != g.label)
      throw ConfigInvalid("subject " + g.subject_id + " carries two labels");
  }
  return {m.begin(), m.end()};
}

inline CvResult run_cv(const std::vector<BrainGraph>& graphs, const TrainConfig& cfg,
                       const ModelConfig& model_cfg, int top_k) {
  auto subjects = collect_subjects(graphs);
  CvResult res;
  for (const auto& [id, label] : subjects) res.labels_used[id] = label;

  if (cfg.shuffle_labels) {
    std::vector<Label> labels;
    for (const auto& [id, label] : subjects) labels.push_back(label);
    std::mt19937_64 rng(detail::mix_seed(cfg.seed, 0x5bff1e));
    std::shuffle(labels.begin(), labels.end(), rng);
    size_t i = 0;
    for (auto& [id, label] : res.labels_used) label = labels[i++];
    for (size_t s = 0; s < subjects.size(); ++s)
      subjects[s].second = res.labels_used[subjects[s].first];
  }

  res.plan = make_folds(subjects, cfg.n_folds, cfg.seed);
  const std::map<std::string, Label>* override_ptr =
      cfg.shuffle_labels ? &res.labels_used : nullptr;
  for (int f = 0; f < cfg.n_folds; ++f) {
    res.folds.push_back(train_fold(graphs, res.plan.train_subjects[f],
                                   res.plan.test_subjects[f], cfg, model_cfg, top_k,
                                   static_cast<uint64_t>(f), override_ptr));
    res.table.folds.push_back(res.folds.back().test_metrics);
  }
  res.table.finalize();
  return res;
}

}  // namespace expanet
