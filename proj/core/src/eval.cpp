#include "emutriage/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "emutriage/error.hpp"
#include "emutriage/ingest.hpp"
#include "emutriage/io.hpp"
#include "emutriage/parallel.hpp"
#include "json_util.hpp"

namespace emutriage {

using detail::Json;

std::string_view to_string(Protocol protocol) noexcept {
  switch (protocol) {
    case Protocol::binary_full: return "binary_full";
    case Protocol::binary_balanced: return "binary_balanced";
    case Protocol::multiclass: return "multiclass";
  }
  return "binary_full";
}

Protocol parse_protocol(std::string_view text) {
  std::string t(text);
  std::replace(t.begin(), t.end(), '-', '_');
  if (t == "binary_full") return Protocol::binary_full;
  if (t == "binary_balanced") return Protocol::binary_balanced;
  if (t == "multiclass") return Protocol::multiclass;
  throw Error(ErrorCode::ConfigError, "unknown protocol '" + std::string(text) + "'");
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "rf") return ModelKind::rf;
  if (text == "gbt") return ModelKind::gbt;
  if (text == "knn") return ModelKind::knn;
  throw Error(ErrorCode::ConfigError, "unknown model '" + std::string(text) + "'");
}

std::vector<ModelKind> ExperimentConfig::effective_models() const {
  if (!models.empty()) return models;
  if (protocol == Protocol::multiclass) return {ModelKind::rf};
  return {ModelKind::rf, ModelKind::gbt, ModelKind::knn};
}

void ExperimentConfig::validate() const {
  if (folds < 2) throw Error(ErrorCode::ConfigError, "folds must be >= 2");
  if (repeats < 1) throw Error(ErrorCode::ConfigError, "repeats must be >= 1");
  if (protocol == Protocol::multiclass && (family_threshold == 0 || sample_per_family == 0)) {
    throw Error(ErrorCode::ConfigError, "family_threshold and sample_per_family must be positive");
  }
  if (gbt.subsample <= 0.0 || gbt.subsample > 1.0) throw Error(ErrorCode::ConfigError, "gbt.subsample must be in (0,1]");
  if (rf.n_estimators == 0 || rf.max_depth == 0 || gbt.max_depth == 0) {
    throw Error(ErrorCode::ConfigError, "tree counts and depths must be positive");
  }
  if (knn.n_neighbors == 0) throw Error(ErrorCode::ConfigError, "knn.n_neighbors must be positive");
}

// ---------------------------------------------------------------------------
// Config JSON

ExperimentConfig experiment_config_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  ExperimentConfig c;
  try {
    if (j.contains("protocol")) c.protocol = parse_protocol(j.at("protocol").get<std::string>());
    c.folds = j.value("folds", c.folds);
    c.repeats = j.value("repeats", c.repeats);
    c.family_threshold = j.value("family_threshold", c.family_threshold);
    c.sample_per_family = j.value("sample_per_family", c.sample_per_family);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("models")) {
      for (const auto& m : j.at("models")) c.models.push_back(parse_model_kind(m.get<std::string>()));
    }
    if (j.contains("rf")) {
      const auto& r = j.at("rf");
      c.rf.n_estimators = r.value("n_estimators", c.rf.n_estimators);
      c.rf.max_depth = r.value("max_depth", c.rf.max_depth);
      c.rf.features_per_split = r.value("features_per_split", c.rf.features_per_split);
      c.rf.bootstrap = r.value("bootstrap", c.rf.bootstrap);
    }
    if (j.contains("gbt")) {
      const auto& g = j.at("gbt");
      c.gbt.learning_rate = g.value("learning_rate", c.gbt.learning_rate);
      c.gbt.max_depth = g.value("max_depth", c.gbt.max_depth);
      c.gbt.subsample = g.value("subsample", c.gbt.subsample);
      c.gbt.n_rounds = g.value("n_rounds", c.gbt.n_rounds);
      c.gbt.reg_lambda = g.value("reg_lambda", c.gbt.reg_lambda);
      c.gbt.min_child_weight = g.value("min_child_weight", c.gbt.min_child_weight);
    }
    if (j.contains("knn")) {
      const auto& k = j.at("knn");
      c.knn.n_neighbors = k.value("n_neighbors", c.knn.n_neighbors);
      const auto w = k.value("weighting", std::string("distance"));
      if (w != "distance" && w != "uniform") throw Error(ErrorCode::ConfigError, "knn.weighting must be distance|uniform");
      c.knn.weighting = w == "uniform" ? KnnWeighting::uniform : KnnWeighting::distance;
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  Json j;
  j["protocol"] = to_string(c.protocol);
  j["folds"] = c.folds;
  j["repeats"] = c.repeats;
  j["family_threshold"] = c.family_threshold;
  j["sample_per_family"] = c.sample_per_family;
  j["seed"] = c.seed;
  auto models = Json::array();
  for (auto m : c.effective_models()) models.push_back(to_string(m));
  j["models"] = std::move(models);
  j["rf"] = {{"n_estimators", c.rf.n_estimators},
             {"max_depth", c.rf.max_depth},
             {"features_per_split", c.rf.features_per_split},
             {"bootstrap", c.rf.bootstrap}};
  j["gbt"] = {{"learning_rate", c.gbt.learning_rate}, {"max_depth", c.gbt.max_depth},
              {"subsample", c.gbt.subsample},         {"n_rounds", c.gbt.n_rounds},
              {"reg_lambda", c.gbt.reg_lambda},       {"min_child_weight", c.gbt.min_child_weight}};
  j["knn"] = {{"n_neighbors", c.knn.n_neighbors},
              {"weighting", c.knn.weighting == KnnWeighting::uniform ? "uniform" : "distance"}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Metrics

ClassificationReport classification_report(std::span<const std::uint32_t> y_true, std::span<const std::uint32_t> y_pred,
                                           std::size_t n_classes) {
  const auto cm = confusion_matrix(y_true, y_pred, n_classes);
  ClassificationReport out;
  out.per_class.resize(n_classes);
  std::uint64_t correct = 0;
  std::size_t seen = 0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    std::uint64_t predicted = 0;
    std::uint64_t support = 0;
    for (std::size_t i = 0; i < n_classes; ++i) {
      predicted += cm[i][k];
      support += cm[k][i];
    }
    const auto tp = cm[k][k];
    correct += tp;
    auto& m = out.per_class[k];
    m.support = support;
    m.absent = support == 0;
    m.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    m.recall = support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(support);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (support > 0 || predicted > 0) {
      ++seen;
      out.macro.precision += m.precision;
      out.macro.recall += m.recall;
      out.macro.f1 += m.f1;
    }
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(y_true.size());
  out.micro = {accuracy, accuracy, accuracy, y_true.size(), false};
  out.macro.precision /= static_cast<double>(seen);
  out.macro.recall /= static_cast<double>(seen);
  out.macro.f1 /= static_cast<double>(seen);
  out.macro.support = y_true.size();
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> y_true, std::span<const std::uint32_t> y_pred,
                                 std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) throw Error(ErrorCode::LengthMismatch, "y_true vs y_pred");
  if (y_true.empty()) throw Error(ErrorCode::EmptyMatrix, "no labels to score");
  ConfusionMatrix cm(n_classes, std::vector<std::uint64_t>(n_classes, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= n_classes || y_pred[i] >= n_classes) {
      throw Error(ErrorCode::LengthMismatch, "class id outside the class table");
    }
    ++cm[y_true[i]][y_pred[i]];
  }
  return cm;
}

Folds stratified_kfold(std::span<const std::uint32_t> labels, std::size_t k, Rng& rng) {
  if (k < 2) throw Error(ErrorCode::ConfigError, "k must be >= 2");
  if (k > labels.size()) {
    throw Error(ErrorCode::KTooLarge, std::to_string(k) + " folds for " + std::to_string(labels.size()) + " rows");
  }
  const std::uint32_t n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t r = 0; r < labels.size(); ++r) members[labels[r]].push_back(r);

  Folds folds;
  folds.test.resize(k);
  std::size_t position = 0;
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    auto& group = members[c];
    if (group.empty()) continue;
    if (group.size() < k) {
      folds.warnings.push_back("class " + std::to_string(c) + " has " + std::to_string(group.size()) +
                               " rows for " + std::to_string(k) + " folds");
    }
    rng.shuffle(std::span<std::size_t>(group));
    for (auto r : group) folds.test[position++ % k].push_back(r);
  }
  for (auto& f : folds.test) std::sort(f.begin(), f.end());
  return folds;
}

// ---------------------------------------------------------------------------
// Cross-validation engine

namespace {

struct RepeatPlan {
  std::vector<std::size_t> rows;  // matrix row ids in this repeat's dataset
  Folds folds;                     // indices into `rows`
};

struct FoldOutcome {
  ClassificationReport report;
  ConfusionMatrix confusion;
};

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

ClassSummary summarize_class(std::string name, const std::vector<const ClassMetrics*>& metrics) {
  std::vector<double> p, r, f, support;
  for (const auto* m : metrics) {
    p.push_back(m->precision);
    r.push_back(m->recall);
    f.push_back(m->f1);
    support.push_back(static_cast<double>(m->support));
  }
  return {std::move(name), summarize(p), summarize(r), summarize(f), summarize(support).mean};
}

TrainedModel fit_one(ModelKind kind, const SparseMatrix& x, const LabelVector& y, const ExperimentConfig& config,
                     std::uint64_t seed, std::vector<std::string>& warnings) {
  switch (kind) {
    case ModelKind::rf: {
      auto p = config.rf;
      p.seed = seed;
      p.jobs = 1;
      return fit_random_forest(x, y, p);
    }
    case ModelKind::gbt: {
      auto p = config.gbt;
      p.seed = seed;
      p.jobs = 1;
      return fit_gbt(x, y, p);
    }
    case ModelKind::knn: {
      auto p = config.knn;
      p.jobs = 1;
      if (x.n_rows() < p.n_neighbors) {
        warnings.push_back("knn: n_neighbors clamped to " + std::to_string(x.n_rows()) + " training rows");
        p.n_neighbors = x.n_rows();
      }
      return fit_knn(x, y, p);
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown model");
}

EvalReport cross_validate(const SparseMatrix& x, const std::vector<std::uint32_t>& y, std::vector<std::string> classes,
                          std::vector<RepeatPlan> plans, const ExperimentConfig& config, const CycleObserver& observer,
                          std::vector<std::string> warnings) {
  const auto models = config.effective_models();
  const std::size_t n_classes = classes.size();
  const std::size_t n_tasks = plans.size() * config.folds;

  std::vector<std::vector<FoldOutcome>> outcomes(n_tasks, std::vector<FoldOutcome>(models.size()));
  std::vector<std::vector<std::string>> task_warnings(n_tasks);

  parallel_for(n_tasks, config.jobs, [&](std::size_t task) {
    const std::size_t r = task / config.folds;
    const std::size_t f = task % config.folds;
    const auto& plan = plans[r];
    std::vector<char> in_test(plan.rows.size(), 0);
    for (auto i : plan.folds.test[f]) in_test[i] = 1;
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < plan.rows.size(); ++i) (in_test[i] ? test : train).push_back(plan.rows[i]);

    const SparseMatrix x_train = x.select_rows(train);
    const SparseMatrix x_test = x.select_rows(test);
    LabelVector y_train;
    y_train.names = classes;
    for (auto row : train) y_train.ids.push_back(y[row]);
    std::vector<std::uint32_t> y_test;
    for (auto row : test) y_test.push_back(y[row]);

    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto seed = derive_seed(config.seed, 0x3000 + static_cast<std::uint64_t>(models[m]), task);
      const auto model = fit_one(models[m], x_train, y_train, config, seed, task_warnings[task]);
      const auto y_pred = predict(model, x_test);
      outcomes[task][m] = {classification_report(y_test, y_pred, n_classes), confusion_matrix(y_test, y_pred, n_classes)};
      if (observer) observer(CycleInfo{models[m], r, f, train, test});
    }
  });

  EvalReport report;
  report.protocol = config.protocol;
  report.folds = config.folds;
  report.repeats = plans.size();
  report.classes = classes;
  for (const auto& plan : plans) {
    report.draw_sizes.push_back(plan.rows.size());
    for (const auto& w : plan.folds.warnings) {
      if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(w);
    }
  }
  for (auto& tw : task_warnings) {
    for (auto& w : tw) {
      if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(std::move(w));
    }
  }
  report.warnings = std::move(warnings);

  for (std::size_t m = 0; m < models.size(); ++m) {
    ModelReport mr;
    mr.model = models[m];
    mr.evaluations = n_tasks;
    mr.confusion_sum.assign(n_classes, std::vector<std::uint64_t>(n_classes, 0));
    std::vector<const ClassMetrics*> micro, macro;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const auto& o = outcomes[t][m];
      micro.push_back(&o.report.micro);
      macro.push_back(&o.report.macro);
      for (std::size_t i = 0; i < n_classes; ++i) {
        for (std::size_t j = 0; j < n_classes; ++j) mr.confusion_sum[i][j] += o.confusion[i][j];
      }
    }
    for (std::size_t k = 0; k < n_classes; ++k) {
      std::vector<const ClassMetrics*> per;
      for (std::size_t t = 0; t < n_tasks; ++t) per.push_back(&outcomes[t][m].report.per_class[k]);
      mr.per_class.push_back(summarize_class(classes[k], per));
    }
    if (config.protocol == Protocol::multiclass) {
      std::stable_sort(mr.per_class.begin(), mr.per_class.end(),
                       [](const ClassSummary& a, const ClassSummary& b) { return a.f1.mean > b.f1.mean; });
    }
    mr.micro = summarize_class("micro", micro);
    mr.macro = summarize_class("macro", macro);
    mr.confusion_mean.assign(n_classes, std::vector<double>(n_classes, 0.0));
    for (std::size_t i = 0; i < n_classes; ++i) {
      for (std::size_t j = 0; j < n_classes; ++j) {
        mr.confusion_mean[i][j] = static_cast<double>(mr.confusion_sum[i][j]) / static_cast<double>(plans.size());
      }
    }
    report.models.push_back(std::move(mr));
  }
  return report;
}

struct BinaryClasses {
  std::uint32_t benign;
  std::uint32_t malicious;
};

BinaryClasses binary_classes(const SparseMatrix& x, const LabelVector& labels) {
  if (x.n_rows() == 0) throw Error(ErrorCode::EmptyMatrix, "no rows to evaluate");
  if (labels.size() != x.n_rows()) throw Error(ErrorCode::LengthMismatch, "labels vs rows");
  const auto find = [&](std::string_view name) {
    const auto it = std::find(labels.names.begin(), labels.names.end(), name);
    if (it == labels.names.end()) throw Error(ErrorCode::SingleClass, "no '" + std::string(name) + "' class");
    return static_cast<std::uint32_t>(it - labels.names.begin());
  };
  if (labels.n_classes() > 2) throw Error(ErrorCode::SchemaViolation, "binary protocols take two classes");
  BinaryClasses c{find(to_string(SampleClass::benign)), find(to_string(SampleClass::malicious))};
  std::size_t benign = 0;
  for (auto id : labels.ids) benign += id == c.benign;
  if (benign == 0 || benign == labels.size()) throw Error(ErrorCode::SingleClass, "binary protocol");
  return c;
}

std::vector<std::uint32_t> subset_labels(const std::vector<std::uint32_t>& y, const std::vector<std::size_t>& rows) {
  std::vector<std::uint32_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(y[r]);
  return out;
}

}  // namespace

EvalReport run_binary_full(const SparseMatrix& x, const LabelVector& labels, const ExperimentConfig& config,
                           const CycleObserver& observer) {
  config.validate();
  binary_classes(x, labels);
  std::vector<RepeatPlan> plans(config.repeats);
  std::vector<std::size_t> all(x.n_rows());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t r = 0; r < config.repeats; ++r) {
    Rng rng(derive_seed(config.seed, 0xe7a1, r));
    plans[r].rows = all;
    plans[r].folds = stratified_kfold(labels.ids, config.folds, rng);
  }
  return cross_validate(x, labels.ids, labels.names, std::move(plans), config, observer, {});
}

EvalReport run_binary_balanced(const SparseMatrix& x, const LabelVector& labels, const ExperimentConfig& config,
                               const CycleObserver& observer) {
  config.validate();
  const auto cls = binary_classes(x, labels);
  std::vector<std::size_t> benign, malicious;
  for (std::size_t r = 0; r < labels.size(); ++r) (labels.ids[r] == cls.benign ? benign : malicious).push_back(r);
  if (malicious.size() < benign.size()) {
    throw Error(ErrorCode::InsufficientMalicious,
                std::to_string(malicious.size()) + " malicious for " + std::to_string(benign.size()) + " benign");
  }
  std::vector<RepeatPlan> plans(config.repeats);
  for (std::size_t r = 0; r < config.repeats; ++r) {
    Rng rng(derive_seed(config.seed, 0xe7a1, r));
    auto pool = malicious;
    rng.shuffle(std::span<std::size_t>(pool));
    pool.resize(benign.size());
    auto& rows = plans[r].rows;
    rows = benign;
    rows.insert(rows.end(), pool.begin(), pool.end());
    std::sort(rows.begin(), rows.end());
    plans[r].folds = stratified_kfold(subset_labels(labels.ids, rows), config.folds, rng);
  }
  return cross_validate(x, labels.ids, labels.names, std::move(plans), config, observer, {});
}

EvalReport run_multiclass(const SparseMatrix& x, std::span<const std::string> families, const ExperimentConfig& config,
                          const CycleObserver& observer) {
  config.validate();
  if (families.size() != x.n_rows()) throw Error(ErrorCode::LengthMismatch, "families vs rows");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < families.size(); ++r) {
    if (families[r] == kBenignFamily || families[r] == kUnknownFamily || families[r].empty()) continue;
    members[families[r]].push_back(r);
  }
  std::vector<std::string> classes;
  std::vector<std::string> warnings;
  for (const auto& [name, rows] : members) {
    if (rows.size() >= config.family_threshold) classes.push_back(name);
  }
  if (classes.size() < 2) {
    throw Error(ErrorCode::NoEligibleFamilies, std::to_string(classes.size()) + " families with >= " +
                                                   std::to_string(config.family_threshold) + " samples");
  }
  std::vector<std::uint32_t> y(x.n_rows(), 0);
  for (std::uint32_t c = 0; c < classes.size(); ++c) {
    const auto& rows = members[classes[c]];
    for (auto r : rows) y[r] = c;
    if (rows.size() < config.sample_per_family) {
      warnings.push_back(classes[c] + ": only " + std::to_string(rows.size()) + " samples");
    }
  }

  std::vector<RepeatPlan> plans(config.repeats);
  for (std::size_t r = 0; r < config.repeats; ++r) {
    Rng rng(derive_seed(config.seed, 0xe7a1, r));
    auto& rows = plans[r].rows;
    for (const auto& name : classes) {
      auto pool = members[name];
      rng.shuffle(std::span<std::size_t>(pool));
      pool.resize(std::min(pool.size(), config.sample_per_family));
      rows.insert(rows.end(), pool.begin(), pool.end());
    }
    std::sort(rows.begin(), rows.end());
    plans[r].folds = stratified_kfold(subset_labels(y, rows), config.folds, rng);
  }
  return cross_validate(x, y, std::move(classes), std::move(plans), config, observer, std::move(warnings));
}

// ---------------------------------------------------------------------------
// Report JSON / CSV

namespace {

Json summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.stddev}}; }

Summary summary_from(const Json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

Json class_json(const ClassSummary& c) {
  return {{"class", c.name},
          {"precision", summary_json(c.precision)},
          {"recall", summary_json(c.recall)},
          {"f1", summary_json(c.f1)},
          {"support", c.support}};
}

ClassSummary class_from(const Json& j) {
  return {j.at("class").get<std::string>(), summary_from(j.at("precision")), summary_from(j.at("recall")),
          summary_from(j.at("f1")), j.at("support").get<double>()};
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report, const Provenance& provenance) {
  Json j;
  j["provenance"] = detail::to_json(provenance);
  j["protocol"] = to_string(report.protocol);
  j["folds"] = report.folds;
  j["repeats"] = report.repeats;
  j["classes"] = report.classes;
  j["draw_sizes"] = report.draw_sizes;
  j["warnings"] = report.warnings;
  auto models = Json::array();
  for (const auto& m : report.models) {
    Json mj;
    mj["model"] = to_string(m.model);
    mj["evaluations"] = m.evaluations;
    auto per = Json::array();
    for (const auto& c : m.per_class) per.push_back(class_json(c));
    mj["per_class"] = std::move(per);
    mj["micro"] = class_json(m.micro);
    mj["macro"] = class_json(m.macro);
    mj["confusion_sum"] = m.confusion_sum;
    mj["confusion_mean"] = m.confusion_mean;
    models.push_back(std::move(mj));
  }
  j["models"] = std::move(models);
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  try {
    EvalReport r;
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    r.folds = j.at("folds").get<std::size_t>();
    r.repeats = j.at("repeats").get<std::size_t>();
    r.classes = j.at("classes").get<std::vector<std::string>>();
    r.draw_sizes = j.value("draw_sizes", std::vector<std::size_t>{});
    r.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& mj : j.at("models")) {
      ModelReport m;
      m.model = parse_model_kind(mj.at("model").get<std::string>());
      m.evaluations = mj.at("evaluations").get<std::size_t>();
      for (const auto& c : mj.at("per_class")) m.per_class.push_back(class_from(c));
      m.micro = class_from(mj.at("micro"));
      m.macro = class_from(mj.at("macro"));
      m.confusion_sum = mj.at("confusion_sum").get<ConfusionMatrix>();
      m.confusion_mean = mj.at("confusion_mean").get<std::vector<std::vector<double>>>();
      const auto n = r.classes.size();
      if (m.confusion_sum.size() != n || m.confusion_mean.size() != n) {
        throw Error(ErrorCode::SchemaViolation, "confusion matrix does not match class table");
      }
      r.models.push_back(std::move(m));
    }
    return r;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("eval report: ") + e.what());
  }
}

std::string confusion_to_csv(const std::vector<std::string>& classes, const ConfusionMatrix& matrix) {
  std::string out = "true\\pred";
  for (const auto& c : classes) out += "," + csv_escape(c);
  out += "\n";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    out += csv_escape(classes[i]);
    for (auto v : matrix[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

}  // namespace emutriage
