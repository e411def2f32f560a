#include "emutriage/pipeline.hpp"

#include <algorithm>
#include <map>

#include "emutriage/cluster.hpp"
#include "emutriage/digest.hpp"
#include "emutriage/io.hpp"
#include "emutriage/parallel.hpp"
#include "emutriage/pe_static.hpp"
#include "json_util.hpp"

namespace emutriage {

namespace fs = std::filesystem;
using detail::Json;

namespace {

Json boruta_json(const BorutaParams& p) {
  return {{"learning_rate", p.learning_rate}, {"max_iter", p.max_iter},   {"max_depth", p.max_depth},
          {"perc", p.perc},                   {"alpha", p.alpha},         {"n_rounds", p.n_rounds},
          {"sample_fraction", p.sample_fraction}};
}

Json experiment_json(const ExperimentConfig& c) { return Json::parse(experiment_config_to_json(c)); }

Json cluster_json(const PipelineConfig& c) {
  Json j{{"enabled", c.cluster}, {"k", c.cluster_settings.k}};
  if (c.cluster_settings.sweep) {
    j["sweep"] = Json::array({c.cluster_settings.sweep->first, c.cluster_settings.sweep->second});
  } else {
    j["sweep"] = nullptr;
  }
  return j;
}

Json canonical_config(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["strict"] = c.strict;
  if (c.synth) {
    j["synth_spec"] = Json::parse(synth_spec_to_json(*c.synth));
  } else {
    j["manifest"] = c.manifest.generic_string();
    j["reports"] = c.reports.generic_string();
  }
  j["aliases"] = c.aliases ? Json(c.aliases->generic_string()) : Json(nullptr);
  j["select"] = {{"enabled", c.select}, {"keep_tentative", c.keep_tentative}, {"params", boruta_json(c.boruta)}};
  auto experiments = Json::array();
  for (const auto& e : c.experiments) experiments.push_back(experiment_json(e));
  j["eval"] = std::move(experiments);
  j["cluster"] = cluster_json(c);
  return j;
}

std::string hash_json(const Json& j) { return sha256_hex(j.dump()); }

std::string display_path(const fs::path& path, const fs::path& root) {
  const auto rel = path.lexically_normal().lexically_relative(root.lexically_normal());
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return path.generic_string();
}

struct Stage {
  std::string name;
  Json params;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;  // relative to the stage directory
  std::function<void(const fs::path& dir, const Provenance& provenance)> body;
};

class Runner {
 public:
  Runner(const PipelineConfig& config, const RunOptions& options, const StageLog& log)
      : config_(config), options_(options), log_(log) {}

  /// Returns the stage's config hash, which chains into the next stage.
  std::string run(const Stage& stage, const std::string& upstream) {
    const Json hashed{{"stage", stage.name},
                      {"tool_version", kToolVersion},
                      {"seed", config_.seed},
                      {"params", stage.params},
                      {"upstream", upstream}};
    const auto hash = hash_json(hashed);
    const fs::path dir = options_.out / stage.name;
    const Provenance provenance{std::string(kToolVersion), hash, config_.seed};

    try {
      auto inputs = Json::array();
      for (const auto& in : stage.inputs) {
        if (!fs::exists(in)) throw Error(ErrorCode::IoError, "missing input " + in.generic_string());
        inputs.push_back({{"path", display_path(in, options_.out)}, {"sha256", tree_hash(in)}});
      }
      if (!options_.force && up_to_date(dir, hash, inputs, stage.outputs)) {
        if (log_) log_({stage.name, true});
        return hash;
      }
      for (const auto& out : stage.outputs) fs::remove_all(dir / out);
      fs::remove(dir / "stage.json");
      stage.body(dir, provenance);

      auto outputs = Json::array();
      for (const auto& out : stage.outputs) {
        if (!fs::exists(dir / out)) throw Error(ErrorCode::IoError, "stage did not produce " + out.generic_string());
        outputs.push_back({{"path", out.generic_string()}, {"sha256", tree_hash(dir / out)}});
      }
      Json manifest;
      manifest["stage"] = stage.name;
      manifest["provenance"] = detail::to_json(provenance);
      manifest["params"] = stage.params;
      manifest["inputs"] = std::move(inputs);
      manifest["outputs"] = std::move(outputs);
      detail::write_json_file(dir / "stage.json", manifest);
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(stage.name, e);
    } catch (const fs::filesystem_error& e) {
      throw StageError(stage.name, Error(ErrorCode::IoError, e.what()));
    }
    if (log_) log_({stage.name, false});
    return hash;
  }

 private:
  static bool up_to_date(const fs::path& dir, const std::string& hash, const Json& inputs,
                         const std::vector<fs::path>& outputs) {
    const fs::path manifest_path = dir / "stage.json";
    if (!fs::is_regular_file(manifest_path)) return false;
    Json recorded;
    try {
      recorded = detail::read_json_file(manifest_path);
      if (recorded.at("provenance").at("config_hash").get<std::string>() != hash) return false;
      if (recorded.at("inputs") != inputs) return false;
      const auto& outs = recorded.at("outputs");
      if (outs.size() != outputs.size()) return false;
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (outs[i].at("path").get<std::string>() != outputs[i].generic_string()) return false;
        if (!fs::exists(dir / outputs[i])) return false;
        if (outs[i].at("sha256").get<std::string>() != tree_hash(dir / outputs[i])) return false;
      }
    } catch (const std::exception&) {
      return false;
    }
    return true;
  }

  const PipelineConfig& config_;
  const RunOptions& options_;
  const StageLog& log_;
};

}  // namespace

std::string config_hash(const PipelineConfig& config) { return hash_json(canonical_config(config)); }

AliasTable resolve_aliases(const std::optional<fs::path>& path) {
  if (!path) return AliasTable::builtin();
  return AliasTable::load(*path);
}

std::string tree_hash(const fs::path& path) {
  if (fs::is_regular_file(path)) return sha256_hex(std::span<const std::uint8_t>(read_binary_file(path)));
  if (!fs::is_directory(path)) throw Error(ErrorCode::IoError, "cannot hash " + path.generic_string());
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (entry.is_regular_file()) files.emplace_back(entry.path().lexically_relative(path).generic_string(), entry.path());
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& [rel, full] : files) {
    listing += rel + "\t" + sha256_hex(std::span<const std::uint8_t>(read_binary_file(full))) + "\n";
  }
  return sha256_hex(listing);
}

std::string ingest_summary_json(const Corpus& corpus, const Provenance& provenance) {
  Json j;
  j["provenance"] = detail::to_json(provenance);
  j["n_loaded"] = corpus.entries.size();
  j["n_failed"] = corpus.failures.size();
  if (!corpus.entries.empty()) {
    const auto stats = corpus_stats(corpus);
    j["n_benign"] = stats.n_benign;
    j["n_malicious"] = stats.n_malicious;
    j["families"] = stats.families;
    j["mean_duration_s"] = stats.mean_duration_s;
  }
  auto failures = Json::array();
  for (const auto& f : corpus.failures) {
    failures.push_back({{"sample_id", f.sample_id}, {"code", to_string(f.code)}, {"message", f.message}});
  }
  j["failures"] = std::move(failures);
  return j.dump(2) + "\n";
}

FeatureSet featurize_with_imphash(const Corpus& corpus, const AliasTable& aliases, bool strict, unsigned jobs,
                                  std::vector<std::string>* warnings) {
  std::vector<std::optional<std::string>> digests(corpus.entries.size());
  std::vector<std::string> problems(corpus.entries.size());
  parallel_for(corpus.entries.size(), jobs, [&](std::size_t i) {
    const auto& entry = corpus.entries[i];
    if (!entry.binary_path) return;
    try {
      digests[i] = imphash(parse_imports(read_binary_file(*entry.binary_path)));
    } catch (const Error& e) {
      if (strict) throw;
      problems[i] = entry.report.sample_id + ": " + e.what();
    }
  });
  if (warnings) {
    for (auto& p : problems) {
      if (!p.empty()) warnings->push_back(std::move(p));
    }
  }

  auto set = featurize_corpus(corpus, aliases, digests, jobs);
  const bool any = std::any_of(digests.begin(), digests.end(), [](const auto& d) { return d.has_value(); });
  if (any) {
    auto widened = append_imphash_column(set.matrix, set.vocab, digests);
    set.matrix = std::move(widened.matrix);
    set.vocab = std::move(widened.vocab);
  }
  return set;
}

FeatureSet select_feature_set(const FeatureSet& set, const BorutaDecision& decision, bool keep_tentative,
                              std::vector<std::string>* warnings) {
  auto selection = apply_selection(set.matrix, set.vocab, decision, keep_tentative);
  if (warnings) warnings->insert(warnings->end(), selection.warnings.begin(), selection.warnings.end());
  FeatureSet out;
  out.vocab = std::move(selection.vocab);
  out.matrix = std::move(selection.matrix);
  out.samples = set.samples;
  out.skipped_tokens = set.skipped_tokens;
  return out;
}

EvalReport run_protocol(const FeatureSet& set, const ExperimentConfig& config) {
  switch (config.protocol) {
    case Protocol::binary_full: return run_binary_full(set.matrix, set.class_labels(), config);
    case Protocol::binary_balanced: return run_binary_balanced(set.matrix, set.class_labels(), config);
    case Protocol::multiclass: {
      std::vector<std::string> families;
      for (const auto& s : set.samples) families.push_back(s.family);
      return run_multiclass(set.matrix, families, config);
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown protocol");
}

void write_eval_outputs(const fs::path& dir, const EvalReport& report, const Provenance& provenance) {
  const std::string stem(to_string(report.protocol));
  write_text_file(dir / (stem + ".json"), eval_report_to_json(report, provenance));
  for (const auto& m : report.models) {
    write_text_file(dir / (stem + "_confusion_" + std::string(to_string(m.model)) + ".csv"),
                    confusion_to_csv(report.classes, m.confusion_sum));
  }
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, const RunOptions& options, const StageLog& log) {
  if (options.out.empty()) throw Error(ErrorCode::ConfigError, "no output directory");
  for (const auto& e : config.experiments) e.validate();
  const AliasTable aliases = resolve_aliases(config.aliases);
  if (config.synth) validate(*config.synth);

  std::vector<StageOutcome> outcomes;
  const StageLog record = [&](const StageOutcome& o) {
    outcomes.push_back(o);
    if (log) log(o);
  };
  Runner runner(config, options, record);
  const fs::path out = options.out;
  std::string upstream;

  fs::path manifest = config.manifest;
  fs::path reports = config.reports;
  std::vector<fs::path> corpus_inputs{manifest, reports};
  if (config.synth) {
    auto spec = *config.synth;
    spec.seed = config.seed;
    upstream = runner.run(
        Stage{"datagen", Json::parse(synth_spec_to_json(spec)), {}, {"corpus"},
              [&](const fs::path& dir, const Provenance&) {
                write_corpus(dir / "corpus", generate(spec, options.jobs), spec);
              }},
        upstream);
    manifest = out / "datagen" / "corpus" / "manifest.csv";
    reports = out / "datagen" / "corpus" / "reports";
    corpus_inputs = {out / "datagen" / "corpus"};
  }

  LoadOptions load;
  load.strict = config.strict;
  load.jobs = options.jobs;

  upstream = runner.run(Stage{"ingest",
                              {{"strict", config.strict}},
                              corpus_inputs,
                              {"summary.json"},
                              [&](const fs::path& dir, const Provenance& provenance) {
                                const auto corpus = load_corpus(manifest, reports, load);
                                write_text_file(dir / "summary.json", ingest_summary_json(corpus, provenance));
                              }},
                        upstream);

  auto featurize_inputs = corpus_inputs;
  if (config.aliases) featurize_inputs.push_back(*config.aliases);
  const Json alias_param = config.aliases ? Json(config.aliases->generic_string()) : Json("builtin");
  upstream = runner.run(Stage{"featurize",
                              {{"aliases", alias_param}, {"strict", config.strict}},
                              featurize_inputs,
                              {"matrix", "warnings.json"},
                              [&](const fs::path& dir, const Provenance& provenance) {
                                const auto corpus = load_corpus(manifest, reports, load);
                                std::vector<std::string> warnings;
                                const auto set =
                                    featurize_with_imphash(corpus, aliases, config.strict, options.jobs, &warnings);
                                write_feature_set(dir / "matrix", set, provenance);
                                detail::write_json_file(dir / "warnings.json",
                                                        {{"provenance", detail::to_json(provenance)},
                                                         {"warnings", warnings}});
                              }},
                        upstream);
  const std::string featurize_hash = upstream;
  const fs::path full_matrix = out / "featurize" / "matrix";
  fs::path binary_matrix = full_matrix;

  if (config.select) {
    auto params = config.boruta;
    params.seed = derive_seed(config.seed, 0x5e1);
    params.jobs = options.jobs;
    upstream = runner.run(
        Stage{"select",
              {{"keep_tentative", config.keep_tentative}, {"params", boruta_json(params)}},
              {full_matrix},
              {"decision.json", "matrix"},
              [&](const fs::path& dir, const Provenance& provenance) {
                const auto set = read_feature_set(full_matrix);
                const auto decision = boruta(set.matrix, set.class_labels(), params);
                write_text_file(dir / "decision.json", decision_to_json(decision, set.vocab, params, provenance));
                write_feature_set(dir / "matrix", select_feature_set(set, decision, config.keep_tentative),
                                  provenance);
              }},
        upstream);
    binary_matrix = out / "select" / "matrix";
  }

  if (!config.experiments.empty()) {
    std::vector<ExperimentConfig> experiments = config.experiments;
    Json params = Json::array();
    std::vector<fs::path> outputs;
    bool has_multiclass = false;
    for (auto& e : experiments) {
      e.seed = derive_seed(config.seed, 0xe7, static_cast<std::uint64_t>(e.protocol));
      e.jobs = options.jobs;
      params.push_back(experiment_json(e));
      const std::string stem(to_string(e.protocol));
      outputs.emplace_back(stem + ".json");
      for (auto m : e.effective_models()) outputs.emplace_back(stem + "_confusion_" + std::string(to_string(m)) + ".csv");
      has_multiclass |= e.protocol == Protocol::multiclass;
    }
    std::vector<fs::path> inputs{binary_matrix};
    if (has_multiclass && binary_matrix != full_matrix) inputs.push_back(full_matrix);
    upstream = runner.run(Stage{"eval", params, inputs, outputs,
                                [&](const fs::path& dir, const Provenance& provenance) {
                                  std::optional<FeatureSet> binary_set, full_set;
                                  for (const auto& e : experiments) {
                                    auto& slot = e.protocol == Protocol::multiclass ? full_set : binary_set;
                                    if (!slot) {
                                      slot = read_feature_set(e.protocol == Protocol::multiclass ? full_matrix
                                                                                                 : binary_matrix);
                                    }
                                    write_eval_outputs(dir, run_protocol(*slot, e), provenance);
                                  }
                                }},
                          upstream);

    if (config.cluster && has_multiclass) {
      const auto seed = derive_seed(config.seed, 0xc1);
      const auto settings = config.cluster_settings;
      std::vector<fs::path> cluster_outputs{"clusters.json"};
      if (settings.sweep) cluster_outputs.emplace_back("sweep.csv");
      runner.run(Stage{"cluster",
                       cluster_json(config),
                       {out / "eval" / "multiclass.json"},
                       cluster_outputs,
                       [&](const fs::path& dir, const Provenance& provenance) {
                         const auto report = eval_report_from_json(read_text_file(out / "eval" / "multiclass.json"));
                         write_text_file(dir / "clusters.json",
                                         clustering_to_json(cluster_families(report, settings.k, seed), provenance));
                         if (settings.sweep) {
                           write_text_file(dir / "sweep.csv",
                                           sweep_to_csv(sweep_k(report, settings.sweep->first, settings.sweep->second,
                                                                seed)));
                         }
                       }},
                 upstream);
    }
  }
  (void)featurize_hash;
  return outcomes;
}

// ---------------------------------------------------------------------------
// Config files

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

PipelineConfig pipeline_config_from_json(std::string_view text, const fs::path& base_dir) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.strict = j.value("strict", c.strict);
    const auto& corpus = j.at("corpus");
    if (corpus.contains("preset")) {
      const auto name = corpus.at("preset").get<std::string>();
      const auto defaults = preset_pipeline_config(name, c.seed);
      c.synth = defaults.synth;
      c.experiments = defaults.experiments;
      c.cluster = defaults.cluster;
      c.cluster_settings = defaults.cluster_settings;
    } else if (corpus.contains("synth_spec")) {
      const auto& spec = corpus.at("synth_spec");
      c.synth = spec.is_string() ? synth_spec_from_json(read_text_file(resolve(base_dir, spec.get<std::string>())))
                                 : synth_spec_from_json(spec.dump());
    } else {
      c.manifest = resolve(base_dir, corpus.at("manifest").get<std::string>());
      c.reports = resolve(base_dir, corpus.at("reports").get<std::string>());
    }
    if (j.contains("aliases") && !j.at("aliases").is_null()) {
      c.aliases = resolve(base_dir, j.at("aliases").get<std::string>());
    }
    if (j.contains("select")) {
      const auto& s = j.at("select");
      c.select = s.value("enabled", c.select);
      c.keep_tentative = s.value("keep_tentative", c.keep_tentative);
      if (s.contains("params")) c.boruta = boruta_params_from_json(s.at("params").dump());
    }
    if (j.contains("eval")) {
      c.experiments.clear();
      for (const auto& e : j.at("eval")) c.experiments.push_back(experiment_config_from_json(e.dump()));
    }
    if (j.contains("cluster")) {
      const auto& cl = j.at("cluster");
      c.cluster = cl.value("enabled", c.cluster);
      c.cluster_settings.k = cl.value("k", c.cluster_settings.k);
      if (cl.contains("sweep") && !cl.at("sweep").is_null()) {
        const auto range = cl.at("sweep").get<std::vector<std::size_t>>();
        if (range.size() != 2) throw Error(ErrorCode::ConfigError, "cluster.sweep must be [lo, hi]");
        c.cluster_settings.sweep = std::make_pair(range[0], range[1]);
      }
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("pipeline config: ") + e.what());
  }
  return c;
}

PipelineConfig preset_pipeline_config(std::string_view preset_name, std::uint64_t seed) {
  PipelineConfig c;
  c.seed = seed;
  c.synth = preset(preset_name, seed);

  ExperimentConfig full;
  full.protocol = Protocol::binary_full;
  ExperimentConfig balanced;
  balanced.protocol = Protocol::binary_balanced;
  c.experiments = {full, balanced};

  const std::size_t n_families = c.synth->families.size();
  if (n_families >= 3) {
    ExperimentConfig multi;
    multi.protocol = Protocol::multiclass;
    std::size_t smallest = c.synth->families.front().n_samples;
    for (const auto& f : c.synth->families) smallest = std::min(smallest, f.n_samples);
    multi.family_threshold = std::min<std::size_t>(100, smallest);
    multi.sample_per_family = multi.family_threshold;
    c.experiments.push_back(multi);
    c.cluster_settings.k = (n_families + 1) / 2;
    c.cluster_settings.sweep = std::make_pair(std::size_t{2}, n_families - 1);
  } else {
    c.cluster = false;
  }
  return c;
}

}  // namespace emutriage
