#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "emutriage/cluster.hpp"
#include "emutriage/datagen.hpp"
#include "emutriage/digest.hpp"
#include "emutriage/error.hpp"
#include "emutriage/eval.hpp"
#include "emutriage/features.hpp"
#include "emutriage/ingest.hpp"
#include "emutriage/io.hpp"
#include "emutriage/ml.hpp"
#include "emutriage/pe_static.hpp"
#include "emutriage/pipeline.hpp"
#include "emutriage/select.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace emutriage;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  bool strict = false;
  bool force = false;
  std::string out;
};

// Provenance for a single-stage invocation: the hash covers the command and
// its resolved arguments.
Provenance command_provenance(const Globals& g, const Json& args) {
  Json hashed{{"args", args}, {"seed", g.seed}, {"tool_version", kToolVersion}};
  return Provenance{std::string(kToolVersion), sha256_hex(hashed.dump()), g.seed};
}

void emit(const Globals& g, const std::string& content) {
  if (g.out.empty() || g.out == "-") {
    std::cout << content;
  } else {
    write_text_file(g.out, content);
  }
}

void require_out(const Globals& g, const char* command) {
  if (g.out.empty()) throw Error(ErrorCode::ConfigError, std::string(command) + " needs --out");
}

std::pair<std::size_t, std::size_t> parse_range(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw Error(ErrorCode::ConfigError, "range must look like LO..HI: " + text);
  try {
    const auto lo = std::stoul(text.substr(0, dots));
    const auto hi = std::stoul(text.substr(dots + 2));
    return {lo, hi};
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "range must look like LO..HI: " + text);
  }
}

std::string read_param_text(const std::string& value) {
  if (value.empty()) return "{}";
  if (!value.empty() && value.front() == '{') return value;
  return read_text_file(value);
}

int report_error(const Error& e, const std::string& stage) {
  Json j{{"error", to_string(e.code())}, {"message", e.detail()}};
  if (!stage.empty()) j["stage"] = stage;
  std::cerr << j.dump() << "\n";
  return 1;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(6);
  out << "protocol,model,class,precision,precision_std,recall,recall_std,f1,f1_std,support\n";
  auto row = [&](ModelKind model, const ClassSummary& c) {
    out << to_string(report.protocol) << ',' << to_string(model) << ',' << csv_escape(c.name) << ','
        << c.precision.mean << ',' << c.precision.stddev << ',' << c.recall.mean << ',' << c.recall.stddev << ','
        << c.f1.mean << ',' << c.f1.stddev << ',' << c.support << '\n';
  };
  for (const auto& m : report.models) {
    for (const auto& c : m.per_class) row(m.model, c);
    row(m.model, m.micro);
    row(m.model, m.macro);
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic-analysis malware triage: ingest, featurize, select, evaluate, cluster"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker thread cap")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("--strict", g.strict, "Fail on the first malformed input instead of skipping it");
  app.add_flag("--force", g.force, "Re-run stages that are up to date");
  app.add_option("--out", g.out, "Output file or directory");
  app.fallthrough();

  std::function<void()> action;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and its reports; prints a summary JSON");
  std::string manifest, reports;
  ingest->add_option("--manifest", manifest)->required();
  ingest->add_option("--reports", reports)->required();
  ingest->callback([&] {
    action = [&] {
      LoadOptions options;
      options.strict = g.strict;
      options.jobs = g.jobs;
      const auto corpus = load_corpus(manifest, reports, options);
      const auto prov = command_provenance(g, {{"command", "ingest"}, {"manifest", manifest}, {"reports", reports}});
      emit(g, ingest_summary_json(corpus, prov));
    };
  });

  // imphash
  auto* imph = app.add_subcommand("imphash", "Print the imphash of a PE file");
  std::string pe_file;
  imph->add_option("pe-file", pe_file)->required();
  imph->callback([&] {
    action = [&] { std::cout << imphash(parse_imports(read_binary_file(pe_file))) << "\n"; };
  });

  // featurize
  auto* featurize = app.add_subcommand("featurize", "Unify API calls and write a sparse count matrix directory");
  std::string aliases;
  featurize->add_option("--manifest", manifest)->required();
  featurize->add_option("--reports", reports)->required();
  featurize->add_option("--aliases", aliases, "alias,canonical CSV (builtin table when omitted)");
  featurize->callback([&] {
    action = [&] {
      require_out(g, "featurize");
      std::optional<fs::path> alias_path;
      if (!aliases.empty()) alias_path = aliases;
      const auto table = resolve_aliases(alias_path);
      LoadOptions options;
      options.strict = g.strict;
      options.jobs = g.jobs;
      const auto corpus = load_corpus(manifest, reports, options);
      std::vector<std::string> warnings;
      const auto set = featurize_with_imphash(corpus, table, g.strict, g.jobs, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      write_feature_set(g.out, set,
                        command_provenance(g, {{"command", "featurize"},
                                               {"manifest", manifest},
                                               {"reports", reports},
                                               {"aliases", aliases}}));
    };
  });

  // select
  auto* select = app.add_subcommand("select", "Boruta feature selection over a matrix directory");
  std::string params, in_dir;
  bool keep_tentative = false;
  select->add_option("--params", params, "Boruta params JSON (file or inline)");
  select->add_option("--in", in_dir, "Input matrix directory")->required();
  select->add_flag("--keep-tentative", keep_tentative);
  select->callback([&] {
    action = [&] {
      require_out(g, "select");
      auto bp = boruta_params_from_json(read_param_text(params));
      bp.seed = g.seed;
      bp.jobs = g.jobs;
      const auto set = read_feature_set(in_dir);
      const auto decision = boruta(set.matrix, set.class_labels(), bp);
      const auto prov = command_provenance(
          g, {{"command", "select"}, {"params", Json::parse(read_param_text(params))}, {"keep_tentative", keep_tentative}});
      std::vector<std::string> warnings;
      const auto selected = select_feature_set(set, decision, keep_tentative, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      write_feature_set(g.out, selected, prov);
      write_text_file(fs::path(g.out) / "decision.json", decision_to_json(decision, set.vocab, bp, prov));
    };
  });

  // train
  auto* train = app.add_subcommand("train", "Fit one model on a matrix directory and write it as JSON");
  std::string model_name = "rf", labels = "class";
  train->add_option("--model", model_name)->check(CLI::IsMember({"rf", "gbt", "knn"}));
  train->add_option("--params", params, "Model params JSON (file or inline)");
  train->add_option("--in", in_dir, "Input matrix directory")->required();
  train->add_option("--labels", labels, "Label column")->check(CLI::IsMember({"class", "family"}));
  train->callback([&] {
    action = [&] {
      require_out(g, "train");
      Json wrapped{{model_name, Json::parse(read_param_text(params))}};
      const auto config = experiment_config_from_json(wrapped.dump());
      const auto set = read_feature_set(in_dir);
      const auto y = labels == "class" ? set.class_labels() : set.family_labels();
      TrainedModel model;
      switch (parse_model_kind(model_name)) {
        case ModelKind::rf: {
          auto p = config.rf;
          p.seed = g.seed;
          p.jobs = g.jobs;
          model = fit_random_forest(set.matrix, y, p);
          break;
        }
        case ModelKind::gbt: {
          auto p = config.gbt;
          p.seed = g.seed;
          p.jobs = g.jobs;
          model = fit_gbt(set.matrix, y, p);
          break;
        }
        case ModelKind::knn: {
          auto p = config.knn;
          p.jobs = g.jobs;
          model = fit_knn(set.matrix, y, p);
          break;
        }
      }
      write_text_file(g.out, model_to_json(model));
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Run an evaluation protocol; writes report JSON plus confusion CSVs");
  std::string protocol, config_path;
  eval->add_option("--protocol", protocol)->required();
  eval->add_option("--config", config_path, "Experiment config JSON (file or inline)");
  eval->add_option("--in", in_dir, "Input matrix directory")->required();
  eval->callback([&] {
    action = [&] {
      require_out(g, "eval");
      auto cfg_json = Json::parse(read_param_text(config_path));
      cfg_json["protocol"] = protocol;
      auto config = experiment_config_from_json(cfg_json.dump());
      config.seed = g.seed;
      config.jobs = g.jobs;
      const auto set = read_feature_set(in_dir);
      const auto report = run_protocol(set, config);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
      const auto prov = command_provenance(g, {{"command", "eval"}, {"config", Json::parse(experiment_config_to_json(config))}});
      const fs::path out(g.out);
      write_text_file(out, eval_report_to_json(report, prov));
      for (const auto& m : report.models) {
        const auto csv = out.parent_path() / (out.stem().string() + "_confusion_" + std::string(to_string(m.model)) + ".csv");
        write_text_file(csv, confusion_to_csv(report.classes, m.confusion_sum));
      }
    };
  });

  // cluster
  auto* cluster = app.add_subcommand("cluster", "Group families by their confusion-matrix rows");
  std::string report_path, sweep;
  std::size_t k = 0;
  cluster->add_option("--report", report_path, "Multiclass eval report JSON")->required();
  cluster->add_option("--k", k)->required()->check(CLI::PositiveNumber);
  cluster->add_option("--sweep", sweep, "Silhouette sweep range LO..HI");
  cluster->callback([&] {
    action = [&] {
      require_out(g, "cluster");
      const auto report = eval_report_from_json(read_text_file(report_path));
      const fs::path out(g.out);
      const auto prov = command_provenance(g, {{"command", "cluster"}, {"k", k}, {"sweep", sweep}});
      write_text_file(out / "clusters.json", clustering_to_json(cluster_families(report, k, g.seed), prov));
      if (!sweep.empty()) {
        const auto [lo, hi] = parse_range(sweep);
        write_text_file(out / "sweep.csv", sweep_to_csv(sweep_k(report, lo, hi, g.seed)));
      }
    };
  });

  // datagen
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic corpus from a spec or preset");
  std::string spec_path, preset_name;
  auto* spec_opt = datagen->add_option("--spec", spec_path, "SynthSpec JSON");
  datagen->add_option("--preset", preset_name)->check(CLI::IsMember(preset_names()))->excludes(spec_opt);
  datagen->callback([&] {
    action = [&] {
      require_out(g, "datagen");
      if (spec_path.empty() && preset_name.empty()) throw Error(ErrorCode::ConfigError, "datagen needs --spec or --preset");
      auto spec = spec_path.empty() ? preset(preset_name, g.seed) : synth_spec_from_json(read_text_file(spec_path));
      spec.seed = g.seed;
      write_corpus(g.out, generate(spec, g.jobs), spec);
    };
  });

  // run
  auto* run = app.add_subcommand("run", "Run every stage into --out, skipping stages that are up to date");
  auto* preset_opt = run->add_option("--preset", preset_name)->check(CLI::IsMember(preset_names()));
  run->add_option("--config", config_path, "Pipeline config JSON")->excludes(preset_opt);
  run->callback([&] {
    action = [&] {
      require_out(g, "run");
      if (config_path.empty() && preset_name.empty()) throw Error(ErrorCode::ConfigError, "run needs --preset or --config");
      PipelineConfig config;
      if (!preset_name.empty()) {
        config = preset_pipeline_config(preset_name, g.seed);
      } else {
        const fs::path path(config_path);
        config = pipeline_config_from_json(read_text_file(path), path.parent_path());
        if (app.count("--seed") > 0) config.seed = g.seed;
      }
      config.strict = config.strict || g.strict;
      RunOptions options{g.out, g.force, g.jobs};
      run_pipeline(config, options, [](const StageOutcome& o) {
        std::cout << o.stage << ": " << (o.skipped ? "up-to-date" : "done") << "\n" << std::flush;
      });
    };
  });

  // report
  auto* report_cmd = app.add_subcommand("report", "Flatten eval report JSONs into one CSV");
  std::vector<std::string> report_paths;
  report_cmd->add_option("reports", report_paths, "Eval report JSON files")->required();
  report_cmd->callback([&] {
    action = [&] {
      std::string csv;
      for (std::size_t i = 0; i < report_paths.size(); ++i) {
        auto part = report_csv(eval_report_from_json(read_text_file(report_paths[i])));
        if (i > 0) part.erase(0, part.find('\n') + 1);
        csv += part;
      }
      emit(g, csv);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << Json{{"error", "UsageError"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (action) action();
  } catch (const StageError& e) {
    return report_error(e, e.stage());
  } catch (const Error& e) {
    return report_error(e, {});
  } catch (const std::exception& e) {
    std::cerr << Json{{"error", "InternalError"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
