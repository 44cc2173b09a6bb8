// Command-line surface for the sig2d library: signature extraction, model
// fitting, anomaly scoring, threshold-based detection, backdoor filtering,
// metric evaluation, bound validation and the timing harness. Subcommands are
// thin drivers over the library; every run is a pure function of its inputs
// apart from the wall-time fields in the run summary.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sig2d/core.hpp"
#include "sig2d/detect.hpp"
#include "sig2d/eval.hpp"
#include "sig2d/metric.hpp"
#include "sig2d/npy.hpp"
#include "sig2d/signature.hpp"
#include "sig2d/synth.hpp"
#include "sig2d/tensor.hpp"

using json = nlohmann::json;
using namespace sig2d;

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Format:
    case ErrorKind::Validation:
    case ErrorKind::Shape:
    case ErrorKind::Parameter:
    case ErrorKind::Config:
      return 2;
    default:
      return 1;
  }
}

void print_error(ErrorKind kind, const std::string& message) {
  json j;
  j["error"]["kind"] = to_string(kind);
  j["error"]["message"] = message;
  std::cerr << j.dump() << "\n";
}

json load_config(const std::string& path) {
  if (path.empty()) return json();
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config file: " + path);
  json cfg = json::parse(in, nullptr, false);
  if (cfg.is_discarded())
    fail(ErrorKind::Config, "config file is not valid JSON: " + path);
  return cfg;
}

// Config-file value wins over the built-in default; an explicit CLI flag wins
// over both.
template <typename T>
void config_override(const CLI::Option* opt, const json& cfg,
                     const std::string& pointer, T& value) {
  if (opt != nullptr && opt->count() > 0) return;
  if (cfg.is_null()) return;
  const json::json_pointer ptr(pointer);
  if (!cfg.contains(ptr)) return;
  try {
    value = cfg.at(ptr).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "bad config value at " + pointer + ": " + e.what());
  }
}

SigLevel parse_level(int level) {
  if (level == 1) return SigLevel::Level1;
  if (level == 2) return SigLevel::Level2;
  fail(ErrorKind::Config, "level must be 1 or 2, got " + std::to_string(level));
}

Pairing parse_pairing(const std::string& s) {
  if (s == "full") return Pairing::Full;
  if (s == "diagonal") return Pairing::Diagonal;
  fail(ErrorKind::Config, "pairing must be 'full' or 'diagonal', got " + s);
}

void parse_families(const std::string& s, SigConfig& cfg) {
  if (s == "d") {
    cfg.family_d = true;
    cfg.family_dhat = false;
  } else if (s == "dhat") {
    cfg.family_d = false;
    cfg.family_dhat = true;
  } else if (s == "both") {
    cfg.family_d = true;
    cfg.family_dhat = true;
  } else {
    fail(ErrorKind::Config, "families must be 'd', 'dhat' or 'both', got " + s);
  }
}

Metric parse_metric(const std::string& s) {
  if (s == "covnorm") return Metric::CovNorm;
  if (s == "confscore") return Metric::ConfScore;
  fail(ErrorKind::Config, "metric must be 'covnorm' or 'confscore', got " + s);
}

DecisionRule parse_rule(const std::string& s) {
  if (s == "single") return DecisionRule::SingleClass;
  if (s == "all") return DecisionRule::AllClasses;
  fail(ErrorKind::Config, "rule must be 'single' or 'all', got " + s);
}

FeatureConfig::Kind parse_feature_kind(const std::string& s) {
  if (s == "signature") return FeatureConfig::Kind::Signature;
  if (s == "flatten") return FeatureConfig::Kind::Flatten;
  fail(ErrorKind::Config, "feature must be 'signature' or 'flatten', got " + s);
}

int env_threads_default() {
  if (const char* env = std::getenv("SIG2D_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

std::string families_string(const SigConfig& cfg) {
  if (cfg.family_d && cfg.family_dhat) return "both";
  return cfg.family_d ? "d" : "dhat";
}

json pipeline_to_json(const FeatureConfig& pipeline) {
  json j;
  j["feature"] =
      pipeline.kind == FeatureConfig::Kind::Signature ? "signature" : "flatten";
  j["level"] = static_cast<int>(pipeline.sig.level);
  j["pairing"] = to_string(pipeline.sig.pairing);
  j["families"] = families_string(pipeline.sig);
  j["scale"] = pipeline.sig.post_scale;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open file for writing: " + path);
  out << text;
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

// Shared pipeline flags (sig, detect, backdoor-filter).
struct PipelineFlags {
  int level = 1;
  std::string pairing = "full";
  std::string families = "both";
  std::string feature = "signature";
  double scale = 1.0;
  bool normalize = false;
  CLI::Option* level_opt = nullptr;
  CLI::Option* pairing_opt = nullptr;
  CLI::Option* families_opt = nullptr;
  CLI::Option* feature_opt = nullptr;
  CLI::Option* scale_opt = nullptr;
  CLI::Option* normalize_opt = nullptr;

  void add_to(CLI::App* cmd) {
    level_opt = cmd->add_option("--level", level, "Signature level (1 or 2)");
    pairing_opt = cmd->add_option("--pairing", pairing,
                                  "Channel pairing: full or diagonal");
    families_opt =
        cmd->add_option("--families", families, "Term families: d, dhat or both");
    feature_opt = cmd->add_option("--feature", feature,
                                  "Feature map: signature or flatten");
    scale_opt = cmd->add_option("--scale", scale,
                                "Post-hoc multiplier on signature features");
    normalize_opt = cmd->add_flag("--normalize", normalize,
                                  "Normalize loaded tensors to [0,1]");
  }

  FeatureConfig resolve(const json& cfg) {
    config_override(level_opt, cfg, "/pipeline/level", level);
    config_override(pairing_opt, cfg, "/pipeline/pairing", pairing);
    config_override(families_opt, cfg, "/pipeline/families", families);
    config_override(feature_opt, cfg, "/pipeline/feature", feature);
    config_override(scale_opt, cfg, "/pipeline/scale", scale);
    config_override(normalize_opt, cfg, "/normalize", normalize);
    FeatureConfig fc;
    fc.kind = parse_feature_kind(feature);
    fc.sig.level = parse_level(level);
    fc.sig.pairing = parse_pairing(pairing);
    fc.sig.post_scale = scale;
    parse_families(families, fc.sig);
    return fc;
  }
};

// ---------------------------------------------------------------------------
// sig: tensors in, feature matrix + layout sidecar out.

struct SigCmd {
  std::string config_path, input, output, layout_out;
  PipelineFlags pipeline;
  int threads = env_threads_default();
  CLI::Option *input_opt = nullptr, *output_opt = nullptr, *layout_opt = nullptr,
              *threads_opt = nullptr;

  void run() {
    const json cfg = load_config(config_path);
    config_override(input_opt, cfg, "/input", input);
    config_override(output_opt, cfg, "/output", output);
    config_override(layout_opt, cfg, "/layout", layout_out);
    config_override(threads_opt, cfg, "/threads", threads);
    const FeatureConfig fc = pipeline.resolve(cfg);
    if (input.empty()) fail(ErrorKind::Config, "sig requires --input");
    if (output.empty()) fail(ErrorKind::Config, "sig requires --output");
    if (layout_out.empty()) layout_out = output + ".layout.json";

    const TensorBatch batch = load_array_file(input, pipeline.normalize);
    const Mat features = fc.apply_batch(batch, threads);
    npy::write_matrix(output, features);

    json layout;
    if (fc.kind == FeatureConfig::Kind::Signature) {
      layout = layout_to_json(fc.sig, batch.channels());
    } else {
      layout["format"] = "sig2d.layout";
      layout["version"] = 1;
      layout["feature"] = "flatten";
      layout["channels"] = batch.channels();
      layout["length"] = batch.channels();
    }
    write_text(layout_out, layout.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// fit: feature matrix in, serialized Gaussian model out.

struct FitCmd {
  std::string config_path, input, output;
  CLI::Option *input_opt = nullptr, *output_opt = nullptr;

  void run() {
    const json cfg = load_config(config_path);
    config_override(input_opt, cfg, "/input", input);
    config_override(output_opt, cfg, "/output", output);
    if (input.empty()) fail(ErrorKind::Config, "fit requires --input");
    if (output.empty()) fail(ErrorKind::Config, "fit requires --output");
    const Mat features = npy::read_matrix(input);
    fit_gaussian(features).save(output);
  }
};

// ---------------------------------------------------------------------------
// score: queries against a model (covnorm) or corpus (confscore).

struct ScoreCmd {
  std::string config_path, input, output, model_path, corpus_path;
  std::string metric = "covnorm";
  std::string format = "csv";
  CLI::Option *input_opt = nullptr, *output_opt = nullptr, *model_opt = nullptr,
              *corpus_opt = nullptr, *metric_opt = nullptr, *format_opt = nullptr;

  void run() {
    const json cfg = load_config(config_path);
    config_override(input_opt, cfg, "/input", input);
    config_override(output_opt, cfg, "/output", output);
    config_override(model_opt, cfg, "/model", model_path);
    config_override(corpus_opt, cfg, "/corpus", corpus_path);
    config_override(metric_opt, cfg, "/metric", metric);
    config_override(format_opt, cfg, "/format", format);
    if (input.empty()) fail(ErrorKind::Config, "score requires --input");
    if (output.empty()) fail(ErrorKind::Config, "score requires --output");
    const Metric m = parse_metric(metric);

    const Mat queries = npy::read_matrix(input);
    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(queries.rows()));
    if (m == Metric::CovNorm) {
      if (model_path.empty() && corpus_path.empty())
        fail(ErrorKind::Config, "covnorm scoring needs --model or --corpus");
      const GaussianModel model = model_path.empty()
                                      ? fit_gaussian(npy::read_matrix(corpus_path))
                                      : GaussianModel::load(model_path);
      for (Eigen::Index r = 0; r < queries.rows(); ++r)
        scores.push_back(covariance_norm(model, queries.row(r).transpose()));
    } else {
      if (corpus_path.empty())
        fail(ErrorKind::Config, "confscore scoring needs --corpus");
      const ConformanceScorer scorer(npy::read_matrix(corpus_path));
      for (Eigen::Index r = 0; r < queries.rows(); ++r)
        scores.push_back(scorer.score(queries.row(r).transpose()));
    }

    if (format == "json") {
      json rows = json::array();
      for (std::size_t i = 0; i < scores.size(); ++i)
        rows.push_back({{"sample_id", i}, {"score", scores[i]}});
      write_text(output, rows.dump(2) + "\n");
    } else if (format == "csv") {
      std::ostringstream body;
      body << "sample_id,score\n";
      for (std::size_t i = 0; i < scores.size(); ++i)
        body << i << ',' << fmt_double(scores[i]) << '\n';
      write_text(output, body.str());
    } else {
      fail(ErrorKind::Config, "format must be 'csv' or 'json', got " + format);
    }
  }
};

// ---------------------------------------------------------------------------
// detect: per-class calibration on benign corpora, then decisions on a test
// set. Multi-class corpora come from the config file's classes array.

struct DetectCmd {
  std::string config_path, corpus_path, test_path, report_path, summary_path;
  std::string metric = "covnorm";
  std::string rule = "single";
  double percentile = -1.0;  // resolved after the rule is known
  int label = 0;
  std::uint64_t seed = 0;
  int threads = env_threads_default();
  PipelineFlags pipeline;
  CLI::Option *corpus_opt = nullptr, *test_opt = nullptr, *report_opt = nullptr,
              *summary_opt = nullptr, *metric_opt = nullptr, *rule_opt = nullptr,
              *percentile_opt = nullptr, *label_opt = nullptr, *seed_opt = nullptr,
              *threads_opt = nullptr;

  void run() {
    Stopwatch timer;
    const json cfg = load_config(config_path);
    config_override(test_opt, cfg, "/paths/test", test_path);
    config_override(report_opt, cfg, "/paths/report", report_path);
    config_override(summary_opt, cfg, "/paths/summary", summary_path);
    config_override(metric_opt, cfg, "/metric", metric);
    config_override(rule_opt, cfg, "/rule", rule);
    config_override(percentile_opt, cfg, "/percentile", percentile);
    config_override(seed_opt, cfg, "/seed", seed);
    config_override(threads_opt, cfg, "/threads", threads);
    const FeatureConfig fc = pipeline.resolve(cfg);
    const Metric m = parse_metric(metric);
    const DecisionRule dr = parse_rule(rule);
    if (percentile <= 0.0)
      percentile = dr == DecisionRule::AllClasses ? 20.0 : 80.0;

    // Class corpora: either one --corpus/--label pair or a config array.
    std::vector<std::pair<int, std::string>> classes;
    if (!corpus_path.empty()) {
      classes.emplace_back(label, corpus_path);
    } else if (!cfg.is_null() && cfg.contains("/paths/classes"_json_pointer)) {
      for (const auto& entry : cfg.at("/paths/classes"_json_pointer)) {
        classes.emplace_back(entry.at("label").get<int>(),
                             entry.at("corpus").get<std::string>());
      }
    }
    if (classes.empty())
      fail(ErrorKind::Config, "detect needs --corpus or a classes array");
    if (test_path.empty()) fail(ErrorKind::Config, "detect requires --test");
    if (report_path.empty()) fail(ErrorKind::Config, "detect requires --output");
    if (summary_path.empty()) summary_path = report_path + ".summary.json";

    std::vector<Threshold> thresholds;
    thresholds.reserve(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) {
      const TensorBatch corpus =
          load_array_file(classes[k].second, pipeline.normalize);
      const Mat features = fc.apply_batch(corpus, threads);
      thresholds.push_back(calibrate_threshold(
          features, percentile, m, mix_seed(seed, k), classes[k].first));
    }

    const TensorBatch test = load_array_file(test_path, pipeline.normalize);
    const DetectionReport report = detect(test, thresholds, fc, dr, threads);
    write_report_csv(report, report_path);

    json summary;
    summary["command"] = "detect";
    summary["seed"] = seed;
    summary["threads"] = threads;
    summary["metric"] = metric;
    summary["rule"] = rule;
    summary["percentile"] = percentile;
    summary["pipeline"] = pipeline_to_json(fc);
    summary["normalize"] = pipeline.normalize;
    summary["test"] = test_path;
    summary["report"] = report_path;
    json jth = json::array();
    for (const Threshold& th : thresholds) {
      jth.push_back({{"label", th.label},
                     {"percentile", th.percentile},
                     {"cutoff", th.cutoff},
                     {"split_seed", th.split_seed},
                     {"reference_rows", th.reference->rows()},
                     {"ridge", th.model->ridge()}});
    }
    summary["thresholds"] = jth;
    summary["wall_time_seconds"] = timer.seconds();
    write_text(summary_path, summary.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// backdoor-filter: top-budget covariance-norm removal per targeted class.

struct BackdoorCmd {
  std::string config_path, dataset_path, clean_path, output_dir = ".";
  std::string manifest_path, summary_path;
  int label = 0;
  std::int64_t budget = 0;
  double clean_fraction = 0.0;
  int threads = env_threads_default();
  PipelineFlags pipeline;
  CLI::Option *dataset_opt = nullptr, *clean_opt = nullptr, *outdir_opt = nullptr,
              *manifest_opt = nullptr, *summary_opt = nullptr, *label_opt = nullptr,
              *budget_opt = nullptr, *threads_opt = nullptr;

  void run() {
    Stopwatch timer;
    const json cfg = load_config(config_path);
    config_override(outdir_opt, cfg, "/paths/output_dir", output_dir);
    config_override(manifest_opt, cfg, "/paths/manifest", manifest_path);
    config_override(summary_opt, cfg, "/paths/summary", summary_path);
    config_override(budget_opt, cfg, "/budget", budget);
    config_override(threads_opt, cfg, "/threads", threads);
    const FeatureConfig fc = pipeline.resolve(cfg);

    std::vector<std::tuple<int, std::string, std::string>> classes;
    if (!dataset_path.empty()) {
      if (clean_path.empty())
        fail(ErrorKind::Config, "backdoor-filter requires --clean with --dataset");
      classes.emplace_back(label, dataset_path, clean_path);
    } else if (!cfg.is_null() && cfg.contains("/paths/classes"_json_pointer)) {
      for (const auto& entry : cfg.at("/paths/classes"_json_pointer))
        classes.emplace_back(entry.at("label").get<int>(),
                             entry.at("dataset").get<std::string>(),
                             entry.at("clean").get<std::string>());
    }
    if (classes.empty())
      fail(ErrorKind::Config,
           "backdoor-filter needs --dataset or a classes array");
    if (budget <= 0) fail(ErrorKind::Config, "backdoor-filter requires --budget");
    if (manifest_path.empty()) manifest_path = output_dir + "/manifest.csv";
    if (summary_path.empty()) summary_path = manifest_path + ".summary.json";

    BackdoorConfig bc;
    bc.budget = budget;
    bc.clean_fraction = clean_fraction;
    std::map<int, TensorBatch> dataset, clean;
    for (const auto& [lbl, dpath, cpath] : classes) {
      bc.targeted_labels.push_back(lbl);
      TensorBatch suspects = load_array_file(dpath, pipeline.normalize);
      TensorBatch known_clean = load_array_file(cpath, pipeline.normalize);
      // Both files carry row-index ids; move the clean ids out of the way so
      // the id spaces stay disjoint. Manifest ids are suspect-file rows.
      for (auto& id : known_clean.sample_ids)
        id += static_cast<std::int64_t>(suspects.count());
      dataset.emplace(lbl, std::move(suspects));
      clean.emplace(lbl, std::move(known_clean));
    }

    const BackdoorFilterResult result =
        backdoor_filter(dataset, clean, bc, fc, threads);
    write_manifest_csv(result.manifest, manifest_path);
    json jclasses = json::array();
    for (const auto& [lbl, batch] : result.filtered) {
      const std::string out_path =
          output_dir + "/filtered_" + std::to_string(lbl) + ".npy";
      save_array_file(out_path, batch);
      jclasses.push_back({{"label", lbl},
                          {"kept", batch.count()},
                          {"removed", budget},
                          {"ridge", result.ridge_by_label.at(lbl)},
                          {"output", out_path}});
    }

    json summary;
    summary["command"] = "backdoor-filter";
    summary["budget"] = budget;
    summary["tie_break"] = bc.tie_break;
    summary["threads"] = threads;
    summary["pipeline"] = pipeline_to_json(fc);
    summary["normalize"] = pipeline.normalize;
    summary["manifest"] = manifest_path;
    summary["classes"] = jclasses;
    summary["wall_time_seconds"] = timer.seconds();
    write_text(summary_path, summary.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// eval: metrics from a score,label CSV.

struct EvalCmd {
  std::string config_path, input, output, roc_path;
  double cutoff = std::numeric_limits<double>::quiet_NaN();
  std::string format = "csv";
  CLI::Option *input_opt = nullptr, *output_opt = nullptr, *roc_opt = nullptr,
              *cutoff_opt = nullptr, *format_opt = nullptr;

  static LabeledScores read_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line))
      fail(ErrorKind::Format, path + ": empty scores file");
    std::vector<std::string> cols;
    std::stringstream header(line);
    std::string tok;
    while (std::getline(header, tok, ',')) cols.push_back(tok);
    int score_col = -1, label_col = -1;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] == "score") score_col = static_cast<int>(i);
      if (cols[i] == "label") label_col = static_cast<int>(i);
    }
    if (score_col < 0 || label_col < 0)
      fail(ErrorKind::Format,
           path + ": header must contain 'score' and 'label' columns");

    LabeledScores ls;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::stringstream row(line);
      std::vector<std::string> fields;
      while (std::getline(row, tok, ',')) fields.push_back(tok);
      if (fields.size() != cols.size())
        fail(ErrorKind::Format,
             path + ": ragged row at line " + std::to_string(line_no));
      try {
        ls.scores.push_back(std::stod(fields[static_cast<std::size_t>(score_col)]));
        ls.labels.push_back(std::stoi(fields[static_cast<std::size_t>(label_col)]));
      } catch (const std::exception&) {
        fail(ErrorKind::Format,
             path + ": unparsable row at line " + std::to_string(line_no));
      }
    }
    return ls;
  }

  void run() {
    const json cfg = load_config(config_path);
    config_override(input_opt, cfg, "/input", input);
    config_override(output_opt, cfg, "/output", output);
    config_override(roc_opt, cfg, "/roc", roc_path);
    config_override(cutoff_opt, cfg, "/cutoff", cutoff);
    config_override(format_opt, cfg, "/format", format);
    if (input.empty()) fail(ErrorKind::Config, "eval requires --input");
    if (output.empty()) fail(ErrorKind::Config, "eval requires --output");

    const LabeledScores ls = read_scores_csv(input);
    const double auc = roc_auc(ls);

    std::vector<std::pair<std::string, double>> rows;
    rows.emplace_back("auc", auc);
    if (std::isfinite(cutoff)) {
      const ConfusionMetrics m = confusion_metrics(ls, cutoff);
      rows.emplace_back("cutoff", cutoff);
      rows.emplace_back("tpr", m.tpr);
      rows.emplace_back("tnr", m.tnr);
      rows.emplace_back("fpr", m.fpr);
      rows.emplace_back("fnr", m.fnr);
      rows.emplace_back("precision", m.precision);
      rows.emplace_back("f1", m.f1);
      rows.emplace_back("accuracy", m.accuracy);
    }

    if (format == "json") {
      json j;
      for (const auto& [k, v] : rows) j[k] = v;
      write_text(output, j.dump(2) + "\n");
    } else if (format == "csv") {
      std::ostringstream body;
      body << "metric,value\n";
      for (const auto& [k, v] : rows) body << k << ',' << fmt_double(v) << '\n';
      write_text(output, body.str());
    } else {
      fail(ErrorKind::Config, "format must be 'csv' or 'json', got " + format);
    }
    if (!roc_path.empty()) write_roc_csv(roc_points(ls), roc_path);
  }
};

// ---------------------------------------------------------------------------
// validate-bounds: Monte-Carlo checks of the error-bound inequalities.

struct ValidateBoundsCmd {
  std::string config_path, output;
  std::string which = "both";
  int dim_cov = 4;
  int dim_conf = 2;
  double mean_gap = 10.0;
  double delta_cov = 0.0;  // 0 means the balanced special delta
  double delta_conf = 3.0;
  std::size_t corpus_n = 10;
  std::size_t trials = 100000;
  std::uint64_t seed = 7;
  CLI::Option *output_opt = nullptr, *which_opt = nullptr, *dimcov_opt = nullptr,
              *dimconf_opt = nullptr, *gap_opt = nullptr, *dcov_opt = nullptr,
              *dconf_opt = nullptr, *n_opt = nullptr, *trials_opt = nullptr,
              *seed_opt = nullptr;

  void run() {
    const json cfg = load_config(config_path);
    config_override(output_opt, cfg, "/output", output);
    config_override(which_opt, cfg, "/which", which);
    config_override(dimcov_opt, cfg, "/dim_cov", dim_cov);
    config_override(dimconf_opt, cfg, "/dim_conf", dim_conf);
    config_override(gap_opt, cfg, "/mean_gap", mean_gap);
    config_override(dcov_opt, cfg, "/delta_cov", delta_cov);
    config_override(dconf_opt, cfg, "/delta_conf", delta_conf);
    config_override(n_opt, cfg, "/corpus_n", corpus_n);
    config_override(trials_opt, cfg, "/trials", trials);
    config_override(seed_opt, cfg, "/seed", seed);
    if (which != "covnorm" && which != "confscore" && which != "both")
      fail(ErrorKind::Config, "which must be covnorm, confscore or both");

    json out;
    if (which != "confscore") {
      Vec mu_u = Vec::Zero(dim_cov);
      mu_u[0] = mean_gap;
      const auto spec_c = SyntheticSpec::gaussian(
          Vec::Zero(dim_cov), Mat::Identity(dim_cov, dim_cov), seed);
      const auto spec_u = SyntheticSpec::gaussian(
          mu_u, Mat::Identity(dim_cov, dim_cov), mix_seed(seed, 100));
      const double delta =
          delta_cov > 0.0 ? delta_cov : covnorm_special_delta(spec_c, spec_u);
      out["covnorm"] =
          to_json(validate_covnorm_bounds(spec_c, spec_u, delta, trials));
    }
    if (which != "covnorm") {
      Vec mu_u = Vec::Zero(dim_conf);
      mu_u[0] = mean_gap;
      const auto spec_c = SyntheticSpec::gaussian(
          Vec::Zero(dim_conf), Mat::Identity(dim_conf, dim_conf),
          mix_seed(seed, 200));
      const auto spec_u = SyntheticSpec::gaussian(
          mu_u, Mat::Identity(dim_conf, dim_conf), mix_seed(seed, 300));
      out["confscore"] = to_json(validate_confscore_bounds(
          spec_c, spec_u, delta_conf, corpus_n, trials));
    }

    bool violated = false;
    for (const auto& [key, report] : out.items())
      violated = violated || report.at("violated").get<bool>();
    out["violated"] = violated;

    const std::string text = out.dump(2) + "\n";
    if (output.empty())
      std::cout << text;
    else
      write_text(output, text);
  }
};

// ---------------------------------------------------------------------------
// timing: per-query medians for the scoring frameworks.

struct TimingCmd {
  std::string config_path, output;
  std::string task = "covnorm";
  std::string sizes = "256,4096";
  int dim = 16;
  CLI::Option *output_opt = nullptr, *task_opt = nullptr, *sizes_opt = nullptr,
              *dim_opt = nullptr;

  void run() {
    const json cfg = load_config(config_path);
    config_override(output_opt, cfg, "/output", output);
    config_override(task_opt, cfg, "/task", task);
    config_override(sizes_opt, cfg, "/sizes", sizes);
    config_override(dim_opt, cfg, "/dim", dim);
    if (output.empty()) fail(ErrorKind::Config, "timing requires --output");

    std::vector<std::size_t> parsed;
    std::stringstream ss(sizes);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        parsed.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        fail(ErrorKind::Config, "bad --sizes entry: " + tok);
      }
    }
    write_timing_csv(timing_harness(task, parsed, dim), output);
  }
};

// ---------------------------------------------------------------------------
// synth: seeded synthetic data for demos and desk-scale experiments.

struct SynthCmd {
  std::string config_path, output;
  std::string kind = "smoothfield";
  std::size_t count = 100;
  std::uint64_t seed = 0;
  int height = 32, width = 32, channels = 3;
  double corr = 1.0;
  int dim = 8;
  CLI::Option *output_opt = nullptr, *kind_opt = nullptr, *count_opt = nullptr,
              *seed_opt = nullptr, *height_opt = nullptr, *width_opt = nullptr,
              *channels_opt = nullptr, *corr_opt = nullptr, *dim_opt = nullptr;

  void run() {
    const json cfg = load_config(config_path);
    config_override(output_opt, cfg, "/output", output);
    config_override(kind_opt, cfg, "/kind", kind);
    config_override(count_opt, cfg, "/count", count);
    config_override(seed_opt, cfg, "/seed", seed);
    config_override(height_opt, cfg, "/height", height);
    config_override(width_opt, cfg, "/width", width);
    config_override(channels_opt, cfg, "/channels", channels);
    config_override(corr_opt, cfg, "/corr", corr);
    config_override(dim_opt, cfg, "/dim", dim);
    if (output.empty()) fail(ErrorKind::Config, "synth requires --output");

    if (kind == "smoothfield") {
      const auto spec =
          SyntheticSpec::smooth_field(height, width, channels, corr, seed);
      save_array_file(output, sample_tensors(spec, count));
    } else if (kind == "gaussian") {
      const auto spec = SyntheticSpec::gaussian(Vec::Zero(dim),
                                                Mat::Identity(dim, dim), seed);
      npy::write_matrix(output, sample_features(spec, count));
    } else {
      fail(ErrorKind::Config, "kind must be 'smoothfield' or 'gaussian', got " + kind);
    }
  }
};

// ---------------------------------------------------------------------------
// meandiff: class-pair mean-difference heatmap matrix.

struct MeanDiffCmd {
  std::string config_path, output;
  std::vector<std::string> inputs;
  CLI::Option *output_opt = nullptr, *inputs_opt = nullptr;

  void run() {
    const json cfg = load_config(config_path);
    config_override(output_opt, cfg, "/output", output);
    config_override(inputs_opt, cfg, "/inputs", inputs);
    if (inputs.size() < 2)
      fail(ErrorKind::Config, "meandiff needs at least two --inputs");
    if (output.empty()) fail(ErrorKind::Config, "meandiff requires --output");

    std::vector<Mat> classes;
    classes.reserve(inputs.size());
    for (const std::string& path : inputs)
      classes.push_back(npy::read_matrix(path));
    const Mat m = mean_difference_matrix(classes);

    std::ostringstream body;
    body << "ref_class";
    for (std::size_t j = 0; j < inputs.size(); ++j) body << ',' << j;
    body << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      body << i;
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        body << ',' << fmt_double(m(i, j));
      body << '\n';
    }
    write_text(output, body.str());
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D-signature anomaly detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  SigCmd sig;
  auto* sig_cmd = app.add_subcommand("sig", "Extract signature features");
  sig.input_opt = sig_cmd->add_option("--input", sig.input, "Tensor .npy file");
  sig.output_opt = sig_cmd->add_option("--output", sig.output, "Feature .npy file");
  sig.layout_opt =
      sig_cmd->add_option("--layout", sig.layout_out, "Layout sidecar JSON path");
  sig.threads_opt = sig_cmd->add_option("--threads", sig.threads, "Worker threads");
  sig_cmd->add_option("--config", sig.config_path, "JSON config file");
  sig.pipeline.add_to(sig_cmd);
  sig_cmd->callback([&] { sig.run(); });

  FitCmd fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a Gaussian corpus model");
  fit.input_opt = fit_cmd->add_option("--input", fit.input, "Feature .npy file");
  fit.output_opt = fit_cmd->add_option("--output", fit.output, "Model file");
  fit_cmd->add_option("--config", fit.config_path, "JSON config file");
  fit_cmd->callback([&] { fit.run(); });

  ScoreCmd score;
  auto* score_cmd = app.add_subcommand("score", "Score feature vectors");
  score.input_opt = score_cmd->add_option("--input", score.input, "Query .npy file");
  score.output_opt = score_cmd->add_option("--output", score.output, "Score list");
  score.model_opt = score_cmd->add_option("--model", score.model_path, "Model file");
  score.corpus_opt =
      score_cmd->add_option("--corpus", score.corpus_path, "Corpus feature .npy");
  score.metric_opt =
      score_cmd->add_option("--metric", score.metric, "covnorm or confscore");
  score.format_opt = score_cmd->add_option("--format", score.format, "csv or json");
  score_cmd->add_option("--config", score.config_path, "JSON config file");
  score_cmd->callback([&] { score.run(); });

  DetectCmd det;
  auto* det_cmd = app.add_subcommand("detect", "Calibrate and flag anomalies");
  det.corpus_opt =
      det_cmd->add_option("--corpus", det.corpus_path, "Benign corpus tensors");
  det.label_opt = det_cmd->add_option("--label", det.label, "Class label");
  det.test_opt = det_cmd->add_option("--test", det.test_path, "Test tensors");
  det.report_opt =
      det_cmd->add_option("--output", det.report_path, "Report CSV path");
  det.summary_opt =
      det_cmd->add_option("--summary", det.summary_path, "Run summary JSON path");
  det.metric_opt =
      det_cmd->add_option("--metric", det.metric, "covnorm or confscore");
  det.rule_opt = det_cmd->add_option("--rule", det.rule, "single or all");
  det.percentile_opt =
      det_cmd->add_option("--percentile", det.percentile, "Threshold percentile");
  det.seed_opt = det_cmd->add_option("--seed", det.seed, "Master seed");
  det.threads_opt = det_cmd->add_option("--threads", det.threads, "Worker threads");
  det_cmd->add_option("--config", det.config_path, "JSON config file");
  det.pipeline.add_to(det_cmd);
  det_cmd->callback([&] { det.run(); });

  BackdoorCmd bd;
  auto* bd_cmd =
      app.add_subcommand("backdoor-filter", "Remove suspected poisoned samples");
  bd.dataset_opt =
      bd_cmd->add_option("--dataset", bd.dataset_path, "Suspect tensors");
  bd.clean_opt = bd_cmd->add_option("--clean", bd.clean_path, "Known-clean tensors");
  bd.label_opt = bd_cmd->add_option("--label", bd.label, "Class label");
  bd.budget_opt = bd_cmd->add_option("--budget", bd.budget, "Removals per class");
  bd.outdir_opt =
      bd_cmd->add_option("--output-dir", bd.output_dir, "Filtered dataset dir");
  bd.manifest_opt =
      bd_cmd->add_option("--manifest", bd.manifest_path, "Removal manifest CSV");
  bd.summary_opt =
      bd_cmd->add_option("--summary", bd.summary_path, "Run summary JSON path");
  bd.threads_opt = bd_cmd->add_option("--threads", bd.threads, "Worker threads");
  bd_cmd->add_option("--config", bd.config_path, "JSON config file");
  bd.pipeline.add_to(bd_cmd);
  bd_cmd->callback([&] { bd.run(); });

  EvalCmd ev;
  auto* ev_cmd = app.add_subcommand("eval", "Metrics from a score/label CSV");
  ev.input_opt = ev_cmd->add_option("--input", ev.input, "CSV with score,label");
  ev.output_opt = ev_cmd->add_option("--output", ev.output, "Metric summary path");
  ev.roc_opt = ev_cmd->add_option("--roc", ev.roc_path, "ROC points CSV path");
  ev.cutoff_opt = ev_cmd->add_option("--cutoff", ev.cutoff, "Decision cutoff");
  ev.format_opt = ev_cmd->add_option("--format", ev.format, "csv or json");
  ev_cmd->add_option("--config", ev.config_path, "JSON config file");
  ev_cmd->callback([&] { ev.run(); });

  ValidateBoundsCmd vb;
  auto* vb_cmd =
      app.add_subcommand("validate-bounds", "Monte-Carlo error-bound checks");
  vb.output_opt = vb_cmd->add_option("--output", vb.output, "Report JSON path");
  vb.which_opt =
      vb_cmd->add_option("--which", vb.which, "covnorm, confscore or both");
  vb.dimcov_opt = vb_cmd->add_option("--dim-cov", vb.dim_cov, "Cov-norm dimension");
  vb.dimconf_opt =
      vb_cmd->add_option("--dim-conf", vb.dim_conf, "Conf-score dimension");
  vb.gap_opt = vb_cmd->add_option("--mean-gap", vb.mean_gap, "Mean separation");
  vb.dcov_opt = vb_cmd->add_option("--delta-cov", vb.delta_cov,
                                   "Cov-norm delta (0 = balanced)");
  vb.dconf_opt =
      vb_cmd->add_option("--delta-conf", vb.delta_conf, "Conf-score delta");
  vb.n_opt = vb_cmd->add_option("--corpus-n", vb.corpus_n, "Conf-score corpus size");
  vb.trials_opt = vb_cmd->add_option("--trials", vb.trials, "Monte-Carlo trials");
  vb.seed_opt = vb_cmd->add_option("--seed", vb.seed, "Master seed");
  vb_cmd->add_option("--config", vb.config_path, "JSON config file");
  vb_cmd->callback([&] { vb.run(); });

  TimingCmd tm;
  auto* tm_cmd = app.add_subcommand("timing", "Scoring cost measurements");
  tm.output_opt = tm_cmd->add_option("--output", tm.output, "Timing CSV path");
  tm.task_opt = tm_cmd->add_option("--task", tm.task, "covnorm or confscore");
  tm.sizes_opt = tm_cmd->add_option("--sizes", tm.sizes, "Comma-separated sizes");
  tm.dim_opt = tm_cmd->add_option("--dim", tm.dim, "Feature dimension");
  tm_cmd->add_option("--config", tm.config_path, "JSON config file");
  tm_cmd->callback([&] { tm.run(); });

  SynthCmd sy;
  auto* sy_cmd = app.add_subcommand("synth", "Generate seeded synthetic data");
  sy.output_opt = sy_cmd->add_option("--output", sy.output, "Output .npy path");
  sy.kind_opt = sy_cmd->add_option("--kind", sy.kind, "smoothfield or gaussian");
  sy.count_opt = sy_cmd->add_option("--count", sy.count, "Number of samples");
  sy.seed_opt = sy_cmd->add_option("--seed", sy.seed, "Master seed");
  sy.height_opt = sy_cmd->add_option("--height", sy.height, "Field height");
  sy.width_opt = sy_cmd->add_option("--width", sy.width, "Field width");
  sy.channels_opt = sy_cmd->add_option("--channels", sy.channels, "Field channels");
  sy.corr_opt = sy_cmd->add_option("--corr", sy.corr, "Field correlation length");
  sy.dim_opt = sy_cmd->add_option("--dim", sy.dim, "Gaussian feature dimension");
  sy_cmd->add_option("--config", sy.config_path, "JSON config file");
  sy_cmd->callback([&] { sy.run(); });

  MeanDiffCmd md;
  auto* md_cmd =
      app.add_subcommand("meandiff", "Class-pair mean-difference matrix");
  md.inputs_opt =
      md_cmd->add_option("--inputs", md.inputs, "Per-class feature .npy files");
  md.output_opt = md_cmd->add_option("--output", md.output, "Matrix CSV path");
  md_cmd->add_option("--config", md.config_path, "JSON config file");
  md_cmd->callback([&] { md.run(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    print_error(ErrorKind::Internal, e.what());
    return 1;
  }
  return 0;
}
