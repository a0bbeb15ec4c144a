// mtmil: synthetic-cohort generation, split carving, attention-MIL training,
// evaluation statistics, attention analyses, embedding probes, and SVG plots
// behind one executable.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtmil/analysis.hpp"
#include "mtmil/feature_store.hpp"
#include "mtmil/keyval.hpp"
#include "mtmil/mil_net.hpp"
#include "mtmil/parallel.hpp"
#include "mtmil/splitter.hpp"
#include "mtmil/stats.hpp"
#include "mtmil/synthgen.hpp"
#include "mtmil/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtmil;

namespace {

struct RunConfig {
  SynthConfig synth;
  TrainConfig train;
  std::int64_t bootstrap_b = 10000;
  double level = 0.95;
  double alpha = 0.05;
  std::int64_t min_positives = 1;
  std::vector<std::string> target_overrides;
  double temporal_fraction = 0.20;
  std::int64_t k = 5;
  std::uint64_t split_seed = 0;
  double probe_l2 = 1e-2;
  std::uint64_t probe_seed = 7;
  double top_frac = 0.10;
  std::uint64_t stats_seed = 1234;
};

std::vector<std::string> run_config_keys() {
  auto keys = SynthConfig::config_keys();
  for (const auto& k : TrainConfig::config_keys()) keys.push_back(k);
  for (const auto& k : {"bootstrap_b", "level", "alpha", "min_positives",
                        "target_overrides", "temporal_fraction", "k",
                        "split_seed", "probe_l2", "probe_seed", "top_frac",
                        "stats_seed"})
    keys.emplace_back(k);
  return keys;
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  KeyValueFile kv;
  if (!config_path.empty()) kv = KeyValueFile::load(config_path);
  for (const auto& line : overrides) {
    auto patch = KeyValueFile::parse(line);
    for (auto& [key, value] : patch.entries) kv.entries[key] = value;
  }
  kv.reject_unknown(run_config_keys());
  RunConfig cfg;
  cfg.synth = SynthConfig::from_keyval(kv);
  cfg.train = TrainConfig::from_keyval(kv);
  cfg.bootstrap_b = kv.integer("bootstrap_b", cfg.bootstrap_b);
  cfg.level = kv.number("level", cfg.level);
  cfg.alpha = kv.number("alpha", cfg.alpha);
  cfg.min_positives = kv.integer("min_positives", cfg.min_positives);
  cfg.target_overrides = kv.strings("target_overrides");
  cfg.temporal_fraction = kv.number("temporal_fraction", cfg.temporal_fraction);
  cfg.k = kv.integer("k", cfg.k);
  cfg.split_seed =
      static_cast<std::uint64_t>(kv.integer("split_seed", 0));
  cfg.probe_l2 = kv.number("probe_l2", cfg.probe_l2);
  cfg.probe_seed = static_cast<std::uint64_t>(kv.integer("probe_seed", 7));
  cfg.top_frac = kv.number("top_frac", cfg.top_frac);
  cfg.stats_seed = static_cast<std::uint64_t>(kv.integer("stats_seed", 1234));
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::StoreIo, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::StoreIo, "write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StoreIo, "cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<const FeatureBag*> subset_bags(const BagStore& store,
                                           const SplitAssignment& splits,
                                           Subset subset) {
  std::vector<const FeatureBag*> out;
  for (const auto& id : splits.bags_in_subset(subset))
    out.push_back(&store.get(id));
  return out;
}

MetricsReport build_report(const PredictionSet& preds,
                           const CohortManifest& manifest,
                           const RunConfig& cfg, bool with_roc) {
  MetricsReport report;
  for (std::size_t t = 0; t < preds.target_ids.size(); ++t) {
    const auto& target = preds.target_ids[t];
    const int idx = manifest.target_index(target);
    if (idx < 0)
      throw Error(ErrorCode::UnknownTarget, "target not in manifest: " + target);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < preds.bag_ids.size(); ++i) {
      const auto* row = manifest.find(preds.bag_ids[i]);
      const auto y = row->labels[idx];
      if (y == kLabelNA) continue;
      scores.push_back(preds.probs(static_cast<Eigen::Index>(i),
                                   static_cast<Eigen::Index>(t)));
      labels.push_back(y);
    }
    TargetMetrics metrics;
    for (const int y : labels) (y == 1 ? metrics.n_pos : metrics.n_neg) += 1;
    if (metrics.n_pos > 0 && metrics.n_neg > 0) {
      metrics.auc = roc_auc(scores, labels);
      metrics.ci = bootstrap_auc_interval(
          scores, labels, cfg.bootstrap_b, cfg.level,
          cfg.stats_seed + Rng::hash_string(target));
      if (with_roc) metrics.roc = roc_curve(scores, labels);
    }
    report.targets.emplace(target, std::move(metrics));
  }
  report.finalize_summary();
  return report;
}

std::vector<std::string> included_targets(const CohortManifest& manifest,
                                          const RunConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& spec :
       select_targets(manifest, cfg.min_positives, cfg.target_overrides))
    if (spec.included) out.push_back(spec.target_id);
  return out;
}

// One-line machine-parsable failure, plus category exit codes.
int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return error_exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
}

// ---- plotting ----------------------------------------------------------

struct SvgCanvas {
  std::ostringstream body;
  double width = 640, height = 480;
  double ml = 60, mr = 20, mt = 20, mb = 45;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const {
    return ml + (x - x0) / (x1 - x0) * (width - ml - mr);
  }
  double py(double y) const {
    return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb);
  }

  std::string render(const std::string& x_label, const std::string& y_label,
                     bool with_meta) const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\">\n";
    if (with_meta) {
      const auto now = std::chrono::system_clock::now();
      out << "<!-- generated "
          << std::chrono::duration_cast<std::chrono::seconds>(
                 now.time_since_epoch())
                 .count()
          << " -->\n";
    }
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\""
        << width - ml - mr << "\" height=\"" << height - mt - mb
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double fx = x0 + (x1 - x0) * i / 4.0;
      const double fy = y0 + (y1 - y0) * i / 4.0;
      out << "<text x=\"" << px(fx) << "\" y=\"" << height - mb + 18
          << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt_double(fx)
          << "</text>\n";
      out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
          << "\" font-size=\"11\" text-anchor=\"end\">" << fmt_double(fy)
          << "</text>\n";
    }
    out << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 8
        << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label
        << "</text>\n";
    out << "<text x=\"14\" y=\"" << (mt + height - mb) / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 "
           "14 "
        << (mt + height - mb) / 2 << ")\">" << y_label << "</text>\n";
    out << body.str();
    out << "</svg>\n";
    return out.str();
  }
};

std::string plot_roc(const MetricsReport& report, bool with_meta) {
  SvgCanvas canvas;
  canvas.body << "<line x1=\"" << canvas.px(0) << "\" y1=\"" << canvas.py(0)
              << "\" x2=\"" << canvas.px(1) << "\" y2=\"" << canvas.py(1)
              << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  const std::vector<std::string> palette = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                            "#d62728", "#9467bd", "#8c564b",
                                            "#e377c2", "#7f7f7f"};
  std::size_t color = 0;
  for (const auto& [id, metrics] : report.targets) {
    if (metrics.roc.empty()) continue;
    canvas.body << "<polyline fill=\"none\" stroke=\""
                << palette[color % palette.size()] << "\" points=\"";
    for (const auto& [fpr, tpr] : metrics.roc)
      canvas.body << fmt_double(canvas.px(fpr)) << ','
                  << fmt_double(canvas.py(tpr)) << ' ';
    canvas.body << "\"/>\n";
    canvas.body << "<text x=\"" << canvas.width - canvas.mr - 4 << "\" y=\""
                << canvas.mt + 14 + 14 * double(color)
                << "\" font-size=\"11\" text-anchor=\"end\" fill=\""
                << palette[color % palette.size()] << "\">" << id
                << "</text>\n";
    ++color;
  }
  return canvas.render("false positive rate", "true positive rate", with_meta);
}

std::string plot_report_scatter(const MetricsReport& report, bool with_meta) {
  SvgCanvas canvas;
  canvas.x0 = 0;
  canvas.x1 = double(std::max<std::size_t>(report.targets.size(), 1));
  std::size_t i = 0;
  for (const auto& [id, metrics] : report.targets) {
    const double x = double(i) + 0.5;
    if (metrics.ci)
      canvas.body << "<line x1=\"" << canvas.px(x) << "\" y1=\""
                  << canvas.py(metrics.ci->first) << "\" x2=\"" << canvas.px(x)
                  << "\" y2=\"" << canvas.py(metrics.ci->second)
                  << "\" stroke=\"#555\"/>\n";
    if (metrics.auc)
      canvas.body << "<circle cx=\"" << canvas.px(x) << "\" cy=\""
                  << canvas.py(*metrics.auc)
                  << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
    canvas.body << "<text x=\"" << canvas.px(x) << "\" y=\""
                << canvas.height - canvas.mb + 32
                << "\" font-size=\"9\" text-anchor=\"middle\">" << id
                << "</text>\n";
    ++i;
  }
  return canvas.render("target", "ROC-AUC", with_meta);
}

std::string plot_compare_scatter(const json& cmp, bool with_meta) {
  SvgCanvas canvas;
  const bool use_prevalence = cmp["deltas"].size() > 0 &&
                              cmp["deltas"][0].contains("prevalence");
  if (use_prevalence) {
    // Gain vs prevalence.
    double dmin = 0, dmax = 0;
    for (const auto& d : cmp["deltas"]) {
      dmin = std::min(dmin, d["delta"].get<double>());
      dmax = std::max(dmax, d["delta"].get<double>());
    }
    canvas.y0 = dmin - 0.02;
    canvas.y1 = dmax + 0.02;
    canvas.x1 = 0.5;
    canvas.body << "<line x1=\"" << canvas.px(0) << "\" y1=\"" << canvas.py(0)
                << "\" x2=\"" << canvas.px(canvas.x1) << "\" y2=\""
                << canvas.py(0) << "\" stroke=\"#999\"/>\n";
    for (const auto& d : cmp["deltas"]) {
      if (!d.contains("prevalence")) continue;
      canvas.body << "<circle cx=\""
                  << canvas.px(d["prevalence"].get<double>()) << "\" cy=\""
                  << canvas.py(d["delta"].get<double>())
                  << "\" r=\"4\" fill=\"#d62728\"/>\n";
    }
    return canvas.render("prevalence", "AUC gain", with_meta);
  }
  canvas.body << "<line x1=\"" << canvas.px(0) << "\" y1=\"" << canvas.py(0)
              << "\" x2=\"" << canvas.px(1) << "\" y2=\"" << canvas.py(1)
              << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  for (const auto& d : cmp["deltas"])
    canvas.body << "<circle cx=\"" << canvas.px(d["auc_b"].get<double>())
                << "\" cy=\"" << canvas.py(d["auc_a"].get<double>())
                << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
  return canvas.render("single-task ROC-AUC", "multi-task ROC-AUC", with_meta);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task attention-MIL toolkit for slide-level "
               "classification over bags of tile features"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "Worker thread cap (default: MTMIL_THREADS env or all cores)");

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "Run config file (TOML key = value)")
      ->each([](const std::string&) {});
  app.add_option("--set", sets, "Config override, e.g. --set \"n_bags = 50\"");

  std::ostringstream footer;
  footer << "Config keys (flat TOML, every key optional):\n"
         << "  seed=42 n_bags=100 dim=64 targets=[] n_programs=0\n"
         << "  program_activity=[] label_noise=0 tiles_min=50 tiles_max=150\n"
         << "  tumor_fraction_mean=0.3 signal_amplitude=1 noise_sigma=1\n"
         << "  external_fraction=0 stain_shift_magnitude=0 grade_effect=0\n"
         << "  site_effect=0 learning_rate=1e-3 weight_decay=1e-4\n"
         << "  batch_size=16 train_bag_size=100 infer_bag_size=1000\n"
         << "  max_epochs=30 patience=5 gated_attention=false hidden=128\n"
         << "  attn_dim=64 train_seed=0 bootstrap_b=10000 level=0.95\n"
         << "  alpha=0.05 min_positives=1 target_overrides=[]\n"
         << "  temporal_fraction=0.2 k=5 split_seed=0 probe_l2=0.01\n"
         << "  probe_seed=7 top_frac=0.1 stats_seed=1234";
  app.footer(footer.str());

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic cohort store");
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output store directory")->required();

  // split
  auto* split = app.add_subcommand("split", "Carve holdouts and CV folds");
  std::string split_store, split_out;
  split->add_option("--store", split_store, "Feature store directory")
      ->required();
  split->add_option("--out", split_out, "Output split CSV")->required();
  int split_k = -1;
  std::int64_t split_seed_flag = -1;
  split->add_option("--k", split_k, "Fold count (overrides config)");
  split->add_option("--seed", split_seed_flag, "Split seed (overrides config)");

  // train
  auto* train = app.add_subcommand("train", "Train cross-validation models");
  std::string train_store, train_splits, train_mode = "multitask", train_out;
  train->add_option("--store", train_store, "Feature store directory")
      ->required();
  train->add_option("--splits", train_splits, "Split CSV from `split`")
      ->required();
  train->add_option("--mode", train_mode, "multitask or singletask:TARGET");
  train->add_option("--out", train_out, "Output model directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate models on a subset");
  std::string eval_models, eval_store, eval_splits, eval_subset = "dev",
              eval_out, eval_preds;
  eval->add_option("--models", eval_models, "Model directory")->required();
  eval->add_option("--store", eval_store, "Feature store directory")
      ->required();
  eval->add_option("--splits", eval_splits, "Split CSV")->required();
  eval->add_option("--subset", eval_subset, "dev, temporal, or external");
  eval->add_option("--out", eval_out, "Output report JSON")->required();
  eval->add_option("--preds", eval_preds,
                   "Optional predictions CSV (bag_id,target_id,prob)");

  // compare
  auto* compare = app.add_subcommand("compare", "Compare two reports");
  std::string cmp_a, cmp_b, cmp_test = "t", cmp_prev, cmp_out;
  compare->add_option("--a", cmp_a, "Report A JSON")->required();
  compare->add_option("--b", cmp_b, "Report B JSON")->required();
  compare->add_option("--test", cmp_test, "t or wilcoxon");
  compare->add_option("--prevalences", cmp_prev,
                      "CSV target_id,prevalence for the gain correlation");
  compare->add_option("--out", cmp_out, "Output comparison JSON")->required();

  // attn
  auto* attn = app.add_subcommand("attn", "Attention analyses and heatmaps");
  std::string attn_models, attn_store, attn_splits, attn_subset = "all",
              attn_out;
  attn->add_option("--models", attn_models, "Model directory")->required();
  attn->add_option("--store", attn_store, "Feature store directory")
      ->required();
  attn->add_option("--splits", attn_splits,
                   "Split CSV (required unless --subset all)");
  attn->add_option("--subset", attn_subset, "all, dev, temporal, or external");
  attn->add_option("--out", attn_out, "Output directory")->required();

  // probe
  auto* probe = app.add_subcommand("probe", "Embedding probes");
  std::string probe_models, probe_store, probe_task = "grade", probe_out;
  probe->add_option("--models", probe_models, "Model directory")->required();
  probe->add_option("--store", probe_store, "Feature store directory")
      ->required();
  probe->add_option("--task", probe_task, "grade or primary_site");
  probe->add_option("--out", probe_out, "Output probe JSON")->required();

  // plot
  auto* plot = app.add_subcommand("plot", "Static SVG figures");
  std::string plot_in, plot_kind = "scatter", plot_out;
  bool no_meta = false;
  plot->add_option("--in", plot_in, "report.json or cmp.json")->required();
  plot->add_option("--kind", plot_kind, "scatter or roc");
  plot->add_option("--out", plot_out, "Output SVG")->required();
  plot->add_flag("--no-meta", no_meta, "Suppress the timestamp comment");

  CLI11_PARSE(app, argc, argv);
  set_threads(threads);

  return run_guarded([&] {
    const auto cfg = load_run_config(config_path, sets);

    if (gen->parsed()) {
      auto [bags, manifest] = generate_cohort(cfg.synth);
      write_feature_store(bags, manifest, gen_out);
      return;
    }

    if (split->parsed()) {
      auto [bags, manifest] = read_feature_store(split_store);
      const int k = split_k > 0 ? split_k : static_cast<int>(cfg.k);
      const auto seed = split_seed_flag >= 0
                            ? static_cast<std::uint64_t>(split_seed_flag)
                            : cfg.split_seed;
      auto assignment = carve_holdouts(manifest, cfg.temporal_fraction);
      const auto dev = assignment.bags_in_subset(Subset::kDev);
      if (dev.empty()) throw Error(ErrorCode::EmptyDev, "dev set is empty");
      stratified_kfold(build_strat_labels(manifest, dev), k, seed, assignment);
      write_text(split_out, assignment.to_csv());
      return;
    }

    if (train->parsed()) {
      auto [bags, manifest] = read_feature_store(train_store);
      BagStore store(std::move(bags));
      auto assignment = SplitAssignment::from_csv(read_text(train_splits));
      if (assignment.bags_in_subset(Subset::kDev).empty())
        throw Error(ErrorCode::EmptyDev, "no dev bags in split file");
      const auto targets = included_targets(manifest, cfg);
      if (targets.empty())
        throw Error(ErrorCode::ConfigError, "no included target");
      const auto mode = ModeSpec::parse(train_mode);
      const auto models =
          train_cv(store, manifest, assignment, targets, cfg.train, mode);
      save_fold_models(models, train_out);
      return;
    }

    if (eval->parsed()) {
      auto [bags, manifest] = read_feature_store(eval_store);
      BagStore store(std::move(bags));
      const auto splits = SplitAssignment::from_csv(read_text(eval_splits));
      const auto models = load_fold_models(eval_models);
      PredictionSet preds;
      if (eval_subset == "dev") {
        preds = predict_cv(models, store, splits, models.config);
      } else {
        const auto bag_ptrs =
            subset_bags(store, splits, parse_subset(eval_subset));
        if (bag_ptrs.empty())
          throw Error(ErrorCode::EmptyCohort,
                      "subset " + eval_subset + " is empty");
        preds = predict(models, bag_ptrs, models.config, /*ensemble=*/true);
      }
      const auto report = build_report(preds, manifest, cfg, /*with_roc=*/true);
      write_text(eval_out, report.to_json());
      if (!eval_preds.empty()) {
        std::ostringstream csv;
        csv << "bag_id,target_id,prob\n";
        for (std::size_t i = 0; i < preds.bag_ids.size(); ++i)
          for (std::size_t t = 0; t < preds.target_ids.size(); ++t)
            csv << preds.bag_ids[i] << ',' << preds.target_ids[t] << ','
                << fmt_double(preds.probs(static_cast<Eigen::Index>(i),
                                          static_cast<Eigen::Index>(t)))
                << '\n';
        write_text(eval_preds, csv.str());
      }
      return;
    }

    if (compare->parsed()) {
      const auto report_a = MetricsReport::from_json(read_text(cmp_a));
      const auto report_b = MetricsReport::from_json(read_text(cmp_b));
      CompareTest test;
      if (cmp_test == "t")
        test = CompareTest::kPairedT;
      else if (cmp_test == "wilcoxon")
        test = CompareTest::kWilcoxon;
      else
        throw Error(ErrorCode::ConfigError, "test must be t or wilcoxon");
      std::map<std::string, double> prevalences;
      const bool have_prev = !cmp_prev.empty();
      if (have_prev) {
        std::istringstream in(read_text(cmp_prev));
        std::string line;
        if (!std::getline(in, line) ||
            line.rfind("target_id,prevalence", 0) != 0)
          throw Error(ErrorCode::FormatError, "bad prevalence CSV header");
        while (std::getline(in, line)) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (line.empty()) continue;
          const auto comma = line.find(',');
          if (comma == std::string::npos)
            throw Error(ErrorCode::FormatError, "bad prevalence row: " + line);
          prevalences[line.substr(0, comma)] =
              std::stod(line.substr(comma + 1));
        }
      }
      const auto result = compare_reports(report_a, report_b, test,
                                          have_prev ? &prevalences : nullptr);
      write_text(cmp_out, result.to_json());
      return;
    }

    if (attn->parsed()) {
      auto [bags, manifest] = read_feature_store(attn_store);
      BagStore store(std::move(bags));
      const auto models = load_fold_models(attn_models);
      std::vector<const FeatureBag*> bag_ptrs;
      if (attn_subset == "all") {
        for (const auto& bag : store.all()) bag_ptrs.push_back(&bag);
      } else {
        if (attn_splits.empty())
          throw Error(ErrorCode::ConfigError,
                      "--splits required for subset " + attn_subset);
        const auto splits = SplitAssignment::from_csv(read_text(attn_splits));
        bag_ptrs = subset_bags(store, splits, parse_subset(attn_subset));
      }
      if (bag_ptrs.empty())
        throw Error(ErrorCode::EmptyCohort, "no bags selected");
      const auto preds =
          predict(models, bag_ptrs, models.config, /*ensemble=*/true);
      auto report = high_attention_fractions(preds, store, cfg.top_frac);
      const auto auc = attention_annotation_auc(
          preds, store, cfg.bootstrap_b, cfg.level, cfg.stats_seed);
      report.attention_auc = auc.auc;
      report.attention_auc_ci = auc.ci;
      fs::create_directories(attn_out);
      write_text((fs::path(attn_out) / "attention_report.json").string(),
                 report.to_json());
      for (std::size_t i = 0; i < preds.bag_ids.size(); ++i) {
        const auto& bag = store.get(preds.bag_ids[i]);
        std::ostringstream csv;
        csv << "tile_index,x,y,attention\n";
        for (std::size_t k = 0; k < preds.tile_indices[i].size(); ++k) {
          const auto tile = preds.tile_indices[i][k];
          const auto x = bag.tile_coords ? (*bag.tile_coords)[2 * tile] : 0;
          const auto y = bag.tile_coords ? (*bag.tile_coords)[2 * tile + 1] : 0;
          csv << tile << ',' << x << ',' << y << ','
              << fmt_double(
                     preds.attention[i][static_cast<Eigen::Index>(k)])
              << '\n';
        }
        write_text(
            (fs::path(attn_out) / (preds.bag_ids[i] + "_attention.csv"))
                .string(),
            csv.str());
      }
      return;
    }

    if (probe->parsed()) {
      auto [bags, manifest] = read_feature_store(probe_store);
      BagStore store(std::move(bags));
      const auto models = load_fold_models(probe_models);
      if (probe_task != "grade" && probe_task != "primary_site")
        throw Error(ErrorCode::ConfigError,
                    "task must be grade or primary_site");
      std::vector<const FeatureBag*> bag_ptrs;
      std::vector<int> labels;
      for (const auto& row : manifest.rows) {
        std::optional<bool> value = probe_task == "grade"
                                        ? row.grade_high
                                        : row.is_primary_site;
        if (!value) continue;
        bag_ptrs.push_back(&store.get(row.bag_id));
        labels.push_back(*value ? 1 : 0);
      }
      if (bag_ptrs.empty())
        throw Error(ErrorCode::MissingTruth,
                    "no bag carries a " + probe_task + " label");
      const auto embeddings =
          extract_embeddings(models, bag_ptrs, models.config);
      auto result = logistic_probe(embeddings, labels, cfg.probe_l2,
                                   cfg.probe_seed, cfg.bootstrap_b, cfg.level);
      result.task = probe_task;
      write_text(probe_out, result.to_json());
      return;
    }

    if (plot->parsed()) {
      json in;
      try {
        in = json::parse(read_text(plot_in));
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::FormatError,
                    std::string("bad input JSON: ") + e.what());
      }
      std::string svg;
      if (plot_kind == "roc") {
        if (!in.contains("summary"))
          throw Error(ErrorCode::FormatError,
                      "roc plot needs a report with curves");
        svg = plot_roc(MetricsReport::from_json(in.dump()), !no_meta);
      } else if (plot_kind == "scatter") {
        if (in.contains("deltas"))
          svg = plot_compare_scatter(in, !no_meta);
        else if (in.contains("summary"))
          svg = plot_report_scatter(MetricsReport::from_json(in.dump()),
                                    !no_meta);
        else
          throw Error(ErrorCode::FormatError, "unrecognized plot input");
      } else {
        throw Error(ErrorCode::ConfigError, "kind must be scatter or roc");
      }
      write_text(plot_out, svg);
      return;
    }
  });
}
