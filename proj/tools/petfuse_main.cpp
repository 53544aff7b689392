#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "petfuse/config.hpp"
#include "petfuse/error.hpp"
#include "petfuse/fusion.hpp"
#include "petfuse/metrics.hpp"
#include "petfuse/nifti.hpp"
#include "petfuse/pipeline.hpp"
#include "petfuse/version.hpp"

namespace {

using nlohmann::json;
using namespace petfuse;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct RunArgs {
  std::string config_path;
  std::string output_dir;
  int workers = 0;
};

struct BatchArgs {
  std::string manifest;
  std::string config_path;
  std::string output_dir;
  int jobs = 1;
};

struct FuseArgs {
  std::vector<std::string> masks;
  std::string method = "staple";
  std::string out_path = "consensus.nii.gz";
  std::string report_path;
  double threshold = 0.5;
};

struct MetricsArgs {
  std::string pred;
  std::string gt;
  std::string manifest;
  std::string csv_path;
  std::string json_path;
};

PipelineConfig load_effective_config(const std::string& path,
                                     const std::string& output_override,
                                     int cli_workers) {
  PipelineConfig cfg = load_config(path);
  if (!output_override.empty()) cfg.output_dir = output_override;
  cfg.workers = resolve_workers(cfg, cli_workers);
  return cfg;
}

int cmd_run(const RunArgs& args) {
  const PipelineConfig cfg =
      load_effective_config(args.config_path, args.output_dir, args.workers);
  const RunReport report = run_case(cfg);
  std::printf("case %s: consensus written to %s\n", report.case_id.c_str(),
              report.outputs.front().c_str());
  if (report.has_metrics) std::printf("dice: %.6f\n", report.metrics.dice);
  std::printf("report: %s\n", report.outputs.back().c_str());
  return kExitOk;
}

int cmd_batch(const BatchArgs& args) {
  PipelineConfig cfg = load_effective_config(args.config_path, args.output_dir, 0);
  const BatchSummary summary = run_batch(args.manifest, cfg, args.jobs);
  for (const BatchCase& c : summary.cases) {
    if (c.ok && c.has_dice)
      std::printf("%-24s ok     dice %.6f\n", c.case_id.c_str(), c.dice);
    else if (c.ok)
      std::printf("%-24s ok\n", c.case_id.c_str());
    else
      std::printf("%-24s FAILED %s\n", c.case_id.c_str(), c.error.c_str());
  }
  std::printf("%d succeeded, %d failed", summary.succeeded, summary.failed);
  if (summary.has_mean_dice) std::printf(", mean dice %.6f", summary.mean_dice);
  std::printf(", mean runtime %.0f ms\n", summary.mean_total_ms);
  return summary.failed == 0 ? kExitOk : kExitRuntime;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::fputs(text.c_str(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::IoFailure, "cannot write: " + path);
  out << text;
}

int cmd_fuse(const FuseArgs& args) {
  require(!args.masks.empty(), Errc::ConfigError, "fuse needs at least one mask");
  json report;
  report["engine_version"] = kEngineVersion;
  report["method"] = args.method;
  report["inputs"] = args.masks;

  Volume3 consensus;
  if (args.method == "mean") {
    std::vector<Volume3> maps;
    maps.reserve(args.masks.size());
    for (const std::string& path : args.masks)
      maps.push_back(read_nifti(path, VoxelKind::Probability));
    consensus = mean_prob_fusion(maps, args.threshold);
    report["threshold"] = args.threshold;
  } else {
    RaterStack stack;
    stack.masks.reserve(args.masks.size());
    for (const std::string& path : args.masks)
      stack.masks.push_back(read_nifti(path, VoxelKind::Label));
    if (args.method == "majority") {
      consensus = majority_vote(stack);
    } else if (args.method == "staple") {
      const FusionResult fused = staple(stack, StapleParams{});
      consensus = fused.consensus;
      report["p"] = fused.p;
      report["q"] = fused.q;
      report["iters"] = fused.iters;
      report["converged"] = fused.converged;
      report["degenerate"] = fused.degenerate == StapleDegenerate::None
                                 ? "NONE"
                                 : (fused.degenerate == StapleDegenerate::AllEmpty
                                        ? "ALL_EMPTY"
                                        : "ALL_FULL");
    } else {
      fail(Errc::ConfigError, "method must be staple, majority, or mean");
    }
  }

  write_nifti(consensus, args.out_path);
  report["consensus"] = args.out_path;
  write_or_print(args.report_path, report.dump(2) + "\n");
  if (!args.report_path.empty())
    std::printf("consensus written to %s, report to %s\n", args.out_path.c_str(),
                args.report_path.c_str());
  return kExitOk;
}

int cmd_metrics(const MetricsArgs& args) {
  struct Pair {
    std::string case_id;
    std::string pred;
    std::string gt;
  };
  std::vector<Pair> pairs;
  if (!args.manifest.empty()) {
    std::ifstream in(args.manifest, std::ios::binary);
    require(static_cast<bool>(in), Errc::ConfigError,
            "cannot read manifest: " + args.manifest);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
        line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      const bool header = first && !cells.empty() && cells[0] == "case_id";
      first = false;
      if (header) continue;
      require(cells.size() == 3, Errc::ConfigError,
              "metrics manifest lines must be case_id,pred,gt");
      pairs.push_back({cells[0], cells[1], cells[2]});
    }
  } else {
    require(!args.pred.empty() && !args.gt.empty(), Errc::ConfigError,
            "metrics needs --pred and --gt (or --manifest)");
    pairs.push_back({"case", args.pred, args.gt});
  }
  require(!pairs.empty(), Errc::ConfigError, "metrics manifest lists no cases");

  json out;
  out["engine_version"] = kEngineVersion;
  out["cases"] = json::array();
  std::string csv = "case_id,dice,fp_volume_ml,fn_volume_ml,tp,fp,fn,tn\n";
  double dice_sum = 0.0, fp_sum = 0.0, fn_sum = 0.0;
  for (const Pair& pair : pairs) {
    const Volume3 pred = read_nifti(pair.pred, VoxelKind::Label);
    const Volume3 gt = read_nifti(pair.gt, VoxelKind::Label);
    const CaseMetrics m = evaluate_masks(pred, gt);
    out["cases"].push_back({{"case_id", pair.case_id},
                            {"dice", m.dice},
                            {"fp_volume_ml", m.fp_volume_ml},
                            {"fn_volume_ml", m.fn_volume_ml},
                            {"tp", m.tp},
                            {"fp", m.fp},
                            {"fn", m.fn},
                            {"tn", m.tn}});
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%.9g,%.9g,%.9g,%lld,%lld,%lld,%lld\n",
                  pair.case_id.c_str(), m.dice, m.fp_volume_ml, m.fn_volume_ml,
                  static_cast<long long>(m.tp), static_cast<long long>(m.fp),
                  static_cast<long long>(m.fn), static_cast<long long>(m.tn));
    csv += row;
    dice_sum += m.dice;
    fp_sum += m.fp_volume_ml;
    fn_sum += m.fn_volume_ml;
  }
  const double n = static_cast<double>(pairs.size());
  out["mean"] = {{"dice", dice_sum / n},
                 {"fp_volume_ml", fp_sum / n},
                 {"fn_volume_ml", fn_sum / n}};

  if (!args.csv_path.empty()) write_or_print(args.csv_path, csv);
  if (!args.json_path.empty())
    write_or_print(args.json_path, out.dump(2) + "\n");
  if (args.csv_path.empty() && args.json_path.empty())
    std::fputs((out.dump(2) + "\n").c_str(), stdout);
  return kExitOk;
}

int cmd_preprocess(const RunArgs& args) {
  const PipelineConfig cfg =
      load_effective_config(args.config_path, args.output_dir, args.workers);
  const PreprocessReport report = run_preprocess(cfg);
  for (const std::string& path : report.outputs)
    std::printf("wrote %s\n", path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PET/CT lesion segmentation inference engine"};
  app.set_version_flag("--version", std::string(kEngineVersion));
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "Run one case end to end");
  run->add_option("--config", run_args.config_path, "JSON run configuration")
      ->required();
  run->add_option("--workers", run_args.workers, "Fold worker threads");
  run->add_option("--output", run_args.output_dir, "Override output directory");

  BatchArgs batch_args;
  CLI::App* batch = app.add_subcommand("batch", "Run a manifest of cases");
  batch->add_option("--manifest", batch_args.manifest, "CSV: case_id,ct,pet[,gt]")
      ->required();
  batch->add_option("--config", batch_args.config_path, "JSON config template")
      ->required();
  batch->add_option("--jobs", batch_args.jobs, "Concurrent cases");
  batch->add_option("--output", batch_args.output_dir, "Override output directory");

  FuseArgs fuse_args;
  CLI::App* fuse = app.add_subcommand("fuse", "Fuse binary masks into a consensus");
  fuse->add_option("masks", fuse_args.masks, "Input masks")->required();
  fuse->add_option("--method", fuse_args.method, "staple, majority, or mean");
  fuse->add_option("--threshold", fuse_args.threshold, "Mean-fusion threshold");
  fuse->add_option("--out", fuse_args.out_path, "Consensus output path");
  fuse->add_option("--report", fuse_args.report_path, "Fusion report JSON path");

  MetricsArgs metrics_args;
  CLI::App* metrics = app.add_subcommand("metrics", "Score predictions against gt");
  metrics->add_option("--pred", metrics_args.pred, "Predicted mask");
  metrics->add_option("--gt", metrics_args.gt, "Ground-truth mask");
  metrics->add_option("--manifest", metrics_args.manifest, "CSV: case_id,pred,gt");
  metrics->add_option("--csv", metrics_args.csv_path, "Write per-case CSV here");
  metrics->add_option("--json", metrics_args.json_path, "Write JSON here");

  RunArgs pre_args;
  CLI::App* pre = app.add_subcommand("preprocess", "Preprocess only, for inspection");
  pre->add_option("--config", pre_args.config_path, "JSON run configuration")
      ->required();
  pre->add_option("--output", pre_args.output_dir, "Override output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (batch->parsed()) return cmd_batch(batch_args);
    if (fuse->parsed()) return cmd_fuse(fuse_args);
    if (metrics->parsed()) return cmd_metrics(metrics_args);
    if (pre->parsed()) return cmd_preprocess(pre_args);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == Errc::ConfigError ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
