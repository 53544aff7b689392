// End-to-end tests that drive the installed binary through a shell, the same
// way a user would. PETFUSE_BIN and FAKE_PREDICTOR_BIN are injected by CMake.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "petfuse/fusion.hpp"
#include "petfuse/metrics.hpp"
#include "petfuse/nifti.hpp"
#include "petfuse/version.hpp"
#include "petfuse/volume.hpp"
#include "phantom.hpp"
#include "test_volumes.hpp"

namespace {

using nlohmann::json;
using namespace petfuse;

struct CmdResult {
  int status = -1;
  std::string output;
};

// Runs a shell command, capturing stdout and stderr interleaved. status is
// the exit code, or -1 if the process did not exit normally.
CmdResult run_cmd(const std::string& cmd) {
  CmdResult result;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  REQUIRE(pipe != nullptr);
  char chunk[4096];
  std::size_t got;
  while ((got = std::fread(chunk, 1, sizeof(chunk), pipe)) > 0)
    result.output.append(chunk, got);
  const int raw = pclose(pipe);
  if (WIFEXITED(raw)) result.status = WEXITSTATUS(raw);
  return result;
}

std::string q(const std::string& s) { return "'" + s + "'"; }
std::string q(const std::filesystem::path& p) { return q(p.string()); }

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

json slurp_json(const std::filesystem::path& path) {
  return json::parse(slurp(path));
}

// Phantom inputs plus a config skeleton on disk, ready for the binary.
struct CliCase {
  testutil::TempDir dir;
  std::filesystem::path out;

  explicit CliCase(const std::string& tag, int n = 48)
      : dir("petfuse_cli_" + tag), out(dir.path() / "out") {
    const testutil::PhantomCase ph = testutil::make_phantom(n);
    write_nifti(ph.ct, dir.path() / "ct.nii.gz");
    write_nifti(ph.pet, dir.path() / "pet.nii.gz");
    write_nifti(ph.gt, dir.path() / "gt.nii.gz");
  }

  json base_config(bool with_gt = true) const {
    json cfg;
    cfg["schema"] = 1;
    cfg["case_id"] = "cli_phantom";
    cfg["input_ct"] = (dir.path() / "ct.nii.gz").string();
    cfg["input_pet"] = (dir.path() / "pet.nii.gz").string();
    if (with_gt) cfg["gt"] = (dir.path() / "gt.nii.gz").string();
    cfg["output_dir"] = out.string();
    cfg["patch"] = {{"size", {32, 32, 32}}, {"overlap_frac", 0.5},
                    {"sigma_scale", 0.125}};
    cfg["folds"] = json::array(
        {{{"kind", "ORACLE"}, {"seed", 1}, {"noise_amp", 0.0},
          {"smooth_sigma_mm", 0.0}}});
    cfg["fusion"] = {{"method", "MEAN"}};
    return cfg;
  }

  std::string write_config(const json& cfg,
                           const std::string& name = "config.json") const {
    const std::string path = dir.str(name);
    std::ofstream f(path, std::ios::binary);
    f << cfg.dump(2) << "\n";
    return path;
  }
};

const std::string kBin = PETFUSE_BIN;
const std::string kFake = FAKE_PREDICTOR_BIN;

}  // namespace

TEST_CASE("--version prints the engine version and exits 0") {
  const CmdResult r = run_cmd(q(kBin) + " --version");
  CHECK(r.status == 0);
  CHECK(contains(r.output, kEngineVersion));
}

TEST_CASE("run completes a noise-free oracle case") {
  CliCase c("run_ok");
  const std::string cfg = c.write_config(c.base_config());

  const CmdResult r = run_cmd(q(kBin) + " run --config " + q(cfg));
  INFO(r.output);
  CHECK(r.status == 0);
  CHECK(contains(r.output, "case cli_phantom"));
  CHECK(contains(r.output, "dice: 1.000000"));

  CHECK(std::filesystem::exists(c.out / "consensus.nii.gz"));
  CHECK(std::filesystem::exists(c.out / "consensus_pre.nii.gz"));
  CHECK(std::filesystem::exists(c.out / "fold_0_mask.nii.gz"));

  const json report = slurp_json(c.out / "report.json");
  CHECK(report.at("engine_version").get<std::string>() == kEngineVersion);
  CHECK(report.at("case_id").get<std::string>() == "cli_phantom");
  CHECK(report.at("metrics").at("dice").get<double>() == 1.0);

  const Volume3 consensus = read_nifti(c.out / "consensus.nii.gz", VoxelKind::Label);
  const Volume3 gt = read_nifti(c.dir.path() / "gt.nii.gz", VoxelKind::Label);
  CHECK(bitwise_equal(consensus, gt));
}

TEST_CASE("run honours the --output override") {
  CliCase c("run_out");
  const std::string cfg = c.write_config(c.base_config());
  const std::filesystem::path other = c.dir.path() / "elsewhere";

  const CmdResult r =
      run_cmd(q(kBin) + " run --config " + q(cfg) + " --output " + q(other));
  INFO(r.output);
  CHECK(r.status == 0);
  CHECK(std::filesystem::exists(other / "consensus.nii.gz"));
  CHECK(!std::filesystem::exists(c.out / "consensus.nii.gz"));
}

TEST_CASE("configuration problems exit with code 2") {
  CliCase c("run_cfg");

  SUBCASE("missing required --config flag") {
    const CmdResult r = run_cmd(q(kBin) + " run");
    CHECK(r.status == 2);
  }
  SUBCASE("config file does not exist") {
    const CmdResult r =
        run_cmd(q(kBin) + " run --config " + q(c.dir.str("nope.json")));
    CHECK(r.status == 2);
    CHECK(contains(r.output, "error:"));
  }
  SUBCASE("config is not valid JSON") {
    const std::string path = c.dir.str("broken.json");
    std::ofstream(path) << "{ not json";
    const CmdResult r = run_cmd(q(kBin) + " run --config " + q(path));
    CHECK(r.status == 2);
  }
  SUBCASE("config has an unknown key") {
    json cfg = c.base_config();
    cfg["patchsize"] = 3;
    const CmdResult r = run_cmd(q(kBin) + " run --config " + q(c.write_config(cfg)));
    CHECK(r.status == 2);
    CHECK(contains(r.output, "patchsize"));
  }
  SUBCASE("oracle fold without ground truth") {
    json cfg = c.base_config(false);
    const CmdResult r = run_cmd(q(kBin) + " run --config " + q(c.write_config(cfg)));
    CHECK(r.status == 2);
    CHECK(contains(r.output, "gt"));
  }
  SUBCASE("unknown subcommand") {
    const CmdResult r = run_cmd(q(kBin) + " frobnicate");
    CHECK(r.status == 2);
  }
}

TEST_CASE("run drives an external predictor over the exchange protocol") {
  CliCase c("run_ext");
  json cfg = c.base_config();
  cfg["folds"] = json::array(
      {{{"kind", "EXTERNAL"}, {"command", kFake + " sigmoid"}}});

  const CmdResult r = run_cmd(q(kBin) + " run --config " + q(c.write_config(cfg)));
  INFO(r.output);
  CHECK(r.status == 0);
  CHECK(std::filesystem::exists(c.out / "consensus.nii.gz"));
  const json report = slurp_json(c.out / "report.json");
  CHECK(report.at("folds").size() == 1);
}

TEST_CASE("external predictor failures exit with code 3") {
  CliCase c("run_extfail");

  auto run_mode = [&](const std::string& mode) {
    json cfg = c.base_config();
    cfg["folds"] = json::array(
        {{{"kind", "EXTERNAL"}, {"command", kFake + " " + mode}}});
    return run_cmd(q(kBin) + " run --config " + q(c.write_config(cfg)));
  };

  SUBCASE("command exits nonzero") {
    const CmdResult r = run_mode("fail");
    CHECK(r.status == 3);
    CHECK(contains(r.output, "fold 0"));
  }
  SUBCASE("command never writes a probability map") {
    const CmdResult r = run_mode("no-output");
    CHECK(r.status == 3);
  }
  SUBCASE("reply has the wrong dimensions") {
    const CmdResult r = run_mode("wrong-dims");
    CHECK(r.status == 3);
  }
  SUBCASE("reply contains a non-finite voxel") {
    const CmdResult r = run_mode("nan");
    CHECK(r.status == 3);
  }
  CHECK(!std::filesystem::exists(c.out / "consensus.nii.gz"));
}

TEST_CASE("PETFUSE_WORKERS is honoured and validated") {
  CliCase c("run_env");
  const std::string cfg = c.write_config(c.base_config());

  SUBCASE("a valid value is accepted") {
    const CmdResult r =
        run_cmd("PETFUSE_WORKERS=2 " + q(kBin) + " run --config " + q(cfg));
    INFO(r.output);
    CHECK(r.status == 0);
    CHECK(slurp_json(c.out / "report.json").at("workers").get<int>() == 2);
  }
  SUBCASE("garbage is a configuration error") {
    const CmdResult r =
        run_cmd("PETFUSE_WORKERS=abc " + q(kBin) + " run --config " + q(cfg));
    CHECK(r.status == 2);
    CHECK(contains(r.output, "PETFUSE_WORKERS"));
  }
}

TEST_CASE("fuse matches the library fusion routines") {
  testutil::TempDir dir("petfuse_cli_fuse");
  std::mt19937 rng(404);
  const Index3 dims{7, 6, 5};

  RaterStack stack;
  std::string mask_args;
  for (int k = 0; k < 5; ++k) {
    Volume3 mask = testutil::random_mask(rng, dims, 0.4);
    const std::string path = dir.str("mask_" + std::to_string(k) + ".nii.gz");
    write_nifti(mask, path);
    stack.masks.push_back(std::move(mask));
    mask_args += " " + q(path);
  }
  const std::string out_path = dir.str("consensus.nii.gz");

  SUBCASE("staple, with a JSON report") {
    const std::string report_path = dir.str("fusion.json");
    const CmdResult r = run_cmd(q(kBin) + " fuse" + mask_args +
                                " --method staple --out " + q(out_path) +
                                " --report " + q(report_path));
    INFO(r.output);
    CHECK(r.status == 0);

    const FusionResult expected = staple(stack, StapleParams{});
    const Volume3 consensus = read_nifti(out_path, VoxelKind::Label);
    CHECK(bitwise_equal(consensus, expected.consensus));

    const json report = slurp_json(report_path);
    CHECK(report.at("method").get<std::string>() == "staple");
    CHECK(report.at("iters").get<int>() == expected.iters);
    CHECK(report.at("converged").get<bool>() == expected.converged);
    REQUIRE(report.at("p").size() == 5);
    for (int k = 0; k < 5; ++k) {
      CHECK(report.at("p")[k].get<double>() == doctest::Approx(expected.p[k]).epsilon(1e-12));
      CHECK(report.at("q")[k].get<double>() == doctest::Approx(expected.q[k]).epsilon(1e-12));
    }
  }
  SUBCASE("majority") {
    const CmdResult r = run_cmd(q(kBin) + " fuse" + mask_args +
                                " --method majority --out " + q(out_path));
    CHECK(r.status == 0);
    const Volume3 consensus = read_nifti(out_path, VoxelKind::Label);
    CHECK(bitwise_equal(consensus, majority_vote(stack)));
  }
  SUBCASE("mean with a custom threshold") {
    // Masks are valid probability maps too, so reuse them.
    const CmdResult r = run_cmd(q(kBin) + " fuse" + mask_args +
                                " --method mean --threshold 0.39 --out " + q(out_path));
    CHECK(r.status == 0);
    std::vector<Volume3> maps;
    for (Volume3& m : stack.masks) {
      maps.push_back(m);
      maps.back().kind = VoxelKind::Probability;
    }
    const Volume3 consensus = read_nifti(out_path, VoxelKind::Label);
    CHECK(bitwise_equal(consensus, mean_prob_fusion(maps, 0.39)));
  }
  SUBCASE("unknown method exits with code 2") {
    const CmdResult r = run_cmd(q(kBin) + " fuse" + mask_args +
                                " --method quorum --out " + q(out_path));
    CHECK(r.status == 2);
    CHECK(contains(r.output, "method"));
  }
  SUBCASE("no input masks exits with code 2") {
    const CmdResult r = run_cmd(q(kBin) + " fuse --method staple");
    CHECK(r.status == 2);
  }
}

TEST_CASE("metrics scores mask pairs") {
  testutil::TempDir dir("petfuse_cli_metrics");
  std::mt19937 rng(505);
  const Index3 dims{9, 8, 7};

  const Volume3 pred = testutil::random_mask(rng, dims, 0.3);
  Volume3 gt = testutil::random_mask(rng, dims, 0.3);
  gt.spacing = pred.spacing;
  gt.origin = pred.origin;
  gt.direction = pred.direction;
  write_nifti(pred, dir.str("pred.nii.gz"));
  write_nifti(gt, dir.str("gt.nii.gz"));
  const CaseMetrics expected = evaluate_masks(pred, gt);

  SUBCASE("single pair prints JSON to stdout") {
    const CmdResult r = run_cmd(q(kBin) + " metrics --pred " + q(dir.str("pred.nii.gz")) +
                                " --gt " + q(dir.str("gt.nii.gz")));
    INFO(r.output);
    CHECK(r.status == 0);
    const json out = json::parse(r.output);
    REQUIRE(out.at("cases").size() == 1);
    CHECK(out.at("cases")[0].at("dice").get<double>() ==
          doctest::Approx(expected.dice).epsilon(1e-12));
    CHECK(out.at("cases")[0].at("tp").get<long long>() == expected.tp);
    CHECK(out.at("mean").at("dice").get<double>() ==
          doctest::Approx(expected.dice).epsilon(1e-12));
  }
  SUBCASE("manifest mode writes CSV and JSON files") {
    std::ofstream(dir.str("pairs.csv"))
        << "case_id,pred,gt\n"
        << "alpha," << dir.str("pred.nii.gz") << "," << dir.str("gt.nii.gz") << "\n"
        << "# comment\n"
        << "beta," << dir.str("gt.nii.gz") << "," << dir.str("gt.nii.gz") << "\n";
    const CmdResult r = run_cmd(q(kBin) + " metrics --manifest " + q(dir.str("pairs.csv")) +
                                " --csv " + q(dir.str("scores.csv")) +
                                " --json " + q(dir.str("scores.json")));
    INFO(r.output);
    CHECK(r.status == 0);

    const std::string csv = slurp(dir.str("scores.csv"));
    CHECK(contains(csv, "case_id,dice,fp_volume_ml,fn_volume_ml,tp,fp,fn,tn"));
    CHECK(contains(csv, "alpha,"));
    CHECK(contains(csv, "beta,1,"));

    const json out = slurp_json(dir.str("scores.json"));
    REQUIRE(out.at("cases").size() == 2);
    CHECK(out.at("cases")[1].at("dice").get<double>() == 1.0);
    CHECK(out.at("mean").at("dice").get<double>() ==
          doctest::Approx((expected.dice + 1.0) / 2.0).epsilon(1e-12));
  }
  SUBCASE("missing arguments exit with code 2") {
    const CmdResult r = run_cmd(q(kBin) + " metrics --pred " + q(dir.str("pred.nii.gz")));
    CHECK(r.status == 2);
  }
  SUBCASE("a malformed manifest row exits with code 2") {
    std::ofstream(dir.str("bad.csv")) << "alpha,only_two_cells\n";
    const CmdResult r = run_cmd(q(kBin) + " metrics --manifest " + q(dir.str("bad.csv")));
    CHECK(r.status == 2);
  }
  SUBCASE("an unreadable mask exits with code 3") {
    const CmdResult r = run_cmd(q(kBin) + " metrics --pred " + q(dir.str("absent.nii.gz")) +
                                " --gt " + q(dir.str("gt.nii.gz")));
    CHECK(r.status == 3);
  }
}

TEST_CASE("preprocess writes the intermediate volumes") {
  CliCase c("preprocess");
  const std::string cfg = c.write_config(c.base_config());

  const CmdResult r = run_cmd(q(kBin) + " preprocess --config " + q(cfg));
  INFO(r.output);
  CHECK(r.status == 0);
  for (const char* name : {"body_mask.nii.gz", "pre_ct.nii.gz", "pre_pet.nii.gz",
                           "pre_gt.nii.gz", "preprocess.json"}) {
    CHECK(std::filesystem::exists(c.out / name));
    CHECK(contains(r.output, name));
  }
  const json report = slurp_json(c.out / "preprocess.json");
  CHECK(report.at("preprocessed_dims").size() == 3);
}

TEST_CASE("batch reports per-case outcomes") {
  CliCase c("batch");
  json cfg = c.base_config();
  cfg.erase("case_id");
  cfg.erase("input_ct");
  cfg.erase("input_pet");
  cfg.erase("gt");
  const std::string cfg_path = c.write_config(cfg);

  const std::string ct = (c.dir.path() / "ct.nii.gz").string();
  const std::string pet = (c.dir.path() / "pet.nii.gz").string();
  const std::string gt = (c.dir.path() / "gt.nii.gz").string();

  SUBCASE("all cases pass") {
    std::ofstream(c.dir.str("manifest.csv"))
        << "case_id,ct,pet,gt\n"
        << "one," << ct << "," << pet << "," << gt << "\n"
        << "two," << ct << "," << pet << "," << gt << "\n";
    const CmdResult r = run_cmd(q(kBin) + " batch --manifest " + q(c.dir.str("manifest.csv")) +
                                " --config " + q(cfg_path) + " --jobs 2");
    INFO(r.output);
    CHECK(r.status == 0);
    CHECK(contains(r.output, "2 succeeded, 0 failed"));
    CHECK(contains(r.output, "mean dice 1.000000"));
    CHECK(std::filesystem::exists(c.out / "one" / "consensus.nii.gz"));
    CHECK(std::filesystem::exists(c.out / "two" / "consensus.nii.gz"));
    CHECK(std::filesystem::exists(c.out / "batch_summary.json"));
  }
  SUBCASE("one broken case flips the exit code to 3") {
    std::ofstream(c.dir.str("manifest.csv"))
        << "case_id,ct,pet,gt\n"
        << "good," << ct << "," << pet << "," << gt << "\n"
        << "broken," << c.dir.str("missing.nii.gz") << "," << pet << "," << gt << "\n";
    const CmdResult r = run_cmd(q(kBin) + " batch --manifest " + q(c.dir.str("manifest.csv")) +
                                " --config " + q(cfg_path));
    INFO(r.output);
    CHECK(r.status == 3);
    CHECK(contains(r.output, "1 succeeded, 1 failed"));
    CHECK(contains(r.output, "broken"));
    CHECK(contains(r.output, "FAILED"));
    CHECK(std::filesystem::exists(c.out / "good" / "consensus.nii.gz"));

    const json summary = slurp_json(c.out / "batch_summary.json");
    CHECK(summary.at("failed").get<int>() == 1);
    CHECK(summary.at("succeeded").get<int>() == 1);
  }
  SUBCASE("a missing manifest exits with code 2") {
    const CmdResult r = run_cmd(q(kBin) + " batch --manifest " + q(c.dir.str("nope.csv")) +
                                " --config " + q(cfg_path));
    CHECK(r.status == 2);
  }
}
