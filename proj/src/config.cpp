#include "petfuse/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "json.hpp"
#include "petfuse/error.hpp"

namespace petfuse {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { fail(Errc::ConfigError, msg); }

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) bad("unknown key \"" + key + "\" in " + where);
  }
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const char* key, double fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) bad(std::string("\"") + key + "\" must be a number");
  return v->get<double>();
}

std::int64_t get_integer(const json& obj, const char* key, std::int64_t fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) bad(std::string("\"") + key + "\" must be an integer");
  return v->get<std::int64_t>();
}

std::string get_string(const json& obj, const char* key, const std::string& fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) bad(std::string("\"") + key + "\" must be a string");
  return v->get<std::string>();
}

template <typename T>
std::array<T, 3> get_triple(const json& value, const char* key) {
  if (!value.is_array() || value.size() != 3)
    bad(std::string("\"") + key + "\" must be an array of 3 values");
  std::array<T, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const json& e = value[static_cast<std::size_t>(a)];
    if constexpr (std::is_integral_v<T>) {
      if (!e.is_number_integer())
        bad(std::string("\"") + key + "\" entries must be integers");
      out[a] = static_cast<T>(e.get<std::int64_t>());
    } else {
      if (!e.is_number()) bad(std::string("\"") + key + "\" entries must be numbers");
      out[a] = e.get<double>();
    }
  }
  return out;
}

PredictorBinding parse_fold(const json& obj, std::size_t index) {
  const std::string where = "folds[" + std::to_string(index) + "]";
  if (!obj.is_object()) bad(where + " must be an object");
  const std::string kind = get_string(obj, "kind", "");
  PredictorBinding binding;
  if (kind == "THRESHOLD") {
    check_keys(obj, where, {"kind", "threshold_t", "smooth_sigma_mm"});
    binding.kind = PredictorKind::Threshold;
    binding.threshold_t = get_number(obj, "threshold_t", binding.threshold_t);
  } else if (kind == "ORACLE") {
    check_keys(obj, where, {"kind", "seed", "noise_amp", "smooth_sigma_mm"});
    binding.kind = PredictorKind::Oracle;
    binding.seed = static_cast<std::uint64_t>(
        get_integer(obj, "seed", static_cast<std::int64_t>(binding.seed)));
    binding.noise_amp = get_number(obj, "noise_amp", binding.noise_amp);
    if (binding.noise_amp < 0.0 || binding.noise_amp >= 0.5)
      bad(where + ": \"noise_amp\" must lie in [0, 0.5)");
  } else if (kind == "EXTERNAL") {
    check_keys(obj, where, {"kind", "command", "workdir"});
    binding.kind = PredictorKind::External;
    binding.command = get_string(obj, "command", "");
    binding.workdir = get_string(obj, "workdir", "");
    if (binding.command.empty()) bad(where + ": \"command\" is required");
  } else {
    bad(where + ": \"kind\" must be THRESHOLD, ORACLE, or EXTERNAL");
  }
  binding.smooth_sigma_mm = get_number(obj, "smooth_sigma_mm", binding.smooth_sigma_mm);
  if (binding.smooth_sigma_mm < 0.0)
    bad(where + ": \"smooth_sigma_mm\" must be nonnegative");
  return binding;
}

PipelineConfig parse_config(const json& root) {
  if (!root.is_object()) bad("config root must be a JSON object");
  check_keys(root, "config",
             {"schema", "case_id", "input_ct", "input_pet", "gt", "output_dir",
              "target_spacing", "body_mask", "crop", "normalization", "patch",
              "tta", "folds", "binarize_threshold", "fusion", "workers"});

  const json* schema = find(root, "schema");
  if (!schema || !schema->is_number_integer() || schema->get<std::int64_t>() != 1)
    bad("config requires \"schema\": 1");

  PipelineConfig cfg = default_config();
  cfg.case_id = get_string(root, "case_id", "");
  cfg.input_ct = get_string(root, "input_ct", "");
  cfg.input_pet = get_string(root, "input_pet", "");
  cfg.gt = get_string(root, "gt", "");
  cfg.output_dir = get_string(root, "output_dir", cfg.output_dir);

  if (const json* v = find(root, "target_spacing")) {
    cfg.target_spacing = get_triple<double>(*v, "target_spacing");
    for (double s : cfg.target_spacing)
      if (!(s > 0.0)) bad("\"target_spacing\" entries must be positive");
  }

  if (const json* v = find(root, "body_mask")) {
    check_keys(*v, "body_mask", {"hu_threshold", "closing_radius_mm", "connectivity"});
    cfg.body_mask.hu_threshold =
        get_number(*v, "hu_threshold", cfg.body_mask.hu_threshold);
    cfg.body_mask.closing_radius_mm =
        get_number(*v, "closing_radius_mm", cfg.body_mask.closing_radius_mm);
    if (cfg.body_mask.closing_radius_mm < 0.0)
      bad("\"closing_radius_mm\" must be nonnegative");
    cfg.body_mask.connectivity = static_cast<int>(
        get_integer(*v, "connectivity", cfg.body_mask.connectivity));
    if (cfg.body_mask.connectivity != 6 && cfg.body_mask.connectivity != 26)
      bad("\"connectivity\" must be 6 or 26");
  }

  if (const json* v = find(root, "crop")) {
    check_keys(*v, "crop", {"margin_mm", "pad_value_ct", "pad_value_pet"});
    cfg.crop.margin_mm = get_number(*v, "margin_mm", cfg.crop.margin_mm);
    if (cfg.crop.margin_mm < 0.0) bad("\"margin_mm\" must be nonnegative");
    cfg.crop.pad_value_ct = get_number(*v, "pad_value_ct", cfg.crop.pad_value_ct);
    cfg.crop.pad_value_pet = get_number(*v, "pad_value_pet", cfg.crop.pad_value_pet);
  }

  if (const json* v = find(root, "normalization")) {
    check_keys(*v, "normalization", {"clip_lo", "clip_hi", "mean", "std"});
    cfg.normalization.clip_lo = get_number(*v, "clip_lo", cfg.normalization.clip_lo);
    cfg.normalization.clip_hi = get_number(*v, "clip_hi", cfg.normalization.clip_hi);
    cfg.normalization.mean = get_number(*v, "mean", cfg.normalization.mean);
    cfg.normalization.std = get_number(*v, "std", cfg.normalization.std);
    if (!(cfg.normalization.clip_lo < cfg.normalization.clip_hi))
      bad("\"clip_lo\" must be below \"clip_hi\"");
    if (!(cfg.normalization.std > 0.0)) bad("\"std\" must be positive");
  }

  if (const json* v = find(root, "patch")) {
    check_keys(*v, "patch", {"size", "overlap_frac", "sigma_scale"});
    if (const json* s = find(*v, "size")) {
      cfg.patch.size = get_triple<int>(*s, "size");
      for (int d : cfg.patch.size)
        if (d < 1) bad("\"patch.size\" entries must be positive");
    }
    cfg.patch.overlap_frac = get_number(*v, "overlap_frac", cfg.patch.overlap_frac);
    if (cfg.patch.overlap_frac < 0.0 || cfg.patch.overlap_frac >= 1.0)
      bad("\"overlap_frac\" must lie in [0, 1)");
    cfg.patch.sigma_scale = get_number(*v, "sigma_scale", cfg.patch.sigma_scale);
    if (!(cfg.patch.sigma_scale > 0.0)) bad("\"sigma_scale\" must be positive");
  }

  if (const json* v = find(root, "tta")) {
    check_keys(*v, "tta", {"voxel_budget"});
    const std::int64_t budget =
        get_integer(*v, "voxel_budget",
                    static_cast<std::int64_t>(cfg.tta.voxel_budget));
    if (budget < 1) bad("\"voxel_budget\" must be positive");
    cfg.tta.voxel_budget = static_cast<std::uint64_t>(budget);
  }

  if (const json* v = find(root, "folds")) {
    if (!v->is_array() || v->empty()) bad("\"folds\" must be a non-empty array");
    cfg.folds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) cfg.folds.push_back(parse_fold((*v)[i], i));
  }

  cfg.binarize_threshold =
      get_number(root, "binarize_threshold", cfg.binarize_threshold);
  if (!(cfg.binarize_threshold > 0.0 && cfg.binarize_threshold < 1.0))
    bad("\"binarize_threshold\" must lie in (0, 1)");

  if (const json* v = find(root, "fusion")) {
    check_keys(*v, "fusion",
               {"method", "init_p", "init_q", "prior_gamma", "tol", "max_iters",
                "clamp_eps"});
    const std::string method = get_string(*v, "method", "STAPLE");
    if (method == "STAPLE")
      cfg.fusion_method = FusionMethod::Staple;
    else if (method == "MAJORITY")
      cfg.fusion_method = FusionMethod::Majority;
    else if (method == "MEAN")
      cfg.fusion_method = FusionMethod::Mean;
    else
      bad("\"fusion.method\" must be STAPLE, MAJORITY, or MEAN");

    cfg.staple.init_p = get_number(*v, "init_p", cfg.staple.init_p);
    cfg.staple.init_q = get_number(*v, "init_q", cfg.staple.init_q);
    if (!(cfg.staple.init_p > 0.0 && cfg.staple.init_p < 1.0) ||
        !(cfg.staple.init_q > 0.0 && cfg.staple.init_q < 1.0))
      bad("\"init_p\" and \"init_q\" must lie in (0, 1)");
    if (const json* g = find(*v, "prior_gamma")) {
      if (g->is_null()) {
        cfg.staple.prior_gamma.reset();
      } else if (g->is_number()) {
        const double gamma = g->get<double>();
        if (!(gamma > 0.0 && gamma < 1.0))
          bad("\"prior_gamma\" must lie in (0, 1) or be null for AUTO");
        cfg.staple.prior_gamma = gamma;
      } else {
        bad("\"prior_gamma\" must be a number or null");
      }
    }
    cfg.staple.tol = get_number(*v, "tol", cfg.staple.tol);
    if (!(cfg.staple.tol > 0.0)) bad("\"tol\" must be positive");
    cfg.staple.max_iters =
        static_cast<int>(get_integer(*v, "max_iters", cfg.staple.max_iters));
    if (cfg.staple.max_iters < 1) bad("\"max_iters\" must be at least 1");
    cfg.staple.clamp_eps = get_number(*v, "clamp_eps", cfg.staple.clamp_eps);
    if (!(cfg.staple.clamp_eps > 0.0 && cfg.staple.clamp_eps < 0.5))
      bad("\"clamp_eps\" must lie in (0, 0.5)");
  }

  if (const json* v = find(root, "workers")) {
    if (!v->is_number_integer() || v->get<std::int64_t>() < 1)
      bad("\"workers\" must be a positive integer");
    cfg.workers = static_cast<int>(v->get<std::int64_t>());
  }

  return cfg;
}

json fold_to_json(const PredictorBinding& binding) {
  json j;
  j["kind"] = predictor_kind_name(binding.kind);
  switch (binding.kind) {
    case PredictorKind::Threshold:
      j["threshold_t"] = binding.threshold_t;
      break;
    case PredictorKind::Oracle:
      j["seed"] = binding.seed;
      j["noise_amp"] = binding.noise_amp;
      break;
    case PredictorKind::External:
      j["command"] = binding.command;
      j["workdir"] = binding.workdir;
      break;
  }
  if (binding.kind != PredictorKind::External)
    j["smooth_sigma_mm"] = binding.smooth_sigma_mm;
  return j;
}

}  // namespace

const char* fusion_method_name(FusionMethod method) {
  switch (method) {
    case FusionMethod::Staple: return "STAPLE";
    case FusionMethod::Majority: return "MAJORITY";
    case FusionMethod::Mean: return "MEAN";
  }
  return "?";
}

PipelineConfig default_config() {
  PipelineConfig cfg;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PredictorBinding binding;
    binding.kind = PredictorKind::Oracle;
    binding.seed = seed;
    cfg.folds.push_back(binding);
  }
  return cfg;
}

PipelineConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(root);
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_to_json(const PipelineConfig& config, int indent) {
  json j;
  j["schema"] = 1;
  if (!config.case_id.empty()) j["case_id"] = config.case_id;
  j["input_ct"] = config.input_ct;
  j["input_pet"] = config.input_pet;
  if (!config.gt.empty()) j["gt"] = config.gt;
  j["output_dir"] = config.output_dir;
  j["target_spacing"] = config.target_spacing;
  j["body_mask"] = {{"hu_threshold", config.body_mask.hu_threshold},
                    {"closing_radius_mm", config.body_mask.closing_radius_mm},
                    {"connectivity", config.body_mask.connectivity}};
  j["crop"] = {{"margin_mm", config.crop.margin_mm},
               {"pad_value_ct", config.crop.pad_value_ct},
               {"pad_value_pet", config.crop.pad_value_pet}};
  j["normalization"] = {{"clip_lo", config.normalization.clip_lo},
                        {"clip_hi", config.normalization.clip_hi},
                        {"mean", config.normalization.mean},
                        {"std", config.normalization.std}};
  j["patch"] = {{"size", config.patch.size},
                {"overlap_frac", config.patch.overlap_frac},
                {"sigma_scale", config.patch.sigma_scale}};
  j["tta"] = {{"voxel_budget", config.tta.voxel_budget}};
  j["folds"] = json::array();
  for (const PredictorBinding& binding : config.folds)
    j["folds"].push_back(fold_to_json(binding));
  j["binarize_threshold"] = config.binarize_threshold;
  json fusion = {{"method", fusion_method_name(config.fusion_method)},
                 {"init_p", config.staple.init_p},
                 {"init_q", config.staple.init_q},
                 {"tol", config.staple.tol},
                 {"max_iters", config.staple.max_iters},
                 {"clamp_eps", config.staple.clamp_eps}};
  fusion["prior_gamma"] =
      config.staple.prior_gamma ? json(*config.staple.prior_gamma) : json(nullptr);
  j["fusion"] = fusion;
  if (config.workers > 0) j["workers"] = config.workers;
  return j.dump(indent);
}

}  // namespace petfuse
