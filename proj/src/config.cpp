#include "drpo/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "drpo/error.hpp"

namespace drpo {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

double parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto* end = t.data() + t.size();
  const auto [ptr, ec] = std::from_chars(t.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::config_error, "key '" + key + "': '" + t + "' is not a number");
  }
  return v;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "diffusion_steps", "beta_start", "beta_end", "hidden", "activation", "num_prompts",
      "prompt_means", "components_per_prompt", "component_std", "random_feature_dim",
      "feature_seed", "style_rotation", "style_scale", "style_shift", "dataset_kind", "n_pairs",
      "codebook_dim", "codebook_seed", "loss", "beta", "tau", "lambda_orpo", "weight_placement",
      "batch_size", "steps", "base_lr", "sft_lr", "weight_decay", "grad_accum", "stage",
      "timestep_mode", "logprob_variant", "weights", "pretrain_steps", "sft_steps", "seed",
      "record_wall_time", "eval_samples_per_prompt", "win_prompts", "win_k", "tau_grid"};
  return keys;
}

std::size_t as_count(const std::string& key, std::int64_t v) {
  if (v < 0) throw Error(ErrorCode::config_error, "key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string format_list(std::span<const double> values) {
  std::string out = "[";
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k > 0) out += ", ";
    out += format_double(values[k]);
  }
  return out + "]";
}

ConfigMap ConfigMap::parse(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::config_error,
                  "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorCode::config_error, "line " + std::to_string(line_no) + ": empty key");
    }
    map.values_[key] = unquote(trim(line.substr(eq + 1)));
  }
  return map;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config_error, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void ConfigMap::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::config_error, "override '" + assignment + "' is not key=value");
  }
  values_[trim(assignment.substr(0, eq))] = unquote(trim(assignment.substr(eq + 1)));
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number(key, it->second);
}

std::int64_t ConfigMap::get_int(const std::string& key, std::int64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string t = trim(it->second);
  std::int64_t v = 0;
  const auto* end = t.data() + t.size();
  const auto [ptr, ec] = std::from_chars(t.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::config_error, "key '" + key + "': '" + t + "' is not an integer");
  }
  return v;
}

std::vector<double> ConfigMap::get_list(const std::string& key,
                                        const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::string t = trim(it->second);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']') {
    throw Error(ErrorCode::config_error, "key '" + key + "' must be a [list]");
  }
  t = trim(t.substr(1, t.size() - 2));
  std::vector<double> out;
  if (t.empty()) return out;
  std::istringstream in(t);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number(key, item));
  return out;
}

std::string ConfigMap::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void TrainConfig::validate() const {
  loss.validate();
  if (steps < 1) throw Error(ErrorCode::config_error, "steps must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::config_error, "batch_size must be >= 1");
  if (grad_accum < 1) throw Error(ErrorCode::config_error, "grad_accum must be >= 1");
  if (!(base_lr > 0.0) || !(sft_lr > 0.0)) {
    throw Error(ErrorCode::config_error, "learning rates must be positive");
  }
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::config_error, "weight_decay must be >= 0");
  if (loss_kind == LossKind::dpo && weighting == WeightingMode::contrastive) {
    throw Error(ErrorCode::config_conflict, "dpo compares matched pairs only; weights=contrastive");
  }
}

std::uint64_t ExperimentConfig::seed_for(std::string_view stream) const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(train.seed, h);
}

ExperimentConfig ExperimentConfig::from_map(const ConfigMap& map) {
  for (const auto& [key, value] : map.values()) {
    if (known_keys().count(key) == 0) {
      throw Error(ErrorCode::config_error, "unknown config key '" + key + "'");
    }
  }
  ExperimentConfig c;
  c.schedule.steps = static_cast<int>(map.get_int("diffusion_steps", c.schedule.steps));
  c.schedule.beta_start = map.get_double("beta_start", c.schedule.beta_start);
  c.schedule.beta_end = map.get_double("beta_end", c.schedule.beta_end);

  if (map.contains("hidden")) {
    c.hidden.clear();
    for (double h : map.get_list("hidden", {})) {
      if (h < 1 || h != std::floor(h)) throw Error(ErrorCode::config_error, "bad hidden width");
      c.hidden.push_back(static_cast<std::size_t>(h));
    }
  }
  c.activation = parse_activation(map.get_string("activation", "tanh"));

  c.component_std = map.get_double("component_std", c.component_std);
  const auto num_prompts = as_count("num_prompts", map.get_int("num_prompts", 4));
  const auto per_prompt = as_count("components_per_prompt", map.get_int("components_per_prompt", 1));
  if (num_prompts == 0 || per_prompt == 0) {
    throw Error(ErrorCode::config_error, "num_prompts and components_per_prompt must be >= 1");
  }
  std::vector<double> means;
  if (map.contains("prompt_means")) {
    means = map.get_list("prompt_means", {});
  } else {
    for (std::size_t k = 0; k < num_prompts * per_prompt; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(num_prompts * per_prompt);
      means.push_back(2.0 * std::cos(angle));
      means.push_back(2.0 * std::sin(angle));
    }
  }
  if (means.size() != num_prompts * per_prompt * 2) {
    throw Error(ErrorCode::config_error, "prompt_means must hold 2 * num_prompts * components_per_prompt values");
  }
  if (!(c.component_std > 0.0)) throw Error(ErrorCode::config_error, "component_std must be > 0");
  const double var = c.component_std * c.component_std;
  c.base.dim = 2;
  c.base.components.assign(num_prompts, {});
  for (std::size_t p = 0; p < num_prompts; ++p) {
    for (std::size_t k = 0; k < per_prompt; ++k) {
      const std::size_t idx = 2 * (p * per_prompt + k);
      c.base.components[p].push_back({{means[idx], means[idx + 1]}, {var, 0.0, 0.0, var}});
    }
  }
  c.base.random_feature_dim = as_count("random_feature_dim", map.get_int("random_feature_dim", 4));
  c.base.feature_seed = static_cast<std::uint64_t>(map.get_int("feature_seed", 11));

  c.style_rotation = map.get_double("style_rotation", c.style_rotation);
  c.style_scale = map.get_double("style_scale", c.style_scale);
  c.style_shift = map.get_list("style_shift", c.style_shift);
  if (c.style_shift.size() != 2) throw Error(ErrorCode::config_error, "style_shift needs 2 values");
  const std::string kind = map.get_string("dataset_kind", "style");
  if (kind == "style") c.dataset_kind = DatasetKind::style;
  else if (kind == "reward") c.dataset_kind = DatasetKind::reward;
  else throw Error(ErrorCode::config_error, "dataset_kind must be style or reward");
  c.n_pairs = as_count("n_pairs", map.get_int("n_pairs", static_cast<std::int64_t>(c.n_pairs)));
  c.codebook_dim = as_count("codebook_dim", map.get_int("codebook_dim", 8));
  c.codebook_seed = static_cast<std::uint64_t>(map.get_int("codebook_seed", 7));

  TrainConfig& t = c.train;
  t.loss_kind = parse_loss_kind(map.get_string("loss", "rpo"));
  t.loss.beta = map.get_double("beta", t.loss.beta);
  t.loss.tau = map.get_double("tau", t.loss.tau);
  t.loss.lambda_orpo = map.get_double("lambda_orpo", t.loss.lambda_orpo);
  t.loss.weight_placement = parse_weight_placement(map.get_string("weight_placement", "outside"));
  t.batch_size = as_count("batch_size", map.get_int("batch_size", static_cast<std::int64_t>(t.batch_size)));
  t.steps = as_count("steps", map.get_int("steps", static_cast<std::int64_t>(t.steps)));
  t.base_lr = map.get_double("base_lr", t.base_lr);
  t.sft_lr = map.get_double("sft_lr", t.sft_lr);
  t.weight_decay = map.get_double("weight_decay", t.weight_decay);
  t.grad_accum = as_count("grad_accum", map.get_int("grad_accum", 1));
  const std::string stage = map.get_string("stage", "two_stage");
  if (stage == "two_stage") t.stage = TrainingStage::two_stage;
  else if (stage == "one_stage") t.stage = TrainingStage::one_stage;
  else throw Error(ErrorCode::config_error, "stage must be one_stage or two_stage");
  const std::string mode = map.get_string("timestep_mode", "shared");
  if (mode == "shared") t.gradient.per_pair_timestep = false;
  else if (mode == "per_pair") t.gradient.per_pair_timestep = true;
  else throw Error(ErrorCode::config_error, "timestep_mode must be shared or per_pair");
  t.gradient.variant = parse_logprob_variant(map.get_string("logprob_variant", "posterior_mean"));
  const std::string weights = map.get_string("weights", "auto");
  if (weights == "auto") t.weighting = WeightingMode::automatic;
  else if (weights == "contrastive") t.weighting = WeightingMode::contrastive;
  else if (weights == "diagonal") t.weighting = WeightingMode::diagonal;
  else throw Error(ErrorCode::config_error, "weights must be auto, contrastive or diagonal");
  t.pretrain_steps = as_count("pretrain_steps", map.get_int("pretrain_steps", static_cast<std::int64_t>(t.pretrain_steps)));
  t.sft_steps = as_count("sft_steps", map.get_int("sft_steps", static_cast<std::int64_t>(t.sft_steps)));
  t.seed = static_cast<std::uint64_t>(map.get_int("seed", static_cast<std::int64_t>(t.seed)));
  const std::string wall = map.get_string("record_wall_time", "false");
  if (wall != "true" && wall != "false") {
    throw Error(ErrorCode::config_error, "record_wall_time must be true or false");
  }
  t.record_wall_time = wall == "true";

  c.eval.samples_per_prompt = as_count("eval_samples_per_prompt", map.get_int("eval_samples_per_prompt", static_cast<std::int64_t>(c.eval.samples_per_prompt)));
  c.eval.win_prompts = as_count("win_prompts", map.get_int("win_prompts", static_cast<std::int64_t>(c.eval.win_prompts)));
  c.eval.win_k = as_count("win_k", map.get_int("win_k", static_cast<std::int64_t>(c.eval.win_k)));
  c.eval.tau_grid = map.get_list("tau_grid", c.eval.tau_grid);

  c.base.validate();
  (void)c.schedule.build();  // validates the schedule range
  t.validate();
  return c;
}

ConfigMap ExperimentConfig::to_map() const {
  ConfigMap m;
  m.set("diffusion_steps", std::to_string(schedule.steps));
  m.set("beta_start", format_double(schedule.beta_start));
  m.set("beta_end", format_double(schedule.beta_end));
  std::vector<double> h(hidden.begin(), hidden.end());
  m.set("hidden", format_list(h));
  m.set("activation", std::string(to_string(activation)));
  m.set("num_prompts", std::to_string(base.num_prompts()));
  const std::size_t per_prompt = base.components.front().size();
  m.set("components_per_prompt", std::to_string(per_prompt));
  std::vector<double> means;
  for (const auto& prompt : base.components) {
    for (const auto& comp : prompt) means.insert(means.end(), comp.mean.begin(), comp.mean.end());
  }
  m.set("prompt_means", format_list(means));
  m.set("component_std", format_double(component_std));
  m.set("random_feature_dim", std::to_string(base.random_feature_dim));
  m.set("feature_seed", std::to_string(base.feature_seed));
  m.set("style_rotation", format_double(style_rotation));
  m.set("style_scale", format_double(style_scale));
  m.set("style_shift", format_list(style_shift));
  m.set("dataset_kind", dataset_kind == DatasetKind::style ? "style" : "reward");
  m.set("n_pairs", std::to_string(n_pairs));
  m.set("codebook_dim", std::to_string(codebook_dim));
  m.set("codebook_seed", std::to_string(codebook_seed));
  m.set("loss", std::string(to_string(train.loss_kind)));
  m.set("beta", format_double(train.loss.beta));
  m.set("tau", format_double(train.loss.tau));
  m.set("lambda_orpo", format_double(train.loss.lambda_orpo));
  m.set("weight_placement", std::string(to_string(train.loss.weight_placement)));
  m.set("batch_size", std::to_string(train.batch_size));
  m.set("steps", std::to_string(train.steps));
  m.set("base_lr", format_double(train.base_lr));
  m.set("sft_lr", format_double(train.sft_lr));
  m.set("weight_decay", format_double(train.weight_decay));
  m.set("grad_accum", std::to_string(train.grad_accum));
  m.set("stage", train.stage == TrainingStage::two_stage ? "two_stage" : "one_stage");
  m.set("timestep_mode", train.gradient.per_pair_timestep ? "per_pair" : "shared");
  m.set("logprob_variant", std::string(to_string(train.gradient.variant)));
  m.set("weights", train.weighting == WeightingMode::automatic     ? "auto"
                   : train.weighting == WeightingMode::contrastive ? "contrastive"
                                                                   : "diagonal");
  m.set("pretrain_steps", std::to_string(train.pretrain_steps));
  m.set("sft_steps", std::to_string(train.sft_steps));
  m.set("seed", std::to_string(train.seed));
  m.set("record_wall_time", train.record_wall_time ? "true" : "false");
  m.set("eval_samples_per_prompt", std::to_string(eval.samples_per_prompt));
  m.set("win_prompts", std::to_string(eval.win_prompts));
  m.set("win_k", std::to_string(eval.win_k));
  m.set("tau_grid", format_list(eval.tau_grid));
  return m;
}

}  // namespace drpo
