#include "drpo/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "drpo/checkpoint.hpp"
#include "drpo/config.hpp"
#include "drpo/error.hpp"
#include "drpo/eval.hpp"
#include "drpo/train.hpp"

namespace drpo {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string verb;
  std::string config_path;
  std::string out_dir = "drpo-out";
  std::vector<std::string> overrides;
  // Shortcuts for common config keys.
  std::optional<std::string> loss;
  std::optional<double> tau;
  std::optional<double> beta;
  std::optional<std::int64_t> steps;
  std::optional<std::int64_t> seed;
  std::optional<std::int64_t> batch_size;
  std::optional<std::string> stage;
  // Verb inputs.
  std::string dataset_path;
  std::string init_path;
  std::string checkpoint_path;
  std::string against = "base";
  int prompt = 0;
  std::size_t n = 100;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Defaults < config file < DRPO_SEED < command-line flags.
ConfigMap resolve_config(const Options& o) {
  ConfigMap map;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) {
      throw Error(ErrorCode::config_error, "config file " + o.config_path + " does not exist");
    }
    map = ConfigMap::load(o.config_path);
  }
  if (const char* env = std::getenv("DRPO_SEED"); env != nullptr && *env != '\0') {
    map.set("seed", env);
  }
  if (o.loss) map.set("loss", *o.loss);
  if (o.tau) map.set("tau", format_double(*o.tau));
  if (o.beta) map.set("beta", format_double(*o.beta));
  if (o.steps) map.set("steps", std::to_string(*o.steps));
  if (o.seed) map.set("seed", std::to_string(*o.seed));
  if (o.batch_size) map.set("batch_size", std::to_string(*o.batch_size));
  if (o.stage) map.set("stage", *o.stage);
  for (const auto& kv : o.overrides) map.apply_override(kv);
  return map;
}

class Run {
 public:
  Run(const Options& o, std::ostream& out)
      : opts_(o), out_(out), cfg_(ExperimentConfig::from_map(resolve_config(o))), dir_(o.out_dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::io_error, "cannot create " + dir_.string() + ": " + ec.message());
    if (!o.config_path.empty()) note_input(o.config_path);
  }

  int execute() {
    if (opts_.verb == "gen-data") gen_data();
    else if (opts_.verb == "train") train();
    else if (opts_.verb == "eval") evaluate();
    else if (opts_.verb == "sample") sample();
    else if (opts_.verb == "ablate") ablate();
    else if (opts_.verb == "weights") weights();
    write_manifest();
    return 0;
  }

 private:
  void note_input(const fs::path& path) { inputs_[path.string()] = git_blob_hash(read_file(path)); }

  void note_output(const std::string& name) { outputs_[name] = git_blob_hash(read_file(dir_ / name)); }

  void emit(const std::string& name, const std::string& text) {
    write_text(dir_ / name, text);
    note_output(name);
  }

  std::vector<PreferencePair> dataset() {
    if (!opts_.dataset_path.empty()) {
      note_input(opts_.dataset_path);
      return load_dataset(opts_.dataset_path);
    }
    return make_dataset(cfg_);
  }

  Checkpoint load_input_checkpoint(const std::string& path) {
    note_input(path);
    return load_checkpoint(path);
  }

  void save(const Checkpoint& ckpt, const std::string& name) {
    save_checkpoint(ckpt, dir_ / name);
    note_output(name);
  }

  void gen_data() {
    const auto pairs = make_dataset(cfg_);
    save_dataset(pairs, dir_ / "dataset.jsonl");
    note_output("dataset.jsonl");
    out_ << "wrote " << pairs.size() << " pairs to " << (dir_ / "dataset.jsonl").string() << "\n";
  }

  StagedRun staged(const std::vector<PreferencePair>& pairs) {
    std::optional<Checkpoint> init;
    if (!opts_.init_path.empty()) init = load_input_checkpoint(opts_.init_path);
    return run_staged(cfg_, pairs, init ? &*init : nullptr);
  }

  void train() {
    const auto pairs = dataset();
    const StagedRun run = staged(pairs);
    save(run.base.checkpoint, "base.ckpt");
    if (!run.base.metrics.empty()) emit("metrics_base.csv", metrics_csv(run.base.metrics));
    if (run.sft) {
      save(run.sft->checkpoint, "sft.ckpt");
      emit("metrics_sft.csv", metrics_csv(run.sft->metrics));
    }
    save(run.final.checkpoint, "final.ckpt");
    emit("metrics.csv", metrics_csv(run.final.metrics));
    const auto& last = run.final.metrics.back();
    out_ << to_string(cfg_.train.loss_kind) << ": " << run.final.metrics.size()
         << " steps, final loss " << format_double(last.loss) << ", implicit accuracy "
         << format_double(last.implicit_accuracy) << "\n";
  }

  void evaluate() {
    const std::string model_path =
        opts_.checkpoint_path.empty() ? (dir_ / "final.ckpt").string() : opts_.checkpoint_path;
    const std::string other_path =
        opts_.against == "base" ? (dir_ / "base.ckpt").string() : opts_.against;
    const Checkpoint model = load_input_checkpoint(model_path);
    const Checkpoint other = load_input_checkpoint(other_path);
    const std::uint64_t seed = cfg_.seed_for("eval");
    const StyleScore a = style_alignment(model, cfg_, cfg_.eval.samples_per_prompt, seed);
    const StyleScore b = style_alignment(other, cfg_, cfg_.eval.samples_per_prompt, seed);
    std::string table = "model,mean_frechet_distance,mean_reward\n";
    table += "model," + format_double(a.mean_fd) + "," + format_double(a.mean_reward) + "\n";
    table += "against," + format_double(b.mean_fd) + "," + format_double(b.mean_reward) + "\n";
    emit("eval.csv", table);

    const ToyReward reward(cfg_.base, cfg_.transform());
    std::vector<int> prompts(cfg_.eval.win_prompts);
    for (std::size_t q = 0; q < prompts.size(); ++q) {
      prompts[q] = static_cast<int>(q % cfg_.base.num_prompts());
    }
    const WinRateResult wr = win_rate(
        model, other, prompts, cfg_.base, cfg_.eval.win_k,
        [&](ConstSpan y, int p) { return reward.score(y, p); }, cfg_.seed_for("win_rate"));
    emit("win_rate.csv", win_rate_csv(wr));
    out_ << "frechet distance " << format_double(a.mean_fd) << " vs " << format_double(b.mean_fd)
         << ", win rate " << format_double(wr.rate) << "\n";
  }

  void sample() {
    const std::string path =
        opts_.checkpoint_path.empty() ? (dir_ / "final.ckpt").string() : opts_.checkpoint_path;
    const Checkpoint ckpt = load_input_checkpoint(path);
    const auto ys = reverse_sample(ckpt, cfg_.base.prompt_features(opts_.prompt), opts_.n,
                                   cfg_.seed_for("sample"));
    emit("samples.jsonl", samples_jsonl(ys, opts_.prompt));
    out_ << "wrote " << ys.size() << " samples\n";
  }

  void ablate() {
    const auto pairs = dataset();
    Checkpoint start;
    if (!opts_.init_path.empty()) {
      start = load_input_checkpoint(opts_.init_path);
    } else {
      const TrainResult base = run_sft(cfg_, pairs, cfg_.train.pretrain_steps, SftTarget::losers);
      start = base.checkpoint;
      if (cfg_.train.stage == TrainingStage::two_stage) {
        start = run_sft(cfg_, pairs, cfg_.train.sft_steps, SftTarget::winners, &start).checkpoint;
      }
    }
    const auto rows = ablation_sweep(cfg_, pairs, start, cfg_.eval.tau_grid);
    emit("ablation.csv", ablation_csv(rows));
    out_ << ablation_csv(rows);
  }

  void weights() {
    const auto pairs = dataset();
    const std::size_t m = std::min(pairs.size(), cfg_.train.batch_size);
    const std::span<const PreferencePair> batch(pairs.data(), m);
    const WeightMatrix w = batch_weights(cfg_, batch);
    std::ostringstream table;
    table << std::setprecision(17);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) table << (j ? "," : "") << w(i, j);
      table << "\n";
    }
    emit("weights.csv", table.str());
    out_ << table.str();
  }

  void write_manifest() {
    nlohmann::ordered_json j;
    j["verb"] = opts_.verb;
    j["out_dir"] = dir_.string();
    nlohmann::ordered_json config;
    const ConfigMap resolved = cfg_.to_map();
    for (const auto& [k, v] : resolved.values()) config[k] = v;
    j["config"] = config;
    nlohmann::ordered_json seeds;
    seeds["master"] = cfg_.train.seed;
    for (const char* stream : {"init", "pretrain", "sft", "preference", "data", "eval", "win_rate", "sample"}) {
      seeds[stream] = cfg_.seed_for(stream);
    }
    j["seeds"] = seeds;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    write_text(dir_ / "manifest.json", j.dump(2) + "\n");
  }

  const Options& opts_;
  std::ostream& out_;
  ExperimentConfig cfg_;
  fs::path dir_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

}  // namespace

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int k = 0; k < len; ++k) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[k]);
  }
  return hex.str();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Relative preference optimization for toy diffusion models", "drpo"};
  app.require_subcommand(1, 1);

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", o.config_path, "Flat key = value config file");
    cmd->add_option("-o,--out", o.out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--set", o.overrides, "Config override key=value (repeatable)");
    cmd->add_option("--loss", o.loss, "Loss kind: rpo, dpo, sft, orpo, orrpo");
    cmd->add_option("--tau", o.tau, "Weight-matrix temperature");
    cmd->add_option("--beta", o.beta, "Preference regularization strength");
    cmd->add_option("--steps", o.steps, "Preference-stage optimizer steps");
    cmd->add_option("--seed", o.seed, "Master seed (overrides DRPO_SEED)");
    cmd->add_option("--batch-size", o.batch_size, "Minibatch size M");
    cmd->add_option("--stage", o.stage, "one_stage or two_stage");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic preference dataset");
  auto* train = app.add_subcommand("train", "Pretrain, optionally SFT, then preference fine-tune");
  auto* eval = app.add_subcommand("eval", "Frechet distance, toy reward and win rate");
  auto* sample = app.add_subcommand("sample", "Draw reverse-process samples for one prompt");
  auto* ablate = app.add_subcommand("ablate", "Temperature sweep of the preference stage");
  auto* weights = app.add_subcommand("weights", "Print the contrastive weight matrix of a batch");
  for (auto* cmd : {gen, train, eval, sample, ablate, weights}) add_common(cmd);
  for (auto* cmd : {train, ablate, weights}) {
    cmd->add_option("--dataset", o.dataset_path, "Dataset JSONL (default: generate from config)");
  }
  for (auto* cmd : {train, ablate}) {
    cmd->add_option("--init", o.init_path, "Starting checkpoint (skips pretraining)");
  }
  for (auto* cmd : {eval, sample}) {
    cmd->add_option("--checkpoint", o.checkpoint_path, "Checkpoint (default: <out>/final.ckpt)");
  }
  eval->add_option("--against", o.against, "'base' (<out>/base.ckpt) or a checkpoint path")
      ->capture_default_str();
  sample->add_option("--prompt", o.prompt, "Prompt id")->capture_default_str();
  sample->add_option("--n", o.n, "Number of samples")->capture_default_str();

  if (!args.empty() && !args.front().starts_with('-') &&
      app.get_subcommand_no_throw(args.front()) == nullptr) {
    err << "error: unknown verb '" << args.front() << "'\n" << app.help();
    return 1;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return 0;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }
  o.verb = app.get_subcommands().front()->get_name();

  try {
    Run run(o, out);
    return run.execute();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_user_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace drpo
