// Command line front end: search / derive / train / attack / report /
// pipeline over a JSON config with named profiles.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rnas/run.hpp"

namespace {

namespace fs = std::filesystem;

// Exit codes: 0 ok, 2 config/usage, 3 data, 4 runtime failure.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

std::string output_root() {
  if (const char* env = std::getenv("RNAS_OUT_ROOT")) return env;
  return "runs";
}

// --out wins verbatim; otherwise a timestamped directory under the root.
std::string resolve_out_dir(const std::string& out_flag, const std::string& command,
                            std::uint64_t seed, bool many_seeds) {
  if (!out_flag.empty()) {
    if (!many_seeds) return out_flag;
    return (fs::path(out_flag) / ("seed" + std::to_string(seed))).string();
  }
  std::string dir = (fs::path(output_root()) / (command + "-" + timestamp())).string();
  if (many_seeds) dir += "-seed" + std::to_string(seed);
  return dir;
}

struct CommonFlags {
  std::string config_path;
  std::string profile;
  std::string strategy;
  double lambda = -1.0;
  double epsilon = -1.0;
  std::string seeds = "";
  std::string out;
  std::string genotype;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_genotype) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  cmd->add_option("--profile", flags.profile, "Named profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--strategy", flags.strategy, "Search strategy")
      ->check(CLI::IsMember({"max", "uniform", "baseline"}));
  cmd->add_option("--lambda", flags.lambda, "Regularization coefficient");
  cmd->add_option("--epsilon", flags.epsilon, "Search perturbation radius");
  cmd->add_option("--seed,--seeds", flags.seeds, "Seed, or comma-separated seeds for fan-out");
  cmd->add_option("--out", flags.out, "Output directory (default: $RNAS_OUT_ROOT/<cmd>-<timestamp>)");
  if (with_genotype) {
    cmd->add_option("--genotype", flags.genotype, "Genotype file; pipeline skips search when given");
  }
}

rnas::RunConfig assemble_config(const CommonFlags& flags, std::uint64_t seed) {
  rnas::RunConfig cfg;
  if (!flags.config_path.empty()) {
    cfg = rnas::load_config_file(flags.config_path);
    if (!flags.profile.empty() && flags.profile != cfg.profile) {
      throw rnas::ConfigError("config: --profile " + flags.profile + " conflicts with config profile " +
                              cfg.profile + "; set it in the file or drop the flag");
    }
  } else {
    cfg = rnas::default_config(flags.profile.empty() ? "desk" : flags.profile);
  }
  if (!flags.strategy.empty()) cfg.search.strategy = *rnas::strategy_from_name(flags.strategy);
  if (flags.lambda >= 0) cfg.search.lambda = flags.lambda;
  if (flags.epsilon >= 0) cfg.search.perturb.epsilon = flags.epsilon;
  cfg.seed = seed;
  return cfg;
}

std::vector<std::uint64_t> parse_seeds(const std::string& seeds, std::uint64_t fallback) {
  if (seeds.empty()) return {fallback};
  std::vector<std::uint64_t> out;
  std::stringstream ss(seeds);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw rnas::ConfigError("config: bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw rnas::ConfigError("config: no seeds given");
  return out;
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const rnas::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const rnas::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable robust architecture search"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* search = app.add_subcommand("search", "Run architecture search and derive a genotype");
  add_common(search, flags, false);

  auto* derive = app.add_subcommand("derive", "Derive a genotype from an alpha checkpoint");
  add_common(derive, flags, false);
  std::string alpha_path;
  derive->add_option("--alpha", alpha_path, "alpha checkpoint file")->required();

  auto* train = app.add_subcommand("train", "Train a derived network (standard and adversarial)");
  add_common(train, flags, true);
  std::string mode_flag = "both";
  train->add_option("--mode", mode_flag, "standard, adversarial or both")
      ->check(CLI::IsMember({"standard", "adversarial", "both"}));

  auto* attack = app.add_subcommand("attack", "Evaluate a trained checkpoint under attack");
  add_common(attack, flags, true);
  std::string model_path;
  attack->add_option("--model", model_path, "model checkpoint")->required();
  std::string attack_mode = "standard";
  attack->add_option("--mode", attack_mode, "training mode of the checkpoint")
      ->check(CLI::IsMember({"standard", "adversarial"}));

  auto* report = app.add_subcommand("report", "Merge row CSVs into a result table");
  std::vector<std::string> row_files;
  report->add_option("--rows", row_files, "row CSV files")->required();
  report->add_option("--out", flags.out, "Output directory");

  auto* pipeline = app.add_subcommand("pipeline", "search -> train -> attack -> report");
  add_common(pipeline, flags, true);

  CLI11_PARSE(app, argc, argv);

  return run_guarded([&] {
    if (report->parsed()) {
      std::cout << rnas::cmd_report(row_files, resolve_out_dir(flags.out, "report", 0, false));
      return;
    }

    const auto seeds = parse_seeds(flags.seeds, 0);
    const bool many = seeds.size() > 1;
    for (std::uint64_t seed : seeds) {
      rnas::RunConfig cfg = assemble_config(flags, seed);

      if (search->parsed()) {
        const std::string dir = resolve_out_dir(flags.out, "search", seed, many);
        auto art = rnas::cmd_search(cfg, dir);
        std::cout << "search: genotype " << art.genotype << "\n";
      } else if (derive->parsed()) {
        const std::string dir = resolve_out_dir(flags.out, "derive", seed, many);
        std::error_code ec;
        fs::create_directories(dir, ec);
        const std::string out = (fs::path(dir) / "genotype.txt").string();
        rnas::cmd_derive(cfg, alpha_path, out);
        std::cout << "derive: " << out << "\n";
      } else if (train->parsed()) {
        if (flags.genotype.empty()) throw rnas::ConfigError("train: --genotype is required");
        const rnas::Genotype g = rnas::load_genotype(flags.genotype);
        const std::string dir = resolve_out_dir(flags.out, "train", seed, many);
        std::vector<rnas::TrainMode> modes;
        if (mode_flag == "standard" || mode_flag == "both") modes.push_back(rnas::TrainMode::Standard);
        if (mode_flag == "adversarial" || mode_flag == "both") modes.push_back(rnas::TrainMode::Adversarial);
        for (rnas::TrainMode m : modes) {
          auto art = rnas::cmd_train(cfg, g, m, dir);
          std::cout << "train(" << rnas::train_mode_name(m) << "): " << art.model << "\n";
        }
      } else if (attack->parsed()) {
        if (flags.genotype.empty()) throw rnas::ConfigError("attack: --genotype is required");
        const rnas::Genotype g = rnas::load_genotype(flags.genotype);
        const std::string dir = resolve_out_dir(flags.out, "attack", seed, many);
        const rnas::TrainMode m =
            attack_mode == "standard" ? rnas::TrainMode::Standard : rnas::TrainMode::Adversarial;
        auto row = rnas::cmd_attack(cfg, g, model_path, m, fs::path(model_path).stem().string(), dir);
        std::printf("attack(%s): clean %.2f%% fgsm %.2f%% pgd20 %.2f%%\n", row.mode.c_str(),
                    row.clean * 100, row.fgsm * 100, row.pgd20 * 100);
      } else if (pipeline->parsed()) {
        const std::string dir = resolve_out_dir(flags.out, "pipeline", seed, many);
        std::optional<std::string> genotype;
        if (!flags.genotype.empty()) genotype = flags.genotype;
        auto result = rnas::cmd_pipeline(cfg, dir, genotype);
        std::cout << result.table_markdown;
      }
    }
  });
}
