#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rnas/data.hpp"
#include "rnas/eval_train.hpp"
#include "rnas/search.hpp"

namespace rnas {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" | "cifar10"
  SyntheticSpec synthetic;
  int test_n = 256;  // held-out synthetic examples for evaluation
  std::string cifar_dir = "data/cifar-10-batches-bin";
  int subset = 0;
  double split_fraction = 0.5;
};

// Discrete-net training section; cell count and width may differ from the
// search supernet (nodes and stem multiplier are shared).
struct TrainSection {
  int cells = 4;
  int channels = 8;
  int epochs = 30;
  int batch = 64;
  SgdConfig opt;
  int cutout = 0;
  double drop_path = 0.0;
  double aux_weight = 0.0;
  PerturbSpec adversarial = PerturbSpec::adversarial_train_default();
};

struct AttackSection {
  double fgsm_epsilon = 0.031;
  PerturbSpec pgd;  // defaults to the 20-step evaluation attack
};

struct SearchSection {
  SearchStrategy strategy = SearchStrategy::Uniform;
  int epochs = 12;
  int warmup = 4;
  int batch = 64;
  double lambda = 1.0;
  FKind f_kind = FKind::KlDivergence;
  PerturbSpec perturb = PerturbSpec::search_default();
  SgdConfig w_opt;
  AdamConfig alpha_opt;
};

struct NetSection {
  int cells = 4;
  int nodes = 3;
  int channels = 8;
  int stem_multiplier = 3;
  OpSet ops = default_op_set();
};

// Complete run configuration. Every field has a profile default; unknown
// keys in a config file are rejected with the offending path.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  DataConfig data;
  NetSection net;
  SearchSection search;
  TrainSection train;
  AttackSection attack;
};

// Named baseline profiles: "desk" (default, minutes on a CPU) and "paper"
// (full-scale reference values; multi-day, documented only).
RunConfig default_config(const std::string& profile);

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

RunConfig load_config_file(const std::string& path);
void save_config_file(const RunConfig& cfg, const std::string& path);

// Assembles the runtime search configuration for a dataset's geometry.
SearchConfig make_search_config(const RunConfig& cfg, const Dataset& ds);
NetworkShape make_eval_shape(const RunConfig& cfg, const Dataset& ds);

}  // namespace rnas
