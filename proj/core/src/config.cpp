#include "rnas/config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace rnas {

namespace {

using nlohmann::json;

using FieldMap = std::map<std::string, std::function<void(const json&)>>;

void walk_object(const json& j, const std::string& path, const FieldMap& fields) {
  if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw ConfigError("config: unknown key '" + path + key + "'");
    }
    try {
      it->second(value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config: bad value for '" + path + key + "': " + e.what());
    }
  }
}

template <class T>
std::function<void(const json&)> set(T& dst) {
  return [&dst](const json& v) { dst = v.get<T>(); };
}

void parse_perturb(const json& j, const std::string& path, PerturbSpec& spec) {
  walk_object(j, path, {
    {"epsilon", set(spec.epsilon)},
    {"step", set(spec.step)},
    {"steps", set(spec.steps)},
    {"random_start", set(spec.random_start)},
    {"clamp_lo", set(spec.clamp_lo)},
    {"clamp_hi", set(spec.clamp_hi)},
  });
}

json perturb_to_json(const PerturbSpec& spec) {
  return {
    {"epsilon", spec.epsilon}, {"step", spec.step},         {"steps", spec.steps},
    {"random_start", spec.random_start}, {"clamp_lo", spec.clamp_lo}, {"clamp_hi", spec.clamp_hi},
  };
}

void parse_sgd(const json& j, const std::string& path, SgdConfig& cfg) {
  walk_object(j, path, {
    {"lr", set(cfg.lr)},
    {"momentum", set(cfg.momentum)},
    {"weight_decay", set(cfg.weight_decay)},
  });
}

json sgd_to_json(const SgdConfig& cfg) {
  return {{"lr", cfg.lr}, {"momentum", cfg.momentum}, {"weight_decay", cfg.weight_decay}};
}

void parse_adam(const json& j, const std::string& path, AdamConfig& cfg) {
  walk_object(j, path, {
    {"lr", set(cfg.lr)},
    {"beta1", set(cfg.beta1)},
    {"beta2", set(cfg.beta2)},
    {"weight_decay", set(cfg.weight_decay)},
    {"eps", set(cfg.eps)},
  });
}

json adam_to_json(const AdamConfig& cfg) {
  return {{"lr", cfg.lr},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"weight_decay", cfg.weight_decay},
          {"eps", cfg.eps}};
}

}  // namespace

RunConfig default_config(const std::string& profile) {
  RunConfig cfg;
  cfg.profile = profile;
  if (profile == "desk") {
    // Scaled to finish in minutes on a laptop CPU.
    cfg.data.source = "synthetic";
    cfg.data.synthetic = SyntheticSpec{SyntheticKind::StripedImages, 512, 4, 1, 8, 8, 0.25, 0.05};
    cfg.data.test_n = 256;
    cfg.net = NetSection{4, 3, 8, 3, default_op_set()};
    cfg.search.strategy = SearchStrategy::Uniform;
    cfg.search.epochs = 12;
    cfg.search.warmup = 4;
    cfg.search.batch = 64;
    cfg.train.cells = 4;
    cfg.train.channels = 8;
    cfg.train.epochs = 30;
    cfg.train.batch = 64;
  } else if (profile == "paper") {
    // Full-scale reference values; a multi-day CPU run, kept for fidelity.
    cfg.data.source = "cifar10";
    cfg.data.subset = 0;
    cfg.net = NetSection{8, 4, 16, 3, default_op_set()};
    cfg.search.strategy = SearchStrategy::Max;
    cfg.search.epochs = 50;
    cfg.search.warmup = 15;
    cfg.search.batch = 64;
    cfg.train.cells = 20;
    cfg.train.channels = 36;
    cfg.train.epochs = 600;
    cfg.train.batch = 96;
    cfg.train.cutout = 16;
    cfg.train.drop_path = 0.3;
    cfg.train.aux_weight = 0.4;
  } else {
    throw ConfigError("config: unknown profile '" + profile + "' (expected desk or paper)");
  }
  cfg.search.lambda = 1.0;
  cfg.search.perturb = PerturbSpec::search_default();
  cfg.search.w_opt = SgdConfig{0.025, 0.9, 3e-4};
  cfg.search.alpha_opt = AdamConfig{3e-4, 0.5, 0.999, 1e-3, 1e-8};
  cfg.train.opt = SgdConfig{0.025, 0.9, 3e-4};
  cfg.train.adversarial = PerturbSpec::adversarial_train_default();
  cfg.attack.fgsm_epsilon = 0.031;
  cfg.attack.pgd = PerturbSpec{PerturbKind::Pgd, 0.031, 0.031 / 4.0, 20, true, 0.0, 1.0};
  return cfg;
}

RunConfig config_from_json(const json& j) {
  std::string profile = "desk";
  if (j.is_object() && j.contains("profile")) {
    if (!j["profile"].is_string()) throw ConfigError("config: profile must be a string");
    profile = j["profile"].get<std::string>();
  }
  RunConfig cfg = default_config(profile);

  std::string synthetic_kind = cfg.data.synthetic.kind == SyntheticKind::GaussianBlobs ? "blobs" : "striped";
  std::string source = cfg.data.source;
  std::string strategy = strategy_name(cfg.search.strategy);
  std::string f_kind = f_kind_name(cfg.search.f_kind);
  std::vector<std::string> ops;

  walk_object(j, "", {
    {"profile", [](const json&) {}},
    {"seed", set(cfg.seed)},
    {"data", [&](const json& v) {
      walk_object(v, "data.", {
        {"source", set(source)},
        {"kind", set(synthetic_kind)},
        {"n", set(cfg.data.synthetic.n)},
        {"classes", set(cfg.data.synthetic.classes)},
        {"channels", set(cfg.data.synthetic.channels)},
        {"height", set(cfg.data.synthetic.height)},
        {"width", set(cfg.data.synthetic.width)},
        {"amplitude", set(cfg.data.synthetic.amplitude)},
        {"noise", set(cfg.data.synthetic.noise)},
        {"test_n", set(cfg.data.test_n)},
        {"cifar_dir", set(cfg.data.cifar_dir)},
        {"subset", set(cfg.data.subset)},
        {"split_fraction", set(cfg.data.split_fraction)},
      });
    }},
    {"net", [&](const json& v) {
      walk_object(v, "net.", {
        {"cells", set(cfg.net.cells)},
        {"nodes", set(cfg.net.nodes)},
        {"channels", set(cfg.net.channels)},
        {"stem_multiplier", set(cfg.net.stem_multiplier)},
        {"ops", set(ops)},
      });
    }},
    {"search", [&](const json& v) {
      walk_object(v, "search.", {
        {"strategy", set(strategy)},
        {"epochs", set(cfg.search.epochs)},
        {"warmup", set(cfg.search.warmup)},
        {"batch", set(cfg.search.batch)},
        {"lambda", set(cfg.search.lambda)},
        {"f_kind", set(f_kind)},
        {"perturb", [&](const json& p) { parse_perturb(p, "search.perturb.", cfg.search.perturb); }},
        {"w_opt", [&](const json& p) { parse_sgd(p, "search.w_opt.", cfg.search.w_opt); }},
        {"alpha_opt", [&](const json& p) { parse_adam(p, "search.alpha_opt.", cfg.search.alpha_opt); }},
      });
    }},
    {"train", [&](const json& v) {
      walk_object(v, "train.", {
        {"cells", set(cfg.train.cells)},
        {"channels", set(cfg.train.channels)},
        {"epochs", set(cfg.train.epochs)},
        {"batch", set(cfg.train.batch)},
        {"opt", [&](const json& p) { parse_sgd(p, "train.opt.", cfg.train.opt); }},
        {"cutout", set(cfg.train.cutout)},
        {"drop_path", set(cfg.train.drop_path)},
        {"aux_weight", set(cfg.train.aux_weight)},
        {"adversarial", [&](const json& p) { parse_perturb(p, "train.adversarial.", cfg.train.adversarial); }},
      });
    }},
    {"attack", [&](const json& v) {
      walk_object(v, "attack.", {
        {"fgsm_epsilon", set(cfg.attack.fgsm_epsilon)},
        {"pgd", [&](const json& p) { parse_perturb(p, "attack.pgd.", cfg.attack.pgd); }},
      });
    }},
  });

  if (source == "synthetic" || source == "cifar10") {
    cfg.data.source = source;
  } else {
    throw ConfigError("config: data.source must be synthetic or cifar10, got '" + source + "'");
  }
  if (synthetic_kind == "striped") {
    cfg.data.synthetic.kind = SyntheticKind::StripedImages;
  } else if (synthetic_kind == "blobs") {
    cfg.data.synthetic.kind = SyntheticKind::GaussianBlobs;
  } else {
    throw ConfigError("config: data.kind must be striped or blobs, got '" + synthetic_kind + "'");
  }
  auto strat = strategy_from_name(strategy);
  if (!strat) throw ConfigError("config: search.strategy must be max, uniform or baseline, got '" + strategy + "'");
  cfg.search.strategy = *strat;
  auto fk = f_kind_from_name(f_kind);
  if (!fk) throw ConfigError("config: search.f_kind must be kl, l2 or cosine, got '" + f_kind + "'");
  cfg.search.f_kind = *fk;
  if (!ops.empty()) {
    cfg.net.ops.clear();
    for (const auto& name : ops) {
      auto op = op_from_name(name);
      if (!op) throw ConfigError("config: unknown op '" + name + "' in net.ops");
      cfg.net.ops.push_back(*op);
    }
  }
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json ops = json::array();
  for (OpKind k : cfg.net.ops) ops.push_back(op_name(k));
  return {
    {"profile", cfg.profile},
    {"seed", cfg.seed},
    {"data",
     {
       {"source", cfg.data.source},
       {"kind", cfg.data.synthetic.kind == SyntheticKind::GaussianBlobs ? "blobs" : "striped"},
       {"n", cfg.data.synthetic.n},
       {"classes", cfg.data.synthetic.classes},
       {"channels", cfg.data.synthetic.channels},
       {"height", cfg.data.synthetic.height},
       {"width", cfg.data.synthetic.width},
       {"amplitude", cfg.data.synthetic.amplitude},
       {"noise", cfg.data.synthetic.noise},
       {"test_n", cfg.data.test_n},
       {"cifar_dir", cfg.data.cifar_dir},
       {"subset", cfg.data.subset},
       {"split_fraction", cfg.data.split_fraction},
     }},
    {"net",
     {
       {"cells", cfg.net.cells},
       {"nodes", cfg.net.nodes},
       {"channels", cfg.net.channels},
       {"stem_multiplier", cfg.net.stem_multiplier},
       {"ops", ops},
     }},
    {"search",
     {
       {"strategy", strategy_name(cfg.search.strategy)},
       {"epochs", cfg.search.epochs},
       {"warmup", cfg.search.warmup},
       {"batch", cfg.search.batch},
       {"lambda", cfg.search.lambda},
       {"f_kind", f_kind_name(cfg.search.f_kind)},
       {"perturb", perturb_to_json(cfg.search.perturb)},
       {"w_opt", sgd_to_json(cfg.search.w_opt)},
       {"alpha_opt", adam_to_json(cfg.search.alpha_opt)},
     }},
    {"train",
     {
       {"cells", cfg.train.cells},
       {"channels", cfg.train.channels},
       {"epochs", cfg.train.epochs},
       {"batch", cfg.train.batch},
       {"opt", sgd_to_json(cfg.train.opt)},
       {"cutout", cfg.train.cutout},
       {"drop_path", cfg.train.drop_path},
       {"aux_weight", cfg.train.aux_weight},
       {"adversarial", perturb_to_json(cfg.train.adversarial)},
     }},
    {"attack",
     {
       {"fgsm_epsilon", cfg.attack.fgsm_epsilon},
       {"pgd", perturb_to_json(cfg.attack.pgd)},
     }},
  };
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("config: cannot write " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

SearchConfig make_search_config(const RunConfig& cfg, const Dataset& ds) {
  SearchConfig sc;
  sc.strategy = cfg.search.strategy;
  sc.epochs = cfg.search.epochs;
  sc.warmup = cfg.search.warmup;
  sc.batch = cfg.search.batch;
  sc.lambda = cfg.search.lambda;
  sc.f_kind = cfg.search.f_kind;
  sc.perturb = cfg.search.perturb;
  sc.w_opt = cfg.search.w_opt;
  sc.alpha_opt = cfg.search.alpha_opt;
  sc.net = NetworkShape{cfg.net.cells, cfg.net.nodes, cfg.net.channels,
                        ds.channels, ds.classes, cfg.net.stem_multiplier};
  sc.ops = cfg.net.ops;
  sc.seed = cfg.seed;
  return sc;
}

NetworkShape make_eval_shape(const RunConfig& cfg, const Dataset& ds) {
  return NetworkShape{cfg.train.cells, cfg.net.nodes, cfg.train.channels,
                      ds.channels, ds.classes, cfg.net.stem_multiplier};
}

}  // namespace rnas
