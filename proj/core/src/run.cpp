#include "rnas/run.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rnas/checkpoint.hpp"

namespace rnas {

namespace fs = std::filesystem;

namespace {

std::string path_str(const fs::path& p) { return p.string(); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("run: cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("run: cannot write " + path);
  out << text;
}

std::string history_csv(const std::vector<TrainHistoryRow>& history) {
  std::string out = "epoch,loss,accuracy\n";
  char buf[96];
  for (const auto& row : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", row.epoch, row.loss, row.accuracy);
    out += buf;
  }
  return out;
}

}  // namespace

void write_error_record(const std::string& out_dir, const std::string& stage, const std::string& message) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(fs::path(out_dir) / "error.json", std::ios::binary);
  if (out) {
    nlohmann::json j = {{"stage", stage}, {"error", message}};
    out << j.dump(2) << "\n";
  }
}

DataBundle build_datasets(const RunConfig& cfg) {
  DataBundle bundle;
  if (cfg.data.source == "synthetic") {
    bundle.train = gen_synthetic(cfg.data.synthetic, Rng::mix(cfg.seed, "data-train"));
    SyntheticSpec test_spec = cfg.data.synthetic;
    test_spec.n = cfg.data.test_n;
    bundle.test = gen_synthetic(test_spec, Rng::mix(cfg.seed, "data-test"));
  } else {
    bundle.train = load_cifar10(cfg.data.cifar_dir, cfg.data.subset, cfg.seed);
    const fs::path test_file = fs::path(cfg.data.cifar_dir) / "test_batch.bin";
    bundle.test = load_cifar10(path_str(test_file), 0, cfg.seed);
  }
  return bundle;
}

SearchArtifacts cmd_search(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  try {
    DataBundle data = build_datasets(cfg);
    auto [train, valid] = split(data.train, SplitSpec{cfg.data.split_fraction, cfg.seed});
    SearchConfig sc = make_search_config(cfg, data.train);

    SearchArtifacts art;
    art.config = path_str(fs::path(out_dir) / "config.json");
    save_config_file(cfg, art.config);

    SearchDriver driver(sc, train, valid);
    for (int e = 0; e < sc.epochs; ++e) driver.run_epoch();
    SearchReport report = driver.finish();

    art.report = path_str(fs::path(out_dir) / "report.csv");
    write_report_csv(report, art.report);
    art.genotype = path_str(fs::path(out_dir) / "genotype.txt");
    save_genotype(report.genotype, art.genotype);
    art.weights = path_str(fs::path(out_dir) / "weights.ckpt");
    save_checkpoint(driver.net().named_weights(), art.weights);
    art.alpha = path_str(fs::path(out_dir) / "alpha.ckpt");
    save_checkpoint(driver.net().named_arch_params(), art.alpha);
    return art;
  } catch (const std::exception& e) {
    write_error_record(out_dir, "search", e.what());
    throw;
  }
}

std::string cmd_derive(const RunConfig& cfg, const std::string& alpha_checkpoint,
                       const std::string& out_path) {
  auto entries = load_checkpoint(alpha_checkpoint);
  std::vector<std::vector<double>> normal, reduce;
  for (const auto& e : entries) {
    if (e.shape.size() != 2) throw std::runtime_error("derive: '" + e.name + "' is not an alpha matrix");
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(e.shape[0]));
    for (int r = 0; r < e.shape[0]; ++r) {
      rows[static_cast<std::size_t>(r)].assign(
          e.values.begin() + static_cast<std::ptrdiff_t>(r) * e.shape[1],
          e.values.begin() + static_cast<std::ptrdiff_t>(r + 1) * e.shape[1]);
    }
    if (e.name == "alpha.normal") {
      normal = std::move(rows);
    } else if (e.name == "alpha.reduce") {
      reduce = std::move(rows);
    } else {
      throw std::runtime_error("derive: unexpected entry '" + e.name + "'");
    }
  }
  if (normal.empty() || reduce.empty()) {
    throw std::runtime_error("derive: checkpoint is missing alpha.normal or alpha.reduce");
  }
  Genotype g = derive_genotype(normal, reduce, cfg.net.ops, cfg.net.nodes);
  save_genotype(g, out_path);
  return out_path;
}

TrainArtifacts cmd_train(const RunConfig& cfg, const Genotype& genotype, TrainMode mode,
                         const std::string& out_dir) {
  ensure_dir(out_dir);
  try {
    DataBundle data = build_datasets(cfg);
    Rng init = Rng::derive(Rng::mix(cfg.seed, train_mode_name(mode)), "train-init");
    DiscreteNet<float> net(genotype, make_eval_shape(cfg, data.train), init, cfg.train.aux_weight > 0);

    TrainProtocol proto;
    proto.mode = mode;
    proto.epochs = cfg.train.epochs;
    proto.batch = cfg.train.batch;
    proto.opt = cfg.train.opt;
    proto.cutout = cfg.train.cutout;
    proto.drop_path = cfg.train.drop_path;
    proto.aux_weight = cfg.train.aux_weight;
    proto.adversarial = cfg.train.adversarial;
    proto.seed = Rng::mix(cfg.seed, std::string("train-") + train_mode_name(mode));

    auto history = train_discrete(net, data.train, proto);

    TrainArtifacts art;
    const std::string tag = train_mode_name(mode);
    art.model = path_str(fs::path(out_dir) / ("model-" + tag + ".ckpt"));
    save_checkpoint(net.named_params(), art.model);
    art.history = path_str(fs::path(out_dir) / ("history-" + tag + ".csv"));
    write_text(art.history, history_csv(history));
    return art;
  } catch (const std::exception& e) {
    write_error_record(out_dir, "train", e.what());
    throw;
  }
}

RobustnessRow cmd_attack(const RunConfig& cfg, const Genotype& genotype,
                         const std::string& model_checkpoint, TrainMode mode,
                         const std::string& model_name, const std::string& out_dir) {
  ensure_dir(out_dir);
  try {
    DataBundle data = build_datasets(cfg);
    Rng init = Rng::derive(Rng::mix(cfg.seed, train_mode_name(mode)), "train-init");
    DiscreteNet<float> net(genotype, make_eval_shape(cfg, data.train), init, cfg.train.aux_weight > 0);
    apply_checkpoint(load_checkpoint(model_checkpoint), net.named_params());

    const std::uint64_t eval_seed = Rng::mix(cfg.seed, "attack-eval");
    PerturbSpec fgsm{PerturbKind::Fgsm, cfg.attack.fgsm_epsilon, 0.0, 0, false,
                     cfg.attack.pgd.clamp_lo, cfg.attack.pgd.clamp_hi};
    RobustnessRow row;
    row.model = model_name;
    row.params = net.parameter_count();
    row.mode = train_mode_name(mode);
    row.clean = evaluate_accuracy(net, data.test, cfg.train.batch);
    row.fgsm = evaluate_under_attack(net, data.test, fgsm, cfg.train.batch, eval_seed);
    row.pgd20 = evaluate_under_attack(net, data.test, cfg.attack.pgd.with_kind(PerturbKind::Pgd),
                                      cfg.train.batch, eval_seed);

    write_text(path_str(fs::path(out_dir) / ("row-" + row.mode + ".csv")), table_to_csv({row}));
    return row;
  } catch (const std::exception& e) {
    write_error_record(out_dir, "attack", e.what());
    throw;
  }
}

std::string cmd_report(const std::vector<std::string>& row_csvs, const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<RobustnessRow> rows;
  for (const auto& path : row_csvs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("report: cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    for (auto& row : table_from_csv(buf.str())) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("report: no rows");
  write_text(path_str(fs::path(out_dir) / "table.csv"), table_to_csv(rows));
  const std::string md = table_to_markdown(rows);
  write_text(path_str(fs::path(out_dir) / "table.md"), md);
  return md;
}

PipelineResult cmd_pipeline(const RunConfig& cfg, const std::string& out_dir,
                            const std::optional<std::string>& genotype_path) {
  ensure_dir(out_dir);
  PipelineResult result;
  if (genotype_path) {
    result.genotype = load_genotype(*genotype_path);
  } else {
    SearchArtifacts sa = cmd_search(cfg, path_str(fs::path(out_dir) / "search"));
    result.genotype = load_genotype(sa.genotype);
  }
  save_genotype(result.genotype, path_str(fs::path(out_dir) / "genotype.txt"));

  const std::string model_name = "rnas-" + std::string(strategy_name(cfg.search.strategy));
  std::vector<std::string> row_files;
  for (TrainMode mode : {TrainMode::Adversarial, TrainMode::Standard}) {
    const std::string stage_dir = path_str(fs::path(out_dir) / train_mode_name(mode));
    TrainArtifacts ta = cmd_train(cfg, result.genotype, mode, stage_dir);
    RobustnessRow row = cmd_attack(cfg, result.genotype, ta.model, mode, model_name, stage_dir);
    row_files.push_back(path_str(fs::path(stage_dir) / ("row-" + row.mode + ".csv")));
    result.rows.push_back(std::move(row));
  }
  result.table_markdown = cmd_report(row_files, out_dir);
  result.table_csv = path_str(fs::path(out_dir) / "table.csv");
  return result;
}

}  // namespace rnas
