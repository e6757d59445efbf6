#include "rnas/search.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace rnas {

const char* strategy_name(SearchStrategy s) {
  switch (s) {
    case SearchStrategy::Max: return "max";
    case SearchStrategy::Uniform: return "uniform";
    case SearchStrategy::Baseline: return "baseline";
  }
  return "?";
}

std::optional<SearchStrategy> strategy_from_name(std::string_view name) {
  if (name == "max") return SearchStrategy::Max;
  if (name == "uniform") return SearchStrategy::Uniform;
  if (name == "baseline") return SearchStrategy::Baseline;
  return std::nullopt;
}

void SearchConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("search: epochs must be >= 1");
  if (warmup < 0 || warmup >= epochs) {
    throw std::invalid_argument("search: warmup must satisfy 0 <= W < T, got W=" +
                                std::to_string(warmup) + " T=" + std::to_string(epochs));
  }
  if (batch < 1) throw std::invalid_argument("search: batch must be >= 1");
  if (lambda < 0) throw std::invalid_argument("search: lambda must be >= 0");
  if (strategy == SearchStrategy::Max) perturb.with_kind(PerturbKind::Pgd).validate();
  if (strategy == SearchStrategy::Uniform) perturb.with_kind(PerturbKind::Uniform).validate();
}

namespace {

std::vector<double> alpha_entropies(const Tensor<float>& alpha) {
  const auto rows = Supernet<float>::alpha_rows(alpha);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    double h = 0.0;
    for (double v : row) {
      const double p = std::exp(v - mx) / z;
      if (p > 0.0) h -= p * std::log(p);
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace

struct SearchDriver::State {
  SearchConfig cfg;
  Dataset train;
  Dataset valid;
  Supernet<float> net;
  SgdMomentum<float> w_opt;
  Adam<float> alpha_opt;
  Rng data_rng;
  Rng attack_rng;
  int epoch = 0;
  int batches = 0;
  std::vector<EpochRecord> records;
  double wall_clock = 0.0;

  State(SearchConfig c, Dataset tr, Dataset va, Rng init_rng)
      : cfg(c),
        train(std::move(tr)),
        valid(std::move(va)),
        net(c.net, c.ops, init_rng),
        w_opt(c.w_opt, net.weight_params()),
        alpha_opt(c.alpha_opt, net.arch_params()),
        data_rng(Rng::derive(c.seed, "search-data")),
        attack_rng(Rng::derive(c.seed, "search-attack")) {
    batches = static_cast<int>(std::min(train.size(), valid.size())) / cfg.batch;
    if (batches < 1) {
      throw DataError("search: dataset too small for one batch of " + std::to_string(cfg.batch) +
                      " (train " + std::to_string(train.size()) + ", valid " +
                      std::to_string(valid.size()) + ")");
    }
  }

  bool regularized() const {
    return cfg.strategy != SearchStrategy::Baseline && cfg.lambda != 0.0;
  }

  // Perturbed batch for the strategy. The attack objective is the output
  // discrepancy against the frozen clean logits, maximized over the ball.
  Tensor<float> generate(const Tensor<float>& x) {
    if (cfg.strategy == SearchStrategy::Uniform) {
      return uniform_noise(x, cfg.perturb.with_kind(PerturbKind::Uniform), attack_rng);
    }
    Tensor<float> clean = net.forward(x).detach();
    Objective<float> objective = [&](const Tensor<float>& xp) {
      return discrepancy(clean, net.forward(xp), cfg.f_kind);
    };
    return pgd_attack(objective, x, cfg.perturb.with_kind(PerturbKind::Pgd), attack_rng);
  }

  // One optimizer step on either alpha (valid batch) or w (train batch),
  // minimizing task loss + lambda * f. The other parameter group only ever
  // receives gradient buffers, never a value update.
  double update(const Tensor<float>& x, const std::vector<int>& y, bool arch_step, double& reg_out) {
    Tensor<float> xp;
    if (regularized()) xp = generate(x);
    if (arch_step) {
      zero_grads(alpha_opt.params());
    } else {
      zero_grads(w_opt.params());
    }
    double task_value = 0.0;
    {
      Graph<float> graph;
      Graph<float>::Scope scope(graph);
      Tensor<float> logits = net.forward(x);
      Tensor<float> task = cross_entropy(logits, y);
      Tensor<float> total = task;
      if (regularized()) {
        Tensor<float> disc = discrepancy(logits, net.forward(xp), cfg.f_kind);
        reg_out += disc.item();
        total = robust_loss(task, disc, cfg.lambda);
      }
      task_value = task.item();
      graph.backward(total);
    }
    if (arch_step) {
      alpha_opt.step();
    } else {
      w_opt.step();
    }
    return task_value;
  }

  const EpochRecord& run_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    const bool warm = epoch < cfg.warmup;
    auto train_idx = data_rng.permutation(train.size());
    auto valid_idx = data_rng.permutation(valid.size());

    EpochRecord rec;
    rec.epoch = epoch;
    double reg_sum = 0.0;
    std::int64_t reg_count = 0;
    for (int b = 0; b < batches; ++b) {
      auto [xt, yt] = make_batch(train, std::span<const std::size_t>(train_idx).subspan(
                                            static_cast<std::size_t>(b) * cfg.batch, cfg.batch));
      auto [xv, yv] = make_batch(valid, std::span<const std::size_t>(valid_idx).subspan(
                                            static_cast<std::size_t>(b) * cfg.batch, cfg.batch));
      if (warm) {
        // Warm-up trains w only; alpha stays bit-identical. The valid loss is
        // still reported from a gradient-free forward.
        rec.valid_loss += cross_entropy(net.forward(xv), yv).item();
      } else {
        double reg = 0.0;
        rec.valid_loss += update(xv, yv, /*arch_step=*/true, reg);
        reg_sum += reg;
        reg_count += regularized() ? 1 : 0;
        ++rec.alpha_steps;
      }
      double reg = 0.0;
      rec.train_loss += update(xt, yt, /*arch_step=*/false, reg);
      reg_sum += reg;
      reg_count += regularized() ? 1 : 0;
      ++rec.w_steps;
    }
    rec.train_loss /= batches;
    rec.valid_loss /= batches;
    rec.regularizer = reg_count > 0 ? reg_sum / static_cast<double>(reg_count) : 0.0;
    rec.entropy_normal = alpha_entropies(net.alpha_normal());
    rec.entropy_reduce = alpha_entropies(net.alpha_reduce());
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    wall_clock += rec.seconds;
    ++epoch;
    records.push_back(std::move(rec));
    return records.back();
  }
};

SearchDriver::SearchDriver(SearchConfig cfg, Dataset train, Dataset valid) {
  cfg.validate();
  Rng init_rng = Rng::derive(cfg.seed, "search-init");
  state_ = std::make_unique<State>(std::move(cfg), std::move(train), std::move(valid), init_rng);
}

SearchDriver::~SearchDriver() = default;

const EpochRecord& SearchDriver::run_epoch() { return state_->run_epoch(); }
int SearchDriver::epochs_run() const { return state_->epoch; }
int SearchDriver::batches_per_epoch() const { return state_->batches; }
Supernet<float>& SearchDriver::net() { return state_->net; }
const SearchConfig& SearchDriver::config() const { return state_->cfg; }
const std::vector<EpochRecord>& SearchDriver::records() const { return state_->records; }
Genotype SearchDriver::derive() const { return state_->net.derive(); }

SearchReport SearchDriver::finish() {
  SearchReport report;
  report.epochs = state_->records;
  report.genotype = state_->net.derive();
  report.wall_clock_seconds = state_->wall_clock;
  return report;
}

SearchReport run_search(const SearchConfig& cfg, const Dataset& train, const Dataset& valid) {
  SearchDriver driver(cfg, train, valid);
  for (int e = 0; e < cfg.epochs; ++e) driver.run_epoch();
  return driver.finish();
}

void write_report_csv(const SearchReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  const std::size_t en = report.epochs.empty() ? 0 : report.epochs.front().entropy_normal.size();
  const std::size_t er = report.epochs.empty() ? 0 : report.epochs.front().entropy_reduce.size();
  out << "epoch,train_loss,valid_loss,regularizer,alpha_steps,w_steps";
  for (std::size_t e = 0; e < en; ++e) out << ",entropy_normal_" << e;
  for (std::size_t e = 0; e < er; ++e) out << ",entropy_reduce_" << e;
  out << "\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& rec : report.epochs) {
    out << rec.epoch << ',' << fmt(rec.train_loss) << ',' << fmt(rec.valid_loss) << ','
        << fmt(rec.regularizer) << ',' << rec.alpha_steps << ',' << rec.w_steps;
    for (double v : rec.entropy_normal) out << ',' << fmt(v);
    for (double v : rec.entropy_reduce) out << ',' << fmt(v);
    out << "\n";
  }
}

}  // namespace rnas
