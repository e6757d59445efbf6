#include "rnas/eval_train.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace rnas {

const char* train_mode_name(TrainMode m) {
  return m == TrainMode::Standard ? "standard" : "adversarial";
}

void TrainProtocol::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (cutout < 0) throw std::invalid_argument("train: cutout must be >= 0");
  if (drop_path < 0.0 || drop_path >= 1.0) throw std::invalid_argument("train: drop_path must be in [0,1)");
  if (aux_weight < 0.0) throw std::invalid_argument("train: aux_weight must be >= 0");
  if (mode == TrainMode::Adversarial) adversarial.with_kind(PerturbKind::Pgd).validate();
}

void apply_cutout(Tensor<float>& batch, int height, int width, int length, Rng& rng) {
  if (length <= 0) return;
  const int n = batch.shape()[0], c = batch.shape()[1];
  auto v = batch.values();
  for (int b = 0; b < n; ++b) {
    const int cy = static_cast<int>(rng.integer(0, height - 1));
    const int cx = static_cast<int>(rng.integer(0, width - 1));
    const int y0 = std::max(0, cy - length / 2);
    const int y1 = std::min(height, cy - length / 2 + length);
    const int x0 = std::max(0, cx - length / 2);
    const int x1 = std::min(width, cx - length / 2 + length);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = y0; y < y1; ++y) {
        float* row = v.data() + ((static_cast<std::size_t>(b) * c + ch) * height + y) * width;
        for (int x = x0; x < x1; ++x) row[x] = 0.0f;
      }
    }
  }
}

namespace {

int argmax_row(std::span<const float> row) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(row.size()); ++j) {
    if (row[static_cast<std::size_t>(j)] > row[static_cast<std::size_t>(best)]) best = j;
  }
  return best;
}

int count_correct(const Tensor<float>& logits, const std::vector<int>& labels) {
  const int n = logits.shape()[0], c = logits.shape()[1];
  auto v = logits.values();
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    if (argmax_row(v.subspan(static_cast<std::size_t>(i) * c, static_cast<std::size_t>(c))) == labels[static_cast<std::size_t>(i)]) {
      ++correct;
    }
  }
  return correct;
}

}  // namespace

std::vector<TrainHistoryRow> train_discrete(DiscreteNet<float>& net, const Dataset& train,
                                            const TrainProtocol& proto) {
  proto.validate();
  if (static_cast<int>(train.size()) < proto.batch) {
    throw DataError("train: dataset smaller than one batch of " + std::to_string(proto.batch));
  }
  SgdMomentum<float> opt(proto.opt, net.params());
  Rng data_rng = Rng::derive(proto.seed, "train-data");
  Rng attack_rng = Rng::derive(proto.seed, "train-attack");
  Rng path_rng = Rng::derive(proto.seed, "train-droppath");
  const int batches = static_cast<int>(train.size()) / proto.batch;

  std::vector<TrainHistoryRow> history;
  for (int epoch = 0; epoch < proto.epochs; ++epoch) {
    auto idx = data_rng.permutation(train.size());
    TrainHistoryRow row;
    row.epoch = epoch;
    int correct = 0;
    for (int b = 0; b < batches; ++b) {
      auto [x, y] = make_batch(train, std::span<const std::size_t>(idx).subspan(
                                          static_cast<std::size_t>(b) * proto.batch, proto.batch));
      if (proto.cutout > 0) apply_cutout(x, train.height, train.width, proto.cutout, data_rng);
      Tensor<float> used = x;
      if (proto.mode == TrainMode::Adversarial) {
        Objective<float> objective = [&](const Tensor<float>& xp) {
          return cross_entropy(net.forward(xp), y);
        };
        used = pgd_attack(objective, x, proto.adversarial.with_kind(PerturbKind::Pgd), attack_rng);
      }
      zero_grads(opt.params());
      {
        Graph<float> graph;
        Graph<float>::Scope scope(graph);
        auto fwd = net.forward_train(used, proto.drop_path, proto.drop_path > 0 ? &path_rng : nullptr);
        Tensor<float> loss = cross_entropy(fwd.logits, y);
        if (proto.aux_weight > 0 && fwd.aux_logits.defined()) {
          loss = add(loss, scale(cross_entropy(fwd.aux_logits, y), static_cast<float>(proto.aux_weight)));
        }
        row.loss += loss.item();
        correct += count_correct(fwd.logits, y);
        graph.backward(loss);
      }
      opt.step();
    }
    row.loss /= batches;
    row.accuracy = static_cast<double>(correct) / (static_cast<double>(batches) * proto.batch);
    history.push_back(row);
  }
  return history;
}

namespace {

// Evaluation batches walk the dataset in order; the tail partial batch is
// included so every example counts once.
template <class Fn>
double batched_accuracy(const Dataset& ds, int batch, Fn&& fn) {
  if (ds.size() == 0) throw DataError("evaluate: empty dataset");
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) idx[i] = i;
  int correct = 0;
  for (std::size_t at = 0; at < ds.size(); at += static_cast<std::size_t>(batch)) {
    const std::size_t take = std::min(static_cast<std::size_t>(batch), ds.size() - at);
    auto [x, y] = make_batch(ds, std::span<const std::size_t>(idx).subspan(at, take));
    correct += fn(x, y);
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace

double evaluate_accuracy(const DiscreteNet<float>& net, const Dataset& ds, int batch) {
  return batched_accuracy(ds, batch, [&](const Tensor<float>& x, const std::vector<int>& y) {
    return count_correct(net.forward(x), y);
  });
}

double evaluate_under_attack(const DiscreteNet<float>& net, const Dataset& ds,
                             const PerturbSpec& attack, int batch, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "evaluate-attack");
  return batched_accuracy(ds, batch, [&](const Tensor<float>& x, const std::vector<int>& y) {
    Objective<float> objective = [&](const Tensor<float>& xp) {
      return cross_entropy(net.forward(xp), y);
    };
    Tensor<float> xp = perturb_example(objective, x, attack, rng);
    return count_correct(net.forward(xp), y);
  });
}

std::string table_to_csv(const std::vector<RobustnessRow>& rows) {
  std::ostringstream os;
  os << "model,params,mode,clean,fgsm,pgd20\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.model << ',' << r.params << ',' << r.mode << ',' << fmt(r.clean) << ',' << fmt(r.fgsm)
       << ',' << fmt(r.pgd20) << "\n";
  }
  return os.str();
}

std::vector<RobustnessRow> table_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != "model,params,mode,clean,fgsm,pgd20") {
    throw std::invalid_argument("table: bad header: " + line);
  }
  std::vector<RobustnessRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    RobustnessRow r;
    std::string field;
    std::getline(ls, r.model, ',');
    std::getline(ls, field, ',');
    r.params = std::stoll(field);
    std::getline(ls, r.mode, ',');
    std::getline(ls, field, ',');
    r.clean = std::stod(field);
    std::getline(ls, field, ',');
    r.fgsm = std::stod(field);
    std::getline(ls, field, ',');
    r.pgd20 = std::stod(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string table_to_markdown(const std::vector<RobustnessRow>& rows) {
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", v * 100.0);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Model", "Params", "Mode", "Clean", "FGSM", "PGD20"});
  for (const auto& r : rows) {
    cells.push_back({r.model, std::to_string(r.params), r.mode, pct(r.clean), pct(r.fgsm), pct(r.pgd20)});
  }
  std::vector<std::size_t> widths(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    os << '|';
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << ' ' << row[c] << std::string(widths[c] - row[c].size(), ' ') << " |";
    }
    os << '\n';
  };
  emit(cells[0]);
  os << '|';
  for (std::size_t c = 0; c < widths.size(); ++c) os << std::string(widths[c] + 2, '-') << '|';
  os << '\n';
  for (std::size_t r = 1; r < cells.size(); ++r) emit(cells[r]);
  return os.str();
}

}  // namespace rnas
