#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rnas/data.hpp"
#include "rnas/genotype.hpp"
#include "rnas/optim.hpp"
#include "rnas/perturb.hpp"
#include "rnas/robust_loss.hpp"
#include "rnas/supernet.hpp"

namespace rnas {

enum class SearchStrategy { Max, Uniform, Baseline };

const char* strategy_name(SearchStrategy s);
std::optional<SearchStrategy> strategy_from_name(std::string_view name);

struct SearchConfig {
  SearchStrategy strategy = SearchStrategy::Uniform;
  int epochs = 50;
  int warmup = 15;
  int batch = 64;
  double lambda = 1.0;
  FKind f_kind = FKind::KlDivergence;
  PerturbSpec perturb = PerturbSpec::search_default();
  SgdConfig w_opt;
  AdamConfig alpha_opt;
  NetworkShape net;
  OpSet ops = default_op_set();
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double regularizer = 0.0;
  std::vector<double> entropy_normal;  // softmax entropy per edge
  std::vector<double> entropy_reduce;
  std::int64_t alpha_steps = 0;
  std::int64_t w_steps = 0;
  double seconds = 0.0;  // never written to artifacts
};

struct SearchReport {
  std::vector<EpochRecord> epochs;
  Genotype genotype;
  double wall_clock_seconds = 0.0;
};

// One search run: warm-up epochs update only w, then alpha and w steps
// alternate per batch pair. The driver is exposed so callers can step
// epoch-by-epoch and inspect state between epochs.
class SearchDriver {
 public:
  SearchDriver(SearchConfig cfg, Dataset train, Dataset valid);
  ~SearchDriver();
  SearchDriver(const SearchDriver&) = delete;
  SearchDriver& operator=(const SearchDriver&) = delete;

  const EpochRecord& run_epoch();
  int epochs_run() const;
  int batches_per_epoch() const;
  Supernet<float>& net();
  const SearchConfig& config() const;
  const std::vector<EpochRecord>& records() const;
  Genotype derive() const;
  SearchReport finish();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

SearchReport run_search(const SearchConfig& cfg, const Dataset& train, const Dataset& valid);

// One row per epoch: losses, regularizer, step counters, per-edge entropy.
void write_report_csv(const SearchReport& report, const std::string& path);

}  // namespace rnas
