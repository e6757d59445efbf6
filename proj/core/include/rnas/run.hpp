#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rnas/config.hpp"
#include "rnas/genotype.hpp"

namespace rnas {

// Command entry points shared by the CLI and the test harness. Each writes
// its artifacts into `out_dir` (created if missing) and throws ConfigError /
// DataError / std::runtime_error on failure; the CLI maps these to exit
// codes. A mid-run failure leaves partial artifacts plus error.json.

struct SearchArtifacts {
  std::string config;      // resolved config echo
  std::string report;      // per-epoch CSV
  std::string genotype;    // derived architecture
  std::string weights;     // final supernet w checkpoint
  std::string alpha;       // final architecture parameters
};

SearchArtifacts cmd_search(const RunConfig& cfg, const std::string& out_dir);

// Reads an alpha checkpoint and writes the derived genotype.
std::string cmd_derive(const RunConfig& cfg, const std::string& alpha_checkpoint,
                       const std::string& out_path);

struct TrainArtifacts {
  std::string model;    // trained parameter checkpoint
  std::string history;  // per-epoch loss/accuracy CSV
};

TrainArtifacts cmd_train(const RunConfig& cfg, const Genotype& genotype, TrainMode mode,
                         const std::string& out_dir);

// Clean / FGSM / PGD-20 accuracy of a trained checkpoint on the test set.
RobustnessRow cmd_attack(const RunConfig& cfg, const Genotype& genotype,
                         const std::string& model_checkpoint, TrainMode mode,
                         const std::string& model_name, const std::string& out_dir);

// Merges row CSVs into table.csv and table.md; returns the markdown.
std::string cmd_report(const std::vector<std::string>& row_csvs, const std::string& out_dir);

struct PipelineResult {
  Genotype genotype;
  std::vector<RobustnessRow> rows;
  std::string table_csv;
  std::string table_markdown;
};

// search -> derive -> train (both modes) -> attack -> report. When `genotype`
// is given the search stage is skipped.
PipelineResult cmd_pipeline(const RunConfig& cfg, const std::string& out_dir,
                            const std::optional<std::string>& genotype_path = std::nullopt);

// Dataset assembly per the config's data section: a training pool and a
// held-out test set.
struct DataBundle {
  Dataset train;
  Dataset test;
};
DataBundle build_datasets(const RunConfig& cfg);

void write_error_record(const std::string& out_dir, const std::string& stage, const std::string& message);

}  // namespace rnas
