#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rnas/data.hpp"
#include "rnas/discrete_net.hpp"
#include "rnas/optim.hpp"
#include "rnas/perturb.hpp"

namespace rnas {

enum class TrainMode { Standard, Adversarial };

const char* train_mode_name(TrainMode m);

// Training protocol for derived discrete networks. Standard mode minimizes
// cross-entropy on natural inputs; adversarial mode minimizes cross-entropy
// on PGD examples generated against the current network.
struct TrainProtocol {
  TrainMode mode = TrainMode::Standard;
  int epochs = 30;
  int batch = 64;
  SgdConfig opt;
  int cutout = 0;          // side length of the zeroed square; 0 disables
  double drop_path = 0.0;  // per-edge drop probability
  double aux_weight = 0.0; // auxiliary classifier loss weight; 0 disables
  PerturbSpec adversarial = PerturbSpec::adversarial_train_default();
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistoryRow {
  int epoch = 0;
  double loss = 0.0;      // mean total loss over the epoch
  double accuracy = 0.0;  // accuracy on the training inputs actually used
};

std::vector<TrainHistoryRow> train_discrete(DiscreteNet<float>& net, const Dataset& train,
                                            const TrainProtocol& proto);

// Plain accuracy, no perturbation, parameters untouched.
double evaluate_accuracy(const DiscreteNet<float>& net, const Dataset& ds, int batch);

// Accuracy under the given attack; the objective is cross-entropy against the
// true labels. Parameters are read, never written.
double evaluate_under_attack(const DiscreteNet<float>& net, const Dataset& ds,
                             const PerturbSpec& attack, int batch, std::uint64_t seed);

// Zeroes a cutout x cutout square at a random center per image, clipped at
// the borders. Mutates the batch tensor in place.
void apply_cutout(Tensor<float>& batch, int height, int width, int length, Rng& rng);

struct RobustnessRow {
  std::string model;
  std::int64_t params = 0;
  std::string mode;  // "standard" or "adversarial"
  double clean = 0.0;
  double fgsm = 0.0;
  double pgd20 = 0.0;
};

std::string table_to_csv(const std::vector<RobustnessRow>& rows);
std::vector<RobustnessRow> table_from_csv(const std::string& csv);
// Aligned table with accuracies as percentages, two decimals.
std::string table_to_markdown(const std::vector<RobustnessRow>& rows);

}  // namespace rnas
