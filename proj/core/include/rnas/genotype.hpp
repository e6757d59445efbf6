#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rnas {

enum class OpKind { Zero, Skip, Conv3, Conv5, AvgPool3, MaxPool3 };

using OpSet = std::vector<OpKind>;

OpSet default_op_set();
const char* op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);
bool op_has_weights(OpKind kind);

// Edges are enumerated node-major: intermediate node i (0-based) receives
// edges from inputs j = 0..i+1, where 0 and 1 are the two cell inputs.
inline int edge_offset(int node) { return node * (node + 3) / 2; }
inline int edge_count(int nodes) { return edge_offset(nodes); }

// One retained connection: `node` is the intermediate node in cell
// coordinates (2 = first intermediate), `input` an earlier node index.
struct GenotypeEdge {
  int node = 0;
  int input = 0;
  OpKind op = OpKind::Skip;

  bool operator==(const GenotypeEdge&) const = default;
};

struct Genotype {
  int nodes = 0;
  std::vector<GenotypeEdge> normal;
  std::vector<GenotypeEdge> reduce;

  bool operator==(const Genotype&) const = default;
};

// Checks the structural invariants: two inputs per intermediate node, inputs
// strictly earlier in the DAG, no zero ops. Throws on violation.
void validate_genotype(const Genotype& g);

// Discrete architecture extraction. Per intermediate node the two incoming
// edges whose strongest non-zero op carries the highest softmax weight are
// kept, recording that op. Ties break toward the lowest edge then op index.
Genotype derive_genotype(const std::vector<std::vector<double>>& alpha_normal,
                         const std::vector<std::vector<double>>& alpha_reduce,
                         const OpSet& ops, int nodes);

std::string genotype_to_text(const Genotype& g);
Genotype genotype_from_text(const std::string& text);

void save_genotype(const Genotype& g, const std::string& path);
Genotype load_genotype(const std::string& path);

}  // namespace rnas
