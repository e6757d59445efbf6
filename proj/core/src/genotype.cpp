#include "rnas/genotype.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rnas {

OpSet default_op_set() {
  return {OpKind::Zero, OpKind::Skip, OpKind::Conv3, OpKind::Conv5, OpKind::AvgPool3, OpKind::MaxPool3};
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Zero: return "zero";
    case OpKind::Skip: return "skip";
    case OpKind::Conv3: return "conv3";
    case OpKind::Conv5: return "conv5";
    case OpKind::AvgPool3: return "avgpool3";
    case OpKind::MaxPool3: return "maxpool3";
  }
  return "?";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (OpKind k : {OpKind::Zero, OpKind::Skip, OpKind::Conv3, OpKind::Conv5, OpKind::AvgPool3, OpKind::MaxPool3}) {
    if (name == op_name(k)) return k;
  }
  return std::nullopt;
}

bool op_has_weights(OpKind kind) { return kind == OpKind::Conv3 || kind == OpKind::Conv5; }

void validate_genotype(const Genotype& g) {
  auto check_cell = [&](const std::vector<GenotypeEdge>& edges, const char* which) {
    if (static_cast<int>(edges.size()) != 2 * g.nodes) {
      throw std::invalid_argument(std::string("genotype: ") + which + " cell has " +
                                  std::to_string(edges.size()) + " edges, expected " +
                                  std::to_string(2 * g.nodes));
    }
    for (int i = 0; i < g.nodes; ++i) {
      const GenotypeEdge& a = edges[static_cast<std::size_t>(2 * i)];
      const GenotypeEdge& b = edges[static_cast<std::size_t>(2 * i + 1)];
      const int node = i + 2;
      for (const GenotypeEdge& e : {a, b}) {
        if (e.node != node) {
          throw std::invalid_argument(std::string("genotype: ") + which + " edges out of order at node " +
                                      std::to_string(node));
        }
        if (e.input < 0 || e.input >= node) {
          throw std::invalid_argument(std::string("genotype: ") + which + " node " + std::to_string(node) +
                                      " uses invalid input " + std::to_string(e.input));
        }
        if (e.op == OpKind::Zero) {
          throw std::invalid_argument(std::string("genotype: ") + which + " node " + std::to_string(node) +
                                      " retained a zero op");
        }
      }
      if (a.input == b.input) {
        throw std::invalid_argument(std::string("genotype: ") + which + " node " + std::to_string(node) +
                                    " uses input " + std::to_string(a.input) + " twice");
      }
    }
  };
  check_cell(g.normal, "normal");
  check_cell(g.reduce, "reduce");
}

namespace {

std::vector<double> softmax_row(const std::vector<double>& row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  std::vector<double> p(row.size());
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    p[i] = std::exp(row[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<GenotypeEdge> derive_cell(const std::vector<std::vector<double>>& alpha, const OpSet& ops,
                                      int nodes) {
  if (static_cast<int>(alpha.size()) != edge_count(nodes)) {
    throw std::invalid_argument("derive_genotype: " + std::to_string(alpha.size()) +
                                " alpha rows for " + std::to_string(edge_count(nodes)) + " edges");
  }
  for (const auto& row : alpha) {
    if (static_cast<int>(row.size()) != static_cast<int>(ops.size())) {
      throw std::invalid_argument("derive_genotype: alpha row width does not match op set");
    }
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("derive_genotype: non-finite alpha");
    }
  }
  std::vector<GenotypeEdge> result;
  for (int i = 0; i < nodes; ++i) {
    const int base = edge_offset(i);
    const int fanin = i + 2;
    // Strongest non-zero op per incoming edge.
    std::vector<double> best_w(static_cast<std::size_t>(fanin), -1.0);
    std::vector<OpKind> best_op(static_cast<std::size_t>(fanin), OpKind::Skip);
    for (int j = 0; j < fanin; ++j) {
      const auto p = softmax_row(alpha[static_cast<std::size_t>(base + j)]);
      for (std::size_t o = 0; o < ops.size(); ++o) {
        if (ops[o] == OpKind::Zero) continue;
        if (p[o] > best_w[static_cast<std::size_t>(j)]) {
          best_w[static_cast<std::size_t>(j)] = p[o];
          best_op[static_cast<std::size_t>(j)] = ops[o];
        }
      }
    }
    // Two strongest edges; strict comparison keeps the lowest index on ties.
    int first = 0;
    for (int j = 1; j < fanin; ++j) {
      if (best_w[static_cast<std::size_t>(j)] > best_w[static_cast<std::size_t>(first)]) first = j;
    }
    int second = -1;
    for (int j = 0; j < fanin; ++j) {
      if (j == first) continue;
      if (second < 0 || best_w[static_cast<std::size_t>(j)] > best_w[static_cast<std::size_t>(second)]) second = j;
    }
    int lo = std::min(first, second), hi = std::max(first, second);
    result.push_back({i + 2, lo, best_op[static_cast<std::size_t>(lo)]});
    result.push_back({i + 2, hi, best_op[static_cast<std::size_t>(hi)]});
  }
  return result;
}

}  // namespace

Genotype derive_genotype(const std::vector<std::vector<double>>& alpha_normal,
                         const std::vector<std::vector<double>>& alpha_reduce, const OpSet& ops,
                         int nodes) {
  bool has_nonzero = false;
  for (OpKind k : ops) {
    if (k != OpKind::Zero) has_nonzero = true;
  }
  if (!has_nonzero) throw std::invalid_argument("derive_genotype: op set has no retainable op");
  Genotype g;
  g.nodes = nodes;
  g.normal = derive_cell(alpha_normal, ops, nodes);
  g.reduce = derive_cell(alpha_reduce, ops, nodes);
  validate_genotype(g);
  return g;
}

std::string genotype_to_text(const Genotype& g) {
  std::ostringstream os;
  os << "nodes " << g.nodes << "\n";
  for (const auto& e : g.normal) {
    os << "normal " << e.node << " " << e.input << " " << op_name(e.op) << "\n";
  }
  for (const auto& e : g.reduce) {
    os << "reduce " << e.node << " " << e.input << " " << op_name(e.op) << "\n";
  }
  return os.str();
}

Genotype genotype_from_text(const std::string& text) {
  Genotype g;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "nodes") {
      if (!(ls >> g.nodes) || g.nodes <= 0) {
        throw std::invalid_argument("genotype: bad node count at line " + std::to_string(lineno));
      }
      continue;
    }
    GenotypeEdge e;
    std::string opname;
    if (!(ls >> e.node >> e.input >> opname)) {
      throw std::invalid_argument("genotype: malformed line " + std::to_string(lineno) + ": " + line);
    }
    auto op = op_from_name(opname);
    if (!op) throw std::invalid_argument("genotype: unknown op '" + opname + "' at line " + std::to_string(lineno));
    e.op = *op;
    if (head == "normal") {
      g.normal.push_back(e);
    } else if (head == "reduce") {
      g.reduce.push_back(e);
    } else {
      throw std::invalid_argument("genotype: unknown section '" + head + "' at line " + std::to_string(lineno));
    }
  }
  if (g.nodes == 0) throw std::invalid_argument("genotype: missing 'nodes' header");
  auto order = [](std::vector<GenotypeEdge>& edges) {
    std::stable_sort(edges.begin(), edges.end(), [](const GenotypeEdge& a, const GenotypeEdge& b) {
      return a.node != b.node ? a.node < b.node : a.input < b.input;
    });
  };
  order(g.normal);
  order(g.reduce);
  validate_genotype(g);
  return g;
}

void save_genotype(const Genotype& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("genotype: cannot write " + path);
  out << genotype_to_text(g);
}

Genotype load_genotype(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("genotype: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return genotype_from_text(buf.str());
}

}  // namespace rnas
