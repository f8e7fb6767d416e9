#include "jointcar/spatial_graph.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "jointcar/csv.hpp"

namespace jcar {

SpatialGraph::SpatialGraph(std::vector<std::string> labels,
                           std::vector<Edge> edges, Warnings* warnings)
    : labels_(std::move(labels)) {
  const int n = n_locations();
  if (n == 0) throw InputError("graph has no locations");
  {
    std::unordered_map<std::string, int> seen;
    for (int i = 0; i < n; ++i) {
      if (!seen.emplace(labels_[i], i).second) {
        throw InputError("duplicate location label '" + labels_[i] + "'");
      }
    }
  }
  for (auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw InputError("edge index out of range");
    }
    if (a == b) throw InputError("self-loop at " + labels_[a]);
    if (a > b) std::swap(a, b);
  }
  std::sort(edges.begin(), edges.end());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (e > 0 && edges[e] == edges[e - 1]) {
      emit_warning(warnings, "duplicate edge " + labels_[edges[e].first] + "-" +
                                 labels_[edges[e].second] + " ignored");
      continue;
    }
    edges_.push_back(edges[e]);
  }

  degrees_.assign(n, 0);
  neighbours_.assign(n, {});
  for (const auto& [a, b] : edges_) {
    ++degrees_[a];
    ++degrees_[b];
    neighbours_[a].push_back(b);
    neighbours_[b].push_back(a);
  }
  for (int i = 0; i < n; ++i) {
    if (degrees_[i] == 0) throw InputError("isolated location " + labels_[i]);
    std::sort(neighbours_[i].begin(), neighbours_[i].end());
  }
  if (const int c = n_components(); c > 1) {
    emit_warning(warnings, "graph has " + std::to_string(c) +
                               " disconnected components");
  }
}

int SpatialGraph::index_of(const std::string& label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  return it == labels_.end() ? -1 : static_cast<int>(it - labels_.begin());
}

int SpatialGraph::n_components() const {
  const int n = n_locations();
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int components = n;
  for (const auto& [a, b] : edges_) {
    const int ra = find(a), rb = find(b);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components;
}

DegreeAdjacency degree_and_adjacency(const SpatialGraph& g) {
  const int n = g.n_locations();
  DegreeAdjacency out{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
  for (const auto& [a, b] : g.edges()) {
    out.adjacency(a, b) = 1.0;
    out.adjacency(b, a) = 1.0;
  }
  for (int i = 0; i < n; ++i) out.degree(i, i) = g.degrees()[i];
  return out;
}

SpatialGraph load_graph(std::istream& in, Warnings* warnings) {
  std::vector<std::string> labels;
  std::unordered_map<std::string, int> index;
  std::vector<SpatialGraph::Edge> edges;
  auto intern = [&](const std::string& label, int line) {
    if (!is_valid_label(label)) {
      throw InputError("line " + std::to_string(line) + ": invalid location label '" +
                       label + "' (allowed: [A-Za-z0-9_-]+)");
    }
    auto [it, inserted] = index.emplace(label, static_cast<int>(labels.size()));
    if (inserted) labels.push_back(label);
    return it->second;
  };
  csv::for_each_record(in, [&](int line, const std::vector<std::string>& f) {
    if (f.size() == 1) {
      intern(f[0], line);
      return;
    }
    if (f.size() != 2) {
      throw InputError("line " + std::to_string(line) + ": expected 2 columns, got " +
                       std::to_string(f.size()));
    }
    if (f[0] == f[1]) {
      throw InputError("line " + std::to_string(line) + ": self-loop at " + f[0]);
    }
    const int a = intern(f[0], line);
    const int b = intern(f[1], line);
    edges.emplace_back(a, b);
  });
  return SpatialGraph(std::move(labels), std::move(edges), warnings);
}

SpatialGraph load_graph_file(const std::string& path, Warnings* warnings) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open graph file " + path);
  return load_graph(in, warnings);
}

void write_graph(std::ostream& out, const SpatialGraph& g) {
  out << "# nodes\n";
  for (const auto& label : g.labels()) out << label << '\n';
  out << "# edges\n";
  for (const auto& [a, b] : g.edges()) {
    out << g.labels()[a] << ',' << g.labels()[b] << '\n';
  }
}

SpatialGraph lattice_graph(int rows, int cols, bool queen) {
  if (rows < 1 || cols < 1 || rows * cols < 2) {
    throw InputError("lattice needs at least two cells");
  }
  std::vector<std::string> labels;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      labels.push_back("L" + std::to_string(r) + "_" + std::to_string(c));
    }
  }
  std::vector<SpatialGraph::Edge> edges;
  auto id = [cols](int r, int c) { return r * cols + c; };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) edges.emplace_back(id(r, c), id(r, c + 1));
      if (r + 1 < rows) edges.emplace_back(id(r, c), id(r + 1, c));
      if (queen && r + 1 < rows) {
        if (c + 1 < cols) edges.emplace_back(id(r, c), id(r + 1, c + 1));
        if (c > 0) edges.emplace_back(id(r, c), id(r + 1, c - 1));
      }
    }
  }
  return SpatialGraph(std::move(labels), std::move(edges));
}

SpatialGraph path_graph(int n) {
  if (n < 2) throw InputError("path graph needs at least two nodes");
  std::vector<std::string> labels;
  std::vector<SpatialGraph::Edge> edges;
  for (int i = 0; i < n; ++i) labels.push_back("L" + std::to_string(i));
  for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return SpatialGraph(std::move(labels), std::move(edges));
}

}  // namespace jcar
