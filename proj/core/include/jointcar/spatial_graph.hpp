#pragma once

#include <Eigen/Dense>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "jointcar/error.hpp"

namespace jcar {

/// Undirected adjacency graph over areal units. Nodes are dense indices
/// 0..n-1 with string labels. Immutable once built; every node has degree >= 1.
class SpatialGraph {
 public:
  using Edge = std::pair<int, int>;  // first < second

  /// Validates and normalizes: each pair is reordered so first < second,
  /// duplicates are removed (with a warning), self-loops and isolated nodes
  /// throw InputError.
  SpatialGraph(std::vector<std::string> labels, std::vector<Edge> edges,
               Warnings* warnings = nullptr);

  int n_locations() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& degrees() const { return degrees_; }
  const std::vector<std::vector<int>>& neighbours() const { return neighbours_; }

  /// Index for `label`, or -1.
  int index_of(const std::string& label) const;

  int n_components() const;

  bool operator==(const SpatialGraph& other) const {
    return labels_ == other.labels_ && edges_ == other.edges_;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<Edge> edges_;
  std::vector<int> degrees_;
  std::vector<std::vector<int>> neighbours_;
};

struct DegreeAdjacency {
  Eigen::MatrixXd degree;     // D, diagonal
  Eigen::MatrixXd adjacency;  // C, symmetric 0/1 with zero diagonal
};

DegreeAdjacency degree_and_adjacency(const SpatialGraph& g);

/// Reads an edge list: rows `loc_a,loc_b` (comma or tab), '#' comments.
/// A single-label row declares a node without adding an edge. Labels get
/// dense indices in first-appearance order.
SpatialGraph load_graph(std::istream& in, Warnings* warnings = nullptr);
SpatialGraph load_graph_file(const std::string& path, Warnings* warnings = nullptr);

/// Writes node declarations in index order followed by the edges, so that
/// load_graph(write_graph(g)) == g.
void write_graph(std::ostream& out, const SpatialGraph& g);

/// Rook (or queen, with diagonals) adjacency on a rows x cols lattice;
/// labels are "L<row>_<col>".
SpatialGraph lattice_graph(int rows, int cols, bool queen = false);

/// Path graph over n nodes labelled "L0".."L{n-1}".
SpatialGraph path_graph(int n);

}  // namespace jcar
