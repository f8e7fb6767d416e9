#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "jointcar/csv.hpp"
#include "jointcar/model.hpp"

namespace jcar {

SurveillancePanel::SurveillancePanel(std::vector<std::string> population_labels,
                                     std::vector<std::string> location_labels,
                                     int first_year, int n_years)
    : population_labels_(std::move(population_labels)),
      location_labels_(std::move(location_labels)),
      first_year_(first_year),
      n_years_(n_years) {
  if (population_labels_.empty() || location_labels_.empty() || n_years_ < 1) {
    throw InputError("panel needs at least one population, location and year");
  }
  const std::size_t size =
      population_labels_.size() * location_labels_.size() * static_cast<std::size_t>(n_years_);
  y_.assign(size, 0);
  n_.assign(size, 0);
  observed_.assign(size, 0);
}

std::vector<int> SurveillancePanel::year_labels() const {
  std::vector<int> out(n_years_);
  for (int k = 0; k < n_years_; ++k) out[k] = first_year_ + k;
  return out;
}

void SurveillancePanel::check_bounds(int i, int j, int k) const {
  if (i < 0 || j < 0 || k < 0 || i >= n_populations() || j >= n_locations() || k >= n_years_) {
    throw InputError("panel cell index out of range");
  }
}

std::size_t SurveillancePanel::flat(int i, int j, int k) const {
  return (static_cast<std::size_t>(i) * location_labels_.size() + j) * n_years_ + k;
}

int SurveillancePanel::y(int i, int j, int k) const {
  check_bounds(i, j, k);
  if (!observed(i, j, k)) throw InputError("read of masked panel cell");
  return y_[flat(i, j, k)];
}

int SurveillancePanel::n(int i, int j, int k) const {
  check_bounds(i, j, k);
  if (!observed(i, j, k)) throw InputError("read of masked panel cell");
  return n_[flat(i, j, k)];
}

void SurveillancePanel::set_observation(int i, int j, int k, int y, int n) {
  check_bounds(i, j, k);
  if (n < 1 || y < 0 || y > n) {
    throw InputError("invalid counts y=" + std::to_string(y) + ", n=" + std::to_string(n));
  }
  const auto f = flat(i, j, k);
  y_[f] = y;
  n_[f] = n;
  observed_[f] = 1;
}

void SurveillancePanel::mask(int i, int j, int k) {
  check_bounds(i, j, k);
  const auto f = flat(i, j, k);
  y_[f] = 0;
  n_[f] = 0;
  observed_[f] = 0;
}

SurveillancePanel SurveillancePanel::with_masked(const std::vector<CellIndex>& cells) const {
  SurveillancePanel out = *this;
  for (const auto& c : cells) {
    if (!observed(c)) throw InputError("cannot hold out a cell that is not observed");
    out.mask(c.population, c.location, c.year);
  }
  return out;
}

std::vector<CellIndex> SurveillancePanel::observed_cells() const {
  std::vector<CellIndex> out;
  for (int i = 0; i < n_populations(); ++i)
    for (int j = 0; j < n_locations(); ++j)
      for (int k = 0; k < n_years_; ++k)
        if (observed(i, j, k)) out.push_back({i, j, k});
  return out;
}

std::vector<CellIndex> SurveillancePanel::missing_cells() const {
  std::vector<CellIndex> out;
  for (int i = 0; i < n_populations(); ++i)
    for (int j = 0; j < n_locations(); ++j)
      for (int k = 0; k < n_years_; ++k)
        if (!observed(i, j, k)) out.push_back({i, j, k});
  return out;
}

int SurveillancePanel::n_observed() const {
  return static_cast<int>(std::count(observed_.begin(), observed_.end(), 1));
}

int SurveillancePanel::population_index(const std::string& label) const {
  auto it = std::find(population_labels_.begin(), population_labels_.end(), label);
  return it == population_labels_.end() ? -1 : static_cast<int>(it - population_labels_.begin());
}

int SurveillancePanel::location_index(const std::string& label) const {
  auto it = std::find(location_labels_.begin(), location_labels_.end(), label);
  return it == location_labels_.end() ? -1 : static_cast<int>(it - location_labels_.begin());
}

int SurveillancePanel::year_index(int calendar_year) const {
  const int k = calendar_year - first_year_;
  return (k >= 0 && k < n_years_) ? k : -1;
}

bool SurveillancePanel::operator==(const SurveillancePanel& other) const {
  return population_labels_ == other.population_labels_ &&
         location_labels_ == other.location_labels_ && first_year_ == other.first_year_ &&
         n_years_ == other.n_years_ && y_ == other.y_ && n_ == other.n_ &&
         observed_ == other.observed_;
}

SurveillancePanel load_panel(std::istream& in, const SpatialGraph& graph) {
  struct Row {
    int line;
    int pop;
    int loc;
    long long year;
    long long y;
    long long n;
  };
  std::vector<std::string> populations;
  std::vector<Row> rows;
  bool header_seen = false;
  csv::for_each_record(in, [&](int line, const std::vector<std::string>& f) {
    const std::string where = "line " + std::to_string(line);
    if (!header_seen) {
      const std::vector<std::string> expected{"population", "location", "year", "y", "n"};
      if (f != expected) {
        throw InputError(where + ": expected header population,location,year,y,n");
      }
      header_seen = true;
      return;
    }
    if (f.size() != 5) {
      throw InputError(where + ": expected 5 columns, got " + std::to_string(f.size()));
    }
    if (!is_valid_label(f[0])) {
      throw InputError(where + ": invalid population label '" + f[0] + "'");
    }
    const int loc = graph.index_of(f[1]);
    if (loc < 0) throw InputError(where + ": location '" + f[1] + "' is not in the graph");
    auto it = std::find(populations.begin(), populations.end(), f[0]);
    int pop = static_cast<int>(it - populations.begin());
    if (it == populations.end()) populations.push_back(f[0]);
    Row r{line, pop, loc, csv::parse_int(f[2], where), csv::parse_int(f[3], where),
          csv::parse_int(f[4], where)};
    if (r.n < 1 || r.y < 0 || r.y > r.n) {
      throw InputError(where + ": counts must satisfy 0 <= y <= n and n >= 1");
    }
    rows.push_back(r);
  });
  if (!header_seen) throw InputError("panel file is empty");
  if (rows.empty()) throw InputError("panel file has no observations");

  std::set<long long> years;
  for (const auto& r : rows) years.insert(r.year);
  const long long first = *years.begin();
  const long long last = *years.rbegin();
  if (static_cast<long long>(years.size()) != last - first + 1) {
    throw InputError("panel years must form a contiguous range");
  }
  SurveillancePanel panel(populations, graph.labels(), static_cast<int>(first),
                          static_cast<int>(last - first + 1));
  for (const auto& r : rows) {
    const int k = static_cast<int>(r.year - first);
    if (panel.observed(r.pop, r.loc, k)) {
      throw InputError("line " + std::to_string(r.line) + ": duplicate key (" +
                       populations[r.pop] + "," + graph.labels()[r.loc] + "," +
                       std::to_string(r.year) + ")");
    }
    panel.set_observation(r.pop, r.loc, k, static_cast<int>(r.y), static_cast<int>(r.n));
  }
  return panel;
}

SurveillancePanel load_panel_file(const std::string& path, const SpatialGraph& graph) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open panel file " + path);
  return load_panel(in, graph);
}

void write_panel(std::ostream& out, const SurveillancePanel& panel) {
  out << "population,location,year,y,n\n";
  for (const auto& c : panel.observed_cells()) {
    out << panel.population_labels()[c.population] << ','
        << panel.location_labels()[c.location] << ',' << panel.first_year() + c.year << ','
        << panel.y(c.population, c.location, c.year) << ','
        << panel.n(c.population, c.location, c.year) << '\n';
  }
}

}  // namespace jcar
