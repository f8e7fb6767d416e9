#pragma once

#include <Eigen/Dense>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "jointcar/covariance.hpp"
#include "jointcar/error.hpp"
#include "jointcar/spatial_graph.hpp"

namespace jcar {

/// Which random-effect prior is used: iid per (population, location),
/// independent CAR per population, or the joint CAR with cross-population
/// correlation.
enum class ModelKind { Mixed, Car, JointCar };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);  // mixed|car|jointcar

double logit(double p);
double inv_logit(double x);
/// log(inv_logit(x)) and log(1 - inv_logit(x)), stable for large |x|.
double log_inv_logit(double x);
double log1m_inv_logit(double x);

/// Number of polynomial trend coefficients per population (intercept + cubic).
inline constexpr int kTrendTerms = 4;

/// beta0 + beta1 k + beta2 k^2 + beta3 k^3 with k the 1-based year index.
double fixed_effect(const Eigen::Ref<const Eigen::Vector4d>& beta, int k);

struct CellIndex {
  int population = 0;
  int location = 0;
  int year = 0;  // 0-based index into the panel's year range

  auto operator<=>(const CellIndex&) const = default;
};

/// Counts Y (positives) and N (sample size) over population x location x
/// year, with an explicit observation mask. Masked cells carry no data and
/// reading their counts throws.
class SurveillancePanel {
 public:
  SurveillancePanel() = default;
  SurveillancePanel(std::vector<std::string> population_labels,
                    std::vector<std::string> location_labels, int first_year,
                    int n_years);

  int n_populations() const { return static_cast<int>(population_labels_.size()); }
  int n_locations() const { return static_cast<int>(location_labels_.size()); }
  int n_years() const { return n_years_; }
  int first_year() const { return first_year_; }

  const std::vector<std::string>& population_labels() const { return population_labels_; }
  const std::vector<std::string>& location_labels() const { return location_labels_; }
  std::vector<int> year_labels() const;

  bool observed(int i, int j, int k) const { return observed_[flat(i, j, k)] != 0; }
  bool observed(const CellIndex& c) const { return observed(c.population, c.location, c.year); }
  int y(int i, int j, int k) const;
  int n(int i, int j, int k) const;

  /// Requires 0 <= y <= n and n >= 1.
  void set_observation(int i, int j, int k, int y, int n);
  void mask(int i, int j, int k);

  /// Copy with the given cells masked; each must currently be observed.
  SurveillancePanel with_masked(const std::vector<CellIndex>& cells) const;

  std::vector<CellIndex> observed_cells() const;
  std::vector<CellIndex> missing_cells() const;
  int n_observed() const;

  int population_index(const std::string& label) const;
  int location_index(const std::string& label) const;
  int year_index(int calendar_year) const;

  bool operator==(const SurveillancePanel& other) const;

 private:
  std::size_t flat(int i, int j, int k) const;
  void check_bounds(int i, int j, int k) const;

  std::vector<std::string> population_labels_;
  std::vector<std::string> location_labels_;
  int first_year_ = 0;
  int n_years_ = 0;
  std::vector<int> y_;
  std::vector<int> n_;
  std::vector<unsigned char> observed_;
};

/// Reads `population,location,year,y,n` CSV. Locations must belong to
/// `graph` and take the graph's index order; populations are indexed in
/// first-appearance order; years must form a contiguous range.
SurveillancePanel load_panel(std::istream& in, const SpatialGraph& graph);
SurveillancePanel load_panel_file(const std::string& path, const SpatialGraph& graph);

/// Writes observed cells only, sorted by (population, location, year) index.
void write_panel(std::ostream& out, const SurveillancePanel& panel);

/// Random effects s (I x J) and the derived transformed means
/// mu(i,j,k) = v_i(k) + s(i,j), stored for every cell including masked ones.
struct LatentState {
  Eigen::MatrixXd beta;  // I x 4
  Eigen::MatrixXd s;     // I x J
  std::vector<Eigen::MatrixXd> mu;  // per population, J x K

  static LatentState from(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& s, int n_years);
};

/// Binomial log-likelihood over observed cells, including log C(N, Y).
double log_likelihood(const SurveillancePanel& panel, const LatentState& state);

/// Binomial log-pmf at one cell given the logit mean.
double binomial_log_pmf(int y, int n, double mu);

/// Multivariate normal log-density of the population-major flattened s
/// (s_1^T, ..., s_I^T)^T, evaluated through the Cholesky factors in `cov`.
/// Mixed requires diagonal per-population covariances; Mixed and Car ignore
/// the cross-population correlation; JointCar uses it.
double random_effect_log_density(const Eigen::VectorXd& s_flat, const JointCovariance& cov,
                                 ModelKind kind);

}  // namespace jcar
