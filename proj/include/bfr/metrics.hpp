#pragma once

// Two-sample distances and ensemble metrics. All point-set distances are
// plain Euclidean; there is no rotational alignment.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bfr/data.hpp"

namespace bfr::metrics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MetricSpec {
    double tau = 1.0;
    int n_projections = 128;
    std::optional<double> e_max;
    std::uint64_t seed = 0;
};

void validate(const MetricSpec& spec);

// Half the minimum inter-mode distance for eight_gaussians, 0.25 otherwise.
double default_tau(const data::DatasetSpec& spec);

// 2-Wasserstein distance between two 1-D empirical distributions (sizes may differ).
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

// Mean over the rows of `directions` (unit vectors) of the projected 1-D W2.
double sliced_wasserstein(const Matrix& a, const Matrix& b, const Matrix& directions);
double sliced_wasserstein(const Matrix& a, const Matrix& b, const MetricSpec& spec);

Matrix random_directions(int count, int dim, std::uint64_t seed);

// 2 E||a - b|| - E||a - a'|| - E||b - b'|| over all ordered pairs (V-statistic).
double energy_distance(const Matrix& a, const Matrix& b);

struct CoverageAmr {
    double cov_r = 0.0;
    double cov_p = 0.0;
    double amr_r = 0.0;
    double amr_p = 0.0;
};

CoverageAmr coverage_and_amr(const Matrix& ref, const Matrix& gen, double tau);

struct EnergyError {
    double percent = 0.0;
    long excluded = 0;  // generated samples dropped by truncation
};

// 100 (mean(gen') - mean(ref')) / |mean(ref')|, primes keeping only E < e_max.
EnergyError energy_error(std::span<const double> ref, std::span<const double> gen,
                         std::optional<double> e_max = std::nullopt);

struct Gaussianity {
    Vector mean;
    Vector variance;  // unbiased, 1/(n-1)
    double max_abs_mean = 0.0;
    double max_abs_var_dev = 0.0;
};

Gaussianity latent_gaussianity(const Matrix& z);

// Exact negative log-density for datasets with a closed form
// (eight_gaussians, point_mass with sigma_mode > 0).
double true_energy(const data::DatasetSpec& spec, const Vector& x);
Vector true_energy(const data::DatasetSpec& spec, const Matrix& x);

struct MetricRow {
    std::string name;
    double value = 0.0;
    long n = 0;
    std::uint64_t seed = 0;
    int nfe = 0;
    long excluded = 0;
    std::uint64_t generator_hash = 0;
    std::string refiner = "none";
};

struct MetricsReport {
    std::string dataset;
    std::vector<MetricRow> rows;

    const MetricRow* find(const std::string& name, int nfe) const;
    std::string to_csv() const;
    static MetricsReport from_csv(const std::string& text);
};

inline constexpr const char* kCsvHeader = "name,value,n,seed,nfe,excluded,generator_hash,refiner";

struct Provenance {
    std::uint64_t seed = 0;
    int nfe = 0;
    std::uint64_t generator_hash = 0;
    std::string refiner = "none";
};

// Full metric set of `gen` against `ref`. Energy error rows appear only when
// the dataset has a closed-form density.
std::vector<MetricRow> evaluate(const Matrix& ref, const Matrix& gen, const data::DatasetSpec& dataset,
                                const MetricSpec& spec, const Provenance& prov);

}  // namespace bfr::metrics
