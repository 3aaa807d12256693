#pragma once

// Flow-matching base generator: prior N(0, I) at t = 0, standardized data at
// t = 1. Sampling integrates the learned field forward and de-standardizes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bfr/interpolant.hpp"
#include "bfr/net.hpp"
#include "bfr/ode.hpp"

namespace bfr::gen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer fit(const Matrix& data);
    static Standardizer identity(int dim);

    Matrix apply(const Matrix& x) const;
    Matrix revert(const Matrix& z) const;
    int dim() const { return static_cast<int>(mean.size()); }
};

struct TrainConfig {
    long steps = 5000;
    int batch_size = 256;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    interp::PathSpec path = interp::PathSpec::straight();
    long eval_every = 100;
    std::vector<int> hidden{128, 128};
    int freq_count = 8;
};

void validate(const TrainConfig& cfg);

struct LossPoint {
    long step = 0;
    double loss = 0.0;  // mean batch loss over the preceding window
};

struct Generator {
    net::VectorFieldParams field;
    ode::SolverSpec solver;
    Standardizer stats;

    int dim() const { return field.data_dim; }
    std::uint64_t hash() const;
};

struct TrainResult {
    Generator generator;
    std::vector<LossPoint> curve;
};

TrainResult train_base(const Matrix& dataset, const TrainConfig& cfg,
                       const ode::SolverSpec& sampling = {});

struct SampleBatch {
    Matrix x;
    int nfe = 0;
};

struct LatentBatch {
    Matrix z;
    int nfe = 0;
    double mean_rec_error = 0.0;  // NaN unless requested
};

// Standard-normal prior draws for a sampling seed; row i depends only on
// (seed, i, d).
Matrix prior_draws(Eigen::Index n, int dim, std::uint64_t seed);

SampleBatch sample(const Generator& g, Eigen::Index n, std::uint64_t seed,
                   std::optional<ode::SolverSpec> solver = std::nullopt, int threads = 1);

// Pushes latents (prior space) through the generator.
SampleBatch sample_from_latent(const Generator& g, const Matrix& z,
                               std::optional<ode::SolverSpec> solver = std::nullopt, int threads = 1);

// Backward integration of standardized data to the latent space.
LatentBatch invert_batch(const Generator& g, const Matrix& x, const ode::SolverSpec& solver,
                         bool with_rec_error = true, int threads = 1);

container::File to_container(const Generator& g);
Generator from_container(const container::File& f);
void save(const Generator& g, const std::filesystem::path& path);
Generator load(const std::filesystem::path& path);

// Standardization/solver section shared with refiner checkpoints.
void write_stats(container::ByteWriter& w, const Standardizer& s);
Standardizer read_stats(container::ByteReader& r, int dim);

}  // namespace bfr::gen
