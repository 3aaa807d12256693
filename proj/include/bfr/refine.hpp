#pragma once

// Post-hoc refiners for a trained base generator.
//
//   dfr           data space, generated sample (t = 0) -> data (t = 1)
//   lfr           latent space, prior draw (t = 0) -> inverted data latent (t = 1)
//   noise_inject  dfr with sigma_d noise added to the input at train and inference
//   fmrefiner     x0-predictor trained on synthetic noisy copies of real data
//
// Data-space refiners work in the standardized units of the statistics they
// carry (the generator's, or the dataset's for fmrefiner).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bfr/data.hpp"
#include "bfr/generator.hpp"
#include "bfr/interpolant.hpp"
#include "bfr/metrics.hpp"
#include "bfr/net.hpp"
#include "bfr/ode.hpp"

namespace bfr::refine {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Kind : std::uint32_t { dfr = 0, lfr = 1, noise_inject = 2, fmrefiner = 3 };

Kind parse_kind(const std::string& s);
std::string to_string(Kind k);

struct TrainConfig {
    long steps = 3000;
    int batch_size = 256;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::vector<int> hidden{128, 128};
    int freq_count = 8;
    long eval_every = 100;
    // Generator outputs for dfr/noise_inject: 0 draws fresh samples every
    // step, otherwise a pool of this many samples is generated once.
    std::size_t pool_size = 0;
    int threads = 1;
};

struct Refiner {
    Kind kind = Kind::dfr;
    net::VectorFieldParams field;
    data::AugSpec aug;
    interp::MixSpec mix;
    interp::RefinerNoiseSpec noise;
    std::uint64_t generator_hash = 0;
    ode::SolverSpec solver{ode::SolverKind::heun, 5, ode::Direction::forward};
    gen::Standardizer stats;

    int dim() const { return field.data_dim; }
};

struct TrainResult {
    Refiner refiner;
    std::vector<gen::LossPoint> curve;
    // lfr only: mean distance from 1-step refined prior draws to the nearest
    // cached latent; logged, never asserted.
    double refinement_error = 0.0;
    double mean_rec_error = 0.0;
};

// Default solver of dfr, noise_inject: 10 NFE (heun, 5 steps).
ode::SolverSpec default_refiner_solver();

// Euler with nfe steps. Euler never evaluates the x0-predictor velocity at
// t = 1, where the clamped denominator would amplify its error by 1e3.
ode::SolverSpec fmrefiner_solver(int nfe);

TrainResult train_dfr(const gen::Generator& g, const Matrix& dataset, const data::AugSpec& aug,
                      const TrainConfig& cfg, std::optional<data::GridShape> grid = std::nullopt);

gen::SampleBatch refine_dfr(const Refiner& r, const gen::SampleBatch& batch,
                            std::optional<ode::SolverSpec> solver = std::nullopt, int threads = 1);

struct LatentCache {
    Matrix z;
    std::uint64_t generator_hash = 0;
};

void save_latents(const LatentCache& cache, const std::filesystem::path& path);
LatentCache load_latents(const std::filesystem::path& path);

// Inverts the dataset once. When cache_path names an existing cache computed
// under the same generator hash it is reused, otherwise it is (re)written.
TrainResult train_lfr(const gen::Generator& g, const Matrix& dataset, const interp::MixSpec& mix,
                      const ode::SolverSpec& inversion, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& cache_path = std::nullopt);

struct LfrSample {
    gen::SampleBatch batch;  // batch.nfe = refiner_nfe + base_nfe
    Matrix refined_latent;
    int refiner_nfe = 0;
    int base_nfe = 0;
};

LfrSample refine_lfr(const Refiner& r, const gen::Generator& g, Eigen::Index n, std::uint64_t seed,
                     std::optional<ode::SolverSpec> solver = std::nullopt, bool allow_transfer = false,
                     int threads = 1);

TrainResult train_noise_inject(const gen::Generator& g, const Matrix& dataset, double sigma_d,
                               const TrainConfig& cfg);

// Adds fresh sigma_d noise (stream fixed by seed) before integrating.
gen::SampleBatch refine_noise_inject(const Refiner& r, const gen::SampleBatch& batch, std::uint64_t seed,
                                     std::optional<ode::SolverSpec> solver = std::nullopt, int threads = 1);

TrainResult train_fmrefiner(const Matrix& dataset, double sigma_f, double sigma_z, const TrainConfig& cfg);

// Velocity induced by an x0-predictor on the linear path:
// (R(x, t) - x) / max(1 - t, 1e-3).
ode::Field fmrefiner_velocity(const net::VectorFieldParams& predictor);

// Needs at least two solver steps.
gen::SampleBatch refine_fmrefiner(const Refiner& r, const gen::SampleBatch& batch,
                                  std::optional<ode::SolverSpec> solver = std::nullopt, int threads = 1);

// Applies any refiner to a generator's own samples (drawn with `seed`).
// Returns the refined batch with the total NFE per sample.
gen::SampleBatch refine_generator_samples(const Refiner& r, const gen::Generator& g, Eigen::Index n,
                                          std::uint64_t seed, const ode::SolverSpec& solver,
                                          bool allow_transfer = false, int threads = 1);

container::File to_container(const Refiner& r);
Refiner from_container(const container::File& f);
void save(const Refiner& r, const std::filesystem::path& path);
Refiner load(const std::filesystem::path& path);

struct TransferOptions {
    std::vector<std::uint64_t> seeds{0, 1, 2};
    Eigen::Index n_samples = 1000;
    std::vector<int> nfes{1, 10};
    bool allow_transfer = false;
    int threads = 1;
};

// Base metrics of `g` next to the metrics of `r` applied to it, per seed and
// NFE. Rows carry nfe = refiner NFE (0 for the base) plus a total_nfe row.
metrics::MetricsReport transfer_eval(const Refiner& r, const gen::Generator& g, const Matrix& reference,
                                     const data::DatasetSpec& dataset, const metrics::MetricSpec& spec,
                                     const TransferOptions& opts);

}  // namespace bfr::refine
