#pragma once

// Interpolation paths and the training-pair builders for the base generator
// and every refiner. All builders work on n x d batches with one time value
// per row and take t as input; callers sample t.

#include <functional>
#include <optional>

#include <Eigen/Dense>

#include "bfr/data.hpp"
#include "bfr/rng.hpp"

namespace bfr::interp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct PathSpec {
    enum class Kind { straight, custom };
    using Fn = std::function<double(double)>;

    Kind kind = Kind::straight;
    Fn a, b, da, db;

    static PathSpec straight();
    // a = cos(pi t / 2), b = sin(pi t / 2).
    static PathSpec trigonometric();
    // Checks the boundary conditions a(0)=1, b(0)=0, a(1)=0, b(1)=1.
    static PathSpec custom(Fn a, Fn b, Fn da, Fn db);
};

struct Pair {
    Matrix xt;
    Matrix target;
};

// Standard-normal draws consumed by a builder, recorded for replay.
struct NoiseLog {
    Matrix eps;
    Matrix z;
    Matrix aug;
    Matrix mix;  // per-element mixing strengths actually applied
};

// x_t = a(t) x0 + b(t) x1, f = a'(t) x0 + b'(t) x1.
Pair interpolate(const Matrix& x0, const Matrix& x1, const Vector& t, const PathSpec& path);

// Generated sample at t = 0, data at t = 1:
// x~1 = DataAug(x^1), x_t = (1 - t) x~1 + t x0, f = x0 - x~1.
Pair dfr_pair(const Matrix& x0, const Matrix& xhat1, const data::AugSpec& aug, const Vector& t,
              Rng& rng, std::optional<data::GridShape> grid = std::nullopt, NoiseLog* log = nullptr);

enum class MixMode { fixed, uniform_per_element };

struct MixSpec {
    double alpha_max = 0.2;
    MixMode mode = MixMode::uniform_per_element;
};

void validate(const MixSpec& mix);

// Variance-preserving mix sqrt(1 - a^2) z1 + a z0 with a = alpha_max (fixed)
// or a ~ U(0, alpha_max) drawn per element.
Matrix lfr_mix(const Matrix& z1, const Matrix& z0, const MixSpec& spec, Rng& rng,
               NoiseLog* log = nullptr);

// Prior draw at t = 0, mixed latent at t = 1.
Pair lfr_pair(const Matrix& z, const Matrix& z1a, const Vector& t, const PathSpec& path);

struct RefinerNoiseSpec {
    double sigma_d = 0.1;   // noise-injection magnitude
    double sigma_f = 0.05;  // synthetic perturbation magnitude
    double sigma_z = 0.1;   // intermediate noise scale
};

void validate(const RefinerNoiseSpec& spec);

// x1' = x^1 + sigma_d eps, x_t = t x0 + (1 - t) x1', f = x0 - x1'.
Pair noise_inject_pair(const Matrix& x0, const Matrix& xhat1, double sigma_d, const Vector& t,
                       Rng& rng, NoiseLog* log = nullptr);

// x1 = x0 + sigma_f eps, x_t = t x0 + (1 - t) x1 + sigma_z t (1 - t) z; target is x0.
Pair fmrefiner_pair(const Matrix& x0, double sigma_f, double sigma_z, const Vector& t, Rng& rng,
                    NoiseLog* log = nullptr);

}  // namespace bfr::interp
