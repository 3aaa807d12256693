#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

#include "bfr/net.hpp"

namespace bfr::ode {

using Matrix = Eigen::MatrixXd;

// Batched field: rows of x are states, all evaluated at the same time t.
using Field = std::function<Matrix(const Matrix& x, double t)>;

Field from_params(const net::VectorFieldParams& params);

enum class SolverKind { euler, heun, rk4 };
enum class Direction { forward, backward };

SolverKind parse_solver_kind(const std::string& s);
std::string to_string(SolverKind k);

struct SolverSpec {
    SolverKind kind = SolverKind::rk4;
    int steps = 25;
    Direction direction = Direction::forward;

    int evals_per_step() const;
    // Function evaluations per sample for one pass.
    int nfe() const { return steps * evals_per_step(); }
};

void validate(const SolverSpec& spec);

// Cheapest solver with exactly `nfe` evaluations per sample: rk4 when
// divisible by 4, else heun when even, else euler.
SolverSpec solver_for_nfe(int nfe, Direction dir = Direction::forward);

struct Result {
    Matrix state;
    int nfe = 0;
};

// Fixed-step explicit integration over [0, 1] (forward) or [1, 0] (backward)
// on the uniform grid t_i = i / steps. Throws IntegrationError on a
// non-finite state. Rows are integrated in fixed-size chunks, in parallel
// when threads > 1; results do not depend on the thread count.
Result integrate(const Field& field, const Matrix& u0, const SolverSpec& spec, int threads = 1);
Result integrate(const net::VectorFieldParams& params, const Matrix& u0, const SolverSpec& spec,
                 int threads = 1);

// Backward integration of a generator field from data to latent.
Result invert(const Field& field, const Matrix& x, const SolverSpec& spec, int threads = 1);
Result invert(const net::VectorFieldParams& params, const Matrix& x, const SolverSpec& spec,
              int threads = 1);

// Per-row ||x - forward(invert(x))||, with matched forward/backward solvers.
Eigen::VectorXd reconstruction_error(const Field& field, const Matrix& x, const Matrix& z,
                                     const SolverSpec& forward_spec, int threads = 1);

}  // namespace bfr::ode
