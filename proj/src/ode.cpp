#include "bfr/ode.hpp"

#include <algorithm>
#include <thread>
#include <vector>

#include "bfr/error.hpp"

namespace bfr::ode {

namespace {

constexpr Eigen::Index kChunkRows = 256;

Matrix integrate_chunk(const Field& field, Matrix u, const SolverSpec& spec) {
    const double h = (spec.direction == Direction::forward ? 1.0 : -1.0) / spec.steps;
    auto time_at = [&](int i) {
        const double s = static_cast<double>(i) / spec.steps;
        return spec.direction == Direction::forward ? s : 1.0 - s;
    };
    for (int i = 0; i < spec.steps; ++i) {
        const double t0 = time_at(i);
        const double t1 = time_at(i + 1);
        switch (spec.kind) {
            case SolverKind::euler: u += h * field(u, t0); break;
            case SolverKind::heun: {
                const Matrix k1 = field(u, t0);
                const Matrix k2 = field(u + h * k1, t1);
                u += (0.5 * h) * (k1 + k2);
                break;
            }
            case SolverKind::rk4: {
                const double tm = 0.5 * (t0 + t1);
                const Matrix k1 = field(u, t0);
                const Matrix k2 = field(u + (0.5 * h) * k1, tm);
                const Matrix k3 = field(u + (0.5 * h) * k2, tm);
                const Matrix k4 = field(u + h * k3, t1);
                u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                break;
            }
        }
        if (!u.allFinite()) throw IntegrationError(i, "state became non-finite");
    }
    return u;
}

}  // namespace

Field from_params(const net::VectorFieldParams& params) {
    return [&params](const Matrix& x, double t) { return net::forward(params, x, t); };
}

SolverKind parse_solver_kind(const std::string& s) {
    if (s == "euler") return SolverKind::euler;
    if (s == "heun") return SolverKind::heun;
    if (s == "rk4") return SolverKind::rk4;
    throw Error(ErrorCode::invalid_argument, "unknown solver '" + s + "'");
}

std::string to_string(SolverKind k) {
    switch (k) {
        case SolverKind::euler: return "euler";
        case SolverKind::heun: return "heun";
        case SolverKind::rk4: return "rk4";
    }
    return "unknown";
}

int SolverSpec::evals_per_step() const {
    switch (kind) {
        case SolverKind::euler: return 1;
        case SolverKind::heun: return 2;
        case SolverKind::rk4: return 4;
    }
    return 0;
}

void validate(const SolverSpec& spec) {
    require(spec.steps >= 1, ErrorCode::invalid_argument, "solver needs steps >= 1");
}

SolverSpec solver_for_nfe(int nfe, Direction dir) {
    require(nfe >= 1, ErrorCode::invalid_argument, "NFE must be >= 1");
    if (nfe % 4 == 0) return {SolverKind::rk4, nfe / 4, dir};
    if (nfe % 2 == 0) return {SolverKind::heun, nfe / 2, dir};
    return {SolverKind::euler, nfe, dir};
}

Result integrate(const Field& field, const Matrix& u0, const SolverSpec& spec, int threads) {
    validate(spec);
    require(u0.allFinite(), ErrorCode::non_finite, "initial state contains non-finite values");
    Result res;
    res.nfe = spec.nfe();
    res.state.resize(u0.rows(), u0.cols());
    const Eigen::Index n = u0.rows();
    const Eigen::Index chunks = (n + kChunkRows - 1) / kChunkRows;
    auto run_chunk = [&](Eigen::Index c) {
        const Eigen::Index begin = c * kChunkRows;
        const Eigen::Index rows = std::min(kChunkRows, n - begin);
        res.state.middleRows(begin, rows) = integrate_chunk(field, u0.middleRows(begin, rows), spec);
    };
    const int workers = static_cast<int>(std::min<Eigen::Index>(std::max(threads, 1), chunks));
    if (workers <= 1) {
        for (Eigen::Index c = 0; c < chunks; ++c) run_chunk(c);
        return res;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (Eigen::Index c = w; c < chunks; c += workers) run_chunk(c);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return res;
}

Result integrate(const net::VectorFieldParams& params, const Matrix& u0, const SolverSpec& spec,
                 int threads) {
    return integrate(from_params(params), u0, spec, threads);
}

Result invert(const Field& field, const Matrix& x, const SolverSpec& spec, int threads) {
    require(spec.direction == Direction::backward, ErrorCode::invalid_argument,
            "inversion requires a backward solver");
    return integrate(field, x, spec, threads);
}

Result invert(const net::VectorFieldParams& params, const Matrix& x, const SolverSpec& spec,
              int threads) {
    return invert(from_params(params), x, spec, threads);
}

Eigen::VectorXd reconstruction_error(const Field& field, const Matrix& x, const Matrix& z,
                                     const SolverSpec& forward_spec, int threads) {
    SolverSpec fwd = forward_spec;
    fwd.direction = Direction::forward;
    const Matrix recon = integrate(field, z, fwd, threads).state;
    return (x - recon).rowwise().norm();
}

}  // namespace bfr::ode
