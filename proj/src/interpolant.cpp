#include "bfr/interpolant.hpp"

#include <cmath>
#include <numbers>

#include "bfr/error.hpp"

namespace bfr::interp {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const Vector& t) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::dimension_mismatch,
            "paired batches must have the same shape");
    require(t.size() == a.rows(), ErrorCode::dimension_mismatch, "one time value per row required");
    for (Eigen::Index i = 0; i < t.size(); ++i)
        require(t(i) >= 0.0 && t(i) <= 1.0, ErrorCode::invalid_argument, "time outside [0, 1]");
}

// Straight line from `source` (t = 0) to `dest` (t = 1), written as
// t * dest + (1 - t) * source so every builder shares the same rounding.
Pair straight_line(const Matrix& source, const Matrix& dest, const Vector& t) {
    Pair p;
    p.xt.resize(source.rows(), source.cols());
    for (Eigen::Index i = 0; i < source.rows(); ++i)
        p.xt.row(i) = t(i) * dest.row(i) + (1.0 - t(i)) * source.row(i);
    p.target = dest - source;
    return p;
}

}  // namespace

PathSpec PathSpec::straight() {
    PathSpec p;
    p.kind = Kind::straight;
    p.a = [](double t) { return 1.0 - t; };
    p.b = [](double t) { return t; };
    p.da = [](double) { return -1.0; };
    p.db = [](double) { return 1.0; };
    return p;
}

PathSpec PathSpec::trigonometric() {
    constexpr double h = std::numbers::pi / 2.0;
    return custom([](double t) { return std::cos(h * t); }, [](double t) { return std::sin(h * t); },
                  [](double t) { return -h * std::sin(h * t); }, [](double t) { return h * std::cos(h * t); });
}

PathSpec PathSpec::custom(Fn a, Fn b, Fn da, Fn db) {
    constexpr double tol = 1e-12;
    require(std::abs(a(0.0) - 1.0) < tol && std::abs(b(0.0)) < tol && std::abs(a(1.0)) < tol &&
                std::abs(b(1.0) - 1.0) < tol,
            ErrorCode::invalid_argument, "path violates a(0)=1, b(0)=0, a(1)=0, b(1)=1");
    PathSpec p;
    p.kind = Kind::custom;
    p.a = std::move(a);
    p.b = std::move(b);
    p.da = std::move(da);
    p.db = std::move(db);
    return p;
}

Pair interpolate(const Matrix& x0, const Matrix& x1, const Vector& t, const PathSpec& path) {
    check_same_shape(x0, x1, t);
    if (path.kind == PathSpec::Kind::straight) return straight_line(x0, x1, t);
    Pair p;
    p.xt.resize(x0.rows(), x0.cols());
    p.target.resize(x0.rows(), x0.cols());
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
        const double ti = t(i);
        p.xt.row(i) = path.a(ti) * x0.row(i) + path.b(ti) * x1.row(i);
        p.target.row(i) = path.da(ti) * x0.row(i) + path.db(ti) * x1.row(i);
    }
    return p;
}

Pair dfr_pair(const Matrix& x0, const Matrix& xhat1, const data::AugSpec& aug, const Vector& t,
              Rng& rng, std::optional<data::GridShape> grid, NoiseLog* log) {
    check_same_shape(x0, xhat1, t);
    Matrix* aug_log = log ? &log->aug : nullptr;
    const Matrix xtilde = data::data_aug(xhat1, aug, rng, grid, aug_log);
    return straight_line(xtilde, x0, t);
}

void validate(const MixSpec& mix) {
    require(mix.alpha_max >= 0.0 && mix.alpha_max <= 1.0, ErrorCode::invalid_argument,
            "alpha_max must lie in [0, 1]");
}

Matrix lfr_mix(const Matrix& z1, const Matrix& z0, const MixSpec& spec, Rng& rng, NoiseLog* log) {
    validate(spec);
    require(z1.rows() == z0.rows() && z1.cols() == z0.cols(), ErrorCode::dimension_mismatch,
            "latent batches must have the same shape");
    Matrix a;
    if (spec.mode == MixMode::fixed) {
        a = Matrix::Constant(z1.rows(), z1.cols(), spec.alpha_max);
    } else {
        a.resize(z1.rows(), z1.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = spec.alpha_max * rng.uniform();
    }
    if (log) log->mix = a;
    Matrix out(z1.rows(), z1.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            const double ai = a(i, j);
            out(i, j) = std::sqrt(1.0 - ai * ai) * z1(i, j) + ai * z0(i, j);
        }
    return out;
}

Pair lfr_pair(const Matrix& z, const Matrix& z1a, const Vector& t, const PathSpec& path) {
    return interpolate(z, z1a, t, path);
}

void validate(const RefinerNoiseSpec& spec) {
    for (double s : {spec.sigma_d, spec.sigma_f, spec.sigma_z})
        require(std::isfinite(s) && s >= 0.0, ErrorCode::invalid_argument,
                "refiner noise magnitudes must be finite and >= 0");
}

Pair noise_inject_pair(const Matrix& x0, const Matrix& xhat1, double sigma_d, const Vector& t,
                       Rng& rng, NoiseLog* log) {
    check_same_shape(x0, xhat1, t);
    require(std::isfinite(sigma_d) && sigma_d >= 0.0, ErrorCode::invalid_argument, "sigma_d must be >= 0");
    const Matrix eps = rng.normal_matrix(x0.rows(), x0.cols());
    if (log) log->eps = eps;
    const Matrix x1p = sigma_d == 0.0 ? xhat1 : Matrix(xhat1 + sigma_d * eps);
    return straight_line(x1p, x0, t);
}

Pair fmrefiner_pair(const Matrix& x0, double sigma_f, double sigma_z, const Vector& t, Rng& rng,
                    NoiseLog* log) {
    require(t.size() == x0.rows(), ErrorCode::dimension_mismatch, "one time value per row required");
    require(std::isfinite(sigma_f) && sigma_f >= 0.0 && std::isfinite(sigma_z) && sigma_z >= 0.0,
            ErrorCode::invalid_argument, "sigma_f and sigma_z must be >= 0");
    const Matrix eps = rng.normal_matrix(x0.rows(), x0.cols());
    const Matrix z = rng.normal_matrix(x0.rows(), x0.cols());
    if (log) {
        log->eps = eps;
        log->z = z;
    }
    const Matrix x1 = sigma_f == 0.0 ? x0 : Matrix(x0 + sigma_f * eps);
    Pair p = straight_line(x1, x0, t);
    if (sigma_z > 0.0)
        for (Eigen::Index i = 0; i < x0.rows(); ++i) p.xt.row(i) += sigma_z * t(i) * (1.0 - t(i)) * z.row(i);
    p.target = x0;
    return p;
}

}  // namespace bfr::interp
