#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bfr/data.hpp"
#include "bfr/error.hpp"
#include "support.hpp"

using namespace bfr;
using data::Matrix;

TEST_CASE("point_mass gives exact copies") {
    auto spec = data::default_spec(data::DatasetName::point_mass);
    spec.center = Eigen::Vector2d(1.0, 2.0);
    spec.n = 10;
    const Matrix x = data::make_dataset(spec);
    REQUIRE(x.rows() == 10);
    for (Eigen::Index i = 0; i < 10; ++i) {
        CHECK(x(i, 0) == 1.0);
        CHECK(x(i, 1) == 2.0);
    }
}

TEST_CASE("eight_gaussians mode geometry") {
    auto spec = data::default_spec(data::DatasetName::eight_gaussians);
    CHECK(spec.radius == 4.0);
    CHECK(spec.sigma_mode == 0.2);
    CHECK(spec.n == 10000);
    const auto centers = data::mode_centers(spec);
    REQUIRE(centers.size() == 8);
    for (int k = 0; k < 8; ++k) {
        const double angle = std::atan2(centers[k](1), centers[k](0));
        const double expected = k <= 4 ? k * std::numbers::pi / 4 : k * std::numbers::pi / 4 - 2 * std::numbers::pi;
        CHECK(angle == doctest::Approx(expected).epsilon(1e-12));
        CHECK(centers[k].norm() == doctest::Approx(4.0));
    }
    CHECK(data::min_mode_distance(spec) == doctest::Approx(2 * 4.0 * std::sin(std::numbers::pi / 8)));

    // The per-sample chance of leaving the 4-sigma disc is exp(-8) for an
    // isotropic 2-D Gaussian; allow a few times that.
    const Matrix x = data::make_dataset(spec);
    long outside = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double best = 1e300;
        for (const auto& c : centers) best = std::min(best, (x.row(i).transpose() - c).norm());
        if (best > 4.0 * spec.sigma_mode) ++outside;
    }
    CHECK(static_cast<double>(outside) / static_cast<double>(x.rows()) <= 4.0 * std::exp(-8.0));
}

TEST_CASE("dataset constructors are pure functions of the spec") {
    for (auto name : {data::DatasetName::eight_gaussians, data::DatasetName::two_moons,
                      data::DatasetName::checkerboard, data::DatasetName::grid_images}) {
        auto spec = data::default_spec(name);
        spec.n = 300;
        spec.seed = 5;
        const Matrix a = data::make_dataset(spec), b = data::make_dataset(spec);
        CHECK((a.array() == b.array()).all());
        CHECK(a.cols() == spec.dim());
        spec.seed = 6;
        CHECK(!(data::make_dataset(spec).array() == a.array()).all());
    }
}

TEST_CASE("two_moons and checkerboard stay in their supports") {
    auto moons = data::default_spec(data::DatasetName::two_moons);
    moons.sigma_mode = 0.0;
    moons.n = 500;
    const Matrix m = data::make_dataset(moons);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double upper = std::hypot(m(i, 0), m(i, 1));
        const double lower = std::hypot(m(i, 0) - 1.0, m(i, 1) - 0.5);
        CHECK(std::min(std::abs(upper - 1.0), std::abs(lower - 1.0)) < 1e-12);
    }
    auto cb = data::default_spec(data::DatasetName::checkerboard);
    cb.n = 500;
    const Matrix c = data::make_dataset(cb);
    CHECK(c.cwiseAbs().maxCoeff() <= 4.0);
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        const long cx = static_cast<long>(std::floor(c(i, 0) / 2.0));
        const long cy = static_cast<long>(std::floor(c(i, 1) / 2.0));
        CHECK(((cx + cy) % 2 + 2) % 2 == 0);
    }
}

TEST_CASE("unknown dataset names are rejected") {
    CHECK_THROWS_AS(data::parse_dataset_name("mnist"), Error);
    CHECK(data::parse_dataset_name("two_moons") == data::DatasetName::two_moons);
    CHECK(data::to_string(data::DatasetName::grid_images) == "grid_images");
}

TEST_CASE("identity augmentation returns the input for any probability") {
    Rng gen(1);
    const Matrix x = gen.normal_matrix(20, 4);
    for (double p : {0.0, 0.3, 1.0}) {
        Rng rng(2);
        const Matrix y = data::data_aug(x, {0.0, 1, p}, rng);
        CHECK((y.array() == x.array()).all());
    }
}

TEST_CASE("blur of a constant image is unchanged") {
    const data::GridShape g{5, 4};
    const Matrix img = Matrix::Constant(3, g.size(), 0.37);
    for (int w : {3, 5}) {
        const Matrix b = data::box_blur(img, g, w);
        CHECK((b.array() - 0.37).abs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("box blur matches a hand-computed 3x3 average with clamped borders") {
    const data::GridShape g{3, 3};
    Matrix img = Matrix::Zero(1, 9);
    img(0, 4) = 9.0;  // centre pixel
    const Matrix b = data::box_blur(img, g, 3);
    for (int k = 0; k < 9; ++k) CHECK(b(0, k) == doctest::Approx(1.0));
    Matrix corner = Matrix::Zero(1, 9);
    corner(0, 0) = 9.0;
    // Top-left output averages a window that sees the corner pixel four times.
    CHECK(data::box_blur(corner, g, 3)(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("additive augmentation replays the logged draws") {
    Rng gen(3);
    const Matrix x = gen.normal_matrix(6, 3);
    Rng rng(4);
    Matrix log;
    const Matrix y = data::data_aug(x, {0.1, 1, 1.0}, rng, std::nullopt, &log);
    CHECK(((y - (x + 0.1 * log)).cwiseAbs().array() < 1e-15).all());
    CHECK(log.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("augmentation probability zero skips every sample") {
    Rng gen(3);
    const Matrix x = gen.normal_matrix(6, 3);
    Rng rng(4);
    Matrix log;
    const Matrix y = data::data_aug(x, {0.5, 1, 0.0}, rng, std::nullopt, &log);
    CHECK((y.array() == x.array()).all());
    CHECK(log.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("blur on vector data is an error") {
    Rng rng(1);
    CHECK_THROWS_AS(data::data_aug(Matrix::Zero(2, 2), {0.0, 3, 1.0}, rng), Error);
    CHECK_THROWS_AS(data::validate(data::AugSpec{0.0, 2, 1.0}), Error);
    CHECK_THROWS_AS(data::validate(data::AugSpec{-1.0, 1, 1.0}), Error);
    CHECK_THROWS_AS(data::validate(data::AugSpec{0.0, 1, 1.5}), Error);
}

namespace {

std::string be32(std::uint32_t v) {
    return {static_cast<char>(v >> 24), static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 8) & 0xff),
            static_cast<char>(v & 0xff)};
}

}  // namespace

TEST_CASE("hand-built IDX file maps bytes to [-1, 1]") {
    std::string bytes = be32(0x00000803) + be32(2) + be32(2) + be32(2);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>(i % 2 ? 255 : 0));
    const auto idx = data::parse_idx(bytes);
    CHECK(idx.shape.height == 2);
    CHECK(idx.shape.width == 2);
    REQUIRE(idx.images.rows() == 2);
    REQUIRE(idx.images.cols() == 4);
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 4; ++j) CHECK(idx.images(i, j) == (j % 2 ? 1.0 : -1.0));
}

TEST_CASE("IDX errors are distinct") {
    auto code_of = [](const std::string& b) {
        try {
            data::parse_idx(b);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::config;
    };
    CHECK(code_of(be32(0x00000801) + be32(1)) == ErrorCode::wrong_magic);
    CHECK(code_of(be32(0x00000803) + be32(1) + be32(2) + be32(2) + "ab") == ErrorCode::truncated_payload);
    CHECK(code_of(be32(0x00000803) + be32(1)) == ErrorCode::truncated_payload);
    CHECK(code_of(be32(0x00000803) + be32(0xffffffff) + be32(0xffff) + be32(0xffff)) == ErrorCode::dimension_overflow);
    CHECK_THROWS_AS(data::load_idx("/nonexistent/file.idx"), Error);
}

TEST_CASE("IDX write-then-read is exact for grid images") {
    testing::TempDir dir;
    auto spec = data::default_spec(data::DatasetName::grid_images);
    spec.n = 25;
    spec.grid = {6, 5};
    const Matrix x = data::make_dataset(spec);
    data::write_idx(dir / "grid.idx", x, spec.grid);
    const auto back = data::load_idx(dir / "grid.idx");
    CHECK(back.shape.height == 6);
    CHECK(back.shape.width == 5);
    CHECK((back.images.array() == x.array()).all());
}
