#include <doctest.h>

#include <cmath>

#include "bfr/data.hpp"
#include "bfr/error.hpp"
#include "bfr/generator.hpp"
#include "support.hpp"

using namespace bfr;
using gen::Matrix;

namespace {

gen::TrainConfig small_config(long steps = 300) {
    gen::TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 128;
    cfg.hidden = {32, 32};
    cfg.freq_count = 4;
    cfg.eval_every = 50;
    return cfg;
}

Matrix eight_gaussians(Eigen::Index n, std::uint64_t seed = 0) {
    auto spec = data::default_spec(data::DatasetName::eight_gaussians);
    spec.n = n;
    spec.seed = seed;
    return data::make_dataset(spec);
}

gen::Generator zero_generator(int dim) {
    gen::Generator g;
    g.field = net::zero_params({dim, {8}, 2, net::Activation::silu});
    g.solver = {ode::SolverKind::rk4, 4};
    g.stats = gen::Standardizer::identity(dim);
    return g;
}

}  // namespace

TEST_CASE("standardizer round-trips and leaves constant columns unscaled") {
    Matrix x(3, 2);
    x << 1, 5, 2, 5, 3, 5;
    const auto s = gen::Standardizer::fit(x);
    CHECK(s.mean(0) == 2.0);
    CHECK(s.scale(0) == 1.0);
    CHECK(s.mean(1) == 5.0);
    CHECK(s.scale(1) == 1.0);
    CHECK((s.revert(s.apply(x)) - x).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_THROWS_AS(gen::Standardizer::fit(Matrix(0, 2)), Error);
}

TEST_CASE("zero field sampling returns the prior draws") {
    const auto g = zero_generator(2);
    const auto s = gen::sample(g, 50, 9);
    CHECK((s.x.array() == gen::prior_draws(50, 2, 9).array()).all());
    CHECK(s.nfe == 16);
}

TEST_CASE("prior draws are prefix-stable in the sample count") {
    const Matrix a = gen::prior_draws(10, 3, 4), b = gen::prior_draws(25, 3, 4);
    CHECK((a.array() == b.topRows(10).array()).all());
    CHECK(!(gen::prior_draws(10, 3, 5).array() == a.array()).all());
}

TEST_CASE("training lowers the loss and is deterministic") {
    const Matrix x = eight_gaussians(2000);
    const auto cfg = small_config();
    const auto a = gen::train_base(x, cfg, {ode::SolverKind::rk4, 5});
    const auto b = gen::train_base(x, cfg, {ode::SolverKind::rk4, 5});
    REQUIRE(a.curve.size() >= 2);
    CHECK(a.curve.back().loss < a.curve.front().loss);
    CHECK(a.generator.hash() == b.generator.hash());
    const auto sa = gen::sample(a.generator, 100, 1), sb = gen::sample(b.generator, 100, 1);
    CHECK((sa.x.array() == sb.x.array()).all());
    auto other = cfg;
    other.seed = 1;
    CHECK(gen::train_base(x, other, {ode::SolverKind::rk4, 5}).generator.hash() != a.generator.hash());
}

TEST_CASE("a point mass is learned to within 0.05") {
    auto spec = data::default_spec(data::DatasetName::point_mass);
    spec.center = Eigen::Vector2d(1.5, -0.5);
    spec.n = 1000;
    const auto g = gen::train_base(data::make_dataset(spec), small_config(500), {ode::SolverKind::rk4, 5}).generator;
    const auto s = gen::sample(g, 2000, 3);
    const Eigen::RowVectorXd mean = s.x.colwise().mean();
    CHECK(std::abs(mean(0) - 1.5) <= 0.05);
    CHECK(std::abs(mean(1) + 0.5) <= 0.05);
}

TEST_CASE("sampling checks solver overrides and is thread invariant") {
    const auto g = gen::train_base(eight_gaussians(500), small_config(50), {ode::SolverKind::rk4, 5}).generator;
    const auto a = gen::sample(g, 200, 2, ode::SolverSpec{ode::SolverKind::heun, 3}, 1);
    const auto b = gen::sample(g, 200, 2, ode::SolverSpec{ode::SolverKind::heun, 3}, 3);
    CHECK(a.nfe == 6);
    CHECK((a.x.array() == b.x.array()).all());
    CHECK(gen::sample(g, 10, 2).nfe == 20);
}

TEST_CASE("inversion of a trained generator reconstructs its samples") {
    const auto g = gen::train_base(eight_gaussians(1000), small_config(200), {ode::SolverKind::rk4, 16}).generator;
    const auto s = gen::sample(g, 100, 5);
    const auto lb = gen::invert_batch(g, s.x, {ode::SolverKind::rk4, 16, ode::Direction::backward});
    CHECK(lb.nfe == 64);
    CHECK((lb.z - gen::prior_draws(100, 2, 5)).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(lb.mean_rec_error < 1e-3);
    CHECK(std::isnan(gen::invert_batch(g, s.x, {ode::SolverKind::rk4, 16, ode::Direction::backward}, false)
                         .mean_rec_error));
}

TEST_CASE("invalid training configurations are rejected") {
    const Matrix x = eight_gaussians(100);
    auto cfg = small_config();
    cfg.steps = 0;
    CHECK_THROWS_AS(gen::train_base(x, cfg), Error);
    cfg = small_config();
    cfg.lr = -1.0;
    CHECK_THROWS_AS(gen::train_base(x, cfg), Error);
    cfg = small_config();
    cfg.batch_size = 1000;
    CHECK_THROWS_AS(gen::train_base(x, cfg), Error);
}

TEST_CASE("checkpoint round-trip preserves samples and hash") {
    testing::TempDir dir;
    const auto g = gen::train_base(eight_gaussians(500), small_config(50), {ode::SolverKind::rk4, 5}).generator;
    gen::save(g, dir / "g.bfr");
    const auto back = gen::load(dir / "g.bfr");
    CHECK(back.hash() == g.hash());
    CHECK(back.solver.kind == ode::SolverKind::rk4);
    CHECK(back.solver.steps == 5);
    CHECK((gen::sample(back, 50, 1).x.array() == gen::sample(g, 50, 1).x.array()).all());
    CHECK_THROWS_AS(gen::load(dir / "absent.bfr"), Error);
    // A bare network checkpoint lacks generator metadata.
    net::save(g.field, dir / "net.bfr");
    try {
        gen::load(dir / "net.bfr");
        FAIL("expected missing section");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::missing_section);
    }
}
