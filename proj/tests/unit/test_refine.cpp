#include <doctest.h>

#include <cmath>

#include "bfr/data.hpp"
#include "bfr/error.hpp"
#include "bfr/refine.hpp"
#include "support.hpp"

using namespace bfr;
using refine::Matrix;

namespace {

Matrix dataset(Eigen::Index n = 1000) {
    auto spec = data::default_spec(data::DatasetName::eight_gaussians);
    spec.n = n;
    return data::make_dataset(spec);
}

gen::Generator base(std::uint64_t seed = 0, long steps = 150) {
    gen::TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 128;
    cfg.hidden = {32, 32};
    cfg.freq_count = 4;
    cfg.seed = seed;
    return gen::train_base(dataset(), cfg, {ode::SolverKind::rk4, 4}).generator;
}

refine::TrainConfig small(long steps = 100) {
    refine::TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 64;
    cfg.hidden = {32, 32};
    cfg.freq_count = 4;
    cfg.eval_every = 20;
    return cfg;
}

// A refiner whose field is identically zero, so integration is a no-op.
refine::Refiner null_refiner(refine::Kind kind, const gen::Generator& g) {
    refine::Refiner r;
    r.kind = kind;
    r.field = net::zero_params({g.dim(), {8}, 2, net::Activation::silu});
    r.generator_hash = g.hash();
    r.stats = kind == refine::Kind::lfr ? gen::Standardizer::identity(g.dim()) : g.stats;
    return r;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::config;
}

}  // namespace

TEST_CASE("null refiners leave samples unchanged") {
    const auto g = base();
    const auto s = gen::sample(g, 200, 1);
    const auto dfr = refine::refine_dfr(null_refiner(refine::Kind::dfr, g), s);
    CHECK((dfr.x - s.x).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(dfr.nfe == 10);

    auto ni = null_refiner(refine::Kind::noise_inject, g);
    ni.noise.sigma_d = 0.0;
    CHECK((refine::refine_noise_inject(ni, s, 4).x - s.x).cwiseAbs().maxCoeff() <= 1e-12);

    const auto lfr = refine::refine_lfr(null_refiner(refine::Kind::lfr, g), g, 200, 1);
    CHECK((lfr.batch.x.array() == s.x.array()).all());
    CHECK((lfr.refined_latent.array() == gen::prior_draws(200, 2, 1).array()).all());
}

TEST_CASE("one-step refinement is a single Euler step in standardized units") {
    const auto g = base();
    const auto r = refine::train_dfr(g, dataset(), {0.05, 1, 1.0}, small(50)).refiner;
    const auto s = gen::sample(g, 50, 2);
    const auto out = refine::refine_dfr(r, s, ode::SolverSpec{ode::SolverKind::euler, 1});
    const Matrix xs = g.stats.apply(s.x);
    const Matrix want = g.stats.revert(xs + net::forward(r.field, xs, 0.0));
    CHECK((out.x - want).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(out.nfe == 1);

    auto lr = refine::train_lfr(g, dataset(200), {}, {ode::SolverKind::rk4, 4, ode::Direction::backward}, small(50));
    const auto l = refine::refine_lfr(lr.refiner, g, 30, 3, ode::SolverSpec{ode::SolverKind::euler, 1});
    const Matrix z = gen::prior_draws(30, 2, 3);
    CHECK((l.refined_latent - (z + net::forward(lr.refiner.field, z, 0.0))).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(l.refiner_nfe == 1);
    CHECK(l.base_nfe == 16);
    CHECK(l.batch.nfe == 17);
    CHECK(std::isfinite(lr.refinement_error));
}

TEST_CASE("zero noise collapses noise injection onto dfr without augmentation") {
    const auto g = base();
    const auto cfg = small(60);
    const auto a = refine::train_dfr(g, dataset(), {0.0, 1, 1.0}, cfg);
    const auto b = refine::train_noise_inject(g, dataset(), 0.0, cfg);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].loss == b.curve[i].loss);
    CHECK((a.refiner.field.flatten().array() == b.refiner.field.flatten().array()).all());
}

TEST_CASE("training is deterministic and pooled feeds differ from fresh ones") {
    const auto g = base();
    auto cfg = small(40);
    const auto a = refine::train_dfr(g, dataset(), {0.05, 1, 1.0}, cfg);
    const auto b = refine::train_dfr(g, dataset(), {0.05, 1, 1.0}, cfg);
    CHECK(net::checksum(a.refiner.field) == net::checksum(b.refiner.field));
    cfg.pool_size = 500;
    const auto c = refine::train_dfr(g, dataset(), {0.05, 1, 1.0}, cfg);
    CHECK(net::checksum(c.refiner.field) != net::checksum(a.refiner.field));
    CHECK(a.refiner.generator_hash == g.hash());
}

TEST_CASE("refiners refuse a foreign generator unless transfer is allowed") {
    const auto g = base(0), h = base(1, 20);
    REQUIRE(g.hash() != h.hash());
    const auto dfr = refine::train_dfr(g, dataset(), {0.05, 1, 1.0}, small(20)).refiner;
    const auto solver = refine::default_refiner_solver();
    CHECK(code_of([&] { refine::refine_generator_samples(dfr, h, 10, 0, solver); }) == ErrorCode::hash_mismatch);
    CHECK(refine::refine_generator_samples(dfr, h, 10, 0, solver, true).x.rows() == 10);
    const auto lfr = null_refiner(refine::Kind::lfr, g);
    CHECK(code_of([&] { refine::refine_lfr(lfr, h, 10, 0); }) == ErrorCode::hash_mismatch);
    CHECK(refine::refine_lfr(lfr, h, 10, 0, std::nullopt, true).batch.x.rows() == 10);
    CHECK(code_of([&] { refine::refine_dfr(lfr, gen::sample(g, 5, 0)); }) == ErrorCode::kind_mismatch);
}

TEST_CASE("total NFE of refined generator samples") {
    const auto g = base();
    const auto solver = ode::solver_for_nfe(10);
    CHECK(refine::refine_generator_samples(null_refiner(refine::Kind::dfr, g), g, 5, 0, solver).nfe == 26);
    CHECK(refine::refine_generator_samples(null_refiner(refine::Kind::lfr, g), g, 5, 0, solver).nfe == 26);
}

TEST_CASE("latent cache is written, reused and invalidated by the generator hash") {
    testing::TempDir dir;
    const auto g = base();
    const auto inv = ode::SolverSpec{ode::SolverKind::rk4, 4, ode::Direction::backward};
    const auto first = refine::train_lfr(g, dataset(100), {}, inv, small(10), dir / "lat.bfr");
    CHECK(std::isfinite(first.mean_rec_error));
    const auto cache = refine::load_latents(dir / "lat.bfr");
    CHECK(cache.generator_hash == g.hash());
    CHECK(cache.z.rows() == 100);
    CHECK((cache.z.array() == gen::invert_batch(g, dataset(100), inv, false).z.array()).all());

    const auto second = refine::train_lfr(g, dataset(100), {}, inv, small(10), dir / "lat.bfr");
    CHECK(std::isnan(second.mean_rec_error));
    CHECK(net::checksum(second.refiner.field) == net::checksum(first.refiner.field));

    const auto h = base(1, 20);
    const auto third = refine::train_lfr(h, dataset(100), {}, inv, small(10), dir / "lat.bfr");
    CHECK(std::isfinite(third.mean_rec_error));
    CHECK(refine::load_latents(dir / "lat.bfr").generator_hash == h.hash());
}

TEST_CASE("refiner checkpoints round-trip") {
    testing::TempDir dir;
    const auto g = base();
    auto r = refine::train_noise_inject(g, dataset(), 0.3, small(20)).refiner;
    r.solver = {ode::SolverKind::rk4, 3};
    refine::save(r, dir / "r.bfr");
    const auto back = refine::load(dir / "r.bfr");
    CHECK(back.kind == refine::Kind::noise_inject);
    CHECK(back.noise.sigma_d == 0.3);
    CHECK(back.generator_hash == g.hash());
    CHECK(back.solver.kind == ode::SolverKind::rk4);
    CHECK(back.solver.steps == 3);
    CHECK(net::checksum(back.field) == net::checksum(r.field));
    const auto s = gen::sample(g, 20, 1);
    CHECK((refine::refine_noise_inject(back, s, 7).x.array() == refine::refine_noise_inject(r, s, 7).x.array()).all());
    CHECK(!(refine::refine_noise_inject(r, s, 8).x.array() == refine::refine_noise_inject(r, s, 7).x.array()).all());
    gen::save(g, dir / "g.bfr");
    CHECK(code_of([&] { refine::load(dir / "g.bfr"); }) == ErrorCode::missing_section);
}

TEST_CASE("fmrefiner needs two solver steps and ignores the generator hash") {
    const auto g = base();
    const auto r = refine::train_fmrefiner(dataset(), 0.05, 0.1, small(30)).refiner;
    CHECK(r.kind == refine::Kind::fmrefiner);
    CHECK(r.solver.kind == ode::SolverKind::euler);
    CHECK(r.solver.nfe() == 10);
    CHECK_THROWS_AS(refine::fmrefiner_solver(1), Error);
    const auto s = gen::sample(g, 20, 0);
    CHECK(code_of([&] { refine::refine_fmrefiner(r, s, ode::SolverSpec{ode::SolverKind::euler, 1}); }) ==
          ErrorCode::invalid_argument);
    CHECK(refine::refine_fmrefiner(r, s, ode::SolverSpec{ode::SolverKind::euler, 2}).nfe == 2);
    CHECK(refine::refine_generator_samples(r, base(1, 20), 10, 0, refine::default_refiner_solver()).x.allFinite());
    CHECK_THROWS_AS(refine::train_fmrefiner(dataset(), -0.1, 0.1, small(5)), Error);
}

TEST_CASE("the x0-predictor velocity clamps near t = 1") {
    const auto p = net::zero_params({2, {4}, 2, net::Activation::silu});
    const auto v = refine::fmrefiner_velocity(p);
    Matrix x(1, 2);
    x << 1.0, -2.0;
    CHECK((v(x, 0.5) - (-x / 0.5)).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((v(x, 1.0) - (-x / 1e-3)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("transfer evaluation rows and self-transfer") {
    const auto g = base();
    const auto r = refine::train_dfr(g, dataset(), {0.05, 1, 1.0}, small(30)).refiner;
    const auto spec = data::default_spec(data::DatasetName::eight_gaussians);
    metrics::MetricSpec ms;
    ms.tau = metrics::default_tau(spec);
    ms.n_projections = 16;
    refine::TransferOptions opts;
    opts.seeds = {0, 1};
    opts.n_samples = 100;
    const Matrix ref = dataset(100);
    const auto rep = refine::transfer_eval(r, g, ref, spec, ms, opts);
    // Per seed: base plus two nfes, seven metrics and a total_nfe row each.
    CHECK(rep.rows.size() == 2 * 3 * 8);
    for (const auto& row : rep.rows) CHECK(row.generator_hash == g.hash());
    const auto* total = rep.find("total_nfe", 10);
    REQUIRE(total != nullptr);
    CHECK(total->value == 26.0);

    const auto h = base(1, 20);
    CHECK(code_of([&] { refine::transfer_eval(r, h, ref, spec, ms, opts); }) == ErrorCode::hash_mismatch);
    opts.allow_transfer = true;
    CHECK(refine::transfer_eval(r, h, ref, spec, ms, opts).rows.size() == rep.rows.size());
    const auto fm = refine::train_fmrefiner(dataset(), 0.05, 0.1, small(5)).refiner;
    CHECK(code_of([&] { refine::transfer_eval(fm, g, ref, spec, ms, opts); }) == ErrorCode::kind_mismatch);
}

TEST_CASE("a generator refined against its own samples learns a vanishing midpoint field") {
    // Training on the generator's own outputs makes it perfect by construction.
    // With independent endpoints from one distribution, x_t at t = 0.5 is
    // symmetric in the pair, so the optimal field there is zero.
    const auto g = base();
    const Matrix own = gen::sample(g, 4000, 42).x;
    auto cfg = small(1500);
    cfg.batch_size = 256;
    cfg.pool_size = 4000;
    const auto r = refine::train_dfr(g, own, {0.0, 1, 1.0}, cfg).refiner;
    const Matrix xs = g.stats.apply(own.topRows(1000));
    const double mid = net::forward(r.field, xs, 0.5).rowwise().norm().mean();
    const double start = net::forward(r.field, xs, 0.0).rowwise().norm().mean();
    CHECK(mid <= 0.1);
    CHECK(start > 0.5);
}
