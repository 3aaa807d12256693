#include "bfr/generator.hpp"

#include <cmath>
#include <limits>

#include "bfr/error.hpp"

namespace bfr::gen {

namespace {

constexpr container::Tag kGenTag = container::make_tag("GEN1");

enum StreamTag : std::uint64_t { kInit = 1, kIndex = 2, kPrior = 3, kTime = 4, kSample = 5 };

}  // namespace

Standardizer Standardizer::fit(const Matrix& data) {
    require(data.rows() >= 1, ErrorCode::invalid_argument, "cannot standardize an empty dataset");
    Standardizer s;
    s.mean = data.colwise().mean().transpose();
    s.scale.resize(data.cols());
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
        double var = 0.0;
        if (data.rows() > 1)
            var = (data.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(data.rows() - 1);
        const double sd = std::sqrt(var);
        s.scale(j) = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

Standardizer Standardizer::identity(int dim) {
    return {Vector::Zero(dim), Vector::Ones(dim)};
}

Matrix Standardizer::apply(const Matrix& x) const {
    require(x.cols() == mean.size(), ErrorCode::dimension_mismatch, "standardizer dimension mismatch");
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Matrix Standardizer::revert(const Matrix& z) const {
    require(z.cols() == mean.size(), ErrorCode::dimension_mismatch, "standardizer dimension mismatch");
    Matrix x = z.array().rowwise() * scale.transpose().array();
    x.rowwise() += mean.transpose();
    return x;
}

void validate(const TrainConfig& cfg) {
    require(cfg.steps >= 1 && cfg.batch_size >= 1 && cfg.lr > 0.0 && cfg.eval_every >= 1,
            ErrorCode::invalid_argument, "training steps, batch size, lr and eval cadence must be positive");
}

std::uint64_t Generator::hash() const {
    return container::fnv1a(container::encode(to_container(*this)));
}

TrainResult train_base(const Matrix& dataset, const TrainConfig& cfg, const ode::SolverSpec& sampling) {
    validate(cfg);
    ode::validate(sampling);
    require(dataset.rows() >= cfg.batch_size, ErrorCode::invalid_argument,
            "dataset smaller than batch size");
    require(dataset.allFinite(), ErrorCode::non_finite, "dataset contains non-finite values");

    TrainResult out;
    Generator& g = out.generator;
    g.stats = Standardizer::fit(dataset);
    g.solver = sampling;
    g.solver.direction = ode::Direction::forward;
    const Matrix data = g.stats.apply(dataset);
    const int d = static_cast<int>(dataset.cols());

    Rng init_rng = Rng::derive(cfg.seed, {kInit});
    g.field = net::init_params({d, cfg.hidden, cfg.freq_count, net::Activation::silu}, init_rng);
    auto opt = net::make_opt_state(g.field, {cfg.lr});

    Rng index_rng = Rng::derive(cfg.seed, {kIndex});
    Rng prior_rng = Rng::derive(cfg.seed, {kPrior});
    Rng time_rng = Rng::derive(cfg.seed, {kTime});

    Matrix x1(cfg.batch_size, d);
    double window = 0.0;
    long window_count = 0;
    for (long step = 0; step < cfg.steps; ++step) {
        for (int i = 0; i < cfg.batch_size; ++i)
            x1.row(i) = data.row(static_cast<Eigen::Index>(index_rng.index(static_cast<std::size_t>(data.rows()))));
        const Matrix x0 = prior_rng.normal_matrix(cfg.batch_size, d);
        const Vector t = time_rng.uniform_vector(cfg.batch_size);
        const auto pair = interp::interpolate(x0, x1, t, cfg.path);
        auto lg = net::loss_and_grad(g.field, pair.xt, t, pair.target);
        if (!std::isfinite(lg.loss)) throw DivergenceError(step);
        net::opt_step(g.field, lg.grads, opt);
        window += lg.loss;
        ++window_count;
        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps || step == 0) {
            out.curve.push_back({step + 1, window / static_cast<double>(window_count)});
            window = 0.0;
            window_count = 0;
        }
    }
    return out;
}

Matrix prior_draws(Eigen::Index n, int dim, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, {kSample});
    return rng.normal_matrix(n, dim);
}

SampleBatch sample_from_latent(const Generator& g, const Matrix& z, std::optional<ode::SolverSpec> solver,
                               int threads) {
    ode::SolverSpec spec = solver.value_or(g.solver);
    spec.direction = ode::Direction::forward;
    auto res = ode::integrate(g.field, z, spec, threads);
    return {g.stats.revert(res.state), res.nfe};
}

SampleBatch sample(const Generator& g, Eigen::Index n, std::uint64_t seed,
                   std::optional<ode::SolverSpec> solver, int threads) {
    require(n >= 1, ErrorCode::invalid_argument, "sample count must be >= 1");
    return sample_from_latent(g, prior_draws(n, g.dim(), seed), solver, threads);
}

LatentBatch invert_batch(const Generator& g, const Matrix& x, const ode::SolverSpec& solver,
                         bool with_rec_error, int threads) {
    const Matrix xs = g.stats.apply(x);
    auto res = ode::invert(g.field, xs, solver, threads);
    LatentBatch out{res.state, res.nfe, std::numeric_limits<double>::quiet_NaN()};
    if (with_rec_error)
        out.mean_rec_error = ode::reconstruction_error(ode::from_params(g.field), xs, out.z, solver, threads).mean();
    return out;
}

void write_stats(container::ByteWriter& w, const Standardizer& s) {
    for (Eigen::Index j = 0; j < s.mean.size(); ++j) w.f64(s.mean(j));
    for (Eigen::Index j = 0; j < s.scale.size(); ++j) w.f64(s.scale(j));
}

Standardizer read_stats(container::ByteReader& r, int dim) {
    Standardizer s{Vector(dim), Vector(dim)};
    for (int j = 0; j < dim; ++j) s.mean(j) = r.f64();
    for (int j = 0; j < dim; ++j) s.scale(j) = r.f64();
    require(s.mean.allFinite() && s.scale.allFinite(), ErrorCode::non_finite,
            "standardization statistics are not finite");
    return s;
}

container::File to_container(const Generator& g) {
    container::File f = net::to_container(g.field);
    container::ByteWriter w;
    w.u32(static_cast<std::uint32_t>(g.dim()));
    w.u32(static_cast<std::uint32_t>(g.solver.kind));
    w.u32(static_cast<std::uint32_t>(g.solver.steps));
    write_stats(w, g.stats);
    f.sections.push_back({kGenTag, w.take()});
    return f;
}

Generator from_container(const container::File& f) {
    Generator g;
    g.field = net::from_container(f);
    container::ByteReader r(f.require(kGenTag).payload);
    const auto d = static_cast<int>(r.u32());
    require(d == g.field.data_dim, ErrorCode::dimension_mismatch, "generator header dimension mismatch");
    const auto kind = r.u32();
    require(kind <= 2, ErrorCode::unsupported, "unknown solver kind in generator header");
    g.solver.kind = static_cast<ode::SolverKind>(kind);
    g.solver.steps = static_cast<int>(r.u32());
    g.solver.direction = ode::Direction::forward;
    ode::validate(g.solver);
    g.stats = read_stats(r, d);
    return g;
}

void save(const Generator& g, const std::filesystem::path& path) {
    container::save(to_container(g), path);
}

Generator load(const std::filesystem::path& path) { return from_container(container::load(path)); }

}  // namespace bfr::gen
