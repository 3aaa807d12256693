#include "bfr/refine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "bfr/error.hpp"

namespace bfr::refine {

namespace {

constexpr container::Tag kRefTag = container::make_tag("REF1");
constexpr container::Tag kLatTag = container::make_tag("LAT1");

enum StreamTag : std::uint64_t {
    kInit = 11,
    kIndex = 12,
    kGenerator = 13,
    kTime = 14,
    kNoise = 15,
    kPrior = 16,
    kMix = 17,
    kInference = 18,
};

struct Batch {
    Matrix xt;
    Vector t;
    Matrix target;
};

using BatchFn = std::function<Batch(long step)>;

// Shared optimisation loop: one Adam step per produced batch.
net::VectorFieldParams fit_field(int dim, const TrainConfig& cfg, const BatchFn& next,
                                 std::vector<gen::LossPoint>& curve) {
    require(cfg.steps >= 1 && cfg.batch_size >= 1 && cfg.lr > 0.0 && cfg.eval_every >= 1,
            ErrorCode::invalid_argument, "refiner steps, batch size, lr and eval cadence must be positive");
    Rng init_rng = Rng::derive(cfg.seed, {kInit});
    auto params = net::init_params({dim, cfg.hidden, cfg.freq_count, net::Activation::silu}, init_rng);
    auto opt = net::make_opt_state(params, {cfg.lr});
    double window = 0.0;
    long count = 0;
    for (long step = 0; step < cfg.steps; ++step) {
        const Batch b = next(step);
        auto lg = net::loss_and_grad(params, b.xt, b.t, b.target);
        if (!std::isfinite(lg.loss)) throw DivergenceError(step);
        net::opt_step(params, lg.grads, opt);
        window += lg.loss;
        ++count;
        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps || step == 0) {
            curve.push_back({step + 1, window / static_cast<double>(count)});
            window = 0.0;
            count = 0;
        }
    }
    return params;
}

Matrix draw_rows(const Matrix& pool, int count, Rng& rng) {
    Matrix out(count, pool.cols());
    for (int i = 0; i < count; ++i)
        out.row(i) = pool.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(pool.rows()))));
    return out;
}

// Standardized generator outputs, either fresh per step or from a fixed pool.
class GeneratorFeed {
public:
    GeneratorFeed(const gen::Generator& g, const TrainConfig& cfg)
        : g_(g), cfg_(cfg), rng_(Rng::derive(cfg.seed, {kGenerator})) {
        if (cfg.pool_size > 0) {
            const Matrix z = rng_.normal_matrix(static_cast<Eigen::Index>(cfg.pool_size), g.dim());
            pool_ = ode::integrate(g.field, z, g.solver, cfg.threads).state;
        }
    }

    Matrix next() {
        if (pool_.size() > 0) return draw_rows(pool_, cfg_.batch_size, rng_);
        const Matrix z = rng_.normal_matrix(cfg_.batch_size, g_.dim());
        return ode::integrate(g_.field, z, g_.solver, cfg_.threads).state;
    }

private:
    const gen::Generator& g_;
    const TrainConfig& cfg_;
    Rng rng_;
    Matrix pool_;
};

ode::SolverSpec forward_solver(const Refiner& r, std::optional<ode::SolverSpec> solver) {
    ode::SolverSpec spec = solver.value_or(r.solver);
    spec.direction = ode::Direction::forward;
    return spec;
}

void expect_kind(const Refiner& r, Kind k) {
    require(r.kind == k, ErrorCode::kind_mismatch,
            "expected a " + to_string(k) + " refiner, got " + to_string(r.kind));
}

// Shared by dfr and noise_inject: they differ only in the pair builder.
using PairFn = std::function<interp::Pair(const Matrix& x0, const Matrix& xhat1, const Vector& t, Rng& noise)>;

TrainResult train_data_space(Kind kind, const gen::Generator& g, const Matrix& dataset, const TrainConfig& cfg,
                             const PairFn& make_pair) {
    require(dataset.rows() >= 1, ErrorCode::invalid_argument, "dataset is empty");
    require(dataset.cols() == g.dim(), ErrorCode::dimension_mismatch, "dataset does not match generator");
    const Matrix data = g.stats.apply(dataset);
    GeneratorFeed feed(g, cfg);
    Rng index_rng = Rng::derive(cfg.seed, {kIndex});
    Rng time_rng = Rng::derive(cfg.seed, {kTime});
    Rng noise_rng = Rng::derive(cfg.seed, {kNoise});

    TrainResult out;
    out.refiner.kind = kind;
    out.refiner.generator_hash = g.hash();
    out.refiner.stats = g.stats;
    out.refiner.solver = default_refiner_solver();
    out.refiner.field = fit_field(g.dim(), cfg, [&](long) {
        const Matrix x0 = draw_rows(data, cfg.batch_size, index_rng);
        const Matrix xhat1 = feed.next();
        const Vector t = time_rng.uniform_vector(cfg.batch_size);
        auto pair = make_pair(x0, xhat1, t, noise_rng);
        return Batch{std::move(pair.xt), t, std::move(pair.target)};
    }, out.curve);
    return out;
}

gen::SampleBatch integrate_in_stats(const Refiner& r, const ode::Field& field, const Matrix& xs,
                                    const ode::SolverSpec& spec, int threads) {
    auto res = ode::integrate(field, xs, spec, threads);
    return {r.stats.revert(res.state), res.nfe};
}

}  // namespace

Kind parse_kind(const std::string& s) {
    if (s == "dfr") return Kind::dfr;
    if (s == "lfr") return Kind::lfr;
    if (s == "noise_inject") return Kind::noise_inject;
    if (s == "fmrefiner") return Kind::fmrefiner;
    throw Error(ErrorCode::invalid_argument, "unknown refiner kind '" + s + "'");
}

std::string to_string(Kind k) {
    switch (k) {
        case Kind::dfr: return "dfr";
        case Kind::lfr: return "lfr";
        case Kind::noise_inject: return "noise_inject";
        case Kind::fmrefiner: return "fmrefiner";
    }
    return "unknown";
}

ode::SolverSpec default_refiner_solver() { return {ode::SolverKind::heun, 5, ode::Direction::forward}; }

TrainResult train_dfr(const gen::Generator& g, const Matrix& dataset, const data::AugSpec& aug,
                      const TrainConfig& cfg, std::optional<data::GridShape> grid) {
    data::validate(aug);
    auto out = train_data_space(Kind::dfr, g, dataset, cfg,
                                [&](const Matrix& x0, const Matrix& xhat1, const Vector& t, Rng& noise) {
                                    return interp::dfr_pair(x0, xhat1, aug, t, noise, grid);
                                });
    out.refiner.aug = aug;
    return out;
}

gen::SampleBatch refine_dfr(const Refiner& r, const gen::SampleBatch& batch, std::optional<ode::SolverSpec> solver,
                            int threads) {
    expect_kind(r, Kind::dfr);
    auto out = integrate_in_stats(r, ode::from_params(r.field), r.stats.apply(batch.x), forward_solver(r, solver),
                                  threads);
    return out;
}

void save_latents(const LatentCache& cache, const std::filesystem::path& path) {
    container::File f;
    container::ByteWriter w;
    w.u64(cache.generator_hash);
    w.u32(static_cast<std::uint32_t>(cache.z.rows()));
    w.u32(static_cast<std::uint32_t>(cache.z.cols()));
    w.f64s(cache.z);
    f.sections.push_back({kLatTag, w.take()});
    container::save(f, path);
}

LatentCache load_latents(const std::filesystem::path& path) {
    const auto f = container::load(path);
    container::ByteReader r(f.require(kLatTag).payload);
    LatentCache c;
    c.generator_hash = r.u64();
    const auto n = r.u32();
    const auto d = r.u32();
    c.z = r.f64s(n, d);
    return c;
}

TrainResult train_lfr(const gen::Generator& g, const Matrix& dataset, const interp::MixSpec& mix,
                      const ode::SolverSpec& inversion, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& cache_path) {
    interp::validate(mix);
    require(dataset.rows() >= 1, ErrorCode::invalid_argument, "dataset is empty");
    require(dataset.cols() == g.dim(), ErrorCode::dimension_mismatch, "dataset does not match generator");
    const std::uint64_t hash = g.hash();

    TrainResult out;
    Matrix latents;
    bool cached = false;
    if (cache_path && std::filesystem::exists(*cache_path)) {
        auto c = load_latents(*cache_path);
        if (c.generator_hash == hash && c.z.cols() == g.dim()) {
            latents = std::move(c.z);
            cached = true;
        }
    }
    out.mean_rec_error = std::numeric_limits<double>::quiet_NaN();
    if (!cached) {
        ode::SolverSpec inv = inversion;
        inv.direction = ode::Direction::backward;
        auto lb = gen::invert_batch(g, dataset, inv, true, cfg.threads);
        latents = std::move(lb.z);
        out.mean_rec_error = lb.mean_rec_error;
        if (cache_path) save_latents({latents, hash}, *cache_path);
    }
    require(latents.allFinite(), ErrorCode::non_finite, "inversion produced non-finite latents");

    const int d = g.dim();
    Rng index_rng = Rng::derive(cfg.seed, {kIndex});
    Rng prior_rng = Rng::derive(cfg.seed, {kPrior});
    Rng time_rng = Rng::derive(cfg.seed, {kTime});
    Rng mix_rng = Rng::derive(cfg.seed, {kMix});
    const auto path = interp::PathSpec::straight();

    Refiner& r = out.refiner;
    r.kind = Kind::lfr;
    r.mix = mix;
    r.generator_hash = hash;
    r.stats = gen::Standardizer::identity(d);
    r.solver = {ode::SolverKind::euler, 1, ode::Direction::forward};
    r.field = fit_field(d, cfg, [&](long) {
        const Matrix z1 = draw_rows(latents, cfg.batch_size, index_rng);
        const Matrix z = prior_rng.normal_matrix(cfg.batch_size, d);
        const Matrix z0 = prior_rng.normal_matrix(cfg.batch_size, d);
        const Matrix z1a = interp::lfr_mix(z1, z0, mix, mix_rng);
        const Vector t = time_rng.uniform_vector(cfg.batch_size);
        auto pair = interp::lfr_pair(z, z1a, t, path);
        return Batch{std::move(pair.xt), t, std::move(pair.target)};
    }, out.curve);

    const Matrix probe = Rng::derive(cfg.seed, {kInference}).normal_matrix(256, d);
    const Matrix refined = ode::integrate(r.field, probe, {ode::SolverKind::euler, 1, ode::Direction::forward}).state;
    double total = 0.0;
    for (Eigen::Index i = 0; i < refined.rows(); ++i)
        total += (latents.rowwise() - refined.row(i)).rowwise().norm().minCoeff();
    out.refinement_error = total / static_cast<double>(refined.rows());
    return out;
}

LfrSample refine_lfr(const Refiner& r, const gen::Generator& g, Eigen::Index n, std::uint64_t seed,
                     std::optional<ode::SolverSpec> solver, bool allow_transfer, int threads) {
    expect_kind(r, Kind::lfr);
    require(r.dim() == g.dim(), ErrorCode::dimension_mismatch, "refiner and generator dimensions differ");
    if (!allow_transfer && r.generator_hash != g.hash())
        throw Error(ErrorCode::hash_mismatch,
                    "refiner was trained against a different generator; set the transfer override to apply it");
    const Matrix z = gen::prior_draws(n, g.dim(), seed);
    auto refined = ode::integrate(r.field, z, forward_solver(r, solver), threads);
    LfrSample out;
    out.refiner_nfe = refined.nfe;
    out.batch = gen::sample_from_latent(g, refined.state, std::nullopt, threads);
    out.base_nfe = out.batch.nfe;
    out.batch.nfe = out.refiner_nfe + out.base_nfe;
    out.refined_latent = std::move(refined.state);
    return out;
}

TrainResult train_noise_inject(const gen::Generator& g, const Matrix& dataset, double sigma_d,
                               const TrainConfig& cfg) {
    require(std::isfinite(sigma_d) && sigma_d >= 0.0, ErrorCode::invalid_argument, "sigma_d must be >= 0");
    auto out = train_data_space(Kind::noise_inject, g, dataset, cfg,
                                [&](const Matrix& x0, const Matrix& xhat1, const Vector& t, Rng& noise) {
                                    return interp::noise_inject_pair(x0, xhat1, sigma_d, t, noise);
                                });
    out.refiner.noise.sigma_d = sigma_d;
    return out;
}

gen::SampleBatch refine_noise_inject(const Refiner& r, const gen::SampleBatch& batch, std::uint64_t seed,
                                     std::optional<ode::SolverSpec> solver, int threads) {
    expect_kind(r, Kind::noise_inject);
    Matrix xs = r.stats.apply(batch.x);
    Rng rng = Rng::derive(seed, {kInference});
    const Matrix eps = rng.normal_matrix(xs.rows(), xs.cols());
    if (r.noise.sigma_d > 0.0) xs += r.noise.sigma_d * eps;
    return integrate_in_stats(r, ode::from_params(r.field), xs, forward_solver(r, solver), threads);
}

TrainResult train_fmrefiner(const Matrix& dataset, double sigma_f, double sigma_z, const TrainConfig& cfg) {
    interp::validate(interp::RefinerNoiseSpec{0.0, sigma_f, sigma_z});
    require(dataset.rows() >= 1, ErrorCode::invalid_argument, "dataset is empty");
    TrainResult out;
    Refiner& r = out.refiner;
    r.kind = Kind::fmrefiner;
    r.noise.sigma_d = 0.0;
    r.noise.sigma_f = sigma_f;
    r.noise.sigma_z = sigma_z;
    r.stats = gen::Standardizer::fit(dataset);
    r.solver = fmrefiner_solver(10);
    const Matrix data = r.stats.apply(dataset);
    Rng index_rng = Rng::derive(cfg.seed, {kIndex});
    Rng time_rng = Rng::derive(cfg.seed, {kTime});
    Rng noise_rng = Rng::derive(cfg.seed, {kNoise});
    r.field = fit_field(static_cast<int>(dataset.cols()), cfg, [&](long) {
        const Matrix x0 = draw_rows(data, cfg.batch_size, index_rng);
        const Vector t = time_rng.uniform_vector(cfg.batch_size);
        auto pair = interp::fmrefiner_pair(x0, sigma_f, sigma_z, t, noise_rng);
        return Batch{std::move(pair.xt), t, std::move(pair.target)};
    }, out.curve);
    return out;
}

ode::SolverSpec fmrefiner_solver(int nfe) {
    require(nfe >= 2, ErrorCode::invalid_argument, "fmrefiner inference needs at least two solver steps");
    return {ode::SolverKind::euler, nfe, ode::Direction::forward};
}

ode::Field fmrefiner_velocity(const net::VectorFieldParams& predictor) {
    return [&predictor](const Matrix& x, double t) -> Matrix {
        const double denom = std::max(1.0 - t, 1e-3);
        return (net::forward(predictor, x, t) - x) / denom;
    };
}

gen::SampleBatch refine_fmrefiner(const Refiner& r, const gen::SampleBatch& batch, std::optional<ode::SolverSpec> solver,
                                  int threads) {
    expect_kind(r, Kind::fmrefiner);
    const auto spec = forward_solver(r, solver);
    require(spec.steps >= 2, ErrorCode::invalid_argument, "fmrefiner inference needs at least two solver steps");
    return integrate_in_stats(r, fmrefiner_velocity(r.field), r.stats.apply(batch.x), spec, threads);
}

gen::SampleBatch refine_generator_samples(const Refiner& r, const gen::Generator& g, Eigen::Index n,
                                          std::uint64_t seed, const ode::SolverSpec& solver, bool allow_transfer,
                                          int threads) {
    if (r.kind == Kind::lfr) return refine_lfr(r, g, n, seed, solver, allow_transfer, threads).batch;
    if (r.kind != Kind::fmrefiner && !allow_transfer && r.generator_hash != g.hash())
        throw Error(ErrorCode::hash_mismatch,
                    "refiner was trained against a different generator; set the transfer override to apply it");
    const auto base = gen::sample(g, n, seed, std::nullopt, threads);
    gen::SampleBatch out;
    switch (r.kind) {
        case Kind::dfr: out = refine_dfr(r, base, solver, threads); break;
        case Kind::noise_inject: out = refine_noise_inject(r, base, seed, solver, threads); break;
        case Kind::fmrefiner: out = refine_fmrefiner(r, base, solver, threads); break;
        case Kind::lfr: break;
    }
    out.nfe += base.nfe;
    return out;
}

container::File to_container(const Refiner& r) {
    container::File f = net::to_container(r.field);
    container::ByteWriter w;
    w.u32(static_cast<std::uint32_t>(r.kind));
    w.u32(static_cast<std::uint32_t>(r.dim()));
    w.f64(r.aug.sigma);
    w.u32(static_cast<std::uint32_t>(r.aug.blur_width));
    w.f64(r.aug.probability);
    w.f64(r.mix.alpha_max);
    w.u32(static_cast<std::uint32_t>(r.mix.mode));
    w.f64(r.noise.sigma_d);
    w.f64(r.noise.sigma_f);
    w.f64(r.noise.sigma_z);
    w.u64(r.generator_hash);
    w.u32(static_cast<std::uint32_t>(r.solver.kind));
    w.u32(static_cast<std::uint32_t>(r.solver.steps));
    gen::write_stats(w, r.stats);
    f.sections.push_back({kRefTag, w.take()});
    return f;
}

Refiner from_container(const container::File& f) {
    Refiner r;
    r.field = net::from_container(f);
    container::ByteReader in(f.require(kRefTag).payload);
    const auto kind = in.u32();
    require(kind <= 3, ErrorCode::unsupported, "unknown refiner kind tag");
    r.kind = static_cast<Kind>(kind);
    const auto d = static_cast<int>(in.u32());
    require(d == r.field.data_dim, ErrorCode::dimension_mismatch, "refiner header dimension mismatch");
    r.aug.sigma = in.f64();
    r.aug.blur_width = static_cast<int>(in.u32());
    r.aug.probability = in.f64();
    r.mix.alpha_max = in.f64();
    const auto mode = in.u32();
    require(mode <= 1, ErrorCode::unsupported, "unknown mixing mode tag");
    r.mix.mode = static_cast<interp::MixMode>(mode);
    r.noise.sigma_d = in.f64();
    r.noise.sigma_f = in.f64();
    r.noise.sigma_z = in.f64();
    r.generator_hash = in.u64();
    const auto skind = in.u32();
    require(skind <= 2, ErrorCode::unsupported, "unknown solver kind tag");
    r.solver.kind = static_cast<ode::SolverKind>(skind);
    r.solver.steps = static_cast<int>(in.u32());
    r.solver.direction = ode::Direction::forward;
    ode::validate(r.solver);
    r.stats = gen::read_stats(in, d);
    return r;
}

void save(const Refiner& r, const std::filesystem::path& path) { container::save(to_container(r), path); }

Refiner load(const std::filesystem::path& path) { return from_container(container::load(path)); }

metrics::MetricsReport transfer_eval(const Refiner& r, const gen::Generator& g, const Matrix& reference,
                                     const data::DatasetSpec& dataset, const metrics::MetricSpec& spec,
                                     const TransferOptions& opts) {
    require(r.kind == Kind::dfr || r.kind == Kind::lfr, ErrorCode::kind_mismatch,
            "transfer evaluation applies to dfr or lfr refiners, got " + to_string(r.kind));
    require(r.dim() == g.dim(), ErrorCode::dimension_mismatch, "refiner and generator dimensions differ");
    if (!opts.allow_transfer && r.generator_hash != g.hash())
        throw Error(ErrorCode::hash_mismatch, "transfer to a different generator requires the override flag");

    metrics::MetricsReport rep;
    rep.dataset = data::to_string(dataset.name);
    const std::uint64_t hash = g.hash();
    for (std::uint64_t seed : opts.seeds) {
        metrics::MetricSpec ms = spec;
        ms.seed = spec.seed + seed;
        const auto base = gen::sample(g, opts.n_samples, seed, std::nullopt, opts.threads);
        for (auto& row : metrics::evaluate(reference, base.x, dataset, ms, {seed, 0, hash, "none"}))
            rep.rows.push_back(std::move(row));
        rep.rows.push_back({"total_nfe", static_cast<double>(base.nfe), static_cast<long>(opts.n_samples), seed, 0, 0,
                            hash, "none"});
        for (int nfe : opts.nfes) {
            const auto solver = ode::solver_for_nfe(nfe);
            gen::SampleBatch refined;
            if (r.kind == Kind::dfr) {
                refined = refine_dfr(r, base, solver, opts.threads);
                refined.nfe += base.nfe;
            } else {
                refined = refine_lfr(r, g, opts.n_samples, seed, solver, true, opts.threads).batch;
            }
            const std::string tag = to_string(r.kind);
            for (auto& row : metrics::evaluate(reference, refined.x, dataset, ms, {seed, nfe, hash, tag}))
                rep.rows.push_back(std::move(row));
            rep.rows.push_back({"total_nfe", static_cast<double>(refined.nfe), static_cast<long>(opts.n_samples), seed,
                                nfe, 0, hash, tag});
        }
    }
    return rep;
}

}  // namespace bfr::refine
