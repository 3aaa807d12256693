#include "bfr/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "bfr/container.hpp"
#include "bfr/error.hpp"

namespace bfr::harness {

namespace {

constexpr container::Tag kSmpTag = container::make_tag("SMP1");

// ---------------------------------------------------------------- config

class Schema {
public:
    explicit Schema(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void fail(const YAML::Node& at, const std::string& path, const std::string& msg) const {
        std::string where = source_;
        if (at.IsDefined() && at.Mark().line >= 0) where += ":" + std::to_string(at.Mark().line + 1);
        throw Error(ErrorCode::config, where + ": " + path + ": " + msg);
    }

    void keys(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) const {
        if (!node.IsMap()) fail(node, path, "expected a mapping");
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            if (!allowed.count(key)) fail(kv.first, join(path, key), "unknown key");
        }
    }

    YAML::Node section(const YAML::Node& parent, const std::string& path, const std::string& key) const {
        YAML::Node n = parent[key];
        if (n && !n.IsMap()) fail(n, join(path, key), "expected a mapping");
        return n;
    }

    template <class T>
    std::optional<T> get(const YAML::Node& parent, const std::string& path, const std::string& key) const {
        if (!parent) return std::nullopt;
        const YAML::Node n = parent[key];
        if (!n) return std::nullopt;
        if (n.IsNull()) fail(n, join(path, key), "value is empty");
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            fail(n, join(path, key), std::string("expected ") + type_name<T>());
        }
    }

    template <class T>
    void set(T& dst, const YAML::Node& parent, const std::string& path, const std::string& key) const {
        if (auto v = get<T>(parent, path, key)) dst = *v;
    }

    template <class T>
    void positive(T& dst, const YAML::Node& parent, const std::string& path, const std::string& key) const {
        if (auto v = get<T>(parent, path, key)) {
            if (!(*v > T{0})) fail(parent[key], join(path, key), "must be positive");
            dst = *v;
        }
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

private:
    template <class T>
    static const char* type_name() {
        if constexpr (std::is_same_v<T, std::string>) return "a string";
        else if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else return "a list";
    }

    std::string source_;
};

// Runs a module validator and reports its failure against a config node.
template <class F>
void checked(const Schema& s, const YAML::Node& at, const std::string& path, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        s.fail(at, path, e.what());
    }
}

ode::SolverSpec parse_solver(const Schema& s, const YAML::Node& n, const std::string& path, ode::SolverSpec dflt) {
    s.keys(n, path, {"kind", "steps"});
    if (auto k = s.get<std::string>(n, path, "kind"))
        checked(s, n["kind"], path + ".kind", [&] { dflt.kind = ode::parse_solver_kind(*k); });
    s.positive(dflt.steps, n, path, "steps");
    return dflt;
}

void apply_override(YAML::Node root, const std::string& item) {
    const auto eq = item.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::config, "override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    YAML::Node value;
    try {
        value = YAML::Load(item.substr(eq + 1));
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::config, "override '" + item + "': " + e.what());
    }
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    // yaml-cpp nodes are handles; walk with fresh handles per level.
    std::vector<YAML::Node> chain{root};
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        YAML::Node next = chain.back()[parts[i]];
        if (!next.IsMap()) {
            chain.back()[parts[i]] = YAML::Node(YAML::NodeType::Map);
            next = chain.back()[parts[i]];
        }
        chain.push_back(next);
    }
    chain.back()[parts.back()] = value;
}

// ---------------------------------------------------------------- io

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    container::write_bytes(path, text);
}

void log_line(const ExperimentConfig& cfg, const std::string& command, const std::string& msg) {
    std::ofstream log(cfg.out("run.log"), std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << command << ' ' << msg << '\n';
}

void prepare(const ExperimentConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    require(!ec, ErrorCode::io_failure, "cannot create output directory " + cfg.output_dir.string());
}

std::string loss_csv(const std::vector<gen::LossPoint>& curve) {
    std::string s = "step,loss\n";
    for (const auto& p : curve) s += std::to_string(p.step) + "," + fmt_double(p.loss) + "\n";
    return s;
}

std::string dump_name(const std::string& stem, std::uint64_t seed, DumpFormat f) {
    return stem + "_seed" + std::to_string(seed) + (f == DumpFormat::csv ? ".csv" : ".bfr");
}

gen::Generator load_generator(const ExperimentConfig& cfg, const std::string& name) {
    return gen::load(cfg.out(name));
}

std::optional<data::GridShape> grid_of(const ExperimentConfig& cfg) {
    if (cfg.dataset.name == data::DatasetName::grid_images) return cfg.dataset.grid;
    return std::nullopt;
}

refine::Refiner train_refiner(const ExperimentConfig& cfg, const gen::Generator& g, const Matrix& data,
                              std::vector<gen::LossPoint>* curve) {
    const auto& rc = cfg.refiner;
    refine::TrainResult res;
    switch (rc.kind) {
        case refine::Kind::dfr: res = refine::train_dfr(g, data, rc.aug, rc.train, grid_of(cfg)); break;
        case refine::Kind::lfr:
            res = refine::train_lfr(g, data, rc.mix, rc.inversion, rc.train, cfg.out(rc.latent_cache));
            log_line(cfg, "train-refiner",
                     "lfr refinement_error=" + fmt_double(res.refinement_error) +
                         " mean_rec_error=" + fmt_double(res.mean_rec_error));
            break;
        case refine::Kind::noise_inject: res = refine::train_noise_inject(g, data, rc.noise.sigma_d, rc.train); break;
        case refine::Kind::fmrefiner:
            res = refine::train_fmrefiner(data, rc.noise.sigma_f, rc.noise.sigma_z, rc.train);
            break;
    }
    if (rc.solver) res.refiner.solver = *rc.solver;
    if (curve) *curve = std::move(res.curve);
    return std::move(res.refiner);
}

std::vector<metrics::MetricRow> eval_rows(const ExperimentConfig& cfg, const Matrix& ref, const Matrix& x,
                                          const metrics::Provenance& prov) {
    return metrics::evaluate(ref, x, cfg.dataset, metric_spec(cfg), prov);
}

// Base row plus one row per refiner configuration.
struct SeedRun {
    std::vector<std::vector<metrics::MetricRow>> rows;
    int refiner_nfe = 0;
    int total_nfe = 0;
};

SeedRun run_refiner(const ExperimentConfig& cfg, const gen::Generator& g, const refine::Refiner& r,
                    const Matrix& ref, const ode::SolverSpec& solver, bool allow_transfer) {
    SeedRun run;
    const std::uint64_t hash = g.hash();
    for (std::uint64_t seed : cfg.seeds) {
        const auto out = refine::refine_generator_samples(r, g, cfg.sample.n, seed, solver, allow_transfer, cfg.threads);
        run.refiner_nfe = solver.nfe();
        run.total_nfe = out.nfe;
        run.rows.push_back(eval_rows(cfg, ref, out.x, {seed, out.nfe, hash, refine::to_string(r.kind)}));
    }
    return run;
}

TableRow base_row(const ExperimentConfig& cfg, const gen::Generator& g, const Matrix& ref) {
    std::vector<std::vector<metrics::MetricRow>> per_seed;
    const std::uint64_t hash = g.hash();
    int nfe = 0;
    for (std::uint64_t seed : cfg.seeds) {
        const auto b = gen::sample(g, cfg.sample.n, seed, std::nullopt, cfg.threads);
        nfe = b.nfe;
        per_seed.push_back(eval_rows(cfg, ref, b.x, {seed, b.nfe, hash, "none"}));
    }
    auto row = summarize("Base", per_seed, cfg.seeds);
    row.total_nfe = nfe;
    row.generator_hash = hash;
    return row;
}

TableRow refined_row(const std::string& label, const SeedRun& run, const std::vector<std::uint64_t>& seeds,
                     const std::string& kind, std::uint64_t hash) {
    auto row = summarize(label, run.rows, seeds);
    row.nfe = run.refiner_nfe;
    row.total_nfe = run.total_nfe;
    row.refiner = kind;
    row.generator_hash = hash;
    return row;
}

std::vector<std::string> metric_order(const Table& t) {
    std::vector<std::string> names;
    for (const char* n : {"energy_distance", "sliced_w2", "cov_r", "cov_p", "amr_r", "amr_p", "energy_error_pct"})
        for (const auto& row : t.rows)
            if (row.metrics.count(n)) {
                names.emplace_back(n);
                break;
            }
    for (const auto& row : t.rows)
        for (const auto& kv : row.metrics)
            if (std::find(names.begin(), names.end(), kv.first) == names.end()) names.push_back(kv.first);
    return names;
}

std::string format_value(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------- config

ExperimentConfig parse_config(const std::string& text, const std::string& source,
                              const std::vector<std::string>& overrides) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw Error(ErrorCode::config, source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    for (const auto& o : overrides) apply_override(root, o);

    const Schema s(source);
    s.keys(root, "", {"dataset", "base", "refiner", "metrics", "seeds", "output_dir", "threads", "sample", "ablate",
                      "transfer"});
    ExperimentConfig cfg;

    // dataset
    const YAML::Node ds = s.section(root, "", "dataset");
    if (!ds) s.fail(root, "dataset", "required section is missing");
    s.keys(ds, "dataset", {"name", "n", "seed", "radius", "sigma_mode", "center", "grid", "idx_path"});
    const auto name = s.get<std::string>(ds, "dataset", "name");
    if (!name) s.fail(ds, "dataset.name", "required field is missing");
    checked(s, ds["name"], "dataset.name", [&] { cfg.dataset = data::default_spec(data::parse_dataset_name(*name)); });
    s.positive(cfg.dataset.n, ds, "dataset", "n");
    s.set(cfg.dataset.seed, ds, "dataset", "seed");
    s.positive(cfg.dataset.radius, ds, "dataset", "radius");
    if (auto v = s.get<double>(ds, "dataset", "sigma_mode")) {
        if (!(*v >= 0.0)) s.fail(ds["sigma_mode"], "dataset.sigma_mode", "must be >= 0");
        cfg.dataset.sigma_mode = *v;
    }
    if (auto c = s.get<std::vector<double>>(ds, "dataset", "center")) {
        if (c->size() != 2) s.fail(ds["center"], "dataset.center", "expected two coordinates");
        cfg.dataset.center = Eigen::Vector2d((*c)[0], (*c)[1]);
    }
    if (auto gsz = s.get<std::vector<int>>(ds, "dataset", "grid")) {
        if (gsz->size() != 2 || (*gsz)[0] < 1 || (*gsz)[1] < 1)
            s.fail(ds["grid"], "dataset.grid", "expected [height, width] with positive entries");
        cfg.dataset.grid = {(*gsz)[0], (*gsz)[1]};
    }
    if (auto p = s.get<std::string>(ds, "dataset", "idx_path")) {
        if (cfg.dataset.name != data::DatasetName::grid_images)
            s.fail(ds["idx_path"], "dataset.idx_path", "only valid for grid_images");
        cfg.idx_path = *p;
    }

    // seeds and run-level keys
    if (auto seeds = s.get<std::vector<std::uint64_t>>(root, "", "seeds")) {
        if (seeds->empty()) s.fail(root["seeds"], "seeds", "must list at least one seed");
        cfg.seeds = *seeds;
    }
    if (auto o = s.get<std::string>(root, "", "output_dir")) cfg.output_dir = *o;
    s.positive(cfg.threads, root, "", "threads");

    // base
    cfg.base.train.seed = cfg.seeds.front();
    if (const YAML::Node b = s.section(root, "", "base")) {
        s.keys(b, "base", {"steps", "batch_size", "lr", "seed", "hidden", "freq_count", "eval_every", "path", "solver",
                           "checkpoint"});
        auto& t = cfg.base.train;
        s.positive(t.steps, b, "base", "steps");
        s.positive(t.batch_size, b, "base", "batch_size");
        s.positive(t.lr, b, "base", "lr");
        s.set(t.seed, b, "base", "seed");
        s.set(t.hidden, b, "base", "hidden");
        s.positive(t.freq_count, b, "base", "freq_count");
        s.positive(t.eval_every, b, "base", "eval_every");
        s.set(cfg.base.path, b, "base", "path");
        if (cfg.base.path == "straight") t.path = interp::PathSpec::straight();
        else if (cfg.base.path == "trigonometric") t.path = interp::PathSpec::trigonometric();
        else s.fail(b["path"], "base.path", "expected straight or trigonometric");
        if (const YAML::Node sv = s.section(b, "base", "solver"))
            cfg.base.solver = parse_solver(s, sv, "base.solver", cfg.base.solver);
        s.set(cfg.base.checkpoint, b, "base", "checkpoint");
        for (int h : t.hidden)
            if (h < 1) s.fail(b["hidden"], "base.hidden", "layer widths must be positive");
    }

    // refiner
    if (cfg.dataset.name == data::DatasetName::point_mass) cfg.refiner.mix.alpha_max = 0.1;
    cfg.refiner.train.seed = cfg.seeds.front();
    cfg.refiner.train.threads = cfg.threads;
    if (const YAML::Node r = s.section(root, "", "refiner")) {
        s.keys(r, "refiner", {"kind", "steps", "batch_size", "lr", "seed", "hidden", "freq_count", "eval_every",
                              "pool_size", "aug", "mix", "noise", "solver", "inversion", "checkpoint", "latent_cache",
                              "allow_transfer"});
        auto& rc = cfg.refiner;
        if (auto k = s.get<std::string>(r, "refiner", "kind"))
            checked(s, r["kind"], "refiner.kind", [&] { rc.kind = refine::parse_kind(*k); });
        s.positive(rc.train.steps, r, "refiner", "steps");
        s.positive(rc.train.batch_size, r, "refiner", "batch_size");
        s.positive(rc.train.lr, r, "refiner", "lr");
        s.set(rc.train.seed, r, "refiner", "seed");
        s.set(rc.train.hidden, r, "refiner", "hidden");
        s.positive(rc.train.freq_count, r, "refiner", "freq_count");
        s.positive(rc.train.eval_every, r, "refiner", "eval_every");
        s.set(rc.train.pool_size, r, "refiner", "pool_size");
        for (int h : rc.train.hidden)
            if (h < 1) s.fail(r["hidden"], "refiner.hidden", "layer widths must be positive");
        if (const YAML::Node a = s.section(r, "refiner", "aug")) {
            s.keys(a, "refiner.aug", {"sigma", "blur_width", "probability"});
            s.set(rc.aug.sigma, a, "refiner.aug", "sigma");
            s.set(rc.aug.blur_width, a, "refiner.aug", "blur_width");
            s.set(rc.aug.probability, a, "refiner.aug", "probability");
            checked(s, a, "refiner.aug", [&] { data::validate(rc.aug); });
            if (rc.aug.blur_width != 1 && cfg.dataset.name != data::DatasetName::grid_images)
                s.fail(a["blur_width"], "refiner.aug.blur_width", "blur needs grid_images data");
        }
        if (const YAML::Node m = s.section(r, "refiner", "mix")) {
            s.keys(m, "refiner.mix", {"alpha_max", "mode"});
            s.set(rc.mix.alpha_max, m, "refiner.mix", "alpha_max");
            if (auto mode = s.get<std::string>(m, "refiner.mix", "mode")) {
                if (*mode == "fixed") rc.mix.mode = interp::MixMode::fixed;
                else if (*mode == "uniform_per_element") rc.mix.mode = interp::MixMode::uniform_per_element;
                else s.fail(m["mode"], "refiner.mix.mode", "expected fixed or uniform_per_element");
            }
            checked(s, m, "refiner.mix", [&] { interp::validate(rc.mix); });
        }
        if (const YAML::Node nz = s.section(r, "refiner", "noise")) {
            s.keys(nz, "refiner.noise", {"sigma_d", "sigma_f", "sigma_z"});
            s.set(rc.noise.sigma_d, nz, "refiner.noise", "sigma_d");
            s.set(rc.noise.sigma_f, nz, "refiner.noise", "sigma_f");
            s.set(rc.noise.sigma_z, nz, "refiner.noise", "sigma_z");
            checked(s, nz, "refiner.noise", [&] { interp::validate(rc.noise); });
        }
        if (const YAML::Node sv = s.section(r, "refiner", "solver"))
            rc.solver = parse_solver(s, sv, "refiner.solver", refine::default_refiner_solver());
        if (const YAML::Node iv = s.section(r, "refiner", "inversion")) {
            rc.inversion = parse_solver(s, iv, "refiner.inversion", rc.inversion);
            rc.inversion.direction = ode::Direction::backward;
        }
        s.set(rc.checkpoint, r, "refiner", "checkpoint");
        s.set(rc.latent_cache, r, "refiner", "latent_cache");
        s.set(rc.allow_transfer, r, "refiner", "allow_transfer");
        if (rc.kind == refine::Kind::fmrefiner && rc.solver && rc.solver->steps < 2)
            s.fail(r["solver"], "refiner.solver.steps", "fmrefiner needs at least two steps");
    }

    // metrics
    if (const YAML::Node m = s.section(root, "", "metrics")) {
        s.keys(m, "metrics", {"tau", "n_projections", "e_max", "seed"});
        if (auto tau = s.get<double>(m, "metrics", "tau")) {
            cfg.metrics.tau = *tau;
            cfg.tau_given = true;
        }
        s.set(cfg.metrics.n_projections, m, "metrics", "n_projections");
        if (auto e = s.get<double>(m, "metrics", "e_max")) cfg.metrics.e_max = *e;
        s.set(cfg.metrics.seed, m, "metrics", "seed");
        checked(s, m, "metrics", [&] { metrics::validate(cfg.metrics); });
    }

    // sample
    if (const YAML::Node sm = s.section(root, "", "sample")) {
        s.keys(sm, "sample", {"n", "format", "reference_n", "reference_seed_offset"});
        s.positive(cfg.sample.n, sm, "sample", "n");
        s.positive(cfg.sample.reference_n, sm, "sample", "reference_n");
        s.set(cfg.sample.reference_seed_offset, sm, "sample", "reference_seed_offset");
        if (auto f = s.get<std::string>(sm, "sample", "format")) {
            if (*f == "csv") cfg.sample.format = DumpFormat::csv;
            else if (*f == "binary") cfg.sample.format = DumpFormat::binary;
            else s.fail(sm["format"], "sample.format", "expected csv or binary");
        }
    }

    // ablate
    if (const YAML::Node ab = s.section(root, "", "ablate")) {
        s.keys(ab, "ablate", {"grid", "values"});
        s.set(cfg.ablate.grid, ab, "ablate", "grid");
        s.set(cfg.ablate.values, ab, "ablate", "values");
        static const std::set<std::string> grids{"sigma_d", "sigma_f", "alpha", "nfe"};
        if (!cfg.ablate.grid.empty() && !grids.count(cfg.ablate.grid))
            s.fail(ab["grid"], "ablate.grid", "expected one of sigma_d, sigma_f, alpha, nfe");
        for (double v : cfg.ablate.values) {
            if (!std::isfinite(v) || v < 0.0) s.fail(ab["values"], "ablate.values", "values must be finite and >= 0");
            if (cfg.ablate.grid == "nfe" && (v < 1.0 || v != std::floor(v)))
                s.fail(ab["values"], "ablate.values", "nfe values must be positive integers");
        }
    }

    // transfer
    if (const YAML::Node tr = s.section(root, "", "transfer")) {
        s.keys(tr, "transfer", {"degraded", "dfr", "lfr", "nfes"});
        s.set(cfg.transfer.degraded, tr, "transfer", "degraded");
        s.set(cfg.transfer.dfr, tr, "transfer", "dfr");
        s.set(cfg.transfer.lfr, tr, "transfer", "lfr");
        s.set(cfg.transfer.nfes, tr, "transfer", "nfes");
        for (int v : cfg.transfer.nfes)
            if (v < 1) s.fail(tr["nfes"], "transfer.nfes", "values must be positive");
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config, "cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string(), overrides);
}

void apply_environment(ExperimentConfig& cfg) {
    if (const char* dir = std::getenv("BFR_OUTPUT_DIR"); dir && *dir) cfg.output_dir = dir;
    if (const char* th = std::getenv("BFR_THREADS"); th && *th) {
        char* end = nullptr;
        const long v = std::strtol(th, &end, 10);
        require(end && *end == '\0' && v >= 1 && v <= 1024, ErrorCode::config,
                "BFR_THREADS must be a positive integer");
        cfg.threads = static_cast<int>(v);
        cfg.refiner.train.threads = cfg.threads;
    }
}

int exit_code(const Error& e) {
    switch (e.code()) {
        case ErrorCode::config:
        case ErrorCode::invalid_argument: return 2;
        case ErrorCode::missing_artifact:
        case ErrorCode::io_failure:
        case ErrorCode::bad_magic:
        case ErrorCode::version_mismatch:
        case ErrorCode::truncated_payload:
        case ErrorCode::missing_section:
        case ErrorCode::wrong_magic:
        case ErrorCode::dimension_overflow:
        case ErrorCode::hash_mismatch:
        case ErrorCode::kind_mismatch: return 3;
        case ErrorCode::non_finite:
        case ErrorCode::divergence: return 4;
        default: return 1;
    }
}

// ---------------------------------------------------------------- samples

std::string samples_csv(const Matrix& x) {
    std::string s;
    for (Eigen::Index j = 0; j < x.cols(); ++j) s += (j ? ",dim" : "dim") + std::to_string(j);
    s += '\n';
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (j) s += ',';
            s += fmt_double(x(i, j));
        }
        s += '\n';
    }
    return s;
}

Matrix parse_samples_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::truncated_payload, "sample dump has no header");
    Eigen::Index d = 0;
    {
        std::stringstream hs(line);
        for (std::string col; std::getline(hs, col, ',');) {
            require(col == "dim" + std::to_string(d), ErrorCode::bad_magic, "unexpected sample dump header '" + line + "'");
            ++d;
        }
    }
    require(d >= 1, ErrorCode::bad_magic, "sample dump header is empty");
    std::vector<double> vals;
    Eigen::Index rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        Eigen::Index count = 0;
        for (std::string cell; std::getline(ls, cell, ',');) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            require(end != cell.c_str() && *end == '\0', ErrorCode::truncated_payload,
                    "malformed value '" + cell + "' in sample dump row " + std::to_string(rows + 1));
            vals.push_back(v);
            ++count;
        }
        require(count == d, ErrorCode::truncated_payload,
                "sample dump row " + std::to_string(rows + 1) + " has " + std::to_string(count) + " values");
        ++rows;
    }
    Matrix x(rows, d);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = vals[static_cast<std::size_t>(i * d + j)];
    return x;
}

void write_samples(const std::filesystem::path& path, const Matrix& x, DumpFormat format) {
    if (format == DumpFormat::csv) {
        write_text(path, samples_csv(x));
        return;
    }
    container::ByteWriter w;
    w.u64(static_cast<std::uint64_t>(x.rows()));
    w.u32(static_cast<std::uint32_t>(x.cols()));
    w.f64s(x);
    container::File f;
    f.sections.push_back({kSmpTag, w.take()});
    container::save(f, path);
}

Matrix read_samples(const std::filesystem::path& path) {
    const std::string bytes = container::read_bytes(path);
    if (bytes.size() >= 4 && std::equal(container::kMagic.begin(), container::kMagic.end(), bytes.begin())) {
        const auto f = container::decode(bytes);
        container::ByteReader r(f.require(kSmpTag).payload);
        const auto n = r.u64();
        const auto d = r.u32();
        require(d >= 1 && n <= r.remaining() / 8 / d, ErrorCode::truncated_payload, "sample section is truncated");
        return r.f64s(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    }
    return parse_samples_csv(bytes);
}

// ---------------------------------------------------------------- tables

TableRow summarize(const std::string& label, const std::vector<std::vector<metrics::MetricRow>>& per_seed,
                   const std::vector<std::uint64_t>& seeds) {
    require(!per_seed.empty(), ErrorCode::invalid_argument, "nothing to summarize");
    TableRow row;
    row.label = label;
    row.seeds = seeds;
    std::map<std::string, int> counts;
    for (const auto& rows : per_seed) {
        for (const auto& m : rows) {
            row.metrics[m.name] += m.value;
            ++counts[m.name];
        }
    }
    for (auto& kv : row.metrics) kv.second /= counts[kv.first];
    if (!per_seed.front().empty()) {
        row.refiner = per_seed.front().front().refiner;
        row.generator_hash = per_seed.front().front().generator_hash;
    }
    return row;
}

std::string Table::to_csv() const {
    std::vector<std::string> names = metric_names.empty() ? metric_order(*this) : metric_names;
    std::string s = "# dataset: " + dataset + "\n";
    s += "# grid: " + (grid.empty() ? std::string("none") : grid) + "\n";
    s += "label,grid_value,nfe,total_nfe,refiner,generator_hash,seeds";
    for (const auto& n : names) s += "," + n;
    s += '\n';
    for (const auto& r : rows) {
        s += r.label + "," + (r.grid_value ? fmt_double(*r.grid_value) : std::string()) + "," + std::to_string(r.nfe) +
             "," + std::to_string(r.total_nfe) + "," + r.refiner + "," + hex64(r.generator_hash) + ",";
        for (std::size_t i = 0; i < r.seeds.size(); ++i) s += (i ? ";" : "") + std::to_string(r.seeds[i]);
        for (const auto& n : names) {
            auto it = r.metrics.find(n);
            s += "," + (it == r.metrics.end() ? std::string() : fmt_double(it->second));
        }
        s += '\n';
    }
    return s;
}

Table Table::from_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> header;
    auto split = [](const std::string& l, char sep) {
        std::vector<std::string> out;
        std::string cell;
        std::stringstream ss(l);
        while (std::getline(ss, cell, sep)) out.push_back(cell);
        if (!l.empty() && l.back() == sep) out.emplace_back();
        return out;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# dataset: ", 0) == 0) {
            t.dataset = line.substr(11);
            continue;
        }
        if (line.rfind("# grid: ", 0) == 0) {
            t.grid = line.substr(8);
            if (t.grid == "none") t.grid.clear();
            continue;
        }
        if (line[0] == '#') continue;
        auto cells = split(line, ',');
        if (header.empty()) {
            header = cells;
            require(header.size() >= 7 && header[0] == "label", ErrorCode::bad_magic, "unexpected table header");
            t.metric_names.assign(header.begin() + 7, header.end());
            continue;
        }
        require(cells.size() == header.size(), ErrorCode::truncated_payload, "table row has the wrong width");
        TableRow r;
        r.label = cells[0];
        if (!cells[1].empty()) r.grid_value = std::stod(cells[1]);
        r.nfe = std::stoi(cells[2]);
        r.total_nfe = std::stoi(cells[3]);
        r.refiner = cells[4];
        r.generator_hash = std::stoull(cells[5], nullptr, 16);
        for (const auto& sd : split(cells[6], ';'))
            if (!sd.empty()) r.seeds.push_back(std::stoull(sd));
        for (std::size_t i = 7; i < cells.size(); ++i)
            if (!cells[i].empty()) r.metrics[header[i]] = std::stod(cells[i]);
        t.rows.push_back(std::move(r));
    }
    return t;
}

// ---------------------------------------------------------------- data

Matrix training_set(const ExperimentConfig& cfg) {
    if (cfg.idx_path) {
        auto idx = data::load_idx(*cfg.idx_path);
        require(idx.shape.height == cfg.dataset.grid.height && idx.shape.width == cfg.dataset.grid.width,
                ErrorCode::config, "IDX image shape does not match dataset.grid");
        const Eigen::Index keep = idx.images.rows() - cfg.sample.reference_n;
        require(keep >= 1, ErrorCode::config, "IDX file has no images left after the reference split");
        return idx.images.topRows(keep);
    }
    return data::make_dataset(cfg.dataset);
}

Matrix reference_set(const ExperimentConfig& cfg) {
    if (cfg.idx_path) {
        auto idx = data::load_idx(*cfg.idx_path);
        require(idx.images.rows() > cfg.sample.reference_n, ErrorCode::config,
                "IDX file smaller than the reference split");
        return idx.images.bottomRows(cfg.sample.reference_n);
    }
    auto spec = cfg.dataset;
    spec.seed += cfg.sample.reference_seed_offset;
    spec.n = static_cast<std::size_t>(cfg.sample.reference_n);
    return data::make_dataset(spec);
}

metrics::MetricSpec metric_spec(const ExperimentConfig& cfg) {
    metrics::MetricSpec m = cfg.metrics;
    if (!cfg.tau_given) m.tau = metrics::default_tau(cfg.dataset);
    return m;
}

// ---------------------------------------------------------------- commands

Paths cmd_train_base(const ExperimentConfig& cfg) {
    prepare(cfg);
    const Matrix data = training_set(cfg);
    log_line(cfg, "train-base", "start steps=" + std::to_string(cfg.base.train.steps));
    auto res = gen::train_base(data, cfg.base.train, cfg.base.solver);
    Paths p;
    p.files.push_back(cfg.out(cfg.base.checkpoint));
    gen::save(res.generator, p.files.back());
    p.files.push_back(cfg.out("base_loss.csv"));
    write_text(p.files.back(), loss_csv(res.curve));
    log_line(cfg, "train-base", "done hash=" + hex64(res.generator.hash()));
    return p;
}

Paths cmd_train_refiner(const ExperimentConfig& cfg) {
    prepare(cfg);
    const auto g = load_generator(cfg, cfg.base.checkpoint);
    const Matrix data = training_set(cfg);
    log_line(cfg, "train-refiner", "start kind=" + refine::to_string(cfg.refiner.kind));
    std::vector<gen::LossPoint> curve;
    const auto r = train_refiner(cfg, g, data, &curve);
    Paths p;
    p.files.push_back(cfg.out(cfg.refiner.checkpoint));
    refine::save(r, p.files.back());
    p.files.push_back(cfg.out("refiner_loss.csv"));
    write_text(p.files.back(), loss_csv(curve));
    log_line(cfg, "train-refiner", "done");
    return p;
}

Paths cmd_sample(const ExperimentConfig& cfg) {
    prepare(cfg);
    const auto g = load_generator(cfg, cfg.base.checkpoint);
    Paths p;
    for (std::uint64_t seed : cfg.seeds) {
        const auto b = gen::sample(g, cfg.sample.n, seed, std::nullopt, cfg.threads);
        p.files.push_back(cfg.out(dump_name("samples_base", seed, cfg.sample.format)));
        write_samples(p.files.back(), b.x, cfg.sample.format);
    }
    log_line(cfg, "sample", "wrote " + std::to_string(p.files.size()) + " dumps");
    return p;
}

Paths cmd_refine(const ExperimentConfig& cfg) {
    prepare(cfg);
    const auto g = load_generator(cfg, cfg.base.checkpoint);
    const auto r = refine::load(cfg.out(cfg.refiner.checkpoint));
    const auto solver = cfg.refiner.solver.value_or(r.solver);
    Paths p;
    for (std::uint64_t seed : cfg.seeds) {
        const auto b =
            refine::refine_generator_samples(r, g, cfg.sample.n, seed, solver, cfg.refiner.allow_transfer, cfg.threads);
        p.files.push_back(cfg.out(dump_name("samples_refined", seed, cfg.sample.format)));
        write_samples(p.files.back(), b.x, cfg.sample.format);
    }
    log_line(cfg, "refine", "wrote " + std::to_string(p.files.size()) + " dumps");
    return p;
}

Paths cmd_invert(const ExperimentConfig& cfg) {
    prepare(cfg);
    const auto g = load_generator(cfg, cfg.base.checkpoint);
    const Matrix ref = reference_set(cfg);
    const auto lb = gen::invert_batch(g, ref, cfg.refiner.inversion, true, cfg.threads);
    const auto gs = metrics::latent_gaussianity(lb.z);
    Paths p;
    p.files.push_back(cfg.out(cfg.sample.format == DumpFormat::csv ? "latents.csv" : "latents_dump.bfr"));
    write_samples(p.files.back(), lb.z, cfg.sample.format);
    std::string s = "dim,mean,variance\n";
    for (Eigen::Index j = 0; j < gs.mean.size(); ++j)
        s += std::to_string(j) + "," + fmt_double(gs.mean(j)) + "," + fmt_double(gs.variance(j)) + "\n";
    p.files.push_back(cfg.out("latent_gaussianity.csv"));
    write_text(p.files.back(), s);
    log_line(cfg, "invert", "mean_rec_error=" + fmt_double(lb.mean_rec_error) + " nfe=" + std::to_string(lb.nfe));
    return p;
}

metrics::MetricsReport evaluate_samples(const ExperimentConfig& cfg, const gen::Generator& g,
                                        const std::optional<refine::Refiner>& r) {
    const Matrix ref = reference_set(cfg);
    metrics::MetricsReport rep;
    rep.dataset = data::to_string(cfg.dataset.name);
    const std::uint64_t hash = g.hash();
    for (std::uint64_t seed : cfg.seeds) {
        const auto b = gen::sample(g, cfg.sample.n, seed, std::nullopt, cfg.threads);
        for (auto& row : eval_rows(cfg, ref, b.x, {seed, b.nfe, hash, "none"})) rep.rows.push_back(std::move(row));
    }
    if (r) {
        const auto solver = cfg.refiner.solver.value_or(r->solver);
        for (std::uint64_t seed : cfg.seeds) {
            const auto b = refine::refine_generator_samples(*r, g, cfg.sample.n, seed, solver,
                                                            cfg.refiner.allow_transfer, cfg.threads);
            for (auto& row : eval_rows(cfg, ref, b.x, {seed, b.nfe, hash, refine::to_string(r->kind)}))
                rep.rows.push_back(std::move(row));
        }
    }
    return rep;
}

Paths cmd_evaluate(const ExperimentConfig& cfg) {
    prepare(cfg);
    const auto g = load_generator(cfg, cfg.base.checkpoint);
    std::optional<refine::Refiner> r;
    if (std::filesystem::exists(cfg.out(cfg.refiner.checkpoint))) r = refine::load(cfg.out(cfg.refiner.checkpoint));
    const auto rep = evaluate_samples(cfg, g, r);
    Paths p;
    p.files.push_back(cfg.out("metrics.csv"));
    write_text(p.files.back(), rep.to_csv());
    log_line(cfg, "evaluate", "rows=" + std::to_string(rep.rows.size()));
    return p;
}

Table ablate(const ExperimentConfig& cfg, const gen::Generator& g, const std::optional<refine::Refiner>& r) {
    const auto& ab = cfg.ablate;
    require(!ab.grid.empty(), ErrorCode::config, "ablate.grid is not set");
    require(!ab.values.empty(), ErrorCode::config, "ablate.values is empty");
    const Matrix ref = reference_set(cfg);
    const std::uint64_t hash = g.hash();
    Table t;
    t.dataset = data::to_string(cfg.dataset.name);
    t.grid = ab.grid;
    t.rows.push_back(base_row(cfg, g, ref));

    std::optional<Matrix> train_data;
    auto data = [&]() -> const Matrix& {
        if (!train_data) train_data = training_set(cfg);
        return *train_data;
    };
    for (double v : ab.values) {
        ExperimentConfig c = cfg;
        refine::Refiner rv;
        if (ab.grid == "sigma_d") {
            c.refiner.kind = refine::Kind::noise_inject;
            c.refiner.noise.sigma_d = v;
        } else if (ab.grid == "sigma_f") {
            c.refiner.kind = refine::Kind::fmrefiner;
            c.refiner.noise.sigma_f = v;
        } else if (ab.grid == "alpha") {
            c.refiner.kind = refine::Kind::lfr;
            c.refiner.mix.alpha_max = v;
        }
        ode::SolverSpec solver;
        if (ab.grid == "nfe") {
            require(r.has_value(), ErrorCode::missing_artifact, "nfe ablation needs a trained refiner checkpoint");
            rv = *r;
            solver = rv.kind == refine::Kind::fmrefiner ? refine::fmrefiner_solver(static_cast<int>(v))
                                                        : ode::solver_for_nfe(static_cast<int>(v));
        } else {
            rv = train_refiner(c, g, data(), nullptr);
            solver = cfg.refiner.solver.value_or(rv.solver);
        }
        const auto run = run_refiner(c, g, rv, ref, solver, cfg.refiner.allow_transfer);
        auto row = refined_row(ab.grid + "=" + format_value(v), run, cfg.seeds, refine::to_string(rv.kind), hash);
        row.grid_value = v;
        t.rows.push_back(std::move(row));
    }
    t.metric_names = metric_order(t);
    return t;
}

Paths cmd_ablate(const ExperimentConfig& cfg) {
    prepare(cfg);
    require(!cfg.ablate.values.empty(), ErrorCode::config, "ablate.values is empty");
    const auto g = load_generator(cfg, cfg.base.checkpoint);
    std::optional<refine::Refiner> r;
    if (cfg.ablate.grid == "nfe") r = refine::load(cfg.out(cfg.refiner.checkpoint));
    log_line(cfg, "ablate", "start grid=" + cfg.ablate.grid);
    const auto t = ablate(cfg, g, r);
    Paths p;
    p.files.push_back(cfg.out("ablate_" + cfg.ablate.grid + ".csv"));
    write_text(p.files.back(), t.to_csv());
    log_line(cfg, "ablate", "done rows=" + std::to_string(t.rows.size()));
    return p;
}

Table transfer(const ExperimentConfig& cfg, const gen::Generator& degraded, const refine::Refiner& dfr,
               const refine::Refiner& lfr) {
    require(dfr.kind == refine::Kind::dfr, ErrorCode::kind_mismatch, "transfer.dfr is not a dfr refiner");
    require(lfr.kind == refine::Kind::lfr, ErrorCode::kind_mismatch, "transfer.lfr is not an lfr refiner");
    const Matrix ref = reference_set(cfg);
    const std::uint64_t hash = degraded.hash();
    Table t;
    t.dataset = data::to_string(cfg.dataset.name);
    t.grid = "transfer";
    t.rows.push_back(base_row(cfg, degraded, ref));
    for (const refine::Refiner* r : {&dfr, &lfr}) {
        const std::string tag = r->kind == refine::Kind::dfr ? "DFR" : "LFR";
        for (int nfe : cfg.transfer.nfes) {
            const auto run = run_refiner(cfg, degraded, *r, ref, ode::solver_for_nfe(nfe), true);
            t.rows.push_back(refined_row("+" + tag + " (" + std::to_string(nfe) + "-NFE)", run, cfg.seeds,
                                         refine::to_string(r->kind), hash));
        }
    }
    t.metric_names = metric_order(t);
    return t;
}

Paths cmd_transfer(const ExperimentConfig& cfg) {
    prepare(cfg);
    const auto full = load_generator(cfg, cfg.base.checkpoint);
    const auto degraded = load_generator(cfg, cfg.transfer.degraded);
    const auto dfr = refine::load(cfg.out(cfg.transfer.dfr));
    const auto lfr = refine::load(cfg.out(cfg.transfer.lfr));
    const std::uint64_t full_hash = full.hash();
    if (dfr.generator_hash != full_hash || lfr.generator_hash != full_hash)
        log_line(cfg, "transfer", "note: refiners were not trained against " + cfg.base.checkpoint);
    const auto t = transfer(cfg, degraded, dfr, lfr);
    Paths p;
    p.files.push_back(cfg.out("transfer.csv"));
    write_text(p.files.back(), t.to_csv());
    log_line(cfg, "transfer", "full=" + hex64(full_hash) + " degraded=" + hex64(degraded.hash()));
    return p;
}

std::string scatter_svg(const Matrix& data, const Matrix& base, const Matrix& refined) {
    require(data.cols() == 2 && base.cols() == 2 && refined.cols() == 2, ErrorCode::dimension_mismatch,
            "scatter plots need 2-D points");
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (const Matrix* m : {&data, &base, &refined}) {
        if (m->rows() == 0) continue;
        lo_x = std::min(lo_x, m->col(0).minCoeff());
        hi_x = std::max(hi_x, m->col(0).maxCoeff());
        lo_y = std::min(lo_y, m->col(1).minCoeff());
        hi_y = std::max(hi_y, m->col(1).maxCoeff());
    }
    if (!(hi_x > lo_x)) hi_x = lo_x + 1.0;
    if (!(hi_y > lo_y)) hi_y = lo_y + 1.0;
    const double size = 480.0, pad = 20.0, span = size - 2.0 * pad;
    const double scale = span / std::max(hi_x - lo_x, hi_y - lo_y);

    std::ostringstream os;
    os << std::setprecision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 40
       << "\" viewBox=\"0 0 " << size << ' ' << size + 40 << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    struct Layer {
        const char* label;
        const char* color;
        const Matrix* points;
    };
    const Layer layers[] = {{"data", "#7f7f7f", &data}, {"base", "#1f77b4", &base}, {"refined", "#d62728", &refined}};
    for (const auto& l : layers) {
        os << "<g class=\"points\" id=\"" << l.label << "\" fill=\"" << l.color << "\" fill-opacity=\"0.5\">\n";
        for (Eigen::Index i = 0; i < l.points->rows(); ++i) {
            const double cx = pad + ((*l.points)(i, 0) - lo_x) * scale;
            const double cy = size - pad - ((*l.points)(i, 1) - lo_y) * scale;
            os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"1.5\"/>\n";
        }
        os << "</g>\n";
    }
    os << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
    double x = pad;
    for (const auto& l : layers) {
        os << "<circle cx=\"" << x << "\" cy=\"" << size + 20 << "\" r=\"4\" fill=\"" << l.color << "\"/>\n";
        os << "<text x=\"" << x + 8 << "\" y=\"" << size + 24 << "\">" << l.label << "</text>\n";
        x += 90.0;
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

Paths cmd_plot(const ExperimentConfig& cfg) {
    prepare(cfg);
    require(cfg.dataset.dim() == 2, ErrorCode::config, "plot needs 2-D data");
    const auto g = load_generator(cfg, cfg.base.checkpoint);
    const auto r = refine::load(cfg.out(cfg.refiner.checkpoint));
    const std::uint64_t seed = cfg.seeds.front();
    const Matrix ref = reference_set(cfg);
    const auto base = gen::sample(g, cfg.sample.n, seed, std::nullopt, cfg.threads);
    const auto refined = refine::refine_generator_samples(r, g, cfg.sample.n, seed, cfg.refiner.solver.value_or(r.solver),
                                                          cfg.refiner.allow_transfer, cfg.threads);
    Paths p;
    p.files.push_back(cfg.out("scatter.svg"));
    write_text(p.files.back(), scatter_svg(ref, base.x, refined.x));
    return p;
}

}  // namespace bfr::harness
