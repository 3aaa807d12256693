#include <doctest.h>

#include <cstdlib>

#include "bfr/container.hpp"
#include "bfr/error.hpp"
#include "bfr/harness.hpp"
#include "support.hpp"

using namespace bfr;
using harness::Matrix;

namespace {

const char* kTiny = R"(dataset:
  name: eight_gaussians
  n: 600
base:
  steps: 60
  batch_size: 64
  hidden: [16, 16]
  freq_count: 2
  solver: {kind: rk4, steps: 2}
refiner:
  kind: dfr
  steps: 30
  batch_size: 64
  hidden: [16, 16]
  freq_count: 2
  inversion: {kind: rk4, steps: 2}
metrics:
  n_projections: 8
seeds: [0, 1]
sample:
  n: 100
  reference_n: 100
)";

harness::ExperimentConfig tiny(const std::filesystem::path& out, std::vector<std::string> overrides = {}) {
    auto cfg = harness::parse_config(kTiny, "tiny.yaml", overrides);
    cfg.output_dir = out;
    return cfg;
}

std::string message_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
    try {
        harness::parse_config(text, "t.yaml", overrides);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config);
        return e.what();
    }
    return "";
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::unsupported;
}

}  // namespace

TEST_CASE("config defaults") {
    const auto cfg = harness::parse_config("dataset: {name: two_moons}\n");
    CHECK(cfg.base.solver.kind == ode::SolverKind::rk4);
    CHECK(cfg.base.solver.steps == 25);
    CHECK(cfg.refiner.aug.sigma == 0.05);
    CHECK(cfg.refiner.aug.probability == 1.0);
    CHECK(cfg.refiner.mix.alpha_max == 0.2);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0});
    CHECK(cfg.sample.format == harness::DumpFormat::csv);
    CHECK(harness::parse_config("dataset: {name: point_mass}\n").refiner.mix.alpha_max == 0.1);
    CHECK(harness::parse_config("dataset: {name: point_mass}\nrefiner: {mix: {alpha_max: 0.3}}\n")
              .refiner.mix.alpha_max == 0.3);
    const auto seeded = harness::parse_config("dataset: {name: two_moons}\nseeds: [4, 5]\n");
    CHECK(seeded.base.train.seed == 4);
    CHECK(seeded.refiner.train.seed == 4);
}

TEST_CASE("config errors carry the source line and key path") {
    const std::string unknown = message_of("dataset:\n  name: two_moons\n  bogus: 1\n");
    CHECK(unknown.find("t.yaml:3") != std::string::npos);
    CHECK(unknown.find("dataset.bogus") != std::string::npos);
    const std::string type = message_of("dataset: {name: two_moons}\nbase:\n  steps: many\n");
    CHECK(type.find("t.yaml:3") != std::string::npos);
    CHECK(type.find("base.steps") != std::string::npos);
    CHECK(message_of("base: {steps: 10}\n").find("dataset") != std::string::npos);
    CHECK(!message_of("dataset: {name: mnist}\n").empty());
    CHECK(!message_of("dataset: {name: two_moons}\nrefiner: {kind: magic}\n").empty());
    CHECK(!message_of("dataset: {name: two_moons}\nbase: {steps: -3}\n").empty());
    CHECK(!message_of("dataset: {name: two_moons}\nablate: {grid: depth, values: [1]}\n").empty());
    CHECK(!message_of("dataset: {name: two_moons}\nablate: {grid: nfe, values: [2.5]}\n").empty());
    CHECK(!message_of("dataset: {name: two_moons}\nrefiner: {kind: fmrefiner, solver: {kind: euler, steps: 1}}\n")
               .empty());
    CHECK(!message_of("dataset: {name: two_moons}\nrefiner: {aug: {blur_width: 3}}\n").empty());
    CHECK(!message_of("dataset: [unclosed\n").empty());
}

TEST_CASE("dotted overrides are applied before validation") {
    const std::string text = "dataset: {name: two_moons}\n";
    const auto cfg = harness::parse_config(text, "t", {"refiner.aug.sigma=0.2", "seeds=[1, 2]", "base.solver.steps=8"});
    CHECK(cfg.refiner.aug.sigma == 0.2);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK(cfg.base.solver.steps == 8);
    CHECK(!message_of(text, {"base.steps=abc"}).empty());
    CHECK(!message_of(text, {"base.stepz=3"}).empty());
    CHECK(!message_of(text, {"no_equals_sign"}).empty());
}

TEST_CASE("environment overrides") {
    auto cfg = harness::parse_config("dataset: {name: two_moons}\noutput_dir: a\nthreads: 1\n");
    setenv("BFR_OUTPUT_DIR", "/tmp/elsewhere", 1);
    setenv("BFR_THREADS", "3", 1);
    harness::apply_environment(cfg);
    CHECK(cfg.output_dir == "/tmp/elsewhere");
    CHECK(cfg.threads == 3);
    setenv("BFR_THREADS", "zero", 1);
    CHECK(code_of([&] { harness::apply_environment(cfg); }) == ErrorCode::config);
    unsetenv("BFR_OUTPUT_DIR");
    unsetenv("BFR_THREADS");
}

TEST_CASE("exit codes") {
    CHECK(harness::exit_code(Error(ErrorCode::config, "")) == 2);
    CHECK(harness::exit_code(Error(ErrorCode::missing_artifact, "")) == 3);
    CHECK(harness::exit_code(Error(ErrorCode::bad_magic, "")) == 3);
    CHECK(harness::exit_code(Error(ErrorCode::hash_mismatch, "")) == 3);
    CHECK(harness::exit_code(IntegrationError(2, "")) == 4);
    CHECK(harness::exit_code(DivergenceError(7)) == 4);
    CHECK(harness::exit_code(Error(ErrorCode::unsupported, "")) == 1);
}

TEST_CASE("sample dumps round-trip bit-exactly") {
    testing::TempDir dir;
    Rng rng(3);
    Matrix x = rng.normal_matrix(17, 3);
    x(0, 0) = 1.0 / 3.0;
    x(1, 1) = -0.0;
    x(2, 2) = 1e-300;
    harness::write_samples(dir / "s.csv", x, harness::DumpFormat::csv);
    harness::write_samples(dir / "s.bfr", x, harness::DumpFormat::binary);
    CHECK((harness::read_samples(dir / "s.csv").array() == x.array()).all());
    CHECK((harness::read_samples(dir / "s.bfr").array() == x.array()).all());
    CHECK(testing::slurp(dir / "s.csv").rfind("dim0,dim1,dim2\n", 0) == 0);
    CHECK(container::load(dir / "s.bfr").find(container::make_tag("SMP1")) != nullptr);
    CHECK_THROWS_AS(harness::parse_samples_csv("x,y\n1,2\n"), Error);
    CHECK_THROWS_AS(harness::parse_samples_csv("dim0,dim1\n1\n"), Error);
    CHECK(code_of([&] { harness::read_samples(dir / "none.csv"); }) != ErrorCode::unsupported);
}

TEST_CASE("tables round-trip through CSV") {
    harness::Table t;
    t.dataset = "eight_gaussians";
    t.grid = "alpha";
    t.metric_names = {"energy_distance", "sliced_w2"};
    harness::TableRow base;
    base.label = "Base";
    base.total_nfe = 100;
    base.generator_hash = 0x0123456789abcdefULL;
    base.seeds = {0, 1, 2};
    base.metrics = {{"energy_distance", 0.1}, {"sliced_w2", 1.0 / 3.0}};
    harness::TableRow r = base;
    r.label = "alpha=0.1";
    r.grid_value = 0.1;
    r.nfe = 10;
    r.total_nfe = 110;
    r.refiner = "lfr";
    t.rows = {base, r};
    const auto back = harness::Table::from_csv(t.to_csv());
    CHECK(back.dataset == t.dataset);
    CHECK(back.grid == t.grid);
    CHECK(back.metric_names == t.metric_names);
    REQUIRE(back.rows.size() == 2);
    CHECK(!back.rows[0].grid_value);
    CHECK(*back.rows[1].grid_value == 0.1);
    CHECK(back.rows[1].refiner == "lfr");
    CHECK(back.rows[1].total_nfe == 110);
    CHECK(back.rows[0].seeds == base.seeds);
    CHECK(back.rows[0].generator_hash == base.generator_hash);
    CHECK(back.rows[0].metrics.at("sliced_w2") == 1.0 / 3.0);
    CHECK(back.to_csv() == t.to_csv());
}

TEST_CASE("summaries average each metric over seeds") {
    std::vector<std::vector<metrics::MetricRow>> per_seed(2);
    per_seed[0].push_back({"energy_distance", 1.0, 10, 0, 10, 0, 7, "dfr"});
    per_seed[1].push_back({"energy_distance", 3.0, 10, 1, 10, 0, 7, "dfr"});
    const auto row = harness::summarize("x", per_seed, {0, 1});
    CHECK(row.metrics.at("energy_distance") == 2.0);
    CHECK(row.seeds == std::vector<std::uint64_t>{0, 1});
}

TEST_CASE("svg scatter has data, base and refined layers") {
    Matrix a(2, 2), b(1, 2), c(1, 2);
    a << 0, 0, 1, 1;
    b << 0.5, 0.5;
    c << 0.2, 0.8;
    const std::string svg = harness::scatter_svg(a, b, c);
    for (const char* id : {"id=\"data\"", "id=\"base\"", "id=\"refined\"", ">data<", ">base<", ">refined<"})
        CHECK(svg.find(id) != std::string::npos);
    CHECK(svg.find("data") < svg.find("base"));
    CHECK(svg.find("id=\"base\"") < svg.find("id=\"refined\""));
    CHECK_THROWS_AS(harness::scatter_svg(Matrix::Zero(1, 3), b, c), Error);
}

TEST_CASE("commands report missing artifacts") {
    testing::TempDir dir;
    const auto cfg = tiny(dir / "out");
    const auto code = code_of([&] { harness::cmd_sample(cfg); });
    CHECK(code == ErrorCode::missing_artifact);
    CHECK(code_of([&] { harness::cmd_train_refiner(cfg); }) == ErrorCode::missing_artifact);
}

TEST_CASE("end-to-end pipeline writes deterministic artifacts") {
    testing::TempDir dir;
    std::map<std::string, std::string> first;
    for (const char* run : {"a", "b"}) {
        const auto cfg = tiny(dir / run);
        harness::cmd_train_base(cfg);
        harness::cmd_train_refiner(cfg);
        const auto dumps = harness::cmd_sample(cfg);
        CHECK(dumps.files.size() == 2);
        harness::cmd_refine(cfg);
        harness::cmd_invert(cfg);
        harness::cmd_evaluate(cfg);
        harness::cmd_plot(cfg);
        for (const char* f : {"base.bfr", "refiner.bfr", "samples_base_seed0.csv", "samples_refined_seed1.csv",
                              "latents.csv", "metrics.csv", "scatter.svg"}) {
            const std::string bytes = testing::slurp(cfg.out(f));
            CHECK(!bytes.empty());
            if (std::string(run) == "a") first[f] = bytes;
            else CHECK_MESSAGE(bytes == first[f], f);
        }
        CHECK(std::filesystem::exists(cfg.out("run.log")));
    }
    const auto rep = metrics::MetricsReport::from_csv(first["metrics.csv"]);
    CHECK(rep.dataset == "eight_gaussians");
    // 7 metrics for base and refined, two seeds each.
    CHECK(rep.rows.size() == 28);

    auto bin = tiny(dir / "a", {"sample.format=binary"});
    const auto files = harness::cmd_sample(bin);
    CHECK(files.files.front().extension() == ".bfr");
    CHECK((harness::read_samples(files.files.front()).array() ==
           harness::read_samples(dir / "a" / "samples_base_seed0.csv").array())
              .all());

    auto other = tiny(dir / "c", {"seeds=[3]"});
    harness::cmd_train_base(other);
    CHECK(testing::slurp(other.out("base.bfr")) != first["base.bfr"]);
}

TEST_CASE("ablation tables have one row per value plus the base row") {
    testing::TempDir dir;
    auto cfg = tiny(dir / "out", {"seeds=[0]", "refiner.steps=10"});
    harness::cmd_train_base(cfg);
    harness::cmd_train_refiner(cfg);
    const auto g = gen::load(cfg.out("base.bfr"));
    const std::pair<const char*, std::vector<double>> grids[] = {
        {"alpha", {0.0, 0.05, 0.1, 0.2, 0.3}},
        {"sigma_d", {0.0, 0.05, 0.1, 0.2}},
        {"sigma_f", {0.01, 0.05}},
        {"nfe", {1, 2, 5, 10}},
    };
    for (const auto& [grid, values] : grids) {
        auto c = cfg;
        c.ablate.grid = grid;
        c.ablate.values = values;
        std::optional<refine::Refiner> r;
        if (std::string(grid) == "nfe") r = refine::load(cfg.out("refiner.bfr"));
        const auto t = harness::ablate(c, g, r);
        REQUIRE(t.rows.size() == values.size() + 1);
        CHECK(t.rows[0].label == "Base");
        CHECK(t.rows[0].nfe == 0);
        CHECK(t.grid == grid);
        for (std::size_t i = 0; i < values.size(); ++i) CHECK(*t.rows[i + 1].grid_value == values[i]);
        if (std::string(grid) == "nfe") {
            CHECK(t.rows[1].nfe == 1);
            CHECK(t.rows[4].nfe == 10);
            CHECK(t.rows[4].total_nfe == 18);
        }
        if (std::string(grid) == "alpha") CHECK(t.rows[1].refiner == "lfr");
        if (std::string(grid) == "sigma_d") CHECK(t.rows[1].refiner == "noise_inject");
        if (std::string(grid) == "sigma_f") CHECK(t.rows[1].refiner == "fmrefiner");
    }
    cfg.ablate = {"nfe", {1}};
    CHECK(code_of([&] { harness::ablate(cfg, g, std::nullopt); }) == ErrorCode::missing_artifact);
}

TEST_CASE("transfer table has the five expected rows") {
    testing::TempDir dir;
    auto cfg = tiny(dir / "out", {"seeds=[0]", "refiner.steps=10"});
    harness::cmd_train_base(cfg);
    auto degraded = cfg;
    degraded.base.train.steps = 6;
    degraded.base.checkpoint = cfg.transfer.degraded;
    harness::cmd_train_base(degraded);
    auto dfr = cfg;
    dfr.refiner.checkpoint = cfg.transfer.dfr;
    harness::cmd_train_refiner(dfr);
    auto lfr = cfg;
    lfr.refiner.kind = refine::Kind::lfr;
    lfr.refiner.checkpoint = cfg.transfer.lfr;
    harness::cmd_train_refiner(lfr);
    const auto p = harness::cmd_transfer(cfg);
    const auto t = harness::Table::from_csv(testing::slurp(p.files.front()));
    REQUIRE(t.rows.size() == 5);
    const std::vector<std::string> labels{"Base", "+DFR (1-NFE)", "+DFR (10-NFE)", "+LFR (1-NFE)", "+LFR (10-NFE)"};
    for (std::size_t i = 0; i < 5; ++i) CHECK(t.rows[i].label == labels[i]);
    const auto deg_hash = gen::load(cfg.out(cfg.transfer.degraded)).hash();
    for (const auto& row : t.rows) CHECK(row.generator_hash == deg_hash);
    CHECK(t.rows[2].nfe == 10);
    CHECK(t.rows[2].total_nfe == 18);
}
