#pragma once

// Config-driven experiment commands behind the bfr CLI.
//
// Every command reads an ExperimentConfig, works inside output_dir and writes
// deterministic artifacts there. Wall-clock timestamps go only to run.log.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bfr/data.hpp"
#include "bfr/error.hpp"
#include "bfr/generator.hpp"
#include "bfr/metrics.hpp"
#include "bfr/ode.hpp"
#include "bfr/refine.hpp"

namespace bfr::harness {

using Matrix = Eigen::MatrixXd;

struct BaseSection {
    gen::TrainConfig train;
    std::string path = "straight";  // straight | trigonometric
    ode::SolverSpec solver{ode::SolverKind::rk4, 25, ode::Direction::forward};
    std::string checkpoint = "base.bfr";
};

struct RefinerSection {
    refine::Kind kind = refine::Kind::dfr;
    refine::TrainConfig train;
    data::AugSpec aug{0.05, 1, 1.0};
    interp::MixSpec mix;  // alpha_max defaults to 0.1 for point_mass
    interp::RefinerNoiseSpec noise;
    std::optional<ode::SolverSpec> solver;  // unset: the refiner kind's default
    ode::SolverSpec inversion{ode::SolverKind::rk4, 16, ode::Direction::backward};
    std::string checkpoint = "refiner.bfr";
    std::string latent_cache = "latents.bfr";
    bool allow_transfer = false;
};

enum class DumpFormat { csv, binary };

struct SampleSection {
    long n = 1000;
    DumpFormat format = DumpFormat::csv;
    long reference_n = 1000;      // held-out reference size for evaluation
    std::uint64_t reference_seed_offset = 1;
};

struct AblateSection {
    std::string grid;  // sigma_d | sigma_f | alpha | nfe
    std::vector<double> values;
};

struct TransferSection {
    std::string degraded = "base_degraded.bfr";
    std::string dfr = "dfr.bfr";
    std::string lfr = "lfr.bfr";
    std::vector<int> nfes{1, 10};
};

struct ExperimentConfig {
    data::DatasetSpec dataset;
    std::optional<std::filesystem::path> idx_path;  // grid_images from an IDX file
    BaseSection base;
    RefinerSection refiner;
    metrics::MetricSpec metrics;
    bool tau_given = false;
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "runs";
    int threads = 1;
    SampleSection sample;
    AblateSection ablate;
    TransferSection transfer;

    std::filesystem::path out(const std::string& name) const { return output_dir / name; }
};

// Parses and validates a YAML config. Unknown keys and type errors raise
// ErrorCode::config with "<source>:<line>: <key path>: <message>".
// Overrides are "dotted.key=value" pairs applied to the tree before
// validation; values are parsed as YAML.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>",
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// BFR_OUTPUT_DIR and BFR_THREADS override output_dir and threads.
void apply_environment(ExperimentConfig& cfg);

// Process exit code for an error: 2 config, 3 missing or unreadable artifact,
// 4 numerical failure, 1 anything else.
int exit_code(const Error& e);

// Sample dumps. CSV: header dim0,...,dim{d-1} and %.17g values. Binary: a
// BFR1 container without layers carrying an SMP1 section.
void write_samples(const std::filesystem::path& path, const Matrix& x, DumpFormat format);
Matrix read_samples(const std::filesystem::path& path);
std::string samples_csv(const Matrix& x);
Matrix parse_samples_csv(const std::string& text);

// Ablation and transfer tables: one row per setting, metrics as columns
// averaged over seeds.
struct TableRow {
    std::string label;
    std::optional<double> grid_value;
    int nfe = 0;  // refiner NFE, 0 for the base row
    int total_nfe = 0;
    std::string refiner = "none";
    std::uint64_t generator_hash = 0;
    std::vector<std::uint64_t> seeds;
    std::map<std::string, double> metrics;
};

struct Table {
    std::string dataset;
    std::string grid;
    std::vector<std::string> metric_names;
    std::vector<TableRow> rows;

    std::string to_csv() const;
    static Table from_csv(const std::string& text);
};

// Seed-averaged metric rows of one sample set per seed.
TableRow summarize(const std::string& label, const std::vector<std::vector<metrics::MetricRow>>& per_seed,
                   const std::vector<std::uint64_t>& seeds);

// Held-out reference set for evaluation (dataset seed shifted by the offset).
Matrix reference_set(const ExperimentConfig& cfg);
Matrix training_set(const ExperimentConfig& cfg);
metrics::MetricSpec metric_spec(const ExperimentConfig& cfg);

struct Paths {
    std::vector<std::filesystem::path> files;
};

Paths cmd_train_base(const ExperimentConfig& cfg);
Paths cmd_train_refiner(const ExperimentConfig& cfg);
Paths cmd_sample(const ExperimentConfig& cfg);
Paths cmd_refine(const ExperimentConfig& cfg);
Paths cmd_invert(const ExperimentConfig& cfg);
Paths cmd_evaluate(const ExperimentConfig& cfg);
Paths cmd_ablate(const ExperimentConfig& cfg);
Paths cmd_transfer(const ExperimentConfig& cfg);
Paths cmd_plot(const ExperimentConfig& cfg);

// In-memory pieces the commands are built from.
metrics::MetricsReport evaluate_samples(const ExperimentConfig& cfg, const gen::Generator& g,
                                        const std::optional<refine::Refiner>& r);
Table ablate(const ExperimentConfig& cfg, const gen::Generator& g, const std::optional<refine::Refiner>& r);
Table transfer(const ExperimentConfig& cfg, const gen::Generator& degraded, const refine::Refiner& dfr,
               const refine::Refiner& lfr);

// Scatter plot of data, base and refined points (2-D only), one <g> layer each.
std::string scatter_svg(const Matrix& data, const Matrix& base, const Matrix& refined);

}  // namespace bfr::harness
