#include "bfr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "bfr/error.hpp"
#include "bfr/rng.hpp"

namespace bfr::metrics {

namespace {

double distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        s += d * d;
    }
    return std::sqrt(s);
}

double mean_pairwise(const Matrix& a, const Matrix& b) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double row = 0.0;
        for (Eigen::Index j = 0; j < b.rows(); ++j) row += distance(a, i, b, j);
        total += row;
    }
    return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

void check_pair(const Matrix& a, const Matrix& b) {
    require(a.rows() > 0 && b.rows() > 0, ErrorCode::invalid_argument, "point sets must be nonempty");
    require(a.cols() == b.cols(), ErrorCode::dimension_mismatch, "point sets differ in dimension");
}

// Mean nearest-neighbour distance from `from` into `to`, and the fraction
// of `from` points with a neighbour closer than tau.
std::pair<double, double> nearest(const Matrix& from, const Matrix& to, double tau) {
    long covered = 0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < to.rows(); ++j) best = std::min(best, distance(from, i, to, j));
        if (best < tau) ++covered;
        total += best;
    }
    const double n = static_cast<double>(from.rows());
    return {static_cast<double>(covered) / n, total / n};
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

}  // namespace

void validate(const MetricSpec& spec) {
    require(spec.tau > 0.0, ErrorCode::invalid_argument, "tau must be > 0");
    require(spec.n_projections >= 1, ErrorCode::invalid_argument, "need at least one projection");
}

double default_tau(const data::DatasetSpec& spec) {
    if (spec.name == data::DatasetName::eight_gaussians) return 0.5 * data::min_mode_distance(spec);
    return 0.25;
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
    require(!a.empty() && !b.empty(), ErrorCode::invalid_argument, "empty distribution");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n = a.size(), m = b.size();
    // Walk the merged quantile breakpoints i/n and j/m in integer units of 1/(n m).
    std::size_t i = 0, j = 0;
    std::uint64_t pos = 0;
    double acc = 0.0;
    while (i < n && j < m) {
        const std::uint64_t next_a = (i + 1) * m, next_b = (j + 1) * n;
        const std::uint64_t next = std::min(next_a, next_b);
        const double diff = a[i] - b[j];
        acc += static_cast<double>(next - pos) * diff * diff;
        pos = next;
        if (next_a == next) ++i;
        if (next_b == next) ++j;
    }
    return std::sqrt(acc / (static_cast<double>(n) * static_cast<double>(m)));
}

Matrix random_directions(int count, int dim, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, {0x5157});
    Matrix dirs(count, dim);
    for (int i = 0; i < count; ++i) {
        Vector v;
        do {
            v = rng.normal_matrix(1, dim).row(0).transpose();
        } while (v.norm() < 1e-12);
        dirs.row(i) = v.normalized().transpose();
    }
    return dirs;
}

double sliced_wasserstein(const Matrix& a, const Matrix& b, const Matrix& directions) {
    check_pair(a, b);
    require(directions.cols() == a.cols() && directions.rows() >= 1, ErrorCode::dimension_mismatch,
            "projection directions do not match data dimension");
    double total = 0.0;
    for (Eigen::Index p = 0; p < directions.rows(); ++p) {
        const Vector u = directions.row(p).transpose();
        const Vector pa = a * u, pb = b * u;
        total += wasserstein2_1d({pa.data(), pa.data() + pa.size()}, {pb.data(), pb.data() + pb.size()});
    }
    return total / static_cast<double>(directions.rows());
}

double sliced_wasserstein(const Matrix& a, const Matrix& b, const MetricSpec& spec) {
    validate(spec);
    check_pair(a, b);
    return sliced_wasserstein(a, b, random_directions(spec.n_projections, static_cast<int>(a.cols()), spec.seed));
}

double energy_distance(const Matrix& a, const Matrix& b) {
    check_pair(a, b);
    return 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
}

CoverageAmr coverage_and_amr(const Matrix& ref, const Matrix& gen, double tau) {
    require(tau > 0.0, ErrorCode::invalid_argument, "tau must be > 0");
    check_pair(ref, gen);
    CoverageAmr out;
    std::tie(out.cov_r, out.amr_r) = nearest(ref, gen, tau);
    std::tie(out.cov_p, out.amr_p) = nearest(gen, ref, tau);
    return out;
}

EnergyError energy_error(std::span<const double> ref, std::span<const double> gen,
                         std::optional<double> e_max) {
    auto keep = [&](double e) { return !std::isnan(e) && (!e_max || e < *e_max); };
    double ref_sum = 0.0, gen_sum = 0.0;
    long ref_n = 0, gen_n = 0;
    EnergyError out;
    for (double e : ref)
        if (keep(e)) {
            ref_sum += e;
            ++ref_n;
        }
    for (double e : gen) {
        if (keep(e)) {
            gen_sum += e;
            ++gen_n;
        } else {
            ++out.excluded;
        }
    }
    require(ref_n > 0 && gen_n > 0, ErrorCode::invalid_argument, "all samples truncated");
    const double ref_mean = ref_sum / static_cast<double>(ref_n);
    const double gen_mean = gen_sum / static_cast<double>(gen_n);
    require(ref_mean != 0.0, ErrorCode::invalid_argument, "reference mean energy is zero");
    out.percent = 100.0 * (gen_mean - ref_mean) / std::abs(ref_mean);
    return out;
}

Gaussianity latent_gaussianity(const Matrix& z) {
    require(z.rows() >= 2, ErrorCode::invalid_argument, "need at least two latents");
    Gaussianity g;
    g.mean = z.colwise().mean().transpose();
    g.variance.resize(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        g.variance(j) = (z.col(j).array() - g.mean(j)).square().sum() / static_cast<double>(z.rows() - 1);
    g.max_abs_mean = g.mean.cwiseAbs().maxCoeff();
    g.max_abs_var_dev = (g.variance.array() - 1.0).abs().maxCoeff();
    return g;
}

double true_energy(const data::DatasetSpec& spec, const Vector& x) {
    std::vector<Vector> centers;
    double sigma = spec.sigma_mode;
    switch (spec.name) {
        case data::DatasetName::eight_gaussians: centers = data::mode_centers(spec); break;
        case data::DatasetName::point_mass:
            require(sigma > 0.0, ErrorCode::unsupported, "point_mass with sigma_mode = 0 has no density");
            centers.push_back(spec.center);
            break;
        default:
            throw Error(ErrorCode::unsupported, "no closed-form density for " + data::to_string(spec.name));
    }
    require(sigma > 0.0, ErrorCode::unsupported, "degenerate mixture has no density");
    require(x.size() == centers.front().size(), ErrorCode::dimension_mismatch, "energy point dimension mismatch");
    const double d = static_cast<double>(x.size());
    std::vector<double> logs;
    for (const auto& c : centers) logs.push_back(-(x - c).squaredNorm() / (2.0 * sigma * sigma));
    const double top = *std::max_element(logs.begin(), logs.end());
    double s = 0.0;
    for (double l : logs) s += std::exp(l - top);
    const double log_mix = top + std::log(s) - std::log(static_cast<double>(centers.size())) -
                           0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma);
    return -log_mix;
}

Vector true_energy(const data::DatasetSpec& spec, const Matrix& x) {
    Vector e(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) e(i) = true_energy(spec, Vector(x.row(i).transpose()));
    return e;
}

const MetricRow* MetricsReport::find(const std::string& name, int nfe) const {
    for (const auto& r : rows)
        if (r.name == name && r.nfe == nfe) return &r;
    return nullptr;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "# dataset: " << dataset << "\n";
    os << "# distance: plain euclidean per point, no rotational alignment\n";
    os << kCsvHeader << "\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << csv_escape(r.name) << ',' << r.value << ',' << r.n << ',' << r.seed << ',' << r.nfe << ','
           << r.excluded << ',' << std::hex << std::setw(16) << std::setfill('0') << r.generator_hash
           << std::dec << std::setfill(' ') << ',' << csv_escape(r.refiner) << "\n";
    return os.str();
}

MetricsReport MetricsReport::from_csv(const std::string& text) {
    MetricsReport rep;
    std::istringstream is(text);
    std::string line;
    bool header = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line.rfind("# dataset: ", 0) == 0) {
            rep.dataset = line.substr(11);
            continue;
        }
        if (line[0] == '#') continue;
        if (!header) {
            require(line == kCsvHeader, ErrorCode::invalid_argument, "unexpected metrics CSV header");
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        require(f.size() == 8, ErrorCode::invalid_argument, "metrics CSV row must have 8 fields");
        MetricRow r;
        r.name = f[0];
        r.value = std::stod(f[1]);
        r.n = std::stol(f[2]);
        r.seed = std::stoull(f[3]);
        r.nfe = std::stoi(f[4]);
        r.excluded = std::stol(f[5]);
        r.generator_hash = std::stoull(f[6], nullptr, 16);
        r.refiner = f[7];
        rep.rows.push_back(std::move(r));
    }
    return rep;
}

std::vector<MetricRow> evaluate(const Matrix& ref, const Matrix& gen, const data::DatasetSpec& dataset,
                                const MetricSpec& spec, const Provenance& prov) {
    validate(spec);
    std::vector<MetricRow> rows;
    const long n = static_cast<long>(gen.rows());
    auto add = [&](const std::string& name, double value, long excluded = 0) {
        rows.push_back({name, value, n, prov.seed, prov.nfe, excluded, prov.generator_hash, prov.refiner});
    };
    add("energy_distance", energy_distance(gen, ref));
    add("sliced_w2", sliced_wasserstein(gen, ref, spec));
    const auto cov = coverage_and_amr(ref, gen, spec.tau);
    add("cov_r", cov.cov_r);
    add("cov_p", cov.cov_p);
    add("amr_r", cov.amr_r);
    add("amr_p", cov.amr_p);
    const bool has_density =
        dataset.name == data::DatasetName::eight_gaussians ||
        (dataset.name == data::DatasetName::point_mass && dataset.sigma_mode > 0.0);
    if (has_density) {
        const Vector er = true_energy(dataset, ref), eg = true_energy(dataset, gen);
        const auto ee = energy_error({er.data(), static_cast<std::size_t>(er.size())},
                                     {eg.data(), static_cast<std::size_t>(eg.size())}, spec.e_max);
        add("energy_error_pct", ee.percent, ee.excluded);
    }
    return rows;
}

}  // namespace bfr::metrics
