#include "bfr/data.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "bfr/container.hpp"
#include "bfr/error.hpp"

namespace bfr::data {

DatasetName parse_dataset_name(const std::string& name) {
    if (name == "eight_gaussians") return DatasetName::eight_gaussians;
    if (name == "two_moons") return DatasetName::two_moons;
    if (name == "checkerboard") return DatasetName::checkerboard;
    if (name == "point_mass") return DatasetName::point_mass;
    if (name == "grid_images") return DatasetName::grid_images;
    throw Error(ErrorCode::invalid_argument, "unknown dataset '" + name + "'");
}

std::string to_string(DatasetName name) {
    switch (name) {
        case DatasetName::eight_gaussians: return "eight_gaussians";
        case DatasetName::two_moons: return "two_moons";
        case DatasetName::checkerboard: return "checkerboard";
        case DatasetName::point_mass: return "point_mass";
        case DatasetName::grid_images: return "grid_images";
    }
    return "unknown";
}

int DatasetSpec::dim() const {
    switch (name) {
        case DatasetName::point_mass: return static_cast<int>(center.size());
        case DatasetName::grid_images: return grid.size();
        default: return 2;
    }
}

DatasetSpec default_spec(DatasetName name) {
    DatasetSpec s;
    s.name = name;
    switch (name) {
        case DatasetName::two_moons: s.sigma_mode = 0.05; break;
        case DatasetName::point_mass: s.sigma_mode = 0.0; break;
        case DatasetName::checkerboard:
        case DatasetName::grid_images: s.sigma_mode = 0.0; break;
        case DatasetName::eight_gaussians: break;
    }
    return s;
}

std::vector<Vector> mode_centers(const DatasetSpec& spec) {
    require(spec.name == DatasetName::eight_gaussians, ErrorCode::unsupported,
            "mode centers exist only for eight_gaussians");
    std::vector<Vector> centers;
    for (int k = 0; k < 8; ++k) {
        const double angle = k * std::numbers::pi / 4.0;
        Vector c(2);
        c << spec.radius * std::cos(angle), spec.radius * std::sin(angle);
        centers.push_back(c);
    }
    return centers;
}

double min_mode_distance(const DatasetSpec& spec) {
    const auto centers = mode_centers(spec);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t j = i + 1; j < centers.size(); ++j)
            best = std::min(best, (centers[i] - centers[j]).norm());
    return best;
}

namespace {

Matrix make_grid_images(const DatasetSpec& spec, Rng& rng) {
    const GridShape g = spec.grid;
    require(g.height >= 2 && g.width >= 2, ErrorCode::invalid_argument, "grid must be at least 2x2");
    Matrix out = Matrix::Constant(static_cast<Eigen::Index>(spec.n), g.size(), -1.0);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const bool horizontal = rng.uniform() < 0.5;
        // Bar intensity is a quantized byte so the images survive IDX round-trips.
        const int level = 128 + static_cast<int>(rng.index(128));
        const double value = level / 127.5 - 1.0;
        const int span = horizontal ? g.height : g.width;
        const int pos = static_cast<int>(rng.index(static_cast<std::size_t>(span)));
        for (int r = 0; r < g.height; ++r)
            for (int c = 0; c < g.width; ++c)
                if ((horizontal ? r : c) == pos) out(static_cast<Eigen::Index>(i), r * g.width + c) = value;
    }
    return out;
}

}  // namespace

Matrix make_dataset(const DatasetSpec& spec) {
    require(spec.n >= 1, ErrorCode::invalid_argument, "dataset size must be >= 1");
    require(spec.sigma_mode >= 0.0, ErrorCode::invalid_argument, "sigma_mode must be >= 0");
    Rng rng(spec.seed);
    const auto n = static_cast<Eigen::Index>(spec.n);
    switch (spec.name) {
        case DatasetName::eight_gaussians: {
            const auto centers = mode_centers(spec);
            Matrix x(n, 2);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto& c = centers[rng.index(8)];
                x(i, 0) = c(0) + spec.sigma_mode * rng.normal();
                x(i, 1) = c(1) + spec.sigma_mode * rng.normal();
            }
            return x;
        }
        case DatasetName::two_moons: {
            Matrix x(n, 2);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double theta = std::numbers::pi * rng.uniform();
                if (rng.uniform() < 0.5) {
                    x(i, 0) = std::cos(theta);
                    x(i, 1) = std::sin(theta);
                } else {
                    x(i, 0) = 1.0 - std::cos(theta);
                    x(i, 1) = 0.5 - std::sin(theta);
                }
                x(i, 0) += spec.sigma_mode * rng.normal();
                x(i, 1) += spec.sigma_mode * rng.normal();
            }
            return x;
        }
        case DatasetName::checkerboard: {
            Matrix x(n, 2);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double x1 = 4.0 * rng.uniform() - 2.0;
                const double shift = rng.uniform() < 0.5 ? 0.0 : 2.0;
                const double col = std::floor(x1);
                const double parity = col - 2.0 * std::floor(col / 2.0);
                x(i, 0) = 2.0 * x1;
                x(i, 1) = 2.0 * (rng.uniform() - shift + parity);
            }
            return x;
        }
        case DatasetName::point_mass: {
            require(spec.center.size() >= 1, ErrorCode::invalid_argument, "point_mass needs a center");
            Matrix x(n, spec.center.size());
            for (Eigen::Index i = 0; i < n; ++i) {
                x.row(i) = spec.center.transpose();
                if (spec.sigma_mode > 0.0)
                    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) += spec.sigma_mode * rng.normal();
            }
            return x;
        }
        case DatasetName::grid_images: return make_grid_images(spec, rng);
    }
    throw Error(ErrorCode::invalid_argument, "unknown dataset");
}

void validate(const AugSpec& aug) {
    require(std::isfinite(aug.sigma) && aug.sigma >= 0.0, ErrorCode::invalid_argument,
            "augmentation sigma must be finite and >= 0");
    require(aug.blur_width >= 1 && aug.blur_width % 2 == 1, ErrorCode::invalid_argument,
            "blur width must be an odd integer >= 1");
    require(aug.probability >= 0.0 && aug.probability <= 1.0, ErrorCode::invalid_argument,
            "augmentation probability must lie in [0, 1]");
}

Matrix box_blur(const Matrix& images, GridShape grid, int width) {
    require(width >= 1 && width % 2 == 1, ErrorCode::invalid_argument, "blur width must be odd");
    require(images.cols() == grid.size(), ErrorCode::dimension_mismatch, "image width does not match grid");
    if (width == 1) return images;
    const int r = width / 2;
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    Matrix out(images.rows(), images.cols());
    const double norm = 1.0 / (static_cast<double>(width) * width);
    for (Eigen::Index i = 0; i < images.rows(); ++i)
        for (int y = 0; y < grid.height; ++y)
            for (int x = 0; x < grid.width; ++x) {
                double acc = 0.0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx)
                        acc += images(i, clamp(y + dy, grid.height) * grid.width + clamp(x + dx, grid.width));
                out(i, y * grid.width + x) = acc * norm;
            }
    return out;
}

Matrix data_aug(const Matrix& batch, const AugSpec& aug, Rng& rng, std::optional<GridShape> grid,
                Matrix* noise_log) {
    validate(aug);
    require(aug.blur_width == 1 || grid.has_value(), ErrorCode::invalid_argument,
            "blur requested on vector data");
    if (noise_log) *noise_log = Matrix::Zero(batch.rows(), batch.cols());
    if (aug.is_identity()) return batch;
    Matrix out = batch;
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        if (rng.uniform() >= aug.probability) continue;
        if (aug.blur_width > 1) out.row(i) = box_blur(batch.row(i), *grid, aug.blur_width);
        if (aug.sigma > 0.0) {
            for (Eigen::Index j = 0; j < batch.cols(); ++j) {
                const double eps = rng.normal();
                if (noise_log) (*noise_log)(i, j) = eps;
                out(i, j) += aug.sigma * eps;
            }
        }
    }
    return out;
}

IdxImages parse_idx(std::string_view bytes) {
    auto be32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v = (v << 8) | static_cast<unsigned char>(bytes[off + k]);
        return v;
    };
    if (bytes.size() < 4) throw Error(ErrorCode::truncated_payload, "IDX header truncated");
    const std::uint32_t magic = be32(0);
    if (magic != kIdxImageMagic)
        throw Error(ErrorCode::wrong_magic, "IDX magic " + std::to_string(magic) + " is not an image file");
    if (bytes.size() < 16) throw Error(ErrorCode::truncated_payload, "IDX header truncated");
    const std::uint64_t count = be32(4), rows = be32(8), cols = be32(12);
    const std::uint64_t pixels = rows * cols;
    constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;
    if (rows > 0xffff || cols > 0xffff || (pixels > 0 && count > kMaxElements / pixels))
        throw Error(ErrorCode::dimension_overflow, "IDX dimensions too large");
    const std::uint64_t total = count * pixels;
    if (bytes.size() - 16 < total)
        throw Error(ErrorCode::truncated_payload, "IDX payload shorter than declared dimensions");
    IdxImages out;
    out.shape = {static_cast<int>(rows), static_cast<int>(cols)};
    out.images.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
    std::size_t k = 16;
    for (Eigen::Index i = 0; i < out.images.rows(); ++i)
        for (Eigen::Index j = 0; j < out.images.cols(); ++j)
            out.images(i, j) = static_cast<unsigned char>(bytes[k++]) / 127.5 - 1.0;
    return out;
}

IdxImages load_idx(const std::filesystem::path& path) {
    return parse_idx(container::read_bytes(path));
}

void write_idx(const std::filesystem::path& path, const Matrix& images, GridShape shape) {
    require(images.cols() == shape.size(), ErrorCode::dimension_mismatch, "image width does not match grid");
    std::string out;
    auto be32 = [&](std::uint32_t v) {
        for (int k = 3; k >= 0; --k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    };
    be32(kIdxImageMagic);
    be32(static_cast<std::uint32_t>(images.rows()));
    be32(static_cast<std::uint32_t>(shape.height));
    be32(static_cast<std::uint32_t>(shape.width));
    for (Eigen::Index i = 0; i < images.rows(); ++i)
        for (Eigen::Index j = 0; j < images.cols(); ++j) {
            const double b = std::round((std::clamp(images(i, j), -1.0, 1.0) + 1.0) * 127.5);
            out.push_back(static_cast<char>(static_cast<unsigned char>(b)));
        }
    container::write_bytes(path, out);
}

}  // namespace bfr::data
