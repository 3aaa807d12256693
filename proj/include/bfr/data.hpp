#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bfr/rng.hpp"

namespace bfr::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class DatasetName { eight_gaussians, two_moons, checkerboard, point_mass, grid_images };

DatasetName parse_dataset_name(const std::string& name);
std::string to_string(DatasetName name);

struct GridShape {
    int height = 0;
    int width = 0;
    int size() const { return height * width; }
};

struct DatasetSpec {
    DatasetName name = DatasetName::eight_gaussians;
    std::size_t n = 10000;
    std::uint64_t seed = 0;
    double radius = 4.0;      // eight_gaussians circle radius
    double sigma_mode = 0.2;  // per-mode std (eight_gaussians, point_mass), noise (two_moons)
    Vector center = Vector::Zero(2);  // point_mass location
    GridShape grid{8, 8};     // grid_images

    int dim() const;
};

// Defaults per dataset: eight_gaussians radius 4 / sigma 0.2, two_moons noise 0.05,
// point_mass exact copies of the origin.
DatasetSpec default_spec(DatasetName name);

// Raw (unstandardized) samples, one per row. Pure function of the spec.
Matrix make_dataset(const DatasetSpec& spec);

// Mode centers of eight_gaussians, at angles k * 45 degrees.
std::vector<Vector> mode_centers(const DatasetSpec& spec);

// Minimum distance between distinct mode centers (eight_gaussians only).
double min_mode_distance(const DatasetSpec& spec);

struct AugSpec {
    double sigma = 0.0;       // additive N(0, sigma^2 I)
    int blur_width = 1;       // odd box width, grid data only; 1 = identity
    double probability = 1.0; // per-sample application probability

    bool is_identity() const { return sigma == 0.0 && blur_width == 1; }
};

void validate(const AugSpec& aug);

// Per sample, with probability aug.probability: box blur (grids) then
// additive Gaussian noise. When noise_log is given it receives the standard
// normal draws used (zero rows where the augmentation was skipped).
Matrix data_aug(const Matrix& batch, const AugSpec& aug, Rng& rng,
                std::optional<GridShape> grid = std::nullopt, Matrix* noise_log = nullptr);

// Normalized box blur with clamp-to-edge borders. width must be odd.
Matrix box_blur(const Matrix& images, GridShape grid, int width);

struct IdxImages {
    Matrix images;  // n x (rows * cols), values in [-1, 1]
    GridShape shape;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

IdxImages load_idx(const std::filesystem::path& path);
IdxImages parse_idx(std::string_view bytes);
void write_idx(const std::filesystem::path& path, const Matrix& images, GridShape shape);

}  // namespace bfr::data
