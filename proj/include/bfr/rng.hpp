#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace bfr {

// Seeded random stream. Independent purposes (data indices, noise draws,
// time samples) get their own stream via derive() so that changing how
// many numbers one purpose consumes never shifts another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    std::size_t index(std::size_t n);
    std::uint64_t next_u64() { return engine_(); }

    Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
    Eigen::VectorXd uniform_vector(Eigen::Index n);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace bfr
