#pragma once

// Dense time-conditioned vector field v(x, t) with hand-written reverse-mode
// gradients, an Adam optimizer and BFR1 checkpointing.
//
// Batches are n x d matrices, one sample per row. The network input is
// [x ; time_embed(t)], i.e. time conditioning by concatenation.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bfr/container.hpp"
#include "bfr/rng.hpp"

namespace bfr::net {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint32_t { silu = 0, identity = 1 };

struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

struct NetConfig {
    int data_dim = 2;
    std::vector<int> hidden{128, 128};
    int freq_count = 8;
    Activation activation = Activation::silu;
};

struct VectorFieldParams {
    int data_dim = 0;
    int freq_count = 0;
    Activation activation = Activation::silu;
    std::vector<Layer> layers;

    int input_dim() const { return data_dim + 2 * freq_count; }
    std::size_t parameter_count() const;
    bool all_finite() const;

    // Flat view in table order (weights row-major, then bias, per layer).
    Vector flatten() const;
    void assign(const Vector& flat);
};

// Same shapes as the parameters.
using Gradients = std::vector<Layer>;

// Frequency of the j-th (0-based) sin/cos pair: 1, sqrt(2), 2, ...
double frequency(int j);

// [sin(2 pi f_1 t), cos(2 pi f_1 t), ..., sin(2 pi f_k t), cos(2 pi f_k t)].
Vector time_embed(double t, int k);

// Fan-in scaled uniform init; the output layer is zeroed so the initial
// field is identically zero.
VectorFieldParams init_params(const NetConfig& cfg, Rng& rng);
VectorFieldParams zero_params(const NetConfig& cfg);

Matrix forward(const VectorFieldParams& p, const Matrix& x, double t);
Matrix forward(const VectorFieldParams& p, const Matrix& x, const Vector& t);
Vector forward(const VectorFieldParams& p, const Vector& x, double t);

struct LossAndGrad {
    double loss = 0.0;
    Gradients grads;
};

// loss = (1/n) sum_i w_i ||v(x_i, t_i) - f_i||^2, w_i = 1 when weights is empty.
LossAndGrad loss_and_grad(const VectorFieldParams& p, const Matrix& xt, const Vector& t,
                          const Matrix& target, std::span<const double> weights = {});

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptState {
    AdamConfig cfg;
    std::vector<Layer> m;
    std::vector<Layer> v;
    std::uint64_t step = 0;
};

OptState make_opt_state(const VectorFieldParams& p, const AdamConfig& cfg = {});
void opt_step(VectorFieldParams& p, const Gradients& g, OptState& state);

container::File to_container(const VectorFieldParams& p);
VectorFieldParams from_container(const container::File& file);
void save(const VectorFieldParams& p, const std::filesystem::path& path);
VectorFieldParams load(const std::filesystem::path& path);

std::uint64_t checksum(const VectorFieldParams& p);

}  // namespace bfr::net
