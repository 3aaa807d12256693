#include "bfr/net.hpp"

#include <cmath>
#include <numbers>

#include "bfr/error.hpp"

namespace bfr::net {

namespace {

constexpr container::Tag kNetMetaTag = container::make_tag("NETM");

Matrix activate(const Matrix& z, Activation act) {
    if (act == Activation::identity) return z;
    return z.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

Matrix activate_grad(const Matrix& z, Activation act) {
    if (act == Activation::identity) return Matrix::Ones(z.rows(), z.cols());
    return z.unaryExpr([](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
    });
}

Matrix embed_batch(const Vector& t, int k) {
    Matrix e(t.size(), 2 * k);
    for (Eigen::Index i = 0; i < t.size(); ++i) e.row(i) = time_embed(t(i), k).transpose();
    return e;
}

Matrix network_input(const VectorFieldParams& p, const Matrix& x, const Vector& t) {
    require(x.cols() == p.data_dim, ErrorCode::dimension_mismatch,
            "input has " + std::to_string(x.cols()) + " columns, network expects " +
                std::to_string(p.data_dim));
    require(t.size() == x.rows(), ErrorCode::dimension_mismatch, "one time value per row required");
    require(x.allFinite(), ErrorCode::non_finite, "network input contains non-finite values");
    Matrix in(x.rows(), p.input_dim());
    in.leftCols(p.data_dim) = x;
    in.rightCols(2 * p.freq_count) = embed_batch(t, p.freq_count);
    return in;
}

// Pre-activations of every layer; zs.back() is the network output.
std::vector<Matrix> run(const VectorFieldParams& p, const Matrix& input) {
    std::vector<Matrix> zs;
    zs.reserve(p.layers.size());
    Matrix a = input;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        Matrix z = a * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        if (l + 1 < p.layers.size()) a = activate(z, p.activation);
        zs.push_back(std::move(z));
    }
    return zs;
}

}  // namespace

std::size_t VectorFieldParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

bool VectorFieldParams::all_finite() const {
    for (const auto& l : layers)
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

Vector VectorFieldParams::flatten() const {
    Vector flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers) {
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < l.weight.cols(); ++j) flat(k++) = l.weight(i, j);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) flat(k++) = l.bias(i);
    }
    return flat;
}

void VectorFieldParams::assign(const Vector& flat) {
    require(flat.size() == static_cast<Eigen::Index>(parameter_count()),
            ErrorCode::dimension_mismatch, "flat parameter vector has wrong length");
    Eigen::Index k = 0;
    for (auto& l : layers) {
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = flat(k++);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = flat(k++);
    }
}

double frequency(int j) { return std::pow(std::numbers::sqrt2, j); }

Vector time_embed(double t, int k) {
    require(k >= 1, ErrorCode::invalid_argument, "time embedding needs k >= 1");
    require(t >= 0.0 && t <= 1.0, ErrorCode::invalid_argument,
            "time " + std::to_string(t) + " outside [0, 1]");
    Vector e(2 * k);
    for (int j = 0; j < k; ++j) {
        const double w = 2.0 * std::numbers::pi * frequency(j) * t;
        e(2 * j) = std::sin(w);
        e(2 * j + 1) = std::cos(w);
    }
    return e;
}

VectorFieldParams zero_params(const NetConfig& cfg) {
    require(cfg.data_dim >= 1 && cfg.freq_count >= 1, ErrorCode::invalid_argument,
            "network needs data_dim >= 1 and freq_count >= 1");
    VectorFieldParams p;
    p.data_dim = cfg.data_dim;
    p.freq_count = cfg.freq_count;
    p.activation = cfg.activation;
    int in = p.input_dim();
    auto widths = cfg.hidden;
    widths.push_back(cfg.data_dim);
    for (int out : widths) {
        require(out >= 1, ErrorCode::invalid_argument, "layer widths must be positive");
        p.layers.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
        in = out;
    }
    return p;
}

VectorFieldParams init_params(const NetConfig& cfg, Rng& rng) {
    VectorFieldParams p = zero_params(cfg);
    for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
                layer.weight(i, j) = rng.uniform(-bound, bound);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = rng.uniform(-bound, bound);
    }
    return p;
}

Matrix forward(const VectorFieldParams& p, const Matrix& x, const Vector& t) {
    return run(p, network_input(p, x, t)).back();
}

Matrix forward(const VectorFieldParams& p, const Matrix& x, double t) {
    return forward(p, x, Vector::Constant(x.rows(), t));
}

Vector forward(const VectorFieldParams& p, const Vector& x, double t) {
    Matrix row = x.transpose();
    return forward(p, row, t).row(0).transpose();
}

LossAndGrad loss_and_grad(const VectorFieldParams& p, const Matrix& xt, const Vector& t,
                          const Matrix& target, std::span<const double> weights) {
    const Eigen::Index n = xt.rows();
    require(n > 0, ErrorCode::invalid_argument, "empty batch");
    require(target.rows() == n && target.cols() == p.data_dim, ErrorCode::dimension_mismatch,
            "target shape does not match batch");
    require(target.allFinite(), ErrorCode::non_finite, "targets contain non-finite values");
    require(weights.empty() || static_cast<Eigen::Index>(weights.size()) == n,
            ErrorCode::dimension_mismatch, "one weight per sample required");

    const Matrix input = network_input(p, xt, t);
    const auto zs = run(p, input);
    Matrix residual = zs.back() - target;

    Vector w = Vector::Ones(n);
    if (!weights.empty()) w = Eigen::Map<const Vector>(weights.data(), n);

    LossAndGrad out;
    out.loss = (residual.rowwise().squaredNorm().array() * w.array()).sum() / static_cast<double>(n);

    Matrix g = (2.0 / static_cast<double>(n)) * (w.asDiagonal() * residual);
    out.grads.resize(p.layers.size());
    for (std::size_t l = p.layers.size(); l-- > 0;) {
        const Matrix a_prev = l == 0 ? input : activate(zs[l - 1], p.activation);
        out.grads[l].weight = g.transpose() * a_prev;
        out.grads[l].bias = g.colwise().sum().transpose();
        if (l > 0) g = (g * p.layers[l].weight).cwiseProduct(activate_grad(zs[l - 1], p.activation));
    }
    return out;
}

OptState make_opt_state(const VectorFieldParams& p, const AdamConfig& cfg) {
    OptState s;
    s.cfg = cfg;
    for (const auto& l : p.layers) {
        s.m.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
        s.v.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    return s;
}

void opt_step(VectorFieldParams& p, const Gradients& g, OptState& s) {
    require(g.size() == p.layers.size() && s.m.size() == p.layers.size(),
            ErrorCode::dimension_mismatch, "gradient/optimizer layer count mismatch");
    for (std::size_t l = 0; l < g.size(); ++l) {
        require(g[l].weight.rows() == p.layers[l].weight.rows() &&
                    g[l].weight.cols() == p.layers[l].weight.cols() &&
                    g[l].bias.size() == p.layers[l].bias.size(),
                ErrorCode::dimension_mismatch, "gradient shape mismatch in layer " + std::to_string(l));
        require(g[l].weight.allFinite() && g[l].bias.allFinite(), ErrorCode::non_finite,
                "non-finite gradient in layer " + std::to_string(l));
    }
    ++s.step;
    const auto& c = s.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
        m = c.beta1 * m + (1.0 - c.beta1) * grad;
        v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
        param.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
    };
    for (std::size_t l = 0; l < g.size(); ++l) {
        update(p.layers[l].weight, g[l].weight, s.m[l].weight, s.v[l].weight);
        update(p.layers[l].bias, g[l].bias, s.m[l].bias, s.v[l].bias);
    }
}

container::File to_container(const VectorFieldParams& p) {
    container::File f;
    for (const auto& l : p.layers) {
        f.weights.push_back(l.weight);
        f.biases.push_back(l.bias);
    }
    if (p.activation != Activation::silu) {
        container::ByteWriter w;
        w.u32(static_cast<std::uint32_t>(p.activation));
        f.sections.push_back({kNetMetaTag, w.take()});
    }
    return f;
}

VectorFieldParams from_container(const container::File& f) {
    require(!f.weights.empty(), ErrorCode::missing_section, "container holds no network layers");
    VectorFieldParams p;
    for (std::size_t l = 0; l < f.weights.size(); ++l) {
        if (l > 0)
            require(f.weights[l].cols() == f.weights[l - 1].rows(), ErrorCode::dimension_mismatch,
                    "layer " + std::to_string(l) + " input width does not chain");
        p.layers.push_back({f.weights[l], f.biases[l]});
    }
    p.data_dim = static_cast<int>(f.weights.back().rows());
    const auto extra = f.weights.front().cols() - p.data_dim;
    require(extra >= 2 && extra % 2 == 0, ErrorCode::dimension_mismatch,
            "first layer width is not data_dim + 2k");
    p.freq_count = static_cast<int>(extra / 2);
    if (const auto* meta = f.find(kNetMetaTag)) {
        container::ByteReader r(meta->payload);
        const auto act = r.u32();
        require(act <= 1, ErrorCode::unsupported, "unknown activation tag");
        p.activation = static_cast<Activation>(act);
    }
    return p;
}

void save(const VectorFieldParams& p, const std::filesystem::path& path) {
    container::save(to_container(p), path);
}

VectorFieldParams load(const std::filesystem::path& path) {
    return from_container(container::load(path));
}

std::uint64_t checksum(const VectorFieldParams& p) {
    return container::fnv1a(container::encode(to_container(p)));
}

}  // namespace bfr::net
