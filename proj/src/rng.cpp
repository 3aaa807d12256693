#include "bfr/rng.hpp"

#include <vector>

namespace bfr {

Rng Rng::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * tags.size());
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto t : tags) push(t);
    std::seed_seq seq(words.begin(), words.end());
    std::uint64_t s[2];
    std::uint32_t out[4];
    seq.generate(out, out + 4);
    s[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
    s[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    return Rng(s[0] ^ (s[1] * 0x9e3779b97f4a7c15ULL));
}

std::size_t Rng::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

Eigen::MatrixXd Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    // Row-major fill order so a row's draws do not depend on the batch size.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
}

Eigen::VectorXd Rng::uniform_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform();
    return v;
}

}  // namespace bfr
