#include "bfr/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "bfr/error.hpp"

namespace bfr::container {

namespace {

std::string tag_name(Tag t) { return std::string(t.begin(), t.end()); }

}  // namespace

const Section* File::find(Tag tag) const {
    for (const auto& s : sections)
        if (s.tag == tag) return &s;
    return nullptr;
}

const Section& File::require(Tag tag) const {
    const Section* s = find(tag);
    if (!s) throw Error(ErrorCode::missing_section, "section " + tag_name(tag) + " not present");
    return *s;
}

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
}

void ByteReader::need(std::size_t n) const {
    if (data_.size() - pos_ < n)
        throw Error(ErrorCode::truncated_payload,
                    "needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                        ", have " + std::to_string(data_.size() - pos_));
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string_view ByteReader::bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
}

Eigen::MatrixXd ByteReader::f64s(Eigen::Index rows, Eigen::Index cols) {
    need(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 8);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f64();
    return m;
}

std::string encode(const File& file) {
    ByteWriter w;
    w.bytes(std::string_view(kMagic.data(), kMagic.size()));
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(file.weights.size()));
    for (const auto& W : file.weights) {
        w.u32(static_cast<std::uint32_t>(W.rows()));
        w.u32(static_cast<std::uint32_t>(W.cols()));
    }
    for (std::size_t l = 0; l < file.weights.size(); ++l) {
        w.f64s(file.weights[l]);
        for (Eigen::Index i = 0; i < file.biases[l].size(); ++i) w.f64(file.biases[l](i));
    }
    for (const auto& s : file.sections) {
        w.bytes(std::string_view(s.tag.data(), s.tag.size()));
        w.u64(s.payload.size());
        w.bytes(s.payload);
    }
    return w.take();
}

File decode(std::string_view bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
        throw Error(ErrorCode::bad_magic, "not a BFR1 container");
    ByteReader r(bytes.substr(4));
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw Error(ErrorCode::version_mismatch,
                    "container version " + std::to_string(version) + ", expected " +
                        std::to_string(kVersion));
    const std::uint32_t count = r.u32();
    // Each table entry takes 8 bytes; reject counts the file cannot hold.
    if (static_cast<std::uint64_t>(count) * 8 > r.remaining())
        throw Error(ErrorCode::truncated_payload, "layer table larger than file");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(count);
    for (auto& [rows, cols] : shapes) {
        rows = r.u32();
        cols = r.u32();
    }
    File file;
    file.weights.reserve(count);
    file.biases.reserve(count);
    for (auto [rows, cols] : shapes) {
        file.weights.push_back(r.f64s(rows, cols));
        file.biases.push_back(r.f64s(rows, 1).col(0));
    }
    while (r.remaining() > 0) {
        Section s;
        auto tag = r.bytes(4);
        std::copy(tag.begin(), tag.end(), s.tag.begin());
        const std::uint64_t len = r.u64();
        if (len > r.remaining())
            throw Error(ErrorCode::truncated_payload, "section " + tag_name(s.tag) + " truncated");
        s.payload = std::string(r.bytes(static_cast<std::size_t>(len)));
        file.sections.push_back(std::move(s));
    }
    return file;
}

void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_failure, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace bfr::container
