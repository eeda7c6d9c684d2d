#include "gsedit/lora.hpp"

#include "gsedit/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

namespace gsedit {

LowRankDelta init_delta(int d_in, int d_out, int rank, std::uint64_t seed) {
    if (rank <= 0 || rank > std::min(d_in, d_out)) {
        throw InvalidArgumentError("LoRA rank must satisfy 0 < r <= min(d_in, d_out)");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
    LowRankDelta d;
    d.a.resize(rank, d_in);
    for (Eigen::Index i = 0; i < d.a.size(); ++i) d.a.data()[i] = normal(rng);
    d.b = Eigen::MatrixXd::Zero(d_out, rank);
    d.scaling = 1.0;
    return d;
}

void LinearGrads::zero_like(const AdaptedLinear& layer, bool with_base) {
    a = Eigen::MatrixXd::Zero(layer.delta().a.rows(), layer.delta().a.cols());
    b = Eigen::MatrixXd::Zero(layer.delta().b.rows(), layer.delta().b.cols());
    if (with_base) {
        weight = Eigen::MatrixXd::Zero(layer.d_out(), layer.d_in());
        bias = Eigen::VectorXd::Zero(layer.d_out());
    } else {
        weight.resize(0, 0);
        bias.resize(0);
    }
}

AdaptedLinear::AdaptedLinear(Eigen::MatrixXd weight, Eigen::VectorXd bias, LowRankDelta delta)
    : weight_(std::move(weight)), bias_(std::move(bias)), delta_(std::move(delta)) {
    if (bias_.size() == 0) bias_ = Eigen::VectorXd::Zero(weight_.rows());
    if (bias_.size() != weight_.rows() || delta_.d_in() != weight_.cols() || delta_.d_out() != weight_.rows() ||
        delta_.b.cols() != delta_.a.rows()) {
        throw DimensionError("adapted linear: base and delta shapes disagree");
    }
}

void AdaptedLinear::set_base(Eigen::MatrixXd weight, Eigen::VectorXd bias) {
    if (weight.rows() != weight_.rows() || weight.cols() != weight_.cols() || bias.size() != bias_.size()) {
        throw DimensionError("adapted linear: replacement base has a different shape");
    }
    weight_ = std::move(weight);
    bias_ = std::move(bias);
}

Eigen::VectorXd AdaptedLinear::forward(const Eigen::VectorXd& x) const {
    if (x.size() != weight_.cols()) throw DimensionError("adapted linear: input length mismatch");
    return weight_ * x + delta_.scaling * (delta_.b * (delta_.a * x)) + bias_;
}

FeatureMatrix AdaptedLinear::forward(const FeatureMatrix& x) const {
    if (x.cols() != weight_.cols()) throw DimensionError("adapted linear: input width mismatch");
    FeatureMatrix y = x * weight_.transpose();
    y += delta_.scaling * ((x * delta_.a.transpose()) * delta_.b.transpose());
    y.rowwise() += bias_.transpose();
    return y;
}

FeatureMatrix AdaptedLinear::backward(const FeatureMatrix& x, const FeatureMatrix& d_y, LinearGrads& grads,
                                      bool with_base) const {
    const FeatureMatrix h = x * delta_.a.transpose();                      // tokens x r
    const FeatureMatrix d_h = delta_.scaling * (d_y * delta_.b);           // tokens x r
    grads.b += delta_.scaling * (d_y.transpose() * h);
    grads.a += d_h.transpose() * x;
    if (with_base) {
        grads.weight += d_y.transpose() * x;
        grads.bias += d_y.colwise().sum().transpose();
    }
    return d_y * weight_ + d_h * delta_.a;
}

Eigen::MatrixXd merge_delta(const AdaptedLinear& layer) {
    const auto& d = layer.delta();
    return layer.weight() + d.scaling * (d.b * d.a);
}

namespace {

constexpr char kLoraMagic[4] = {'L', 'O', 'R', 'A'};
constexpr std::uint32_t kLoraVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (in.size() - pos < sizeof(T)) throw TruncatedPayloadError("LoRA checkpoint truncated");
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

void put_matrix(std::vector<std::uint8_t>& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<float>(out, static_cast<float>(m(r, c)));
    }
}

Eigen::MatrixXd take_matrix(const std::vector<std::uint8_t>& in, std::size_t& pos, std::uint32_t rows,
                            std::uint32_t cols) {
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = take<float>(in, pos);
    }
    return m;
}

} // namespace

void save_deltas(const std::vector<NamedDelta>& deltas, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out(kLoraMagic, kLoraMagic + 4);
    put<std::uint32_t>(out, kLoraVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(deltas.size()));
    for (const auto& nd : deltas) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(nd.name.size()));
        out.insert(out.end(), nd.name.begin(), nd.name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(nd.delta.d_in()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(nd.delta.d_out()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(nd.delta.rank()));
        put<float>(out, static_cast<float>(nd.delta.scaling));
        put_matrix(out, nd.delta.a);
        put_matrix(out, nd.delta.b);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

std::vector<NamedDelta> load_deltas(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    const std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < 12 || std::memcmp(in.data(), kLoraMagic, 4) != 0) {
        throw MalformedHeaderError("LoRA checkpoint magic is not LORA");
    }
    std::size_t pos = 4;
    const auto version = take<std::uint32_t>(in, pos);
    if (version != kLoraVersion) throw UnsupportedVersionError("unsupported LoRA checkpoint version");
    const auto count = take<std::uint32_t>(in, pos);
    std::vector<NamedDelta> deltas;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedDelta nd;
        const auto len = take<std::uint32_t>(in, pos);
        if (in.size() - pos < len) throw TruncatedPayloadError("LoRA checkpoint truncated");
        nd.name.assign(reinterpret_cast<const char*>(in.data() + pos), len);
        pos += len;
        const auto d_in = take<std::uint32_t>(in, pos);
        const auto d_out = take<std::uint32_t>(in, pos);
        const auto rank = take<std::uint32_t>(in, pos);
        nd.delta.scaling = take<float>(in, pos);
        nd.delta.a = take_matrix(in, pos, rank, d_in);
        nd.delta.b = take_matrix(in, pos, d_out, rank);
        deltas.push_back(std::move(nd));
    }
    return deltas;
}

} // namespace gsedit
