#include "gsedit/denoiser.hpp"

#include "gsedit/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

namespace gsedit {

FeatureMatrix PlainAttention::attend(int, std::size_t view, std::span<const FeatureMatrix> q,
                                     std::span<const FeatureMatrix> k, std::span<const FeatureMatrix> v) {
    return sdp_attention(q[view], k[view], v[view]);
}

namespace {

AdaptedLinear random_linear(int d_in, int d_out, double gain, int rank, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(d_in)));
    Eigen::MatrixXd w(d_out, d_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    return AdaptedLinear(std::move(w), Eigen::VectorXd::Zero(d_out),
                         init_delta(d_in, d_out, std::min({rank, d_in, d_out}), rng()));
}

FeatureMatrix relu(const FeatureMatrix& x) { return x.cwiseMax(0.0); }

} // namespace

ToyDenoiser::ToyDenoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.image_size <= 0 || cfg.patch <= 0 || cfg.image_size % cfg.patch != 0) {
        throw InvalidArgumentError("denoiser image size must be a positive multiple of the patch size");
    }
    if (cfg.blocks <= 0 || cfg.model_dim <= 0 || cfg.ff_dim <= 0 || cfg.num_labels <= 0 || cfg.lora_rank <= 0) {
        throw InvalidArgumentError("denoiser dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    const int d = cfg.model_dim;
    linears_.push_back(random_linear(cfg.input_dim(), d, 1.0, cfg.lora_rank, rng));
    names_.push_back("embed");
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        linears_.push_back(random_linear(d, d, 1.0, cfg.lora_rank, rng));
        names_.push_back(prefix + "q");
        linears_.push_back(random_linear(d, d, 1.0, cfg.lora_rank, rng));
        names_.push_back(prefix + "k");
        linears_.push_back(random_linear(d, d, 1.0, cfg.lora_rank, rng));
        names_.push_back(prefix + "v");
        linears_.push_back(random_linear(d, d, 0.5, cfg.lora_rank, rng));
        names_.push_back(prefix + "o");
        linears_.push_back(random_linear(d, cfg.ff_dim, 1.0, cfg.lora_rank, rng));
        names_.push_back(prefix + "ff1");
        linears_.push_back(random_linear(cfg.ff_dim, d, 0.5, cfg.lora_rank, rng));
        names_.push_back(prefix + "ff2");
    }
    linears_.push_back(random_linear(d, cfg.patch_dim(), 0.5, cfg.lora_rank, rng));
    names_.push_back("head");

    std::normal_distribution<double> normal(0.0, 0.5);
    label_embedding_.resize(cfg.num_labels, cfg.label_dim);
    for (Eigen::Index i = 0; i < label_embedding_.size(); ++i) label_embedding_.data()[i] = normal(rng);
}

std::size_t ToyDenoiser::parameter_count() const {
    std::size_t n = label_embedding_.size();
    for (const auto& l : linears_) {
        n += l.weight().size() + l.bias().size() + l.delta().a.size() + l.delta().b.size();
    }
    return n;
}

bool ToyDenoiser::has_trainable_adapters() const {
    return std::any_of(linears_.begin(), linears_.end(), [](const AdaptedLinear& l) { return l.trainable; });
}

FeatureMatrix ToyDenoiser::patchify(const Image& img) const {
    if (img.width != cfg_.image_size || img.height != cfg_.image_size || img.channels != cfg_.channels) {
        throw DimensionError("denoiser latent must be " + std::to_string(cfg_.image_size) + "x" +
                             std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.channels));
    }
    const int g = cfg_.grid(), p = cfg_.patch, c = cfg_.channels;
    FeatureMatrix tokens(cfg_.tokens(), cfg_.patch_dim());
    for (int by = 0; by < g; ++by) {
        for (int bx = 0; bx < g; ++bx) {
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int ch = 0; ch < c; ++ch) {
                        tokens(by * g + bx, (dy * p + dx) * c + ch) = img.at(bx * p + dx, by * p + dy, ch);
                    }
                }
            }
        }
    }
    return tokens;
}

Image ToyDenoiser::unpatchify(const FeatureMatrix& tokens) const {
    const int g = cfg_.grid(), p = cfg_.patch, c = cfg_.channels;
    Image img(cfg_.image_size, cfg_.image_size, c);
    for (int by = 0; by < g; ++by) {
        for (int bx = 0; bx < g; ++bx) {
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int ch = 0; ch < c; ++ch) {
                        img.at(bx * p + dx, by * p + dy, ch) = tokens(by * g + bx, (dy * p + dx) * c + ch);
                    }
                }
            }
        }
    }
    return img;
}

FeatureMatrix ToyDenoiser::input_features(const DenoiserInput& input) const {
    if (!input.latent) throw InvalidArgumentError("denoiser input has no latent");
    if (input.label < 0 || input.label >= cfg_.num_labels) throw InvalidArgumentError("garment label out of range");
    if (input.t < 0 || input.t >= cfg_.timesteps) throw InvalidArgumentError("timestep out of range");
    const int pd = cfg_.patch_dim(), ld = cfg_.label_dim, g = cfg_.grid();
    FeatureMatrix x(cfg_.tokens(), cfg_.input_dim());
    x.leftCols(pd) = patchify(*input.latent);
    x.middleCols(pd, ld).rowwise() = label_embedding_.row(input.label);

    const double tn = static_cast<double>(input.t) / cfg_.timesteps;
    Eigen::RowVectorXd tf(DenoiserConfig::kTimeFeatures);
    for (int f = 0; f < DenoiserConfig::kTimeFeatures / 2; ++f) {
        const double w = std::numbers::pi * std::pow(2.0, f) * tn;
        tf[2 * f] = std::sin(w);
        tf[2 * f + 1] = std::cos(w);
    }
    x.middleCols(pd + ld, DenoiserConfig::kTimeFeatures).rowwise() = tf;

    const int pos_col = pd + ld + DenoiserConfig::kTimeFeatures;
    for (int by = 0; by < g; ++by) {
        for (int bx = 0; bx < g; ++bx) {
            const double u = (bx + 0.5) / g, v = (by + 0.5) / g;
            auto row = x.row(by * g + bx);
            row[pos_col] = std::sin(std::numbers::pi * u);
            row[pos_col + 1] = std::cos(std::numbers::pi * u);
            row[pos_col + 2] = std::sin(std::numbers::pi * v);
            row[pos_col + 3] = std::cos(std::numbers::pi * v);
        }
    }
    return x;
}

std::vector<Image> ToyDenoiser::predict(std::span<const DenoiserInput> batch, AttentionPolicy& policy) const {
    const std::size_t n = batch.size();
    std::vector<FeatureMatrix> h(n), q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = embed().forward(input_features(batch[i]));
    for (int b = 0; b < cfg_.blocks; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            q[i] = block_linear(b, kQ).forward(h[i]);
            k[i] = block_linear(b, kK).forward(h[i]);
            v[i] = block_linear(b, kV).forward(h[i]);
        }
        // Every view's K/V for this block is complete before any view attends.
        std::vector<FeatureMatrix> attended(n);
        for (std::size_t i = 0; i < n; ++i) attended[i] = policy.attend(b, i, q, k, v);
        for (std::size_t i = 0; i < n; ++i) {
            h[i] += block_linear(b, kO).forward(attended[i]);
            h[i] += block_linear(b, kFf2).forward(relu(block_linear(b, kFf1).forward(h[i])));
        }
    }
    std::vector<Image> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(unpatchify(head().forward(h[i])));
    return out;
}

Image ToyDenoiser::predict(const DenoiserInput& input) const {
    PlainAttention plain;
    return predict(std::span<const DenoiserInput>(&input, 1), plain).front();
}

Image ToyDenoiser::forward_train(const DenoiserInput& input, DenoiserTape& tape) const {
    tape.label = input.label;
    tape.input = input_features(input);
    tape.blocks.resize(cfg_.blocks);
    FeatureMatrix h = embed().forward(tape.input);
    for (int b = 0; b < cfg_.blocks; ++b) {
        auto& blk = tape.blocks[b];
        blk.h_in = h;
        blk.q = block_linear(b, kQ).forward(h);
        blk.k = block_linear(b, kK).forward(h);
        blk.v = block_linear(b, kV).forward(h);
        blk.attn = sdp_attention(blk.q, blk.k, blk.v);
        blk.h_mid = blk.h_in + block_linear(b, kO).forward(blk.attn);
        blk.ff_pre = block_linear(b, kFf1).forward(blk.h_mid);
        blk.ff_act = relu(blk.ff_pre);
        h = blk.h_mid + block_linear(b, kFf2).forward(blk.ff_act);
    }
    tape.h_out = h;
    return unpatchify(head().forward(h));
}

DenoiserGrads ToyDenoiser::zero_grads(bool with_base) const {
    DenoiserGrads g;
    g.linear.resize(linears_.size());
    for (std::size_t i = 0; i < linears_.size(); ++i) g.linear[i].zero_like(linears_[i], with_base);
    g.label_embedding = with_base ? Eigen::MatrixXd::Zero(label_embedding_.rows(), label_embedding_.cols())
                                  : Eigen::MatrixXd();
    return g;
}

void ToyDenoiser::backward(const DenoiserTape& tape, const Image& d_eps, DenoiserGrads& grads, bool with_base) const {
    auto slot = [&](int b, Slot s) -> LinearGrads& { return grads.linear[1 + b * kPerBlock + s]; };
    FeatureMatrix d_h = head().backward(tape.h_out, patchify(d_eps), grads.linear.back(), with_base);
    for (int b = cfg_.blocks - 1; b >= 0; --b) {
        const auto& blk = tape.blocks[b];
        const FeatureMatrix d_act = block_linear(b, kFf2).backward(blk.ff_act, d_h, slot(b, kFf2), with_base);
        const FeatureMatrix d_pre = d_act.cwiseProduct((blk.ff_pre.array() > 0.0).cast<double>().matrix());
        const FeatureMatrix d_mid = d_h + block_linear(b, kFf1).backward(blk.h_mid, d_pre, slot(b, kFf1), with_base);
        const FeatureMatrix d_attn = block_linear(b, kO).backward(blk.attn, d_mid, slot(b, kO), with_base);
        const AttentionGrads ag = sdp_attention_backward(blk.q, blk.k, blk.v, d_attn);
        d_h = d_mid + block_linear(b, kQ).backward(blk.h_in, ag.dq, slot(b, kQ), with_base) +
              block_linear(b, kK).backward(blk.h_in, ag.dk, slot(b, kK), with_base) +
              block_linear(b, kV).backward(blk.h_in, ag.dv, slot(b, kV), with_base);
    }
    const FeatureMatrix d_input = embed().backward(tape.input, d_h, grads.linear.front(), with_base);
    if (with_base) {
        grads.label_embedding.row(tape.label) +=
            d_input.middleCols(cfg_.patch_dim(), cfg_.label_dim).colwise().sum();
    }
}

std::vector<NamedDelta> ToyDenoiser::export_deltas() const {
    std::vector<NamedDelta> out;
    for (std::size_t i = 0; i < linears_.size(); ++i) out.push_back({names_[i], linears_[i].delta()});
    return out;
}

void ToyDenoiser::import_deltas(const std::vector<NamedDelta>& deltas) {
    if (deltas.size() != linears_.size()) throw DimensionError("LoRA checkpoint layer count mismatch");
    for (std::size_t i = 0; i < linears_.size(); ++i) {
        const auto& nd = deltas[i];
        if (nd.name != names_[i] || nd.delta.d_in() != linears_[i].d_in() || nd.delta.d_out() != linears_[i].d_out()) {
            throw DimensionError("LoRA checkpoint layer '" + nd.name + "' does not match the denoiser");
        }
        linears_[i].delta() = nd.delta;
    }
}

void ToyDenoiser::reset_adapters(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : linears_) l.delta() = init_delta(l.d_in(), l.d_out(), l.delta().rank(), rng());
}

namespace {

constexpr char kBaseMagic[4] = {'T', 'D', 'N', 'B'};
constexpr std::uint32_t kBaseVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (in.size() - pos < sizeof(T)) throw TruncatedPayloadError("denoiser checkpoint truncated");
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

} // namespace

void ToyDenoiser::save_base(const std::filesystem::path& path) const {
    std::vector<std::uint8_t> out(kBaseMagic, kBaseMagic + 4);
    put<std::uint32_t>(out, kBaseVersion);
    for (int v : {cfg_.image_size, cfg_.channels, cfg_.patch, cfg_.model_dim, cfg_.ff_dim, cfg_.label_dim,
                  cfg_.num_labels, cfg_.blocks, cfg_.lora_rank, cfg_.timesteps}) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    auto put_matrix = [&](const Eigen::MatrixXd& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) put<float>(out, static_cast<float>(m(r, c)));
        }
    };
    put_matrix(label_embedding_);
    for (const auto& l : linears_) {
        put_matrix(l.weight());
        put_matrix(l.bias());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

ToyDenoiser ToyDenoiser::load_base(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    const std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < 8 || std::memcmp(in.data(), kBaseMagic, 4) != 0) {
        throw MalformedHeaderError("denoiser checkpoint magic is not TDNB");
    }
    std::size_t pos = 4;
    if (take<std::uint32_t>(in, pos) != kBaseVersion) {
        throw UnsupportedVersionError("unsupported denoiser checkpoint version");
    }
    DenoiserConfig cfg;
    for (int* field : {&cfg.image_size, &cfg.channels, &cfg.patch, &cfg.model_dim, &cfg.ff_dim, &cfg.label_dim,
                       &cfg.num_labels, &cfg.blocks, &cfg.lora_rank, &cfg.timesteps}) {
        *field = static_cast<int>(take<std::uint32_t>(in, pos));
    }
    ToyDenoiser model(cfg, 0);
    auto take_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = take<float>(in, pos);
        }
        return m;
    };
    model.label_embedding_ = take_matrix(cfg.num_labels, cfg.label_dim);
    for (auto& l : model.linears_) {
        Eigen::MatrixXd w = take_matrix(l.d_out(), l.d_in());
        Eigen::VectorXd b = take_matrix(l.d_out(), 1);
        l.set_base(std::move(w), std::move(b));
    }
    return model;
}

} // namespace gsedit
