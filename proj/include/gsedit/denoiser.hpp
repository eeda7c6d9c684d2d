#pragma once

#include "gsedit/attention.hpp"
#include "gsedit/image.hpp"
#include "gsedit/lora.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gsedit {

struct DenoiserConfig {
    int image_size = 8;   // square latents, image_size x image_size x channels
    int channels = 3;
    int patch = 2;
    int model_dim = 32;
    int ff_dim = 64;
    int label_dim = 8;
    int num_labels = 4;
    int blocks = 2;
    int lora_rank = 8;
    int timesteps = 100;

    int grid() const { return image_size / patch; }
    int tokens() const { return grid() * grid(); }
    int patch_dim() const { return patch * patch * channels; }
    int input_dim() const { return patch_dim() + label_dim + kTimeFeatures + kPositionFeatures; }

    static constexpr int kTimeFeatures = 8;
    static constexpr int kPositionFeatures = 4;
};

struct DenoiserInput {
    const Image* latent = nullptr;
    int label = 0;
    int t = 0;
};

/// Decides what every self-attention site returns. Called once per (block, view)
/// after the Q/K/V of every view in the batch are available, so implementations
/// may read other views' features from the same step.
class AttentionPolicy {
public:
    virtual ~AttentionPolicy() = default;
    /// Called by samplers before each denoising step (0-based step index).
    virtual void begin_step(int /*step_index*/) {}
    virtual FeatureMatrix attend(int block, std::size_t view, std::span<const FeatureMatrix> q,
                                 std::span<const FeatureMatrix> k, std::span<const FeatureMatrix> v) = 0;
};

class PlainAttention final : public AttentionPolicy {
public:
    FeatureMatrix attend(int block, std::size_t view, std::span<const FeatureMatrix> q,
                         std::span<const FeatureMatrix> k, std::span<const FeatureMatrix> v) override;
};

/// Intermediates of one single-sample forward pass with plain attention.
struct DenoiserTape {
    int label = 0;
    FeatureMatrix input;
    struct Block {
        FeatureMatrix h_in, q, k, v, attn, h_mid, ff_pre, ff_act;
    };
    std::vector<Block> blocks;
    FeatureMatrix h_out;
};

struct DenoiserGrads {
    std::vector<LinearGrads> linear;
    Eigen::MatrixXd label_embedding;
};

/// patchify -> linear embed -> residual blocks (self-attention + feed-forward)
/// -> linear head predicting the noise. Every linear map is an AdaptedLinear.
class ToyDenoiser {
public:
    ToyDenoiser(const DenoiserConfig& cfg, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }
    int attention_sites() const { return cfg_.blocks; }
    std::size_t parameter_count() const;

    std::vector<AdaptedLinear>& linears() { return linears_; }
    const std::vector<AdaptedLinear>& linears() const { return linears_; }
    const std::vector<std::string>& linear_names() const { return names_; }
    Eigen::MatrixXd& label_embedding() { return label_embedding_; }
    const Eigen::MatrixXd& label_embedding() const { return label_embedding_; }

    /// Predicted noise for every input; all inputs advance through each block together.
    std::vector<Image> predict(std::span<const DenoiserInput> batch, AttentionPolicy& policy) const;
    Image predict(const DenoiserInput& input) const;

    Image forward_train(const DenoiserInput& input, DenoiserTape& tape) const;
    /// Accumulates into grads (shaped by zero_grads) for dL/d(predicted noise) = d_eps.
    void backward(const DenoiserTape& tape, const Image& d_eps, DenoiserGrads& grads, bool with_base) const;
    DenoiserGrads zero_grads(bool with_base) const;

    bool has_trainable_adapters() const;

    FeatureMatrix patchify(const Image& img) const;
    Image unpatchify(const FeatureMatrix& tokens) const;

    /// Base weights file: "TDNB" | u32 version | config (10 x u32) | embedding |
    /// per linear W and bias as f32, in linear_names() order.
    void save_base(const std::filesystem::path& path) const;
    static ToyDenoiser load_base(const std::filesystem::path& path);

    std::vector<NamedDelta> export_deltas() const;
    /// Throws DimensionError when names or shapes do not match this model.
    void import_deltas(const std::vector<NamedDelta>& deltas);

    /// Resets every adapter with init_delta (B = 0).
    void reset_adapters(std::uint64_t seed);

private:
    enum Slot { kQ, kK, kV, kO, kFf1, kFf2, kPerBlock };
    const AdaptedLinear& embed() const { return linears_.front(); }
    const AdaptedLinear& head() const { return linears_.back(); }
    const AdaptedLinear& block_linear(int b, Slot s) const { return linears_[1 + b * kPerBlock + s]; }

    FeatureMatrix input_features(const DenoiserInput& input) const;

    DenoiserConfig cfg_;
    std::vector<AdaptedLinear> linears_;
    std::vector<std::string> names_;
    Eigen::MatrixXd label_embedding_;
};

} // namespace gsedit
