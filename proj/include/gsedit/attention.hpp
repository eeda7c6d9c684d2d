#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

namespace gsedit {

/// Token x channel feature matrix (rows = tokens).
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Recorded (K, V) pairs from other views, one per edited image.
struct ReferenceBank {
    std::vector<std::pair<FeatureMatrix, FeatureMatrix>> entries;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

constexpr double kDefaultPersonaLambda = 0.55;

/// Row-wise softmax of Q K^T / sqrt(d_k), max-subtracted.
FeatureMatrix attention_weights(const FeatureMatrix& q, const FeatureMatrix& k);

/// softmax(Q K^T / sqrt(d_k)) V. Throws DimensionError on shape mismatch.
FeatureMatrix sdp_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v);

/// Splits channels into `heads` equal slices and attends each slice independently.
FeatureMatrix multi_head_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v, int heads);

struct AttentionGrads {
    FeatureMatrix dq, dk, dv;
};

AttentionGrads sdp_attention_backward(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                      const FeatureMatrix& d_out);

/// Attention over keys/values extended by the reference view's rows.
FeatureMatrix reference_concat_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                         const FeatureMatrix& k_ref, const FeatureMatrix& v_ref);

/// lambda * ATT(Q,K,V) + (1 - lambda) * mean_i ATT(Q, K_i, V_i) over the bank.
/// lambda == 1 returns ATT(Q,K,V) without touching the bank.
FeatureMatrix persona_blend_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                      const ReferenceBank& bank, double lambda = kDefaultPersonaLambda);

} // namespace gsedit
