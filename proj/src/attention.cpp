#include "gsedit/attention.hpp"

#include "gsedit/errors.hpp"

#include <cmath>
#include <string>

namespace gsedit {

namespace {

void check_qkv(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v) {
    if (q.cols() == 0) throw DimensionError("attention: query has no channels");
    if (q.cols() != k.cols()) {
        throw DimensionError("attention: Q has " + std::to_string(q.cols()) + " channels, K has " +
                             std::to_string(k.cols()));
    }
    if (k.rows() != v.rows()) throw DimensionError("attention: K and V row counts differ");
    if (k.rows() == 0) throw DimensionError("attention: no keys");
}

FeatureMatrix stack_rows(const FeatureMatrix& a, const FeatureMatrix& b) {
    FeatureMatrix out(a.rows() + b.rows(), a.cols());
    out.topRows(a.rows()) = a;
    out.bottomRows(b.rows()) = b;
    return out;
}

} // namespace

FeatureMatrix attention_weights(const FeatureMatrix& q, const FeatureMatrix& k) {
    FeatureMatrix logits = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
    }
    return logits;
}

FeatureMatrix sdp_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v) {
    check_qkv(q, k, v);
    return attention_weights(q, k) * v;
}

FeatureMatrix multi_head_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                   int heads) {
    check_qkv(q, k, v);
    if (heads <= 0 || q.cols() % heads != 0 || v.cols() % heads != 0) {
        throw DimensionError("attention: channel count not divisible by head count");
    }
    const Eigen::Index dk = q.cols() / heads, dv = v.cols() / heads;
    FeatureMatrix out(q.rows(), v.cols());
    for (int h = 0; h < heads; ++h) {
        out.middleCols(h * dv, dv) =
            sdp_attention(q.middleCols(h * dk, dk), k.middleCols(h * dk, dk), v.middleCols(h * dv, dv));
    }
    return out;
}

AttentionGrads sdp_attention_backward(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                      const FeatureMatrix& d_out) {
    check_qkv(q, k, v);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const FeatureMatrix p = attention_weights(q, k);
    AttentionGrads g;
    g.dv = p.transpose() * d_out;
    const FeatureMatrix dp = d_out * v.transpose();
    FeatureMatrix ds = p.cwiseProduct(dp);
    const Eigen::VectorXd row_dot = ds.rowwise().sum();
    ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
    g.dq = ds * k * inv_sqrt;
    g.dk = ds.transpose() * q * inv_sqrt;
    return g;
}

FeatureMatrix reference_concat_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                         const FeatureMatrix& k_ref, const FeatureMatrix& v_ref) {
    check_qkv(q, k, v);
    if (k_ref.rows() != v_ref.rows()) throw DimensionError("reference K and V row counts differ");
    if (k_ref.rows() == 0) return sdp_attention(q, k, v);
    if (k_ref.cols() != k.cols() || v_ref.cols() != v.cols()) {
        throw DimensionError("reference features do not match the view's channel counts");
    }
    return sdp_attention(q, stack_rows(k, k_ref), stack_rows(v, v_ref));
}

FeatureMatrix persona_blend_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                      const ReferenceBank& bank, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgumentError("persona blend lambda must lie in [0,1]");
    FeatureMatrix own = sdp_attention(q, k, v);
    if (lambda == 1.0) return own;
    if (bank.empty()) throw InvalidArgumentError("persona blend needs a nonempty reference bank when lambda < 1");
    FeatureMatrix mean = FeatureMatrix::Zero(own.rows(), own.cols());
    for (const auto& [bank_k, bank_v] : bank.entries) {
        if (bank_v.cols() != v.cols()) throw DimensionError("reference bank value width differs from V");
        mean += sdp_attention(q, bank_k, bank_v);
    }
    mean /= static_cast<double>(bank.size());
    return lambda * own + (1.0 - lambda) * mean;
}

} // namespace gsedit
