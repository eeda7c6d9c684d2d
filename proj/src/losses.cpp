#include "gsedit/losses.hpp"

#include "gsedit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gsedit {

double mae_loss(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("mae_loss: image shapes differ");
    if (a.data.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    return sum / static_cast<double>(a.data.size());
}

Image mae_loss_grad(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("mae_loss: image shapes differ");
    Image g(a.width, a.height, a.channels);
    const double n = static_cast<double>(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        g.data[i] = d > 0.0 ? 1.0 / n : (d < 0.0 ? -1.0 / n : 0.0);
    }
    return g;
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Adjoint of downsample2: spreads each output gradient evenly over its inputs.
Image downsample2_adjoint(const Image& grad_out, int in_width, int in_height) {
    Image g(in_width, in_height, grad_out.channels);
    for (int y = 0; y < grad_out.height; ++y) {
        for (int x = 0; x < grad_out.width; ++x) {
            int n = 0;
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) n += (2 * x + dx < in_width && 2 * y + dy < in_height) ? 1 : 0;
            }
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                    const int sx = 2 * x + dx, sy = 2 * y + dy;
                    if (sx >= in_width || sy >= in_height) continue;
                    for (int c = 0; c < g.channels; ++c) g.at(sx, sy, c) += grad_out.at(x, y, c) / n;
                }
            }
        }
    }
    return g;
}

/// Statistics and gradient terms at one scale; accumulates d/da into grad (if non-null).
double scale_distance(const Image& a, const Image& b, Image* grad, int patch) {
    const int w = a.width, h = a.height, ch = a.channels;
    const int px = (w + patch - 1) / patch, py = (h + patch - 1) / patch;
    const double stat_norm = 1.0 / (static_cast<double>(px) * py * ch);
    double stats = 0.0;
    for (int by = 0; by < py; ++by) {
        for (int bx = 0; bx < px; ++bx) {
            const int x0 = bx * patch, x1 = std::min(w, x0 + patch);
            const int y0 = by * patch, y1 = std::min(h, y0 + patch);
            const double n = static_cast<double>(x1 - x0) * (y1 - y0);
            for (int c = 0; c < ch; ++c) {
                double ma = 0.0, mb = 0.0;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        ma += a.at(x, y, c);
                        mb += b.at(x, y, c);
                    }
                }
                ma /= n;
                mb /= n;
                double va = 0.0, vb = 0.0;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        va += (a.at(x, y, c) - ma) * (a.at(x, y, c) - ma);
                        vb += (b.at(x, y, c) - mb) * (b.at(x, y, c) - mb);
                    }
                }
                va /= n;
                vb /= n;
                stats += (ma - mb) * (ma - mb) + (va - vb) * (va - vb);
                if (grad) {
                    // d(va)/da_i = 2 (a_i - ma) / n; the mean term drops out of the sum.
                    for (int y = y0; y < y1; ++y) {
                        for (int x = x0; x < x1; ++x) {
                            grad->at(x, y, c) += stat_norm * (2.0 * (ma - mb) / n +
                                                              2.0 * (va - vb) * 2.0 * (a.at(x, y, c) - ma) / n);
                        }
                    }
                }
            }
        }
    }
    stats *= stat_norm;

    const double nx = static_cast<double>(w - 1) * h * ch, ny = static_cast<double>(w) * (h - 1) * ch;
    const double count = nx + ny;
    double edges = 0.0;
    if (count > 0.0) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                for (int c = 0; c < ch; ++c) {
                    if (x + 1 < w) {
                        const double d = (a.at(x + 1, y, c) - a.at(x, y, c)) - (b.at(x + 1, y, c) - b.at(x, y, c));
                        edges += std::abs(d);
                        if (grad) {
                            grad->at(x + 1, y, c) += sign(d) / count;
                            grad->at(x, y, c) -= sign(d) / count;
                        }
                    }
                    if (y + 1 < h) {
                        const double d = (a.at(x, y + 1, c) - a.at(x, y, c)) - (b.at(x, y + 1, c) - b.at(x, y, c));
                        edges += std::abs(d);
                        if (grad) {
                            grad->at(x, y + 1, c) += sign(d) / count;
                            grad->at(x, y, c) -= sign(d) / count;
                        }
                    }
                }
            }
        }
        edges /= count;
    }
    return stats + edges;
}

} // namespace

double PatchStatsDistance::evaluate(const Image& a, const Image& b, Image* grad_a) const {
    if (!a.same_shape(b)) throw DimensionError("perceptual distance: image shapes differ");
    std::vector<Image> pyr_a{a}, pyr_b{b};
    for (int s = 1; s < kScales; ++s) {
        pyr_a.push_back(downsample2(pyr_a.back()));
        pyr_b.push_back(downsample2(pyr_b.back()));
    }
    double total = 0.0;
    std::vector<Image> grads;
    for (int s = 0; s < kScales; ++s) {
        Image g;
        if (grad_a) g = Image(pyr_a[s].width, pyr_a[s].height, pyr_a[s].channels);
        total += scale_distance(pyr_a[s], pyr_b[s], grad_a ? &g : nullptr, kPatch);
        if (grad_a) grads.push_back(std::move(g));
    }
    if (grad_a) {
        // Fold coarse-scale gradients back to full resolution.
        for (int s = kScales - 1; s > 0; --s) {
            const Image up = downsample2_adjoint(grads[s], pyr_a[s - 1].width, pyr_a[s - 1].height);
            for (std::size_t i = 0; i < up.data.size(); ++i) grads[s - 1].data[i] += up.data[i];
        }
        *grad_a = std::move(grads[0]);
        for (auto& v : grad_a->data) v /= kScales;
    }
    return total / kScales;
}

double perceptual_distance(const Image& a, const Image& b) { return PatchStatsDistance{}(a, b); }

} // namespace gsedit
