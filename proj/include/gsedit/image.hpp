#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace gsedit {

/// Dense H x W x C image of doubles, row-major with interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Writes an 8-bit PNG (1 or 3 channels); values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& img);

/// Reads an 8-bit PNG into [0,1] values. Grayscale files yield 1 channel,
/// everything else is converted to RGB.
Image read_png(const std::filesystem::path& path);

/// Reads an 8-bit grayscale PNG mask: >= 128 becomes 1, else 0.
Image read_mask_png(const std::filesystem::path& path);

/// 2x2 box downsampling; odd trailing rows/columns are averaged over what exists.
Image downsample2(const Image& img);

/// Resizes by area averaging (shrink) or nearest neighbor (enlarge) per axis.
Image resize(const Image& img, int width, int height);

double psnr(const Image& a, const Image& b);

} // namespace gsedit
