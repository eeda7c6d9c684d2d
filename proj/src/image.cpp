#include "gsedit/image.hpp"

#include "gsedit/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

namespace gsedit {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw DimensionError("PNG output needs 1 or 3 channels");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed");
    }
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) row[x * img.channels + c] = to_byte(img.at(x, y, c));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed");
    }
    Image img;
    std::vector<std::uint8_t> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng read failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto color_type = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    buffer.resize(static_cast<std::size_t>(width) * height * channels);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    const int out_channels = channels == 1 ? 1 : 3;
    img = Image(width, height, out_channels);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < out_channels; ++c) {
                img.at(x, y, c) = buffer[(static_cast<std::size_t>(y) * width + x) * channels + c] / 255.0;
            }
        }
    }
    return img;
}

Image read_mask_png(const std::filesystem::path& path) {
    const Image raw = read_png(path);
    Image mask(raw.width, raw.height, 1);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            // 128/255 threshold on the first channel.
            mask.at(x, y) = std::lround(raw.at(x, y, 0) * 255.0) >= 128 ? 1.0 : 0.0;
        }
    }
    return mask;
}

Image downsample2(const Image& img) {
    const int w = std::max(1, (img.width + 1) / 2);
    const int h = std::max(1, (img.height + 1) / 2);
    Image out(w, h, img.channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double sum = 0.0;
                int n = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const int sx = 2 * x + dx, sy = 2 * y + dy;
                        if (sx < img.width && sy < img.height) {
                            sum += img.at(sx, sy, c);
                            ++n;
                        }
                    }
                }
                out.at(x, y, c) = sum / n;
            }
        }
    }
    return out;
}

Image resize(const Image& img, int width, int height) {
    Image out(width, height, img.channels);
    for (int y = 0; y < height; ++y) {
        const int y0 = y * img.height / height;
        const int y1 = std::max(y0 + 1, (y + 1) * img.height / height);
        for (int x = 0; x < width; ++x) {
            const int x0 = x * img.width / width;
            const int x1 = std::max(x0 + 1, (x + 1) * img.width / width);
            for (int c = 0; c < img.channels; ++c) {
                double sum = 0.0;
                for (int sy = y0; sy < y1; ++sy) {
                    for (int sx = x0; sx < x1; ++sx) sum += img.at(sx, sy, c);
                }
                out.at(x, y, c) = sum / ((y1 - y0) * (x1 - x0));
            }
        }
    }
    return out;
}

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("psnr: image shapes differ");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

} // namespace gsedit
