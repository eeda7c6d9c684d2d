#pragma once

#include "gsedit/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gsedit {

constexpr std::uint32_t kSceneFileVersion = 1;

/// Scene file layout, all little-endian:
///   "GSPL" | u32 version | u32 sh_degree | u64 count |
///   count x { f32 mean[3], rot[4], log_scale[3], opacity_logit, sh[3(L+1)^2], editable }
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_scene(const GaussianScene& scene);

/// Throws MalformedHeaderError, UnsupportedVersionError or TruncatedPayloadError.
GaussianScene load_scene(const std::filesystem::path& path);
GaussianScene decode_scene(const std::vector<std::uint8_t>& bytes);

struct CameraRecord {
    Camera camera;
    std::string image;
    std::optional<std::string> mask;
};

/// Reads the camera JSON array. Relative image/mask paths are resolved against
/// the directory holding the JSON file.
std::vector<CameraRecord> load_cameras(const std::filesystem::path& path);
void save_cameras(const std::vector<CameraRecord>& cameras, const std::filesystem::path& path);

} // namespace gsedit
