#include "gsedit/scene_io.hpp"

#include "gsedit/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gsedit {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'P', 'L'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }

    template <typename T>
    T get() {
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_scene(const GaussianScene& scene) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kSceneFileVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(scene.sh_degree()));
    put<std::uint64_t>(out, scene.size());
    for (const auto& g : scene.gaussians()) {
        for (int i = 0; i < 3; ++i) put<float>(out, g.mean[i]);
        for (int i = 0; i < 4; ++i) put<float>(out, g.rotation[i]);
        for (int i = 0; i < 3; ++i) put<float>(out, g.log_scale[i]);
        put<float>(out, g.opacity_logit);
        for (float v : g.sh) put<float>(out, v);
        put<float>(out, g.editable ? 1.0f : 0.0f);
    }
    return out;
}

GaussianScene decode_scene(const std::vector<std::uint8_t>& bytes) {
    constexpr std::size_t header_size = 4 + 4 + 4 + 8;
    if (bytes.size() < header_size) throw MalformedHeaderError("scene file shorter than its header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw MalformedHeaderError("scene file magic is not GSPL");
    Reader in(bytes);
    in.get<std::uint32_t>();
    const auto version = in.get<std::uint32_t>();
    if (version != kSceneFileVersion) {
        throw UnsupportedVersionError("unsupported scene file version " + std::to_string(version));
    }
    const auto degree = in.get<std::uint32_t>();
    if (degree > static_cast<std::uint32_t>(kMaxShDegree)) {
        throw MalformedHeaderError("scene sh_degree " + std::to_string(degree) + " exceeds 3");
    }
    const auto count = in.get<std::uint64_t>();
    const std::size_t per_gaussian = 4 * (3 + 4 + 3 + 1 + 3 * sh_coeff_count(static_cast<int>(degree)) + 1);
    if (count > in.remaining() / per_gaussian) {
        throw TruncatedPayloadError("scene payload holds fewer than " + std::to_string(count) + " gaussians");
    }
    if (in.remaining() != count * per_gaussian) throw FormatError("trailing bytes after scene payload");

    GaussianScene scene(static_cast<int>(degree));
    scene.gaussians().reserve(count);
    for (std::uint64_t n = 0; n < count; ++n) {
        Gaussian3D g;
        for (int i = 0; i < 3; ++i) g.mean[i] = in.get<float>();
        for (int i = 0; i < 4; ++i) g.rotation[i] = in.get<float>();
        for (int i = 0; i < 3; ++i) g.log_scale[i] = in.get<float>();
        g.opacity_logit = in.get<float>();
        g.sh.resize(3 * sh_coeff_count(static_cast<int>(degree)));
        for (auto& v : g.sh) v = in.get<float>();
        g.editable = in.get<float>() != 0.0f;
        scene.add(std::move(g));
    }
    return scene;
}

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
    const auto bytes = encode_scene(scene);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

GaussianScene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_scene(bytes);
}

std::vector<CameraRecord> load_cameras(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("camera JSON parse error: " + std::string(e.what()));
    }
    if (!doc.is_array()) throw FormatError("camera JSON must be an array");

    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path fp(p);
        return (fp.is_absolute() || base.empty() ? fp : base / fp).string();
    };

    std::vector<CameraRecord> records;
    for (const auto& item : doc) {
        try {
            CameraRecord rec;
            auto& cam = rec.camera;
            cam.width = item.at("width").get<int>();
            cam.height = item.at("height").get<int>();
            cam.fx = item.at("fx").get<double>();
            cam.fy = item.at("fy").get<double>();
            cam.cx = item.at("cx").get<double>();
            cam.cy = item.at("cy").get<double>();
            const auto rot = item.at("rotation").get<std::vector<double>>();
            const auto trans = item.at("translation").get<std::vector<double>>();
            if (rot.size() != 9 || trans.size() != 3) throw FormatError("camera rotation/translation size");
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[r * 3 + c];
                cam.translation[r] = trans[r];
            }
            cam.validate();
            if (item.contains("image")) rec.image = resolve(item.at("image").get<std::string>());
            if (item.contains("mask") && !item.at("mask").is_null()) {
                rec.mask = resolve(item.at("mask").get<std::string>());
            }
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("camera record: " + std::string(e.what()));
        }
    }
    return records;
}

void save_cameras(const std::vector<CameraRecord>& cameras, const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& rec : cameras) {
        const auto& cam = rec.camera;
        std::vector<double> rot(9), trans(3);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) rot[r * 3 + c] = cam.rotation(r, c);
            trans[r] = cam.translation[r];
        }
        nlohmann::json item = {{"width", cam.width}, {"height", cam.height}, {"fx", cam.fx},
                               {"fy", cam.fy},       {"cx", cam.cx},         {"cy", cam.cy},
                               {"rotation", rot},    {"translation", trans}, {"image", rec.image}};
        if (rec.mask) item["mask"] = *rec.mask;
        doc.push_back(std::move(item));
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << '\n';
}

} // namespace gsedit
