// gsedit command-line front end.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage / unknown subcommand,
// 3 invalid flags, 4 missing or unreadable files.

#include "gsedit/attention.hpp"
#include "gsedit/diffusion.hpp"
#include "gsedit/errors.hpp"
#include "gsedit/gradcheck.hpp"
#include "gsedit/image.hpp"
#include "gsedit/lora.hpp"
#include "gsedit/mask_lift.hpp"
#include "gsedit/optimization.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/scene_io.hpp"
#include "gsedit/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gsedit;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFlags = 3;
constexpr int kExitMissing = 4;

const std::vector<std::string> kCommands{"fit",      "label",     "edit",       "render",
                                         "gradcheck", "attn-demo", "lora-train", "gen-toydata"};

class MissingFileError : public Error {
public:
    using Error::Error;
};

class FlagError : public Error {
public:
    using Error::Error;
};

void fail_line(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", message}, {"kind", kind}, {"exit_code", code}}.dump() << std::endl;
}

const fs::path& require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw MissingFileError("no such file: " + p.string());
    return p;
}

Eigen::Vector3d parse_vec3(const std::string& text, const char* flag, bool unit_range) {
    std::stringstream ss(text);
    std::string part;
    std::vector<double> vals;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            vals.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw FlagError(std::string(flag) + ": expected three comma-separated numbers, got '" + text + "'");
        }
    }
    if (vals.size() != 3) throw FlagError(std::string(flag) + ": expected three comma-separated numbers");
    const Eigen::Vector3d v(vals[0], vals[1], vals[2]);
    if (unit_range && (v.minCoeff() < 0.0 || v.maxCoeff() > 1.0)) {
        throw FlagError(std::string(flag) + ": components must lie in [0,1]");
    }
    return v;
}

/// Every option of the subcommand with its resolved (given or default) value.
json resolved_config(const CLI::App& app) {
    json cfg = json::object();
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string& name = opt->get_lnames().front();
        if (name == "help") continue;
        if (opt->get_expected_max() == 0) {
            cfg[name] = opt->count() > 0;
        } else if (opt->count() > 0) {
            cfg[name] = opt->as<std::string>();
        } else {
            const std::string def = opt->get_default_str();
            cfg[name] = def.empty() ? json(nullptr) : json(def);
        }
    }
    return cfg;
}

struct CameraSet {
    std::vector<CameraRecord> records;
    std::vector<Camera> cameras;
};

CameraSet read_cameras(const fs::path& path) {
    CameraSet set;
    set.records = load_cameras(require_file(path));
    if (set.records.empty()) throw InvalidArgumentError("camera file lists no cameras");
    for (const auto& r : set.records) set.cameras.push_back(r.camera);
    return set;
}

/// Masks come from DIR/<index>.png (three digits) when a directory is given,
/// otherwise from the "mask" entries of the camera file.
std::vector<std::optional<Image>> read_masks(const CameraSet& cams, const std::string& dir) {
    std::vector<std::optional<Image>> out(cams.records.size());
    if (!dir.empty() && !fs::is_directory(dir)) throw MissingFileError("no such mask directory: " + dir);
    for (std::size_t i = 0; i < cams.records.size(); ++i) {
        fs::path p;
        if (!dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "%03zu.png", i);
            p = fs::path(dir) / name;
            if (!fs::exists(p)) continue;
        } else if (cams.records[i].mask) {
            p = require_file(*cams.records[i].mask);
        } else {
            continue;
        }
        Image m = read_mask_png(p);
        if (m.width != cams.cameras[i].width || m.height != cams.cameras[i].height) {
            throw DimensionError("mask " + p.string() + " does not match camera " + std::to_string(i));
        }
        out[i] = std::move(m);
    }
    return out;
}

std::string frame_name(std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", i);
    return name;
}

struct LogFile {
    std::unique_ptr<std::ofstream> stream;
    std::unique_ptr<TrainingLog> log;

    explicit LogFile(const std::string& path) {
        if (path.empty()) return;
        stream = std::make_unique<std::ofstream>(path);
        if (!*stream) throw IoError("cannot open log file " + path);
        log = std::make_unique<TrainingLog>(stream.get());
    }
    TrainingLog* get() { return log.get(); }
};

void announce(const std::string& command, const CLI::App& app) {
    std::cout << json{{"command", command}, {"config", resolved_config(app)}}.dump() << std::endl;
}

// ---------------------------------------------------------------- commands

struct Common {
    int seed = 0;
    int tile_size = 16;
    std::string background = "0,0,0";
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "Random seed")->check(CLI::NonNegativeNumber);
    app->add_option("--tile-size", c.tile_size, "Rasterizer tile size in pixels")->check(CLI::PositiveNumber);
    app->add_option("--background", c.background, "Background color r,g,b in [0,1]");
}

int cmd_fit(const CLI::App& app, const Common& c, const std::string& cameras_path, const std::string& out,
            int iters, int sh_degree, int init_points, bool no_densify, const std::string& log_path) {
    const Eigen::Vector3d bg = parse_vec3(c.background, "--background", true);
    announce("fit", app);
    const CameraSet cams = read_cameras(cameras_path);
    std::vector<Image> images;
    for (const auto& r : cams.records) {
        Image img = read_png(require_file(r.image));
        if (img.channels != 3) throw DimensionError("image " + r.image + " is not RGB");
        images.push_back(std::move(img));
    }
    FitConfig cfg;
    cfg.iters = iters;
    cfg.seed = static_cast<std::uint64_t>(c.seed);
    cfg.tile_size = c.tile_size;
    cfg.background = bg;
    cfg.sh_degree = sh_degree;
    cfg.init_points = static_cast<std::size_t>(init_points);
    cfg.densify = !no_densify;
    LogFile log(log_path);
    cfg.log = log.get();
    const FitResult r = fit_scene(images, cams.cameras, cfg);
    save_scene(r.scene, out);
    std::cout << json{{"event", "done"}, {"gaussians", r.scene.size()},
                      {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()}, {"out", out}}.dump()
              << std::endl;
    return 0;
}

int cmd_label(const CLI::App& app, const std::string& scene_path, const std::string& cameras_path,
              const std::string& masks_dir, const std::string& out, double fraction, int min_views) {
    announce("label", app);
    GaussianScene scene = load_scene(require_file(scene_path));
    const CameraSet cams = read_cameras(cameras_path);
    const auto masks = read_masks(cams, masks_dir);
    std::vector<ViewMask> views;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i]) views.push_back({i, *masks[i]});
    }
    LabelingOptions opts;
    opts.weight_fraction = fraction;
    opts.min_views = min_views;
    scene = label_editable(std::move(scene), cams.cameras, views, opts);
    save_scene(scene, out);
    std::cout << json{{"event", "done"}, {"gaussians", scene.size()}, {"editable", scene.editable_count()},
                      {"masked_views", views.size()}, {"out", out}}.dump()
              << std::endl;
    return 0;
}

struct EditFlags {
    std::string scene, cameras, masks, out, editor = "oracle", target = "0,0,1", model, lora, log, renders;
    int iters = 4000, views = 4, refresh = 2500, label = 0, start_step = 70, log_every = 100;
    double lambda = kDefaultPersonaLambda, lambda1 = 10.0, lambda2 = 15.0;
    bool random_order = false;
};

int cmd_edit(const CLI::App& app, const Common& c, const EditFlags& f) {
    const Eigen::Vector3d bg = parse_vec3(c.background, "--background", true);
    const Eigen::Vector3d target = parse_vec3(f.target, "--target-color", true);
    EditConfig cfg;
    cfg.lambda = f.lambda;
    cfg.lambda1 = f.lambda1;
    cfg.lambda2 = f.lambda2;
    cfg.views = f.views;
    cfg.refresh_interval = f.refresh;
    cfg.edit_iters = f.iters;
    cfg.background = bg;
    cfg.tile_size = c.tile_size;
    cfg.random_view_order = f.random_order;
    cfg.seed = static_cast<std::uint64_t>(c.seed);
    cfg.garment.label = f.label;
    cfg.garment.color = target;
    cfg.log_every = f.log_every;
    try {
        cfg.validate();
    } catch (const InvalidArgumentError& e) {
        throw FlagError(e.what());
    }
    if (f.editor == "toy-diffusion" && f.model.empty()) throw FlagError("--editor toy-diffusion requires --model");
    announce("edit", app);

    const GaussianScene scene = load_scene(require_file(f.scene));
    const CameraSet cams = read_cameras(f.cameras);
    const auto loaded = read_masks(cams, f.masks);
    std::vector<Image> masks;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        if (!loaded[i]) throw MissingFileError("no mask for camera " + std::to_string(i));
        masks.push_back(*loaded[i]);
    }

    std::unique_ptr<ImageEditor> editor;
    std::optional<ToyDenoiser> model;
    if (f.editor == "oracle") {
        editor = std::make_unique<OracleRecolorEditor>(target);
    } else if (f.editor == "identity") {
        editor = std::make_unique<IdentityEditor>();
    } else {
        model.emplace(ToyDenoiser::load_base(require_file(f.model)));
        if (!f.lora.empty()) model->import_deltas(load_deltas(require_file(f.lora)));
        if (f.label < 0 || f.label >= model->config().num_labels) throw FlagError("--label out of range for the model");
        editor = std::make_unique<ToyDiffusionEditor>(*model, NoiseSchedule::linear(model->config().timesteps),
                                                      ToyEditorConfig{f.start_step, f.lambda});
    }

    LogFile log(f.log);
    cfg.log = log.get();
    const EditResult r = run_edit(scene, cams.cameras, masks, *editor, cfg);
    save_scene(r.scene, f.out);
    if (!f.renders.empty()) {
        fs::create_directories(f.renders);
        RenderOptions ro;
        ro.background = bg;
        ro.tile_size = c.tile_size;
        for (std::size_t i = 0; i < cams.cameras.size(); ++i) {
            write_png(fs::path(f.renders) / frame_name(i), render_forward(r.scene, cams.cameras[i], ro).rgb);
        }
    }
    std::cout << json{{"event", "done"}, {"editor", editor->name()}, {"refresh_events", r.refresh_events},
                      {"initial_loss", r.initial_loss}, {"final_loss", r.final_loss}, {"out", f.out}}.dump()
              << std::endl;
    return 0;
}

struct RenderFlags {
    std::string scene, cameras, out, center = "0,0,0";
    int frames = 0, width = 64, height = 64;
    double radius = 3.0, elevation = 10.0, start_azimuth = 0.0, focal = 80.0;
};

int cmd_render(const CLI::App& app, const Common& c, const RenderFlags& f) {
    RenderOptions ro;
    ro.background = parse_vec3(c.background, "--background", true);
    ro.tile_size = c.tile_size;
    const bool orbit = f.frames > 0;
    if (orbit == !f.cameras.empty()) throw FlagError("give exactly one of --cameras or --orbit-frames");
    std::vector<Camera> cameras;
    if (orbit) {
        OrbitSpec spec;
        spec.center = parse_vec3(f.center, "--orbit-center", false);
        spec.radius = f.radius;
        spec.elevation_deg = f.elevation;
        spec.start_azimuth_deg = f.start_azimuth;
        spec.frames = f.frames;
        spec.width = f.width;
        spec.height = f.height;
        spec.focal = f.focal;
        try {
            cameras = orbit_cameras(spec);
        } catch (const InvalidArgumentError& e) {
            throw FlagError(e.what());
        }
    }
    announce("render", app);
    const GaussianScene scene = load_scene(require_file(f.scene));
    if (!orbit) cameras = read_cameras(f.cameras).cameras;
    fs::create_directories(f.out);
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        write_png(fs::path(f.out) / frame_name(i), render_forward(scene, cameras[i], ro).rgb);
    }
    std::cout << json{{"event", "done"}, {"frames", cameras.size()}, {"out", f.out}}.dump() << std::endl;
    return 0;
}

int cmd_gradcheck(const CLI::App& app, int seed, int gaussians, int size) {
    announce("gradcheck", app);
    RandomGradCheckSpec spec;
    spec.gaussians = gaussians;
    spec.size = size;
    const GradCheckReport r = gradcheck_random(static_cast<std::uint64_t>(seed), spec);
    const bool ok = r.max_rel_error < 1e-2 && r.checked > 0;
    std::cout << json{{"max_rel_error", r.max_rel_error}, {"checked", r.checked}, {"skipped", r.skipped},
                      {"worst", r.worst}, {"pass", ok}}.dump()
              << std::endl;
    std::printf("max relative error %.3e\n", r.max_rel_error);
    return ok ? 0 : kExitFailure;
}

int cmd_attn_demo(const CLI::App& app, int seed, int tokens, int dim, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw FlagError("--lambda must lie in [0,1]");
    announce("attn-demo", app);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> n(0.0, 1.0);
    auto random = [&](int r, int c) {
        FeatureMatrix m(r, c);
        for (int i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
        return m;
    };
    const FeatureMatrix q = random(tokens, dim), k = random(tokens, dim), v = random(tokens, dim);
    const FeatureMatrix kr = random(tokens, dim), vr = random(tokens, dim);
    ReferenceBank bank;
    bank.entries.emplace_back(kr, vr);
    const FeatureMatrix plain = sdp_attention(q, k, v);
    const double row_sum = (attention_weights(q, k).rowwise().sum().array() - 1.0).abs().maxCoeff();
    const double dup = (reference_concat_attention(q, k, v, k, v) - plain).cwiseAbs().maxCoeff();
    const FeatureMatrix concat = reference_concat_attention(q, k, v, kr, vr);
    const FeatureMatrix blend = persona_blend_attention(q, k, v, bank, lambda);
    const FeatureMatrix expected = lambda * plain + (1.0 - lambda) * sdp_attention(q, kr, vr);
    std::cout << json{{"row_sum_error", row_sum},
                      {"duplication_error", dup},
                      {"reference_shift", (concat - plain).norm()},
                      {"persona_blend_error", (blend - expected).cwiseAbs().maxCoeff()},
                      {"persona_shift", (blend - plain).norm()}}.dump()
              << std::endl;
    return 0;
}

struct LoraFlags {
    std::string data, model, out, log;
    int iters = 1000, seed = 0, masks = 8, batch = 8, train_base = 0, base_batch = 16;
    double lr = 1e-3, base_lr = 2e-3;
    int image_size = 8, patch = 2, model_dim = 64, ff_dim = 128, blocks = 2, rank = 8;
};

std::vector<MannequinSample> read_manifest(const fs::path& path, std::vector<int>* labels) {
    std::ifstream in(require_file(path));
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    std::vector<MannequinSample> out;
    const fs::path dir = path.parent_path();
    for (const auto& e : j.at("samples")) {
        MannequinSample s;
        s.image = read_png(require_file(dir / e.at("image").get<std::string>()));
        s.garment_mask = read_mask_png(require_file(dir / e.at("mask").get<std::string>()));
        s.label = e.at("label").get<int>();
        labels->push_back(s.label);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw InvalidArgumentError("manifest lists no samples");
    return out;
}

int cmd_lora_train(const CLI::App& app, const LoraFlags& f) {
    if (f.train_base == 0 && !fs::exists(f.model)) throw MissingFileError("no such file: " + f.model);
    announce("lora-train", app);
    std::vector<int> labels;
    const auto samples = read_manifest(f.data, &labels);
    LogFile log(f.log);
    const NoiseSchedule sched = NoiseSchedule::linear();

    std::optional<ToyDenoiser> model;
    if (f.train_base > 0) {
        DenoiserConfig cfg;
        cfg.image_size = f.image_size;
        cfg.patch = f.patch;
        cfg.model_dim = f.model_dim;
        cfg.ff_dim = f.ff_dim;
        cfg.blocks = f.blocks;
        cfg.lora_rank = f.rank;
        model.emplace(cfg, static_cast<std::uint64_t>(f.seed));
        std::vector<TrainingExample> data;
        for (const auto& s : samples) {
            data.push_back({resize(s.image, f.image_size, f.image_size), Image(f.image_size, f.image_size, 1), s.label});
        }
        const double loss = train_base(*model, data, sched, f.train_base, f.base_batch, f.base_lr,
                                       static_cast<std::uint64_t>(f.seed) + 1);
        model->save_base(f.model);
        if (log.get()) log.get()->record({{"event", "base_trained"}, {"iterations", f.train_base}, {"loss", loss}});
    } else {
        model.emplace(ToyDenoiser::load_base(f.model));
    }

    // Adapter stage: each subject image paired with K random masks.
    const int size = model->config().image_size;
    std::vector<TrainingExample> data;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Image z0 = resize(samples[i].image, size, size);
        for (const Image& m : sample_masks(f.masks, size, size, static_cast<std::uint64_t>(f.seed) * 7919 + i)) {
            data.push_back({z0, m, samples[i].label});
        }
    }
    model->reset_adapters(static_cast<std::uint64_t>(f.seed) + 2);
    AdapterOptimizer opt;
    opt.lr = f.lr;
    std::mt19937_64 rng(static_cast<std::uint64_t>(f.seed) + 3);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    double last = 0.0;
    for (int it = 0; it < f.iters; ++it) {
        std::vector<TrainingExample> batch;
        for (int b = 0; b < f.batch; ++b) batch.push_back(data[pick(rng)]);
        last = lora_train_step(*model, std::span<const TrainingExample>(batch), sched, opt, rng);
        if (log.get() && (it % 100 == 0 || it + 1 == f.iters)) log.get()->record({{"iteration", it}, {"loss", last}});
    }
    save_deltas(model->export_deltas(), f.out);
    std::cout << json{{"event", "done"}, {"final_loss", last}, {"examples", data.size()}, {"out", f.out}}.dump()
              << std::endl;
    return 0;
}

int cmd_gen_toydata(const CLI::App& app, const std::string& out, int count, int size, int seed) {
    announce("gen-toydata", app);
    fs::create_directories(fs::path(out) / "images");
    fs::create_directories(fs::path(out) / "masks");
    json samples = json::array();
    const auto data = generate_mannequins(count, size, static_cast<std::uint64_t>(seed));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string img = "images/" + frame_name(i), mask = "masks/" + frame_name(i);
        write_png(fs::path(out) / img, data[i].image);
        write_png(fs::path(out) / mask, data[i].garment_mask);
        samples.push_back({{"image", img}, {"mask", mask}, {"label", data[i].label}});
    }
    std::ofstream(fs::path(out) / "manifest.json") << json{{"size", size}, {"seed", seed}, {"samples", samples}}.dump(2);
    std::cout << json{{"event", "done"}, {"samples", data.size()}, {"out", out}}.dump() << std::endl;
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"gsedit: gaussian splatting scene editing"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    Common common;
    std::string cameras, out, scene, masks, log;
    int iters = 2000, sh_degree = 0, init_points = 2000;
    bool no_densify = false;
    auto* fit = app.add_subcommand("fit", "Fit a scene to posed images");
    fit->add_option("--cameras", cameras, "Camera JSON with image paths")->required();
    fit->add_option("--out", out, "Output scene (.gspl)")->required();
    fit->add_option("--iters", iters, "Iterations")->check(CLI::NonNegativeNumber);
    fit->add_option("--sh-degree", sh_degree, "Spherical harmonics degree")->check(CLI::Range(0, 3));
    fit->add_option("--init-points", init_points, "Initial gaussians")->check(CLI::PositiveNumber);
    fit->add_flag("--no-densify", no_densify, "Disable clone/split/prune");
    fit->add_option("--log", log, "NDJSON log path");
    add_common(fit, common);

    double fraction = 0.6;
    int min_views = 2;
    auto* label = app.add_subcommand("label", "Mark gaussians covered by 2D garment masks as editable");
    label->add_option("--scene", scene, "Input scene")->required();
    label->add_option("--cameras", cameras, "Camera JSON")->required();
    label->add_option("--masks", masks, "Mask directory (NNN.png per camera); defaults to camera-file masks");
    label->add_option("--out", out, "Output scene")->required();
    label->add_option("--weight-fraction", fraction, "Masked share of contribution needed per view")
        ->check(CLI::Range(0.0, 1.0));
    label->add_option("--min-views", min_views, "Views that must agree")->check(CLI::PositiveNumber);

    EditFlags ef;
    auto* edit = app.add_subcommand("edit", "Edit the garment region with an image editor");
    edit->add_option("--scene", ef.scene, "Labeled input scene")->required();
    edit->add_option("--cameras", ef.cameras, "Camera JSON")->required();
    edit->add_option("--masks", ef.masks, "Mask directory (NNN.png per camera); defaults to camera-file masks");
    edit->add_option("--out", ef.out, "Output scene")->required();
    edit->add_option("--iters", ef.iters, "Edit iterations");
    edit->add_option("--lambda", ef.lambda, "Persona blend weight");
    edit->add_option("--lambda1", ef.lambda1, "MAE weight");
    edit->add_option("--lambda2", ef.lambda2, "Perceptual weight");
    edit->add_option("--views", ef.views, "Reference views for the editor");
    edit->add_option("--refresh-interval", ef.refresh, "Iterations between target refreshes");
    edit->add_option("--editor", ef.editor, "Image editor")
        ->check(CLI::IsMember({"oracle", "toy-diffusion", "identity"}));
    edit->add_option("--target-color", ef.target, "Oracle editor color r,g,b");
    edit->add_option("--model", ef.model, "Toy denoiser base weights");
    edit->add_option("--lora", ef.lora, "Adapter file for the toy denoiser");
    edit->add_option("--label", ef.label, "Garment label for the toy denoiser");
    edit->add_option("--start-step", ef.start_step, "Toy denoiser start noise level")->check(CLI::Range(0, 99));
    edit->add_flag("--random-view-order", ef.random_order, "Seeded random view sampling instead of round robin");
    edit->add_option("--log", ef.log, "NDJSON log path");
    edit->add_option("--log-every", ef.log_every, "Log interval")->check(CLI::PositiveNumber);
    edit->add_option("--renders", ef.renders, "Also write renders of the result here");
    add_common(edit, common);

    RenderFlags rf;
    auto* render = app.add_subcommand("render", "Render a scene from cameras or a turntable orbit");
    render->add_option("--scene", rf.scene, "Scene")->required();
    render->add_option("--cameras", rf.cameras, "Camera JSON");
    render->add_option("--out", rf.out, "Output directory")->required();
    render->add_option("--orbit-frames", rf.frames, "Turntable frame count")->check(CLI::NonNegativeNumber);
    render->add_option("--orbit-center", rf.center, "Orbit center x,y,z");
    render->add_option("--orbit-radius", rf.radius, "Orbit radius");
    render->add_option("--orbit-elevation", rf.elevation, "Elevation in degrees");
    render->add_option("--orbit-start", rf.start_azimuth, "First azimuth in degrees");
    render->add_option("--width", rf.width, "Orbit image width")->check(CLI::PositiveNumber);
    render->add_option("--height", rf.height, "Orbit image height")->check(CLI::PositiveNumber);
    render->add_option("--focal", rf.focal, "Orbit focal length in pixels");
    add_common(render, common);

    int gc_seed = 0, gc_gaussians = 8, gc_size = 32;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the rasterizer backward pass");
    gradcheck->add_option("--seed", gc_seed, "Scene seed")->check(CLI::NonNegativeNumber);
    gradcheck->add_option("--gaussians", gc_gaussians, "Gaussians per scene")->check(CLI::PositiveNumber);
    gradcheck->add_option("--size", gc_size, "Image size")->check(CLI::PositiveNumber);

    int ad_seed = 0, ad_tokens = 6, ad_dim = 8;
    double ad_lambda = kDefaultPersonaLambda;
    auto* attn = app.add_subcommand("attn-demo", "Print attention identities on random features");
    attn->add_option("--seed", ad_seed, "Seed")->check(CLI::NonNegativeNumber);
    attn->add_option("--tokens", ad_tokens, "Tokens")->check(CLI::PositiveNumber);
    attn->add_option("--dim", ad_dim, "Feature width")->check(CLI::PositiveNumber);
    attn->add_option("--lambda", ad_lambda, "Persona blend weight");

    LoraFlags lf;
    auto* lora = app.add_subcommand("lora-train", "Train toy denoiser adapters on the masked objective");
    lora->add_option("--data", lf.data, "Dataset manifest (gen-toydata)")->required();
    lora->add_option("--model", lf.model, "Base weights (read, or written with --train-base)")->required();
    lora->add_option("--out", lf.out, "Adapter output file")->required();
    lora->add_option("--iters", lf.iters, "Adapter steps")->check(CLI::NonNegativeNumber);
    lora->add_option("--seed", lf.seed, "Seed")->check(CLI::NonNegativeNumber);
    lora->add_option("--lr", lf.lr, "Adapter learning rate")->check(CLI::PositiveNumber);
    lora->add_option("--masks-per-image", lf.masks, "Random masks per image")->check(CLI::PositiveNumber);
    lora->add_option("--batch", lf.batch, "Batch size")->check(CLI::PositiveNumber);
    lora->add_option("--train-base", lf.train_base, "Train base weights first for this many steps")
        ->check(CLI::NonNegativeNumber);
    lora->add_option("--base-lr", lf.base_lr, "Base learning rate")->check(CLI::PositiveNumber);
    lora->add_option("--image-size", lf.image_size, "Latent size for a new base")->check(CLI::PositiveNumber);
    lora->add_option("--patch", lf.patch, "Patch size for a new base")->check(CLI::PositiveNumber);
    lora->add_option("--model-dim", lf.model_dim, "Token width for a new base")->check(CLI::PositiveNumber);
    lora->add_option("--ff-dim", lf.ff_dim, "Feed-forward width for a new base")->check(CLI::PositiveNumber);
    lora->add_option("--blocks", lf.blocks, "Blocks for a new base")->check(CLI::PositiveNumber);
    lora->add_option("--rank", lf.rank, "Adapter rank")->check(CLI::PositiveNumber);
    lora->add_option("--log", lf.log, "NDJSON log path");

    int gen_count = 2000, gen_size = 8, gen_seed = 7;
    auto* gen = app.add_subcommand("gen-toydata", "Write the procedural mannequin dataset");
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--count", gen_count, "Samples")->check(CLI::PositiveNumber);
    gen->add_option("--size", gen_size, "Image size")->check(CLI::Range(4, 1024));
    gen->add_option("--seed", gen_seed, "Seed")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail_line("invalid_flags", e.what(), kExitFlags);
        return kExitFlags;
    }

    if (fit->parsed()) return cmd_fit(*fit, common, cameras, out, iters, sh_degree, init_points, no_densify, log);
    if (label->parsed()) return cmd_label(*label, scene, cameras, masks, out, fraction, min_views);
    if (edit->parsed()) return cmd_edit(*edit, common, ef);
    if (render->parsed()) return cmd_render(*render, common, rf);
    if (gradcheck->parsed()) return cmd_gradcheck(*gradcheck, gc_seed, gc_gaussians, gc_size);
    if (attn->parsed()) return cmd_attn_demo(*attn, ad_seed, ad_tokens, ad_dim, ad_lambda);
    if (lora->parsed()) return cmd_lora_train(*lora, lf);
    return cmd_gen_toydata(*gen, out, gen_count, gen_size, gen_seed);
}

std::string usage() {
    std::string u = "usage: gsedit <command> [flags]\n\ncommands:\n";
    for (const auto& c : kCommands) u += "  " + c + "\n";
    return u + "\nRun 'gsedit <command> --help' for the flags of a command.\n";
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << usage();
        return kExitUsage;
    }
    const std::string first = argv[1];
    if (first == "-h" || first == "--help") {
        std::cout << usage();
        return 0;
    }
    if (std::find(kCommands.begin(), kCommands.end(), first) == kCommands.end()) {
        fail_line("unknown_command", "unknown command '" + first + "'", kExitUsage);
        std::cerr << usage();
        return kExitUsage;
    }
    try {
        return run(argc, argv);
    } catch (const FlagError& e) {
        fail_line("invalid_flags", e.what(), kExitFlags);
        return kExitFlags;
    } catch (const MissingFileError& e) {
        fail_line("missing_file", e.what(), kExitMissing);
        return kExitMissing;
    } catch (const IoError& e) {
        fail_line("io", e.what(), kExitMissing);
        return kExitMissing;
    } catch (const std::exception& e) {
        fail_line("runtime", e.what(), kExitFailure);
        return kExitFailure;
    }
}
