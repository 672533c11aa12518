#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "diffmix/errors.hpp"
#include "diffmix/fusion.hpp"
#include "diffmix/imageio.hpp"
#include "diffmix/oracle.hpp"
#include "diffmix/resample.hpp"
#include "diffmix/sampler.hpp"
#include "diffmix/schedule.hpp"
#include "diffmix/segmentation.hpp"

#include "json.hpp"

namespace diffmix {

namespace cfgdetail {

using nlohmann::json;

inline std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

// Strict parsing: every object is checked against its allowed key set so a
// typo fails loudly instead of silently using a default.
inline void require_keys(const json& obj, const std::string& path,
                         const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("'" + path + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + join(path, key) + "'");
        }
    }
}

inline const json& require(const json& obj, const std::string& path, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError("missing required key '" + join(path, key) + "'");
    return *it;
}

inline double get_number(const json& obj, const std::string& path, const char* key) {
    const json& v = require(obj, path, key);
    if (!v.is_number()) throw ConfigError("'" + join(path, key) + "' must be a number");
    return v.get<double>();
}

inline double get_number_or(const json& obj, const std::string& path, const char* key,
                            double fallback) {
    if (!obj.contains(key)) return fallback;
    return get_number(obj, path, key);
}

inline int get_int(const json& obj, const std::string& path, const char* key) {
    const json& v = require(obj, path, key);
    if (!v.is_number_integer()) throw ConfigError("'" + join(path, key) + "' must be an integer");
    return v.get<int>();
}

inline int get_int_or(const json& obj, const std::string& path, const char* key, int fallback) {
    if (!obj.contains(key)) return fallback;
    return get_int(obj, path, key);
}

inline std::string get_string(const json& obj, const std::string& path, const char* key) {
    const json& v = require(obj, path, key);
    if (!v.is_string()) throw ConfigError("'" + join(path, key) + "' must be a string");
    return v.get<std::string>();
}

inline std::string get_string_or(const json& obj, const std::string& path, const char* key,
                                 const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    return get_string(obj, path, key);
}

inline std::vector<double> get_color(const json& obj, const std::string& path, const char* key,
                                     int channels) {
    const json& v = require(obj, path, key);
    if (!v.is_array() || static_cast<int>(v.size()) != channels) {
        throw ConfigError("'" + join(path, key) + "' must be an array of " +
                          std::to_string(channels) + " numbers");
    }
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) throw ConfigError("'" + join(path, key) + "' must hold numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

inline Rect get_rect(const json& obj, const std::string& path, const char* key) {
    const json& v = require(obj, path, key);
    if (!v.is_array() || v.size() != 4) {
        throw ConfigError("'" + join(path, key) + "' must be [row0,col0,row1,col1]");
    }
    for (const auto& x : v) {
        if (!x.is_number_integer())
            throw ConfigError("'" + join(path, key) + "' must hold integers");
    }
    return Rect{v[0].get<int>(), v[1].get<int>(), v[2].get<int>(), v[3].get<int>()};
}

} // namespace cfgdetail

struct SegmentationParams {
    DetectorParams detector;
    std::vector<double> background_color;
    std::vector<ObjectSignature> signatures; // generic appearance, per tag
    std::vector<std::pair<std::string, Rect>> manual_boxes;

    const ObjectSignature* find(const std::string& tag) const {
        for (const auto& s : signatures)
            if (s.tag == tag) return &s;
        return nullptr;
    }
};

// A concept's custom appearance color, for metrics classification.
struct ConceptAppearance {
    int model_id = 0;
    std::string tag;
    std::vector<double> custom_color;
};

struct BindingDecl {
    std::string tag; // empty for the background binding
    int model_id = 0;
    ConditionSpec condition;
};

// Fully materialized run description: schedule, models, conditions and all
// pipeline knobs, ready to sample from.
struct Scene {
    std::shared_ptr<const NoiseSchedule> schedule;
    GridShape grid;
    std::shared_ptr<const TemplateMixtureModel> base;
    std::map<int, std::shared_ptr<const TemplateMixtureModel>> models; // id 0 included

    ConditionSpec multi_condition;
    std::vector<ConditionSpec> single_conditions;
    std::vector<ConceptAppearance> concept_appearances;

    int t_con = 0;
    double lambda = 0.6;
    double cfg_scale = 7.5; // used by the plain-cfg ablation arm
    int extra_mask_steps = 0;
    std::vector<std::uint64_t> default_seeds;

    ResampleConfig resample;
    SegmentationParams segmentation;

    std::vector<BindingDecl> concept_bindings; // priority order
    BindingDecl background_binding;

    std::string output_prefix = "sample";
    std::string config_hash;
    std::vector<std::string> warnings;

    const TemplateMixtureModel& model(int id) const {
        auto it = models.find(id);
        if (it == models.end()) {
            throw ConfigError("model id " + std::to_string(id) + " does not exist");
        }
        return *it->second;
    }

    const ConceptAppearance* appearance_for(const std::string& tag) const {
        for (const auto& a : concept_appearances)
            if (a.tag == tag) return &a;
        return nullptr;
    }
};

namespace cfgdetail {

inline Grid paint_template(const json& spec, const std::string& path, const GridShape& shape,
                           const std::filesystem::path& base_dir,
                           std::map<std::string, Rect>& objects_out) {
    Grid img(shape);
    if (spec.contains("ppm")) {
        require_keys(spec, path, {"name", "weight", "appearance", "ppm", "objects"});
        const std::filesystem::path file =
            base_dir / get_string(spec, path, "ppm");
        img = read_image(file);
        if (img.shape() != shape) {
            throw ConfigError("'" + join(path, "ppm") + "': image is " + img.shape().str() +
                              ", grid is " + shape.str());
        }
        const json& objects = require(spec, path, "objects");
        for (std::size_t i = 0; i < objects.size(); ++i) {
            const std::string opath = join(path, "objects[" + std::to_string(i) + "]");
            require_keys(objects[i], opath, {"tag", "box"});
            const std::string tag = get_string(objects[i], opath, "tag");
            if (objects_out.count(tag)) {
                throw ConfigError("'" + opath + "': duplicate tag '" + tag + "'");
            }
            objects_out[tag] = get_rect(objects[i], opath, "box");
        }
        return img;
    }

    require_keys(spec, path, {"name", "weight", "appearance", "background_color", "blobs"});
    const auto bg = get_color(spec, path, "background_color", shape.channels);
    for (int r = 0; r < shape.height; ++r)
        for (int c = 0; c < shape.width; ++c)
            for (int ch = 0; ch < shape.channels; ++ch) img.at(r, c, ch) = bg[ch];

    const json& blobs = require(spec, path, "blobs");
    if (!blobs.is_array()) throw ConfigError("'" + join(path, "blobs") + "' must be an array");
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        const std::string bpath = join(path, "blobs[" + std::to_string(i) + "]");
        require_keys(blobs[i], bpath, {"tag", "box", "color", "amplitude"});
        const std::string tag = get_string(blobs[i], bpath, "tag");
        const Rect box = get_rect(blobs[i], bpath, "box");
        const auto color = get_color(blobs[i], bpath, "color", shape.channels);
        const double amplitude = get_number_or(blobs[i], bpath, "amplitude", 1.0);
        if (!box.inside(shape.height, shape.width)) {
            throw ConfigError("'" + bpath + "': box " + box.str() + " leaves the grid");
        }
        if (objects_out.count(tag)) {
            throw ConfigError("'" + bpath + "': duplicate tag '" + tag + "'");
        }
        objects_out[tag] = box;
        for (int r = box.row0; r < box.row1; ++r)
            for (int c = box.col0; c < box.col1; ++c)
                for (int ch = 0; ch < shape.channels; ++ch)
                    img.at(r, c, ch) = bg[ch] + amplitude * (color[ch] - bg[ch]);
    }
    return img;
}

inline Template parse_template(const json& spec, const std::string& path, const GridShape& shape,
                               const std::filesystem::path& base_dir, int owner_id) {
    Template t;
    t.name = get_string(spec, path, "name");
    t.weight = get_number(spec, path, "weight");
    const std::string appearance = get_string_or(spec, path, "appearance", "generic");
    if (appearance == "generic") {
        t.appearance = Appearance::generic;
    } else if (appearance == "custom") {
        t.appearance = Appearance::custom;
        t.concept_id = owner_id;
    } else {
        throw ConfigError("'" + join(path, "appearance") + "' must be generic or custom");
    }
    t.image = paint_template(spec, path, shape, base_dir, t.objects);
    return t;
}

inline std::vector<Template> parse_templates(const json& arr, const std::string& path,
                                             const GridShape& shape,
                                             const std::filesystem::path& base_dir,
                                             int owner_id) {
    if (!arr.is_array() || arr.empty()) {
        throw ConfigError("'" + path + "' must be a non-empty array");
    }
    std::vector<Template> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        out.push_back(
            parse_template(arr[i], path + "[" + std::to_string(i) + "]", shape, base_dir,
                           owner_id));
    }
    return out;
}

inline ConditionSpec parse_binding_condition(const json& obj, const std::string& path,
                                             const std::string& tag,
                                             const std::vector<std::string>& multi_tags) {
    const std::string kind = get_string_or(obj, path, "condition", "single");
    if (kind == "single") {
        if (tag.empty()) {
            throw ConfigError("'" + join(path, "condition") +
                              "': background binding cannot be 'single'");
        }
        return ConditionSpec::single(tag);
    }
    if (kind == "multi") return ConditionSpec::multi(multi_tags);
    if (kind == "null") return ConditionSpec::null_condition();
    throw ConfigError("'" + join(path, "condition") + "' must be single, multi or null");
}

} // namespace cfgdetail

inline Scene parse_scene(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    using namespace cfgdetail;
    require_keys(doc, "", {"schedule", "models", "conditions", "pipeline", "segmentation",
                           "fusion_bindings", "resample", "output"});

    Scene scene;

    // schedule
    const json& sched = require(doc, "", "schedule");
    require_keys(sched, "schedule", {"kind", "num_steps", "beta_min", "beta_max"});
    const std::string kind_str = get_string_or(sched, "schedule", "kind", "linear");
    ScheduleKind kind;
    if (kind_str == "linear") {
        kind = ScheduleKind::linear;
    } else if (kind_str == "cosine") {
        kind = ScheduleKind::cosine;
    } else {
        throw ConfigError("'schedule.kind' must be linear or cosine");
    }
    const int num_steps = get_int_or(sched, "schedule", "num_steps", 50);
    scene.schedule = std::make_shared<NoiseSchedule>(
        build_schedule(kind, num_steps, get_number_or(sched, "schedule", "beta_min", 1e-4),
                       get_number_or(sched, "schedule", "beta_max", 0.02)));

    // models
    const json& models = require(doc, "", "models");
    require_keys(models, "models", {"grid", "base", "concepts"});
    const json& grid = require(models, "models", "grid");
    require_keys(grid, "models.grid", {"height", "width", "channels"});
    scene.grid = GridShape{get_int(grid, "models.grid", "height"),
                           get_int(grid, "models.grid", "width"),
                           get_int(grid, "models.grid", "channels")};
    if (scene.grid.height <= 0 || scene.grid.width <= 0 || scene.grid.channels <= 0) {
        throw ConfigError("'models.grid' dimensions must be positive");
    }

    const json& base = require(models, "models", "base");
    require_keys(base, "models.base", {"data_sigma", "templates"});
    scene.base = std::make_shared<TemplateMixtureModel>(
        0, get_number_or(base, "models.base", "data_sigma", 0.05),
        parse_templates(require(base, "models.base", "templates"), "models.base.templates",
                        scene.grid, base_dir, 0),
        scene.schedule);
    scene.models[0] = scene.base;

    const json& concepts = require(models, "models", "concepts");
    if (!concepts.is_array()) throw ConfigError("'models.concepts' must be an array");
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        const std::string path = "models.concepts[" + std::to_string(i) + "]";
        require_keys(concepts[i], path, {"id", "tag", "data_sigma", "signature", "templates"});
        const int id = get_int(concepts[i], path, "id");
        if (id < 1) throw ConfigError("'" + path + ".id' must be >= 1");
        if (scene.models.count(id)) {
            throw ConfigError("'" + path + ".id': duplicate model id " + std::to_string(id));
        }
        auto model = std::make_shared<TemplateMixtureModel>(
            id, get_number_or(concepts[i], path, "data_sigma", 0.05),
            parse_templates(require(concepts[i], path, "templates"), path + ".templates",
                            scene.grid, base_dir, id),
            scene.schedule);
        scene.models[id] = std::move(model);
        scene.concept_appearances.push_back(
            {id, get_string(concepts[i], path, "tag"),
             get_color(concepts[i], path, "signature", scene.grid.channels)});
    }

    // conditions
    const json& conds = require(doc, "", "conditions");
    require_keys(conds, "conditions", {"multi", "singles"});
    const json& multi = require(conds, "conditions", "multi");
    require_keys(multi, "conditions.multi", {"tags", "text"});
    std::vector<std::string> multi_tags;
    for (const auto& t : require(multi, "conditions.multi", "tags")) {
        multi_tags.push_back(t.get<std::string>());
    }
    if (multi_tags.empty()) throw ConfigError("'conditions.multi.tags' must be non-empty");
    scene.multi_condition =
        ConditionSpec::multi(multi_tags, get_string_or(multi, "conditions.multi", "text", ""));

    const json& singles = require(conds, "conditions", "singles");
    if (!singles.is_array() || singles.empty()) {
        throw ConfigError("'conditions.singles' must be a non-empty array");
    }
    for (std::size_t i = 0; i < singles.size(); ++i) {
        const std::string path = "conditions.singles[" + std::to_string(i) + "]";
        require_keys(singles[i], path, {"tag", "text"});
        scene.single_conditions.push_back(
            ConditionSpec::single(get_string(singles[i], path, "tag"), AppearanceRequest::resolve,
                                  get_string_or(singles[i], path, "text", "")));
    }

    // pipeline
    const json& pipe = require(doc, "", "pipeline");
    require_keys(pipe, "pipeline",
                 {"t_con", "lambda", "cfg_scale", "extra_mask_steps", "seeds"});
    const int default_tcon = static_cast<int>(std::lround(0.8 * num_steps));
    scene.t_con = get_int_or(pipe, "pipeline", "t_con", default_tcon);
    if (scene.t_con < 1 || scene.t_con >= num_steps) {
        throw ConfigError("'pipeline.t_con' must satisfy 1 <= t_con < num_steps, got " +
                          std::to_string(scene.t_con));
    }
    scene.lambda = get_number_or(pipe, "pipeline", "lambda", 0.6);
    scene.cfg_scale = get_number_or(pipe, "pipeline", "cfg_scale", 7.5);
    scene.extra_mask_steps = get_int_or(pipe, "pipeline", "extra_mask_steps", 0);
    if (scene.extra_mask_steps < 0) throw ConfigError("'pipeline.extra_mask_steps' must be >= 0");
    if (pipe.contains("seeds")) {
        for (const auto& s : pipe["seeds"]) {
            if (!s.is_number_integer() || s.get<long long>() < 0) {
                throw ConfigError("'pipeline.seeds' must hold nonnegative integers");
            }
            scene.default_seeds.push_back(s.get<std::uint64_t>());
        }
    }
    GuidanceConfig content_guidance{GuidanceMode::cfg_pp, scene.lambda};
    content_guidance.validate();
    GuidanceConfig cfg_guidance{GuidanceMode::cfg, scene.cfg_scale};
    cfg_guidance.validate();

    // resample
    const json& resample = require(doc, "", "resample");
    require_keys(resample, "resample", {"rounds", "forward"});
    scene.resample.rounds = get_int_or(resample, "resample", "rounds", 10);
    const std::string fwd = get_string_or(resample, "resample", "forward", "ddim_inversion");
    if (fwd == "ddim_inversion") {
        scene.resample.forward_mode = ForwardMode::ddim_inversion;
    } else if (fwd == "fresh_noise") {
        scene.resample.forward_mode = ForwardMode::fresh_noise;
    } else {
        throw ConfigError("'resample.forward' must be ddim_inversion or fresh_noise");
    }
    scene.resample.guidance = content_guidance;
    scene.resample.multi_condition = scene.multi_condition;
    scene.resample.single_conditions = scene.single_conditions;
    scene.resample.validate();

    // segmentation
    const json& seg = require(doc, "", "segmentation");
    require_keys(seg, "segmentation",
                 {"tau", "min_area", "background_color", "signatures", "manual_boxes"});
    scene.segmentation.detector.tau = get_number_or(seg, "segmentation", "tau", 0.15);
    scene.segmentation.detector.min_area = get_int_or(seg, "segmentation", "min_area", 4);
    if (scene.segmentation.detector.tau <= 0.0) {
        throw ConfigError("'segmentation.tau' must be > 0");
    }
    if (scene.segmentation.detector.min_area < 1) {
        throw ConfigError("'segmentation.min_area' must be >= 1");
    }
    scene.segmentation.background_color =
        get_color(seg, "segmentation", "background_color", scene.grid.channels);
    for (std::size_t i = 0; i < require(seg, "segmentation", "signatures").size(); ++i) {
        const std::string path = "segmentation.signatures[" + std::to_string(i) + "]";
        const json& sig = seg["signatures"][i];
        require_keys(sig, path, {"tag", "color"});
        scene.segmentation.signatures.push_back(
            {get_string(sig, path, "tag"), get_color(sig, path, "color", scene.grid.channels)});
    }
    if (seg.contains("manual_boxes")) {
        for (std::size_t i = 0; i < seg["manual_boxes"].size(); ++i) {
            const std::string path = "segmentation.manual_boxes[" + std::to_string(i) + "]";
            const json& mb = seg["manual_boxes"][i];
            require_keys(mb, path, {"tag", "box"});
            const Rect box = get_rect(mb, path, "box");
            if (!box.inside(scene.grid.height, scene.grid.width)) {
                throw ConfigError("'" + path + ".box' leaves the grid");
            }
            scene.segmentation.manual_boxes.emplace_back(get_string(mb, path, "tag"), box);
        }
    }

    // fusion bindings
    const json& fusion = require(doc, "", "fusion_bindings");
    require_keys(fusion, "fusion_bindings", {"concepts", "background"});
    const json& bindings = require(fusion, "fusion_bindings", "concepts");
    if (!bindings.is_array() || bindings.empty()) {
        throw ConfigError("'fusion_bindings.concepts' must be a non-empty array");
    }
    for (std::size_t i = 0; i < bindings.size(); ++i) {
        const std::string path = "fusion_bindings.concepts[" + std::to_string(i) + "]";
        require_keys(bindings[i], path, {"tag", "model", "condition"});
        BindingDecl decl;
        decl.tag = get_string(bindings[i], path, "tag");
        decl.model_id = get_int(bindings[i], path, "model");
        if (!scene.models.count(decl.model_id)) {
            throw ConfigError("'" + path + ".model': model id " +
                              std::to_string(decl.model_id) + " does not exist");
        }
        decl.condition = parse_binding_condition(bindings[i], path, decl.tag, multi_tags);
        if (scene.segmentation.find(decl.tag) == nullptr) {
            throw ConfigError("'" + path + ".tag': no segmentation signature for '" + decl.tag +
                              "'");
        }
        scene.concept_bindings.push_back(std::move(decl));
    }
    const json& background = require(fusion, "fusion_bindings", "background");
    require_keys(background, "fusion_bindings.background", {"model", "condition"});
    scene.background_binding.tag = "";
    scene.background_binding.model_id =
        get_int_or(background, "fusion_bindings.background", "model", 0);
    if (!scene.models.count(scene.background_binding.model_id)) {
        throw ConfigError("'fusion_bindings.background.model': model id " +
                          std::to_string(scene.background_binding.model_id) + " does not exist");
    }
    scene.background_binding.condition =
        parse_binding_condition(background, "fusion_bindings.background", "", multi_tags);

    // output
    const json& output = require(doc, "", "output");
    require_keys(output, "output", {"prefix"});
    scene.output_prefix = get_string_or(output, "output", "prefix", "sample");

    // Cross-checks: every condition the run will issue must resolve now.
    scene.base->active_set(ConditionSpec::null_condition());
    scene.base->active_set(scene.multi_condition);
    for (const auto& c : scene.single_conditions) scene.base->active_set(c);
    for (const auto& b : scene.concept_bindings) scene.model(b.model_id).active_set(b.condition);
    scene.model(scene.background_binding.model_id)
        .active_set(scene.background_binding.condition);

    // Signature separation is a detector precondition; close colors are a
    // warning, not an error (such scenes legitimately exercise the failure
    // path).
    const auto& sigs = scene.segmentation.signatures;
    for (std::size_t i = 0; i < sigs.size(); ++i) {
        for (std::size_t j = i + 1; j < sigs.size(); ++j) {
            double d2 = 0.0;
            for (std::size_t ch = 0; ch < sigs[i].color.size(); ++ch) {
                const double d = sigs[i].color[ch] - sigs[j].color[ch];
                d2 += d * d;
            }
            if (std::sqrt(d2) <= 2.0 * scene.segmentation.detector.tau) {
                scene.warnings.push_back("signatures '" + sigs[i].tag + "' and '" + sigs[j].tag +
                                         "' are closer than 2*tau; detection may conflate them");
            }
        }
    }

    scene.config_hash = hex64(fnv1a64(doc.dump()));
    return scene;
}

inline Scene load_scene(const std::filesystem::path& config_path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(config_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot parse '" + config_path.string() + "': " + e.what());
    }
    return parse_scene(doc, config_path.parent_path());
}

} // namespace diffmix
