#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>
#include <vector>

#include "diffmix/config.hpp"
#include "diffmix/fusion.hpp"
#include "diffmix/imageio.hpp"
#include "diffmix/metrics.hpp"
#include "diffmix/report.hpp"
#include "diffmix/resample.hpp"
#include "diffmix/sampler.hpp"
#include "diffmix/segmentation.hpp"

namespace diffmix {

struct RunOptions {
    std::vector<std::uint64_t> seeds;
    std::filesystem::path out_dir;
    bool dump_masks = false;
    bool dump_trajectory = false;
    int workers = 1;
    bool write_artifacts = true;
};

// The four published ablation switches.
struct AblationToggles {
    bool no_resample = false;
    bool no_content_phase = false;      // manual masks, fusion from the start
    bool cfg_instead_of_cfgpp = false;  // plain cfg everywhere, resampling off
    bool mix_in_noise_space = false;    // compose noise predictions, not estimates
};

inline AblationToggles toggles_for_arm(const std::string& arm) {
    if (arm == "default") return {};
    if (arm == "no_resample") return {.no_resample = true};
    if (arm == "no_content") return {.no_content_phase = true};
    if (arm == "no_cfgpp") return {.cfg_instead_of_cfgpp = true};
    if (arm == "eps_mixing") return {.mix_in_noise_space = true};
    throw ConfigError("unknown ablation arm '" + arm +
                      "' (expected default, no_resample, no_content, no_cfgpp or eps_mixing)");
}

inline std::vector<std::string> default_arms() {
    return {"default", "no_resample", "no_cfgpp", "no_content", "eps_mixing"};
}

namespace pipedetail {

inline std::string seed_stem(const Scene& scene, std::uint64_t seed) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_s%06llu", static_cast<unsigned long long>(seed));
    return scene.output_prefix + buf;
}

inline std::string step_suffix(int t) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "_t%03d_xhat.ppm", t);
    return buf;
}

struct EffectiveConfig {
    GuidanceConfig guidance;
    int resample_rounds = 0;
    bool content_phase = true;
    MixSpace mix = MixSpace::denoised;
};

inline EffectiveConfig make_effective(const Scene& scene, const AblationToggles& t) {
    EffectiveConfig e;
    if (t.cfg_instead_of_cfgpp) {
        e.guidance = {GuidanceMode::cfg, scene.cfg_scale};
        // Resampling rides on the interpolating guidance; the plain-cfg arm
        // drops it, matching the published ablation protocol.
        e.resample_rounds = 0;
        e.mix = MixSpace::noise;
    } else {
        e.guidance = {GuidanceMode::cfg_pp, scene.lambda};
        e.resample_rounds = scene.resample.rounds;
        e.mix = t.mix_in_noise_space ? MixSpace::noise : MixSpace::denoised;
    }
    if (t.no_resample) e.resample_rounds = 0;
    if (t.no_content_phase) {
        e.content_phase = false;
        e.resample_rounds = 0; // the initial-latent refinement is part of that stage
    }
    return e;
}

// Boxes for the bound concepts in priority order, either detected from the
// intermediate denoised image or taken from the configured manual layout.
inline MaskExtraction extract_masks(const Scene& scene, const EffectiveConfig& eff,
                                    const Grid& snapshot, int t_snapshot, bool manual,
                                    std::vector<std::pair<std::string, Rect>>& boxes_out) {
    std::vector<std::pair<int, Rect>> boxes;
    if (manual) {
        for (std::size_t i = 0; i < scene.concept_bindings.size(); ++i) {
            const std::string& tag = scene.concept_bindings[i].tag;
            const auto it =
                std::find_if(scene.segmentation.manual_boxes.begin(),
                             scene.segmentation.manual_boxes.end(),
                             [&](const auto& entry) { return entry.first == tag; });
            if (it == scene.segmentation.manual_boxes.end()) {
                return MaskExtraction::fail("no manual box for concept '" + tag + "'");
            }
            boxes.emplace_back(static_cast<int>(i), it->second);
            boxes_out.emplace_back(tag, it->second);
        }
    } else {
        const Grid img = intermediate_image(snapshot, t_snapshot, *scene.base,
                                            scene.multi_condition, eff.guidance,
                                            *scene.schedule, scene.extra_mask_steps);
        std::vector<ObjectSignature> wanted;
        for (const auto& binding : scene.concept_bindings) {
            const ObjectSignature* sig = scene.segmentation.find(binding.tag);
            wanted.push_back(*sig); // presence checked at config load
        }
        const DetectionReport report =
            detect_objects(img, wanted, scene.segmentation.detector);
        if (!report.absent.empty()) {
            std::string missing;
            for (const auto& tag : report.absent) {
                if (!missing.empty()) missing += ", ";
                missing += tag;
            }
            return MaskExtraction::fail("mask extraction failed: no region for " + missing);
        }
        for (std::size_t i = 0; i < scene.concept_bindings.size(); ++i) {
            for (const auto& det : report.found) {
                if (det.tag == scene.concept_bindings[i].tag) {
                    boxes.emplace_back(static_cast<int>(i), det.box);
                    boxes_out.emplace_back(det.tag, det.box);
                }
            }
        }
    }
    return resolve_overlaps(boxes, scene.grid.height, scene.grid.width);
}

inline std::vector<ConceptBinding> make_bindings(const Scene& scene, const RegionMaskSet& masks) {
    std::vector<ConceptBinding> bindings;
    for (std::size_t i = 0; i < scene.concept_bindings.size(); ++i) {
        const BindingDecl& decl = scene.concept_bindings[i];
        bindings.push_back({static_cast<int>(i + 1), &scene.model(decl.model_id), decl.condition,
                            masks.regions[i].mask});
    }
    bindings.push_back({0, &scene.model(scene.background_binding.model_id),
                        scene.background_binding.condition, masks.background});
    return bindings;
}

inline SeedResult run_seed(const Scene& scene, std::uint64_t seed, const EffectiveConfig& eff,
                           const RunOptions& options) {
    const NoiseSchedule& sched = *scene.schedule;
    const std::string stem = seed_stem(scene, seed);

    SeedResult result;
    result.seed = seed;

    SamplerState state = initial_state(scene.grid, sched.num_steps, seed);

    if (eff.resample_rounds > 0) {
        ResampleConfig rcfg = scene.resample;
        rcfg.rounds = eff.resample_rounds;
        SeededRng forward_rng(seed ^ 0xda3e39cb94b95bdbULL);
        state.z = resample_loop(state.z, *scene.base, rcfg, &forward_rng);
        result.resample_rounds = rcfg.rounds;
    }

    Grid snapshot;
    if (eff.content_phase) {
        while (state.t > scene.t_con) {
            if (state.t == scene.t_con + 1) snapshot = state.z;
            if (options.dump_trajectory && options.write_artifacts) {
                auto eps = guided_epsilon(*scene.base, *scene.base, state.z, state.t,
                                          scene.multi_condition, eff.guidance);
                write_image(options.out_dir / (stem + step_suffix(state.t)),
                            tweedie_denoise(state.z, state.t, eps.guided, sched));
            }
            state = eff.guidance.mode == GuidanceMode::cfg
                        ? cfg_step(state, *scene.base, *scene.base, scene.multi_condition,
                                   eff.guidance, sched)
                        : cfgpp_step(state, *scene.base, *scene.base, scene.multi_condition,
                                     eff.guidance, sched);
            ++result.content_steps;
        }
    }

    MaskExtraction extraction = extract_masks(scene, eff, snapshot, scene.t_con + 1,
                                              !eff.content_phase, result.boxes);
    if (!extraction.ok) {
        result.status = "extraction_failed";
        result.failure = extraction.failure;
        return result;
    }
    if (options.dump_masks && options.write_artifacts) {
        for (std::size_t i = 0; i < extraction.masks.regions.size(); ++i) {
            const std::string file =
                stem + "_mask_" + scene.concept_bindings[i].tag + ".pgm";
            write_mask(options.out_dir / file, extraction.masks.regions[i].mask);
            result.mask_files.push_back(file);
        }
        const std::string bg_file = stem + "_mask_background.pgm";
        write_mask(options.out_dir / bg_file, extraction.masks.background);
        result.mask_files.push_back(bg_file);
    }

    const auto bindings = make_bindings(scene, extraction.masks);
    StepObserver observer;
    if (options.dump_trajectory && options.write_artifacts) {
        observer = [&](int t, const Grid& xhat) {
            write_image(options.out_dir / (stem + step_suffix(t)), xhat);
        };
    }
    const int fusion_from = state.t;
    Grid final_image = run_fusion_phase(state, bindings, *scene.base,
                                        eff.guidance.scale, sched, eff.mix, observer);
    result.fusion_steps = fusion_from;

    result.status = "ok";
    result.metrics = evaluate_sample(final_image, scene);
    if (options.write_artifacts) {
        result.image_file = stem + ".ppm";
        write_image(options.out_dir / result.image_file, final_image);
    }
    return result;
}

} // namespace pipedetail

// Runs the full two-stage pipeline over a batch of seeds:
//   1. draw the initial latent
//   2. refine it with the resampling loop
//   3. multi-object guided sampling down to t_con
//   4. extract region masks from the denoised view at t_con + 1; a failed
//      extraction marks the seed and skips fusion, never the batch
//   5. region-wise fusion sampling down to the clean sample
// Seeds are independent and may fan out across workers; the report is
// aggregated in seed order regardless.
inline RunReport run_pipeline(const Scene& scene, const RunOptions& options,
                              const AblationToggles& toggles = {},
                              const std::string& arm_name = "default") {
    if (options.seeds.empty()) throw ConfigError("no seeds to run");
    const auto eff = pipedetail::make_effective(scene, toggles);
    if (!eff.content_phase) {
        for (const auto& binding : scene.concept_bindings) {
            const auto& boxes = scene.segmentation.manual_boxes;
            if (std::none_of(boxes.begin(), boxes.end(),
                             [&](const auto& b) { return b.first == binding.tag; })) {
                throw ConfigError("ablation without the content phase needs "
                                  "'segmentation.manual_boxes' for concept '" +
                                  binding.tag + "'");
            }
        }
    }

    std::vector<std::uint64_t> seeds = options.seeds;
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

    if (options.write_artifacts) std::filesystem::create_directories(options.out_dir);

    std::vector<SeedResult> results(seeds.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= seeds.size()) break;
            try {
                results[i] = pipedetail::run_seed(scene, seeds[i], eff, options);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    const int workers = std::max(1, std::min<int>(options.workers,
                                                  static_cast<int>(seeds.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    RunReport report;
    report.config_hash = scene.config_hash;
    report.arm = arm_name;
    report.seeds = seeds;
    report.results = std::move(results);
    const int expected = static_cast<int>(scene.concept_bindings.size());
    for (const auto& r : report.results) {
        if (r.status == "ok") {
            report.aggregate.add(r.metrics);
        } else {
            report.aggregate.add_missing_sample(expected);
        }
    }

    if (options.write_artifacts) {
        atomic_write_file(options.out_dir / "report.json", to_json(report).dump(2) + "\n");
        atomic_write_file(options.out_dir / "metrics.csv", per_seed_csv(report));
    }
    return report;
}

// Runs the requested arms (default plus the published toggles) and emits a
// side-by-side comparison.
inline std::vector<RunReport> run_ablation(const Scene& scene, const RunOptions& options,
                                           const std::vector<std::string>& arms) {
    if (arms.empty()) throw ConfigError("no ablation arms requested");
    std::vector<RunReport> reports;
    for (const std::string& arm : arms) {
        const AblationToggles toggles = toggles_for_arm(arm); // rejects unknown arms
        RunOptions arm_options = options;
        arm_options.out_dir = options.out_dir / arm;
        reports.push_back(run_pipeline(scene, arm_options, toggles, arm));
    }
    if (options.write_artifacts) {
        std::ostringstream csv;
        csv << "arm,coverage_rate,fidelity_score,blending_score,coverage_x_fidelity\n";
        nlohmann::json summary = nlohmann::json::array();
        for (const auto& report : reports) {
            const auto& a = report.aggregate;
            csv << report.arm << ',' << format_metric(a.coverage_rate()) << ','
                << format_metric(a.fidelity_score()) << ',' << format_metric(a.blending_score())
                << ',' << format_metric(a.coverage_x_fidelity()) << '\n';
            summary.push_back({{"arm", report.arm},
                               {"coverage_rate", a.coverage_rate()},
                               {"fidelity_score", a.fidelity_score()},
                               {"blending_score", a.blending_score()},
                               {"coverage_x_fidelity", a.coverage_x_fidelity()}});
        }
        std::filesystem::create_directories(options.out_dir);
        atomic_write_file(options.out_dir / "ablation.csv", csv.str());
        atomic_write_file(options.out_dir / "ablation.json", summary.dump(2) + "\n");
    }
    return reports;
}

} // namespace diffmix
