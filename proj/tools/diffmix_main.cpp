// Command-line front end: scene generation batches, the published ablation
// matrix, toy metrics, oracle self-checks and the frame-feature injection
// demo.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "diffmix/config.hpp"
#include "diffmix/imageio.hpp"
#include "diffmix/metrics.hpp"
#include "diffmix/oracle_check.hpp"
#include "diffmix/pipeline.hpp"
#include "diffmix/report.hpp"
#include "diffmix/videofeat.hpp"

namespace fs = std::filesystem;
using namespace diffmix;

namespace {

std::vector<std::uint64_t> resolve_seeds(const Scene& scene, int seed_count,
                                         const std::string& seed_list) {
    std::vector<std::uint64_t> seeds;
    if (!seed_list.empty()) {
        std::string token;
        std::istringstream in(seed_list);
        while (std::getline(in, token, ',')) {
            if (token.empty()) continue;
            seeds.push_back(std::stoull(token));
        }
    } else if (seed_count > 0) {
        for (int i = 1; i <= seed_count; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
    } else {
        seeds = scene.default_seeds;
    }
    if (seeds.empty()) {
        throw ConfigError("no seeds: pass --seeds/--seed-list or set pipeline.seeds");
    }
    return seeds;
}

void print_scene_warnings(const Scene& scene) {
    for (const auto& w : scene.warnings) std::cerr << "warning: " << w << "\n";
}

void print_aggregate(const RunReport& report) {
    const auto& a = report.aggregate;
    std::printf("[%s] seeds=%d ok=%d coverage=%.3f fidelity=%.3f blending=%.3f\n",
                report.arm.c_str(), a.num_samples, report.num_ok(), a.coverage_rate(),
                a.fidelity_score(), a.blending_score());
}

int cmd_generate(const std::string& config_path, int seed_count, const std::string& seed_list,
                 const std::string& out_dir, bool dump_masks, bool dump_trajectory,
                 int workers) {
    const Scene scene = load_scene(config_path);
    print_scene_warnings(scene);

    RunOptions options;
    options.seeds = resolve_seeds(scene, seed_count, seed_list);
    options.out_dir = out_dir;
    options.dump_masks = dump_masks;
    options.dump_trajectory = dump_trajectory;
    options.workers = workers;

    const RunReport report = run_pipeline(scene, options);
    print_aggregate(report);
    for (const auto& r : report.results) {
        if (r.status != "ok") {
            std::printf("  seed %llu: %s (%s)\n", static_cast<unsigned long long>(r.seed),
                        r.status.c_str(), r.failure.c_str());
        }
    }
    std::printf("artifacts in %s\n", out_dir.c_str());
    return report.num_ok() >= 1 ? 0 : 1;
}

int cmd_ablate(const std::string& config_path, int seed_count, const std::string& seed_list,
               const std::string& out_dir, const std::string& arms_csv, int workers) {
    const Scene scene = load_scene(config_path);
    print_scene_warnings(scene);

    std::vector<std::string> arms;
    std::string token;
    std::istringstream in(arms_csv);
    while (std::getline(in, token, ',')) {
        if (!token.empty()) arms.push_back(token);
    }

    RunOptions options;
    options.seeds = resolve_seeds(scene, seed_count, seed_list);
    options.out_dir = out_dir;
    options.workers = workers;

    const auto reports = run_ablation(scene, options, arms);
    for (const auto& report : reports) print_aggregate(report);
    std::printf("comparison in %s\n", (fs::path(out_dir) / "ablation.csv").string().c_str());
    return 0;
}

int cmd_metrics(const std::string& config_path, const std::string& images_dir,
                const std::string& csv_path) {
    const Scene scene = load_scene(config_path);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(images_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".ppm") continue;
        if (entry.path().stem().string().find("_xhat") != std::string::npos) continue;
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        std::cerr << "error: no .ppm samples under " << images_dir << "\n";
        return 1;
    }

    MetricAggregate agg;
    for (const auto& file : files) agg.add(evaluate_sample(read_image(file), scene));
    const std::string csv = aggregate_csv(agg);
    if (csv_path.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        atomic_write_file(csv_path, csv);
        std::printf("metrics for %zu samples written to %s\n", files.size(), csv_path.c_str());
    }
    return 0;
}

int cmd_oracle_check(const std::string& config_path) {
    const Scene scene = load_scene(config_path);
    const OracleCheckReport report = run_oracle_checks(scene);
    for (const auto& w : report.warnings) std::printf("WARN  %s\n", w.c_str());
    for (const auto& item : report.items) {
        std::printf("%s  %-26s %s\n", item.pass ? "PASS" : "FAIL", item.name.c_str(),
                    item.detail.c_str());
    }
    return report.all_pass() ? 0 : 1;
}

int cmd_inject_demo(const std::string& out_dir, const std::string& in_path, int frames,
                    int height, int width, int channels,
                    const std::vector<std::string>& rule_specs, int timestep, int num_steps) {
    std::vector<FrameFeatures> bundle;
    if (!in_path.empty()) {
        bundle = read_feature_bundle(in_path);
    } else {
        SeededRng rng(2024);
        for (const char* id : {"midblock.res1", "midblock.res2", "up1.res1"}) {
            FrameFeatures layer;
            layer.layer_id = id;
            for (int f = 0; f < frames; ++f) {
                layer.frames.push_back(rng.normal_grid({height, width, channels}));
            }
            bundle.push_back(std::move(layer));
        }
    }

    InjectionPolicy policy;
    if (rule_specs.empty()) {
        policy.rules = {{"midblock.*", 1.0}, {"up1.res1", 0.3}};
    } else {
        for (const auto& spec : rule_specs) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("--rule expects selector=eta, got '" + spec + "'");
            }
            policy.rules.push_back({spec.substr(0, eq), std::stod(spec.substr(eq + 1))});
        }
    }

    const auto result = apply_policy(bundle, policy, timestep, num_steps);
    for (const auto& w : result.warnings) std::printf("WARN  %s\n", w.c_str());

    fs::create_directories(out_dir);
    write_feature_bundle(fs::path(out_dir) / "input.featbundle", bundle);
    write_feature_bundle(fs::path(out_dir) / "injected.featbundle", result.bundle);

    const bool active = policy.active_at(timestep, num_steps);
    std::printf("timestep %d of %d: injection %s\n", timestep, num_steps,
                active ? "applied" : "inactive (identity)");
    for (std::size_t i = 0; i < bundle.size(); ++i) {
        double delta = 0.0;
        for (std::size_t f = 0; f < bundle[i].frames.size(); ++f) {
            delta = std::max(delta,
                             linf_distance(bundle[i].frames[f], result.bundle[i].frames[f]));
        }
        std::printf("  layer %-14s frames=%d max|change|=%.6f\n", bundle[i].layer_id.c_str(),
                    bundle[i].num_frames(), delta);
    }
    std::printf("bundles in %s\n", out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage multi-concept diffusion sampling over analytic mixture denoisers"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", seed_list, csv_path, images_dir, in_path;
    std::string arms = "default,no_resample,no_cfgpp,no_content,eps_mixing";
    int seed_count = 0, workers = 1;
    bool dump_masks = false, dump_trajectory = false;
    int frames = 4, height = 4, width = 4, channels = 2, timestep = 50, num_steps = 50;
    std::vector<std::string> rule_specs;

    auto* generate = app.add_subcommand("generate", "run the sampling pipeline over seeds");
    generate->add_option("--config", config_path, "scene config (JSON)")->required();
    generate->add_option("--seeds", seed_count, "run seeds 1..N");
    generate->add_option("--seed-list", seed_list, "comma-separated explicit seeds");
    generate->add_option("--out", out_dir, "output directory");
    generate->add_flag("--dump-masks", dump_masks, "write region masks as PGM");
    generate->add_flag("--dump-trajectory", dump_trajectory,
                       "write per-step denoised snapshots");
    generate->add_option("--workers", workers, "parallel seed workers")
        ->envname("DIFFMIX_WORKERS");

    auto* ablate = app.add_subcommand("ablate", "run the ablation arms side by side");
    ablate->add_option("--config", config_path, "scene config (JSON)")->required();
    ablate->add_option("--seeds", seed_count, "run seeds 1..N");
    ablate->add_option("--seed-list", seed_list, "comma-separated explicit seeds");
    ablate->add_option("--out", out_dir, "output directory");
    ablate->add_option("--arms", arms, "comma-separated arm names");
    ablate->add_option("--workers", workers, "parallel seed workers")
        ->envname("DIFFMIX_WORKERS");

    auto* metrics = app.add_subcommand("metrics", "score generated samples against a scene");
    metrics->add_option("--config", config_path, "scene config (JSON)")->required();
    metrics->add_option("--images", images_dir, "directory of .ppm samples")->required();
    metrics->add_option("--csv", csv_path, "write the aggregate CSV here instead of stdout");

    auto* oracle = app.add_subcommand("oracle-check", "validate the configured denoisers");
    oracle->add_option("--config", config_path, "scene config (JSON)")->required();

    auto* inject = app.add_subcommand("inject-demo", "first-frame feature injection demo");
    inject->add_option("--out", out_dir, "output directory")->required();
    inject->add_option("--in", in_path, "input feature bundle (default: synthetic)");
    inject->add_option("--frames", frames, "synthetic bundle frame count");
    inject->add_option("--height", height, "synthetic feature height");
    inject->add_option("--width", width, "synthetic feature width");
    inject->add_option("--channels", channels, "synthetic feature channels");
    inject->add_option("--rule", rule_specs, "injection rule selector=eta (repeatable)");
    inject->add_option("--timestep", timestep, "timestep the demo evaluates at");
    inject->add_option("--num-steps", num_steps, "schedule length the policy sees");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) {
            return cmd_generate(config_path, seed_count, seed_list, out_dir, dump_masks,
                                dump_trajectory, workers);
        }
        if (ablate->parsed()) {
            return cmd_ablate(config_path, seed_count, seed_list, out_dir, arms, workers);
        }
        if (metrics->parsed()) return cmd_metrics(config_path, images_dir, csv_path);
        if (oracle->parsed()) return cmd_oracle_check(config_path);
        if (inject->parsed()) {
            return cmd_inject_demo(out_dir, in_path, frames, height, width, channels,
                                   rule_specs, timestep, num_steps);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ConditionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
