// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria 5 and 8 are batch simulations on the shipped
// two-concept scene; their thresholds are frozen here from the baseline
// runs recorded in BASELINES.md.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "diffmix/config.hpp"
#include "diffmix/fusion.hpp"
#include "diffmix/imageio.hpp"
#include "diffmix/metrics.hpp"
#include "diffmix/oracle.hpp"
#include "diffmix/pipeline.hpp"
#include "diffmix/resample.hpp"
#include "diffmix/sampler.hpp"
#include "diffmix/schedule.hpp"
#include "diffmix/segmentation.hpp"
#include "diffmix/videofeat.hpp"

using namespace diffmix;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir{DIFFMIX_CONFIG_DIR};

// Frozen from the implementer baseline run (see BASELINES.md): 200 seeds,
// seed list 1..200, default scene2 settings.
constexpr double kRecordedCoverageNoResample = -1.0; // placeholder until pinned
constexpr double kRequiredCoverageGap = -1.0;        // placeholder until pinned

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s  criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Grid paint_box(Grid img, const Rect& box, double value) {
    for (int r = box.row0; r < box.row1; ++r)
        for (int c = box.col0; c < box.col1; ++c)
            for (int ch = 0; ch < img.channels(); ++ch) img.at(r, c, ch) = value;
    return img;
}

Template simple_template(std::string name, Grid img, double weight,
                         std::map<std::string, Rect> objects = {}) {
    Template t;
    t.name = std::move(name);
    t.image = std::move(img);
    t.weight = weight;
    t.objects = std::move(objects);
    return t;
}

double log_mixture_density(const std::vector<WeightedTemplate>& active, const Grid& z,
                           double sab, double s) {
    double best = -1e300;
    std::vector<double> exps;
    for (const auto& wt : active) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double d = z[i] - sab * wt.tmpl->image[i];
            d2 += d * d;
        }
        exps.push_back(std::log(wt.weight) - d2 / (2.0 * s));
        best = std::max(best, exps.back());
    }
    double acc = 0.0;
    for (double e : exps) acc += std::exp(e - best);
    return best + std::log(acc);
}

// --------------------------------------------------------------------------

void criterion_1_tweedie_exactness() {
    const auto start = std::chrono::steady_clock::now();
    auto sched = std::make_shared<NoiseSchedule>(
        build_schedule(ScheduleKind::linear, 50, 1e-4, 0.02));
    Grid tpl = paint_box(Grid(8, 8, 1, 0.2), {2, 2, 6, 6}, 0.8);
    const TemplateMixtureModel model(0, 0.0, {simple_template("only", tpl, 1.0)}, sched);

    SeededRng rng(1001);
    double worst = 0.0;
    for (int t = 1; t <= 50; ++t) {
        const Grid z = rng.normal_grid({8, 8, 1});
        worst = std::max(worst,
                         linf_distance(model.posterior_mean(z, t, ConditionSpec::null_condition()),
                                       tpl));
    }
    const double elapsed = seconds_since(start);
    std::ostringstream detail;
    detail << "worst linf " << worst << ", " << elapsed << " s";
    report(1, "single-template posterior mean is exact at every timestep",
           worst <= 1e-9 && elapsed < 1.0, detail.str());
}

void criterion_2_score_correctness() {
    const auto start = std::chrono::steady_clock::now();
    auto sched = std::make_shared<NoiseSchedule>(
        build_schedule(ScheduleKind::linear, 50, 1e-4, 0.02));
    Grid a = paint_box(Grid(8, 8, 1, 0.1), {1, 1, 4, 4}, 0.8);
    Grid b = paint_box(Grid(8, 8, 1, 0.2), {4, 4, 7, 7}, 0.9);
    Grid c = paint_box(Grid(8, 8, 1, 0.15), {2, 4, 5, 7}, 0.6);
    const TemplateMixtureModel model(0, 0.05,
                                     {simple_template("a", a, 0.5), simple_template("b", b, 0.3),
                                      simple_template("c", c, 0.2)},
                                     sched);
    const auto cond = ConditionSpec::null_condition();
    const auto active = model.active_set(cond);

    SeededRng rng(1002);
    double worst = 0.0;
    for (int t : {5, 15, 25, 35, 45}) {
        const auto [sab, somb] = snr_coefficients(*sched, t);
        const double s = sab * sab * 0.05 * 0.05 + somb * somb;
        Grid z = rng.normal_grid({8, 8, 1});
        z *= somb;
        axpy(sab, a, z);
        const Grid eps = model.epsilon(z, t, cond);
        const double step = 1e-5;
        for (std::size_t i = 0; i < z.size(); ++i) {
            Grid zp = z, zm = z;
            zp[i] += step;
            zm[i] -= step;
            const double grad = (log_mixture_density(active, zp, sab, s) -
                                 log_mixture_density(active, zm, sab, s)) /
                                (2.0 * step);
            worst = std::max(worst, std::abs(-somb * grad - eps[i]));
        }
    }
    const double elapsed = seconds_since(start);
    std::ostringstream detail;
    detail << "worst |fd - eps| " << worst << ", " << elapsed << " s";
    report(2, "noise prediction matches the finite-difference score",
           worst <= 1e-4 && elapsed < 30.0, detail.str());
}

void criterion_3_guidance_identities() {
    auto sched = std::make_shared<NoiseSchedule>(
        build_schedule(ScheduleKind::linear, 50, 1e-4, 0.02));
    Grid a = paint_box(Grid(8, 8, 1, 0.0), {0, 0, 8, 4}, 1.0);
    Grid b = paint_box(Grid(8, 8, 1, 0.0), {0, 4, 8, 8}, 1.0);
    const TemplateMixtureModel model(
        0, 0.05,
        {simple_template("a", a, 0.5, {{"a", {0, 0, 8, 4}}}),
         simple_template("b", b, 0.5, {{"b", {0, 4, 8, 8}}})},
        sched);
    const auto cond = ConditionSpec::single("a");

    SeededRng rng(1003);
    const SamplerState state{rng.normal_grid({8, 8, 1}), 30, 1003};

    const auto w1 = cfg_step(state, model, model, cond, {GuidanceMode::cfg, 1.0}, *sched);
    const Grid eps_c = model.epsilon(state.z, state.t, cond);
    const double err_cfg = linf_distance(w1.z, ddim_step(state.z, state.t, eps_c, eps_c, *sched));

    const auto l0 = cfgpp_step(state, model, model, cond, {GuidanceMode::cfg_pp, 0.0}, *sched);
    const Grid eps_u = model.epsilon(state.z, state.t, ConditionSpec::null_condition());
    const double err_uncond =
        linf_distance(l0.z, ddim_step(state.z, state.t, eps_u, eps_u, *sched));

    auto at = [&](double lambda) {
        return cfgpp_step(state, model, model, cond, {GuidanceMode::cfg_pp, lambda}, *sched).z;
    };
    const Grid lo = at(0.0), mid = at(0.5), hi = at(1.0);
    double err_affine = 0.0;
    for (std::size_t i = 0; i < mid.size(); ++i) {
        err_affine = std::max(err_affine, std::abs(mid[i] - 0.5 * (lo[i] + hi[i])));
    }

    std::ostringstream detail;
    detail << "cfg(w=1) err " << err_cfg << ", cfgpp(0) err " << err_uncond << ", affine err "
           << err_affine;
    report(3, "guidance identities hold",
           err_cfg <= 1e-12 && err_uncond <= 1e-12 && err_affine <= 1e-10, detail.str());
}

void criterion_4_resample_identities() {
    const Scene scene = load_scene(kConfigDir / "scene2.json");
    SeededRng rng(1004);
    const Grid z_top = rng.normal_grid(scene.grid);

    ResampleConfig cfg = scene.resample;
    cfg.rounds = 0;
    const bool noop = resample_loop(z_top, *scene.base, cfg) == z_top;

    cfg = scene.resample;
    cfg.single_conditions = {cfg.multi_condition, cfg.multi_condition};
    const Grid adj = adjusted_denoised(z_top, *scene.base, cfg);
    bool zero = true;
    for (std::size_t i = 0; i < adj.size(); ++i) zero = zero && adj[i] == 0.0;

    std::ostringstream detail;
    detail << "P=0 bit-identical: " << (noop ? "yes" : "no")
           << ", identical-condition adjustment exactly zero: " << (zero ? "yes" : "no");
    report(4, "resampling no-op and cancellation", noop && zero, detail.str());
}

void criterion_5_resample_efficacy() {
    const auto start = std::chrono::steady_clock::now();
    const Scene scene = load_scene(kConfigDir / "scene2.json");
    RunOptions options;
    for (std::uint64_t s = 1; s <= 200; ++s) options.seeds.push_back(s);
    options.write_artifacts = false;

    const auto with = run_pipeline(scene, options);
    const auto without = run_pipeline(scene, options, toggles_for_arm("no_resample"));
    const double cov_with = with.aggregate.coverage_rate();
    const double cov_without = without.aggregate.coverage_rate();
    const double elapsed = seconds_since(start);

    std::ostringstream detail;
    detail << "coverage P=10: " << cov_with << ", P=0: " << cov_without << " (recorded baseline "
           << kRecordedCoverageNoResample << "), gap " << cov_with - cov_without
           << " >= " << kRequiredCoverageGap << ", " << elapsed << " s";
    report(5, "resampling strictly improves both-object coverage",
           cov_with > cov_without && (cov_with - cov_without) >= kRequiredCoverageGap &&
               elapsed < 60.0,
           detail.str());
}

void criterion_6_mask_partition() {
    const Scene scene = load_scene(kConfigDir / "scene2.json");
    const GuidanceConfig g{GuidanceMode::cfg_pp, scene.lambda};

    int successes = 0, partitions = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        SamplerState state = initial_state(scene.grid, scene.schedule->num_steps, seed);
        state.z = resample_loop(state.z, *scene.base, scene.resample);
        Grid snapshot;
        while (state.t > scene.t_con) {
            if (state.t == scene.t_con + 1) snapshot = state.z;
            state = cfgpp_step(state, *scene.base, *scene.base, scene.multi_condition, g,
                               *scene.schedule);
        }
        const Grid img = intermediate_image(snapshot, scene.t_con + 1, *scene.base,
                                            scene.multi_condition, g, *scene.schedule);
        const auto detection =
            detect_objects(img, scene.segmentation.signatures, scene.segmentation.detector);
        if (!detection.absent.empty()) continue;
        std::vector<std::pair<int, Rect>> boxes;
        for (std::size_t i = 0; i < detection.found.size(); ++i) {
            boxes.emplace_back(static_cast<int>(i), detection.found[i].box);
        }
        const auto extraction = resolve_overlaps(boxes, scene.grid.height, scene.grid.width);
        if (!extraction.ok) continue;
        ++successes;
        partitions += extraction.masks.partitions() ? 1 : 0;
    }

    // Nested boxes must take the failure path, never produce a bad partition.
    const auto nested = resolve_overlaps({{0, {2, 2, 10, 10}}, {1, {4, 4, 8, 8}}}, 16, 16);
    const bool nested_fails = !nested.ok;

    std::ostringstream detail;
    detail << partitions << "/" << successes << " successful extractions partition exactly; "
           << "nested boxes fail cleanly: " << (nested_fails ? "yes" : "no");
    report(6, "mask partition of unity", successes > 0 && partitions == successes && nested_fails,
           detail.str());
}

void criterion_7_fusion_locality() {
    const Scene scene = load_scene(kConfigDir / "scene2.json");
    auto sched = scene.schedule;
    SeededRng rng(1007);
    const SamplerState state{rng.normal_grid(scene.grid), 30, 1007};

    // Perturbed copy of the dog concept model: same layout, different custom color.
    const TemplateMixtureModel& dog = scene.model(2);
    std::vector<Template> perturbed_lib;
    for (Template t : dog.templates()) {
        for (std::size_t i = 0; i < t.image.size(); ++i) t.image[i] *= 0.5;
        perturbed_lib.push_back(std::move(t));
    }
    const TemplateMixtureModel dog_perturbed(2, dog.data_sigma(), perturbed_lib, sched);

    PixelMask left(scene.grid.height, scene.grid.width);
    PixelMask right(scene.grid.height, scene.grid.width);
    for (int r = 0; r < scene.grid.height; ++r) {
        for (int c = 0; c < scene.grid.width; ++c) {
            (c < scene.grid.width / 2 ? left : right).at(r, c) = 1;
        }
    }
    const ConditionSpec cat_cond = ConditionSpec::single("cat");
    const ConditionSpec dog_cond = ConditionSpec::single("dog");
    const std::vector<ConceptBinding> bindings_a{
        {1, &scene.model(1), cat_cond, left}, {2, &dog, dog_cond, right}};
    const std::vector<ConceptBinding> bindings_b{
        {1, &scene.model(1), cat_cond, left}, {2, &dog_perturbed, dog_cond, right}};

    Grid mixed_a, mixed_b;
    fused_step(state, bindings_a, *scene.base, scene.lambda, *sched, MixSpace::denoised,
               [&](int, const Grid& x) { mixed_a = x; });
    fused_step(state, bindings_b, *scene.base, scene.lambda, *sched, MixSpace::denoised,
               [&](int, const Grid& x) { mixed_b = x; });
    bool cat_region_identical = true;
    bool dog_region_changed = false;
    for (int r = 0; r < scene.grid.height; ++r) {
        for (int c = 0; c < scene.grid.width; ++c) {
            for (int ch = 0; ch < scene.grid.channels; ++ch) {
                if (left.at(r, c)) {
                    cat_region_identical &= mixed_a.at(r, c, ch) == mixed_b.at(r, c, ch);
                } else {
                    dog_region_changed |= mixed_a.at(r, c, ch) != mixed_b.at(r, c, ch);
                }
            }
        }
    }

    // N=1 full-mask fusion reduces to the interpolating step.
    PixelMask full(scene.grid.height, scene.grid.width, 1);
    const std::vector<ConceptBinding> single{{1, &scene.model(1), cat_cond, full}};
    const auto fused = fused_step(state, single, *scene.base, scene.lambda, *sched);
    const auto ref = cfgpp_step(state, *scene.base, scene.model(1), cat_cond,
                                {GuidanceMode::cfg_pp, scene.lambda}, *sched);
    const double err = linf_distance(fused.z, ref.z);

    std::ostringstream detail;
    detail << "untouched region bit-identical: " << (cat_region_identical ? "yes" : "no")
           << ", perturbed region responds: " << (dog_region_changed ? "yes" : "no")
           << ", N=1 reduction err " << err;
    report(7, "fusion locality and N=1 reduction",
           cat_region_identical && dog_region_changed && err <= 1e-12, detail.str());
}

void criterion_8_ablation_ordering() {
    const auto start = std::chrono::steady_clock::now();
    const Scene scene = load_scene(kConfigDir / "scene2.json");
    RunOptions options;
    for (std::uint64_t s = 1; s <= 50; ++s) options.seeds.push_back(s);
    options.write_artifacts = false;

    std::ostringstream detail;
    double best_other = -1.0;
    std::string best_other_arm;
    double default_score = -1.0;
    for (const std::string& arm : default_arms()) {
        const auto report_ = run_pipeline(scene, options, toggles_for_arm(arm), arm);
        const double score = report_.aggregate.coverage_x_fidelity();
        detail << arm << "=" << score << " ";
        if (arm == "default") {
            default_score = score;
        } else if (score > best_other) {
            best_other = score;
            best_other_arm = arm;
        }
    }
    const double elapsed = seconds_since(start);
    detail << "(runner-up " << best_other_arm << "), " << elapsed << " s";
    report(8, "default setting ranks first on coverage x fidelity",
           default_score > best_other && elapsed < 300.0, detail.str());
}

void criterion_9_feature_injection() {
    SeededRng rng(1009);
    FrameFeatures layer;
    layer.layer_id = "up1.res1";
    for (int f = 0; f < 4; ++f) layer.frames.push_back(rng.normal_grid({3, 4, 2}));

    const auto all_first = inject(layer, 1.0);
    bool eta1 = true;
    for (const auto& frame : all_first.frames) eta1 &= frame == layer.frames.front();

    const auto identity = inject(layer, 0.0);
    bool eta0 = true;
    for (int f = 0; f < 4; ++f) eta0 &= identity.frames[f] == layer.frames[f];

    const auto blended = inject(layer, 0.3);
    double err = 0.0;
    for (int f = 1; f < 4; ++f) {
        for (std::size_t i = 0; i < layer.frames[f].size(); ++i) {
            const double expected = 0.3 * layer.frames[0][i] + 0.7 * layer.frames[f][i];
            err = std::max(err, std::abs(blended.frames[f][i] - expected));
        }
    }

    InjectionPolicy policy;
    policy.rules = {{"up1.res1", 0.3}};
    const auto off = apply_policy({layer}, policy, 49, 50);
    const auto on = apply_policy({layer}, policy, 50, 50);
    const bool scheduled = off.bundle.front().frames == layer.frames &&
                           on.bundle.front().frames != layer.frames;

    std::ostringstream detail;
    detail << "eta1 exact: " << (eta1 ? "yes" : "no") << ", eta0 exact: " << (eta0 ? "yes" : "no")
           << ", eta0.3 err " << err << ", initial-timestep-only: " << (scheduled ? "yes" : "no");
    report(9, "feature injection operator", eta1 && eta0 && err <= 1e-12 && scheduled,
           detail.str());
}

void criterion_10_determinism() {
    const fs::path tmp = fs::temp_directory_path();
    const fs::path dir_a = tmp / "diffmix_accept_a";
    const fs::path dir_b = tmp / "diffmix_accept_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    const std::string base_cmd = std::string(DIFFMIX_CLI_PATH) + " generate --config " +
                                 (kConfigDir / "scene2.json").string() +
                                 " --seed-list 1,2,3 --dump-masks --dump-trajectory --out ";
    const int rc_a = std::system((base_cmd + dir_a.string() + " > /dev/null 2>&1").c_str());
    const int rc_b = std::system((base_cmd + dir_b.string() + " > /dev/null 2>&1").c_str());

    std::map<std::string, std::uint64_t> hashes_a, hashes_b;
    auto collect = [](const fs::path& dir, std::map<std::string, std::uint64_t>& out) {
        if (!fs::exists(dir)) return;
        for (const auto& entry : fs::recursive_directory_iterator(dir)) {
            if (entry.is_regular_file()) {
                out[fs::relative(entry.path(), dir).string()] =
                    fnv1a64(read_file(entry.path()));
            }
        }
    };
    collect(dir_a, hashes_a);
    collect(dir_b, hashes_b);

    const bool ran = rc_a == 0 && rc_b == 0;
    const bool same = !hashes_a.empty() && hashes_a == hashes_b;
    std::ostringstream detail;
    detail << hashes_a.size() << " artifacts, independent executions "
           << (same ? "hash identical" : "differ") << (ran ? "" : " (cli run failed)");
    report(10, "artifacts are byte-reproducible from (config, seeds)", ran && same,
           detail.str());
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

} // namespace

int main() {
    criterion_1_tweedie_exactness();
    criterion_2_score_correctness();
    criterion_3_guidance_identities();
    criterion_4_resample_identities();
    criterion_5_resample_efficacy();
    criterion_6_mask_partition();
    criterion_7_fusion_locality();
    criterion_8_ablation_ordering();
    criterion_9_feature_injection();
    criterion_10_determinism();

    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
    } else {
        std::printf("%d acceptance criteria FAILED\n", g_failures);
    }
    return g_failures;
}
