#include <catch2/catch_amalgamated.hpp>

#include "diffmix/schedule.hpp"

using namespace diffmix;

TEST_CASE("linear schedule matches the documented defaults") {
    const auto s = build_schedule(ScheduleKind::linear, 50, 1e-4, 0.02);
    REQUIRE(s.num_steps == 50);
    CHECK(s.betas[1] == Catch::Approx(1e-4));
    CHECK(s.betas[50] == Catch::Approx(0.02));
    for (int t = 1; t <= 50; ++t) {
        CHECK(s.betas[t] > 0.0);
        CHECK(s.betas[t] < 1.0);
        CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]); // strictly decreasing
    }
    CHECK(s.alpha_bars[0] == 1.0);
}

TEST_CASE("two equal betas give the hand-computed products") {
    const auto s = build_schedule(ScheduleKind::linear, 2, 0.5, 0.5);
    CHECK(s.alpha_bars[1] == Catch::Approx(0.5).margin(1e-15));
    CHECK(s.alpha_bars[2] == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("alpha_bar equals a scalar running product") {
    for (const auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        const auto s = build_schedule(kind, 50, 1e-4, 0.02);
        long double prod = 1.0L;
        for (int t = 1; t <= 50; ++t) {
            prod *= 1.0L - static_cast<long double>(s.betas[t]);
            CHECK(std::abs(s.alpha_bars[t] - static_cast<double>(prod)) < 1e-12);
        }
    }
}

TEST_CASE("cosine schedule follows the squared-cosine profile") {
    const int T = 50;
    const auto s = build_schedule(ScheduleKind::cosine, T, 1e-4, 0.02);
    auto f = [T](double u) {
        const double x = (u / T + 0.008) / 1.008 * std::numbers::pi / 2.0;
        return std::cos(x) * std::cos(x);
    };
    // Independent route: the products telescope to f(t)/f(0) wherever no
    // beta got clamped. The final ratio underflows 1 - x == 1, so t = T is
    // the clamped step.
    for (int t = 1; t < T; ++t) {
        CHECK(s.alpha_bars[t] == Catch::Approx(f(t) / f(0)).epsilon(1e-10));
    }
    CHECK(s.betas[T] == 0.999);
    CHECK(s.alpha_bars[T] == Catch::Approx(s.alpha_bars[T - 1] * 0.001).epsilon(1e-12));
}

TEST_CASE("snr coefficients") {
    const auto s = build_schedule(ScheduleKind::linear, 50, 1e-4, 0.02);

    SECTION("t=0 boundary convention") {
        const auto [sab, somb] = snr_coefficients(s, 0);
        CHECK(sab == 1.0);
        CHECK(somb == 0.0);
    }
    SECTION("squares sum to one at every timestep") {
        for (int t = 0; t <= 50; ++t) {
            const auto [sab, somb] = snr_coefficients(s, t);
            CHECK(std::abs(sab * sab + somb * somb - 1.0) < 1e-12);
        }
    }
    SECTION("t=25 matches the loop-computed product") {
        long double prod = 1.0L;
        for (int t = 1; t <= 25; ++t) prod *= 1.0L - static_cast<long double>(s.betas[t]);
        const auto [sab, somb] = snr_coefficients(s, 25);
        CHECK(sab == Catch::Approx(std::sqrt(static_cast<double>(prod))).margin(1e-12));
    }
    SECTION("out-of-range timesteps are rejected") {
        CHECK_THROWS_AS(snr_coefficients(s, -1), std::out_of_range);
        CHECK_THROWS_AS(snr_coefficients(s, 51), std::out_of_range);
    }
}

TEST_CASE("invalid schedule bounds name the offending field") {
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 1, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_WITH(build_schedule(ScheduleKind::linear, 1, 1e-4, 0.02),
                      Catch::Matchers::ContainsSubstring("num_steps"));
    CHECK_THROWS_WITH(build_schedule(ScheduleKind::linear, 50, 0.0, 0.02),
                      Catch::Matchers::ContainsSubstring("beta_min"));
    CHECK_THROWS_WITH(build_schedule(ScheduleKind::linear, 50, 0.03, 0.02),
                      Catch::Matchers::ContainsSubstring("beta_max"));
    CHECK_THROWS_WITH(build_schedule(ScheduleKind::linear, 50, 0.5, 1.0),
                      Catch::Matchers::ContainsSubstring("beta_max"));
}
