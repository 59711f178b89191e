#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tempsr/baselines.hpp"
#include "tempsr/error.hpp"
#include "tempsr/metrics.hpp"
#include "test_util.hpp"

using namespace tempsr;

namespace {

RainMap blob(std::uint32_t h, std::uint32_t w, double cy, double cx, double sigma, double peak = 10.0) {
    RainMap m(h, w, 3000, 0);
    for (std::uint32_t r = 0; r < h; ++r)
        for (std::uint32_t c = 0; c < w; ++c) {
            const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
            m.at(r, c) = float(peak * std::exp(-0.5 * d2 / (sigma * sigma)));
        }
    return m;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double total(const RainMap& m) {
    double s = 0.0;
    for (float v : m.values) s += v;
    return s;
}

// Rain only away from the border so no splat can leave the grid.
RainMap interior_field(std::mt19937_64& rng, std::uint32_t n, std::uint32_t margin) {
    RainMap m(n, n, 1000, 0);
    std::uniform_real_distribution<float> u(0.0f, 20.0f);
    for (std::uint32_t r = margin; r < n - margin; ++r)
        for (std::uint32_t c = margin; c < n - margin; ++c) m.at(r, c) = u(rng);
    return m;
}

FlowField random_flow(std::mt19937_64& rng, std::uint32_t n, float max_abs) {
    FlowField f(n, n);
    std::uniform_real_distribution<float> u(-max_abs, max_abs);
    for (auto& x : f.u) x = u(rng);
    for (auto& x : f.v) x = u(rng);
    return f;
}

}  // namespace

TEST(NearestFrame, CopiesPredecessorWithTargetTime) {
    std::mt19937_64 rng(1);
    TripletSample s{"e", 0, tempsr::testing::random_map(rng, 4, 4, 0.5, 100),
                    tempsr::testing::random_map(rng, 4, 4, 0.5, 700), RainMap(4, 4, 1000, 400, 1.0f)};
    const RainMap p = nearest_frame(s);
    EXPECT_EQ(p.values, s.before.values);
    EXPECT_EQ(p.timestamp, 400);
}

TEST(NearestFrame, MaeExamples) {
    RainMap ones(3, 3, 1000, 0, 1.0f), zeros(3, 3, 1000, 0, 0.0f);
    EXPECT_EQ(mae_map(nearest_frame({"e", 0, ones, ones, ones}), ones), 0.0);
    EXPECT_EQ(mae_map(nearest_frame({"e", 0, zeros, zeros, ones}), ones), 1.0);
}

TEST(Advect, ZeroFlowIsIdentity) {
    std::mt19937_64 rng(2);
    const RainMap src = tempsr::testing::random_map(rng, 9, 7);
    for (double alpha : {0.0, 0.3, 0.5, 1.0}) EXPECT_EQ(advect(src, FlowField(9, 7), alpha).values, src.values);
}

TEST(Advect, ZeroAlphaIsIdentityForAnyFlow) {
    std::mt19937_64 rng(3);
    const RainMap src = tempsr::testing::random_map(rng, 12, 12);
    EXPECT_EQ(advect(src, random_flow(rng, 12, 5.0f), 0.0).values, src.values);
}

TEST(Advect, IntegerShift) {
    std::mt19937_64 rng(4);
    const RainMap src = tempsr::testing::random_map(rng, 6, 8);
    const RainMap out = advect(src, FlowField(6, 8, 2.0f, 0.0f), 0.5);
    for (std::uint32_t r = 0; r < 6; ++r) {
        EXPECT_EQ(out.at(r, 0), 0.0f);
        for (std::uint32_t c = 1; c < 8; ++c) EXPECT_EQ(out.at(r, c), src.at(r, c - 1));
    }
}

TEST(Advect, FractionalShiftSplitsMass) {
    RainMap src(1, 4, 1000, 0);
    src.at(0, 1) = 8.0f;
    const RainMap out = advect(src, FlowField(1, 4, 0.5f, 0.0f), 0.5);  // 0.25 cell
    EXPECT_FLOAT_EQ(out.at(0, 1), 6.0f);
    EXPECT_FLOAT_EQ(out.at(0, 2), 2.0f);
    EXPECT_EQ(out.at(0, 0), 0.0f);
}

TEST(Advect, LinearInSource) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const RainMap x = tempsr::testing::random_map(rng, 10, 10), y = tempsr::testing::random_map(rng, 10, 10);
        const FlowField f = random_flow(rng, 10, 3.0f);
        RainMap combo = x;
        for (std::size_t i = 0; i < combo.size(); ++i) combo.values[i] = 2.0f * x.values[i] + 0.5f * y.values[i];
        const RainMap lhs = advect(combo, f, 0.5), ax = advect(x, f, 0.5), ay = advect(y, f, 0.5);
        for (std::size_t i = 0; i < lhs.size(); ++i)
            EXPECT_NEAR(lhs.values[i], 2.0f * ax.values[i] + 0.5f * ay.values[i], 1e-4);
    }
}

TEST(Advect, ConservesInteriorMass) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const RainMap src = interior_field(rng, 24, 6);
        const RainMap out = advect(src, random_flow(rng, 24, 8.0f), 0.5);
        EXPECT_LT(std::fabs(total(out) - total(src)) / total(src), 1e-5);
    }
}

TEST(Advect, MassLeavingGridIsDropped) {
    RainMap src(2, 2, 1000, 0, 1.0f);
    const RainMap out = advect(src, FlowField(2, 2, 100.0f, 0.0f), 1.0);
    EXPECT_EQ(total(out), 0.0);
}

TEST(Advect, RejectsBadArguments) {
    RainMap src(2, 2, 1000, 0, 1.0f);
    EXPECT_THROW(advect(src, FlowField(2, 3), 0.5), DataError);
    EXPECT_THROW(advect(src, FlowField(2, 2), 1.5), UsageError);
}

TEST(Farneback, IdenticalFramesGiveNoMotion) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const RainMap a = tempsr::testing::random_map(rng, 32, 40, 0.4);
        const FlowField f = farneback_flow(a, a);
        for (std::size_t i = 0; i < f.u.size(); ++i) ASSERT_LT(std::hypot(f.u[i], f.v[i]), 0.1);
    }
    const RainMap b = blob(40, 40, 20, 20, 4);
    const FlowField f = farneback_flow(b, b);
    for (std::size_t i = 0; i < f.u.size(); ++i) ASSERT_LT(std::hypot(f.u[i], f.v[i]), 0.1);
}

TEST(Farneback, DryFramesGiveZeroFlow) {
    RainMap z(16, 16, 1000, 0);
    const FlowField f = farneback_flow(z, z);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
        EXPECT_EQ(f.u[i], 0.0f);
        EXPECT_EQ(f.v[i], 0.0f);
    }
}

TEST(Farneback, RecoversBlobTranslation) {
    const RainMap a = blob(48, 48, 24, 20, 4.0), b = blob(48, 48, 24, 23, 4.0);
    const FlowField f = farneback_flow(a, b);
    std::vector<double> us, vs;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.values[i] > 1.0f) {
            us.push_back(f.u[i]);
            vs.push_back(f.v[i]);
        }
    EXPECT_NEAR(median(us), 3.0, 0.5);
    EXPECT_NEAR(median(vs), 0.0, 0.5);
}

TEST(Farneback, RecoversVerticalMotion) {
    const RainMap a = blob(48, 48, 20, 24, 4.0), b = blob(48, 48, 22, 24, 4.0);
    const FlowField f = farneback_flow(a, b);
    std::vector<double> us, vs;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.values[i] > 1.0f) {
            us.push_back(f.u[i]);
            vs.push_back(f.v[i]);
        }
    EXPECT_NEAR(median(us), 0.0, 0.5);
    EXPECT_NEAR(median(vs), 2.0, 0.5);
}

TEST(Farneback, ParamValidation) {
    FarnebackParams p;
    p.pyramid_scale = 1.0;
    EXPECT_THROW(p.validate(), UsageError);
    p = {};
    p.window = 4;
    EXPECT_THROW(p.validate(), UsageError);
    p = {};
    p.poly_n = 0;
    EXPECT_THROW(p.validate(), UsageError);
    RainMap a(8, 8, 1000, 0), b(8, 9, 1000, 0);
    EXPECT_THROW(farneback_flow(a, b), DataError);
}

TEST(OpticalFlowInterp, StaticSceneReturnsBefore) {
    const RainMap a = blob(24, 24, 12, 12, 3.0);
    const RainMap p = interpolate_optical_flow({"e", 0, a, a, a});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(p.values[i], a.values[i], 1e-3);
}

TEST(OpticalFlowInterp, BeatsNearestOnAdvectingStorms) {
    SynthConfig c;
    c.height = c.width = 48;
    c.velocity_x = 2.0;
    c.velocity_y = 1.0;
    c.seed = 3;
    const RainEvent e = synth_event(c);
    for (const auto& s : make_triplets(e)) {
        const double of = mae_map(interpolate_optical_flow(s), s.target);
        const double nn = mae_map(nearest_frame(s), s.target);
        EXPECT_LT(of, nn) << "triplet " << s.index;
    }
}
