#include "doctest.h"

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gnwd/nbody.hpp"
#include "gnwd/rng.hpp"
#include "support/nbody_oracle.hpp"

using namespace gnwd;

namespace {

BodyState make_state(std::vector<Vec2> pos, std::vector<Vec2> vel, std::vector<double> mass) {
    return BodyState{std::move(pos), std::move(vel), std::move(mass)};
}

// Direct summation in long double, written from the governing equation.
std::vector<std::array<long double, 2>> reference_acc(const BodyState& s, const SimConfig& cfg) {
    std::vector<std::array<long double, 2>> a(s.size(), {0.0L, 0.0L});
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (i == j) continue;
            const long double dr = static_cast<long double>(s.positions[i][0]) - s.positions[j][0];
            const long double dc = static_cast<long double>(s.positions[i][1]) - s.positions[j][1];
            const long double d = std::sqrt(dr * dr + dc * dc);
            const long double k = cfg.gravity * s.masses[j] / std::pow(d + cfg.d_soft, static_cast<long double>(cfg.power));
            a[i][0] -= k * dr;
            a[i][1] -= k * dc;
        }
    }
    return a;
}

}  // namespace

using gnwd::testing::rk4_reference;

TEST_CASE("accelerations match long-double direct summation") {
    SimConfig cfg;
    Rng rng(5);
    cfg.mass_min = 0.5;
    cfg.mass_max = 2.0;
    for (int trial = 0; trial < 20; ++trial) {
        const BodyState s = random_state(cfg, rng);
        const auto a = accelerations(s, cfg);
        const auto ref = reference_acc(s, cfg);
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (int k = 0; k < 2; ++k) {
                CHECK(static_cast<long double>(a[i][k]) ==
                      doctest::Approx(static_cast<double>(ref[i][k])).epsilon(1e-6).scale(1e-9));
            }
        }
    }
}

TEST_CASE("accelerations: symmetry, coincident bodies, translation equivariance") {
    SimConfig cfg;
    const BodyState two = make_state({{10, 10}, {10, 20}}, {{0, 0}, {0, 0}}, {1, 1});
    const auto a = accelerations(two, cfg);
    CHECK(a[0][1] == doctest::Approx(-a[1][1]));
    CHECK(a[0][1] > 0.0);
    CHECK(a[0][0] == 0.0);

    const BodyState same = make_state({{5, 5}, {5, 5}}, {{0, 0}, {0, 0}}, {1, 3});
    for (const auto& v : accelerations(same, cfg)) {
        CHECK(v[0] == 0.0);
        CHECK(v[1] == 0.0);
    }

    Rng rng(6);
    BodyState s = random_state(cfg, rng);
    const auto base = accelerations(s, cfg);
    for (auto& p : s.positions) {
        p[0] += 3.25;
        p[1] -= 7.5;
    }
    const auto shifted = accelerations(s, cfg);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(shifted[i][0] == doctest::Approx(base[i][0]).epsilon(1e-12).scale(1e-12));
        CHECK(shifted[i][1] == doctest::Approx(base[i][1]).epsilon(1e-12).scale(1e-12));
    }
}

TEST_CASE("pair potential equals the quadrature of the pairwise force") {
    using boost::math::quadrature::gauss_kronrod;
    for (double r : {1.0, 1.5, 2.0, 3.0}) {
        SimConfig cfg;
        cfg.power = r;
        cfg.d_soft = 0.7;
        cfg.gravity = 1.3;
        const double dref = cfg.reference_distance();
        CHECK(pair_potential(dref, 1.0, 2.0, cfg) == doctest::Approx(0.0).scale(1e-12));
        for (double d : {0.0, 0.5, 3.0, 20.0, 120.0}) {
            const auto f = [&](double s) { return cfg.gravity * 1.5 * 2.0 * s / std::pow(s + cfg.d_soft, r); };
            const double integral = gauss_kronrod<double, 61>::integrate(f, dref, d, 15, 1e-13);
            CHECK(pair_potential(d, 1.5, 2.0, cfg) == doctest::Approx(integral).epsilon(1e-10).scale(1.0));
        }
    }
}

TEST_CASE("energy bookkeeping: trivial cases") {
    SimConfig cfg;
    const BodyState one = make_state({{3, 4}}, {{1.0, 2.0}}, {2.0});
    CHECK(total_energy(one, cfg) == doctest::Approx(0.5 * 2.0 * 5.0));

    cfg.d_ref = 25.0;
    const BodyState pair = make_state({{10, 10}, {10, 35}}, {{0, 0}, {0, 0}}, {1, 1});
    CHECK(total_energy(pair, cfg) == doctest::Approx(0.0).scale(1e-12));

    SimConfig diag;
    diag.d_ref = -1.0;
    CHECK(diag.reference_distance() == doctest::Approx(std::hypot(64.0, 64.0)));
    // contact zero point: potential energy is never negative
    SimConfig contact;
    Rng rng(7);
    for (int i = 0; i < 50; ++i) CHECK(potential_energy(random_state(contact, rng), contact) >= 0.0);
}

TEST_CASE("force and potential are consistent along a trajectory") {
    SimConfig cfg;
    cfg.substeps = 50;
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        BodyState s = random_state(cfg, rng);
        for (auto& p : s.positions) {  // keep clear of walls for one step
            p[0] = 20 + 24 * (p[0] / 63.0);
            p[1] = 20 + 24 * (p[1] / 63.0);
        }
        const double e0 = total_energy(s, cfg);
        const double e1 = total_energy(step(s, cfg), cfg);
        CHECK(std::abs(e1 - e0) / std::max(1.0, std::abs(e0)) < 1e-4);
    }
}

TEST_CASE("zero velocities without gravity stay put; momentum conserved away from walls") {
    SimConfig cfg;
    cfg.gravity = 0.0;
    const BodyState rest = make_state({{10, 10}, {30, 40}, {50, 5}}, {{0, 0}, {0, 0}, {0, 0}}, {1, 1, 1});
    const BodyState after = step(rest, cfg);
    CHECK(after.positions == rest.positions);
    CHECK(after.velocities == rest.velocities);

    SimConfig g;
    g.mass_min = 0.5;
    g.mass_max = 2.0;
    const BodyState s = make_state({{30, 30}, {34, 31}, {31, 36}}, {{0.1, -0.2}, {-0.1, 0.05}, {0.0, 0.1}}, {1.0, 0.7, 1.6});
    const auto momentum = [](const BodyState& b) {
        Vec2 p{0, 0};
        for (std::size_t i = 0; i < b.size(); ++i) {
            p[0] += b.masses[i] * b.velocities[i][0];
            p[1] += b.masses[i] * b.velocities[i][1];
        }
        return p;
    };
    const Vec2 p0 = momentum(s);
    const Vec2 p1 = momentum(step(s, g));
    CHECK(std::abs(p1[0] - p0[0]) < 1e-9);
    CHECK(std::abs(p1[1] - p0[1]) < 1e-9);
}

TEST_CASE("wall reflection keeps bodies inside and preserves speed") {
    SimConfig cfg;
    cfg.gravity = 0.0;
    cfg.dt = 1.0;
    const BodyState s = make_state({{62.5, 30}, {10, 0.4}, {30, 30}}, {{1.5, 0.0}, {0.3, -2.0}, {0, 0}}, {1, 1, 1});
    const BodyState t = step(s, cfg);
    CHECK(t.positions[0][0] == doctest::Approx(63.0 - 1.0));  // 62.5 + 1.5 = 64 mirrored about 63
    CHECK(t.velocities[0][0] == doctest::Approx(-1.5));
    CHECK(t.positions[1][1] == doctest::Approx(1.6));
    CHECK(t.velocities[1][1] == doctest::Approx(2.0));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::hypot(t.velocities[i][0], t.velocities[i][1]) ==
              doctest::Approx(std::hypot(s.velocities[i][0], s.velocities[i][1])));
    }
    Rng rng(9);
    SimConfig fast;
    fast.speed_min = 3.0;
    fast.speed_max = 6.0;
    const Trajectory tr = rollout(random_state(fast, rng), fast, 200);
    for (const auto& st : tr.states) {
        for (const auto& p : st.positions) {
            CHECK(p[0] >= 0.0);
            CHECK(p[0] <= 63.0);
            CHECK(p[1] >= 0.0);
            CHECK(p[1] <= 63.0);
        }
    }
}

TEST_CASE("rollout energy drift is small and second order") {
    SimConfig cfg;
    Rng rng(10);
    const BodyState init = random_state(cfg, rng);
    const auto drift = [&](const SimConfig& c, std::size_t frames) {
        const Trajectory t = rollout(init, c, frames);
        const double e0 = total_energy(init, c);
        double worst = 0.0;
        for (double e : t.energies) worst = std::max(worst, std::abs(e - e0) / std::abs(e0));
        return worst;
    };
    SimConfig half = cfg;
    half.substeps = cfg.substeps * 2;
    const double d1 = drift(cfg, 100);
    const double d2 = drift(half, 100);
    MESSAGE("relative drift: dt " << d1 << ", dt/2 " << d2);
    CHECK(d1 <= 1e-3);
    CHECK(d2 <= 2.5e-4);
}

TEST_CASE("leapfrog tracks an RK4 oracle at dt/100") {
    SimConfig cfg;
    Rng rng(11);
    const BodyState init = random_state(cfg, rng);
    const Trajectory lf = rollout(init, cfg, 100);
    const auto ref = rk4_reference(init, cfg, 100, 100);
    double worst = 0.0;
    for (std::size_t f = 0; f < 100; ++f) {
        for (std::size_t i = 0; i < init.size(); ++i) {
            worst = std::max(worst, std::hypot(lf.states[f].positions[i][0] - ref[f].positions[i][0],
                                               lf.states[f].positions[i][1] - ref[f].positions[i][1]));
        }
    }
    MESSAGE("max position deviation from RK4: " << worst);
    CHECK(worst <= 1e-2);
}

TEST_CASE("rollout is deterministic and has L post-step states") {
    SimConfig cfg;
    Rng r1(12), r2(12);
    const Trajectory a = rollout(random_state(cfg, r1), cfg, 30);
    const Trajectory b = rollout(random_state(cfg, r2), cfg, 30);
    CHECK(a.energies == b.energies);
    CHECK(a.states.size() == 30);
    CHECK(rollout(random_state(cfg, r1), cfg, 1).states.size() == 1);
    CHECK_THROWS_AS(rollout(random_state(cfg, r1), cfg, 0), ContractError);
}

TEST_CASE("render: centered sprite, max blending, bilinear placement") {
    Tensor sp({5, 5});
    Rng rng(13);
    for (auto& v : sp.span()) v = static_cast<float>(rng.uniform());
    const std::vector<Tensor> sprites = {sp, sp};

    Trajectory t;
    t.states.push_back(make_state({{7, 7}}, {{0, 0}}, {1}));
    t.energies.push_back(0);
    const Tensor f = render(t, {sp}, 15, 15);
    for (std::size_t i = 0; i < 15; ++i) {
        for (std::size_t j = 0; j < 15; ++j) {
            const bool in = i >= 5 && i < 10 && j >= 5 && j < 10;
            CHECK(f[i * 15 + j] == (in ? sp[(i - 5) * 5 + (j - 5)] : 0.0f));
        }
    }

    // brute force: sum of sprite pixels weighted by the tent kernel around their shifted centers
    const double r0 = 10.5, c0 = 20.25;
    t.states[0] = make_state({{r0, c0}}, {{0, 0}}, {1});
    const Tensor g = render(t, {sp}, 32, 32);
    for (std::size_t i = 0; i < 32; ++i) {
        for (std::size_t j = 0; j < 32; ++j) {
            double v = 0.0;
            for (std::size_t a = 0; a < 5; ++a) {
                for (std::size_t b = 0; b < 5; ++b) {
                    const double wr = std::max(0.0, 1.0 - std::abs(static_cast<double>(i) - (r0 - 2.0 + a)));
                    const double wc = std::max(0.0, 1.0 - std::abs(static_cast<double>(j) - (c0 - 2.0 + b)));
                    v += wr * wc * sp[a * 5 + b];
                }
            }
            CHECK(g[i * 32 + j] == doctest::Approx(v).epsilon(1e-6).scale(1e-6));
        }
    }

    Trajectory two;
    two.states.push_back(make_state({{7, 7}, {8, 9}}, {{0, 0}, {0, 0}}, {1, 1}));
    two.energies.push_back(0);
    Trajectory a1, a2;
    a1.states.push_back(make_state({{7, 7}}, {{0, 0}}, {1}));
    a2.states.push_back(make_state({{8, 9}}, {{0, 0}}, {1}));
    a1.energies = a2.energies = {0};
    const Tensor both = render(two, sprites, 16, 16), x1 = render(a1, {sp}, 16, 16), x2 = render(a2, {sp}, 16, 16);
    for (std::size_t i = 0; i < both.numel(); ++i) CHECK(both[i] == std::max(x1[i], x2[i]));

    CHECK_THROWS_AS(render(a1, {Tensor({20, 20})}, 16, 16), ContractError);
}

TEST_CASE("trajectory records round-trip") {
    SimConfig cfg;
    Rng rng(14);
    const Trajectory t = rollout(random_state(cfg, rng), cfg, 4);
    const Trajectory back = from_record(to_record(t));
    REQUIRE(back.states.size() == 4);
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(back.energies[l] == doctest::Approx(t.energies[l]).epsilon(1e-6));
        CHECK(back.states[l].positions[2][1] == doctest::Approx(t.states[l].positions[2][1]).epsilon(1e-6));
    }
}

TEST_CASE("sprites and sample generation") {
    const Tensor pool = synthetic_digit_sprites(20, 3);
    CHECK(pool.shape() == Shape{20, 28, 28});
    CHECK(pool == synthetic_digit_sprites(20, 3));
    for (float v : pool.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    const Tensor small = downsample_sprites(pool, 2);
    CHECK(small.shape() == Shape{20, 14, 14});
    CHECK(small[0] == doctest::Approx((pool[0] + pool[1] + pool[28] + pool[29]) / 4.0));
    CHECK_THROWS_AS(downsample_sprites(pool, 3), ContractError);

    SimConfig cfg;
    cfg.height = cfg.width = 32;
    const SequenceSample a = generate_sample(cfg, small, 3, 2, 77);
    const SequenceSample b = generate_sample(cfg, small, 3, 2, 77);
    CHECK(a.context.shape() == Shape{3, 32, 32, 1});
    CHECK(a.target.shape() == Shape{2, 32, 32, 1});
    CHECK(a.context == b.context);
    CHECK(a.target == b.target);
    REQUIRE(a.meta);
    CHECK(a.meta->energies.numel() == 5);
}
