#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gnwd/metrics.hpp"
#include "gnwd/rng.hpp"

using namespace gnwd;
namespace fs = std::filesystem;

namespace {

Tensor random_seq(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (auto& v : t.span()) v = static_cast<float>(rng.uniform());
    return t;
}

// CRPS as the integral of (F_ens(z) - 1{z >= y})^2, exact on the piecewise-constant pieces.
double crps_integral(std::vector<double> x, double y) {
    std::vector<double> pts = x;
    pts.push_back(y);
    std::sort(pts.begin(), pts.end());
    std::sort(x.begin(), x.end());
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double mid = 0.5 * (pts[i] + pts[i + 1]);
        const double f = static_cast<double>(std::upper_bound(x.begin(), x.end(), mid) - x.begin()) / x.size();
        const double h = mid >= y ? 1.0 : 0.0;
        s += (f - h) * (f - h) * (pts[i + 1] - pts[i]);
    }
    return s;
}

// Gaussian-window SSIM map straight from the definition with a 2-D window and two-pass moments.
double ssim_direct(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w) {
    double win[11][11], tot = 0.0;
    for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
            win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            tot += win[i][j];
        }
    }
    const double c1 = 1e-4, c2 = 9e-4;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + 11 <= h; ++r) {
        for (std::size_t c = 0; c + 11 <= w; ++c) {
            double mx = 0, my = 0;
            for (int i = 0; i < 11; ++i) {
                for (int j = 0; j < 11; ++j) {
                    mx += win[i][j] / tot * a[(r + i) * w + c + j];
                    my += win[i][j] / tot * b[(r + i) * w + c + j];
                }
            }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < 11; ++i) {
                for (int j = 0; j < 11; ++j) {
                    const double dx = a[(r + i) * w + c + j] - mx, dy = b[(r + i) * w + c + j] - my;
                    vx += win[i][j] / tot * dx * dx;
                    vy += win[i][j] / tot * dy * dy;
                    cxy += win[i][j] / tot * dx * dy;
                }
            }
            sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return sum / count;
}

}  // namespace

TEST_CASE("contingency counts match a brute-force tally") {
    Rng rng(1);
    const Tensor p = random_seq({3, 8, 8, 1}, rng), o = random_seq({3, 8, 8, 1}, rng);
    for (double thr : kDefaultThresholds) {
        std::uint64_t h = 0, m = 0, f = 0, n = 0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const bool pe = p[i] * 255.0 >= thr;
            const bool oe = o[i] * 255.0 >= thr;
            h += pe && oe;
            m += !pe && oe;
            f += pe && !oe;
            n += !pe && !oe;
        }
        const Contingency c = contingency(p, o, thr);
        CHECK(c.hits == h);
        CHECK(c.misses == m);
        CHECK(c.false_alarms == f);
        CHECK(c.correct_negatives == n);
        CHECK(csi(c) == doctest::Approx(static_cast<double>(h) / (h + m + f)));
        CHECK(*bias(c) == doctest::Approx(static_cast<double>(h + f) / (h + m)));
    }
}

TEST_CASE("CSI and BIAS edge cases") {
    const Tensor zero({1, 4, 4, 1}, 0.0f), one({1, 4, 4, 1}, 1.0f);
    CHECK(csi(contingency(zero, zero, 16)) == 0.0);
    CHECK_FALSE(bias(contingency(one, zero, 16)).has_value());
    CHECK(csi(contingency(one, one, 219)) == 1.0);
    CHECK(*bias(contingency(one, one, 219)) == 1.0);
    // 16/255 sits exactly on the threshold and counts as an event
    const Tensor edge({1, 1, 1, 1}, static_cast<float>(16.0 / 255.0));
    CHECK(contingency(edge, edge, 16).hits == 1);
    CHECK_THROWS_AS(contingency(zero, Tensor({1, 4, 4, 2}), 16), ContractError);
}

TEST_CASE("pooled CSI uses block maxima") {
    Tensor obs({1, 4, 4, 1}, 0.0f), pred({1, 4, 4, 1}, 0.0f);
    obs[0] = 1.0f;             // block (0, 0)
    pred[1 * 4 + 1] = 1.0f;    // same block, different pixel
    pred[3 * 4 + 3] = 1.0f;    // block (1, 1) false alarm
    CHECK(csi(contingency(pred, obs, 133)) == 0.0);
    const Contingency c = pooled_contingency(pred, obs, 133, 2);
    CHECK(c.hits == 1);
    CHECK(c.false_alarms == 1);
    CHECK(c.correct_negatives == 2);
    CHECK(csi(c) == 0.5);

    const Tensor m = max_pool_frames(pred, 4);
    CHECK(m.shape() == Shape{1, 1, 1, 1});
    CHECK(m[0] == 1.0f);
    CHECK_THROWS_AS(max_pool_frames(pred, 3), ContractError);
}

TEST_CASE("CRPS: one member is MAE, ensembles match the integral form") {
    Rng rng(2);
    const Tensor obs = random_seq({2, 4, 4, 1}, rng);
    const std::vector<Tensor> single = {random_seq({2, 4, 4, 1}, rng)};
    CHECK(crps_ensemble(single, obs) == doctest::Approx(mae(single[0], obs)).epsilon(1e-12));

    std::vector<Tensor> ens;
    for (int m = 0; m < 5; ++m) ens.push_back(random_seq({2, 4, 4, 1}, rng));
    double want = 0.0;
    for (std::size_t i = 0; i < obs.numel(); ++i) {
        std::vector<double> x;
        for (const auto& e : ens) x.push_back(e[i]);
        want += crps_integral(x, obs[i]);
    }
    CHECK(crps_ensemble(ens, obs) == doctest::Approx(want / obs.numel()).epsilon(1e-10));

    std::vector<Tensor> same(4, obs);
    CHECK(crps_ensemble(same, obs) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("SSIM agrees with the direct windowed definition") {
    Rng rng(3);
    const std::size_t h = 16, w = 14;
    std::vector<double> a(h * w), b(h * w);
    std::vector<float> af(h * w), bf(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        af[i] = static_cast<float>(rng.uniform());
        bf[i] = static_cast<float>(0.6 * af[i] + 0.4 * rng.uniform());
        a[i] = af[i];
        b[i] = bf[i];
    }
    CHECK(ssim_plane(af.data(), bf.data(), h, w) == doctest::Approx(ssim_direct(a, b, h, w)).epsilon(1e-9));
    CHECK(ssim_plane(af.data(), af.data(), h, w) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor x({2, h, w, 1}), y({2, h, w, 1});
    for (std::size_t i = 0; i < h * w; ++i) {
        x[i] = af[i];
        y[i] = bf[i];
        x[h * w + i] = bf[i];
        y[h * w + i] = bf[i];
    }
    CHECK(ssim(x, y) == doctest::Approx(0.5 * (ssim_direct(a, b, h, w) + 1.0)).epsilon(1e-9));
    CHECK_THROWS_AS(ssim(Tensor({1, 8, 8, 1}), Tensor({1, 8, 8, 1})), ContractError);
}

TEST_CASE("pointwise errors") {
    const Tensor a({1, 1, 2, 1}, std::vector<float>{0.0f, 1.0f}), b({1, 1, 2, 1}, std::vector<float>{0.5f, 0.5f});
    CHECK(mse(a, b) == 0.25);
    CHECK(mae(a, b) == 0.5);
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(4.0)));
    CHECK(std::isinf(psnr(a, a)));
    const std::vector<Tensor> ens = {a, b};
    CHECK(ensemble_mean(ens)[0] == 0.25f);
    const std::vector<std::vector<double>> e = {{1.0, 3.0}, {2.0, 2.0}};
    const EnergyScores s = energy_scores(e, 2.0);
    CHECK(s.mae == 0.5);
    CHECK(s.mse == 0.5);
}

TEST_CASE("accumulator aggregates contingency tables before forming ratios") {
    Rng rng(4);
    MetricsAccumulator acc({74, 160}, {2});
    Contingency t74, t160;
    double mse_sum = 0.0;
    for (int s = 0; s < 3; ++s) {
        const Tensor obs = random_seq({2, 12, 12, 1}, rng);
        const std::vector<Tensor> ens = {random_seq({2, 12, 12, 1}, rng), random_seq({2, 12, 12, 1}, rng)};
        acc.add(ens, obs);
        const Tensor mean = ensemble_mean(ens);
        t74 += contingency(mean, obs, 74);
        t160 += contingency(mean, obs, 160);
        mse_sum += 0.5 * (mse(ens[0], obs) + mse(ens[1], obs));
    }
    const std::vector<std::vector<double>> e = {{1.0}};
    acc.add_energy(e, 3.0);
    const auto row = acc.finish("m");
    CHECK(row.samples == 3);
    CHECK(row.csi[0] == doctest::Approx(csi(t74)));
    CHECK(row.csi[1] == doctest::Approx(csi(t160)));
    CHECK(row.csi_mean == doctest::Approx(0.5 * (csi(t74) + csi(t160))));
    CHECK(*row.bias[0] == doctest::Approx(*bias(t74)));
    CHECK(row.mse == doctest::Approx(mse_sum / 3));
    CHECK(*row.e_mae == 2.0);
    CHECK(*row.e_mse == 4.0);

    const Tensor obs = random_seq({1, 16, 16, 1}, rng);
    MetricsAccumulator perfect;
    const std::vector<Tensor> exact = {obs};
    perfect.add(exact, obs);
    const auto pr = perfect.finish("p");
    CHECK(pr.mse == 0.0);
    CHECK(pr.ssim == doctest::Approx(1.0));
    CHECK(pr.crps == 0.0);
    for (std::size_t t = 0; t < pr.csi.size(); ++t) {
        if (pr.bias[t]) CHECK(pr.csi[t] == 1.0);
    }
}

TEST_CASE("metrics CSV has a fixed header and nan for undefined values") {
    const std::vector<double> thr = {16, 74};
    const std::vector<std::size_t> pools = {4};
    const auto cols = metrics_csv_columns(thr, pools);
    CHECK(cols == std::vector<std::string>{"model", "samples", "mse", "mae", "ssim", "csi_16", "csi_74", "csi_m",
                                           "csi_pool4_16", "csi_pool4_74", "csi_pool4_m", "bias_16", "bias_74",
                                           "bias_m", "crps", "e_mse", "e_mae"});
    MetricsAccumulator acc(thr, pools);
    const Tensor zero({1, 4, 4, 1}, 0.0f);
    const std::vector<Tensor> ens = {zero};
    acc.add_energy(std::vector<std::vector<double>>{{0.0}}, 0.0);
    const std::vector<MetricsAccumulator::Row> rows = {acc.finish("x")};
    const fs::path p = fs::temp_directory_path() / "gnwd_metrics.csv";
    write_metrics_csv(p, rows, thr, pools);
    std::ifstream is(p);
    std::string header, line;
    std::getline(is, header);
    std::getline(is, line);
    CHECK(header.rfind("model,samples,mse", 0) == 0);
    CHECK(line.rfind("x,0,nan", 0) == 0);
    CHECK(std::count(line.begin(), line.end(), ',') == static_cast<long>(cols.size() - 1));
    CHECK_THROWS_AS(write_metrics_csv(p, rows, {16}, pools), ContractError);
}
