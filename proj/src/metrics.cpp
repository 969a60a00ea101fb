#include "gnwd/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

namespace gnwd {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(what) + ": shapes differ (" + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()) + ")");
    }
    if (a.empty()) throw ContractError(std::string(what) + ": empty input");
}

bool event(float v, double threshold) { return static_cast<double>(v) * 255.0 >= threshold; }

}  // namespace

Contingency& Contingency::operator+=(const Contingency& o) {
    hits += o.hits;
    misses += o.misses;
    false_alarms += o.false_alarms;
    correct_negatives += o.correct_negatives;
    return *this;
}

Contingency contingency(const Tensor& pred, const Tensor& obs, double threshold) {
    require_same(pred, obs, "contingency");
    Contingency c;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const bool p = event(pred[i], threshold);
        const bool o = event(obs[i], threshold);
        if (p && o) ++c.hits;
        else if (o) ++c.misses;
        else if (p) ++c.false_alarms;
        else ++c.correct_negatives;
    }
    return c;
}

double csi(const Contingency& c) {
    const auto d = c.hits + c.misses + c.false_alarms;
    return d == 0 ? 0.0 : static_cast<double>(c.hits) / static_cast<double>(d);
}

std::optional<double> bias(const Contingency& c) {
    const auto d = c.hits + c.misses;
    if (d == 0) return std::nullopt;
    return static_cast<double>(c.hits + c.false_alarms) / static_cast<double>(d);
}

Tensor max_pool_frames(const Tensor& seq, std::size_t s) {
    if (seq.rank() != 4) throw ContractError("max_pool_frames: expected [L, H, W, C], got " + shape_str(seq.shape()));
    const std::size_t l = seq.dim(0), h = seq.dim(1), w = seq.dim(2), c = seq.dim(3);
    if (s == 0 || h % s || w % s) {
        throw ContractError(fmt::format("pooling size {} does not divide the {}x{} frame", s, h, w));
    }
    const std::size_t ho = h / s, wo = w / s;
    Tensor out({l, ho, wo, c}, -std::numeric_limits<float>::infinity());
    for (std::size_t f = 0; f < l; ++f) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                for (std::size_t k = 0; k < c; ++k) {
                    float& dst = out[((f * ho + i / s) * wo + j / s) * c + k];
                    dst = std::max(dst, seq[((f * h + i) * w + j) * c + k]);
                }
            }
        }
    }
    return out;
}

Contingency pooled_contingency(const Tensor& pred, const Tensor& obs, double threshold, std::size_t s) {
    require_same(pred, obs, "pooled contingency");
    return contingency(max_pool_frames(pred, s), max_pool_frames(obs, s), threshold);
}

double crps_ensemble(std::span<const Tensor> members, const Tensor& obs) {
    if (members.empty()) throw ContractError("CRPS needs at least one member");
    for (const auto& m : members) require_same(m, obs, "crps");
    const std::size_t n = obs.numel(), mm = members.size();
    const double inv_m = 1.0 / static_cast<double>(mm);
    double total = 0.0;
    std::vector<double> x(mm);
    for (std::size_t i = 0; i < n; ++i) {
        double skill = 0.0;
        for (std::size_t a = 0; a < mm; ++a) {
            x[a] = members[a][i];
            skill += std::abs(x[a] - static_cast<double>(obs[i]));
        }
        // sum_{a,b} |x_a - x_b| = 2 sum_k (2k - M + 1) x_(k) over sorted values
        std::sort(x.begin(), x.end());
        double spread = 0.0;
        for (std::size_t k = 0; k < mm; ++k) {
            spread += (2.0 * static_cast<double>(k) - static_cast<double>(mm) + 1.0) * x[k];
        }
        total += skill * inv_m - spread * inv_m * inv_m;
    }
    return total / static_cast<double>(n);
}

double ssim_plane(const float* a, const float* b, std::size_t h, std::size_t w) {
    constexpr std::size_t win = 11;
    constexpr double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    if (h < win || w < win) throw ContractError(fmt::format("SSIM needs frames of at least 11x11, got {}x{}", h, w));
    std::array<double, win> g{};
    double gs = 0.0;
    for (std::size_t i = 0; i < win; ++i) {
        const double d = static_cast<double>(i) - 5.0;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        gs += g[i];
    }
    for (double& v : g) v /= gs;
    // separable weighted moments: filter rows then columns
    const auto filter = [&](const std::vector<double>& src) {
        const std::size_t wo = w - win + 1, ho = h - win + 1;
        std::vector<double> rows(h * wo, 0.0), out(ho * wo, 0.0);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < win; ++k) s += g[k] * src[i * w + j + k];
                rows[i * wo + j] = s;
            }
        }
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < win; ++k) s += g[k] * rows[(i + k) * wo + j];
                out[i * wo + j] = s;
            }
        }
        return out;
    };
    const std::size_t n = h * w;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a[i];
        y[i] = b[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

double ssim(const Tensor& a, const Tensor& b) {
    require_same(a, b, "ssim");
    if (a.rank() != 4) throw ContractError("ssim: expected [L, H, W, C], got " + shape_str(a.shape()));
    const std::size_t l = a.dim(0), h = a.dim(1), w = a.dim(2), c = a.dim(3);
    std::vector<float> pa(h * w), pb(h * w);
    double total = 0.0;
    for (std::size_t f = 0; f < l; ++f) {
        for (std::size_t k = 0; k < c; ++k) {
            for (std::size_t q = 0; q < h * w; ++q) {
                pa[q] = a[(f * h * w + q) * c + k];
                pb[q] = b[(f * h * w + q) * c + k];
            }
            total += ssim_plane(pa.data(), pb.data(), h, w);
        }
    }
    return total / static_cast<double>(l * c);
}

double mse(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

double mae(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
    return s / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

Tensor ensemble_mean(std::span<const Tensor> members) {
    if (members.empty()) throw ContractError("ensemble mean of zero members");
    std::vector<double> acc(members[0].numel(), 0.0);
    for (const auto& m : members) {
        require_same(m, members[0], "ensemble mean");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
    }
    Tensor out(members[0].shape());
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(members.size()));
    return out;
}

EnergyScores energy_scores(std::span<const std::vector<double>> member_energies, double reference) {
    EnergyScores s;
    std::size_t n = 0;
    for (const auto& m : member_energies) {
        for (double e : m) {
            const double d = e - reference;
            s.mse += d * d;
            s.mae += std::abs(d);
            ++n;
        }
    }
    if (n == 0) throw ContractError("energy scores need at least one frame");
    s.mse /= static_cast<double>(n);
    s.mae /= static_cast<double>(n);
    return s;
}

// ---------------------------------------------------------------------------

MetricsAccumulator::MetricsAccumulator(std::vector<double> thresholds, std::vector<std::size_t> pool_sizes)
    : thresholds_(std::move(thresholds)), pools_(std::move(pool_sizes)) {
    if (thresholds_.empty()) throw ContractError("at least one threshold is required");
    tables_.assign(thresholds_.size(), {});
    pooled_.assign(pools_.size(), std::vector<Contingency>(thresholds_.size()));
}

void MetricsAccumulator::add(std::span<const Tensor> members, const Tensor& obs) {
    if (members.empty()) throw ContractError("metrics: empty ensemble");
    double m_mse = 0.0, m_mae = 0.0, m_ssim = 0.0;
    for (const auto& m : members) {
        m_mse += mse(m, obs);
        m_mae += mae(m, obs);
        m_ssim += ssim(m, obs);
    }
    const double k = static_cast<double>(members.size());
    mse_ += m_mse / k;
    mae_ += m_mae / k;
    ssim_ += m_ssim / k;
    crps_ += crps_ensemble(members, obs);
    const Tensor mean = ensemble_mean(members);
    for (std::size_t t = 0; t < thresholds_.size(); ++t) tables_[t] += contingency(mean, obs, thresholds_[t]);
    for (std::size_t p = 0; p < pools_.size(); ++p) {
        const Tensor pm = max_pool_frames(mean, pools_[p]);
        const Tensor po = max_pool_frames(obs, pools_[p]);
        for (std::size_t t = 0; t < thresholds_.size(); ++t) pooled_[p][t] += contingency(pm, po, thresholds_[t]);
    }
    ++n_;
}

void MetricsAccumulator::add_energy(std::span<const std::vector<double>> member_energies, double reference) {
    const auto s = energy_scores(member_energies, reference);
    e_mse_ += s.mse;
    e_mae_ += s.mae;
    ++n_energy_;
}

MetricsAccumulator::Row MetricsAccumulator::finish(const std::string& name) const {
    Row r;
    r.name = name;
    r.samples = n_;
    const double n = n_ ? static_cast<double>(n_) : std::numeric_limits<double>::quiet_NaN();
    r.mse = mse_ / n;
    r.mae = mae_ / n;
    r.ssim = ssim_ / n;
    r.crps = crps_ / n;
    double bsum = 0.0;
    std::size_t bcount = 0;
    for (const auto& c : tables_) {
        r.csi.push_back(csi(c));
        r.bias.push_back(bias(c));
        if (r.bias.back()) {
            bsum += *r.bias.back();
            ++bcount;
        }
    }
    for (double v : r.csi) r.csi_mean += v / static_cast<double>(r.csi.size());
    if (bcount) r.bias_mean = bsum / static_cast<double>(bcount);
    for (const auto& per : pooled_) {
        std::vector<double> v;
        double m = 0.0;
        for (const auto& c : per) {
            v.push_back(csi(c));
            m += v.back() / static_cast<double>(per.size());
        }
        r.csi_pool.push_back(std::move(v));
        r.csi_pool_mean.push_back(m);
    }
    if (n_energy_) {
        r.e_mse = e_mse_ / static_cast<double>(n_energy_);
        r.e_mae = e_mae_ / static_cast<double>(n_energy_);
    }
    return r;
}

std::vector<std::string> metrics_csv_columns(const std::vector<double>& thresholds,
                                             const std::vector<std::size_t>& pool_sizes) {
    std::vector<std::string> cols = {"model", "samples", "mse", "mae", "ssim"};
    for (double t : thresholds) cols.push_back(fmt::format("csi_{:g}", t));
    cols.push_back("csi_m");
    for (std::size_t s : pool_sizes) {
        for (double t : thresholds) cols.push_back(fmt::format("csi_pool{}_{:g}", s, t));
        cols.push_back(fmt::format("csi_pool{}_m", s));
    }
    for (double t : thresholds) cols.push_back(fmt::format("bias_{:g}", t));
    cols.push_back("bias_m");
    for (const char* c : {"crps", "e_mse", "e_mae"}) cols.emplace_back(c);
    return cols;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsAccumulator::Row> rows,
                       const std::vector<double>& thresholds, const std::vector<std::size_t>& pool_sizes) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    const auto cols = metrics_csv_columns(thresholds, pool_sizes);
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    const auto num = [](double v) { return std::isfinite(v) ? fmt::format("{:.8g}", v) : std::string("nan"); };
    const auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string("nan"); };
    for (const auto& r : rows) {
        if (r.csi.size() != thresholds.size() || r.csi_pool.size() != pool_sizes.size()) {
            throw ContractError("metrics row does not match the CSV schema");
        }
        std::vector<std::string> f = {r.name, std::to_string(r.samples), num(r.mse), num(r.mae), num(r.ssim)};
        for (double v : r.csi) f.push_back(num(v));
        f.push_back(num(r.csi_mean));
        for (std::size_t p = 0; p < pool_sizes.size(); ++p) {
            for (double v : r.csi_pool[p]) f.push_back(num(v));
            f.push_back(num(r.csi_pool_mean[p]));
        }
        for (const auto& v : r.bias) f.push_back(opt(v));
        f.push_back(opt(r.bias_mean));
        f.push_back(num(r.crps));
        f.push_back(opt(r.e_mse));
        f.push_back(opt(r.e_mae));
        for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << f[i];
        os << '\n';
    }
}

}  // namespace gnwd
