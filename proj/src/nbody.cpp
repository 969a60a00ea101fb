#include "gnwd/nbody.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "gnwd/parallel.hpp"

namespace gnwd {

double SimConfig::reference_distance() const {
    if (d_ref >= 0.0) return d_ref;
    return std::hypot(static_cast<double>(height), static_cast<double>(width));
}

double SimConfig::wall_lo(std::size_t) const { return wall_margin; }

double SimConfig::wall_hi(std::size_t axis) const {
    const double extent = static_cast<double>(axis == 0 ? height : width);
    return extent - 1.0 - wall_margin;
}

void SimConfig::validate() const {
    if (!(d_soft > 0.0)) throw ContractError("d_soft must be > 0");
    if (!(dt > 0.0)) throw ContractError("dt must be > 0");
    if (!(power >= 1.0)) throw ContractError("power r must be >= 1");
    if (n_bodies < 2) throw ContractError("need at least 2 bodies");
    if (substeps < 1) throw ContractError("substeps must be >= 1");
    if (height < 2 || width < 2) throw ContractError("frame too small");
    if (wall_margin < 0.0 || wall_hi(0) <= wall_lo(0) || wall_hi(1) <= wall_lo(1)) {
        throw ContractError("wall margin leaves no room inside the frame");
    }
    if (!(speed_min >= 0.0 && speed_max >= speed_min)) throw ContractError("bad speed range");
    if (!(mass_min > 0.0 && mass_max >= mass_min)) throw ContractError("masses must be positive");
}

std::vector<Vec2> accelerations(const BodyState& s, const SimConfig& cfg) {
    const std::size_t n = s.size();
    std::vector<Vec2> acc(n, Vec2{0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dr = s.positions[i][0] - s.positions[j][0];
            const double dc = s.positions[i][1] - s.positions[j][1];
            const double d = std::hypot(dr, dc);
            const double k = cfg.gravity / std::pow(d + cfg.d_soft, cfg.power);
            acc[i][0] -= k * s.masses[j] * dr;
            acc[i][1] -= k * s.masses[j] * dc;
            acc[j][0] += k * s.masses[i] * dr;
            acc[j][1] += k * s.masses[i] * dc;
        }
    }
    return acc;
}

namespace {

// Antiderivative of s / (s + a)^r in u = s + a.
double radial_antiderivative(double d, double a, double r) {
    const double u = d + a;
    if (r == 1.0) return u - a * std::log(u);
    if (r == 2.0) return std::log(u) + a / u;
    return std::pow(u, 2.0 - r) / (2.0 - r) + a * std::pow(u, 1.0 - r) / (r - 1.0);
}

}  // namespace

double pair_potential(double distance, double mi, double mj, const SimConfig& cfg) {
    const double dref = cfg.reference_distance();
    return cfg.gravity * mi * mj *
           (radial_antiderivative(distance, cfg.d_soft, cfg.power) - radial_antiderivative(dref, cfg.d_soft, cfg.power));
}

double kinetic_energy(const BodyState& s) {
    double ke = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        ke += 0.5 * s.masses[i] * (s.velocities[i][0] * s.velocities[i][0] + s.velocities[i][1] * s.velocities[i][1]);
    }
    return ke;
}

double potential_energy(const BodyState& s, const SimConfig& cfg) {
    double pe = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            const double d = std::hypot(s.positions[i][0] - s.positions[j][0], s.positions[i][1] - s.positions[j][1]);
            pe += pair_potential(d, s.masses[i], s.masses[j], cfg);
        }
    }
    return pe;
}

double total_energy(const BodyState& s, const SimConfig& cfg) { return kinetic_energy(s) + potential_energy(s, cfg); }

namespace {

void kick_drift_kick(BodyState& s, std::vector<Vec2>& acc, double h, const SimConfig& cfg) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (int k = 0; k < 2; ++k) {
            s.velocities[i][k] += 0.5 * h * acc[i][k];
            s.positions[i][k] += h * s.velocities[i][k];
        }
    }
    acc = accelerations(s, cfg);
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (int k = 0; k < 2; ++k) s.velocities[i][k] += 0.5 * h * acc[i][k];
    }
}

// Earliest tau in (0, hmax] where x + v tau + a tau^2 / 2 reaches a wall while moving outward.
std::optional<std::pair<double, double>> first_contact(double x, double v, double a, double lo, double hi,
                                                        double hmax) {
    std::optional<std::pair<double, double>> best;
    auto consider = [&](double tau, double wall, bool low) {
        if (!(tau > 0.0) || tau > hmax) return;
        const double vel = v + a * tau;
        if (low ? vel >= 0.0 : vel <= 0.0) return;
        if (!best || tau < best->first) best = std::make_pair(tau, wall);
    };
    for (int w = 0; w < 2; ++w) {
        const double wall = w == 0 ? lo : hi;
        const double c2 = 0.5 * a;
        const double c1 = v;
        const double c0 = x - wall;
        if (std::abs(c2) * hmax < 1e-14 * (std::abs(c1) + 1e-300)) {
            if (c1 != 0.0) consider(-c0 / c1, wall, w == 0);
            continue;
        }
        const double disc = c1 * c1 - 4.0 * c2 * c0;
        if (disc < 0.0) continue;
        const double q = -0.5 * (c1 + std::copysign(std::sqrt(disc), c1));
        if (q != 0.0) {
            consider(q / c2, wall, w == 0);
            consider(c0 / q, wall, w == 0);
        } else {
            consider(0.0, wall, w == 0);
        }
    }
    return best;
}

void advance_substep(BodyState& s, std::vector<Vec2>& acc, double h, const SimConfig& cfg) {
    double remaining = h;
    for (int guard = 0; remaining > 0.0; ++guard) {
        double tau = remaining;
        std::size_t hit_body = 0;
        std::size_t hit_axis = 0;
        double hit_wall = 0.0;
        bool hit = false;
        if (guard < 64) {
            for (std::size_t i = 0; i < s.size(); ++i) {
                for (std::size_t k = 0; k < 2; ++k) {
                    auto c = first_contact(s.positions[i][k], s.velocities[i][k], acc[i][k], cfg.wall_lo(k),
                                           cfg.wall_hi(k), remaining);
                    if (c && c->first < tau) {
                        tau = c->first;
                        hit = true;
                        hit_body = i;
                        hit_axis = k;
                        hit_wall = c->second;
                    }
                }
            }
        }
        kick_drift_kick(s, acc, tau, cfg);
        if (hit) {
            s.positions[hit_body][hit_axis] = hit_wall;
            s.velocities[hit_body][hit_axis] = -s.velocities[hit_body][hit_axis];
        }
        remaining = hit ? remaining - tau : 0.0;
    }
    // Mirror anything the event loop did not catch (grazing contacts, guard exhaustion).
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t k = 0; k < 2; ++k) {
            const double lo = cfg.wall_lo(k);
            const double hi = cfg.wall_hi(k);
            double& x = s.positions[i][k];
            if (x < lo) {
                x = std::min(2.0 * lo - x, hi);
                s.velocities[i][k] = std::abs(s.velocities[i][k]);
            } else if (x > hi) {
                x = std::max(2.0 * hi - x, lo);
                s.velocities[i][k] = -std::abs(s.velocities[i][k]);
            }
        }
    }
}

}  // namespace

BodyState step(const BodyState& state, const SimConfig& cfg) {
    BodyState s = state;
    const double h = cfg.dt / cfg.substeps;
    auto acc = accelerations(s, cfg);
    for (int k = 0; k < cfg.substeps; ++k) advance_substep(s, acc, h, cfg);
    return s;
}

Trajectory rollout(const BodyState& initial, const SimConfig& cfg, std::size_t steps) {
    if (steps < 1) throw ContractError("rollout needs at least one step");
    cfg.validate();
    Trajectory traj;
    traj.states.reserve(steps);
    traj.energies.reserve(steps);
    BodyState s = initial;
    for (std::size_t k = 0; k < steps; ++k) {
        s = step(s, cfg);
        traj.energies.push_back(total_energy(s, cfg));
        traj.states.push_back(s);
    }
    return traj;
}

BodyState random_state(const SimConfig& cfg, Rng& rng) {
    BodyState s;
    for (std::size_t i = 0; i < cfg.n_bodies; ++i) {
        s.positions.push_back({rng.uniform(cfg.wall_lo(0), cfg.wall_hi(0)), rng.uniform(cfg.wall_lo(1), cfg.wall_hi(1))});
        const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s.velocities.push_back({speed * std::sin(heading), speed * std::cos(heading)});
        s.masses.push_back(rng.uniform(cfg.mass_min, cfg.mass_max));
    }
    return s;
}

// ---------------------------------------------------------------------------

void render_frame(const BodyState& state, const std::vector<Tensor>& sprites, std::size_t height, std::size_t width,
                  float* frame) {
    if (sprites.size() < state.size()) throw ContractError("need one sprite per body");
    std::fill(frame, frame + height * width, 0.0f);
    for (std::size_t b = 0; b < state.size(); ++b) {
        const Tensor& sp = sprites[b];
        if (sp.rank() != 2 || sp.dim(0) != sp.dim(1)) throw ContractError("sprites must be square [S, S]");
        const std::size_t size = sp.dim(0);
        if (size > height || size > width) throw ContractError("sprite larger than frame");
        const double c = (static_cast<double>(size) - 1.0) / 2.0;
        const double top = state.positions[b][0] - c;
        const double left = state.positions[b][1] - c;
        const auto sample = [&](long r, long col) -> double {
            if (r < 0 || col < 0 || r >= static_cast<long>(size) || col >= static_cast<long>(size)) return 0.0;
            return sp[static_cast<std::size_t>(r) * size + static_cast<std::size_t>(col)];
        };
        const long i0 = std::max(0L, static_cast<long>(std::floor(top)));
        const long i1 = std::min(static_cast<long>(height) - 1, static_cast<long>(std::ceil(top + size)));
        const long j0 = std::max(0L, static_cast<long>(std::floor(left)));
        const long j1 = std::min(static_cast<long>(width) - 1, static_cast<long>(std::ceil(left + size)));
        for (long i = i0; i <= i1; ++i) {
            const double u = static_cast<double>(i) - top;
            const double uf = std::floor(u);
            const double fu = u - uf;
            const long ui = static_cast<long>(uf);
            for (long j = j0; j <= j1; ++j) {
                const double w = static_cast<double>(j) - left;
                const double wf = std::floor(w);
                const double fw = w - wf;
                const long wi = static_cast<long>(wf);
                const double v = (1 - fu) * (1 - fw) * sample(ui, wi) + (1 - fu) * fw * sample(ui, wi + 1) +
                                 fu * (1 - fw) * sample(ui + 1, wi) + fu * fw * sample(ui + 1, wi + 1);
                float& px = frame[static_cast<std::size_t>(i) * width + static_cast<std::size_t>(j)];
                px = std::max(px, static_cast<float>(std::clamp(v, 0.0, 1.0)));
            }
        }
    }
}

Tensor render(const Trajectory& traj, const std::vector<Tensor>& sprites, std::size_t height, std::size_t width) {
    if (traj.states.empty()) throw ContractError("empty trajectory");
    Tensor out({traj.states.size(), height, width, 1});
    for (std::size_t l = 0; l < traj.states.size(); ++l) {
        render_frame(traj.states[l], sprites, height, width, out.data() + l * height * width);
    }
    return out;
}

TrajectoryRecord to_record(const Trajectory& traj) {
    const std::size_t len = traj.states.size();
    const std::size_t n = len ? traj.states[0].size() : 0;
    if (len == 0 || n == 0) throw ContractError("empty trajectory");
    Tensor states({len, n, 5});
    Tensor energies({len});
    for (std::size_t l = 0; l < len; ++l) {
        const auto& s = traj.states[l];
        for (std::size_t i = 0; i < n; ++i) {
            float* p = states.data() + (l * n + i) * 5;
            p[0] = static_cast<float>(s.positions[i][0]);
            p[1] = static_cast<float>(s.positions[i][1]);
            p[2] = static_cast<float>(s.velocities[i][0]);
            p[3] = static_cast<float>(s.velocities[i][1]);
            p[4] = static_cast<float>(s.masses[i]);
        }
        energies[l] = static_cast<float>(traj.energies[l]);
    }
    return {std::move(states), std::move(energies)};
}

Trajectory from_record(const TrajectoryRecord& rec) {
    if (rec.states.rank() != 3 || rec.states.dim(2) != 5 || rec.energies.numel() != rec.states.dim(0)) {
        throw FormatError("malformed trajectory record");
    }
    Trajectory traj;
    const std::size_t len = rec.states.dim(0);
    const std::size_t n = rec.states.dim(1);
    for (std::size_t l = 0; l < len; ++l) {
        BodyState s;
        for (std::size_t i = 0; i < n; ++i) {
            const float* p = rec.states.data() + (l * n + i) * 5;
            s.positions.push_back({p[0], p[1]});
            s.velocities.push_back({p[2], p[3]});
            s.masses.push_back(p[4]);
        }
        traj.states.push_back(std::move(s));
        traj.energies.push_back(rec.energies[l]);
    }
    return traj;
}

// ---------------------------------------------------------------------------

Tensor downsample_sprites(const Tensor& sprites, std::size_t factor) {
    if (sprites.rank() != 3 || factor == 0 || sprites.dim(1) % factor || sprites.dim(2) % factor) {
        throw ContractError("sprite stack must be [count, S, S] with S divisible by the factor");
    }
    const std::size_t count = sprites.dim(0);
    const std::size_t h = sprites.dim(1) / factor;
    const std::size_t w = sprites.dim(2) / factor;
    Tensor out({count, h, w});
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t n = 0; n < count; ++n) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                double acc = 0.0;
                for (std::size_t a = 0; a < factor; ++a) {
                    for (std::size_t b = 0; b < factor; ++b) {
                        acc += sprites[(n * sprites.dim(1) + i * factor + a) * sprites.dim(2) + j * factor + b];
                    }
                }
                out[(n * h + i) * w + j] = static_cast<float>(acc * inv);
            }
        }
    }
    return out;
}

namespace {

double segment_distance(double py, double px, double ay, double ax, double by, double bx) {
    const double vy = by - ay;
    const double vx = bx - ax;
    const double len2 = vy * vy + vx * vx;
    double t = len2 > 0 ? ((py - ay) * vy + (px - ax) * vx) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(py - (ay + t * vy), px - (ax + t * vx));
}

}  // namespace

Tensor synthetic_digit_sprites(std::size_t count, std::uint64_t seed) {
    // Segments a..g as (row0, col0, row1, col1) on a unit box; bit k set means segment k lit.
    static constexpr double kSegments[7][4] = {
        {0, 0, 0, 1}, {0, 1, 0.5, 1}, {0.5, 1, 1, 1}, {1, 0, 1, 1}, {0.5, 0, 1, 0}, {0, 0, 0.5, 0}, {0.5, 0, 0.5, 1},
    };
    static constexpr unsigned kDigitMask[10] = {0x3F, 0x06, 0x5B, 0x4F, 0x66, 0x6D, 0x7D, 0x07, 0x7F, 0x6F};
    constexpr std::size_t kSize = 28;
    Tensor out({count, kSize, kSize});
    Rng rng(seed);
    for (std::size_t n = 0; n < count; ++n) {
        const unsigned mask = kDigitMask[n % 10];
        const double box_h = rng.uniform(14.0, 18.0);
        const double box_w = rng.uniform(7.0, 10.0);
        const double top = (kSize - box_h) / 2.0 + rng.uniform(-1.0, 1.0);
        const double left = (kSize - box_w) / 2.0 + rng.uniform(-1.0, 1.0);
        const double slant = rng.uniform(-0.25, 0.25);
        const double thick = rng.uniform(1.4, 2.2);
        for (std::size_t i = 0; i < kSize; ++i) {
            for (std::size_t j = 0; j < kSize; ++j) {
                const double py = static_cast<double>(i);
                const double px = static_cast<double>(j) + slant * (py - kSize / 2.0);
                double dmin = 1e9;
                for (int k = 0; k < 7; ++k) {
                    if (!(mask & (1u << k))) continue;
                    const auto& s = kSegments[k];
                    dmin = std::min(dmin, segment_distance(py, px, top + s[0] * box_h, left + s[1] * box_w,
                                                           top + s[2] * box_h, left + s[3] * box_w));
                }
                // soft stroke edge, about one pixel wide
                const double v = 1.0 / (1.0 + std::exp((dmin - thick) * 2.5));
                out[(n * kSize + i) * kSize + j] = static_cast<float>(v < 0.02 ? 0.0 : v);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

SequenceSample generate_sample(const SimConfig& cfg, const Tensor& sprite_pool, std::size_t l_in, std::size_t l_out,
                               std::uint64_t sample_seed) {
    if (sprite_pool.rank() != 3) throw ContractError("sprite pool must be [count, S, S]");
    if (l_in < 1 || l_out < 1) throw ContractError("sequence lengths must be >= 1");
    Rng rng(sample_seed);
    const BodyState init = random_state(cfg, rng);
    const std::size_t s = sprite_pool.dim(1);
    std::vector<Tensor> sprites;
    for (std::size_t b = 0; b < cfg.n_bodies; ++b) {
        const std::size_t pick = rng.below(sprite_pool.dim(0));
        std::vector<float> px(sprite_pool.data() + pick * s * s, sprite_pool.data() + (pick + 1) * s * s);
        sprites.emplace_back(Shape{s, s}, std::move(px));
    }
    const Trajectory traj = rollout(init, cfg, l_in + l_out);
    const Tensor frames = render(traj, sprites, cfg.height, cfg.width);
    SequenceSample out;
    out.context = slice_leading(frames, 0, l_in);
    out.target = slice_leading(frames, l_in, l_in + l_out);
    out.meta = to_record(traj);
    return out;
}

DatasetManifest generate_dataset(const SimConfig& cfg, const Tensor& sprite_pool, const GenerateOptions& opt,
                                 const std::filesystem::path& data_path) {
    if (opt.count < 1) throw ContractError("count must be >= 1");
    cfg.validate();
    DatasetWriter writer(data_path, opt.seed, opt.split);
    constexpr std::size_t kChunk = 64;
    for (std::size_t base = 0; base < opt.count; base += kChunk) {
        const std::size_t n = std::min(kChunk, opt.count - base);
        std::vector<SequenceSample> chunk(n);
        parallel_for(n, opt.workers, [&](std::size_t k) {
            chunk[k] = generate_sample(cfg, sprite_pool, opt.l_in, opt.l_out, derive_seed(opt.seed, base + k));
        });
        for (const auto& s : chunk) writer.add(s);
    }
    return writer.finish();
}

}  // namespace gnwd
