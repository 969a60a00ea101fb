#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gnwd/data_store.hpp"
#include "gnwd/rng.hpp"
#include "gnwd/tensor.hpp"

namespace gnwd {

using Vec2 = std::array<double, 2>;  // (row, col) in frame units

struct BodyState {
    std::vector<Vec2> positions;
    std::vector<Vec2> velocities;  // frame units per unit time
    std::vector<double> masses;

    std::size_t size() const { return positions.size(); }
};

/// Softened power-law gravity in a walled 2-D box.
///
/// Walls sit at `wall_margin` and `extent - 1 - wall_margin` along each axis, in
/// pixel-center coordinates, so a body stays in [0, H) x [0, W).
struct SimConfig {
    double gravity = 1.0;
    double power = 2.0;       // r in the force law
    double d_soft = 1.0;
    double dt = 0.25;         // time between rendered frames
    int substeps = 5;         // leapfrog sub-iterations per dt
    std::size_t n_bodies = 3;
    std::size_t height = 64;
    std::size_t width = 64;
    double d_ref = 0.0;       // potential zero point (0 = contact, PE >= 0); < 0 selects the frame diagonal
    double wall_margin = 0.0;

    // initial-condition sampling
    double speed_min = 0.5;
    double speed_max = 2.0;
    double mass_min = 1.0;
    double mass_max = 1.0;

    double reference_distance() const;
    double wall_lo(std::size_t axis) const;
    double wall_hi(std::size_t axis) const;
    void validate() const;
};

struct Trajectory {
    std::vector<BodyState> states;
    std::vector<double> energies;
};

std::vector<Vec2> accelerations(const BodyState& state, const SimConfig& cfg);

/// Pair potential U(d) with U'(d) = G m_i m_j d / (d + d_soft)^r and U(d_ref) = 0.
double pair_potential(double distance, double mi, double mj, const SimConfig& cfg);

double kinetic_energy(const BodyState& state);
double potential_energy(const BodyState& state, const SimConfig& cfg);
double total_energy(const BodyState& state, const SimConfig& cfg);

/// Advances one frame interval dt with `substeps` kick-drift-kick sub-iterations.
/// Wall contacts are resolved at the contact time inside the sub-step, with the
/// normal velocity negated.
BodyState step(const BodyState& state, const SimConfig& cfg);

/// L post-step states starting from `initial`, with their total energies.
Trajectory rollout(const BodyState& initial, const SimConfig& cfg, std::size_t steps);

/// Random initial condition: uniform positions inside the walls, uniform speed and heading.
BodyState random_state(const SimConfig& cfg, Rng& rng);

/// Composites sprites (bilinear sub-pixel placement, per-pixel max) into [L, H, W, 1].
/// `sprites[i]` is an [S, S] image for body i.
Tensor render(const Trajectory& traj, const std::vector<Tensor>& sprites, std::size_t height, std::size_t width);

/// Single frame of render().
void render_frame(const BodyState& state, const std::vector<Tensor>& sprites, std::size_t height, std::size_t width,
                  float* frame);

TrajectoryRecord to_record(const Trajectory& traj);
Trajectory from_record(const TrajectoryRecord& rec);

/// Box-filter downsample of an [count, S, S] sprite stack by an integer factor.
Tensor downsample_sprites(const Tensor& sprites, std::size_t factor);

/// Procedural 28x28 digit glyphs (0-9 in a seven-segment hand), blurred and jittered,
/// for runs without an MNIST download. Shape [count, 28, 28].
Tensor synthetic_digit_sprites(std::size_t count, std::uint64_t seed);

struct GenerateOptions {
    std::size_t count = 1;
    std::size_t l_in = 10;
    std::size_t l_out = 10;
    std::uint64_t seed = 0;
    std::string split = "train";
    std::size_t workers = 1;
};

/// Simulates, renders and stores `count` sequences; the simulator trajectory is kept as meta.
/// `sprite_pool` is [count, S, S].
DatasetManifest generate_dataset(const SimConfig& cfg, const Tensor& sprite_pool, const GenerateOptions& opt,
                                 const std::filesystem::path& data_path);

/// One sample of generate_dataset(), for in-memory use.
SequenceSample generate_sample(const SimConfig& cfg, const Tensor& sprite_pool, std::size_t l_in, std::size_t l_out,
                               std::uint64_t sample_seed);

}  // namespace gnwd
