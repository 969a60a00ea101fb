#include "gnwd/alignment.hpp"

#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "json.hpp"

namespace gnwd {

void AlignmentSpec::validate() const {
    if (l_in < 1 || l_out < 1 || channels < 1 || height < 1 || width < 1) {
        throw ContractError("alignment net: sequence and grid dims must be >= 1");
    }
    if (base_width < 1 || hidden < 1 || heads < 1 || out_dim < 1 || time_dim < 2) {
        throw ContractError("alignment net: widths, heads and output dim must be >= 1");
    }
}

AlignmentBatch make_alignment_batch(std::span<const Tensor> z0, std::span<const Tensor> z_cond,
                                    std::span<const std::vector<double>> targets, const NoiseSchedule& sched, Rng& rng,
                                    int fixed_t) {
    if (z0.size() != z_cond.size() || z0.size() != targets.size()) {
        throw ContractError("alignment batch: latents, contexts and targets differ in count");
    }
    if (fixed_t > sched.steps()) throw ContractError("alignment batch: fixed t exceeds T");
    AlignmentBatch b;
    for (std::size_t i = 0; i < z0.size(); ++i) {
        const int t = fixed_t >= 0 ? fixed_t : static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps()) + 1));
        if (fixed_t == 0) {
            b.z_t.push_back(z0[i]);
        } else {
            const Tensor eps = standard_normal(z0[i].shape(), rng);
            b.z_t.push_back(q_sample(z0[i], t, eps, sched));
        }
        b.z_cond.push_back(z_cond[i]);
        b.t.push_back(t);
        b.target.push_back(targets[i]);
    }
    return b;
}

Tensor symmetry_transform(const Tensor& seq, unsigned s) {
    if (seq.rank() != 4) throw ContractError("symmetry_transform expects [L,H,W,C]");
    if (s >= 8) throw ContractError("symmetry index must be < 8");
    const std::size_t l = seq.shape()[0], h = seq.shape()[1], w = seq.shape()[2], c = seq.shape()[3];
    const bool tr = (s & 4u) != 0;
    if (tr && h != w) throw ContractError("transpose needs square frames");
    Tensor out(seq.shape());
    for (std::size_t f = 0; f < l; ++f) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                std::size_t si = (s & 1u) ? h - 1 - i : i;
                std::size_t sj = (s & 2u) ? w - 1 - j : j;
                if (tr) std::swap(si, sj);
                for (std::size_t k = 0; k < c; ++k) {
                    out[((f * h + i) * w + j) * c + k] = seq[((f * h + si) * w + sj) * c + k];
                }
            }
        }
    }
    return out;
}

Tensor reverse_frames(const Tensor& seq) {
    if (seq.rank() < 1) throw ContractError("reverse_frames needs a leading frame axis");
    const std::size_t l = seq.shape()[0], stride = l ? seq.numel() / l : 0;
    Tensor out(seq.shape());
    for (std::size_t f = 0; f < l; ++f) {
        std::copy_n(seq.values().begin() + static_cast<std::ptrdiff_t>((l - 1 - f) * stride), stride,
                    out.span().begin() + static_cast<std::ptrdiff_t>(f * stride));
    }
    return out;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& p) {
    auto s = p;
    s += ".json";
    return s;
}

}  // namespace

void save_alignment(const std::filesystem::path& path, const AlignmentNet<float>& net, const Normalizer& norm,
                    const CheckpointInfo& info) {
    save_param_tensors(path, net.layout(), net.params());
    const auto& s = net.spec();
    nlohmann::ordered_json j;
    j["format"] = "gnwd-checkpoint";
    j["kind"] = info.kind.empty() ? "alignment" : info.kind;
    j["step"] = info.step;
    j["spec"] = {{"l_in", s.l_in},         {"l_out", s.l_out},       {"height", s.height},
                 {"width", s.width},       {"channels", s.channels}, {"base_width", s.base_width},
                 {"time_dim", s.time_dim}, {"heads", s.heads},       {"hidden", s.hidden},
                 {"out_dim", s.out_dim}};
    j["normalizer"] = {{"mean", norm.mean}, {"scale", norm.scale}};
    auto& names = j["params"] = nlohmann::ordered_json::array();
    for (const auto& e : net.layout().entries()) names.push_back({{"name", e.name}, {"shape", e.shape}});
    j["extra"] = info.extra.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(info.extra);
    std::ofstream os(sidecar(path), std::ios::trunc);
    if (!os) throw IoError("cannot write " + sidecar(path).string());
    os << j.dump(1) << '\n';
}

AlignmentNet<float> load_alignment(const std::filesystem::path& path, Normalizer* norm, CheckpointInfo* info) {
    std::ifstream is(sidecar(path));
    if (!is) throw IoError("missing checkpoint: " + sidecar(path).string());
    nlohmann::json j;
    AlignmentSpec s;
    Normalizer nz;
    try {
        j = nlohmann::json::parse(is);
        if (j.at("format") != "gnwd-checkpoint" || j.at("spec").find("heads") == j.at("spec").end()) {
            throw FormatError("not an alignment checkpoint: " + path.string());
        }
        const auto& js = j.at("spec");
        s.l_in = js.at("l_in");
        s.l_out = js.at("l_out");
        s.height = js.at("height");
        s.width = js.at("width");
        s.channels = js.at("channels");
        s.base_width = js.at("base_width");
        s.time_dim = js.at("time_dim");
        s.heads = js.at("heads");
        s.hidden = js.at("hidden");
        s.out_dim = js.at("out_dim");
        nz.mean = j.at("normalizer").at("mean");
        nz.scale = j.at("normalizer").at("scale");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    AlignmentNet<float> net(s);
    net.params() = load_param_tensors(path, net.layout());
    if (norm) *norm = nz;
    if (info) {
        info->kind = j.at("kind");
        info->step = j.at("step");
        info->extra = j.at("extra").dump();
    }
    return net;
}

// ---------------------------------------------------------------------------

ConstraintKind parse_constraint_kind(const std::string& s) {
    if (s == "energy") return ConstraintKind::energy_sequence;
    if (s == "mean_intensity") return ConstraintKind::mean_intensity;
    if (s == "linear_probe") return ConstraintKind::linear_probe;
    throw ContractError("unknown constraint: " + s + " (expected energy, mean_intensity or linear_probe)");
}

std::string to_string(ConstraintKind k) {
    switch (k) {
        case ConstraintKind::energy_sequence: return "energy";
        case ConstraintKind::mean_intensity: return "mean_intensity";
        case ConstraintKind::linear_probe: return "linear_probe";
    }
    return "?";
}

std::vector<double> EnergyDetector::energies(const Tensor& x_hat, const Tensor& y) const {
    auto out = net_.evaluate(codec_.encode_seq(x_hat), 0, codec_.encode_seq(y));
    for (double& v : out) v = norm_.from_net(v);
    return out;
}

Tensor EnergyDetector::pullback(const Tensor& x_hat, const Tensor& y, std::span<const double> cot) const {
    std::vector<double> c(cot.begin(), cot.end());
    for (double& v : c) v *= norm_.scale;
    const Tensor dz = net_.input_vjp(codec_.encode_seq(x_hat), 0, codec_.encode_seq(y), c);
    return codec_.decode_seq(dz);
}

std::vector<double> constraint_value(const ConstraintSpec& spec, const Tensor& x_hat, const Tensor& y) {
    switch (spec.kind) {
        case ConstraintKind::mean_intensity:
            return {mean_intensity(x_hat)};
        case ConstraintKind::linear_probe:
            if (spec.probe.shape() != x_hat.shape()) throw ContractError("linear probe shape differs from x_hat");
            return {dot(spec.probe.span(), x_hat.span()) + spec.offset};
        case ConstraintKind::energy_sequence:
            if (!spec.detector) throw ContractError("energy constraint needs an energy detector");
            return spec.detector->energies(x_hat, y);
    }
    return {};
}

Tensor constraint_pullback(const ConstraintSpec& spec, const Tensor& x_hat, const Tensor& y,
                           std::span<const double> cot) {
    if (cot.size() != spec.dim()) throw ContractError("constraint cotangent has the wrong dimension");
    switch (spec.kind) {
        case ConstraintKind::mean_intensity: {
            Tensor g(x_hat.shape());
            const auto v = static_cast<float>(cot[0] / static_cast<double>(x_hat.numel()));
            for (auto& e : g.span()) e = v;
            return g;
        }
        case ConstraintKind::linear_probe: {
            if (spec.probe.shape() != x_hat.shape()) throw ContractError("linear probe shape differs from x_hat");
            Tensor g(x_hat.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = static_cast<float>(cot[0] * spec.probe[i]);
            return g;
        }
        case ConstraintKind::energy_sequence:
            if (!spec.detector) throw ContractError("energy constraint needs an energy detector");
            return spec.detector->pullback(x_hat, y, cot);
    }
    return {};
}

std::vector<double> energy_sequence_from_trajectory(const Trajectory& traj, std::size_t l_in, std::size_t l_out) {
    if (traj.energies.size() < l_in + l_out || l_in < 1) {
        throw ContractError("trajectory shorter than L_in + L_out");
    }
    return {traj.energies.begin() + static_cast<std::ptrdiff_t>(l_in),
            traj.energies.begin() + static_cast<std::ptrdiff_t>(l_in + l_out)};
}

std::vector<double> energy_reference(const Trajectory& traj, std::size_t l_in, std::size_t l_out) {
    if (traj.energies.size() < l_in || l_in < 1) throw ContractError("trajectory shorter than L_in");
    return std::vector<double>(l_out, traj.energies[l_in - 1]);
}

double violation(std::span<const double> f, std::span<const double> f0) {
    if (f.size() != f0.size()) throw ContractError("violation: F and F_0 differ in dimension");
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += (f[i] - f0[i]) * (f[i] - f0[i]);
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------

Linearization OracleEstimator::linearize(const Tensor& z, int t, const Tensor& z_cond) const {
    Tensor z0 = z;
    const double abar = sched_.alpha_bar(t);
    const double a = 1.0 / std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar) / std::sqrt(abar);
    if (t > 0) {
        const Tensor eps = model_.predict(z, t, z_cond);
        for (std::size_t i = 0; i < z0.numel(); ++i) z0[i] = static_cast<float>(a * z[i] - b * eps[i]);
    }
    Tensor x_hat = codec_ ? codec_->decode_seq(z0) : z0;
    Tensor y = codec_ ? codec_->decode_seq(z_cond) : z_cond;
    Linearization lin;
    lin.value = constraint_value(spec_, x_hat, y);
    lin.pullback = [this, z, t, z_cond, a, b, x_hat = std::move(x_hat), y = std::move(y)](std::span<const double> cot) {
        const Tensor gx = constraint_pullback(spec_, x_hat, y, cot);
        Tensor gz = codec_ ? codec_->encode_seq(gx) : gx;
        if (t == 0) return gz;
        const Tensor ve = model_.predict_vjp(z, t, z_cond, gz);
        for (std::size_t i = 0; i < gz.numel(); ++i) gz[i] = static_cast<float>(a * gz[i] - b * ve[i]);
        return gz;
    };
    return lin;
}

Tensor guidance_gradient(const ConstraintEstimator& est, const Tensor& z, int t, const Tensor& z_cond,
                         std::span<const double> f0, const GuidanceConfig& cfg) {
    cfg.validate();
    if (f0.size() != est.dim()) throw ContractError("F_0 dimension does not match the constraint");
    Tensor g(z.shape());
    if (cfg.lambda == 0.0) return g;
    const Linearization lin = est.linearize(z, t, z_cond);
    std::vector<double> diff(f0.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = lin.value[i] - f0[i];
    const double nrm = violation(lin.value, f0);
    if (nrm == 0.0) return g;
    for (double& d : diff) d /= nrm;
    const Tensor grad = lin.pullback(diff);
    double n2 = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        const double v = -cfg.lambda * grad[i];
        g[i] = static_cast<float>(v);
        n2 += v * v;
    }
    if (cfg.clip > 0.0 && std::sqrt(n2) > cfg.clip) {
        const double s = cfg.clip / std::sqrt(n2);
        for (auto& v : g.span()) v = static_cast<float>(v * s);
    }
    return g;
}

TransitionMoments apply_guidance(const TransitionMoments& m, const Tensor& g) {
    if (g.shape() != m.mean.shape()) throw ContractError("guidance shift shape differs from the mean");
    TransitionMoments out{Tensor(m.mean.shape()), m.var};
    for (std::size_t i = 0; i < g.numel(); ++i) out.mean[i] = static_cast<float>(m.mean[i] + m.var * g[i]);
    return out;
}

GuidanceHook make_guidance_hook(const ConstraintEstimator& est, std::vector<double> f0, GuidanceConfig cfg) {
    cfg.validate();
    return [&est, f0 = std::move(f0), cfg](const TransitionMoments& m, int t_next, const Tensor& z_cond) {
        return guidance_gradient(est, m.mean, t_next, z_cond, f0, cfg);
    };
}

// ---------------------------------------------------------------------------

std::vector<double> frame_intensities(const Tensor& seq) {
    if (seq.rank() != 4) throw ContractError("expected an [L, H, W, C] sequence, got " + shape_str(seq.shape()));
    const std::size_t per = seq.numel() / seq.dim(0);
    std::vector<double> out(seq.dim(0));
    for (std::size_t f = 0; f < out.size(); ++f) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += seq[f * per + i];
        out[f] = s / static_cast<double>(per);
    }
    return out;
}

double mean_intensity(const Tensor& seq) {
    if (seq.empty()) throw ContractError("mean intensity of an empty tensor");
    double s = 0.0;
    for (float v : seq.values()) s += v;
    return s / static_cast<double>(seq.numel());
}

double IntensityForecaster::mean(std::span<const double> features) const {
    if (features.size() + 1 != weights.size()) throw ContractError("forecaster: feature count mismatch");
    double m = weights[0];
    for (std::size_t i = 0; i < features.size(); ++i) m += weights[i + 1] * features[i];
    return m;
}

IntensityForecaster fit_intensity_forecaster(std::span<const std::vector<double>> features,
                                             std::span<const double> targets) {
    const std::size_t n = features.size();
    if (n == 0 || targets.size() != n) throw ContractError("forecaster: need matching, non-empty data");
    const std::size_t k = features[0].size();
    const std::size_t p = k + 1;
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (features[i].size() != k) throw ContractError("forecaster: ragged feature rows");
        x(i, 0) = 1.0;
        for (std::size_t j = 0; j < k; ++j) x(i, j + 1) = features[i][j];
        y(i) = targets[i];
    }
    IntensityForecaster f;
    Eigen::VectorXd w;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (n >= p && qr.rank() == static_cast<Eigen::Index>(p)) {
        w = qr.solve(y);
    } else {
        // ridge on the slopes only; the intercept absorbs the means
        f.ridge_fallback = true;
        const Eigen::RowVectorXd xm = x.rightCols(k).colwise().mean();
        const double ym = y.mean();
        const Eigen::MatrixXd xc = x.rightCols(k).rowwise() - xm;
        const Eigen::VectorXd yc = y.array() - ym;
        Eigen::MatrixXd gram = xc.transpose() * xc;
        const double lam = 1e-6 * std::max(gram.trace() / static_cast<double>(std::max<std::size_t>(k, 1)), 1e-12);
        gram.diagonal().array() += lam;
        const Eigen::VectorXd slopes = k ? Eigen::VectorXd(gram.ldlt().solve(xc.transpose() * yc)) : Eigen::VectorXd();
        w.resize(static_cast<Eigen::Index>(p));
        w(0) = ym - (k ? (xm * slopes)(0) : 0.0);
        w.tail(static_cast<Eigen::Index>(k)) = slopes;
    }
    const Eigen::VectorXd r = y - x * w;
    const double rss = r.squaredNorm();
    const std::size_t dof = f.ridge_fallback ? std::max<std::size_t>(n, 2) - 1 : (n > p ? n - p : n);
    f.sigma = std::sqrt(rss / static_cast<double>(dof));
    f.weights.assign(w.data(), w.data() + w.size());
    if (!f.ridge_fallback && n > p) {
        const Eigen::MatrixXd cov = (x.transpose() * x).inverse() * (rss / static_cast<double>(n - p));
        for (std::size_t j = 0; j < p; ++j) f.std_errors.push_back(std::sqrt(std::max(cov(j, j), 0.0)));
    }
    return f;
}

IntensityForecaster fit_intensity_forecaster(std::span<const SequenceSample> corpus) {
    std::vector<std::vector<double>> feats;
    std::vector<double> targets;
    for (const auto& s : corpus) {
        feats.push_back(frame_intensities(s.context));
        targets.push_back(mean_intensity(s.target));
    }
    return fit_intensity_forecaster(feats, targets);
}

double anticipated_target(const IntensityForecaster& f, const Tensor& y, double n_sigma) {
    return f.mean(y) + n_sigma * f.sigma;
}

}  // namespace gnwd
