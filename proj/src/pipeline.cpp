#include "gnwd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <fstream>
#include <functional>
#include <iostream>

#include <fmt/format.h>

#include "json.hpp"

#include "gnwd/nbody.hpp"
#include "gnwd/oracle.hpp"
#include "gnwd/parallel.hpp"

namespace gnwd {

namespace {

/// Mirrors progress lines to stderr and <out>/<name>.log.
class RunLog {
  public:
    RunLog(const fs::path& out, const std::string& name) : os_(out / (name + ".log"), std::ios::trunc) {
        if (!os_) throw IoError("cannot write log in " + out.string());
    }
    void operator()(const std::string& line) {
        os_ << line << '\n';
        os_.flush();
        std::cerr << line << '\n';
    }

  private:
    std::ofstream os_;
};

void prepare_run(const PipelineConfig& cfg, const fs::path& out) {
    cfg.validate();
    fs::create_directories(out);
    std::ofstream os(out / "config.ini", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (out / "config.ini").string());
    os << dump_config(cfg);
}

std::string num(double v) { return fmt::format("{:.9g}", v); }

DatasetReader open_dataset(fs::path manifest, const PipelineConfig& cfg, const char* role) {
    if (manifest.extension() != ".json") manifest = manifest_path_for(manifest);
    if (!fs::exists(manifest)) throw IoError(std::string(role) + " dataset manifest not found: " + manifest.string());
    DatasetManifest m = load_manifest(manifest);
    if (m.l_in != cfg.l_in || m.l_out != cfg.l_out || m.height != cfg.sim.height || m.width != cfg.sim.width) {
        throw ContractError(fmt::format(
            "{} dataset {} has L_in={} L_out={} {}x{}, but the config expects L_in={} L_out={} {}x{}", role,
            manifest.string(), m.l_in, m.l_out, m.height, m.width, cfg.l_in, cfg.l_out, cfg.sim.height,
            cfg.sim.width));
    }
    return DatasetReader(std::move(m));
}

struct LoopState {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    nn::AdamState adam;
};

using BatchLoss = std::function<LossAndGrads(const std::vector<std::size_t>& idx, std::uint64_t step)>;

/// Epoch loop shared by the three trainers; returns the mean loss of each epoch run.
std::vector<double> run_epochs(std::vector<float>& params, LoopState& st, std::size_t epochs, std::size_t count,
                               std::size_t batch, std::uint64_t order_seed, double lr, bool cosine, double clip, double wd,
                               std::ostream& csv, const BatchLoss& loss, const std::function<void()>& checkpoint,
                               RunLog& log, const std::string& label) {
    const BatchIterator order(count, batch, order_seed);
    nn::AdamConfig acfg;
    acfg.weight_decay = wd;
    std::vector<double> out;
    for (; st.epoch < epochs; ++st.epoch) {
        double sum = 0.0;
        std::size_t nb = 0;
        // cosine decay to lr / 100 over the whole run
        const double frac = static_cast<double>(st.epoch) / static_cast<double>(epochs);
        const double lr_e = cosine ? lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac))) : lr;
        for (const auto& idx : order.epoch_batches(st.epoch)) {
            const LossAndGrads lg = loss(idx, st.step);
            if (!std::isfinite(lg.loss)) throw ContractError(label + ": loss became non-finite");
            nn::adam_step(params, lg.grads, lr_e, clip, st.adam, acfg);
            ++st.step;
            csv << st.step << ',' << st.epoch + 1 << ',' << num(lg.loss) << '\n';
            sum += lg.loss;
            ++nb;
        }
        csv.flush();
        out.push_back(sum / static_cast<double>(std::max<std::size_t>(nb, 1)));
        log(fmt::format("{} epoch {}/{} step {} loss {}", label, st.epoch + 1, epochs, st.step, num(out.back())));
        ++st.epoch;
        checkpoint();
        --st.epoch;
    }
    return out;
}

void save_adam(const fs::path& path, const nn::AdamState& st) {
    if (st.m.empty()) return;
    const std::size_t n = st.m.size();
    std::vector<float> m(st.m.begin(), st.m.end()), v(st.v.begin(), st.v.end());
    const std::vector<Tensor> ts = {Tensor({n}, std::move(m)), Tensor({n}, std::move(v))};
    save_tensors(path, ts);
}

void load_adam(const fs::path& path, nn::AdamState& st, std::uint64_t adam_step) {
    if (!fs::exists(path)) return;
    const auto ts = load_tensors(path);
    if (ts.size() != 2) throw FormatError("optimizer state file is malformed: " + path.string());
    st.m.assign(ts[0].values().begin(), ts[0].values().end());
    st.v.assign(ts[1].values().begin(), ts[1].values().end());
    st.step = adam_step;
}

std::ofstream open_loss_csv(const fs::path& path, bool append) {
    const bool fresh = !append || !fs::exists(path);
    std::ofstream os(path, fresh ? std::ios::trunc : std::ios::app);
    if (!os) throw IoError("cannot write " + path.string());
    if (fresh) os << "step,epoch,loss\n";
    return os;
}

std::string loop_extra(const LoopState& st, const nlohmann::ordered_json& more = {}) {
    nlohmann::ordered_json j = {{"epoch", st.epoch}, {"adam_step", st.adam.step}};
    if (more.is_object()) {
        for (const auto& [k, v] : more.items()) j[k] = v;
    }
    return j.dump();
}

void restore_loop(const CheckpointInfo& info, const fs::path& opt, LoopState& st) {
    const auto extra = nlohmann::json::parse(info.extra);
    st.step = info.step;
    st.epoch = extra.value("epoch", std::size_t{0});
    load_adam(opt, st.adam, extra.value("adam_step", std::uint64_t{0}));
}

Normalizer fit_normalizer(const std::vector<std::vector<double>>& targets) {
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& t : targets) {
        for (double v : t) {
            s += v;
            s2 += v * v;
            ++n;
        }
    }
    Normalizer z;
    if (n == 0) return z;
    z.mean = s / static_cast<double>(n);
    const double var = s2 / static_cast<double>(n) - z.mean * z.mean;
    z.scale = var > 1e-12 ? std::sqrt(var) : 1.0;
    return z;
}

nlohmann::ordered_json forecaster_json(const IntensityForecaster& f) {
    return {{"weights", f.weights}, {"std_errors", f.std_errors}, {"sigma", f.sigma},
            {"ridge_fallback", f.ridge_fallback}};
}

IntensityForecaster load_forecaster(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("intensity forecaster not found: " + path.string());
    try {
        const auto j = nlohmann::json::parse(is);
        IntensityForecaster f;
        f.weights = j.at("weights").get<std::vector<double>>();
        f.std_errors = j.at("std_errors").get<std::vector<double>>();
        f.sigma = j.at("sigma");
        f.ridge_fallback = j.at("ridge_fallback");
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed forecaster file " + path.string() + ": " + e.what());
    }
}

Tensor clamp01(Tensor t) {
    for (auto& v : t.span()) v = std::clamp(v, 0.0f, 1.0f);
    return t;
}

/// Rows: context, truth, then one row per member; frames side by side.
Tensor frame_grid(const Tensor& context, const Tensor& truth, std::span<const Tensor> members) {
    const std::size_t h = truth.dim(1), w = truth.dim(2), c = truth.dim(3);
    const std::size_t cols = std::max(context.dim(0), truth.dim(0));
    const std::size_t rows = 2 + members.size();
    Tensor grid({rows * h, cols * w});
    const auto put = [&](std::size_t row, const Tensor& seq) {
        for (std::size_t f = 0; f < seq.dim(0); ++f) {
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) grid[(row * h + i) * cols * w + f * w + j] = seq[((f * h + i) * w + j) * c];
            }
        }
    };
    put(0, context);
    put(1, truth);
    for (std::size_t m = 0; m < members.size(); ++m) put(2 + m, members[m]);
    return grid;
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor load_sprite_pool(const PipelineConfig& cfg) {
    Tensor pool = cfg.idx_path.empty() ? synthetic_digit_sprites(cfg.sprite_pool, derive_seed(cfg.seed, 0))
                                       : read_idx(cfg.idx_path);
    if (pool.rank() != 3) throw FormatError("sprite pool must be [count, S, S], got " + shape_str(pool.shape()));
    return cfg.sprite_factor > 1 ? downsample_sprites(pool, cfg.sprite_factor) : pool;
}

DenoiserSpec denoiser_spec(const PipelineConfig& cfg) {
    const CodecSpec cs = cfg.codec_spec();
    DenoiserSpec s;
    s.l_in = cfg.l_in;
    s.l_out = cfg.l_out;
    s.height = cs.latent_height();
    s.width = cs.latent_width();
    s.channels = cs.latent_channels();
    s.base_width = cfg.base_width;
    s.time_dim = cfg.time_dim;
    return s;
}

AlignmentSpec alignment_spec(const PipelineConfig& cfg, std::size_t out_dim) {
    const CodecSpec cs = cfg.codec_spec();
    AlignmentSpec s;
    s.l_in = cfg.l_in;
    s.l_out = cfg.l_out;
    s.height = cs.latent_height();
    s.width = cs.latent_width();
    s.channels = cs.latent_channels();
    s.base_width = cfg.align_width;
    s.time_dim = cfg.time_dim;
    s.heads = cfg.align_heads;
    s.hidden = cfg.align_hidden;
    s.out_dim = out_dim;
    return s;
}

LatentCorpus encode_corpus(DatasetReader& reader, const FrameCodec& codec, std::size_t limit) {
    const std::size_t n = limit ? std::min(limit, reader.size()) : reader.size();
    const auto& man = reader.manifest();
    LatentCorpus c;
    for (std::size_t i = 0; i < n; ++i) {
        const SequenceSample s = reader.read(i);
        c.z0.push_back(codec.encode_seq(s.target));
        c.z_cond.push_back(codec.encode_seq(s.context));
        c.intensity_features.push_back(frame_intensities(s.context));
        c.intensity.push_back(mean_intensity(s.target));
        if (s.meta) {
            const Trajectory traj = from_record(*s.meta);
            c.energies.push_back(energy_sequence_from_trajectory(traj, man.l_in, man.l_out));
            c.reference.push_back(traj.energies[man.l_in - 1]);
        }
    }
    return c;
}

GenerateResult cmd_gen_nbody(const PipelineConfig& cfg, const fs::path& out) {
    prepare_run(cfg, out);
    RunLog log(out, "gen-nbody");
    const Tensor pool = load_sprite_pool(cfg);
    log(fmt::format("sprite pool {} ({})", shape_str(pool.shape()), cfg.idx_path.empty() ? "procedural" : cfg.idx_path));
    const std::size_t workers = resolve_workers(cfg.workers);
    GenerateResult r;
    GenerateOptions o{cfg.train_count, cfg.l_in, cfg.l_out, derive_seed(cfg.seed, 1), "train", workers};
    r.train = generate_dataset(cfg.sim, pool, o, out / "train.gnwd");
    log(fmt::format("train: {} sequences -> {}", r.train.count, (out / "train.gnwd").string()));
    o.count = cfg.test_count;
    o.seed = derive_seed(cfg.seed, 2);
    o.split = "test";
    r.test = generate_dataset(cfg.sim, pool, o, out / "test.gnwd");
    log(fmt::format("test: {} sequences -> {}", r.test.count, (out / "test.gnwd").string()));
    return r;
}

TrainResult cmd_train(const PipelineConfig& cfg, const fs::path& train_manifest, const fs::path& out, bool resume) {
    prepare_run(cfg, out);
    RunLog log(out, "train");
    DatasetReader reader = open_dataset(train_manifest, cfg, "training");
    const FrameCodec codec(cfg.codec_spec());
    const LatentCorpus corpus = encode_corpus(reader, codec);
    if (corpus.z0.empty()) throw ContractError("training dataset is empty");
    const NoiseSchedule sched = cfg.schedule_obj();

    const fs::path ckpt = out / "denoiser.ckpt", opt = out / "denoiser.opt";
    Denoiser<float> net(denoiser_spec(cfg));
    net.init(derive_seed(cfg.seed, 11));
    LoopState st;
    if (resume && fs::exists(fs::path(ckpt) += ".json")) {
        CheckpointInfo info;
        net = load_denoiser(ckpt, &info);
        if (net.spec().base_width != cfg.base_width) throw ContractError("resume: checkpoint width differs from config");
        restore_loop(info, opt, st);
        log(fmt::format("resuming at epoch {} step {}", st.epoch, st.step));
    }
    std::ofstream csv = open_loss_csv(out / "loss.csv", resume);
    log(fmt::format("denoiser: {} parameters, {} sequences, batch {}, T={}", net.num_params(), corpus.z0.size(),
                    cfg.batch, sched.steps()));

    const BatchLoss loss = [&](const std::vector<std::size_t>& idx, std::uint64_t step) {
        std::vector<Tensor> z0, zc;
        for (std::size_t i : idx) {
            z0.push_back(corpus.z0[i]);
            zc.push_back(corpus.z_cond[i]);
        }
        Rng rng(derive_seed(cfg.seed, 12, step));
        return net.loss_and_grads(make_latent_batch(z0, zc, sched, rng));
    };
    const auto checkpoint = [&] {
        save_denoiser(ckpt, net, {"denoiser", st.step, loop_extra(st)});
        save_adam(opt, st.adam);
    };
    TrainResult r;
    r.epoch_loss = run_epochs(net.params(), st, cfg.epochs, corpus.z0.size(), cfg.batch, derive_seed(cfg.seed, 13),
                              cfg.lr, cfg.lr_schedule == "cosine", cfg.grad_clip, cfg.weight_decay, csv, loss, checkpoint, log, "denoiser");
    if (!fs::exists(fs::path(ckpt) += ".json")) checkpoint();
    r.steps = st.step;
    r.checkpoint = ckpt;
    return r;
}

AlignTrainResult cmd_train_align(const PipelineConfig& cfg, const fs::path& train_manifest, const fs::path& out,
                                 bool resume) {
    prepare_run(cfg, out);
    RunLog log(out, "train-align");
    DatasetReader reader = open_dataset(train_manifest, cfg, "training");
    const FrameCodec codec(cfg.codec_spec());
    const LatentCorpus corpus = encode_corpus(reader, codec);
    const NoiseSchedule sched = cfg.schedule_obj();
    const bool energy = cfg.constraint == "energy";
    if (energy && corpus.energies.size() != corpus.z0.size()) {
        throw ContractError("energy alignment needs simulator meta in the training dataset");
    }
    std::vector<std::vector<double>> targets;
    if (energy) {
        targets = corpus.energies;
    } else {
        for (double v : corpus.intensity) targets.push_back({v});
    }
    const std::size_t n = targets.size();
    const std::size_t n_val = n >= 20 ? n / 10 : 0;
    const std::size_t n_train = n - n_val;
    if (n_train == 0) throw ContractError("training dataset is empty");
    const Normalizer norm = fit_normalizer({targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(n_train)});
    log(fmt::format("alignment: {} targets of dim {}, {} held out, normalizer mean {} scale {}", n_train,
                    targets[0].size(), n_val, num(norm.mean), num(norm.scale)));

    AlignTrainResult r;
    // how far the training targets themselves sit from F_0
    double viol = 0.0;
    IntensityForecaster forecaster;
    if (energy) {
        for (std::size_t i = 0; i < n; ++i) {
            viol += violation(targets[i], std::vector<double>(targets[i].size(), corpus.reference[i]));
        }
    } else {
        forecaster = fit_intensity_forecaster(
            std::span(corpus.intensity_features).subspan(0, n_train),
            std::span(corpus.intensity).subspan(0, n_train));
        for (std::size_t i = 0; i < n; ++i) viol += std::abs(corpus.intensity[i] - forecaster.mean(corpus.intensity_features[i]));
        std::ofstream fo(out / "forecaster.json", std::ios::trunc);
        fo << forecaster_json(forecaster).dump(1) << '\n';
        log(fmt::format("intensity forecaster: sigma {} ridge {}", num(forecaster.sigma), forecaster.ridge_fallback));
    }
    r.corpus_violation = viol / static_cast<double>(n);
    log(fmt::format("mean violation of training targets: {}", num(r.corpus_violation)));

    const bool square = cfg.sim.height == cfg.sim.width;
    // the first `clean` epochs regress on clean latents before t ~ U{0..T} starts
    const auto train_net = [&](const std::string& name, int fixed_t, std::size_t clean, std::size_t epochs,
                               std::uint64_t tag, std::vector<double>& epoch_loss) {
        const fs::path ckpt = out / (name + ".ckpt"), opt = out / (name + ".opt");
        AlignmentNet<float> net(alignment_spec(cfg, targets[0].size()));
        net.init(derive_seed(cfg.seed, tag));
        LoopState st;
        Normalizer nz = norm;
        if (resume && fs::exists(fs::path(ckpt) += ".json")) {
            CheckpointInfo info;
            net = load_alignment(ckpt, &nz, &info);
            restore_loop(info, opt, st);
            log(fmt::format("{}: resuming at epoch {} step {}", name, st.epoch, st.step));
        }
        std::ofstream csv = open_loss_csv(out / (name + "_loss.csv"), resume);
        const BatchLoss loss = [&](const std::vector<std::size_t>& idx, std::uint64_t step) {
            Rng rng(derive_seed(cfg.seed, tag + 1, step));
            std::vector<Tensor> z0, zc;
            std::vector<std::vector<double>> f;
            for (std::size_t i : idx) {
                const bool swap = rng.uniform() < cfg.align_shuffle;
                Tensor z = corpus.z0[i], c = corpus.z_cond[swap ? rng.below(n_train) : i];
                std::vector<double> fi = targets[i];
                if (cfg.align_augment) {
                    const unsigned sym = static_cast<unsigned>(rng.below(square ? 8 : 4));
                    const auto map = [&](const Tensor& zz) {
                        return codec.encode_seq(symmetry_transform(codec.decode_seq(zz), sym));
                    };
                    z = map(z);
                    c = map(c);
                    // reversal is only consistent with the energy sequence when the context is unrelated
                    if (energy && swap && rng.uniform() < 0.5) {
                        z = reverse_frames(z);
                        std::reverse(fi.begin(), fi.end());
                    }
                }
                z0.push_back(std::move(z));
                zc.push_back(std::move(c));
                f.push_back(std::move(fi));
            }
            return train_alignment_step(net, nz, z0, zc, f, sched, rng, st.epoch < clean ? 0 : fixed_t);
        };
        const auto checkpoint = [&] {
            save_alignment(ckpt, net, nz, {name, st.step, loop_extra(st, {{"constraint", cfg.constraint}})});
            save_adam(opt, st.adam);
        };
        epoch_loss = run_epochs(net.params(), st, clean + epochs, n_train, cfg.align_batch, derive_seed(cfg.seed, tag + 2),
                                cfg.align_lr, cfg.lr_schedule == "cosine", cfg.grad_clip, 0.0, csv, loss, checkpoint, log, name);
        if (!fs::exists(fs::path(ckpt) += ".json")) checkpoint();
        // held-out error with true contexts; t = 0 is the returned figure
        const auto heldout = [&](int t) {
            Rng rng(derive_seed(cfg.seed, tag + 3, static_cast<std::uint64_t>(t)));
            double mse = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = n_train; i < n; ++i) {
                const Tensor z = t == 0 ? corpus.z0[i]
                                        : q_sample(corpus.z0[i], t, standard_normal(corpus.z0[i].shape(), rng), sched);
                const auto u = net.evaluate(z, t, corpus.z_cond[i]);
                for (std::size_t j = 0; j < u.size(); ++j) {
                    const double d = u[j] - nz.to_net(targets[i][j]);
                    mse += d * d;
                    ++cnt;
                }
            }
            return cnt ? mse / static_cast<double>(cnt) : std::numeric_limits<double>::quiet_NaN();
        };
        if (fixed_t < 0) {
            for (int t : {sched.steps() / 10, sched.steps() / 4, sched.steps() / 2}) {
                if (t > 0) log(fmt::format("{} held-out MSE at t={}: {}", name, t, num(heldout(t))));
            }
        }
        return heldout(0);
    };

    r.align_val_mse = train_net("align", -1, cfg.align_clean_epochs, cfg.align_epochs, 21, r.align_epoch_loss);
    log(fmt::format("align held-out MSE (normalized, t=0): {}", num(r.align_val_mse)));
    if (energy) {
        r.detector_val_mse = train_net("detector", 0, 0, cfg.detector_epochs, 31, r.detector_epoch_loss);
        log(fmt::format("detector held-out MSE (normalized): {}", num(r.detector_val_mse)));
    }
    nlohmann::ordered_json summary = {{"constraint", cfg.constraint},
                                      {"train_samples", n_train},
                                      {"heldout_samples", n_val},
                                      {"corpus_violation", r.corpus_violation},
                                      {"align_heldout_mse", r.align_val_mse}};
    if (energy) summary["detector_heldout_mse"] = r.detector_val_mse;
    std::ofstream so(out / "align_summary.json", std::ios::trunc);
    so << summary.dump(1) << '\n';
    r.checkpoint = out / "align.ckpt";
    return r;
}

// ---------------------------------------------------------------------------

fs::path cmd_sample(const PipelineConfig& cfg, const SampleInputs& in, const fs::path& out) {
    prepare_run(cfg, out);
    RunLog log(out, "sample");
    if (!fs::exists(fs::path(in.denoiser) += ".json")) throw IoError("denoiser checkpoint not found: " + in.denoiser.string());
    const Denoiser<float> net = load_denoiser(in.denoiser);
    const DenoiserSpec want = denoiser_spec(cfg);
    if (net.spec().z_shape() != want.z_shape() || net.spec().cond_shape() != want.cond_shape()) {
        throw ContractError("denoiser checkpoint latent shapes " + shape_str(net.spec().z_shape()) +
                            " do not match the config " + shape_str(want.z_shape()));
    }
    DatasetReader reader = open_dataset(in.test_manifest, cfg, "test");
    const FrameCodec codec(cfg.codec_spec());
    const NoiseSchedule sched = cfg.schedule_obj();
    const bool guided = cfg.lambda > 0.0;
    const bool energy = cfg.constraint == "energy";

    std::optional<AlignmentNet<float>> align;
    Normalizer align_norm;
    std::unique_ptr<ConstraintEstimator> est;
    IntensityForecaster forecaster;
    if (guided) {
        if (in.align_dir.empty()) throw ContractError("guided sampling (lambda > 0) needs --align");
        if (!energy) forecaster = load_forecaster(in.align_dir / "forecaster.json");
        if (cfg.path == "alignment") {
            const fs::path p = in.align_dir / "align.ckpt";
            if (!fs::exists(fs::path(p) += ".json")) throw IoError("alignment checkpoint not found: " + p.string());
            align.emplace(load_alignment(p, &align_norm));
            est = std::make_unique<AlignmentEstimator>(*align, align_norm);
        } else {
            ConstraintSpec spec;
            spec.l_out = cfg.l_out;
            if (energy) {
                Normalizer dn;
                auto det = load_alignment(in.align_dir / "detector.ckpt", &dn);
                spec.kind = ConstraintKind::energy_sequence;
                spec.detector = std::make_shared<EnergyDetector>(std::move(det), dn, codec);
            } else {
                spec.kind = ConstraintKind::mean_intensity;
            }
            est = std::make_unique<OracleEstimator>(net, sched, &codec, spec);
        }
    }

    const std::size_t count = cfg.test_limit ? std::min(cfg.test_limit, reader.size()) : reader.size();
    std::vector<SequenceSample> tests;
    for (std::size_t i = 0; i < count; ++i) tests.push_back(reader.read(i));
    log(fmt::format("sampling {} test sequences x {} members, lambda {} n {} ({} guidance, {} path)", count,
                    cfg.ensemble, num(cfg.lambda), num(cfg.n_sigma), cfg.constraint, cfg.path));

    const std::size_t m = cfg.ensemble;
    const Shape z_shape = want.z_shape();
    std::vector<Tensor> frames(count), latents(count);
    std::vector<std::vector<Tensor>> members(count);
    const GuidanceConfig gcfg{cfg.lambda, cfg.clip};
    parallel_for(count, resolve_workers(cfg.workers), [&](std::size_t i) {
        const SequenceSample& s = tests[i];
        const Tensor zc = codec.encode_seq(s.context);
        std::vector<double> f0;
        GuidanceHook hook;
        if (guided) {
            if (energy) {
                if (!s.meta) throw ContractError("energy guidance needs simulator meta in the test dataset");
                f0 = energy_reference(from_record(*s.meta), cfg.l_in, cfg.l_out);
            } else {
                f0 = {anticipated_target(forecaster, s.context, cfg.n_sigma)};
            }
            hook = make_guidance_hook(*est, f0, gcfg);
        }
        std::vector<float> fbuf, zbuf;
        for (std::size_t k = 0; k < m; ++k) {
            Rng rng(derive_seed(cfg.seed, 41, i, k));
            const Tensor z = sample(zc, z_shape, net, sched, rng, guided ? &hook : nullptr);
            Tensor x = clamp01(codec.decode_seq(z));
            zbuf.insert(zbuf.end(), z.values().begin(), z.values().end());
            fbuf.insert(fbuf.end(), x.values().begin(), x.values().end());
            members[i].push_back(std::move(x));
        }
        Shape fs_shape = {m};
        for (std::size_t d : s.target.shape()) fs_shape.push_back(d);
        Shape zs_shape = {m};
        for (std::size_t d : z_shape) zs_shape.push_back(d);
        frames[i] = Tensor(fs_shape, std::move(fbuf));
        latents[i] = Tensor(zs_shape, std::move(zbuf));
    });

    const fs::path dir = out / "samples";
    fs::create_directories(dir);
    const fs::path forecast = dir / "forecast.gnwd";
    save_tensors(forecast, frames);
    save_tensors(dir / "latents.gnwd", latents);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    nlohmann::ordered_json j = {{"format", "gnwd-forecast"},
                                {"count", count},
                                {"ensemble", m},
                                {"lambda", cfg.lambda},
                                {"n", cfg.n_sigma},
                                {"constraint", cfg.constraint},
                                {"path", cfg.path},
                                {"test_manifest", in.test_manifest.string()},
                                {"indices", idx}};
    std::ofstream os(fs::path(forecast) += ".json", std::ios::trunc);
    os << j.dump(1) << '\n';
    for (std::size_t i = 0; i < count; ++i) {
        write_pgm(dir / fmt::format("sample_{:04d}.pgm", i), frame_grid(tests[i].context, tests[i].target, members[i]));
    }
    log(fmt::format("wrote {} forecasts to {}", count, forecast.string()));
    return forecast;
}

ForecastSet load_forecasts(const fs::path& forecast) {
    std::ifstream is(fs::path(forecast) += ".json");
    if (!is) throw IoError("forecast manifest not found: " + forecast.string() + ".json");
    ForecastSet f;
    try {
        const auto j = nlohmann::json::parse(is);
        if (j.at("format") != "gnwd-forecast") throw FormatError("not a forecast file: " + forecast.string());
        f.ensemble = j.at("ensemble");
        f.lambda = j.at("lambda");
        f.n_sigma = j.at("n");
        f.indices = j.at("indices").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed forecast manifest " + forecast.string() + ": " + e.what());
    }
    f.members = load_tensors(forecast);
    if (f.members.size() != f.indices.size()) throw FormatError("forecast file and manifest disagree on count");
    return f;
}

std::vector<MetricsAccumulator::Row> cmd_evaluate(const PipelineConfig& cfg, const fs::path& forecast,
                                                  const fs::path& test_manifest, const fs::path& detector,
                                                  const fs::path& out) {
    prepare_run(cfg, out);
    RunLog log(out, "evaluate");
    const ForecastSet fs_ = load_forecasts(forecast);
    DatasetReader reader = open_dataset(test_manifest, cfg, "test");
    const FrameCodec codec(cfg.codec_spec());
    std::optional<EnergyDetector> det;
    if (!detector.empty()) {
        Normalizer dn;
        det.emplace(load_alignment(detector, &dn), dn, codec);
    }
    MetricsAccumulator model(cfg.thresholds, cfg.pool_sizes), persistence(cfg.thresholds, cfg.pool_sizes);
    MetricsAccumulator target(cfg.thresholds, cfg.pool_sizes);  // energy error of the ground truth itself
    std::size_t with_energy = 0;
    for (std::size_t k = 0; k < fs_.indices.size(); ++k) {
        const std::size_t i = fs_.indices[k];
        if (i >= reader.size()) throw ContractError(fmt::format("forecast refers to test sample {} of {}", i, reader.size()));
        const SequenceSample s = reader.read(i);
        const Tensor& all = fs_.members[k];
        if (all.rank() != 5 || all.dim(0) != fs_.ensemble ||
            Shape(all.shape().begin() + 1, all.shape().end()) != s.target.shape()) {
            throw ContractError("forecast " + shape_str(all.shape()) + " does not match target " +
                                shape_str(s.target.shape()));
        }
        std::vector<Tensor> members;
        for (std::size_t m = 0; m < fs_.ensemble; ++m) members.push_back(slice_leading(all, m, m + 1).reshaped(s.target.shape()));
        model.add(members, s.target);
        // persistence: last context frame repeated
        const Tensor last = slice_leading(s.context, s.context.dim(0) - 1, s.context.dim(0));
        Tensor pers(s.target.shape());
        for (std::size_t f = 0; f < pers.dim(0); ++f) std::copy(last.values().begin(), last.values().end(), pers.data() + f * last.numel());
        const std::vector<Tensor> pv = {pers};
        persistence.add(pv, s.target);
        const std::vector<Tensor> tv = {s.target};
        target.add(tv, s.target);
        if (det && s.meta) {
            const double ref = from_record(*s.meta).energies[cfg.l_in - 1];
            std::vector<std::vector<double>> e;
            for (const auto& x : members) e.push_back(det->energies(x, s.context));
            model.add_energy(e, ref);
            const std::vector<std::vector<double>> pe = {det->energies(pers, s.context)};
            persistence.add_energy(pe, ref);
            const std::vector<std::vector<double>> te = {det->energies(s.target, s.context)};
            target.add_energy(te, ref);
            ++with_energy;
        }
    }
    const std::string name = fs_.lambda > 0.0 ? "guided" : "unguided";
    const std::vector<MetricsAccumulator::Row> rows = {model.finish(name), persistence.finish("persistence"),
                                                       target.finish("target")};
    write_metrics_csv(out / "metrics.csv", rows, cfg.thresholds, cfg.pool_sizes);

    std::ofstream sum(out / "summary.txt", std::ios::trunc);
    sum << "forecast: " << forecast.string() << "\n";
    sum << "samples: " << fs_.indices.size() << "  ensemble: " << fs_.ensemble << "  lambda: " << num(fs_.lambda)
        << "  n: " << num(fs_.n_sigma) << "  energy-scored: " << with_energy << "\n";
    for (const auto& r : rows) {
        sum << "\n[" << r.name << "]\n";
        sum << "mse = " << num(r.mse) << "\nmae = " << num(r.mae) << "\nssim = " << num(r.ssim) << "\ncrps = " << num(r.crps)
            << "\ncsi_m = " << num(r.csi_mean) << "\n";
        for (std::size_t p = 0; p < cfg.pool_sizes.size(); ++p) {
            sum << "csi_pool" << cfg.pool_sizes[p] << "_m = " << num(r.csi_pool_mean[p]) << "\n";
        }
        sum << "bias_m = " << (r.bias_mean ? num(*r.bias_mean) : "nan") << "\n";
        if (r.e_mse) sum << "e_mse = " << num(*r.e_mse) << "\ne_mae = " << num(*r.e_mae) << "\n";
        log(fmt::format("{}: mse {} ssim {} crps {} csi_m {}{}", r.name, num(r.mse), num(r.ssim), num(r.crps),
                        num(r.csi_mean), r.e_mae ? " e_mae " + num(*r.e_mae) : std::string()));
    }
    return rows;
}

bool cmd_oracle_check(const PipelineConfig& cfg, const fs::path& out) {
    prepare_run(cfg, out);
    RunLog log(out, "oracle-check");
    const NoiseSchedule sched = cfg.schedule_obj();
    const GaussianTask task;
    const std::size_t workers = resolve_workers(cfg.workers);
    const SamplerCheck s = run_sampler_check(task, sched, cfg.oracle_chains, derive_seed(cfg.seed, 51), workers);
    log(describe(s));
    const GuidanceCheck g =
        run_guidance_check(task, sched, cfg.oracle_chains, derive_seed(cfg.seed, 52), cfg.probe_lambda, workers);
    log(describe(g));
    std::ofstream os(out / "oracle_report.txt", std::ios::trunc);
    os << "chains = " << cfg.oracle_chains << "\nT = " << sched.steps() << "\n" << describe(s) << "\n" << describe(g) << "\n";
    os << "result = " << (s.pass && g.pass ? "pass" : "FAIL") << "\n";
    return s.pass && g.pass;
}

void write_pgm(const fs::path& path, const Tensor& image) {
    if (!(image.rank() == 2 || (image.rank() == 3 && image.dim(2) == 1))) {
        throw ContractError("PGM export expects [H, W] or [H, W, 1], got " + shape_str(image.shape()));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
    for (float v : image.values()) {
        const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        os.put(static_cast<char>(b));
    }
}

}  // namespace gnwd
