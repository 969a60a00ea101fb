#include "gnwd/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace gnwd {

namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(trim(v));
    T out{};
    is >> out;
    if (is.fail() || !is.eof()) throw ContractError("config: bad value for " + key + ": '" + v + "'");
    if constexpr (std::is_unsigned_v<T>) {
        if (trim(v).starts_with("-")) throw ContractError("config: " + key + " must be non-negative");
    }
    return out;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!trim(item).empty()) out.push_back(parse_number<T>(key, item));
    }
    if (out.empty()) throw ContractError("config: " + key + " needs at least one value");
    return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt::format("{}", v[i]);
    return s;
}

template <class T>
Field num(const char* section, const char* key, T& ref) {
    return {section, key, [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); },
            [&ref] { return fmt::format("{}", ref); }};
}

Field str(const char* section, const char* key, std::string& ref) {
    return {section, key, [&ref](const std::string& v) { ref = trim(v); }, [&ref] { return ref; }};
}

std::vector<Field> fields(PipelineConfig& c) {
    std::vector<Field> f = {
        num("sim", "gravity", c.sim.gravity),
        num("sim", "power", c.sim.power),
        num("sim", "d_soft", c.sim.d_soft),
        num("sim", "dt", c.sim.dt),
        num("sim", "substeps", c.sim.substeps),
        num("sim", "n_bodies", c.sim.n_bodies),
        num("sim", "height", c.sim.height),
        num("sim", "width", c.sim.width),
        num("sim", "d_ref", c.sim.d_ref),
        num("sim", "wall_margin", c.sim.wall_margin),
        num("sim", "speed_min", c.sim.speed_min),
        num("sim", "speed_max", c.sim.speed_max),
        num("sim", "mass_min", c.sim.mass_min),
        num("sim", "mass_max", c.sim.mass_max),
        num("sim", "l_in", c.l_in),
        num("sim", "l_out", c.l_out),
        num("sim", "train_count", c.train_count),
        num("sim", "test_count", c.test_count),
        num("sim", "sprite_factor", c.sprite_factor),
        num("sim", "sprite_pool", c.sprite_pool),
        str("sim", "idx_path", c.idx_path),
        {"codec", "mode", [&c](const std::string& v) { c.codec_mode = parse_codec_mode(trim(v)); },
         [&c] { return to_string(c.codec_mode); }},
        num("codec", "patch", c.patch),
        num("codec", "kept", c.kept),
        num("diffusion", "steps", c.steps),
        {"diffusion", "schedule", [&c](const std::string& v) { c.schedule = parse_schedule_kind(trim(v)); },
         [&c] { return to_string(c.schedule); }},
        num("diffusion", "beta_min", c.beta_min),
        num("diffusion", "beta_max", c.beta_max),
        num("denoiser", "base_width", c.base_width),
        num("denoiser", "time_dim", c.time_dim),
        num("denoiser", "epochs", c.epochs),
        num("denoiser", "batch", c.batch),
        num("denoiser", "lr", c.lr),
        num("denoiser", "grad_clip", c.grad_clip),
        num("denoiser", "weight_decay", c.weight_decay),
        str("denoiser", "lr_schedule", c.lr_schedule),
        str("guidance", "kind", c.constraint),
        str("guidance", "path", c.path),
        num("guidance", "lambda", c.lambda),
        num("guidance", "n", c.n_sigma),
        num("guidance", "clip", c.clip),
        num("guidance", "probe_lambda", c.probe_lambda),
        num("guidance", "align_width", c.align_width),
        num("guidance", "align_hidden", c.align_hidden),
        num("guidance", "align_heads", c.align_heads),
        num("guidance", "align_epochs", c.align_epochs),
        num("guidance", "align_clean_epochs", c.align_clean_epochs),
        num("guidance", "align_batch", c.align_batch),
        num("guidance", "align_lr", c.align_lr),
        num("guidance", "detector_epochs", c.detector_epochs),
        num("guidance", "align_shuffle", c.align_shuffle),
        {"guidance", "align_augment",
         [&c](const std::string& v) {
             const std::string t = trim(v);
             if (t == "true" || t == "1") c.align_augment = true;
             else if (t == "false" || t == "0") c.align_augment = false;
             else throw ContractError("config: bad value for align_augment: '" + v + "'");
         },
         [&c] { return std::string(c.align_augment ? "true" : "false"); }},
        num("eval", "ensemble", c.ensemble),
        num("eval", "test_limit", c.test_limit),
        {"eval", "thresholds", [&c](const std::string& v) { c.thresholds = parse_list<double>("thresholds", v); },
         [&c] { return join(c.thresholds); }},
        {"eval", "pool_sizes",
         [&c](const std::string& v) { c.pool_sizes = parse_list<std::size_t>("pool_sizes", v); },
         [&c] { return join(c.pool_sizes); }},
        num("eval", "oracle_chains", c.oracle_chains),
        num("run", "seed", c.seed),
        str("run", "out", c.out),
        num("run", "workers", c.workers),
    };
    return f;
}

}  // namespace

SimConfig PipelineConfig::sim_config() const { return sim; }

CodecSpec PipelineConfig::codec_spec() const {
    CodecSpec s;
    s.mode = codec_mode;
    s.patch = patch;
    s.kept = kept;
    s.height = sim.height;
    s.width = sim.width;
    s.channels = 1;
    return s;
}

NoiseSchedule PipelineConfig::schedule_obj() const { return make_schedule(steps, schedule, beta_min, beta_max); }

void PipelineConfig::validate() const {
    sim.validate();
    codec_spec().validate();
    schedule_obj();
    if (l_in < 1 || l_out < 1) throw ContractError("l_in and l_out must be >= 1");
    if (sprite_factor < 1 || 28 % sprite_factor) throw ContractError("sprite_factor must divide 28");
    if (batch < 1 || align_batch < 1) throw ContractError("batch sizes must be >= 1");
    if (!(align_shuffle >= 0.0 && align_shuffle <= 1.0)) throw ContractError("align_shuffle must be in [0, 1]");
    if (ensemble < 1) throw ContractError("ensemble must be >= 1");
    if (lr_schedule != "constant" && lr_schedule != "cosine") {
        throw ContractError("lr_schedule must be constant or cosine, got '" + lr_schedule + "'");
    }
    if (!(lambda >= 0.0)) throw ContractError("lambda_F must be >= 0");
    if (constraint != "energy" && constraint != "mean_intensity") {
        throw ContractError("guidance kind must be energy or mean_intensity, got " + constraint);
    }
    if (path != "alignment" && path != "oracle") throw ContractError("guidance path must be alignment or oracle");
    for (std::size_t s : pool_sizes) {
        if (s == 0 || sim.height % s || sim.width % s) {
            throw ContractError(fmt::format("pool size {} does not divide the {}x{} frame", s, sim.height, sim.width));
        }
    }
}

PipelineConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ContractError(std::string("config: ") + e.what());
    }
    PipelineConfig cfg;
    auto binds = fields(cfg);
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ContractError("config: key outside a section: " + section);
        for (const auto& [key, value] : body) {
            auto it = std::find_if(binds.begin(), binds.end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
            if (it == binds.end()) throw ContractError("config: unknown key [" + section + "] " + key);
            it->set(value.data());
        }
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string dump_config(const PipelineConfig& cfg) {
    PipelineConfig copy = cfg;
    std::string out;
    std::string section;
    for (const auto& f : fields(copy)) {
        if (f.section != section) {
            out += (section.empty() ? "" : "\n") + ("[" + f.section + "]\n");
            section = f.section;
        }
        out += f.key + " = " + f.get() + "\n";
    }
    return out;
}

}  // namespace gnwd
