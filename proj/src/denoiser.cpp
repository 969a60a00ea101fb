#include "gnwd/denoiser.hpp"

#include <fstream>

#include "json.hpp"

#include "gnwd/data_store.hpp"

namespace gnwd {

void DenoiserSpec::validate() const {
    if (l_in < 1 || l_out < 1 || channels < 1) throw ContractError("denoiser: sequence dims must be >= 1");
    if (base_width < 1 || time_dim < 2) throw ContractError("denoiser: widths must be >= 1");
    if (height < 2 || width < 2 || height % 2 || width % 2) {
        throw ContractError("denoiser: latent grid must be even-sized for the 2x level");
    }
}

void save_param_tensors(const std::filesystem::path& path, const nn::ParamLayout& layout,
                        const std::vector<float>& params) {
    if (params.size() != layout.total()) throw ContractError("parameter vector does not match layout");
    std::vector<Tensor> tensors;
    for (const auto& e : layout.entries()) {
        std::vector<float> v(params.begin() + static_cast<std::ptrdiff_t>(e.offset),
                             params.begin() + static_cast<std::ptrdiff_t>(e.offset + e.size()));
        tensors.emplace_back(e.shape, std::move(v));
    }
    save_tensors(path, tensors);
}

std::vector<float> load_param_tensors(const std::filesystem::path& path, const nn::ParamLayout& layout) {
    const auto tensors = load_tensors(path);
    if (tensors.size() != layout.entries().size()) throw FormatError("checkpoint tensor count mismatch: " + path.string());
    std::vector<float> params(layout.total());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& e = layout.entries()[i];
        if (tensors[i].shape() != e.shape) {
            throw FormatError("checkpoint tensor " + e.name + " has shape " + shape_str(tensors[i].shape()) +
                              ", expected " + shape_str(e.shape));
        }
        std::copy(tensors[i].values().begin(), tensors[i].values().end(),
                  params.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }
    return params;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& p) {
    auto s = p;
    s += ".json";
    return s;
}

}  // namespace

void save_denoiser(const std::filesystem::path& path, const Denoiser<float>& net, const CheckpointInfo& info) {
    save_param_tensors(path, net.layout(), net.params());
    const auto& s = net.spec();
    nlohmann::ordered_json j;
    j["format"] = "gnwd-checkpoint";
    j["kind"] = info.kind.empty() ? "denoiser" : info.kind;
    j["step"] = info.step;
    j["spec"] = {{"l_in", s.l_in},         {"l_out", s.l_out},           {"height", s.height},
                 {"width", s.width},       {"channels", s.channels},     {"base_width", s.base_width},
                 {"time_dim", s.time_dim}};
    auto& names = j["params"] = nlohmann::ordered_json::array();
    for (const auto& e : net.layout().entries()) names.push_back({{"name", e.name}, {"shape", e.shape}});
    j["extra"] = info.extra.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(info.extra);
    std::ofstream os(sidecar(path), std::ios::trunc);
    if (!os) throw IoError("cannot write " + sidecar(path).string());
    os << j.dump(1) << '\n';
}

Denoiser<float> load_denoiser(const std::filesystem::path& path, CheckpointInfo* info) {
    std::ifstream is(sidecar(path));
    if (!is) throw IoError("missing checkpoint: " + sidecar(path).string());
    nlohmann::json j;
    DenoiserSpec s;
    try {
        j = nlohmann::json::parse(is);
        if (j.at("format") != "gnwd-checkpoint" || j.at("kind") != "denoiser") {
            throw FormatError("not a denoiser checkpoint: " + path.string());
        }
        const auto& js = j.at("spec");
        s.l_in = js.at("l_in");
        s.l_out = js.at("l_out");
        s.height = js.at("height");
        s.width = js.at("width");
        s.channels = js.at("channels");
        s.base_width = js.at("base_width");
        s.time_dim = js.at("time_dim");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    Denoiser<float> net(s);
    net.params() = load_param_tensors(path, net.layout());
    if (info) {
        info->kind = j.at("kind");
        info->step = j.at("step");
        info->extra = j.at("extra").dump();
    }
    return net;
}

}  // namespace gnwd
