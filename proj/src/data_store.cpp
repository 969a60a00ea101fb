#include "gnwd/data_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <numeric>

#include "json.hpp"

#include "gnwd/rng.hpp"

namespace gnwd {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put_le(std::ostream& os, T value) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    std::array<char, sizeof(T)> bytes;
    is.read(bytes.data(), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) throw LengthError("truncated tensor record");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

std::uint32_t get_be32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw LengthError("truncated IDX header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void put_be32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    os.write(b, 4);
}

void check_stream(const std::ostream& os, const std::filesystem::path& path) {
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------

void write_tensor(std::ostream& os, const Tensor& t) {
    if (t.rank() == 0) throw ContractError("cannot store a shapeless tensor");
    if (!t.all_finite()) throw ContractError("refusing to store non-finite tensor");
    os.write(kContainerMagic, 4);
    put_le<std::uint32_t>(os, kContainerVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(os, d);
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    } else {
        for (float v : t.values()) put_le<float>(os, v);
    }
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4) throw LengthError("truncated tensor record");
    if (std::memcmp(magic, kContainerMagic, 4) != 0) throw FormatError("bad container magic");
    const auto version = get_le<std::uint32_t>(is);
    if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));
    const auto ndims = get_le<std::uint32_t>(is);
    if (ndims == 0 || ndims > 16) throw FormatError("bad container rank " + std::to_string(ndims));
    Shape shape(ndims);
    for (auto& d : shape) {
        d = get_le<std::uint64_t>(is);
        if (d == 0) throw FormatError("zero dimension in container record");
    }
    std::vector<float> data(shape_numel(shape));
    const auto bytes = static_cast<std::streamsize>(data.size() * sizeof(float));
    is.read(reinterpret_cast<char*>(data.data()), bytes);
    if (is.gcount() != bytes) throw LengthError("truncated tensor payload");
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : data) {
            auto* p = reinterpret_cast<char*>(&v);
            std::reverse(p, p + sizeof(float));
        }
    }
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw FormatError("non-finite value in container record");
    return t;
}

void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    for (const auto& t : tensors) write_tensor(os, t);
    os.flush();
    check_stream(os, path);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    std::vector<Tensor> out;
    while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
    return out;
}

// ---------------------------------------------------------------------------

Tensor read_idx(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    std::uint32_t magic;
    try {
        magic = get_be32(is);
    } catch (const LengthError&) {
        throw FormatError("file too short for IDX magic: " + path.string());
    }
    // 0x00 0x00 <type=0x08 ubyte> <ndims>
    if ((magic & 0xFFFFFF00u) != 0x00000800u || (magic & 0xFFu) == 0) {
        throw FormatError("bad IDX magic in " + path.string());
    }
    const std::uint32_t ndims = magic & 0xFFu;
    Shape shape(ndims);
    for (auto& d : shape) {
        d = get_be32(is);
        if (d == 0) throw FormatError("zero dimension in IDX header");
    }
    const std::size_t n = shape_numel(shape);
    std::vector<unsigned char> bytes(n);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw LengthError("IDX payload truncated: expected " + std::to_string(n) + " bytes, got " +
                          std::to_string(is.gcount()));
    }
    std::vector<float> data(n);
    std::transform(bytes.begin(), bytes.end(), data.begin(),
                   [](unsigned char b) { return static_cast<float>(b / 255.0); });
    return Tensor(std::move(shape), std::move(data));
}

void write_idx(const std::filesystem::path& path, const Tensor& t) {
    if (t.rank() == 0 || t.rank() > 255) throw ContractError("bad IDX rank");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    put_be32(os, 0x00000800u | static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_be32(os, static_cast<std::uint32_t>(d));
    for (float v : t.values()) {
        const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
    check_stream(os, path);
}

// ---------------------------------------------------------------------------

std::filesystem::path manifest_path_for(const std::filesystem::path& data_path) {
    auto p = data_path;
    p += ".json";
    return p;
}

void save_manifest(const DatasetManifest& m) {
    nlohmann::ordered_json j;
    j["format"] = "gnwd-dataset";
    j["version"] = kContainerVersion;
    j["count"] = m.count;
    j["l_in"] = m.l_in;
    j["l_out"] = m.l_out;
    j["height"] = m.height;
    j["width"] = m.width;
    j["channels"] = m.channels;
    j["seed"] = m.seed;
    j["split"] = m.split;
    j["has_meta"] = m.has_meta;
    j["data_file"] = m.data_file;
    j["offsets"] = m.offsets;
    std::ofstream os(m.manifest_path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + m.manifest_path.string());
    os << j.dump(1) << '\n';
    check_stream(os, m.manifest_path);
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        if (j.at("format").get<std::string>() != "gnwd-dataset") throw FormatError("not a dataset manifest");
        m.count = j.at("count");
        m.l_in = j.at("l_in");
        m.l_out = j.at("l_out");
        m.height = j.at("height");
        m.width = j.at("width");
        m.channels = j.at("channels");
        m.seed = j.at("seed");
        m.split = j.at("split");
        m.has_meta = j.at("has_meta");
        m.data_file = j.at("data_file");
        m.offsets = j.at("offsets").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("incomplete manifest " + manifest_path.string() + ": " + e.what());
    }
    m.manifest_path = manifest_path;
    if (m.offsets.size() != m.count) throw FormatError("manifest offsets do not match count");
    for (std::size_t i = 1; i < m.offsets.size(); ++i) {
        if (m.offsets[i] <= m.offsets[i - 1]) throw FormatError("manifest offsets not strictly increasing");
    }
    return m;
}

DatasetWriter::DatasetWriter(const std::filesystem::path& data_path, std::uint64_t seed, std::string split)
    : path_(data_path), os_(data_path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw IoError("cannot open for writing: " + data_path.string());
    manifest_.seed = seed;
    manifest_.split = std::move(split);
    manifest_.data_file = data_path.filename().string();
    manifest_.manifest_path = manifest_path_for(data_path);
}

void DatasetWriter::add(const SequenceSample& s) {
    if (finished_) throw ContractError("dataset writer already finished");
    if (s.context.rank() != 4 || s.target.rank() != 4) throw ContractError("samples must be [L, H, W, C]");
    for (std::size_t k = 1; k < 4; ++k) {
        if (s.context.dim(k) != s.target.dim(k)) throw ContractError("context/target H, W, C differ");
    }
    auto& m = manifest_;
    if (first_) {
        m.l_in = s.context.dim(0);
        m.l_out = s.target.dim(0);
        m.height = s.context.dim(1);
        m.width = s.context.dim(2);
        m.channels = s.context.dim(3);
        m.has_meta = s.meta.has_value();
        first_ = false;
    } else if (s.context.dim(0) != m.l_in || s.target.dim(0) != m.l_out || s.context.dim(1) != m.height ||
               s.context.dim(2) != m.width || s.context.dim(3) != m.channels || s.meta.has_value() != m.has_meta) {
        throw ContractError("sample dims differ from the first sample in the dataset");
    }
    m.offsets.push_back(static_cast<std::uint64_t>(os_.tellp()));
    write_tensor(os_, s.context);
    write_tensor(os_, s.target);
    if (s.meta) {
        write_tensor(os_, s.meta->states);
        write_tensor(os_, s.meta->energies);
    }
    ++m.count;
    check_stream(os_, path_);
}

DatasetManifest DatasetWriter::finish() {
    if (!finished_) {
        os_.flush();
        check_stream(os_, path_);
        os_.close();
        save_manifest(manifest_);
        finished_ = true;
    }
    return manifest_;
}

DatasetManifest write_dataset(std::span<const SequenceSample> samples, const std::filesystem::path& data_path,
                              std::uint64_t seed, const std::string& split) {
    DatasetWriter w(data_path, seed, split);
    for (const auto& s : samples) w.add(s);
    return w.finish();
}

DatasetReader::DatasetReader(DatasetManifest manifest)
    : manifest_(std::move(manifest)), is_(manifest_.data_path(), std::ios::binary) {
    if (!is_) throw IoError("cannot open dataset: " + manifest_.data_path().string());
}

SequenceSample DatasetReader::read(std::size_t index) {
    if (index >= manifest_.count) throw ContractError("sample index out of range");
    is_.clear();
    is_.seekg(static_cast<std::streamoff>(manifest_.offsets[index]));
    SequenceSample s;
    s.context = read_tensor(is_);
    s.target = read_tensor(is_);
    if (manifest_.has_meta) s.meta = TrajectoryRecord{read_tensor(is_), read_tensor(is_)};
    return s;
}

std::vector<SequenceSample> DatasetReader::read_all() {
    std::vector<SequenceSample> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(read(i));
    return out;
}

// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), seed_(seed) {
    if (batch_size == 0) throw ContractError("batch_size must be >= 1");
    order_ = permutation(0);
}

std::vector<std::size_t> BatchIterator::permutation(std::uint64_t epoch) const {
    std::vector<std::size_t> idx(count_);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, epoch));
    for (std::size_t i = count_; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::optional<std::vector<std::size_t>> BatchIterator::next() {
    if (cursor_ >= count_) {
        ++epoch_;
        cursor_ = 0;
        order_ = permutation(epoch_);
        return std::nullopt;
    }
    const std::size_t end = std::min(count_, cursor_ + batch_size_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return batch;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch_batches(std::uint64_t epoch) const {
    const auto idx = permutation(epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < count_; b += batch_size_) {
        const std::size_t e = std::min(count_, b + batch_size_);
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b), idx.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return out;
}

}  // namespace gnwd
