#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnwd/tensor.hpp"

namespace gnwd {

inline constexpr char kContainerMagic[4] = {'G', 'N', 'W', 'D'};
inline constexpr std::uint32_t kContainerVersion = 1;

// ---------------------------------------------------------------------------
// Tensor container records
// ---------------------------------------------------------------------------

/// One record: "GNWD" | u32 version | u32 ndims | u64 dims[ndims] | f32 payload, all little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

/// A file holding a flat list of records.
void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// MNIST IDX
// ---------------------------------------------------------------------------

/// Reads an unsigned-byte IDX file (magic 0x00000801 or 0x00000803); bytes become value/255.
Tensor read_idx(const std::filesystem::path& path);

/// Writes values in [0, 1] as an unsigned-byte IDX file (rank 1 -> 0x801, rank 3 -> 0x803).
void write_idx(const std::filesystem::path& path, const Tensor& t);

// ---------------------------------------------------------------------------
// Sequence datasets
// ---------------------------------------------------------------------------

/// Simulator record kept beside a sample: states [L, N, 5] as (row, col, v_row, v_col, mass)
/// and total energies [L] for the full context+target window.
struct TrajectoryRecord {
    Tensor states;
    Tensor energies;
};

struct SequenceSample {
    Tensor context;  // [L_in, H, W, C]
    Tensor target;   // [L_out, H, W, C]
    std::optional<TrajectoryRecord> meta;
};

struct DatasetManifest {
    std::size_t count = 0;
    std::size_t l_in = 0;
    std::size_t l_out = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::uint64_t seed = 0;
    std::string split = "train";
    bool has_meta = false;
    std::string data_file;              // file name, relative to the manifest
    std::vector<std::uint64_t> offsets; // byte offset of each sample's first record
    std::filesystem::path manifest_path;

    std::filesystem::path data_path() const { return manifest_path.parent_path() / data_file; }
};

/// Path of the sidecar manifest that accompanies a dataset file.
std::filesystem::path manifest_path_for(const std::filesystem::path& data_path);

void save_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

/// Streams samples into a dataset file; finish() writes the sidecar manifest.
class DatasetWriter {
  public:
    DatasetWriter(const std::filesystem::path& data_path, std::uint64_t seed, std::string split);
    void add(const SequenceSample& sample);
    DatasetManifest finish();

  private:
    std::filesystem::path path_;
    std::ofstream os_;
    DatasetManifest manifest_;
    bool first_ = true;
    bool finished_ = false;
};

DatasetManifest write_dataset(std::span<const SequenceSample> samples, const std::filesystem::path& data_path,
                              std::uint64_t seed, const std::string& split = "train");

/// Random access over a manifest's data file.
class DatasetReader {
  public:
    explicit DatasetReader(DatasetManifest manifest);
    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return manifest_.count; }
    SequenceSample read(std::size_t index);
    std::vector<SequenceSample> read_all();

  private:
    DatasetManifest manifest_;
    std::ifstream is_;
};

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Seeded Fisher-Yates order over sample indices, cut into batches. Single consumer.
class BatchIterator {
  public:
    BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed);

    /// Next batch of the current epoch; an empty optional marks the end of the epoch,
    /// after which the following call starts the next epoch.
    std::optional<std::vector<std::size_t>> next();

    /// All batches of one epoch, independent of iterator position.
    std::vector<std::vector<std::size_t>> epoch_batches(std::uint64_t epoch) const;

    std::uint64_t epoch() const { return epoch_; }

  private:
    std::vector<std::size_t> permutation(std::uint64_t epoch) const;

    std::size_t count_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

}  // namespace gnwd
