#pragma once

// Binary containers for rain events (REVT), model checkpoints (CKPT) and
// flow fields (FLOW), plus the plain-text dataset manifest.
//
// All multi-byte integers are little-endian and grid values are IEEE-754
// float32. Layouts:
//
//   REVT  "REVT" | u16 version=1 | u16 reserved | u32 frame_count |
//         u32 height | u32 width | u32 cell_size_m
//         per frame: u64 timestamp | u32 frame_index | u32 reserved |
//                    height*width float32, row-major
//
//   CKPT  "CKPT" | u16 version=1 | u32 tensor_count
//         per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] |
//                     float32 payload
//         u32 metadata_len | metadata_len bytes of "key=value\n" lines
//
//   FLOW  "FLOW" | u16 version=1 | u16 reserved | u32 height | u32 width |
//         u plane float32 | v plane float32
//
// Readers reject trailing bytes so that a corrupted length field cannot go
// unnoticed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tempsr {

inline constexpr std::int64_t kFrameSpacingSeconds = 300;

// One grid of rain rates in mm/h, row-major.
struct RainMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t cell_size_m = 0;
    std::int64_t timestamp = 0;  // UTC epoch seconds
    std::vector<float> values;

    RainMap() = default;
    RainMap(std::uint32_t h, std::uint32_t w, std::uint32_t cell_size, std::int64_t ts, float fill = 0.0f)
        : height(h), width(w), cell_size_m(cell_size), timestamp(ts), values(std::size_t(h) * w, fill) {}

    std::size_t size() const { return values.size(); }
    float& at(std::size_t row, std::size_t col) { return values[row * width + col]; }
    float at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
    bool same_shape(const RainMap& other) const {
        return height == other.height && width == other.width && cell_size_m == other.cell_size_m;
    }

    friend bool operator==(const RainMap&, const RainMap&) = default;
};

struct RainEvent {
    std::string event_id;
    std::vector<RainMap> frames;

    friend bool operator==(const RainEvent&, const RainEvent&) = default;
};

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct CheckpointBundle {
    std::vector<NamedTensor> tensors;  // file order
    std::map<std::string, std::string> metadata;

    const NamedTensor* find(const std::string& name) const;

    friend bool operator==(const CheckpointBundle&, const CheckpointBundle&) = default;
};

struct ManifestEntry {
    std::string event_id;
    std::string relative_path;
    std::int64_t first_timestamp = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// Throws DataError("non-finite value" / "negative value" / shape errors).
void validate_map(const RainMap& map);
// Map invariants plus shared shape and 300 s spacing. Throws DataError("empty event") etc.
void validate_event(const RainEvent& event);
void validate_bundle(const CheckpointBundle& bundle);

std::size_t write_event(const RainEvent& event, std::ostream& sink);
RainEvent read_event(std::istream& source);

std::size_t write_checkpoint(const CheckpointBundle& bundle, std::ostream& sink);
CheckpointBundle read_checkpoint(std::istream& source);

std::size_t write_flow(const std::vector<float>& u, const std::vector<float>& v, std::uint32_t height,
                       std::uint32_t width, std::ostream& sink);
void read_flow(std::istream& source, std::vector<float>& u, std::vector<float>& v, std::uint32_t& height,
               std::uint32_t& width);

void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& sink);
std::vector<ManifestEntry> read_manifest(std::istream& source);

// File helpers. Errors opening or writing files surface as DataError.
void save_event(const RainEvent& event, const std::filesystem::path& path);
RainEvent load_event(const std::filesystem::path& path);
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

// Loads every event listed in <dir>/manifest.txt, in manifest order.
std::vector<RainEvent> load_dataset(const std::filesystem::path& dir);
// Writes events as <dir>/events/<event_id>.revt plus <dir>/manifest.txt.
void save_dataset(const std::vector<RainEvent>& events, const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.txt";

}  // namespace tempsr
