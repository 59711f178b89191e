#include "tempsr/grid_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "tempsr/error.hpp"

namespace tempsr {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

constexpr std::uint16_t kVersion = 1;

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return value;
}

class ByteWriter {
public:
    explicit ByteWriter(std::ostream& out) : out_(out) {}

    template <typename T>
    void put(T value) {
        value = to_little(value);
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
        count_ += sizeof(T);
    }

    void put_bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        count_ += n;
    }

    void put_floats(const std::vector<float>& values) {
        if constexpr (std::endian::native == std::endian::little) {
            put_bytes(values.data(), values.size() * sizeof(float));
        } else {
            for (float v : values) put(v);
        }
    }

    std::size_t finish() {
        out_.flush();
        if (!out_) throw DataError("I/O failure while writing");
        return count_;
    }

private:
    std::ostream& out_;
    std::size_t count_ = 0;
};

class ByteReader {
public:
    explicit ByteReader(std::istream& in) : in_(in) {}

    template <typename T>
    T get() {
        T value;
        read_raw(&value, sizeof(T));
        return to_little(value);
    }

    void read_raw(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("truncated");
    }

    std::vector<float> get_floats(std::size_t n) {
        std::vector<float> values(n);
        read_raw(values.data(), n * sizeof(float));
        if constexpr (std::endian::native == std::endian::big) {
            for (float& v : values) v = to_little(v);
        }
        return values;
    }

    void expect_magic(const char (&magic)[5]) {
        char buf[4];
        read_raw(buf, 4);
        if (std::memcmp(buf, magic, 4) != 0) throw DataError("bad magic");
    }

    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after payload");
    }

private:
    std::istream& in_;
};

std::size_t checked_cells(std::uint64_t h, std::uint64_t w) {
    // Guard against absurd allocations from corrupted headers.
    constexpr std::uint64_t kMaxCells = std::uint64_t{1} << 30;
    if (h == 0 || w == 0) throw DataError("zero-sized grid");
    if (h * w > kMaxCells) throw DataError("grid too large");
    return static_cast<std::size_t>(h * w);
}

}  // namespace

const NamedTensor* CheckpointBundle::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void validate_map(const RainMap& map) {
    if (map.height == 0 || map.width == 0) throw DataError("zero-sized grid");
    if (map.values.size() != std::size_t(map.height) * map.width)
        throw DataError("values length does not match height x width");
    for (float v : map.values) {
        if (!std::isfinite(v)) throw DataError("non-finite value");
        if (v < 0.0f) throw DataError("negative value");
    }
}

void validate_event(const RainEvent& event) {
    if (event.frames.empty()) throw DataError("empty event");
    const RainMap& first = event.frames.front();
    for (std::size_t i = 0; i < event.frames.size(); ++i) {
        const RainMap& f = event.frames[i];
        validate_map(f);
        if (!f.same_shape(first)) throw DataError("inconsistent frame shapes");
        if (f.timestamp < 0) throw DataError("negative timestamp");
        if (i > 0 && f.timestamp - event.frames[i - 1].timestamp != kFrameSpacingSeconds)
            throw DataError("frames are not spaced 300 s apart");
    }
}

void validate_bundle(const CheckpointBundle& bundle) {
    std::set<std::string> names;
    for (const auto& t : bundle.tensors) {
        if (t.name.empty() || t.name.size() > std::numeric_limits<std::uint16_t>::max())
            throw DataError("invalid tensor name length");
        if (!names.insert(t.name).second) throw DataError("duplicate name: " + t.name);
        if (t.dims.size() > std::numeric_limits<std::uint8_t>::max()) throw DataError("rank too large");
        std::uint64_t n = 1;
        for (auto d : t.dims) n *= d;
        if (n != t.values.size()) throw DataError("shape/length mismatch for " + t.name);
    }
    for (const auto& [key, value] : bundle.metadata) {
        if (key.empty() || key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
            throw DataError("invalid metadata entry: " + key);
    }
}

std::size_t write_event(const RainEvent& event, std::ostream& sink) {
    validate_event(event);
    const RainMap& first = event.frames.front();
    ByteWriter w(sink);
    w.put_bytes("REVT", 4);
    w.put<std::uint16_t>(kVersion);
    w.put<std::uint16_t>(0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(event.frames.size()));
    w.put<std::uint32_t>(first.height);
    w.put<std::uint32_t>(first.width);
    w.put<std::uint32_t>(first.cell_size_m);
    for (std::size_t i = 0; i < event.frames.size(); ++i) {
        const RainMap& f = event.frames[i];
        w.put<std::uint64_t>(static_cast<std::uint64_t>(f.timestamp));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(i));
        w.put<std::uint32_t>(0);
        w.put_floats(f.values);
    }
    return w.finish();
}

RainEvent read_event(std::istream& source) {
    ByteReader r(source);
    r.expect_magic("REVT");
    if (r.get<std::uint16_t>() != kVersion) throw DataError("unsupported version");
    if (r.get<std::uint16_t>() != 0) throw DataError("reserved header field is non-zero");
    const auto frame_count = r.get<std::uint32_t>();
    const auto height = r.get<std::uint32_t>();
    const auto width = r.get<std::uint32_t>();
    const auto cell_size = r.get<std::uint32_t>();
    if (frame_count == 0) throw DataError("empty event");
    const std::size_t cells = checked_cells(height, width);

    RainEvent event;
    for (std::uint32_t i = 0; i < frame_count; ++i) {
        RainMap f;
        f.height = height;
        f.width = width;
        f.cell_size_m = cell_size;
        const auto ts = r.get<std::uint64_t>();
        if (ts > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            throw DataError("timestamp out of range");
        f.timestamp = static_cast<std::int64_t>(ts);
        if (r.get<std::uint32_t>() != i) throw DataError("frame index mismatch");
        if (r.get<std::uint32_t>() != 0) throw DataError("reserved frame field is non-zero");
        f.values = r.get_floats(cells);
        event.frames.push_back(std::move(f));
    }
    r.expect_end();
    validate_event(event);
    return event;
}

std::size_t write_checkpoint(const CheckpointBundle& bundle, std::ostream& sink) {
    validate_bundle(bundle);
    std::string meta;
    for (const auto& [key, value] : bundle.metadata) meta += key + "=" + value + "\n";

    ByteWriter w(sink);
    w.put_bytes("CKPT", 4);
    w.put<std::uint16_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bundle.tensors.size()));
    for (const auto& t : bundle.tensors) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.put_bytes(t.name.data(), t.name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) w.put<std::uint32_t>(d);
        w.put_floats(t.values);
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.put_bytes(meta.data(), meta.size());
    return w.finish();
}

CheckpointBundle read_checkpoint(std::istream& source) {
    ByteReader r(source);
    r.expect_magic("CKPT");
    if (r.get<std::uint16_t>() != kVersion) throw DataError("unsupported version");
    const auto count = r.get<std::uint32_t>();

    CheckpointBundle bundle;
    std::set<std::string> names;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto name_len = r.get<std::uint16_t>();
        if (name_len == 0) throw DataError("empty tensor name");
        t.name.resize(name_len);
        r.read_raw(t.name.data(), name_len);
        if (!names.insert(t.name).second) throw DataError("duplicate name: " + t.name);
        const auto rank = r.get<std::uint8_t>();
        std::uint64_t n = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            t.dims.push_back(r.get<std::uint32_t>());
            n *= t.dims.back();
            if (n > (std::uint64_t{1} << 32)) throw DataError("shape/length mismatch for " + t.name);
        }
        t.values = r.get_floats(static_cast<std::size_t>(n));
        bundle.tensors.push_back(std::move(t));
    }

    const auto meta_len = r.get<std::uint32_t>();
    if (meta_len > (1u << 24)) throw DataError("metadata block too large");
    std::string meta(meta_len, '\0');
    r.read_raw(meta.data(), meta_len);
    r.expect_end();
    if (!meta.empty() && meta.back() != '\n') throw DataError("malformed metadata block");
    std::istringstream lines(meta);
    std::string line;
    while (std::getline(lines, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) throw DataError("malformed metadata line");
        if (!bundle.metadata.emplace(line.substr(0, eq), line.substr(eq + 1)).second)
            throw DataError("duplicate metadata key");
    }
    return bundle;
}

std::size_t write_flow(const std::vector<float>& u, const std::vector<float>& v, std::uint32_t height,
                       std::uint32_t width, std::ostream& sink) {
    const std::size_t cells = checked_cells(height, width);
    if (u.size() != cells || v.size() != cells) throw DataError("flow plane size mismatch");
    ByteWriter w(sink);
    w.put_bytes("FLOW", 4);
    w.put<std::uint16_t>(kVersion);
    w.put<std::uint16_t>(0);
    w.put<std::uint32_t>(height);
    w.put<std::uint32_t>(width);
    w.put_floats(u);
    w.put_floats(v);
    return w.finish();
}

void read_flow(std::istream& source, std::vector<float>& u, std::vector<float>& v, std::uint32_t& height,
               std::uint32_t& width) {
    ByteReader r(source);
    r.expect_magic("FLOW");
    if (r.get<std::uint16_t>() != kVersion) throw DataError("unsupported version");
    if (r.get<std::uint16_t>() != 0) throw DataError("reserved header field is non-zero");
    height = r.get<std::uint32_t>();
    width = r.get<std::uint32_t>();
    const std::size_t cells = checked_cells(height, width);
    u = r.get_floats(cells);
    v = r.get_floats(cells);
    r.expect_end();
}

void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& sink) {
    for (const auto& e : entries) {
        if (e.event_id.find_first_of("\t\n") != std::string::npos ||
            e.relative_path.find_first_of("\t\n") != std::string::npos)
            throw DataError("manifest fields may not contain tabs or newlines");
        sink << e.event_id << '\t' << e.relative_path << '\t' << e.first_timestamp << '\n';
    }
    if (!sink) throw DataError("I/O failure while writing manifest");
}

std::vector<ManifestEntry> read_manifest(std::istream& source) {
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(source, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw DataError("malformed manifest line " + std::to_string(lineno));
        ManifestEntry e;
        e.event_id = line.substr(0, t1);
        e.relative_path = line.substr(t1 + 1, t2 - t1 - 1);
        try {
            std::size_t used = 0;
            const std::string ts = line.substr(t2 + 1);
            e.first_timestamp = std::stoll(ts, &used);
            if (used != ts.size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw DataError("bad timestamp on manifest line " + std::to_string(lineno));
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void save_event(const RainEvent& event, const std::filesystem::path& path) {
    validate_event(event);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    write_event(event, out);
}

RainEvent load_event(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    try {
        return read_event(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path) {
    validate_bundle(bundle);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    write_checkpoint(bundle, out);
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    try {
        return read_checkpoint(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<RainEvent> load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / kManifestName;
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
    std::vector<RainEvent> events;
    for (const auto& entry : read_manifest(in)) {
        RainEvent e = load_event(dir / entry.relative_path);
        if (e.frames.front().timestamp != entry.first_timestamp)
            throw DataError("manifest timestamp mismatch for " + entry.event_id);
        e.event_id = entry.event_id;
        events.push_back(std::move(e));
    }
    return events;
}

void save_dataset(const std::vector<RainEvent>& events, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "events", ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    std::vector<ManifestEntry> entries;
    for (const auto& e : events) {
        ManifestEntry m{e.event_id, "events/" + e.event_id + ".revt", e.frames.front().timestamp};
        save_event(e, dir / m.relative_path);
        entries.push_back(std::move(m));
    }
    std::ofstream out(dir / kManifestName, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    write_manifest(entries, out);
}

}  // namespace tempsr
