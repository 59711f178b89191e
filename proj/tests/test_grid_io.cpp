#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "tempsr/error.hpp"
#include "tempsr/grid_io.hpp"
#include "test_util.hpp"

using namespace tempsr;
using tempsr::testing::random_event;
using tempsr::testing::scratch_dir;

namespace {

std::string to_bytes(const RainEvent& e) {
    std::ostringstream os;
    write_event(e, os);
    return os.str();
}

RainEvent from_bytes(const std::string& s) {
    std::istringstream is(s);
    return read_event(is);
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(RevtFormat, SingleZeroFrameIs56Bytes) {
    RainEvent e{"a", {RainMap(2, 2, 3000, 1514764800)}};
    // 24-byte header + 16-byte frame header + 4 cells * 4 bytes.
    EXPECT_EQ(to_bytes(e).size(), 24u + 16u + 16u);
    std::ostringstream os;
    EXPECT_EQ(write_event(e, os), 56u);
}

TEST(RevtFormat, HeaderFieldsAreLittleEndian) {
    RainEvent e{"a", {RainMap(2, 3, 500, 1514764800), RainMap(2, 3, 500, 1514765100)}};
    const std::string b = to_bytes(e);
    ASSERT_GE(b.size(), 24u);
    EXPECT_EQ(b.substr(0, 4), "REVT");
    auto u32 = [&](std::size_t off) {
        return std::uint32_t(std::uint8_t(b[off])) | std::uint32_t(std::uint8_t(b[off + 1])) << 8 |
               std::uint32_t(std::uint8_t(b[off + 2])) << 16 | std::uint32_t(std::uint8_t(b[off + 3])) << 24;
    };
    EXPECT_EQ(std::uint8_t(b[4]), 1);  // version
    EXPECT_EQ(std::uint8_t(b[5]), 0);
    EXPECT_EQ(u32(8), 2u);    // frames
    EXPECT_EQ(u32(12), 2u);   // height
    EXPECT_EQ(u32(16), 3u);   // width
    EXPECT_EQ(u32(20), 500u); // cell size
    EXPECT_EQ(u32(24), 1514764800u);
    EXPECT_EQ(u32(28), 0u);  // timestamp high word
    EXPECT_EQ(u32(32), 0u);  // frame index
    EXPECT_EQ(u32(24 + 16 + 24 + 8), 1u);  // second frame index
}

TEST(RevtFormat, RejectsEmptyEvent) {
    RainEvent e{"a", {}};
    EXPECT_EQ(error_of([&] { to_bytes(e); }), "empty event");
}

TEST(RevtFormat, RejectsNonFiniteValue) {
    RainEvent e{"a", {RainMap(2, 2, 3000, 0)}};
    e.frames[0].values[3] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_EQ(error_of([&] { to_bytes(e); }), "non-finite value");
    e.frames[0].values[3] = std::numeric_limits<float>::infinity();
    EXPECT_EQ(error_of([&] { to_bytes(e); }), "non-finite value");
}

TEST(RevtFormat, RejectsNegativeRates) {
    RainEvent e{"a", {RainMap(2, 2, 3000, 0)}};
    e.frames[0].values[0] = -1.0f;
    EXPECT_THROW(to_bytes(e), DataError);
}

TEST(RevtFormat, RejectsBadSpacing) {
    RainEvent e{"a", {RainMap(2, 2, 3000, 0), RainMap(2, 2, 3000, 600)}};
    EXPECT_THROW(to_bytes(e), DataError);
}

TEST(RevtFormat, RejectsBadMagic) {
    std::string b = to_bytes(RainEvent{"a", {RainMap(2, 2, 3000, 0)}});
    b.replace(0, 4, "XXXX");
    EXPECT_EQ(error_of([&] { from_bytes(b); }), "bad magic");
}

TEST(RevtFormat, RejectsTruncationAtEveryLength) {
    std::mt19937_64 rng(5);
    const std::string b = to_bytes(random_event(rng, 3, 4, 5));
    for (std::size_t n = 0; n < b.size(); ++n) {
        const std::string msg = error_of([&] { from_bytes(b.substr(0, n)); });
        EXPECT_FALSE(msg.empty()) << "prefix of " << n << " bytes accepted";
        if (n >= 4) EXPECT_EQ(msg, "truncated") << n;
    }
}

TEST(RevtFormat, RejectsTrailingBytes) {
    std::string b = to_bytes(RainEvent{"a", {RainMap(2, 2, 3000, 0)}});
    b.push_back('\0');
    EXPECT_EQ(error_of([&] { from_bytes(b); }), "trailing bytes after payload");
}

TEST(RevtFormat, RejectsFrameIndexMismatch) {
    std::string b = to_bytes(RainEvent{"a", {RainMap(1, 1, 3000, 0), RainMap(1, 1, 3000, 300)}});
    b[24 + 16 + 4 + 8] = 7;  // second frame's index field
    EXPECT_EQ(error_of([&] { from_bytes(b); }), "frame index mismatch");
}

TEST(RevtFormat, RoundTripsRandomEvents) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        const auto frames = 1 + rng() % 4;
        RainEvent e = random_event(rng, frames, std::uint32_t(1 + rng() % 9), std::uint32_t(1 + rng() % 9));
        e.event_id.clear();  // ids live in the manifest, not the file
        const RainEvent back = from_bytes(to_bytes(e));
        ASSERT_EQ(back, e) << "instance " << i;
    }
}

TEST(RevtFormat, HeaderMutationsNeverSilentlyAccepted) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 200; ++i) {
        RainEvent e = random_event(rng, 2, 3, 3);
        e.event_id.clear();
        std::string b = to_bytes(e);
        const std::size_t pos = rng() % 24;
        const char old = b[pos];
        b[pos] = char(old ^ (1 + rng() % 255));
        // The only header field a flip may legitimately change is cell_size_m.
        try {
            const RainEvent back = from_bytes(b);
            ASSERT_GE(pos, 20u) << "mutation at byte " << pos << " accepted";
            ASSERT_NE(back.frames[0].cell_size_m, e.frames[0].cell_size_m);
        } catch (const DataError&) {
        }
    }
}

TEST(CkptFormat, StemTensorRoundTrips) {
    CheckpointBundle b;
    NamedTensor t{"stem.w", {24, 2, 3, 3}, std::vector<float>(432)};
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = float(i) * 0.5f - 7.0f;
    b.tensors.push_back(t);
    std::stringstream ss;
    write_checkpoint(b, ss);
    const CheckpointBundle back = read_checkpoint(ss);
    ASSERT_EQ(back.tensors.size(), 1u);
    EXPECT_EQ(back.tensors[0].values.size(), 432u);
    EXPECT_EQ(back, b);
}

TEST(CkptFormat, DuplicateNameRejected) {
    CheckpointBundle b;
    b.tensors.push_back({"a", {1}, {1.0f}});
    b.tensors.push_back({"a", {1}, {2.0f}});
    std::stringstream ss;
    EXPECT_EQ(error_of([&] { write_checkpoint(b, ss); }), "duplicate name: a");
}

TEST(CkptFormat, EmptyBundleRoundTrips) {
    CheckpointBundle b;
    std::stringstream ss;
    write_checkpoint(b, ss);
    EXPECT_EQ(read_checkpoint(ss), b);
}

TEST(CkptFormat, DuplicateNameRejectedOnRead) {
    CheckpointBundle one;
    one.tensors.push_back({"a", {1}, {1.0f}});
    std::stringstream ss;
    write_checkpoint(one, ss);
    std::string bytes = ss.str();
    // Splice the tensor record in twice and bump the count.
    const std::string rec = bytes.substr(10, bytes.size() - 10 - 4);
    bytes.insert(10, rec);
    bytes[6] = 2;
    std::istringstream is(bytes);
    EXPECT_EQ(error_of([&] { read_checkpoint(is); }), "duplicate name: a");
}

TEST(CkptFormat, RoundTripsRandomBundles) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<float> u(-5.0f, 5.0f);
    for (int i = 0; i < 1000; ++i) {
        CheckpointBundle b;
        const auto n = rng() % 5;
        for (std::size_t k = 0; k < n; ++k) {
            NamedTensor t;
            t.name = "t" + std::to_string(k) + ".w";
            const auto rank = rng() % 5;
            std::size_t count = 1;
            for (std::size_t r = 0; r < rank; ++r) {
                t.dims.push_back(std::uint32_t(1 + rng() % 4));
                count *= t.dims.back();
            }
            t.values.resize(count);
            for (float& v : t.values) v = u(rng);
            b.tensors.push_back(std::move(t));
        }
        if (rng() % 2) b.metadata["model.stages"] = "simple:4:1:1";
        if (rng() % 2) b.metadata["train.lr"] = std::to_string(u(rng));
        std::stringstream ss;
        write_checkpoint(b, ss);
        ASSERT_EQ(read_checkpoint(ss), b) << "instance " << i;
    }
}

TEST(CkptFormat, TrailingBytesAndTruncationRejected) {
    CheckpointBundle b;
    b.tensors.push_back({"x", {2, 2}, {1, 2, 3, 4}});
    b.metadata["k"] = "v";
    std::stringstream ss;
    write_checkpoint(b, ss);
    const std::string bytes = ss.str();
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        std::istringstream is(bytes.substr(0, n));
        EXPECT_THROW(read_checkpoint(is), DataError) << n;
    }
    std::istringstream extra(bytes + "z");
    EXPECT_EQ(error_of([&] { read_checkpoint(extra); }), "trailing bytes after payload");
}

TEST(FlowFormat, RoundTrips) {
    std::vector<float> u{1, 2, 3, 4, 5, 6}, v{-1, -2, -3, -4, -5, -6};
    std::stringstream ss;
    write_flow(u, v, 2, 3, ss);
    EXPECT_EQ(ss.str().substr(0, 4), "FLOW");
    std::vector<float> u2, v2;
    std::uint32_t h = 0, w = 0;
    read_flow(ss, u2, v2, h, w);
    EXPECT_EQ(h, 2u);
    EXPECT_EQ(w, 3u);
    EXPECT_EQ(u2, u);
    EXPECT_EQ(v2, v);
}

TEST(Manifest, RoundTripsAndRejectsMalformedLines) {
    std::vector<ManifestEntry> entries{{"evt_0000", "events/evt_0000.revt", 1514764800},
                                       {"evt_0001", "events/evt_0001.revt", 1514851200}};
    std::stringstream ss;
    write_manifest(entries, ss);
    EXPECT_EQ(ss.str(), "evt_0000\tevents/evt_0000.revt\t1514764800\nevt_0001\tevents/evt_0001.revt\t1514851200\n");
    EXPECT_EQ(read_manifest(ss), entries);

    std::istringstream bad("evt\tpath\n");
    EXPECT_THROW(read_manifest(bad), DataError);
    std::istringstream bad_ts("evt\tpath\t12x\n");
    EXPECT_THROW(read_manifest(bad_ts), DataError);
}

TEST(Dataset, SaveAndLoadDirectory) {
    std::mt19937_64 rng(3);
    std::vector<RainEvent> events;
    for (int i = 0; i < 3; ++i) {
        RainEvent e = random_event(rng, 3, 4, 4);
        e.event_id = "evt_" + std::to_string(i);
        events.push_back(e);
    }
    const auto dir = scratch_dir("grid_io_dataset");
    save_dataset(events, dir);
    EXPECT_TRUE(std::filesystem::exists(dir / kManifestName));
    EXPECT_EQ(load_dataset(dir), events);
}

TEST(Dataset, ManifestTimestampMustMatchEvent) {
    std::mt19937_64 rng(4);
    RainEvent e = random_event(rng, 2, 2, 2);
    e.event_id = "x";
    const auto dir = scratch_dir("grid_io_mismatch");
    save_dataset({e}, dir);
    std::ofstream(dir / kManifestName) << "x\tevents/x.revt\t5\n";
    EXPECT_THROW(load_dataset(dir), DataError);
}

TEST(Dataset, MissingFilesAreDataErrors) {
    EXPECT_THROW(load_event("/nonexistent/file.revt"), DataError);
    EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), DataError);
    EXPECT_THROW(load_dataset("/nonexistent"), DataError);
}
