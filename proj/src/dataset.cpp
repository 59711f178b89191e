#include "tempsr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "tempsr/error.hpp"

namespace tempsr {

bool sample_id_less(const TripletSample& a, const TripletSample& b) {
    return std::tie(a.event_id, a.index, a.target.timestamp) < std::tie(b.event_id, b.index, b.target.timestamp);
}

void EventCriteria::validate() const {
    if (!(min_coverage_fraction >= 0.0 && min_coverage_fraction <= 1.0))
        throw UsageError("min_coverage_fraction must lie in [0, 1]");
    if (!(min_mean_rate >= 0.0)) throw UsageError("min_mean_rate must be >= 0");
}

void SynthConfig::validate() const {
    if (height == 0 || width == 0) throw UsageError("synthetic grid must be non-empty");
    if (!(cell_sigma > 0.0)) throw UsageError("cell_sigma must be > 0");
    if (!(peak_rate >= 0.0)) throw UsageError("peak_rate must be >= 0");
    if (!(growth_rate > -1.0)) throw UsageError("growth_rate must be > -1");
    if (!(rain_floor >= 0.0)) throw UsageError("rain_floor must be >= 0");
    if (frames < 3) throw UsageError("frames must be >= 3");
    if (start_timestamp < 0) throw UsageError("start_timestamp must be >= 0");
}

RainMap crop(const RainMap& map, std::uint32_t row0, std::uint32_t col0, std::uint32_t height, std::uint32_t width) {
    if (height == 0 || width == 0 || std::uint64_t(row0) + height > map.height ||
        std::uint64_t(col0) + width > map.width)
        throw DataError("crop window outside the grid");
    RainMap out(height, width, map.cell_size_m, map.timestamp);
    for (std::uint32_t r = 0; r < height; ++r)
        std::copy_n(map.values.begin() + std::ptrdiff_t(row0 + r) * map.width + col0, width,
                    out.values.begin() + std::ptrdiff_t(r) * width);
    return out;
}

RainMap downscale(const RainMap& map, std::uint32_t factor) {
    if (factor == 0) throw DataError("downscale factor must be >= 1");
    if (map.height % factor != 0 || map.width % factor != 0)
        throw DataError("grid " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                        " is not divisible by factor " + std::to_string(factor));
    RainMap out(map.height / factor, map.width / factor, map.cell_size_m * factor, map.timestamp);
    const double inv = 1.0 / (double(factor) * factor);
    for (std::uint32_t r = 0; r < out.height; ++r) {
        for (std::uint32_t c = 0; c < out.width; ++c) {
            // A float block of at most 2^29 terms summed in double is exact
            // to well below float resolution.
            double sum = 0.0;
            for (std::uint32_t i = 0; i < factor; ++i) {
                const float* row = map.values.data() + std::size_t(r * factor + i) * map.width + c * factor;
                for (std::uint32_t j = 0; j < factor; ++j) sum += row[j];
            }
            out.at(r, c) = static_cast<float>(sum * inv);
        }
    }
    return out;
}

bool frame_qualifies(const RainMap& frame, const EventCriteria& criteria) {
    if (frame.values.empty()) return false;
    std::size_t wet = 0;
    double total = 0.0;
    for (float v : frame.values) {
        wet += v > 0.0f;
        total += v;
    }
    const double n = double(frame.values.size());
    return wet / n >= criteria.min_coverage_fraction && total / n >= criteria.min_mean_rate;
}

std::vector<RainEvent> detect_events(const std::vector<RainMap>& frames, const EventCriteria& criteria) {
    criteria.validate();
    std::vector<RainEvent> events;

    // Current run: [start, last_wet] indices into frames.
    std::ptrdiff_t start = -1;
    std::ptrdiff_t last_wet = -1;
    std::size_t dry_streak = 0;

    auto close_run = [&]() {
        if (start < 0) return;
        const std::size_t length = std::size_t(last_wet - start + 1);
        if (length >= criteria.min_duration_frames && length > 0) {
            RainEvent e;
            e.frames.assign(frames.begin() + start, frames.begin() + last_wet + 1);
            e.event_id = "evt_" + std::to_string(e.frames.front().timestamp);
            events.push_back(std::move(e));
        }
        start = last_wet = -1;
        dry_streak = 0;
    };

    for (std::size_t i = 0; i < frames.size(); ++i) {
        const bool contiguous = i > 0 && frames[i].timestamp - frames[i - 1].timestamp == kFrameSpacingSeconds &&
                                frames[i].same_shape(frames[i - 1]);
        if (start >= 0 && !contiguous) close_run();

        if (frame_qualifies(frames[i], criteria)) {
            if (start < 0) start = std::ptrdiff_t(i);
            last_wet = std::ptrdiff_t(i);
            dry_streak = 0;
        } else if (start >= 0) {
            if (++dry_streak > criteria.max_gap_frames) close_run();
        }
    }
    close_run();
    return events;
}

std::vector<TripletSample> make_triplets(const RainEvent& event) {
    std::vector<TripletSample> samples;
    if (event.frames.size() < 3) return samples;
    samples.reserve(event.frames.size() - 2);
    for (std::size_t k = 0; k + 2 < event.frames.size(); ++k) {
        samples.push_back(TripletSample{event.event_id, k, event.frames[k], event.frames[k + 2], event.frames[k + 1]});
    }
    return samples;
}

std::vector<TripletSample> make_triplets(const std::vector<RainEvent>& events) {
    std::vector<TripletSample> samples;
    for (const auto& e : events) {
        auto s = make_triplets(e);
        samples.insert(samples.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    return samples;
}

std::pair<std::vector<RainEvent>, std::vector<RainEvent>> split_by_cutoff(const std::vector<RainEvent>& events,
                                                                          std::int64_t cutoff_timestamp) {
    std::pair<std::vector<RainEvent>, std::vector<RainEvent>> out;
    for (const auto& e : events) {
        const bool early = !e.frames.empty() && e.frames.front().timestamp < cutoff_timestamp;
        (early ? out.first : out.second).push_back(e);
    }
    return out;
}

namespace {

struct StormCell {
    double x0, y0;  // centre at frame 0, in cell units (column, row)
    double amplitude;
    double sigma;
};

double unit_uniform(std::mt19937_64& rng) {
    return double(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

RainEvent synth_event(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);

    // Centres are drawn over the grid plus a margin so cells can drift in.
    const double margin = 2.0 * config.cell_sigma;
    std::vector<StormCell> cells(config.n_cells);
    for (auto& c : cells) {
        c.x0 = -margin + unit_uniform(rng) * (config.width + 2 * margin);
        c.y0 = -margin + unit_uniform(rng) * (config.height + 2 * margin);
        c.amplitude = config.peak_rate * (0.5 + 0.5 * unit_uniform(rng));
        c.sigma = config.cell_sigma * (0.75 + 0.5 * unit_uniform(rng));
    }

    RainEvent event;
    event.event_id = "synth_" + std::to_string(config.seed);
    event.frames.reserve(config.frames);
    for (std::size_t f = 0; f < config.frames; ++f) {
        RainMap map(config.height, config.width, config.cell_size_m,
                    config.start_timestamp + std::int64_t(f) * kFrameSpacingSeconds);
        const double growth = std::pow(1.0 + config.growth_rate, double(f));
        for (std::uint32_t r = 0; r < config.height; ++r) {
            for (std::uint32_t col = 0; col < config.width; ++col) {
                double rate = 0.0;
                for (const auto& c : cells) {
                    // Offsets are formed relative to the frame-0 centre so that a
                    // one-column shift reproduces the same arguments.
                    const double dx = (double(col) - config.velocity_x * double(f)) - c.x0;
                    const double dy = (double(r) - config.velocity_y * double(f)) - c.y0;
                    rate += c.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * c.sigma * c.sigma));
                }
                rate *= growth;
                map.at(r, col) = rate < config.rain_floor ? 0.0f : static_cast<float>(rate);
            }
        }
        event.frames.push_back(std::move(map));
    }
    return event;
}

}  // namespace tempsr
