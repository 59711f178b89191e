#pragma once

// Preprocessing of rain grids into (t-5, t+5) -> t training triplets, and a
// seeded generator of synthetic storm events.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tempsr/grid_io.hpp"

namespace tempsr {

struct TripletSample {
    std::string event_id;
    std::size_t index = 0;  // position of `before` within the source event
    RainMap before;         // t - 5 min
    RainMap after;          // t + 5 min
    RainMap target;         // t
};

// Sample identity used to fix accumulation order during evaluation.
bool sample_id_less(const TripletSample& a, const TripletSample& b);

// Thresholds deciding whether a frame is "raining" and how runs of such
// frames are grouped into events. Defaults are placeholders; the source
// dataset's exact detection thresholds are not published alongside it.
struct EventCriteria {
    double min_coverage_fraction = 0.05;  // fraction of cells > 0
    double min_mean_rate = 0.3;           // mm/h over the whole grid
    std::size_t min_duration_frames = 6;
    std::size_t max_gap_frames = 1;

    void validate() const;
};

struct SynthConfig {
    std::uint32_t height = 64;
    std::uint32_t width = 64;
    std::uint32_t cell_size_m = 3000;
    std::size_t n_cells = 4;
    double velocity_x = 1.0;  // cells/frame, along columns
    double velocity_y = 0.0;  // cells/frame, along rows
    double cell_sigma = 4.0;  // cells
    double peak_rate = 20.0;  // mm/h
    double growth_rate = 0.0; // fractional amplitude change per frame
    double rain_floor = 0.1;  // rates below this are reported as dry (0)
    std::size_t frames = 12;
    std::int64_t start_timestamp = 1514764800;  // 2018-01-01T00:00Z
    std::uint64_t seed = 0;

    void validate() const;
};

// Extracts a window of the input grid starting at (row0, col0).
RainMap crop(const RainMap& map, std::uint32_t row0, std::uint32_t col0, std::uint32_t height, std::uint32_t width);

// Block-mean downscaling; cell_size_m is multiplied by factor.
RainMap downscale(const RainMap& map, std::uint32_t factor);

// True when a frame satisfies the coverage and mean-rate thresholds.
bool frame_qualifies(const RainMap& frame, const EventCriteria& criteria);

// Groups time-ordered frames into events. A run continues across at most
// max_gap_frames non-qualifying frames; the non-qualifying frames inside a
// run are kept so that events stay 300 s contiguous. Missing timestamps
// always split a run. Runs shorter than min_duration_frames are dropped.
std::vector<RainEvent> detect_events(const std::vector<RainMap>& frames, const EventCriteria& criteria);

// One sample per interior frame: before=frame[k], target=frame[k+1], after=frame[k+2].
std::vector<TripletSample> make_triplets(const RainEvent& event);
std::vector<TripletSample> make_triplets(const std::vector<RainEvent>& events);

// Events whose first frame is earlier than cutoff go to train, the rest to test.
std::pair<std::vector<RainEvent>, std::vector<RainEvent>> split_by_cutoff(const std::vector<RainEvent>& events,
                                                                          std::int64_t cutoff_timestamp);

// Deterministic in config.seed. Storm cells are Gaussians evaluated at cell
// centres, translated by the configured velocity each frame.
RainEvent synth_event(const SynthConfig& config);

}  // namespace tempsr
