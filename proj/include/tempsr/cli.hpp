#pragma once

// Command-line front end: synth | train | eval | interp.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tempsr/config.hpp"
#include "tempsr/grid_io.hpp"

namespace tempsr {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Synthetic dataset for the given configuration. The last
// round(events * synth.test_fraction) events start in 2019, the rest in 2018,
// one day apart, so the default split cutoff separates them.
std::vector<RainEvent> synth_dataset(const RunConfig& cfg, std::size_t events, std::uint64_t seed);

// Trailing ceil(fraction * n) events are held out (none when n < 2).
std::pair<std::vector<RainEvent>, std::vector<RainEvent>> hold_out_events(const std::vector<RainEvent>& events,
                                                                          double fraction);

// 8-bit binary PGM. Gray level = round(255 * clamp(rate, 0, kRenderMaxRate) / kRenderMaxRate).
inline constexpr double kRenderMaxRate = 50.0;  // mm/h mapped to white
void render_pgm(const RainMap& map, const std::filesystem::path& path);

}  // namespace tempsr
