#pragma once

// Resolved key=value run configuration. Every key has a default; unknown keys
// are rejected. Sections: synth.*, model.*, train.*, flow.*, split.*, eval.*, run.*.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "tempsr/baselines.hpp"
#include "tempsr/dataset.hpp"
#include "tempsr/model.hpp"
#include "tempsr/training.hpp"

namespace tempsr {

class RunConfig {
public:
    RunConfig();

    // Accepts "key=value"; throws UsageError for unknown keys or bad syntax.
    void apply(const std::string& assignment);
    void set(const std::string& key, const std::string& value);
    // Reads key=value lines; blank lines and '#' comments are skipped.
    void load_file(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    std::uint64_t get_uint(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    void print(std::ostream& out) const;

    SynthConfig synth() const;  // seed left at 0; callers derive per-event seeds
    ModelConfig model() const;
    TrainConfig train() const;
    FarnebackParams flow() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace tempsr
