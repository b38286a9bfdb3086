#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eventness/metrics.hpp"
#include "eventness/pipeline.hpp"
#include "eventness/scene_synth.hpp"

namespace eventness::cli {

// Built-in two-class palette: a pure tone and a noise burst.
std::vector<synth::ToneClassSpec> default_tone_classes();

// Flat key=value run configuration shared by all subcommands. Every field has
// a working default; a config file only overrides. Unknown keys are rejected
// so typos cannot silently fall back to defaults.
struct RunConfig {
    // synthesis
    int sample_rate = 22050;
    std::size_t n_scenes = 10;
    double scene_duration = 10.0;
    double polyphonic_prob = 0.30;
    double event_gain_db_lo = 0.0;
    double event_gain_db_hi = 0.0;
    double background_gain_db_lo = -6.0;
    double background_gain_db_hi = -6.0;
    std::size_t clips_per_class = 5;
    std::size_t n_backgrounds = 3;
    double background_amplitude = 0.3;
    std::vector<synth::ToneClassSpec> classes = default_tone_classes();

    // analysis, model geometry, thresholds
    pipeline::ModelConfig model;

    // optimization
    pipeline::TrainConfig train;

    // evaluation
    metrics::EvalOptions eval;

    std::uint64_t seed = 0;
};

synth::SceneSpec scene_spec_of(const RunConfig& cfg);

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
// Lists are comma-separated. Classes use name:center_hz:bandwidth_hz[:dur_lo[:dur_hi]].
RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// All recognized keys with their defaults, one "key=value" per line.
std::string run_config_defaults();

}  // namespace eventness::cli
