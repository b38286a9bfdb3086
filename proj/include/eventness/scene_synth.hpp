#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "eventness/dsp_frontend.hpp"
#include "eventness/records.hpp"
#include "eventness/rng.hpp"
#include "eventness/wav.hpp"

namespace eventness::synth {

using dsp::Waveform;

struct EventClip {
    std::string class_label;
    Waveform waveform;

    double duration() const { return waveform.duration(); }
};

struct SceneSpec {
    double duration_T = 10.0;
    double polyphonic_prob = 0.30;
    double event_gain_db_lo = 0.0;
    double event_gain_db_hi = 0.0;
    double background_gain_db_lo = -6.0;
    double background_gain_db_hi = -6.0;
    std::uint64_t seed = 0;
    // band extents in annotations are pixels of this analysis grid; keep it in
    // sync with the settings used downstream for training
    dsp::SpectrogramParams analysis;
};

struct Annotation {
    std::string class_label;
    double onset = 0.0;   // seconds
    double offset = 0.0;  // seconds
    // 95% band-marginal extent of the isolated clip, in continuous mel-band
    // pixels; absent when the clip is too short for a spectrogram frame.
    bool has_band = false;
    double band_lo = 0.0;
    double band_hi = 0.0;
};

struct Placement {
    std::size_t event_index = 0;
    std::size_t start_sample = 0;
    double gain = 1.0;  // linear
};

// Everything needed to re-sum the pre-clamp mix bit for bit.
struct Provenance {
    std::size_t background_index = 0;
    std::size_t background_offset = 0;  // first background sample used
    double background_gain = 1.0;       // linear
    std::vector<Placement> placements;
    std::uint64_t seed = 0;
    std::size_t clamped_samples = 0;
};

struct SyntheticScene {
    Waveform waveform;  // clamped to [-1, 1]
    std::vector<Annotation> annotations;
    Provenance provenance;
};

// One scene from one seed. Draw order: background index, background offset,
// background gain, polyphony coin, then per event (index, start sample, gain).
// Gains are uniform in dB within the spec ranges. Backgrounds must be at
// least one scene long; events must fit inside the scene.
SyntheticScene synthesize_scene(const SceneSpec& spec, const std::vector<EventClip>& events,
                                const std::vector<Waveform>& backgrounds, std::uint64_t seed);

struct SceneDataset {
    std::vector<SyntheticScene> scenes;
    std::vector<std::string> scene_names;  // scene_00000.wav, ...
    std::vector<EventRecord> manifest;     // one record per annotation
};

// n_scenes scenes, each from derive_seed(seed, i), so any subset regenerates
// identically.
SceneDataset synthesize_dataset(std::size_t n_scenes, const SceneSpec& spec,
                                const std::vector<EventClip>& events,
                                const std::vector<Waveform>& backgrounds, std::uint64_t seed);

struct ToneClassSpec {
    std::string name;
    double center_hz = 440.0;
    double bandwidth_hz = 0.0;  // 0 means pure tone, else brickwall noise band
    double dur_lo = 0.5;        // seconds
    double dur_hi = 0.5;
};

// clips_per_class bursts per class: random-phase tones or band-limited noise
// built from random-phase cosines on the clip's DFT grid, raised-cosine
// ramped (min of 10 ms and a quarter of the clip) and peak-normalized to 0.9.
// Per clip the draws are duration, then phases in ascending bin order.
std::vector<EventClip> tone_burst_bank(const std::vector<ToneClassSpec>& classes,
                                       std::size_t clips_per_class, int sample_rate, Rng& rng);

// Uniform white noise in [-amplitude, amplitude], n waveforms long enough for
// one scene each.
std::vector<Waveform> noise_background_bank(std::size_t n, std::size_t n_samples, int sample_rate,
                                            double amplitude, Rng& rng);

}  // namespace eventness::synth
