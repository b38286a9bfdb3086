#include "eventness/scene_synth.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "eventness/dsp_frontend.hpp"
#include "eventness/errors.hpp"

namespace eventness::synth {

namespace {

double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }

int common_sample_rate(const std::vector<EventClip>& events,
                       const std::vector<Waveform>& backgrounds) {
    if (events.empty()) throw DataError("empty event bank");
    if (backgrounds.empty()) throw DataError("empty background bank");
    const int sr = events.front().waveform.sample_rate;
    for (const EventClip& e : events) {
        if (e.waveform.sample_rate != sr) throw DataError("sample-rate mismatch");
        if (e.waveform.samples.empty()) throw DataError("empty event clip");
    }
    for (const Waveform& b : backgrounds) {
        if (b.sample_rate != sr) throw DataError("sample-rate mismatch");
    }
    return sr;
}

// 95% band-marginal extent of the isolated clip, in continuous band pixels.
void attach_band_extent(Annotation& a, const Waveform& clip,
                        const dsp::SpectrogramParams& params) {
    if (clip.samples.size() < params.n_fft) return;  // too short to analyze
    const dsp::MelSpectrogram mel = dsp::log_mel(clip, params);
    const auto [lo, hi] = dsp::band_energy_extent(mel);
    a.band_lo = static_cast<double>(lo);
    a.band_hi = static_cast<double>(hi + 1);
    a.has_band = true;
}

}  // namespace

SyntheticScene synthesize_scene(const SceneSpec& spec, const std::vector<EventClip>& events,
                                const std::vector<Waveform>& backgrounds, std::uint64_t seed) {
    if (!(spec.duration_T > 0.0)) throw std::invalid_argument("duration_T must be positive");
    if (!(spec.polyphonic_prob >= 0.0 && spec.polyphonic_prob <= 1.0)) {
        throw std::invalid_argument("polyphonic_prob must be in [0, 1]");
    }
    const int sr = common_sample_rate(events, backgrounds);
    const std::size_t n_samples =
        static_cast<std::size_t>(std::llround(spec.duration_T * static_cast<double>(sr)));
    for (const EventClip& e : events) {
        if (e.waveform.samples.size() > n_samples) throw DataError("event longer than scene");
    }

    Rng rng(seed);
    SyntheticScene scene;
    scene.provenance.seed = seed;

    scene.provenance.background_index = rng.index(backgrounds.size());
    const Waveform& bg = backgrounds[scene.provenance.background_index];
    if (bg.samples.size() < n_samples) throw DataError("background shorter than scene");
    scene.provenance.background_offset = rng.index(bg.samples.size() - n_samples + 1);
    scene.provenance.background_gain =
        db_to_gain(rng.uniform(spec.background_gain_db_lo, spec.background_gain_db_hi));

    const std::size_t n_events = rng.bernoulli(spec.polyphonic_prob) ? 2 : 1;

    std::vector<double> mix(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        mix[i] = scene.provenance.background_gain *
                 bg.samples[scene.provenance.background_offset + i];
    }
    for (std::size_t e = 0; e < n_events; ++e) {
        Placement p;
        p.event_index = rng.index(events.size());
        const Waveform& clip = events[p.event_index].waveform;
        p.start_sample = rng.index(n_samples - clip.samples.size() + 1);
        p.gain = db_to_gain(rng.uniform(spec.event_gain_db_lo, spec.event_gain_db_hi));
        for (std::size_t i = 0; i < clip.samples.size(); ++i) {
            mix[p.start_sample + i] += p.gain * clip.samples[i];
        }

        Annotation a;
        a.class_label = events[p.event_index].class_label;
        a.onset = static_cast<double>(p.start_sample) / sr;
        a.offset = static_cast<double>(p.start_sample + clip.samples.size()) / sr;
        attach_band_extent(a, clip, spec.analysis);
        scene.annotations.push_back(std::move(a));
        scene.provenance.placements.push_back(p);
    }

    for (double& v : mix) {
        if (v > 1.0) {
            v = 1.0;
            ++scene.provenance.clamped_samples;
        } else if (v < -1.0) {
            v = -1.0;
            ++scene.provenance.clamped_samples;
        }
    }
    scene.waveform.samples = std::move(mix);
    scene.waveform.sample_rate = sr;
    return scene;
}

SceneDataset synthesize_dataset(std::size_t n_scenes, const SceneSpec& spec,
                                const std::vector<EventClip>& events,
                                const std::vector<Waveform>& backgrounds, std::uint64_t seed) {
    SceneDataset out;
    out.scenes.reserve(n_scenes);
    char name[32];
    for (std::size_t i = 0; i < n_scenes; ++i) {
        out.scenes.push_back(synthesize_scene(spec, events, backgrounds, derive_seed(seed, i)));
        std::snprintf(name, sizeof name, "scene_%05zu.wav", i);
        out.scene_names.emplace_back(name);
        for (const Annotation& a : out.scenes.back().annotations) {
            EventRecord r;
            r.file = out.scene_names.back();
            r.class_label = a.class_label;
            r.onset = a.onset;
            r.offset = a.offset;
            r.has_band = a.has_band;
            r.band_lo = a.band_lo;
            r.band_hi = a.band_hi;
            out.manifest.push_back(std::move(r));
        }
    }
    return out;
}

std::vector<EventClip> tone_burst_bank(const std::vector<ToneClassSpec>& classes,
                                       std::size_t clips_per_class, int sample_rate, Rng& rng) {
    const double nyquist = static_cast<double>(sample_rate) / 2.0;
    for (const ToneClassSpec& c : classes) {
        if (c.center_hz + c.bandwidth_hz / 2.0 >= nyquist) {
            throw DataError("frequency above Nyquist");
        }
        if (!(c.center_hz > 0.0) || c.bandwidth_hz < 0.0 || !(c.dur_lo > 0.0) ||
            !(c.dur_hi >= c.dur_lo)) {
            throw std::invalid_argument("bad tone class spec");
        }
    }

    std::vector<EventClip> bank;
    bank.reserve(classes.size() * clips_per_class);
    for (const ToneClassSpec& c : classes) {
        for (std::size_t k = 0; k < clips_per_class; ++k) {
            const double dur = rng.uniform(c.dur_lo, c.dur_hi);
            const std::size_t n = static_cast<std::size_t>(
                std::max(1.0, std::round(dur * static_cast<double>(sample_rate))));
            std::vector<double> s(n, 0.0);

            if (c.bandwidth_hz == 0.0) {
                const double phase = rng.uniform(0.0, 2.0 * M_PI);
                const double w = 2.0 * M_PI * c.center_hz / static_cast<double>(sample_rate);
                for (std::size_t i = 0; i < n; ++i) {
                    s[i] = std::sin(w * static_cast<double>(i) + phase);
                }
            } else {
                // random-phase cosines on the clip's DFT grid inside the band;
                // this is an ideal brickwall band of stationary noise
                const double bins_per_hz =
                    static_cast<double>(n) / static_cast<double>(sample_rate);
                const std::size_t k_max = n / 2 > 1 ? n / 2 - 1 : 1;
                std::size_t k_lo = static_cast<std::size_t>(
                    std::ceil(std::max(0.0, c.center_hz - c.bandwidth_hz / 2.0) * bins_per_hz));
                std::size_t k_hi = static_cast<std::size_t>(
                    std::floor((c.center_hz + c.bandwidth_hz / 2.0) * bins_per_hz));
                if (k_lo < 1) k_lo = 1;
                if (k_hi > k_max) k_hi = k_max;
                if (k_lo > k_hi) {  // band misses the grid: use the nearest bin
                    const double kc = c.center_hz * bins_per_hz;
                    k_lo = k_hi = std::min(
                        k_max, std::max<std::size_t>(1, static_cast<std::size_t>(
                                                            std::llround(std::max(1.0, kc)))));
                }
                for (std::size_t b = k_lo; b <= k_hi; ++b) {
                    const double phase = rng.uniform(0.0, 2.0 * M_PI);
                    const double w = 2.0 * M_PI * static_cast<double>(b) / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        s[i] += std::cos(w * static_cast<double>(i) + phase);
                    }
                }
            }

            const std::size_t ramp = std::min({static_cast<std::size_t>(sample_rate / 100),
                                               n / 4, n});
            for (std::size_t i = 0; i < ramp; ++i) {
                const double g =
                    0.5 - 0.5 * std::cos(M_PI * (static_cast<double>(i) + 0.5) /
                                         static_cast<double>(ramp));
                s[i] *= g;
                s[n - 1 - i] *= g;
            }

            double peak = 0.0;
            for (double v : s) peak = std::max(peak, std::abs(v));
            if (peak > 0.0) {
                const double scale = 0.9 / peak;
                for (double& v : s) v *= scale;
            }

            EventClip clip;
            clip.class_label = c.name;
            clip.waveform.samples = std::move(s);
            clip.waveform.sample_rate = sample_rate;
            bank.push_back(std::move(clip));
        }
    }
    return bank;
}

std::vector<Waveform> noise_background_bank(std::size_t n, std::size_t n_samples, int sample_rate,
                                            double amplitude, Rng& rng) {
    if (!(amplitude >= 0.0)) throw std::invalid_argument("amplitude must be non-negative");
    std::vector<Waveform> out(n);
    for (Waveform& w : out) {
        w.sample_rate = sample_rate;
        w.samples.resize(n_samples);
        for (double& v : w.samples) v = rng.uniform(-amplitude, amplitude);
    }
    return out;
}

}  // namespace eventness::synth
