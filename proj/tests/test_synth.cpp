#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "eventness/dsp_frontend.hpp"
#include "eventness/errors.hpp"
#include "eventness/records.hpp"
#include "eventness/scene_synth.hpp"

using namespace eventness;
using dsp::Waveform;

namespace {

// short clips avoid the per-placement band-extent spectrogram, keeping the
// 1000-scene statistics cheap
std::vector<synth::EventClip> tiny_bank(int sr, std::uint64_t seed) {
    Rng rng(seed);
    return synth::tone_burst_bank({{"beep", 440.0, 0.0, 0.05, 0.05},
                                   {"hiss", 1500.0, 600.0, 0.04, 0.06}},
                                  3, sr, rng);
}

std::vector<Waveform> flat_backgrounds(std::size_t n, std::size_t len, int sr,
                                       std::uint64_t seed) {
    Rng rng(seed);
    return synth::noise_background_bank(n, len, sr, 0.1, rng);
}

}  // namespace

TEST_CASE("degenerate polyphony probabilities pin the annotation count") {
    const int sr = 8000;
    synth::SceneSpec spec;
    spec.duration_T = 2.0;
    const auto events = tiny_bank(sr, 1);
    const auto bgs = flat_backgrounds(2, 16000, sr, 2);

    spec.polyphonic_prob = 0.0;
    for (std::size_t i = 0; i < 200; ++i) {
        CHECK(synth::synthesize_scene(spec, events, bgs, derive_seed(7, i)).annotations.size() ==
              1);
    }
    spec.polyphonic_prob = 1.0;
    for (std::size_t i = 0; i < 1000; ++i) {
        CHECK(synth::synthesize_scene(spec, events, bgs, derive_seed(8, i)).annotations.size() ==
              2);
    }
}

TEST_CASE("polyphonic fraction concentrates near 0.30") {
    const int sr = 8000;
    synth::SceneSpec spec;
    spec.duration_T = 2.0;
    const auto events = tiny_bank(sr, 1);
    const auto bgs = flat_backgrounds(2, 16000, sr, 2);

    std::size_t polyphonic = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        const auto scene = synth::synthesize_scene(spec, events, bgs, derive_seed(11, i));
        if (scene.annotations.size() == 2) ++polyphonic;
    }
    const double fraction = static_cast<double>(polyphonic) / 1000.0;
    CHECK(fraction >= 0.25);
    CHECK(fraction <= 0.35);
}

TEST_CASE("scene synthesis is bit-deterministic in seed, banks, spec") {
    const int sr = 8000;
    synth::SceneSpec spec;
    spec.duration_T = 1.5;
    spec.event_gain_db_lo = -3.0;
    spec.event_gain_db_hi = 3.0;
    const auto events = tiny_bank(sr, 5);
    const auto bgs = flat_backgrounds(3, 14000, sr, 6);

    const auto a = synth::synthesize_scene(spec, events, bgs, 0xfeed);
    const auto b = synth::synthesize_scene(spec, events, bgs, 0xfeed);
    REQUIRE(a.waveform.samples.size() == b.waveform.samples.size());
    for (std::size_t i = 0; i < a.waveform.samples.size(); ++i) {
        CHECK(a.waveform.samples[i] == b.waveform.samples[i]);
    }
    REQUIRE(a.annotations.size() == b.annotations.size());
    for (std::size_t i = 0; i < a.annotations.size(); ++i) {
        CHECK(a.annotations[i].class_label == b.annotations[i].class_label);
        CHECK(a.annotations[i].onset == b.annotations[i].onset);
        CHECK(a.annotations[i].offset == b.annotations[i].offset);
    }
    const auto c = synth::synthesize_scene(spec, events, bgs, 0xfeee);
    bool differs = false;
    for (std::size_t i = 0; i < c.waveform.samples.size() && !differs; ++i) {
        differs = c.waveform.samples[i] != a.waveform.samples[i];
    }
    CHECK(differs);
}

TEST_CASE("annotations stay inside the scene and record exact placements") {
    const int sr = 8000;
    synth::SceneSpec spec;
    spec.duration_T = 2.0;
    spec.polyphonic_prob = 0.5;
    const auto events = tiny_bank(sr, 1);
    const auto bgs = flat_backgrounds(2, 16000, sr, 2);

    for (std::size_t i = 0; i < 100; ++i) {
        const auto scene = synth::synthesize_scene(spec, events, bgs, derive_seed(21, i));
        const double dur =
            static_cast<double>(scene.waveform.samples.size()) / static_cast<double>(sr);
        REQUIRE(scene.annotations.size() == scene.provenance.placements.size());
        for (std::size_t k = 0; k < scene.annotations.size(); ++k) {
            const auto& a = scene.annotations[k];
            const auto& p = scene.provenance.placements[k];
            CHECK(a.onset >= 0.0);
            CHECK(a.onset < a.offset);
            CHECK(a.offset <= dur);
            CHECK(a.onset == static_cast<double>(p.start_sample) / sr);
            CHECK(a.class_label == events[p.event_index].class_label);
        }
    }
}

TEST_CASE("provenance re-sums the mix and accounts for every clamped sample") {
    const int sr = 8000;
    synth::SceneSpec spec;
    spec.duration_T = 0.5;
    spec.polyphonic_prob = 1.0;
    spec.event_gain_db_lo = 14.0;  // hot mix, forces clamping
    spec.event_gain_db_hi = 14.0;
    spec.background_gain_db_lo = 0.0;
    spec.background_gain_db_hi = 0.0;
    Rng bank_rng(3);
    const auto events =
        synth::tone_burst_bank({{"beep", 500.0, 0.0, 0.3, 0.3}}, 2, sr, bank_rng);
    const auto bgs = flat_backgrounds(1, 4000, sr, 4);

    const auto scene = synth::synthesize_scene(spec, events, bgs, 99);
    const auto& pv = scene.provenance;
    CHECK(pv.seed == 99);
    CHECK(pv.clamped_samples > 0);

    std::vector<double> resum(scene.waveform.samples.size());
    const Waveform& bg = bgs[pv.background_index];
    for (std::size_t i = 0; i < resum.size(); ++i) {
        resum[i] = pv.background_gain * bg.samples[pv.background_offset + i];
    }
    for (const auto& p : pv.placements) {
        const auto& clip = events[p.event_index].waveform.samples;
        for (std::size_t i = 0; i < clip.size(); ++i) resum[p.start_sample + i] += p.gain * clip[i];
    }
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < resum.size(); ++i) {
        const double clipped = resum[i] > 1.0 ? 1.0 : (resum[i] < -1.0 ? -1.0 : resum[i]);
        if (clipped != resum[i]) ++clamped;
        CHECK(std::abs(clipped - scene.waveform.samples[i]) <= 1e-12);
    }
    CHECK(clamped == pv.clamped_samples);
}

TEST_CASE("synthesis input errors") {
    const int sr = 8000;
    synth::SceneSpec spec;
    spec.duration_T = 0.1;  // shorter than the 0.3 s clips
    Rng bank_rng(3);
    const auto events =
        synth::tone_burst_bank({{"beep", 500.0, 0.0, 0.3, 0.3}}, 1, sr, bank_rng);
    const auto bgs = flat_backgrounds(1, 4000, sr, 4);
    CHECK_THROWS_WITH_AS(synth::synthesize_scene(spec, events, bgs, 1), "event longer than scene",
                         DataError);

    spec.duration_T = 2.0;  // longer than the 0.5 s backgrounds
    const auto short_bgs = flat_backgrounds(1, 4000, sr, 4);
    CHECK_THROWS_WITH_AS(synth::synthesize_scene(spec, events, short_bgs, 1),
                         "background shorter than scene", DataError);

    spec.duration_T = 0.4;
    auto mismatched = flat_backgrounds(1, 4000, 16000, 4);
    CHECK_THROWS_WITH_AS(synth::synthesize_scene(spec, events, mismatched, 1),
                         "sample-rate mismatch", DataError);
    CHECK_THROWS_AS(synth::synthesize_scene(spec, {}, bgs, 1), DataError);
    CHECK_THROWS_AS(synth::synthesize_scene(spec, events, {}, 1), DataError);
}

TEST_CASE("dataset manifest mirrors the scenes and is seed-deterministic") {
    const int sr = 8000;
    synth::SceneSpec spec;
    spec.duration_T = 1.0;
    spec.polyphonic_prob = 0.5;
    const auto events = tiny_bank(sr, 1);
    const auto bgs = flat_backgrounds(2, 9000, sr, 2);

    const auto one = synth::synthesize_dataset(1, spec, events, bgs, 31);
    REQUIRE(one.scenes.size() == 1);
    REQUIRE(one.scene_names.size() == 1);
    CHECK(one.scene_names[0] == "scene_00000.wav");
    REQUIRE(one.manifest.size() == one.scenes[0].annotations.size());
    for (std::size_t k = 0; k < one.manifest.size(); ++k) {
        CHECK(one.manifest[k].file == "scene_00000.wav");
        CHECK(one.manifest[k].class_label == one.scenes[0].annotations[k].class_label);
        CHECK(one.manifest[k].onset == one.scenes[0].annotations[k].onset);
        CHECK(one.manifest[k].offset == one.scenes[0].annotations[k].offset);
    }

    const auto d1 = synth::synthesize_dataset(40, spec, events, bgs, 32);
    const auto d2 = synth::synthesize_dataset(40, spec, events, bgs, 32);
    REQUIRE(d1.manifest.size() == d2.manifest.size());
    for (std::size_t k = 0; k < d1.manifest.size(); ++k) {
        CHECK(d1.manifest[k].file == d2.manifest[k].file);
        CHECK(d1.manifest[k].class_label == d2.manifest[k].class_label);
        CHECK(d1.manifest[k].onset == d2.manifest[k].onset);
        CHECK(d1.manifest[k].offset == d2.manifest[k].offset);
    }

    // dataset scenes reproduce standalone synthesis at the derived seed
    const auto solo = synth::synthesize_scene(spec, events, bgs, derive_seed(32, 7));
    for (std::size_t i = 0; i < solo.waveform.samples.size(); ++i) {
        CHECK(solo.waveform.samples[i] == d1.scenes[7].waveform.samples[i]);
    }
}

TEST_CASE("long clips carry a 95% band extent into the manifest") {
    const int sr = 22050;
    synth::SceneSpec spec;
    spec.duration_T = 1.0;
    spec.polyphonic_prob = 0.0;
    Rng bank_rng(9);
    const auto events =
        synth::tone_burst_bank({{"beep", 3000.0, 0.0, 0.3, 0.3}}, 1, sr, bank_rng);
    const auto bgs = flat_backgrounds(1, 23000, sr, 10);

    const auto scene = synth::synthesize_scene(spec, events, bgs, 77);
    REQUIRE(scene.annotations.size() == 1);
    const auto& a = scene.annotations[0];
    REQUIRE(a.has_band);
    CHECK(a.band_lo < a.band_hi);
    CHECK(a.band_hi <= 128.0);

    // a pure tone concentrates its marginal energy in a few bands
    CHECK(a.band_hi - a.band_lo <= 8.0);

    // the extent brackets the band holding 3 kHz
    const dsp::SpectrogramParams params;
    const auto edges = dsp::mel_edge_frequencies(params, sr);
    CHECK(edges[static_cast<std::size_t>(a.band_lo)] <= 3000.0);
    CHECK(edges[static_cast<std::size_t>(a.band_hi) + 1] >= 3000.0);
}

TEST_CASE("tone burst bank contents") {
    const int sr = 22050;

    SUBCASE("degenerate duration range pins the length") {
        Rng rng(1);
        const auto bank = synth::tone_burst_bank({{"a", 440.0, 0.0, 0.5, 0.5}}, 4, sr, rng);
        REQUIRE(bank.size() == 4);
        for (const auto& clip : bank) {
            CHECK(clip.waveform.samples.size() == 11025);
            CHECK(clip.duration() == doctest::Approx(0.5));
        }
    }

    SUBCASE("labels are exactly the class names") {
        Rng rng(2);
        const auto bank =
            synth::tone_burst_bank({{"a", 440.0, 0.0, 0.1, 0.1}, {"b", 2000.0, 500.0, 0.1, 0.2}},
                                   3, sr, rng);
        REQUIRE(bank.size() == 6);
        for (std::size_t i = 0; i < 3; ++i) CHECK(bank[i].class_label == "a");
        for (std::size_t i = 3; i < 6; ++i) CHECK(bank[i].class_label == "b");
    }

    SUBCASE("peak normalization to 0.9") {
        Rng rng(3);
        const auto bank = synth::tone_burst_bank({{"a", 440.0, 0.0, 0.3, 0.3}}, 1, sr, rng);
        double peak = 0.0;
        for (double v : bank[0].waveform.samples) peak = std::max(peak, std::abs(v));
        CHECK(peak == doctest::Approx(0.9).epsilon(1e-12));
    }

    SUBCASE("440 Hz tone lands in the mel band containing 440 Hz") {
        Rng rng(4);
        const auto bank = synth::tone_burst_bank({{"a", 440.0, 0.0, 0.5, 0.5}}, 1, sr, rng);
        const dsp::SpectrogramParams params;
        const auto mel = dsp::log_mel(bank[0].waveform, params);

        std::vector<double> marginal(params.n_mels, 0.0);
        for (std::size_t b = 0; b < params.n_mels; ++b) {
            for (std::size_t t = 0; t < mel.values.dim(1); ++t) {
                marginal[b] += std::exp(mel.values.at(b, t));
            }
        }
        std::size_t argmax = 0;
        for (std::size_t b = 1; b < marginal.size(); ++b) {
            if (marginal[b] > marginal[argmax]) argmax = b;
        }
        // band b's triangle spans [edges[b], edges[b+2]]
        const auto edges = dsp::mel_edge_frequencies(params, sr);
        CHECK(edges[argmax] <= 440.0);
        CHECK(edges[argmax + 2] >= 440.0);
    }

    SUBCASE("band-limited noise keeps its power inside the band") {
        Rng rng(5);
        const double center = 2000.0, bw = 800.0;
        const auto bank = synth::tone_burst_bank({{"n", center, bw, 0.2, 0.2}}, 1, sr, rng);
        const auto& s = bank[0].waveform.samples;
        const std::size_t n = s.size();

        // direct DFT power, independent of the synthesis path
        const double slack_hz = 150.0;  // ramp leakage
        const double bins_per_hz = static_cast<double>(n) / sr;
        const std::size_t k_lo = static_cast<std::size_t>((center - bw / 2 - slack_hz) * bins_per_hz);
        const std::size_t k_hi = static_cast<std::size_t>((center + bw / 2 + slack_hz) * bins_per_hz);
        double in_band = 0.0, total = 0.0;
        for (std::size_t k = 0; k <= n / 2; ++k) {
            double re = 0.0, im = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double ang = 2.0 * M_PI * static_cast<double>(k) * static_cast<double>(i) /
                                   static_cast<double>(n);
                re += s[i] * std::cos(ang);
                im -= s[i] * std::sin(ang);
            }
            const double p = re * re + im * im;
            total += p;
            if (k >= k_lo && k <= k_hi) in_band += p;
        }
        CHECK(in_band / total >= 0.9);
    }

    SUBCASE("frequencies at or above Nyquist are rejected") {
        Rng rng(6);
        CHECK_THROWS_WITH_AS(synth::tone_burst_bank({{"a", 11025.0, 0.0, 0.1, 0.1}}, 1, sr, rng),
                             "frequency above Nyquist", DataError);
        CHECK_THROWS_AS(synth::tone_burst_bank({{"a", 10800.0, 600.0, 0.1, 0.1}}, 1, sr, rng),
                        DataError);
    }
}

TEST_CASE("event record files round-trip and validate") {
    const std::string path = "records_test.jsonl";
    std::vector<EventRecord> recs(2);
    recs[0].file = "a.wav";
    recs[0].class_label = "beep";
    recs[0].onset = 1.25;
    recs[0].offset = 2.5;
    recs[0].has_band = true;
    recs[0].band_lo = 40.0;
    recs[0].band_hi = 55.0;
    recs[1].file = "b.wav";
    recs[1].class_label = "hiss \"quoted\"";
    recs[1].onset = 0.0;
    recs[1].offset = 0.333333;
    recs[1].has_score = true;
    recs[1].score = 0.875;

    write_event_records(path, recs);
    const auto back = read_event_records(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].file == "a.wav");
    CHECK(back[0].class_label == "beep");
    CHECK(back[0].onset == doctest::Approx(1.25));
    CHECK(back[0].offset == doctest::Approx(2.5));
    CHECK(back[0].has_band);
    CHECK(back[0].band_lo == doctest::Approx(40.0));
    CHECK(back[0].band_hi == doctest::Approx(55.0));
    CHECK_FALSE(back[0].has_score);
    CHECK(back[1].class_label == "hiss \"quoted\"");
    CHECK(back[1].has_score);
    CHECK(back[1].score == doctest::Approx(0.875));
    CHECK_FALSE(back[1].has_band);

    SUBCASE("malformed line errors name the line number") {
        std::ofstream out(path);
        out << "{\"file\": \"a.wav\", \"class\": \"x\", \"onset\": 0.0, \"offset\": 1.0}\n";
        out << "not json\n";
        out.close();
        CHECK_THROWS_WITH_AS(read_event_records(path), "records_test.jsonl: line 2: malformed JSON",
                             DataError);
    }

    SUBCASE("missing fields and bad intervals are rejected with line numbers") {
        std::ofstream out(path);
        out << "{\"file\": \"a.wav\", \"class\": \"x\", \"onset\": 2.0, \"offset\": 1.0}\n";
        out.close();
        CHECK_THROWS_WITH_AS(read_event_records(path),
                             "records_test.jsonl: line 1: need 0 <= onset < offset", DataError);

        std::ofstream out2(path);
        out2 << "{\"file\": \"a.wav\", \"onset\": 0.0, \"offset\": 1.0}\n";
        out2.close();
        CHECK_THROWS_WITH_AS(read_event_records(path),
                             "records_test.jsonl: line 1: missing string field 'class'", DataError);
    }

    SUBCASE("blank lines are skipped") {
        std::ofstream out(path);
        out << "\n{\"file\": \"a.wav\", \"class\": \"x\", \"onset\": 0.0, \"offset\": 1.0}\n\n";
        out.close();
        CHECK(read_event_records(path).size() == 1);
    }

    std::remove(path.c_str());
}
