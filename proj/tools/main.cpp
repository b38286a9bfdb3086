// eventness command line: synthesize scenes, train, detect, evaluate, render.
// Exit codes: 0 ok, 1 usage, 2 bad data, 3 numerical failure.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "eventness/errors.hpp"
#include "eventness/pipeline.hpp"
#include "eventness/records.hpp"
#include "eventness/render.hpp"
#include "eventness/rng.hpp"
#include "eventness/run_config.hpp"
#include "eventness/scene_synth.hpp"
#include "eventness/wav.hpp"

namespace fs = std::filesystem;
using namespace eventness;
using dsp::read_wav;
using dsp::write_wav;

namespace {

std::size_t worker_count(std::size_t n_items) {
    std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("EVENTNESS_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end && *end == '\0' && v >= 1) cap = v;
    }
    return std::min(cap, std::max<std::size_t>(1, n_items));
}

// index-sharded worker pool; the first exception wins and is rethrown
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = worker_count(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (std::thread& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

synth::Annotation to_annotation(const EventRecord& r) {
    synth::Annotation a;
    a.class_label = r.class_label;
    a.onset = r.onset;
    a.offset = r.offset;
    a.has_band = r.has_band;
    a.band_lo = r.band_lo;
    a.band_hi = r.band_hi;
    return a;
}

std::vector<EventRecord> records_for_file(const std::vector<EventRecord>& all,
                                          const std::string& basename, const char* what) {
    std::vector<EventRecord> out;
    for (const EventRecord& r : all) {
        if (r.file == basename) out.push_back(r);
    }
    if (out.empty() && !all.empty()) {
        std::fprintf(stderr, "note: no %s records name '%s'; using all %zu records\n", what,
                     basename.c_str(), all.size());
        out = all;
    }
    return out;
}

int cmd_synth(const cli::RunConfig& cfg, const std::string& out_dir) {
    if (cfg.n_scenes == 0) throw DataError("n_scenes must be at least 1");
    fs::create_directories(out_dir);

    Rng bank_rng(derive_seed(cfg.seed, 0x8a7e));
    const std::vector<synth::EventClip> events =
        synth::tone_burst_bank(cfg.classes, cfg.clips_per_class, cfg.sample_rate, bank_rng);
    const std::size_t scene_samples = static_cast<std::size_t>(
        std::llround(cfg.scene_duration * static_cast<double>(cfg.sample_rate)));
    const std::vector<dsp::Waveform> backgrounds = synth::noise_background_bank(
        cfg.n_backgrounds, scene_samples, cfg.sample_rate, cfg.background_amplitude, bank_rng);
    const synth::SceneSpec spec = cli::scene_spec_of(cfg);

    std::vector<std::vector<EventRecord>> per_scene(cfg.n_scenes);
    std::vector<char> polyphonic(cfg.n_scenes, 0);
    std::atomic<std::size_t> clamped{0};
    parallel_for(cfg.n_scenes, [&](std::size_t i) {
        const synth::SyntheticScene scene =
            synth::synthesize_scene(spec, events, backgrounds, derive_seed(cfg.seed, i));
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05zu.wav", i);
        write_wav((fs::path(out_dir) / name).string(), scene.waveform);
        for (const synth::Annotation& a : scene.annotations) {
            EventRecord r;
            r.file = name;
            r.class_label = a.class_label;
            r.onset = a.onset;
            r.offset = a.offset;
            r.has_band = a.has_band;
            r.band_lo = a.band_lo;
            r.band_hi = a.band_hi;
            per_scene[i].push_back(std::move(r));
        }
        polyphonic[i] = scene.provenance.placements.size() >= 2 ? 1 : 0;
        clamped += scene.provenance.clamped_samples;
    });

    std::vector<EventRecord> manifest;
    std::size_t n_poly = 0;
    for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
        manifest.insert(manifest.end(), per_scene[i].begin(), per_scene[i].end());
        n_poly += polyphonic[i];
    }
    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    write_event_records(manifest_path, manifest);

    std::printf("synthesized %zu scenes of %.1f s at %d Hz into %s\n", cfg.n_scenes,
                cfg.scene_duration, cfg.sample_rate, out_dir.c_str());
    std::printf("events: %zu across %zu classes; manifest: %s\n", manifest.size(),
                cfg.classes.size(), manifest_path.c_str());
    std::printf("polyphonic fraction: %.4f (%zu of %zu scenes)\n",
                static_cast<double>(n_poly) / static_cast<double>(cfg.n_scenes), n_poly,
                cfg.n_scenes);
    if (clamped > 0) std::printf("clipped samples during mixing: %zu\n", clamped.load());
    return 0;
}

int cmd_train(cli::RunConfig cfg, const std::string& manifest_path, const std::string& out_path) {
    const std::vector<EventRecord> records = read_event_records(manifest_path);
    if (records.empty()) throw DataError(manifest_path + ": no event records");

    std::map<std::string, std::vector<synth::Annotation>> by_file;
    std::set<std::string> class_set;
    for (const EventRecord& r : records) {
        by_file[r.file].push_back(to_annotation(r));
        class_set.insert(r.class_label);
    }
    cfg.model.class_names.assign(class_set.begin(), class_set.end());

    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<pipeline::LabeledClip> clips;
    clips.reserve(by_file.size());
    for (auto& [file, annotations] : by_file) {
        pipeline::LabeledClip clip;
        clip.waveform = read_wav((base / file).string());
        clip.annotations = std::move(annotations);
        clips.push_back(std::move(clip));
    }

    std::printf("training on %zu clips, %zu classes (", clips.size(),
                cfg.model.class_names.size());
    for (std::size_t i = 0; i < cfg.model.class_names.size(); ++i) {
        std::printf("%s%s", i ? ", " : "", cfg.model.class_names[i].c_str());
    }
    std::printf("), %zu iterations\n", cfg.train.iterations);

    pipeline::TrainResult result = pipeline::train(clips, cfg.model, cfg.train);
    pipeline::save_model(result.model, out_path);
    std::printf("loss: %.4f -> %.4f\n", result.losses.front(), result.losses.back());
    std::printf("checkpoint: %s\n", out_path.c_str());
    return 0;
}

int cmd_detect(const std::string& checkpoint, const std::vector<std::string>& wavs,
               const std::string& out_path) {
    pipeline::DetectionModel model = pipeline::load_model(checkpoint);

    std::vector<std::vector<EventRecord>> per_file(wavs.size());
    parallel_for(wavs.size(), [&](std::size_t i) {
        const dsp::Waveform w = read_wav(wavs[i]);
        const std::string name = fs::path(wavs[i]).filename().string();
        for (const pipeline::EventDetection& d : pipeline::detect(model, w)) {
            EventRecord r;
            r.file = name;
            r.class_label = d.class_label;
            r.onset = d.onset;
            r.offset = d.offset;
            r.has_band = true;
            r.band_lo = d.band_lo;
            r.band_hi = d.band_hi;
            r.has_score = true;
            r.score = d.confidence;
            per_file[i].push_back(std::move(r));
        }
    });

    std::vector<EventRecord> all;
    for (std::size_t i = 0; i < wavs.size(); ++i) {
        std::printf("%s: %zu events\n", wavs[i].c_str(), per_file[i].size());
        all.insert(all.end(), per_file[i].begin(), per_file[i].end());
    }
    write_event_records(out_path, all);
    std::printf("detections: %s (%zu events)\n", out_path.c_str(), all.size());
    return 0;
}

int cmd_eval(const cli::RunConfig& cfg, const std::string& ref_path, const std::string& sys_path,
             const std::string& json_path) {
    const std::vector<EventRecord> ref = read_event_records(ref_path);
    const std::vector<EventRecord> sys = read_event_records(sys_path);

    std::set<std::string> ref_classes;
    for (const EventRecord& r : ref) ref_classes.insert(r.class_label);
    std::set<std::string> warned;
    for (const EventRecord& s : sys) {
        if (!ref_classes.count(s.class_label) && warned.insert(s.class_label).second) {
            std::fprintf(stderr, "warning: class '%s' does not appear in the reference\n",
                         s.class_label.c_str());
        }
    }

    const std::vector<metrics::ClassScores> rows = metrics::evaluate(ref, sys, cfg.eval);
    const metrics::ScoreReport report = metrics::score_report(rows);
    std::fputs(report.text.c_str(), stdout);
    if (!json_path.empty()) {
        const std::string tmp = json_path + ".tmp";
        FILE* f = std::fopen(tmp.c_str(), "w");
        if (!f) throw DataError("cannot open " + tmp);
        const bool ok = std::fputs(report.json.c_str(), f) >= 0;
        std::fclose(f);
        if (!ok || std::rename(tmp.c_str(), json_path.c_str()) != 0) {
            throw DataError("cannot write " + json_path);
        }
        std::printf("json report: %s\n", json_path.c_str());
    }
    return 0;
}

int cmd_render(const cli::RunConfig& cfg, const std::string& wav_path,
               const std::string& annotations_path, const std::string& detections_path,
               const std::string& out_path) {
    const dsp::Waveform w = read_wav(wav_path);
    const std::string basename = fs::path(wav_path).filename().string();
    std::vector<EventRecord> refs, dets;
    if (!annotations_path.empty()) {
        refs = records_for_file(read_event_records(annotations_path), basename, "annotation");
    }
    if (!detections_path.empty()) {
        dets = records_for_file(read_event_records(detections_path), basename, "detection");
    }
    const render::Image img = render::render_events(w, cfg.model.spectrogram, refs, dets);
    render::write_ppm(out_path, img);
    std::printf("wrote %zux%zu ppm with %zu reference and %zu detection boxes: %s\n", img.width,
                img.height, refs.size(), dets.size(), out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"audio event detection on synthetic scenes"};
    app.require_subcommand(1);

    std::string config_path, out_path, json_path;
    std::string manifest_path, checkpoint_path, ref_path, sys_path, wav_path;
    std::string annotations_path, detections_path;
    std::vector<std::string> wav_paths;
    std::uint64_t seed = 0;
    std::size_t n_override = 0;
    double clip_duration = -1.0;
    bool seed_set = false, n_set = false;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    CLI::App* synth = app.add_subcommand("synth", "synthesize scenes and a manifest");
    add_common(synth);
    synth->add_option("--out", out_path, "output directory")->required();
    synth->add_option("--n", n_override, "number of scenes")->each([&](const std::string&) {
        n_set = true;
    });

    CLI::App* train = app.add_subcommand("train", "train a detector on a manifest");
    add_common(train);
    train->add_option("manifest", manifest_path, "manifest.jsonl with annotations")->required();
    train->add_option("--out", out_path, "checkpoint path (default model.evck)");

    CLI::App* detect = app.add_subcommand("detect", "run detection over WAV files");
    add_common(detect);
    detect->add_option("checkpoint", checkpoint_path, "trained checkpoint")->required();
    detect->add_option("wavs", wav_paths, "input WAV files")->required()->expected(-1);
    detect->add_option("--out", out_path, "detections JSONL path");

    CLI::App* eval = app.add_subcommand("eval", "score detections against references");
    add_common(eval);
    eval->add_option("ref", ref_path, "reference JSONL")->required();
    eval->add_option("sys", sys_path, "system output JSONL")->required();
    eval->add_option("--clip-duration", clip_duration,
                     "fixed clip length in seconds (default: per-file max offset)");
    eval->add_option("--json", json_path, "also write the report as JSON");

    CLI::App* render_cmd = app.add_subcommand("render", "render a spectrogram with event boxes");
    add_common(render_cmd);
    render_cmd->add_option("wav", wav_path, "input WAV")->required();
    render_cmd->add_option("--annotations", annotations_path, "reference JSONL (green boxes)");
    render_cmd->add_option("--detections", detections_path, "detection JSONL (red boxes)");
    render_cmd->add_option("--out", out_path, "output PPM path");

    CLI::App* defaults = app.add_subcommand("defaults", "print every config key with its default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems exit 1 regardless of CLI11's own codes
    }

    try {
        cli::RunConfig cfg;
        if (!config_path.empty()) cfg = cli::load_run_config(config_path);
        if (seed_set) {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if (n_set) cfg.n_scenes = n_override;
        if (clip_duration >= 0.0) cfg.eval.clip_duration = clip_duration;

        if (synth->parsed()) return cmd_synth(cfg, out_path);
        if (train->parsed()) {
            return cmd_train(std::move(cfg), manifest_path,
                             out_path.empty() ? "model.evck" : out_path);
        }
        if (detect->parsed()) {
            return cmd_detect(checkpoint_path, wav_paths,
                              out_path.empty() ? "detections.jsonl" : out_path);
        }
        if (eval->parsed()) return cmd_eval(cfg, ref_path, sys_path, json_path);
        if (render_cmd->parsed()) {
            return cmd_render(cfg, wav_path, annotations_path, detections_path,
                              out_path.empty() ? "render.ppm" : out_path);
        }
        if (defaults->parsed()) {
            std::fputs(cli::run_config_defaults().c_str(), stdout);
            return 0;
        }
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
