#include "eventness/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "eventness/errors.hpp"

namespace eventness::cli {

namespace {

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string::npos) return out;
        start = pos + 1;
    }
}

double parse_double(const std::string& v) {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
}

std::uint64_t parse_u64(const std::string& v) {
    std::size_t used = 0;
    const unsigned long long u = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return u;
}

std::size_t parse_size(const std::string& v) { return static_cast<std::size_t>(parse_u64(v)); }

std::vector<double> parse_double_list(const std::string& v) {
    std::vector<double> out;
    for (const std::string& item : split(v, ',')) out.push_back(parse_double(item));
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& v) {
    std::vector<std::size_t> out;
    for (const std::string& item : split(v, ',')) out.push_back(parse_size(item));
    return out;
}

std::vector<synth::ToneClassSpec> parse_classes(const std::string& v) {
    std::vector<synth::ToneClassSpec> out;
    for (const std::string& item : split(v, ',')) {
        const std::vector<std::string> f = split(item, ':');
        if (f.size() < 3 || f.size() > 5 || f[0].empty()) throw std::invalid_argument(item);
        synth::ToneClassSpec spec;
        spec.name = f[0];
        spec.center_hz = parse_double(f[1]);
        spec.bandwidth_hz = parse_double(f[2]);
        if (f.size() >= 4) spec.dur_lo = parse_double(f[3]);
        spec.dur_hi = f.size() == 5 ? parse_double(f[4]) : spec.dur_lo;
        out.push_back(std::move(spec));
    }
    if (out.empty()) throw std::invalid_argument("empty class list");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string format_double_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

std::string format_size_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string format_classes(const std::vector<synth::ToneClassSpec>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i].name + ":" + format_double(v[i].center_hz) + ":" +
               format_double(v[i].bandwidth_hz) + ":" + format_double(v[i].dur_lo) + ":" +
               format_double(v[i].dur_hi);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeyEntry {
    Setter set;
    Getter get;
};

// one table drives parsing, rejection of unknown keys, and the defaults dump
const std::map<std::string, KeyEntry>& key_table() {
    static const std::map<std::string, KeyEntry> table = [] {
        std::map<std::string, KeyEntry> t;
        auto dbl = [&t](const std::string& key, auto member) {
            t[key] = {[member](RunConfig& c, const std::string& v) { c.*member = parse_double(v); },
                      [member](const RunConfig& c) { return format_double(c.*member); }};
        };
        auto size = [&t](const std::string& key, auto member) {
            t[key] = {[member](RunConfig& c, const std::string& v) { c.*member = parse_size(v); },
                      [member](const RunConfig& c) { return std::to_string(c.*member); }};
        };
        auto via = [&t](const std::string& key, auto setter, auto getter) {
            t[key] = {setter, getter};
        };

        size("n_scenes", &RunConfig::n_scenes);
        dbl("scene_duration", &RunConfig::scene_duration);
        dbl("polyphonic_prob", &RunConfig::polyphonic_prob);
        dbl("event_gain_db_lo", &RunConfig::event_gain_db_lo);
        dbl("event_gain_db_hi", &RunConfig::event_gain_db_hi);
        dbl("background_gain_db_lo", &RunConfig::background_gain_db_lo);
        dbl("background_gain_db_hi", &RunConfig::background_gain_db_hi);
        size("clips_per_class", &RunConfig::clips_per_class);
        size("n_backgrounds", &RunConfig::n_backgrounds);
        dbl("background_amplitude", &RunConfig::background_amplitude);
        via(
            "sample_rate",
            [](RunConfig& c, const std::string& v) { c.sample_rate = static_cast<int>(parse_u64(v)); },
            [](const RunConfig& c) { return std::to_string(c.sample_rate); });
        via(
            "classes",
            [](RunConfig& c, const std::string& v) { c.classes = parse_classes(v); },
            [](const RunConfig& c) { return format_classes(c.classes); });

        via(
            "n_fft",
            [](RunConfig& c, const std::string& v) { c.model.spectrogram.n_fft = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.spectrogram.n_fft); });
        via(
            "hop", [](RunConfig& c, const std::string& v) { c.model.spectrogram.hop = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.spectrogram.hop); });
        via(
            "n_mels",
            [](RunConfig& c, const std::string& v) { c.model.spectrogram.n_mels = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.spectrogram.n_mels); });
        via(
            "window_fn",
            [](RunConfig& c, const std::string& v) {
                if (v.empty()) throw std::invalid_argument(v);
                c.model.spectrogram.window_fn = v;
            },
            [](const RunConfig& c) { return c.model.spectrogram.window_fn; });
        via(
            "f_min", [](RunConfig& c, const std::string& v) { c.model.spectrogram.f_min = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.spectrogram.f_min); });
        via(
            "f_max", [](RunConfig& c, const std::string& v) { c.model.spectrogram.f_max = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.spectrogram.f_max); });

        via(
            "backbone_channels",
            [](RunConfig& c, const std::string& v) { c.model.backbone.channels = parse_size_list(v); },
            [](const RunConfig& c) { return format_size_list(c.model.backbone.channels); });
        via(
            "pools_per_block",
            [](RunConfig& c, const std::string& v) { c.model.backbone.pools_per_block = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.backbone.pools_per_block); });
        via(
            "rpn_mid_channels",
            [](RunConfig& c, const std::string& v) { c.model.rpn_mid_channels = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.rpn_mid_channels); });
        via(
            "anchor_scales",
            [](RunConfig& c, const std::string& v) { c.model.anchors.scales = parse_double_list(v); },
            [](const RunConfig& c) { return format_double_list(c.model.anchors.scales); });
        via(
            "anchor_ratios",
            [](RunConfig& c, const std::string& v) { c.model.anchors.ratios = parse_double_list(v); },
            [](const RunConfig& c) { return format_double_list(c.model.anchors.ratios); });
        via(
            "rpn_iou_pos",
            [](RunConfig& c, const std::string& v) { c.model.rpn_assign.iou_pos = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.rpn_assign.iou_pos); });
        via(
            "rpn_iou_neg",
            [](RunConfig& c, const std::string& v) { c.model.rpn_assign.iou_neg = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.rpn_assign.iou_neg); });
        via(
            "rpn_batch",
            [](RunConfig& c, const std::string& v) { c.model.rpn_assign.batch = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.rpn_assign.batch); });
        via(
            "rpn_pos_fraction",
            [](RunConfig& c, const std::string& v) { c.model.rpn_assign.pos_fraction = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.rpn_assign.pos_fraction); });
        via(
            "pre_nms_top",
            [](RunConfig& c, const std::string& v) { c.model.proposals.pre_nms_top = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.proposals.pre_nms_top); });
        via(
            "proposal_nms_thresh",
            [](RunConfig& c, const std::string& v) { c.model.proposals.nms_thresh = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.proposals.nms_thresh); });
        via(
            "post_nms_top",
            [](RunConfig& c, const std::string& v) { c.model.proposals.post_nms_top = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.proposals.post_nms_top); });
        via(
            "proposal_min_side",
            [](RunConfig& c, const std::string& v) { c.model.proposals.min_side = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.proposals.min_side); });
        via(
            "roi_pool_size",
            [](RunConfig& c, const std::string& v) { c.model.roi_pool_size = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.roi_pool_size); });
        via(
            "roi_hidden",
            [](RunConfig& c, const std::string& v) { c.model.roi_hidden = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.model.roi_hidden); });
        via(
            "score_thresh",
            [](RunConfig& c, const std::string& v) { c.model.detect.score_thresh = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.detect.score_thresh); });
        via(
            "detect_nms_thresh",
            [](RunConfig& c, const std::string& v) { c.model.detect.nms_thresh = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.detect.nms_thresh); });
        via(
            "detect_min_side",
            [](RunConfig& c, const std::string& v) { c.model.detect.min_side = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.model.detect.min_side); });

        via(
            "learning_rate",
            [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.learning_rate); });
        via(
            "momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.momentum); });
        via(
            "iterations",
            [](RunConfig& c, const std::string& v) { c.train.iterations = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.train.iterations); });
        via(
            "lambda_rpn_cls",
            [](RunConfig& c, const std::string& v) { c.train.lambda_rpn_cls = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.lambda_rpn_cls); });
        via(
            "lambda_rpn_box",
            [](RunConfig& c, const std::string& v) { c.train.lambda_rpn_box = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.lambda_rpn_box); });
        via(
            "lambda_roi_cls",
            [](RunConfig& c, const std::string& v) { c.train.lambda_roi_cls = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.lambda_roi_cls); });
        via(
            "lambda_roi_box",
            [](RunConfig& c, const std::string& v) { c.train.lambda_roi_box = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.lambda_roi_box); });
        via(
            "roi_batch", [](RunConfig& c, const std::string& v) { c.train.roi_batch = parse_size(v); },
            [](const RunConfig& c) { return std::to_string(c.train.roi_batch); });
        via(
            "roi_fg_fraction",
            [](RunConfig& c, const std::string& v) { c.train.roi_fg_fraction = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.roi_fg_fraction); });
        via(
            "roi_fg_iou",
            [](RunConfig& c, const std::string& v) { c.train.roi_fg_iou = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.train.roi_fg_iou); });

        via(
            "seg_len", [](RunConfig& c, const std::string& v) { c.eval.seg_len = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.eval.seg_len); });
        via(
            "onset_collar",
            [](RunConfig& c, const std::string& v) { c.eval.match.onset_collar = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.eval.match.onset_collar); });
        via(
            "clip_duration",
            [](RunConfig& c, const std::string& v) { c.eval.clip_duration = parse_double(v); },
            [](const RunConfig& c) { return format_double(c.eval.clip_duration); });

        via(
            "seed",
            [](RunConfig& c, const std::string& v) {
                c.seed = parse_u64(v);
                c.train.seed = c.seed;
            },
            [](const RunConfig& c) { return std::to_string(c.seed); });
        return t;
    }();
    return table;
}

}  // namespace

std::vector<synth::ToneClassSpec> default_tone_classes() {
    synth::ToneClassSpec beep;
    beep.name = "beep";
    beep.center_hz = 880.0;
    beep.bandwidth_hz = 0.0;
    beep.dur_lo = 0.5;
    beep.dur_hi = 1.5;
    synth::ToneClassSpec buzz;
    buzz.name = "buzz";
    buzz.center_hz = 4000.0;
    buzz.bandwidth_hz = 2000.0;
    buzz.dur_lo = 0.5;
    buzz.dur_hi = 1.5;
    return {beep, buzz};
}

synth::SceneSpec scene_spec_of(const RunConfig& cfg) {
    synth::SceneSpec spec;
    spec.duration_T = cfg.scene_duration;
    spec.polyphonic_prob = cfg.polyphonic_prob;
    spec.event_gain_db_lo = cfg.event_gain_db_lo;
    spec.event_gain_db_hi = cfg.event_gain_db_hi;
    spec.background_gain_db_lo = cfg.background_gain_db_lo;
    spec.background_gain_db_hi = cfg.background_gain_db_hi;
    spec.analysis = cfg.model.spectrogram;
    return spec;
}

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = key_table().find(key);
        if (it == key_table().end()) {
            throw DataError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
        }
        try {
            it->second.set(cfg, value);
        } catch (const DataError&) {
            throw;
        } catch (const std::exception&) {
            throw DataError("config line " + std::to_string(line_no) + ": invalid value for '" +
                            key + "'");
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str());
}

std::string run_config_defaults() {
    const RunConfig cfg;
    std::string out;
    for (const auto& [key, entry] : key_table()) {
        out += key + "=" + entry.get(cfg) + "\n";
    }
    return out;
}

}  // namespace eventness::cli
