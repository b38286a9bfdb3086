#include "eventness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "eventness/errors.hpp"
#include "json.hpp"

namespace eventness::metrics {

namespace {

// half-open segment index range [k0, k1) overlapped by [onset, offset)
std::pair<std::size_t, std::size_t> segment_span(double onset, double offset, double seg_len,
                                                 std::size_t n_segments) {
    if (offset <= 0.0 || onset >= offset) return {0, 0};
    const double k0 = std::floor(std::max(0.0, onset) / seg_len);
    const double k1 = std::ceil(offset / seg_len);
    const std::size_t lo = static_cast<std::size_t>(k0);
    const std::size_t hi = std::min(static_cast<std::size_t>(k1), n_segments);
    return lo < hi ? std::make_pair(lo, hi) : std::make_pair<std::size_t, std::size_t>(0, 0);
}

std::map<std::string, std::size_t> class_index(const std::vector<EventRecord>& ref,
                                               const std::vector<EventRecord>& sys) {
    std::map<std::string, std::size_t> idx;
    for (const EventRecord& r : ref) idx.emplace(r.class_label, 0);
    for (const EventRecord& r : sys) idx.emplace(r.class_label, 0);
    std::size_t n = 0;
    for (auto& [label, i] : idx) i = n++;
    return idx;
}

void rasterize(const std::vector<EventRecord>& events, double seg_len, std::size_t n_segments,
               const std::map<std::string, std::size_t>& classes, std::vector<char>& grid) {
    for (const EventRecord& e : events) {
        const std::size_t c = classes.at(e.class_label);
        const auto [k0, k1] = segment_span(e.onset, e.offset, seg_len, n_segments);
        for (std::size_t k = k0; k < k1; ++k) grid[k * classes.size() + c] = 1;
    }
}

}  // namespace

MatchCounts pool(const MatchCounts& a, const MatchCounts& b) {
    return {a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.n_ref + b.n_ref, a.n_sys + b.n_sys};
}

MatchCounts segment_counts(const std::vector<EventRecord>& ref,
                           const std::vector<EventRecord>& sys, double seg_len,
                           double clip_duration) {
    if (!(seg_len > 0.0)) throw std::invalid_argument("seg_len must be positive");
    if (!(clip_duration >= 0.0)) throw std::invalid_argument("clip_duration must be non-negative");
    const std::size_t n_segments =
        static_cast<std::size_t>(std::ceil(clip_duration / seg_len));
    const auto classes = class_index(ref, sys);

    std::vector<char> ref_grid(n_segments * classes.size(), 0);
    std::vector<char> sys_grid(n_segments * classes.size(), 0);
    rasterize(ref, seg_len, n_segments, classes, ref_grid);
    rasterize(sys, seg_len, n_segments, classes, sys_grid);

    MatchCounts c;
    for (std::size_t i = 0; i < ref_grid.size(); ++i) {
        c.n_ref += ref_grid[i];
        c.n_sys += sys_grid[i];
        c.tp += ref_grid[i] & sys_grid[i];
    }
    c.fp = c.n_sys - c.tp;
    c.fn = c.n_ref - c.tp;
    return c;
}

MatchCounts event_counts(const std::vector<EventRecord>& ref, const std::vector<EventRecord>& sys,
                         const EventMatchConfig& cfg) {
    std::vector<std::size_t> order(sys.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sys[a].onset < sys[b].onset; });

    std::vector<char> taken(ref.size(), 0);
    MatchCounts c;
    c.n_ref = ref.size();
    c.n_sys = sys.size();
    for (std::size_t s : order) {
        std::size_t best = ref.size();
        for (std::size_t i = 0; i < ref.size(); ++i) {
            if (taken[i] || ref[i].class_label != sys[s].class_label) continue;
            const double d_on = std::abs(sys[s].onset - ref[i].onset);
            if (d_on > cfg.onset_collar) continue;
            const double tol =
                std::max(cfg.onset_collar, 0.5 * (ref[i].offset - ref[i].onset));
            if (std::abs(sys[s].offset - ref[i].offset) > tol) continue;
            if (best == ref.size()) {
                best = i;
                continue;
            }
            const double best_d = std::abs(sys[s].onset - ref[best].onset);
            if (d_on < best_d || (d_on == best_d && ref[i].onset < ref[best].onset)) best = i;
        }
        if (best < ref.size()) {
            taken[best] = 1;
            ++c.tp;
        }
    }
    c.fp = c.n_sys - c.tp;
    c.fn = c.n_ref - c.tp;
    return c;
}

double er_sb(const MatchCounts& c) {
    if (c.n_ref == 0) throw DataError("no reference activity");
    return static_cast<double>(std::max(c.n_ref, c.n_sys) - c.tp) / static_cast<double>(c.n_ref);
}

double er_eb(const MatchCounts& c) {
    if (c.n_ref == 0) throw DataError("no reference activity");
    return static_cast<double>(c.fn + c.fp) / static_cast<double>(c.n_ref);
}

double f1(const MatchCounts& c) {
    const std::size_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) throw DataError("undefined denominator");
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

std::vector<ClassScores> evaluate(const std::vector<EventRecord>& ref,
                                  const std::vector<EventRecord>& sys, const EvalOptions& opts) {
    std::set<std::string> files;
    std::set<std::string> labels;
    for (const EventRecord& r : ref) {
        files.insert(r.file);
        labels.insert(r.class_label);
    }
    for (const EventRecord& r : sys) {
        files.insert(r.file);
        labels.insert(r.class_label);
    }

    std::vector<ClassScores> rows;
    for (const std::string& label : labels) rows.push_back({label, {}, {}});

    for (const std::string& file : files) {
        std::vector<EventRecord> fr, fs;
        double max_offset = 0.0;
        for (const EventRecord& r : ref) {
            if (r.file != file) continue;
            fr.push_back(r);
            max_offset = std::max(max_offset, r.offset);
        }
        for (const EventRecord& r : sys) {
            if (r.file != file) continue;
            fs.push_back(r);
            max_offset = std::max(max_offset, r.offset);
        }
        const double duration = opts.clip_duration > 0.0 ? opts.clip_duration : max_offset;

        for (ClassScores& row : rows) {
            std::vector<EventRecord> cr, cs;
            for (const EventRecord& r : fr) {
                if (r.class_label == row.class_label) cr.push_back(r);
            }
            for (const EventRecord& r : fs) {
                if (r.class_label == row.class_label) cs.push_back(r);
            }
            row.segment = pool(row.segment, segment_counts(cr, cs, opts.seg_len, duration));
            row.event = pool(row.event, event_counts(cr, cs, opts.match));
        }
    }

    ClassScores overall{"Overall", {}, {}};
    for (const ClassScores& row : rows) {
        overall.segment = pool(overall.segment, row.segment);
        overall.event = pool(overall.event, row.event);
    }
    rows.push_back(std::move(overall));
    return rows;
}

namespace {

std::string ratio_cell(const MatchCounts& c, bool segment_based) {
    char buf[32];
    std::string out;
    if (c.n_ref == 0) {
        out = "-";
    } else {
        std::snprintf(buf, sizeof buf, "%.2f", segment_based ? er_sb(c) : er_eb(c));
        out = buf;
    }
    out += " (";
    if (2 * c.tp + c.fp + c.fn == 0) {
        out += "-";
    } else {
        std::snprintf(buf, sizeof buf, "%.2f", f1(c));
        out += buf;
    }
    out += ")";
    return out;
}

nlohmann::json counts_json(const MatchCounts& c, bool segment_based) {
    nlohmann::json j{{"tp", c.tp},       {"fp", c.fp},       {"fn", c.fn},
                     {"n_ref", c.n_ref}, {"n_sys", c.n_sys}, {"er", nullptr},
                     {"f1", nullptr}};
    if (c.n_ref > 0) j["er"] = segment_based ? er_sb(c) : er_eb(c);
    if (2 * c.tp + c.fp + c.fn > 0) j["f1"] = f1(c);
    return j;
}

}  // namespace

ScoreReport score_report(const std::vector<ClassScores>& rows) {
    std::size_t width = 5;  // "Class"
    for (const ClassScores& row : rows) width = std::max(width, row.class_label.size());
    width += 2;

    ScoreReport out;
    out.text = "Class";
    out.text.append(width - 5, ' ');
    out.text += "Segment-based  Event-based\n";
    nlohmann::json jrows = nlohmann::json::array();
    for (const ClassScores& row : rows) {
        std::string seg = ratio_cell(row.segment, true);
        seg.resize(std::max<std::size_t>(seg.size(), 13), ' ');
        out.text += row.class_label;
        out.text.append(width - row.class_label.size(), ' ');
        out.text += seg + "  " + ratio_cell(row.event, false) + "\n";

        nlohmann::json j{{"class", row.class_label},
                         {"segment", counts_json(row.segment, true)},
                         {"event", counts_json(row.event, false)}};
        jrows.push_back(std::move(j));
    }
    nlohmann::json report;
    if (!rows.empty() && rows.back().class_label == "Overall") {
        report["overall"] = jrows.back();
        jrows.erase(jrows.end() - 1);
    }
    report["classes"] = std::move(jrows);
    out.json = report.dump(2) + "\n";
    return out;
}

}  // namespace eventness::metrics
