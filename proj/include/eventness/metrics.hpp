#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "eventness/records.hpp"

namespace eventness::metrics {

struct MatchCounts {
    std::size_t tp = 0, fp = 0, fn = 0;
    std::size_t n_ref = 0, n_sys = 0;
};

MatchCounts pool(const MatchCounts& a, const MatchCounts& b);

struct EventMatchConfig {
    // offset tolerance per reference event is
    // max(onset_collar, half the reference duration)
    double onset_collar = 0.2;  // seconds
};

// Rasterizes both sides onto a [segments x classes] activity grid over
// ceil(clip_duration / seg_len) segments; a class is active in a segment iff
// one of its events overlaps the segment by any amount. TP counts cells
// active on both sides, n_ref/n_sys the active cells per side.
MatchCounts segment_counts(const std::vector<EventRecord>& ref,
                           const std::vector<EventRecord>& sys, double seg_len,
                           double clip_duration);

// Greedy one-to-one matching: sys events in onset order, each taking the
// nearest-onset unmatched same-class reference within the collar whose offset
// also falls within tolerance; ties go to the earlier reference.
MatchCounts event_counts(const std::vector<EventRecord>& ref,
                         const std::vector<EventRecord>& sys, const EventMatchConfig& cfg = {});

// (max(n_ref, n_sys) - tp) / n_ref; n_ref = 0 raises "no reference activity".
double er_sb(const MatchCounts& c);

// (fn + fp) / n_ref; n_ref = 0 raises "no reference activity".
double er_eb(const MatchCounts& c);

// 2tp / (2tp + fp + fn); a zero denominator raises "undefined denominator".
double f1(const MatchCounts& c);

struct ClassScores {
    std::string class_label;
    MatchCounts segment;
    MatchCounts event;
};

struct EvalOptions {
    double seg_len = 1.0;
    EventMatchConfig match;
    double clip_duration = 0.0;  // 0 means per-file max event offset
};

// Groups records by file, scores each class on each clip, and pools counts
// across clips (micro-averaging). Rows are the union of both sides' classes
// in sorted order, then a final "Overall" row pooling all classes.
std::vector<ClassScores> evaluate(const std::vector<EventRecord>& ref,
                                  const std::vector<EventRecord>& sys,
                                  const EvalOptions& opts = {});

struct ScoreReport {
    std::string text;  // aligned table, "ER (F1)" cells at two decimals
    std::string json;
};

// Formats evaluate() rows; cells whose ratio is undefined print "-".
// Segment columns use er_sb, event columns er_eb.
ScoreReport score_report(const std::vector<ClassScores>& rows);

}  // namespace eventness::metrics
