#pragma once

#include <string>
#include <vector>

namespace eventness {

// One annotation or detection line in a JSON Lines file. Band extents are
// continuous mel-band pixels and travel as a pair; score is detections-only.
struct EventRecord {
    std::string file;
    std::string class_label;
    double onset = 0.0;
    double offset = 0.0;
    bool has_band = false;
    double band_lo = 0.0;
    double band_hi = 0.0;
    bool has_score = false;
    double score = 0.0;
};

// Parses one record per non-blank line. Malformed lines, missing fields, and
// onset >= offset raise DataError naming the file and 1-based line number.
std::vector<EventRecord> read_event_records(const std::string& path);

// Serializes records (numbers at 6 decimal places) to a temp file in the same
// directory, then renames over `path` so readers never see a partial file.
void write_event_records(const std::string& path, const std::vector<EventRecord>& records);

}  // namespace eventness
