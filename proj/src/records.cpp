#include "eventness/records.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "eventness/errors.hpp"
#include "json.hpp"

namespace eventness {

namespace {

std::string where(const std::string& path, std::size_t line_no) {
    return path + ": line " + std::to_string(line_no) + ": ";
}

double number_field(const nlohmann::json& obj, const char* key, const std::string& ctx) {
    if (!obj.contains(key) || !obj[key].is_number()) {
        throw DataError(ctx + "missing numeric field '" + key + "'");
    }
    return obj[key].get<double>();
}

std::string string_field(const nlohmann::json& obj, const char* key, const std::string& ctx) {
    if (!obj.contains(key) || !obj[key].is_string()) {
        throw DataError(ctx + "missing string field '" + key + "'");
    }
    return obj[key].get<std::string>();
}

}  // namespace

std::vector<EventRecord> read_event_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);

    std::vector<EventRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string ctx = where(path, line_no);

        const nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) throw DataError(ctx + "malformed JSON");

        EventRecord r;
        r.file = string_field(obj, "file", ctx);
        r.class_label = string_field(obj, "class", ctx);
        r.onset = number_field(obj, "onset", ctx);
        r.offset = number_field(obj, "offset", ctx);
        if (!(r.onset >= 0.0) || !(r.onset < r.offset)) {
            throw DataError(ctx + "need 0 <= onset < offset");
        }
        if (obj.contains("band_lo") || obj.contains("band_hi")) {
            r.band_lo = number_field(obj, "band_lo", ctx);
            r.band_hi = number_field(obj, "band_hi", ctx);
            if (!(r.band_lo < r.band_hi)) throw DataError(ctx + "need band_lo < band_hi");
            r.has_band = true;
        }
        if (obj.contains("score")) {
            r.score = number_field(obj, "score", ctx);
            r.has_score = true;
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_event_records(const std::string& path, const std::vector<EventRecord>& records) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp);
        char num[64];
        for (const EventRecord& r : records) {
            out << "{\"file\": " << nlohmann::json(r.file)
                << ", \"class\": " << nlohmann::json(r.class_label);
            std::snprintf(num, sizeof num, ", \"onset\": %.6f, \"offset\": %.6f", r.onset,
                          r.offset);
            out << num;
            if (r.has_band) {
                std::snprintf(num, sizeof num, ", \"band_lo\": %.6f, \"band_hi\": %.6f", r.band_lo,
                              r.band_hi);
                out << num;
            }
            if (r.has_score) {
                std::snprintf(num, sizeof num, ", \"score\": %.6f", r.score);
                out << num;
            }
            out << "}\n";
        }
        if (!out) throw DataError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw DataError("cannot rename " + tmp + " to " + path);
    }
}

}  // namespace eventness
