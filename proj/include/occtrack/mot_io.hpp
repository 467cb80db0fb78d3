#pragma once

#include "occtrack/common.hpp"
#include "occtrack/errors.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace occtrack {

/// One line of the MOT CSV schema
/// `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`; id and the world
/// coordinates are -1 when absent.
struct MotRow {
    long frame = 0;
    long id = -1;
    double left = 0.0, top = 0.0, width = 0.0, height = 0.0;
    double conf = 1.0;
    double x = -1.0, y = -1.0, z = -1.0;
};

/// Detections bucketed by frame; index 0 is the file's smallest frame number.
struct DetectionFrames {
    long first_frame = 0;
    std::vector<std::vector<MotRow>> frames;
};

namespace detail {

inline double parse_field(const std::string& text, std::size_t& pos, const std::string& where) {
    const std::size_t comma = text.find(',', pos);
    const std::size_t end = comma == std::string::npos ? text.size() : comma;
    double value = 0.0;
    const char* first = text.data() + pos;
    const char* last = text.data() + end;
    while (first < last && (*first == ' ' || *first == '\t')) ++first;
    const auto result = std::from_chars(first, last, value);
    if (result.ec != std::errc{})
        throw ParseError(where + ": expected a number, got '" + text.substr(pos, end - pos) + "'");
    pos = comma == std::string::npos ? text.size() : comma + 1;
    return value;
}

}  // namespace detail

inline std::vector<MotRow> read_mot_rows(std::istream& in, const std::string& name) {
    std::vector<MotRow> rows;
    std::string line;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(line_number);
        std::size_t pos = 0;
        double fields[10];
        for (double& f : fields) f = detail::parse_field(line, pos, where);
        if (pos < line.size())
            throw ParseError(where + ": trailing fields after the ten-column schema");
        MotRow row;
        row.frame = static_cast<long>(fields[0]);
        row.id = static_cast<long>(fields[1]);
        row.left = fields[2];
        row.top = fields[3];
        row.width = fields[4];
        row.height = fields[5];
        row.conf = fields[6];
        row.x = fields[7];
        row.y = fields[8];
        row.z = fields[9];
        rows.push_back(row);
    }
    return rows;
}

inline DetectionFrames load_mot_detections(std::istream& in, const std::string& name) {
    const std::vector<MotRow> rows = read_mot_rows(in, name);
    DetectionFrames out;
    if (rows.empty()) return out;
    long lo = rows.front().frame, hi = rows.front().frame;
    for (const MotRow& row : rows) {
        lo = std::min(lo, row.frame);
        hi = std::max(hi, row.frame);
    }
    out.first_frame = lo;
    out.frames.resize(static_cast<std::size_t>(hi - lo + 1));
    for (const MotRow& row : rows)
        out.frames[static_cast<std::size_t>(row.frame - lo)].push_back(row);
    return out;
}

inline DetectionFrames load_mot_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    return load_mot_detections(in, path);
}

inline void write_mot_rows(std::ostream& out, const std::vector<MotRow>& rows) {
    for (const MotRow& row : rows) {
        out << row.frame << ',' << row.id << ',' << format_number(row.left) << ','
            << format_number(row.top) << ',' << format_number(row.width) << ','
            << format_number(row.height) << ',' << format_number(row.conf) << ','
            << format_number(row.x) << ',' << format_number(row.y) << ','
            << format_number(row.z) << '\n';
    }
}

inline void write_mot_rows(const std::string& path, const std::vector<MotRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    write_mot_rows(out, rows);
}

}  // namespace occtrack
