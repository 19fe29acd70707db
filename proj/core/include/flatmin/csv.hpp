#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "flatmin/error.hpp"

namespace flatmin {

// Shortest representation that round-trips a double exactly.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Line-at-a-time CSV writer; every float goes through fmt_double so repeated
// runs produce byte-identical files.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header) : out_(path) {
        if (!out_) throw ParseError("cannot open for writing: " + path);
        out_ << header << '\n';
    }

    CsvWriter& field(const std::string& s) {
        sep();
        out_ << s;
        return *this;
    }
    CsvWriter& field(double v) { return field(fmt_double(v)); }
    CsvWriter& field(std::uint64_t v) { return field(std::to_string(v)); }
    CsvWriter& field(int v) { return field(std::to_string(v)); }

    void end_row() {
        out_ << '\n';
        first_ = true;
    }

private:
    void sep() {
        if (!first_) out_ << ',';
        first_ = false;
    }
    std::ofstream out_;
    bool first_ = true;
};

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace flatmin
