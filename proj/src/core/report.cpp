// SPDX-License-Identifier: Apache-2.0

#include "posemoe/report.hpp"

#include <charconv>

#include "posemoe/errors.hpp"

namespace posemoe {

std::string format_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : out_(path), path_(path) {
    if (!out_) throw Error("csv: cannot open " + path.string() + " for writing");
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    if (!out_) throw Error("csv: write to " + path_.string() + " failed");
}

}  // namespace posemoe
