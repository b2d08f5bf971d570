// SPDX-License-Identifier: Apache-2.0
// CSV output helpers.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace posemoe {

/// Shortest text that reads back to the same double.
std::string format_real(double v);

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path);
    void header(const std::vector<std::string>& cells) { row(cells); }
    void row(const std::vector<std::string>& cells);

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

}  // namespace posemoe
