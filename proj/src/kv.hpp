#pragma once

// Flat key=value text used by config files and checkpoint config echoes.
// '#' starts a comment, blank lines are skipped, whitespace around keys and
// values is ignored.

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mscnn::detail {

inline std::string trim(const std::string& s) {
    const auto from = s.find_first_not_of(" \t\r\n");
    if (from == std::string::npos) return "";
    const auto to = s.find_last_not_of(" \t\r\n");
    return s.substr(from, to - from + 1);
}

inline std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line without '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw std::invalid_argument("config line without key: " + line);
        out.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return out;
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) parts.push_back(trim(item));
    return parts;
}

}  // namespace mscnn::detail
