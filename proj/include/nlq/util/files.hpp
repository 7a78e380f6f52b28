#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nlq::util {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, flushes it, then renames over `path`.
// Readers observe either the old or the new content, never a mix.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Appends one line (a trailing '\n' is added) with a single write call and
// fsyncs. A crash can leave at most one partial trailing line, which
// read_lines drops.
void append_line_durable(const std::filesystem::path& path, std::string_view line);

// Complete lines only; a final fragment without '\n' is discarded.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace nlq::util
