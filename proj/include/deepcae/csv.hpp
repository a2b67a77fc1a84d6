#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace deepcae {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column; throws ConfigError if absent.
    std::size_t column(std::string_view name) const;
};

/// RFC-4180 parser: quoted fields, doubled quotes, embedded separators and
/// newlines, CRLF or LF line ends, optional UTF-8 BOM. The first record is the
/// header. Throws ConfigError on an empty input, ragged rows or unterminated quotes.
CsvTable parse_csv(std::string_view text);

/// Throws IoError if the file cannot be read.
CsvTable read_csv(const std::filesystem::path& path);

/// Quotes a field when it contains a separator, quote or line break.
std::string csv_field(std::string_view value);

}  // namespace deepcae
