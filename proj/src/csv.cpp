#include "deepcae/csv.hpp"

#include "deepcae/errors.hpp"
#include "deepcae/io.hpp"

namespace deepcae {

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw ConfigError("no column named '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text) {
    if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);

    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        // A bare empty line is not a record.
        if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started && !field.empty())
                throw ConfigError("csv line " + std::to_string(line) + ": quote inside unquoted field");
            quoted = true;
            field_started = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_record();
            ++line;
            break;
        case '\n':
            end_record();
            ++line;
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw ConfigError("csv: unterminated quoted field");
    if (field_started || !record.empty()) end_record();

    if (records.empty()) throw ConfigError("csv: empty input (a header row is required)");
    CsvTable t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size())
            throw ConfigError("csv record " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                              " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::string csv_field(std::string_view value) {
    if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace deepcae
