#pragma once

// Tabular CSV ingestion (RFC-4180) with a declared column schema.
//
// Numeric columns are parsed as doubles; empty cells are imputed with the
// median of the rows the encoding was fitted on. Categorical columns are
// ordinal-encoded by order of first appearance in the fit rows; a value not
// in the dictionary maps to the reserved index equal to the dictionary size.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "comet/errors.hpp"
#include "comet/types.hpp"

namespace comet {

struct TabularSchema {
    std::string id_column;  // empty: ids are row numbers "0", "1", ...
    std::vector<std::string> numeric;
    std::vector<std::string> categorical;
};

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

enum class ColumnKind { numeric, categorical };

struct ColumnEncoding {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    double median = 0.0;
    std::vector<std::string> categories;  // index = code

    int code_of(const std::string& value) const {
        const auto it = std::find(categories.begin(), categories.end(), value);
        return it == categories.end() ? static_cast<int>(categories.size())
                                      : static_cast<int>(it - categories.begin());
    }
};

// Column encodings in output column order: numeric columns first, then
// categorical, each group in schema order.
struct TabularEncoding {
    std::string id_column;
    std::vector<ColumnEncoding> columns;
};

inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };
    while (i < text.size()) {
        const char ch = text[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (ch == ',') {
            end_field();
        } else if (ch == '\r' || ch == '\n') {
            if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_record();
        } else {
            field.push_back(ch);
            field_started = true;
        }
        ++i;
    }
    if (in_quotes) throw FormatError("unterminated quoted CSV field");
    if (field_started || !record.empty()) end_record();
    return records;
}

inline RawTable read_csv_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    auto records = parse_csv(buf.str());
    if (records.empty()) throw FormatError("CSV " + path.string() + " has no header row");
    RawTable t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() == 1 && records[r][0].empty()) continue;  // blank line
        if (records[r].size() != t.header.size())
            throw FormatError("CSV row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                              " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

namespace tabular_detail {

inline std::size_t column_index(const RawTable& t, const std::string& name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw SchemaError("unknown column '" + name + "'");
    return static_cast<std::size_t>(it - t.header.begin());
}

inline std::optional<double> parse_number(const std::string& cell) {
    std::string_view s(cell);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw DataError("unparseable numeric cell '" + cell + "'");
    return v;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace tabular_detail

// Fit medians and category dictionaries on the given rows (all rows if empty).
inline TabularEncoding fit_tabular_encoding(const RawTable& t, const TabularSchema& schema,
                                            const std::vector<std::size_t>& fit_rows = {}) {
    std::vector<std::size_t> rows = fit_rows;
    if (rows.empty()) {
        rows.resize(t.rows.size());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    if (!schema.id_column.empty()) tabular_detail::column_index(t, schema.id_column);
    TabularEncoding enc;
    enc.id_column = schema.id_column;
    for (const auto& name : schema.numeric) {
        const auto col = tabular_detail::column_index(t, name);
        std::vector<double> present;
        for (auto r : rows)
            if (auto v = tabular_detail::parse_number(t.rows[r][col])) present.push_back(*v);
        enc.columns.push_back({name, ColumnKind::numeric, tabular_detail::median(std::move(present)), {}});
    }
    for (const auto& name : schema.categorical) {
        const auto col = tabular_detail::column_index(t, name);
        ColumnEncoding ce{name, ColumnKind::categorical, 0.0, {}};
        for (auto r : rows) {
            const auto& v = t.rows[r][col];
            if (std::find(ce.categories.begin(), ce.categories.end(), v) == ce.categories.end())
                ce.categories.push_back(v);
        }
        enc.columns.push_back(std::move(ce));
    }
    return enc;
}

inline FeatureMatrix encode_tabular(const RawTable& t, const TabularEncoding& enc) {
    FeatureMatrix m;
    m.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(enc.columns.size()));
    std::optional<std::size_t> id_col;
    if (!enc.id_column.empty()) id_col = tabular_detail::column_index(t, enc.id_column);
    for (std::size_t j = 0; j < enc.columns.size(); ++j) {
        const auto& ce = enc.columns[j];
        const auto col = tabular_detail::column_index(t, ce.name);
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto& cell = t.rows[r][col];
            double v;
            if (ce.kind == ColumnKind::numeric) {
                v = tabular_detail::parse_number(cell).value_or(ce.median);
            } else {
                v = static_cast<double>(ce.code_of(cell));
            }
            m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
        }
    }
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        m.sample_ids.push_back(id_col ? t.rows[r][*id_col] : std::to_string(r));
    if (m.n() == 0) throw DataError("tabular file has no data rows");
    m.validate();
    return m;
}

// Read a CSV and encode it. With `encoding` null the dictionary and medians
// are fitted on the whole file; otherwise the given encoding is applied.
inline FeatureMatrix read_tabular_csv(const std::filesystem::path& path, const TabularSchema& schema,
                                      TabularEncoding* fitted = nullptr, const TabularEncoding* encoding = nullptr) {
    const auto table = read_csv_table(path);
    const TabularEncoding enc = encoding ? *encoding : fit_tabular_encoding(table, schema);
    if (fitted) *fitted = enc;
    return encode_tabular(table, enc);
}

inline nlohmann::json to_json(const TabularEncoding& enc) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : enc.columns) {
        nlohmann::json j{{"name", c.name}, {"kind", c.kind == ColumnKind::numeric ? "numeric" : "categorical"}};
        if (c.kind == ColumnKind::numeric)
            j["median"] = c.median;
        else
            j["categories"] = c.categories;
        cols.push_back(std::move(j));
    }
    return {{"id_column", enc.id_column}, {"columns", cols}};
}

inline TabularEncoding tabular_encoding_from_json(const nlohmann::json& j) {
    TabularEncoding enc;
    try {
        enc.id_column = j.at("id_column").get<std::string>();
        for (const auto& c : j.at("columns")) {
            ColumnEncoding ce;
            ce.name = c.at("name").get<std::string>();
            const auto kind = c.at("kind").get<std::string>();
            if (kind == "numeric") {
                ce.kind = ColumnKind::numeric;
                ce.median = c.at("median").get<double>();
            } else if (kind == "categorical") {
                ce.kind = ColumnKind::categorical;
                ce.categories = c.at("categories").get<std::vector<std::string>>();
            } else {
                throw SchemaError("unknown column kind '" + kind + "'");
            }
            enc.columns.push_back(std::move(ce));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed tabular encoding: ") + e.what());
    }
    return enc;
}

}  // namespace comet
