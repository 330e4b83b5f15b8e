#include "depsynth/Table.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "depsynth/Rng.h"

namespace depsynth {

namespace {

constexpr int kMaxDistinctForCategorical = 10;

std::string trimmed(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

const char* featureKindName(FeatureKind kind) {
    return kind == FeatureKind::Numerical ? "numerical" : "categorical";
}

// --- Schema -------------------------------------------------------------------

Schema::Schema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
    if (features_.empty()) raise(ErrorCategory::Schema, "schema must contain at least one feature");
    for (int i = 0; i < static_cast<int>(features_.size()); ++i) {
        const std::string& name = features_[i].name;
        if (name.empty()) raise(ErrorCategory::Schema, "feature name must not be empty");
        if (!index_.emplace(name, i).second) {
            raise(ErrorCategory::Schema, "duplicate feature name: " + name);
        }
    }
}

const FeatureSpec& Schema::at(int column) const {
    if (column < 0 || column >= size()) {
        raise(ErrorCategory::Schema, "feature index out of range: " + std::to_string(column));
    }
    return features_[static_cast<std::size_t>(column)];
}

int Schema::indexOf(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) raise(ErrorCategory::Schema, "unknown feature: " + name);
    return it->second;
}

std::string Schema::canonicalText() const {
    std::string out;
    for (const FeatureSpec& f : features_) {
        out += f.name;
        out += '\x1f';
        out += featureKindName(f.kind);
        out += '\n';
    }
    return out;
}

std::uint64_t Schema::fingerprint() const { return fnv1a64(canonicalText()); }

// --- Table ----------------------------------------------------------------------

Table::Table(Schema schema) : schema_(std::move(schema)) {
    columns_.resize(static_cast<std::size_t>(schema_.size()));
}

const std::vector<double>& Table::numeric(int column) const {
    if (schema_.at(column).kind != FeatureKind::Numerical) {
        raise(ErrorCategory::Schema, "feature is not numerical: " + schema_.at(column).name);
    }
    return columns_[static_cast<std::size_t>(column)].nums;
}

const std::vector<std::string>& Table::categorical(int column) const {
    if (schema_.at(column).kind != FeatureKind::Categorical) {
        raise(ErrorCategory::Schema, "feature is not categorical: " + schema_.at(column).name);
    }
    return columns_[static_cast<std::size_t>(column)].cats;
}

Value Table::value(std::size_t row, int column) const {
    if (row >= rows_) raise(ErrorCategory::Schema, "row index out of range");
    const FeatureSpec& spec = schema_.at(column);
    if (spec.kind == FeatureKind::Numerical) {
        return Value::numerical(columns_[static_cast<std::size_t>(column)].nums[row]);
    }
    return Value::categorical(columns_[static_cast<std::size_t>(column)].cats[row]);
}

void Table::appendRow(const std::vector<Value>& row) {
    if (static_cast<int>(row.size()) != schema_.size()) {
        raise(ErrorCategory::Schema, "row width does not match schema");
    }
    for (int c = 0; c < schema_.size(); ++c) {
        const FeatureSpec& spec = schema_.at(c);
        if (row[static_cast<std::size_t>(c)].kind != spec.kind) {
            raise(ErrorCategory::Schema, "cell kind mismatch for feature " + spec.name);
        }
        Column& col = columns_[static_cast<std::size_t>(c)];
        if (spec.kind == FeatureKind::Numerical) {
            col.nums.push_back(row[static_cast<std::size_t>(c)].num);
        } else {
            col.cats.push_back(row[static_cast<std::size_t>(c)].cat);
        }
    }
    ++rows_;
}

void Table::reserve(std::size_t rows) {
    for (int c = 0; c < schema_.size(); ++c) {
        if (schema_.at(c).kind == FeatureKind::Numerical) {
            columns_[static_cast<std::size_t>(c)].nums.reserve(rows);
        } else {
            columns_[static_cast<std::size_t>(c)].cats.reserve(rows);
        }
    }
}

// --- NormStats --------------------------------------------------------------------

NormStats fitNormStats(const Table& table) {
    if (table.rowCount() == 0) raise(ErrorCategory::Schema, "cannot fit normalization stats on an empty table");
    NormStats stats;
    stats.schema_ = table.schema();
    stats.columns_.resize(static_cast<std::size_t>(table.schema().size()));
    for (int c = 0; c < table.schema().size(); ++c) {
        NormStats::ColumnStats& cs = stats.columns_[static_cast<std::size_t>(c)];
        if (table.schema().at(c).kind == FeatureKind::Numerical) {
            const std::vector<double>& xs = table.numeric(c);
            cs.min = *std::min_element(xs.begin(), xs.end());
            cs.max = *std::max_element(xs.begin(), xs.end());
        } else {
            for (const std::string& v : table.categorical(c)) {
                if (cs.codeOf.emplace(v, static_cast<int>(cs.support.size())).second) {
                    cs.support.push_back(v);
                }
            }
        }
    }
    return stats;
}

NormStats NormStats::fromSaved(const Schema& schema,
                               const std::vector<std::pair<double, double>>& ranges,
                               const std::vector<std::vector<std::string>>& supports) {
    if (static_cast<int>(ranges.size()) != schema.size() ||
        static_cast<int>(supports.size()) != schema.size()) {
        raise(ErrorCategory::Model, "archived normalization stats do not match the schema width");
    }
    NormStats stats;
    stats.schema_ = schema;
    stats.columns_.resize(static_cast<std::size_t>(schema.size()));
    for (int c = 0; c < schema.size(); ++c) {
        ColumnStats& cs = stats.columns_[static_cast<std::size_t>(c)];
        if (schema.at(c).kind == FeatureKind::Numerical) {
            cs.min = ranges[static_cast<std::size_t>(c)].first;
            cs.max = ranges[static_cast<std::size_t>(c)].second;
        } else {
            for (const std::string& v : supports[static_cast<std::size_t>(c)]) {
                if (!cs.codeOf.emplace(v, static_cast<int>(cs.support.size())).second) {
                    raise(ErrorCategory::Model, "archived support has duplicates for " + schema.at(c).name);
                }
                cs.support.push_back(v);
            }
            if (cs.support.empty()) {
                raise(ErrorCategory::Model, "archived support is empty for " + schema.at(c).name);
            }
        }
    }
    return stats;
}

double NormStats::normalize(int column, double v) const {
    const ColumnStats& cs = columns_[static_cast<std::size_t>(column)];
    const double range = cs.max - cs.min;
    if (range <= 0.0) return 0.0;
    return (v - cs.min) / range;
}

double NormStats::denormalize(int column, double t) const {
    const ColumnStats& cs = columns_[static_cast<std::size_t>(column)];
    return cs.min + t * (cs.max - cs.min);
}

double NormStats::minOf(int column) const { return columns_[static_cast<std::size_t>(column)].min; }
double NormStats::maxOf(int column) const { return columns_[static_cast<std::size_t>(column)].max; }

int NormStats::code(int column, const std::string& category) const {
    const ColumnStats& cs = columns_[static_cast<std::size_t>(column)];
    auto it = cs.codeOf.find(category);
    if (it == cs.codeOf.end()) {
        raise(ErrorCategory::Schema,
              "category not in fitted support of " + schema_.at(column).name + ": " + category);
    }
    return it->second;
}

const std::string& NormStats::category(int column, int code) const {
    const ColumnStats& cs = columns_[static_cast<std::size_t>(column)];
    if (code < 0 || code >= static_cast<int>(cs.support.size())) {
        raise(ErrorCategory::Schema, "category code out of range for " + schema_.at(column).name);
    }
    return cs.support[static_cast<std::size_t>(code)];
}

int NormStats::supportSize(int column) const {
    return static_cast<int>(columns_[static_cast<std::size_t>(column)].support.size());
}

const std::vector<std::string>& NormStats::support(int column) const {
    return columns_[static_cast<std::size_t>(column)].support;
}

// --- CSV -----------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> parseCsvStream(const std::string& text, const std::string& origin) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool inQuotes = false;
    bool fieldWasQuoted = false;
    bool anyField = false;

    auto endField = [&] {
        record.push_back(field);
        field.clear();
        fieldWasQuoted = false;
        anyField = true;
    };
    auto endRecord = [&] {
        endField();
        records.push_back(record);
        record.clear();
        anyField = false;
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (inQuotes) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    inQuotes = false;
                }
            } else {
                field += ch;
            }
            continue;
        }
        switch (ch) {
            case '"':
                if (!field.empty() || fieldWasQuoted) {
                    raise(ErrorCategory::Parse, origin + ": stray quote inside unquoted field");
                }
                inQuotes = true;
                fieldWasQuoted = true;
                break;
            case ',':
                endField();
                break;
            case '\r':
                break;  // tolerate CRLF
            case '\n':
                endRecord();
                break;
            default:
                field += ch;
        }
    }
    if (inQuotes) raise(ErrorCategory::Parse, origin + ": unterminated quoted field");
    if (!field.empty() || fieldWasQuoted || anyField) endRecord();
    return records;
}

}  // namespace

std::vector<std::vector<std::string>> parseCsvText(const std::string& text) {
    return parseCsvStream(text, "csv");
}

std::vector<std::vector<std::string>> parseCsvFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCategory::Io, "cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parseCsvStream(buf.str(), path);
}

bool parseNumericCell(const std::string& cell, double* out) {
    const std::string t = trimmed(cell);
    if (t.empty()) return false;
    const char* begin = t.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end != begin + t.size()) return false;
    if (!std::isfinite(v)) return false;
    *out = v;
    return true;
}

std::string formatNumericCell(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Schema inferSchema(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows,
                   const std::map<std::string, FeatureKind>& hints) {
    if (header.empty()) raise(ErrorCategory::Parse, "csv header is empty");
    for (const auto& hint : hints) {
        if (std::find(header.begin(), header.end(), hint.first) == header.end()) {
            raise(ErrorCategory::Schema, "schema hint references unknown feature: " + hint.first);
        }
    }
    std::vector<FeatureSpec> specs;
    specs.reserve(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        FeatureSpec spec;
        spec.name = header[c];
        auto hint = hints.find(spec.name);
        if (hint != hints.end()) {
            spec.kind = hint->second;
            specs.push_back(spec);
            continue;
        }
        bool allNumeric = true;
        bool anyNonInteger = false;
        std::set<double> distinct;
        for (const auto& row : rows) {
            if (c >= row.size()) continue;
            const std::string& cell = row[c];
            if (trimmed(cell).empty()) continue;  // missing cells carry no kind evidence
            double v = 0.0;
            if (!parseNumericCell(cell, &v)) {
                allNumeric = false;
                break;
            }
            distinct.insert(v);
            if (v != std::trunc(v)) anyNonInteger = true;
        }
        const bool numerical =
            allNumeric && !distinct.empty() &&
            (static_cast<int>(distinct.size()) > kMaxDistinctForCategorical || anyNonInteger);
        spec.kind = numerical ? FeatureKind::Numerical : FeatureKind::Categorical;
        specs.push_back(spec);
    }
    return Schema(std::move(specs));
}

Schema inferSchemaFromCsv(const std::string& path, const std::map<std::string, FeatureKind>& hints) {
    auto records = parseCsvFile(path);
    if (records.empty()) raise(ErrorCategory::Parse, path + ": file holds no csv records");
    std::vector<std::string> header = records.front();
    records.erase(records.begin());
    return inferSchema(header, records, hints);
}

namespace {

Table buildTable(const std::vector<std::vector<std::string>>& records, const Schema& schema,
                 const std::string& origin, CsvLoadReport* report) {
    if (records.empty()) raise(ErrorCategory::Parse, origin + ": file holds no csv records");
    const std::vector<std::string>& header = records.front();
    if (static_cast<int>(header.size()) != schema.size()) {
        raise(ErrorCategory::Schema, origin + ": header width does not match schema");
    }
    for (int c = 0; c < schema.size(); ++c) {
        if (header[static_cast<std::size_t>(c)] != schema.at(c).name) {
            raise(ErrorCategory::Schema, origin + ": header column " + std::to_string(c + 1) +
                                             " is '" + header[static_cast<std::size_t>(c)] +
                                             "', expected '" + schema.at(c).name + "'");
        }
    }

    Table table(schema);
    table.reserve(records.size() - 1);
    std::size_t rejected = 0;
    std::vector<Value> row(static_cast<std::size_t>(schema.size()));
    for (std::size_t r = 1; r < records.size(); ++r) {
        const std::vector<std::string>& cells = records[r];
        if (static_cast<int>(cells.size()) != schema.size()) {
            raise(ErrorCategory::Parse, origin + ": row " + std::to_string(r) + " has " +
                                            std::to_string(cells.size()) + " cells, expected " +
                                            std::to_string(schema.size()));
        }
        bool missing = false;
        for (const std::string& cell : cells) {
            if (trimmed(cell).empty()) {
                missing = true;
                break;
            }
        }
        if (missing) {
            ++rejected;
            continue;
        }
        for (int c = 0; c < schema.size(); ++c) {
            const std::string& cell = cells[static_cast<std::size_t>(c)];
            if (schema.at(c).kind == FeatureKind::Numerical) {
                double v = 0.0;
                if (!parseNumericCell(cell, &v)) {
                    raise(ErrorCategory::Parse, origin + ": row " + std::to_string(r) +
                                                    ", feature '" + schema.at(c).name +
                                                    "': cannot parse numeric cell '" + cell + "'");
                }
                row[static_cast<std::size_t>(c)] = Value::numerical(v);
            } else {
                row[static_cast<std::size_t>(c)] = Value::categorical(cell);
            }
        }
        table.appendRow(row);
    }
    if (report != nullptr) report->rejectedRows = rejected;
    if (table.rowCount() == 0) {
        raise(ErrorCategory::Parse, origin + ": no usable data rows (all rows missing or file empty)");
    }
    return table;
}

}  // namespace

Table loadCsv(const std::string& path, const Schema& schema, CsvLoadReport* report) {
    return buildTable(parseCsvFile(path), schema, path, report);
}

Table loadCsvInferred(const std::string& path, const std::map<std::string, FeatureKind>& hints,
                      CsvLoadReport* report) {
    auto records = parseCsvFile(path);
    if (records.empty()) raise(ErrorCategory::Parse, path + ": file holds no csv records");
    std::vector<std::vector<std::string>> body(records.begin() + 1, records.end());
    Schema schema = inferSchema(records.front(), body, hints);
    return buildTable(records, schema, path, report);
}

namespace {

void appendCsvField(std::string& out, const std::string& field) {
    const bool needsQuotes = field.find_first_of(",\"\r\n") != std::string::npos;
    if (!needsQuotes) {
        out += field;
        return;
    }
    out += '"';
    for (char ch : field) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
}

}  // namespace

std::string csvText(const Table& table) {
    std::string out;
    const Schema& schema = table.schema();
    for (int c = 0; c < schema.size(); ++c) {
        if (c > 0) out += ',';
        appendCsvField(out, schema.at(c).name);
    }
    out += '\n';
    for (std::size_t r = 0; r < table.rowCount(); ++r) {
        for (int c = 0; c < schema.size(); ++c) {
            if (c > 0) out += ',';
            if (schema.at(c).kind == FeatureKind::Numerical) {
                out += formatNumericCell(table.numeric(c)[r]);
            } else {
                appendCsvField(out, table.categorical(c)[r]);
            }
        }
        out += '\n';
    }
    return out;
}

void writeCsv(const Table& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCategory::Io, "cannot write file: " + path);
    out << csvText(table);
    if (!out) raise(ErrorCategory::Io, "failed while writing file: " + path);
}

}  // namespace depsynth
