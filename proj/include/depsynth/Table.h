#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "depsynth/Errors.h"

namespace depsynth {

enum class FeatureKind { Numerical, Categorical };

const char* featureKindName(FeatureKind kind);

// One scalar cell. `kind` selects which payload is meaningful.
struct Value {
    FeatureKind kind = FeatureKind::Numerical;
    double num = 0.0;
    std::string cat;

    static Value numerical(double v) { return Value{FeatureKind::Numerical, v, {}}; }
    static Value categorical(std::string v) { return Value{FeatureKind::Categorical, 0.0, std::move(v)}; }
};

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::Numerical;
};

// Ordered feature list with unique, non-empty names.
class Schema {
public:
    Schema() = default;
    explicit Schema(std::vector<FeatureSpec> features);

    int size() const { return static_cast<int>(features_.size()); }
    const FeatureSpec& at(int column) const;
    int indexOf(const std::string& name) const;  // throws Schema error when unknown
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const std::vector<FeatureSpec>& features() const { return features_; }

    // Canonical one-line-per-feature rendering; basis of the fingerprint that
    // model archives use to detect schema drift.
    std::string canonicalText() const;
    std::uint64_t fingerprint() const;

private:
    std::vector<FeatureSpec> features_;
    std::map<std::string, int> index_;
};

// Column-major table. Every column holds exactly the vector matching its kind.
class Table {
public:
    Table() = default;
    explicit Table(Schema schema);

    const Schema& schema() const { return schema_; }
    std::size_t rowCount() const { return rows_; }

    const std::vector<double>& numeric(int column) const;
    const std::vector<std::string>& categorical(int column) const;
    Value value(std::size_t row, int column) const;

    void appendRow(const std::vector<Value>& row);
    void reserve(std::size_t rows);

private:
    struct Column {
        std::vector<double> nums;
        std::vector<std::string> cats;
    };

    Schema schema_;
    std::vector<Column> columns_;
    std::size_t rows_ = 0;
};

// Per-column normalization state fitted on one table: numeric [min, max] ranges
// and categorical supports in first-occurrence order.
class NormStats {
public:
    NormStats() = default;

    double normalize(int column, double v) const;    // min-max; constant columns map to 0
    double denormalize(int column, double t) const;
    double minOf(int column) const;
    double maxOf(int column) const;

    int code(int column, const std::string& category) const;  // throws on unseen category
    const std::string& category(int column, int code) const;
    int supportSize(int column) const;
    const std::vector<std::string>& support(int column) const;

    const Schema& schema() const { return schema_; }

    // Reconstructs stats from archived ranges/supports (model deserialization).
    static NormStats fromSaved(const Schema& schema,
                               const std::vector<std::pair<double, double>>& ranges,
                               const std::vector<std::vector<std::string>>& supports);

    friend NormStats fitNormStats(const Table& table);

private:
    struct ColumnStats {
        double min = 0.0;
        double max = 0.0;
        std::vector<std::string> support;
        std::map<std::string, int> codeOf;
    };

    Schema schema_;
    std::vector<ColumnStats> columns_;
};

NormStats fitNormStats(const Table& table);

// --- CSV ingest / egress -----------------------------------------------------

struct CsvLoadReport {
    std::size_t rejectedRows = 0;  // rows dropped for containing a missing (empty) cell
};

// Raw RFC-4180-style parse: quoted fields, doubled-quote escapes, embedded
// commas/newlines, CRLF tolerance. First record is the header.
std::vector<std::vector<std::string>> parseCsvFile(const std::string& path);
std::vector<std::vector<std::string>> parseCsvText(const std::string& text);

// Kind inference over raw cells. A column is Numerical iff every non-missing
// cell parses as a finite real AND (more than 10 distinct values OR at least
// one non-integer value); otherwise Categorical. Hints override per column.
Schema inferSchema(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows,
                   const std::map<std::string, FeatureKind>& hints = {});

Schema inferSchemaFromCsv(const std::string& path,
                          const std::map<std::string, FeatureKind>& hints = {});

// Loads a CSV whose header must match `schema` exactly (names and order).
// Rows containing any empty cell are rejected and counted in the report;
// unparseable numeric cells are hard errors.
Table loadCsv(const std::string& path, const Schema& schema, CsvLoadReport* report = nullptr);

// Convenience: infer + load in one pass.
Table loadCsvInferred(const std::string& path,
                      const std::map<std::string, FeatureKind>& hints = {},
                      CsvLoadReport* report = nullptr);

// Writes RFC-4180 CSV. Numeric cells carry 17 significant digits so that a
// load/write/load cycle reproduces every double exactly.
void writeCsv(const Table& table, const std::string& path);
std::string csvText(const Table& table);

std::string formatNumericCell(double v);
bool parseNumericCell(const std::string& cell, double* out);

}  // namespace depsynth
