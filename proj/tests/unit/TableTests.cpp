#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "Fixtures.h"
#include "depsynth/Table.h"

using namespace depsynth;
using namespace depsynth::testfix;

namespace {

Schema inferColumn(const std::vector<std::string>& cells) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(cells.size());
    for (const auto& cell : cells) rows.push_back({cell});
    return inferSchema({"col"}, rows);
}

}  // namespace

TEST_CASE("schema inference follows the numeric decision rule") {
    CHECK(inferColumn({"1.5", "2.0", "3.7"}).at(0).kind == FeatureKind::Numerical);
    CHECK(inferColumn({"yes", "no", "yes"}).at(0).kind == FeatureKind::Categorical);
    CHECK(inferColumn({"0", "1", "0", "1"}).at(0).kind == FeatureKind::Categorical);

    // Exactly 10 distinct integers is still categorical; 11 flips to numerical.
    std::vector<std::string> ten, eleven;
    for (int i = 1; i <= 10; ++i) ten.push_back(std::to_string(i));
    for (int i = 1; i <= 11; ++i) eleven.push_back(std::to_string(i));
    CHECK(inferColumn(ten).at(0).kind == FeatureKind::Categorical);
    CHECK(inferColumn(eleven).at(0).kind == FeatureKind::Numerical);

    // A single non-integer value forces numerical regardless of distinct count.
    CHECK(inferColumn({"1", "2", "2.5"}).at(0).kind == FeatureKind::Numerical);

    // An all-missing column defaults to categorical (no kind evidence).
    CHECK(inferColumn({"", "", ""}).at(0).kind == FeatureKind::Categorical);
}

TEST_CASE("schema hints override inference in both directions") {
    const std::vector<std::vector<std::string>> rows = {{"1", "3.5"}, {"2", "4.5"}};
    const Schema plain = inferSchema({"a", "b"}, rows);
    CHECK(plain.at(0).kind == FeatureKind::Categorical);
    CHECK(plain.at(1).kind == FeatureKind::Numerical);

    const Schema hinted = inferSchema({"a", "b"}, rows,
                                      {{"a", FeatureKind::Numerical}, {"b", FeatureKind::Categorical}});
    CHECK(hinted.at(0).kind == FeatureKind::Numerical);
    CHECK(hinted.at(1).kind == FeatureKind::Categorical);

    const auto e = expectError([&] { inferSchema({"a"}, rows, {{"zzz", FeatureKind::Numerical}}); });
    CHECK(e.category() == ErrorCategory::Schema);
    CHECK(contains(e.what(), "zzz"));
}

TEST_CASE("schema construction rejects empty and duplicate names") {
    CHECK(expectError([] { Schema(std::vector<FeatureSpec>{}); }).category() == ErrorCategory::Schema);
    CHECK(expectError([] {
              Schema({{"a", FeatureKind::Numerical}, {"a", FeatureKind::Categorical}});
          }).category() == ErrorCategory::Schema);
    CHECK(expectError([] { Schema({{"", FeatureKind::Numerical}}); }).category() ==
          ErrorCategory::Schema);

    const Schema s({{"a", FeatureKind::Numerical}});
    CHECK(expectError([&] { s.indexOf("missing"); }).category() == ErrorCategory::Schema);
}

TEST_CASE("iris csv loads with 150 rows and the expected kinds") {
    const Table iris = loadCsvInferred(dataPath("iris.csv"));
    CHECK(iris.rowCount() == 150);
    CHECK(iris.schema().size() == 5);
    for (int c = 0; c < 4; ++c) CHECK(iris.schema().at(c).kind == FeatureKind::Numerical);
    CHECK(iris.schema().at(4).name == "Species");
    CHECK(iris.schema().at(4).kind == FeatureKind::Categorical);
    const NormStats stats = fitNormStats(iris);
    CHECK(stats.supportSize(4) == 3);
}

TEST_CASE("csv ingest errors carry location details") {
    TempDir dir;

    SUBCASE("header-only file") {
        writeFileText(dir.file("empty.csv"), "a,b\n");
        const auto e = expectError([&] { loadCsvInferred(dir.file("empty.csv")); });
        CHECK(e.category() == ErrorCategory::Parse);
        CHECK(contains(e.what(), "no usable data rows"));
    }

    SUBCASE("unparseable numeric cell names the row and feature") {
        writeFileText(dir.file("bad.csv"), "x,y\n1.5,ok\nabc,ok\n");
        const Schema schema({{"x", FeatureKind::Numerical}, {"y", FeatureKind::Categorical}});
        const auto e = expectError([&] { loadCsv(dir.file("bad.csv"), schema); });
        CHECK(e.category() == ErrorCategory::Parse);
        CHECK(contains(e.what(), "row 2"));
        CHECK(contains(e.what(), "'x'"));
        CHECK(contains(e.what(), "abc"));
    }

    SUBCASE("header mismatch against the requested schema") {
        writeFileText(dir.file("head.csv"), "x,z\n1,2\n");
        const Schema schema({{"x", FeatureKind::Numerical}, {"y", FeatureKind::Numerical}});
        const auto e = expectError([&] { loadCsv(dir.file("head.csv"), schema); });
        CHECK(e.category() == ErrorCategory::Schema);
        CHECK(contains(e.what(), "expected 'y'"));
    }

    SUBCASE("rows with missing cells are rejected and counted") {
        writeFileText(dir.file("gap.csv"), "x,y\n1,a\n,b\n3,\n4,d\n");
        CsvLoadReport report;
        const Schema schema({{"x", FeatureKind::Numerical}, {"y", FeatureKind::Categorical}});
        const Table t = loadCsv(dir.file("gap.csv"), schema, &report);
        CHECK(t.rowCount() == 2);
        CHECK(report.rejectedRows == 2);
    }
}

TEST_CASE("norm stats expose extrema, first-occurrence supports, and constants") {
    Schema schema({{"num", FeatureKind::Numerical}, {"cat", FeatureKind::Categorical},
                   {"flat", FeatureKind::Numerical}});
    Table t(schema);
    const std::vector<double> nums = {2.0, 4.0, 10.0};
    const std::vector<std::string> cats = {"b", "a", "b"};
    for (std::size_t r = 0; r < nums.size(); ++r) {
        t.appendRow({Value::numerical(nums[r]), Value::categorical(cats[r]), Value::numerical(5.0)});
    }
    const NormStats stats = fitNormStats(t);

    CHECK(stats.minOf(0) == 2.0);
    CHECK(stats.maxOf(0) == 10.0);
    CHECK(stats.normalize(0, 2.0) == 0.0);
    CHECK(stats.normalize(0, 10.0) == 1.0);
    CHECK(stats.normalize(0, 6.0) == doctest::Approx(0.5));
    CHECK(stats.denormalize(0, 0.5) == doctest::Approx(6.0));

    CHECK(stats.support(1) == std::vector<std::string>{"b", "a"});
    CHECK(stats.code(1, "b") == 0);
    CHECK(stats.code(1, "a") == 1);
    CHECK(stats.category(1, 0) == "b");
    CHECK(stats.category(1, 1) == "a");
    CHECK(expectError([&] { stats.code(1, "zzz"); }).category() == ErrorCategory::Schema);

    // Constant column: min == max, every value normalizes to 0.
    CHECK(stats.minOf(2) == 5.0);
    CHECK(stats.maxOf(2) == 5.0);
    CHECK(stats.normalize(2, 5.0) == 0.0);
    CHECK(stats.normalize(2, 123.0) == 0.0);

    // Encoding bijection over the whole support.
    for (int code = 0; code < stats.supportSize(1); ++code) {
        CHECK(stats.code(1, stats.category(1, code)) == code);
    }
}

TEST_CASE("csv round trip preserves doubles and quoted categories") {
    Schema schema({{"v", FeatureKind::Numerical}, {"label", FeatureKind::Categorical}});
    Table t(schema);
    t.appendRow({Value::numerical(0.1 + 0.2), Value::categorical("with,comma")});
    t.appendRow({Value::numerical(-1.0 / 3.0), Value::categorical("with \"quote\"")});
    t.appendRow({Value::numerical(1e-300), Value::categorical("line\nbreak")});

    TempDir dir;
    writeCsv(t, dir.file("roundtrip.csv"));
    const Table back = loadCsv(dir.file("roundtrip.csv"), schema);

    REQUIRE(back.rowCount() == t.rowCount());
    for (std::size_t r = 0; r < t.rowCount(); ++r) {
        CHECK(std::abs(back.numeric(0)[r] - t.numeric(0)[r]) <= 1e-12);
        CHECK(back.categorical(1)[r] == t.categorical(1)[r]);
    }

    // 17 significant digits make the write/load cycle exact for this value.
    CHECK(formatNumericCell(0.1 + 0.2) == "0.30000000000000004");
    double parsed = 0.0;
    REQUIRE(parseNumericCell(formatNumericCell(0.1 + 0.2), &parsed));
    CHECK(parsed == 0.1 + 0.2);
}

TEST_CASE("csv parser handles quotes, CRLF, and embedded separators") {
    const auto records = parseCsvText("a,b\r\n\"x,1\",\"he said \"\"hi\"\"\"\r\nplain,last\n");
    REQUIRE(records.size() == 3);
    CHECK(records[1][0] == "x,1");
    CHECK(records[1][1] == "he said \"hi\"");
    CHECK(records[2][0] == "plain");

    CHECK(expectError([] { parseCsvText("a,b\n\"open,1\n"); }).category() == ErrorCategory::Parse);
}

TEST_CASE("table value access enforces kinds and bounds") {
    Schema schema({{"x", FeatureKind::Numerical}, {"c", FeatureKind::Categorical}});
    Table t(schema);
    t.appendRow({Value::numerical(1.0), Value::categorical("a")});

    CHECK(t.value(0, 0).num == 1.0);
    CHECK(t.value(0, 1).cat == "a");
    CHECK(expectError([&] { t.numeric(1); }).category() == ErrorCategory::Schema);
    CHECK(expectError([&] { t.categorical(0); }).category() == ErrorCategory::Schema);
    CHECK(expectError([&] { t.value(5, 0); }).category() == ErrorCategory::Schema);
    CHECK(expectError([&] { t.appendRow({Value::numerical(1.0)}); }).category() ==
          ErrorCategory::Schema);
    CHECK(expectError([&] {
              t.appendRow({Value::categorical("x"), Value::categorical("a")});
          }).category() == ErrorCategory::Schema);
}

TEST_CASE("schema fingerprints track names, kinds, and order") {
    const Schema a({{"x", FeatureKind::Numerical}, {"y", FeatureKind::Categorical}});
    const Schema same({{"x", FeatureKind::Numerical}, {"y", FeatureKind::Categorical}});
    const Schema kindFlip({{"x", FeatureKind::Categorical}, {"y", FeatureKind::Categorical}});
    const Schema reordered({{"y", FeatureKind::Categorical}, {"x", FeatureKind::Numerical}});
    CHECK(a.fingerprint() == same.fingerprint());
    CHECK(a.fingerprint() != kindFlip.fingerprint());
    CHECK(a.fingerprint() != reordered.fingerprint());
}
