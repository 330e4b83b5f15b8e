#include "Fixtures.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "depsynth/Errors.h"
#include "depsynth/Rng.h"

namespace depsynth::testfix {

namespace {

// Draws an index from cumulative weights summing to 1.
int weightedIndex(const std::vector<double>& weights, std::mt19937_64& rng) {
    const double u = uniformDouble(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
}

double clampTo(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

}  // namespace

std::string dataPath(const std::string& name) {
    return std::string(DEPSYNTH_DATA_DIR) + "/" + name;
}

std::string readFileText(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCategory::Io, "fixture cannot read: " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void writeFileText(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCategory::Io, "fixture cannot write: " + path);
    out << text;
}

TempDir::TempDir() {
    static std::uint64_t counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    std::filesystem::path dir;
    do {
        dir = base / ("depsynth-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    } while (std::filesystem::exists(dir));
    std::filesystem::create_directories(dir);
    path_ = dir.string();
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string TempDir::file(const std::string& name) const { return path_ + "/" + name; }

Table makeCensusTable(std::size_t n, std::uint64_t seed) {
    const std::vector<std::string> education = {"HS-grad",   "Some-college", "Assoc-voc",
                                                "Assoc-acdm", "Bachelors",    "Masters",
                                                "Prof-school", "Doctorate"};
    const std::vector<std::string> eduNum = {"9", "10", "11", "12", "13", "14", "15", "16"};
    const std::vector<double> weights = {0.30, 0.22, 0.14, 0.10, 0.12, 0.06, 0.03, 0.03};

    Schema schema({{"age", FeatureKind::Numerical},
                   {"education", FeatureKind::Categorical},
                   {"educational-num", FeatureKind::Categorical},
                   {"hours-per-week", FeatureKind::Numerical},
                   {"income", FeatureKind::Categorical}});
    Table table(schema);
    table.reserve(n);
    std::mt19937_64 rng = makeRng(seed);
    for (std::size_t r = 0; r < n; ++r) {
        const double age = clampTo(std::round(40.0 + 12.0 * standardNormal(rng)), 18.0, 80.0);
        const int e = weightedIndex(weights, rng);
        const double hours =
            clampTo(std::round(34.0 + 1.5 * e + 5.0 * standardNormal(rng)), 5.0, 99.0);
        const double logit = 0.06 * (age - 40.0) + 0.55 * (e - 3.0) - 0.4;
        const double pHigh = 1.0 / (1.0 + std::exp(-logit));
        const std::string income = uniformDouble(rng) < pHigh ? ">50K" : "<=50K";
        table.appendRow({Value::numerical(age), Value::categorical(education[e]),
                         Value::categorical(eduNum[e]), Value::numerical(hours),
                         Value::categorical(income)});
    }
    return table;
}

std::string censusGraphText() {
    return "age: []\n"
           "education: []\n"
           "educational-num: [education->educational-num]\n"
           "hours-per-week: [education->hours-per-week]\n"
           "income: [age->income, education->income]\n";
}

Table makeWideTable(std::size_t n, std::uint64_t seed) {
    Schema schema({{"n1", FeatureKind::Numerical},
                   {"n2", FeatureKind::Numerical},
                   {"n3", FeatureKind::Numerical},
                   {"n4", FeatureKind::Numerical},
                   {"n5", FeatureKind::Numerical},
                   {"n6", FeatureKind::Numerical},
                   {"n7", FeatureKind::Numerical},
                   {"n8", FeatureKind::Numerical},
                   {"c1", FeatureKind::Categorical},
                   {"c2", FeatureKind::Categorical},
                   {"c3", FeatureKind::Categorical},
                   {"c4", FeatureKind::Categorical},
                   {"c5", FeatureKind::Categorical},
                   {"c6", FeatureKind::Categorical},
                   {"c7", FeatureKind::Categorical}});
    auto level = [](const char* prefix, int i) { return std::string(prefix) + std::to_string(i); };

    Table table(schema);
    table.reserve(n);
    std::mt19937_64 rng = makeRng(seed);
    for (std::size_t r = 0; r < n; ++r) {
        const double n1 = standardNormal(rng);
        const double n2 = 0.8 * n1 + 0.6 * standardNormal(rng);
        const double n3 = 0.5 * n1 - 0.5 * n2 + 0.7 * standardNormal(rng);
        const int c1 = static_cast<int>(boundedUint(rng, 6));
        const int c2 = (c1 + (uniformDouble(rng) < 0.3 ? 1 : 0)) % 5;
        const int c3 = (2 * c1 + (uniformDouble(rng) < 0.5 ? 1 : 0)) % 7;
        const double n4 = 0.7 * c2 + 0.5 * standardNormal(rng);
        const int c4 = n3 < -0.8 ? 0 : n3 < 0.0 ? 1 : n3 < 0.8 ? 2 : 3;
        const double n5 = 0.4 * n4 + 0.2 * c3 + 0.6 * standardNormal(rng);
        const int c5 = (c4 + (n5 > 0.0 ? 1 : 0) + static_cast<int>(boundedUint(rng, 2))) % 6;
        const double n6 = 0.9 * n5 + 0.3 * standardNormal(rng);
        const double n7 = 0.5 * c5 + 0.8 * standardNormal(rng);
        const int c6 = n6 < -1.0 ? 0 : n6 < 0.0 ? 1 : n6 < 0.7 ? 2 : n6 < 1.5 ? 3 : 4;
        const double n8 = 0.3 * n7 - 0.2 * c6 + standardNormal(rng);
        const int c7 = (c6 + static_cast<int>(boundedUint(rng, 2))) % 4;
        table.appendRow({Value::numerical(n1), Value::numerical(n2), Value::numerical(n3),
                         Value::numerical(n4), Value::numerical(n5), Value::numerical(n6),
                         Value::numerical(n7), Value::numerical(n8),
                         Value::categorical(level("a", c1)), Value::categorical(level("b", c2)),
                         Value::categorical(level("c", c3)), Value::categorical(level("d", c4)),
                         Value::categorical(level("e", c5)), Value::categorical(level("f", c6)),
                         Value::categorical(level("g", c7))});
    }
    return table;
}

std::string wideGraphText() {
    return "n1: []\n"
           "n2: [n1->n2]\n"
           "n3: [n1->n3, n2->n3]\n"
           "n4: [c2->n4]\n"
           "n5: [n4->n5, c3->n5]\n"
           "n6: [n5->n6]\n"
           "n7: [c5->n7]\n"
           "n8: [n7->n8, c6->n8]\n"
           "c1: []\n"
           "c2: [c1->c2]\n"
           "c3: [c1->c3]\n"
           "c4: [n3->c4]\n"
           "c5: [c4->c5, n5->c5]\n"
           "c6: [n6->c6]\n"
           "c7: [c6->c7]\n";
}

Table makeGaussianPair(std::size_t n, double slope, double sigma, std::uint64_t seed) {
    Schema schema({{"x", FeatureKind::Numerical}, {"y", FeatureKind::Numerical}});
    Table table(schema);
    table.reserve(n);
    std::mt19937_64 rng = makeRng(seed);
    for (std::size_t r = 0; r < n; ++r) {
        const double x = standardNormal(rng);
        const double y = slope * x + sigma * standardNormal(rng);
        table.appendRow({Value::numerical(x), Value::numerical(y)});
    }
    return table;
}

Table makeNormalColumn(std::size_t n, std::uint64_t seed) {
    Schema schema({{"x", FeatureKind::Numerical}});
    Table table(schema);
    table.reserve(n);
    std::mt19937_64 rng = makeRng(seed);
    for (std::size_t r = 0; r < n; ++r) {
        table.appendRow({Value::numerical(standardNormal(rng))});
    }
    return table;
}

std::pair<Table, Table> splitRows(const Table& table, std::size_t testCount, std::uint64_t seed) {
    const std::size_t n = table.rowCount();
    if (testCount > n) raise(ErrorCategory::Config, "fixture split larger than the table");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng = makeRng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[boundedUint(rng, i)]);
    }
    const int columns = table.schema().size();
    Table train(table.schema());
    Table test(table.schema());
    std::vector<Value> row(static_cast<std::size_t>(columns));
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < columns; ++c) row[static_cast<std::size_t>(c)] = table.value(order[i], c);
        (i < n - testCount ? train : test).appendRow(row);
    }
    return {std::move(train), std::move(test)};
}

Table withUniformNoise(const Table& table, double scale, std::uint64_t seed) {
    const Schema& schema = table.schema();
    std::vector<double> range(static_cast<std::size_t>(schema.size()), 0.0);
    for (int c = 0; c < schema.size(); ++c) {
        if (schema.at(c).kind != FeatureKind::Numerical) continue;
        const std::vector<double>& xs = table.numeric(c);
        const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        range[static_cast<std::size_t>(c)] = *hi - *lo;
    }
    Table noisy(schema);
    noisy.reserve(table.rowCount());
    std::mt19937_64 rng = makeRng(seed);
    std::vector<Value> row(static_cast<std::size_t>(schema.size()));
    for (std::size_t r = 0; r < table.rowCount(); ++r) {
        for (int c = 0; c < schema.size(); ++c) {
            Value v = table.value(r, c);
            if (schema.at(c).kind == FeatureKind::Numerical) {
                v.num += (2.0 * uniformDouble(rng) - 1.0) * scale * range[static_cast<std::size_t>(c)];
            }
            row[static_cast<std::size_t>(c)] = std::move(v);
        }
        noisy.appendRow(row);
    }
    return noisy;
}

DependencyGraph finalizedGraph(const std::string& text, const Schema& schema) {
    DependencyGraph graph = parseDependencyText(text, schema);
    graph.finalize();
    return graph;
}

}  // namespace depsynth::testfix
