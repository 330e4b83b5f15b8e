#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "depsynth/Graph.h"
#include "depsynth/Table.h"

namespace depsynth::testfix {

// Absolute path of a shipped data file (DEPSYNTH_DATA_DIR comes from the build).
std::string dataPath(const std::string& name);

std::string readFileText(const std::string& path);
void writeFileText(const std::string& path, const std::string& text);

// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const;

private:
    std::string path_;
};

// Census-style table whose education <-> educational-num columns form an exact
// bijection over eight levels. Columns: age (numerical), education
// (categorical), educational-num (categorical integer strings "9".."16"),
// hours-per-week (numerical), income (categorical, two classes driven by a
// logistic of age and education).
Table makeCensusTable(std::size_t n, std::uint64_t seed);
std::string censusGraphText();

// 15-feature mixed table (8 numerical, 7 categorical with 4-8 levels) whose
// features have at most two parents each; sized for throughput runs.
Table makeWideTable(std::size_t n, std::uint64_t seed);
std::string wideGraphText();

// Two numerical columns: x ~ N(0,1), y = slope * x + sigma * N(0,1).
Table makeGaussianPair(std::size_t n, double slope, double sigma, std::uint64_t seed);

// One numerical column "x" of standard-normal draws.
Table makeNormalColumn(std::size_t n, std::uint64_t seed);

// Shuffles rows with the given seed and returns {remaining, testCount rows}.
std::pair<Table, Table> splitRows(const Table& table, std::size_t testCount, std::uint64_t seed);

// Copy with (2u - 1) * scale * columnRange uniform noise added to every
// numeric cell; categorical cells unchanged.
Table withUniformNoise(const Table& table, double scale, std::uint64_t seed);

// parseDependencyText + finalize in one step.
DependencyGraph finalizedGraph(const std::string& text, const Schema& schema);

inline bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

// Runs f, which must throw DepsynthError; returns the caught error.
template <class F>
DepsynthError expectError(F&& f) {
    try {
        std::forward<F>(f)();
    } catch (const DepsynthError& e) {
        return e;
    }
    raise(ErrorCategory::Eval, "expected a DepsynthError, but none was thrown");
}

}  // namespace depsynth::testfix
