#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "depsynth/BallTree.h"
#include "depsynth/Graph.h"
#include "depsynth/Table.h"

namespace depsynth {

enum class BandwidthRule { Scott, Silverman, Fixed };

const char* bandwidthRuleName(BandwidthRule rule);
BandwidthRule bandwidthRuleFromName(const std::string& name);

// Plug-in kernel bandwidths for an n-sample, d-dimensional Gaussian KDE:
//   Scott:     n^(-1/(d+4))
//   Silverman: (4/(d+2))^(1/(d+4)) * n^(-1/(d+4))
//   Fixed:     fixedH, ignoring n and d
double bandwidth(BandwidthRule rule, std::size_t n, int d, double fixedH = 1.0);

// Gaussian KDE density (1 / (n h)) * sum phi((x - v_i) / h) over the values.
double kdeDensity(const std::vector<double>& values, double h, double x);

// One exact draw from the KDE: uniform candidate choice plus h-scaled Gaussian
// noise, clamped to [lo, hi] (the target column's observed range).
double kdeSample(const std::vector<double>& values, double h, double lo, double hi,
                 std::mt19937_64& rng);

// Empirical-frequency draw over the candidate category values.
std::string categoricalSample(const std::vector<std::string>& values, std::mt19937_64& rng);

// Staged fuzzy-match policy: expand the categorical Hamming radius and the
// normalized numeric L1 radius (0, then eps0PerDim * d * growth^k) until at
// least kMin candidate rows match or the whole table is in range.
struct FuzzyPolicy {
    int kMin = 20;
    double eps0PerDim = 0.05;
    double growth = 2.0;
};

struct CandidateSet {
    std::vector<int> rows;       // ascending real-table row ids
    int hammingRadius = 0;       // achieved categorical-parent radius
    double numericRadius = 0.0;  // achieved normalized numeric-parent L1 radius
    bool exact = false;          // true iff found at the (0, 0) stage
};

// Fuzzy-match KDE synthesizer. Holds the real table plus, per feature, a
// two-level index: categorical-parent tuple partitions, each with a ball tree
// over min-max-normalized numerical-parent vectors. Immutable once built, so
// sampling may run on many rows concurrently.
class KdeModel {
public:
    KdeModel(Table real, DependencyGraph finalizedGraph, FuzzyPolicy policy = {},
             BandwidthRule rule = BandwidthRule::Scott, double fixedBandwidth = 1.0);

    // Candidate rows whose parent values fuzzily match `parentValues`, which
    // must align with graph.parentsOf(feature). Features without parents match
    // the whole table.
    CandidateSet fuzzyMatch(const std::string& feature,
                            const std::vector<Value>& parentValues) const;

    Table sampleTable(std::size_t n, std::uint64_t seed) const;

    const Table& real() const { return real_; }
    const DependencyGraph& graph() const { return graph_; }
    const NormStats& stats() const { return stats_; }
    const FuzzyPolicy& policy() const { return policy_; }
    BandwidthRule rule() const { return rule_; }
    double fixedBandwidth() const { return fixedBandwidth_; }

    // Observed partition count of one feature's index (diagnostics/tests).
    std::size_t partitionCount(const std::string& feature) const;

private:
    struct Partition {
        std::vector<int> rows;  // ascending
        BallTree tree;          // built only when there are numerical parents
    };

    struct FeatureIndex {
        int column = -1;
        std::vector<int> catParents;  // schema order
        std::vector<int> numParents;  // schema order
        std::map<std::vector<int>, Partition> partitions;
    };

    const FeatureIndex& indexFor(const std::string& feature) const;

    Table real_;
    DependencyGraph graph_;
    NormStats stats_;
    FuzzyPolicy policy_;
    BandwidthRule rule_;
    double fixedBandwidth_ = 1.0;
    std::map<std::string, FeatureIndex> indexes_;
    std::vector<int> allRows_;
};

}  // namespace depsynth
