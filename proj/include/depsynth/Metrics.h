#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "depsynth/Table.h"

namespace depsynth {

// --- distance to closest record -------------------------------------------------

struct DcrResult {
    std::vector<double> perRow;  // one minimum per synthetic row
    double mean = 0.0;
};

// For each synthetic row, the minimum over real rows of the per-column mean
// distance: numeric columns min-max normalized by `stats` (fit on the real
// data), categorical columns 0/1 mismatch.
DcrResult dcr(const Table& real, const Table& synth, const NormStats& stats);

// --- proportions ------------------------------------------------------------------

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Wilson score interval for a binomial proportion at 95% (z = 1.96),
// clamped to [0, 1].
Interval wilsonInterval(std::size_t successes, std::size_t trials);

// --- declarative violation rules ---------------------------------------------------

// A row-level consistency check. Two kinds:
//   PairMap        — feature b must equal the functional map of feature a
//                    learned from real data (values of a unseen in the real
//                    data count as violations);
//   BoundingRegion — the point (x, y) must fall inside a closed polygon,
//                    even-odd rule, points on an edge count as inside.
class ViolationRule {
public:
    static ViolationRule pairMap(const Table& real, const std::string& featureA,
                                 const std::string& featureB);
    static ViolationRule boundingRegion(std::string featureX, std::string featureY,
                                        std::vector<std::pair<double, double>> polygon);

    bool violates(const Table& table, std::size_t row) const;
    const std::string& description() const { return description_; }

    // Even-odd point-in-polygon with on-edge counted as inside; exposed for
    // direct geometry tests.
    static bool polygonContains(const std::vector<std::pair<double, double>>& polygon,
                                double x, double y);

private:
    ViolationRule() = default;

    enum class Kind { PairMap, BoundingRegion };
    Kind kind_ = Kind::PairMap;
    std::string description_;
    std::string featureA_;
    std::string featureB_;
    std::map<std::string, std::string> valueMap_;  // canonical cell text of a → of b
    std::vector<std::pair<double, double>> polygon_;
};

struct ViolationReport {
    std::string rule;
    std::size_t violations = 0;
    std::size_t rows = 0;
    double rate = 0.0;
    Interval interval;
};

ViolationReport violationRate(const Table& table, const ViolationRule& rule);

// Rules file: one rule per line, `#` comments and blank lines ignored.
//   pairmap <featureA> <featureB>
//   region <featureX> <featureY> <polygon.csv>
// Polygon paths resolve relative to the rules file; the polygon CSV has a
// header row and two numeric columns (x, y). PairMap maps are fit on `real`.
std::vector<ViolationRule> loadRules(const std::string& path, const Table& real);

std::vector<std::pair<double, double>> loadPolygonCsv(const std::string& path);

// --- two-sample discriminator --------------------------------------------------

struct DiscriminatorResult {
    double meanAccuracy = 0.0;
    Interval interval;  // mean ± 1.96 · sd / sqrt(folds)
    std::vector<double> foldAccuracies;
};

// Labels real rows 0 and synthetic rows 1, encodes features (min-max numerics,
// one-hot categoricals), and runs stratified k-fold cross-validation of an
// L2-regularized logistic classifier trained by gradient descent.
// Indistinguishable tables score near 0.5.
DiscriminatorResult discriminatorMeasure(const Table& real, const Table& synth, int folds = 5,
                                         std::uint64_t seed = 42);

// --- downstream utility ----------------------------------------------------------

enum class TaskKind { Classify, Regress };

struct UtilityModelMetrics {
    std::string model;
    double accuracy = 0.0;  // classification only
    double macroF1 = 0.0;   // classification only
    double mse = 0.0;       // regression only
};

struct UtilityResult {
    TaskKind task = TaskKind::Classify;
    std::vector<UtilityModelMetrics> models;
    // Test rows whose label never occurs in the training data; they are
    // scored as errors in every model's accuracy.
    std::size_t absentClassRows = 0;
};

// Trains on synthetic rows, evaluates on real test rows. Classification runs
// a multinomial logistic regression and a Gini CART tree (max depth 8, min
// leaf 5); regression runs least squares and a variance-reduction tree.
UtilityResult downstreamUtility(const Table& synthTrain, const Table& realTest,
                                const std::string& target, TaskKind task);

}  // namespace depsynth
