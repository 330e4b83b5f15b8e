#include "depsynth/Metrics.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "depsynth/Errors.h"
#include "depsynth/Rng.h"

namespace depsynth {

namespace {

constexpr double kZ95 = 1.96;

std::string canonicalCell(const Table& t, std::size_t row, int column) {
    if (t.schema().at(column).kind == FeatureKind::Numerical) {
        return formatNumericCell(t.numeric(column)[row]);
    }
    return t.categorical(column)[row];
}

void requireSameSchema(const Table& a, const Table& b, const char* context) {
    if (a.schema().fingerprint() != b.schema().fingerprint()) {
        raise(ErrorCategory::Eval, std::string(context) + ": tables have different schemas");
    }
}

std::string trimmed(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// --- shared feature encoding: min-max numerics, one-hot categoricals ---------------

class FeatureEncoder {
public:
    FeatureEncoder(const std::vector<const Table*>& tables, const std::vector<int>& columns) {
        if (tables.empty()) raise(ErrorCategory::Eval, "feature encoding needs at least one table");
        const Schema& schema = tables.front()->schema();
        for (int c : columns) {
            Col col;
            col.column = c;
            col.numeric = schema.at(c).kind == FeatureKind::Numerical;
            if (col.numeric) {
                col.lo = std::numeric_limits<double>::infinity();
                col.hi = -std::numeric_limits<double>::infinity();
                for (const Table* t : tables) {
                    for (double v : t->numeric(c)) {
                        col.lo = std::min(col.lo, v);
                        col.hi = std::max(col.hi, v);
                    }
                }
                col.width = 1;
            } else {
                for (const Table* t : tables) {
                    for (const std::string& v : t->categorical(c)) {
                        col.codes.emplace(v, static_cast<int>(col.codes.size()));
                    }
                }
                col.width = static_cast<int>(col.codes.size());
            }
            width_ += static_cast<std::size_t>(col.width);
            cols_.push_back(std::move(col));
        }
    }

    std::size_t width() const { return width_; }

    void encode(const Table& t, std::size_t row, std::vector<double>* out) const {
        out->assign(width_, 0.0);
        std::size_t at = 0;
        for (const Col& col : cols_) {
            if (col.numeric) {
                const double span = col.hi - col.lo;
                const double v = t.numeric(col.column)[row];
                (*out)[at] = span > 0.0 ? (v - col.lo) / span : 0.0;
                ++at;
            } else {
                auto it = col.codes.find(t.categorical(col.column)[row]);
                if (it != col.codes.end()) (*out)[at + static_cast<std::size_t>(it->second)] = 1.0;
                at += static_cast<std::size_t>(col.width);
            }
        }
    }

private:
    struct Col {
        int column = -1;
        bool numeric = true;
        double lo = 0.0;
        double hi = 0.0;
        std::map<std::string, int> codes;  // insertion order does not matter; codes fixed at fit
        int width = 1;
    };
    std::vector<Col> cols_;
    std::size_t width_ = 0;
};

std::vector<std::vector<double>> encodeAll(const FeatureEncoder& enc, const Table& t) {
    std::vector<std::vector<double>> rows(t.rowCount());
    for (std::size_t r = 0; r < t.rowCount(); ++r) enc.encode(t, r, &rows[r]);
    return rows;
}

// --- multinomial logistic regression (full-batch gradient descent) ------------------

struct LogisticModel {
    int classes = 0;
    std::size_t width = 0;
    std::vector<double> weights;  // classes × (width + 1), bias last

    double score(int k, const std::vector<double>& x) const {
        const double* w = &weights[static_cast<std::size_t>(k) * (width + 1)];
        double s = w[width];
        for (std::size_t j = 0; j < width; ++j) s += w[j] * x[j];
        return s;
    }

    int predict(const std::vector<double>& x) const {
        int best = 0;
        double bestScore = score(0, x);
        for (int k = 1; k < classes; ++k) {
            const double s = score(k, x);
            if (s > bestScore) {
                bestScore = s;
                best = k;
            }
        }
        return best;
    }
};

LogisticModel trainLogistic(const std::vector<std::vector<double>>& rows,
                            const std::vector<int>& labels, int classes, int iterations,
                            double learningRate, double l2) {
    LogisticModel model;
    model.classes = classes;
    model.width = rows.empty() ? 0 : rows.front().size();
    model.weights.assign(static_cast<std::size_t>(classes) * (model.width + 1), 0.0);
    if (classes < 2) return model;  // constant classifier; weights stay zero

    const std::size_t n = rows.size();
    std::vector<double> probs(static_cast<std::size_t>(classes));
    std::vector<double> grad(model.weights.size());
    for (int it = 0; it < iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double maxScore = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < classes; ++k) {
                probs[static_cast<std::size_t>(k)] = model.score(k, rows[i]);
                maxScore = std::max(maxScore, probs[static_cast<std::size_t>(k)]);
            }
            double sum = 0.0;
            for (int k = 0; k < classes; ++k) {
                probs[static_cast<std::size_t>(k)] = std::exp(probs[static_cast<std::size_t>(k)] - maxScore);
                sum += probs[static_cast<std::size_t>(k)];
            }
            for (int k = 0; k < classes; ++k) {
                const double delta = probs[static_cast<std::size_t>(k)] / sum - (labels[i] == k ? 1.0 : 0.0);
                double* g = &grad[static_cast<std::size_t>(k) * (model.width + 1)];
                for (std::size_t j = 0; j < model.width; ++j) g[j] += delta * rows[i][j];
                g[model.width] += delta;
            }
        }
        const double inv = 1.0 / static_cast<double>(n);
        for (int k = 0; k < classes; ++k) {
            double* w = &model.weights[static_cast<std::size_t>(k) * (model.width + 1)];
            double* g = &grad[static_cast<std::size_t>(k) * (model.width + 1)];
            for (std::size_t j = 0; j < model.width; ++j) {
                w[j] -= learningRate * (g[j] * inv + l2 * w[j]);
            }
            w[model.width] -= learningRate * g[model.width] * inv;  // bias not regularized
        }
    }
    return model;
}

// --- CART: Gini for classification, variance reduction for regression -----------------

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int klass = 0;
    double value = 0.0;
};

class Cart {
public:
    static constexpr int kMaxDepth = 8;
    static constexpr std::size_t kMinLeaf = 5;

    Cart(const std::vector<std::vector<double>>& rows, const std::vector<double>& targets,
         bool classify, int classes)
        : rows_(rows), targets_(targets), classify_(classify), classes_(classes) {
        std::vector<std::size_t> all(rows.size());
        std::iota(all.begin(), all.end(), 0);
        build(all, 0);
    }

    double predictValue(const std::vector<double>& x) const { return nodes_[descend(x)].value; }
    int predictClass(const std::vector<double>& x) const { return nodes_[descend(x)].klass; }

private:
    std::size_t descend(const std::vector<double>& x) const {
        int at = 0;
        while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
            const TreeNode& n = nodes_[static_cast<std::size_t>(at)];
            at = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return static_cast<std::size_t>(at);
    }

    int makeLeaf(const std::vector<std::size_t>& rows) {
        TreeNode node;
        if (classify_) {
            std::vector<std::size_t> counts(static_cast<std::size_t>(classes_), 0);
            for (std::size_t r : rows) ++counts[static_cast<std::size_t>(targets_[r])];
            node.klass = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        } else {
            double sum = 0.0;
            for (std::size_t r : rows) sum += targets_[r];
            node.value = sum / static_cast<double>(rows.size());
        }
        nodes_.push_back(node);
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Weighted child impurity of splitting `order[0..n)` after position `cut`.
    struct SplitScan {
        const Cart* tree;
        std::vector<std::size_t> leftCounts, rightCounts;  // classification
        double leftSum = 0.0, leftSq = 0.0, rightSum = 0.0, rightSq = 0.0;
        std::size_t leftN = 0, rightN = 0;

        void reset(const Cart* t, const std::vector<std::size_t>& rows) {
            tree = t;
            leftN = 0;
            rightN = rows.size();
            if (t->classify_) {
                leftCounts.assign(static_cast<std::size_t>(t->classes_), 0);
                rightCounts.assign(static_cast<std::size_t>(t->classes_), 0);
                for (std::size_t r : rows) ++rightCounts[static_cast<std::size_t>(t->targets_[r])];
            } else {
                leftSum = leftSq = rightSum = rightSq = 0.0;
                for (std::size_t r : rows) {
                    rightSum += t->targets_[r];
                    rightSq += t->targets_[r] * t->targets_[r];
                }
            }
        }

        void moveLeft(std::size_t row) {
            ++leftN;
            --rightN;
            if (tree->classify_) {
                const auto c = static_cast<std::size_t>(tree->targets_[row]);
                ++leftCounts[c];
                --rightCounts[c];
            } else {
                const double y = tree->targets_[row];
                leftSum += y;
                leftSq += y * y;
                rightSum -= y;
                rightSq -= y * y;
            }
        }

        double impurity() const {
            if (tree->classify_) {
                auto gini = [](const std::vector<std::size_t>& counts, std::size_t n) {
                    double g = 1.0;
                    for (std::size_t c : counts) {
                        const double p = static_cast<double>(c) / static_cast<double>(n);
                        g -= p * p;
                    }
                    return g;
                };
                return static_cast<double>(leftN) * gini(leftCounts, leftN) +
                       static_cast<double>(rightN) * gini(rightCounts, rightN);
            }
            const double lVar = leftSq - leftSum * leftSum / static_cast<double>(leftN);
            const double rVar = rightSq - rightSum * rightSum / static_cast<double>(rightN);
            return lVar + rVar;  // summed SSE
        }
    };

    int build(const std::vector<std::size_t>& rows, int depth) {
        bool pure = true;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (targets_[rows[i]] != targets_[rows[0]]) {
                pure = false;
                break;
            }
        }
        if (depth >= kMaxDepth || rows.size() < 2 * kMinLeaf || pure) return makeLeaf(rows);

        const std::size_t width = rows_.front().size();
        int bestFeature = -1;
        double bestThreshold = 0.0;
        double bestScore = std::numeric_limits<double>::infinity();
        std::vector<std::size_t> order;
        SplitScan scan;
        for (std::size_t f = 0; f < width; ++f) {
            order = rows;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const double va = rows_[a][f];
                const double vb = rows_[b][f];
                return va != vb ? va < vb : a < b;
            });
            scan.reset(this, order);
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                scan.moveLeft(order[i]);
                const double v = rows_[order[i]][f];
                const double next = rows_[order[i + 1]][f];
                if (v == next) continue;  // not a boundary between distinct values
                if (scan.leftN < kMinLeaf || scan.rightN < kMinLeaf) continue;
                const double score = scan.impurity();
                if (score < bestScore - 1e-12) {
                    bestScore = score;
                    bestFeature = static_cast<int>(f);
                    bestThreshold = 0.5 * (v + next);
                }
            }
        }
        if (bestFeature < 0) return makeLeaf(rows);

        std::vector<std::size_t> left, right;
        for (std::size_t r : rows) {
            (rows_[r][static_cast<std::size_t>(bestFeature)] <= bestThreshold ? left : right).push_back(r);
        }
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        nodes_[static_cast<std::size_t>(id)].feature = bestFeature;
        nodes_[static_cast<std::size_t>(id)].threshold = bestThreshold;
        const int l = build(left, depth + 1);
        const int r = build(right, depth + 1);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    const std::vector<std::vector<double>>& rows_;
    const std::vector<double>& targets_;
    bool classify_;
    int classes_;
    std::vector<TreeNode> nodes_;
};

double macroF1(const std::vector<int>& truth, const std::vector<int>& predicted) {
    std::set<int> classSet(truth.begin(), truth.end());
    classSet.insert(predicted.begin(), predicted.end());
    if (classSet.empty()) return 0.0;
    double total = 0.0;
    for (int c : classSet) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool t = truth[i] == c;
            const bool p = predicted[i] == c;
            if (t && p) ++tp;
            if (!t && p) ++fp;
            if (t && !p) ++fn;
        }
        const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        total += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return total / static_cast<double>(classSet.size());
}

// Least squares with intercept via Gaussian elimination (tiny ridge for rank
// safety).
std::vector<double> leastSquares(const std::vector<std::vector<double>>& rows,
                                 const std::vector<double>& y) {
    const std::size_t d = rows.front().size() + 1;
    std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::vector<double> x(rows[i]);
        x.push_back(1.0);
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = 0; q < d; ++q) a[p][q] += x[p] * x[q];
            a[p][d] += x[p] * y[i];
        }
    }
    for (std::size_t p = 0; p < d; ++p) a[p][p] += 1e-10;
    for (std::size_t p = 0; p < d; ++p) {
        std::size_t pivot = p;
        for (std::size_t q = p + 1; q < d; ++q) {
            if (std::fabs(a[q][p]) > std::fabs(a[pivot][p])) pivot = q;
        }
        std::swap(a[p], a[pivot]);
        if (std::fabs(a[p][p]) < 1e-300) raise(ErrorCategory::Eval, "least squares system is singular");
        for (std::size_t q = 0; q < d; ++q) {
            if (q == p) continue;
            const double factor = a[q][p] / a[p][p];
            for (std::size_t k = p; k <= d; ++k) a[q][k] -= factor * a[p][k];
        }
    }
    std::vector<double> w(d);
    for (std::size_t p = 0; p < d; ++p) w[p] = a[p][d] / a[p][p];
    return w;
}

double linearPredict(const std::vector<double>& w, const std::vector<double>& x) {
    double s = w.back();
    for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * x[j];
    return s;
}

}  // namespace

// --- DCR -------------------------------------------------------------------------

DcrResult dcr(const Table& real, const Table& synth, const NormStats& stats) {
    requireSameSchema(real, synth, "dcr");
    if (real.rowCount() == 0) raise(ErrorCategory::Eval, "dcr: real table has no rows");
    const Schema& schema = real.schema();

    std::vector<int> numCols, catCols;
    for (int c = 0; c < schema.size(); ++c) {
        (schema.at(c).kind == FeatureKind::Numerical ? numCols : catCols).push_back(c);
    }
    const std::size_t nr = real.rowCount();
    const std::size_t ns = synth.rowCount();
    const std::size_t dn = numCols.size();
    const std::size_t dc = catCols.size();
    const double columns = static_cast<double>(dn + dc);

    // Row-major working copies: normalized numerics, integer-coded categoricals
    // (codes shared across both tables so unseen synthetic categories simply
    // never match).
    std::vector<double> realNum(nr * dn), synthNum(ns * dn);
    for (std::size_t j = 0; j < dn; ++j) {
        const std::vector<double>& rv = real.numeric(numCols[j]);
        const std::vector<double>& sv = synth.numeric(numCols[j]);
        for (std::size_t r = 0; r < nr; ++r) realNum[r * dn + j] = stats.normalize(numCols[j], rv[r]);
        for (std::size_t s = 0; s < ns; ++s) synthNum[s * dn + j] = stats.normalize(numCols[j], sv[s]);
    }
    std::vector<int> realCat(nr * dc), synthCat(ns * dc);
    for (std::size_t k = 0; k < dc; ++k) {
        std::map<std::string, int> codes;
        const std::vector<std::string>& rv = real.categorical(catCols[k]);
        const std::vector<std::string>& sv = synth.categorical(catCols[k]);
        for (std::size_t r = 0; r < nr; ++r) {
            realCat[r * dc + k] = codes.emplace(rv[r], static_cast<int>(codes.size())).first->second;
        }
        for (std::size_t s = 0; s < ns; ++s) {
            synthCat[s * dc + k] = codes.emplace(sv[s], static_cast<int>(codes.size())).first->second;
        }
    }

    DcrResult result;
    result.perRow.resize(ns);
    double total = 0.0;
    for (std::size_t s = 0; s < ns; ++s) {
        double best = std::numeric_limits<double>::infinity();
        const double* sn = &synthNum[s * dn];
        const int* sc = dc > 0 ? &synthCat[s * dc] : nullptr;
        for (std::size_t r = 0; r < nr; ++r) {
            double sum = 0.0;
            const double* rn = &realNum[r * dn];
            for (std::size_t j = 0; j < dn; ++j) sum += std::fabs(sn[j] - rn[j]);
            if (dc > 0) {
                const int* rc = &realCat[r * dc];
                for (std::size_t k = 0; k < dc; ++k) sum += sc[k] != rc[k] ? 1.0 : 0.0;
            }
            best = std::min(best, sum);
            if (best == 0.0) break;
        }
        result.perRow[s] = best / columns;
        total += result.perRow[s];
    }
    result.mean = ns > 0 ? total / static_cast<double>(ns) : 0.0;
    return result;
}

// --- Wilson interval ---------------------------------------------------------------

Interval wilsonInterval(std::size_t successes, std::size_t trials) {
    if (trials == 0) raise(ErrorCategory::Eval, "interval needs at least one trial");
    if (successes > trials) raise(ErrorCategory::Eval, "successes exceed trials");
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = kZ95 * kZ95;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = (kZ95 / denom) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    Interval out;
    out.lo = std::max(0.0, center - half);
    out.hi = std::min(1.0, center + half);
    return out;
}

// --- violation rules -----------------------------------------------------------------

ViolationRule ViolationRule::pairMap(const Table& real, const std::string& featureA,
                                     const std::string& featureB) {
    const Schema& schema = real.schema();
    if (!schema.contains(featureA)) raise(ErrorCategory::Eval, "pairmap: unknown feature: " + featureA);
    if (!schema.contains(featureB)) raise(ErrorCategory::Eval, "pairmap: unknown feature: " + featureB);
    if (featureA == featureB) raise(ErrorCategory::Eval, "pairmap: features must differ");
    ViolationRule rule;
    rule.kind_ = Kind::PairMap;
    rule.featureA_ = featureA;
    rule.featureB_ = featureB;
    rule.description_ = "pairmap " + featureA + " " + featureB;
    const int ca = schema.indexOf(featureA);
    const int cb = schema.indexOf(featureB);
    for (std::size_t r = 0; r < real.rowCount(); ++r) {
        const std::string key = canonicalCell(real, r, ca);
        const std::string val = canonicalCell(real, r, cb);
        auto [it, inserted] = rule.valueMap_.emplace(key, val);
        if (!inserted && it->second != val) {
            raise(ErrorCategory::Eval, "pairmap " + featureA + " -> " + featureB +
                                           " is not functional on the real data: '" + key +
                                           "' maps to both '" + it->second + "' and '" + val + "'");
        }
    }
    return rule;
}

ViolationRule ViolationRule::boundingRegion(std::string featureX, std::string featureY,
                                            std::vector<std::pair<double, double>> polygon) {
    if (polygon.size() >= 2 && polygon.front() == polygon.back()) polygon.pop_back();
    if (polygon.size() < 3) raise(ErrorCategory::Eval, "region polygon needs at least 3 distinct vertices");
    ViolationRule rule;
    rule.kind_ = Kind::BoundingRegion;
    rule.description_ = "region " + featureX + " " + featureY;
    rule.featureA_ = std::move(featureX);
    rule.featureB_ = std::move(featureY);
    rule.polygon_ = std::move(polygon);
    return rule;
}

bool ViolationRule::polygonContains(const std::vector<std::pair<double, double>>& polygon,
                                    double x, double y) {
    const std::size_t n = polygon.size();
    if (n < 3) raise(ErrorCategory::Eval, "polygon needs at least 3 vertices");
    for (std::size_t i = 0; i < n; ++i) {
        const auto& [x1, y1] = polygon[i];
        const auto& [x2, y2] = polygon[(i + 1) % n];
        const double cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
        if (std::fabs(cross) <= 1e-9 && x >= std::min(x1, x2) - 1e-12 &&
            x <= std::max(x1, x2) + 1e-12 && y >= std::min(y1, y2) - 1e-12 &&
            y <= std::max(y1, y2) + 1e-12) {
            return true;  // on an edge counts as inside
        }
    }
    bool inside = false;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& [x1, y1] = polygon[i];
        const auto& [x2, y2] = polygon[(i + 1) % n];
        if ((y1 > y) != (y2 > y)) {
            const double xCross = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
            if (x < xCross) inside = !inside;
        }
    }
    return inside;
}

bool ViolationRule::violates(const Table& table, std::size_t row) const {
    const Schema& schema = table.schema();
    if (!schema.contains(featureA_) || !schema.contains(featureB_)) {
        raise(ErrorCategory::Eval, "rule features missing from table: " + description_);
    }
    const int ca = schema.indexOf(featureA_);
    const int cb = schema.indexOf(featureB_);
    if (kind_ == Kind::PairMap) {
        auto it = valueMap_.find(canonicalCell(table, row, ca));
        if (it == valueMap_.end()) return true;  // value of a never seen in real data
        return it->second != canonicalCell(table, row, cb);
    }
    if (schema.at(ca).kind != FeatureKind::Numerical || schema.at(cb).kind != FeatureKind::Numerical) {
        raise(ErrorCategory::Eval, "region rule needs numerical features: " + description_);
    }
    return !polygonContains(polygon_, table.numeric(ca)[row], table.numeric(cb)[row]);
}

ViolationReport violationRate(const Table& table, const ViolationRule& rule) {
    if (table.rowCount() == 0) raise(ErrorCategory::Eval, "violation rate needs at least one row");
    ViolationReport report;
    report.rule = rule.description();
    report.rows = table.rowCount();
    for (std::size_t r = 0; r < table.rowCount(); ++r) {
        if (rule.violates(table, r)) ++report.violations;
    }
    report.rate = static_cast<double>(report.violations) / static_cast<double>(report.rows);
    report.interval = wilsonInterval(report.violations, report.rows);
    return report;
}

std::vector<std::pair<double, double>> loadPolygonCsv(const std::string& path) {
    const std::vector<std::vector<std::string>> records = parseCsvFile(path);
    if (records.size() < 2) raise(ErrorCategory::Parse, "polygon file has no vertices: " + path);
    std::vector<std::pair<double, double>> polygon;
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != 2) {
            raise(ErrorCategory::Parse, "polygon file row " + std::to_string(i + 1) +
                                            " needs exactly two columns: " + path);
        }
        double x = 0.0, y = 0.0;
        if (!parseNumericCell(records[i][0], &x) || !parseNumericCell(records[i][1], &y)) {
            raise(ErrorCategory::Parse,
                  "polygon file row " + std::to_string(i + 1) + " is not numeric: " + path);
        }
        polygon.emplace_back(x, y);
    }
    return polygon;
}

std::vector<ViolationRule> loadRules(const std::string& path, const Table& real) {
    std::ifstream in(path);
    if (!in) raise(ErrorCategory::Io, "cannot open rules file: " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::vector<ViolationRule> rules;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        const std::string text = trimmed(line);
        if (text.empty() || text[0] == '#') continue;
        std::istringstream words(text);
        std::vector<std::string> tokens;
        std::string token;
        while (words >> token) tokens.push_back(token);
        const std::string where = "rules line " + std::to_string(lineNo);
        if (tokens[0] == "pairmap") {
            if (tokens.size() != 3) raise(ErrorCategory::Parse, where + ": pairmap needs two feature names");
            rules.push_back(ViolationRule::pairMap(real, tokens[1], tokens[2]));
        } else if (tokens[0] == "region") {
            if (tokens.size() != 4) {
                raise(ErrorCategory::Parse, where + ": region needs two feature names and a polygon file");
            }
            const std::filesystem::path poly = std::filesystem::path(tokens[3]).is_absolute()
                                                   ? std::filesystem::path(tokens[3])
                                                   : base / tokens[3];
            rules.push_back(
                ViolationRule::boundingRegion(tokens[1], tokens[2], loadPolygonCsv(poly.string())));
        } else {
            raise(ErrorCategory::Parse, where + ": unknown rule kind: " + tokens[0]);
        }
    }
    return rules;
}

// --- discriminator ----------------------------------------------------------------

DiscriminatorResult discriminatorMeasure(const Table& real, const Table& synth, int folds,
                                         std::uint64_t seed) {
    requireSameSchema(real, synth, "discriminator");
    if (folds < 2) raise(ErrorCategory::Eval, "discriminator needs at least 2 folds");
    if (real.rowCount() < static_cast<std::size_t>(folds) ||
        synth.rowCount() < static_cast<std::size_t>(folds)) {
        raise(ErrorCategory::Eval, "discriminator: fewer rows than folds");
    }

    std::vector<int> columns(static_cast<std::size_t>(real.schema().size()));
    std::iota(columns.begin(), columns.end(), 0);
    const FeatureEncoder encoder({&real, &synth}, columns);

    std::vector<std::vector<double>> rows = encodeAll(encoder, real);
    {
        std::vector<std::vector<double>> synthRows = encodeAll(encoder, synth);
        rows.insert(rows.end(), std::make_move_iterator(synthRows.begin()),
                    std::make_move_iterator(synthRows.end()));
    }
    std::vector<int> labels(rows.size(), 0);
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(real.rowCount()), labels.end(), 1);

    // Stratified fold assignment: shuffle each class separately, deal
    // round-robin so folds keep the class balance.
    std::vector<int> fold(rows.size(), -1);
    for (int klass = 0; klass < 2; ++klass) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (labels[i] == klass) members.push_back(i);
        }
        std::mt19937_64 rng = makeStreamRng(seed, static_cast<std::uint64_t>(klass));
        for (std::size_t i = members.size(); i > 1; --i) {
            std::swap(members[i - 1], members[boundedUint(rng, i)]);
        }
        for (std::size_t i = 0; i < members.size(); ++i) {
            fold[members[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
        }
    }

    DiscriminatorResult result;
    for (int f = 0; f < folds; ++f) {
        std::vector<std::vector<double>> train;
        std::vector<int> trainLabels;
        std::vector<std::size_t> test;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (fold[i] == f) {
                test.push_back(i);
            } else {
                train.push_back(rows[i]);
                trainLabels.push_back(labels[i]);
            }
        }
        if (train.empty() || test.empty()) raise(ErrorCategory::Eval, "discriminator fold is empty");
        const LogisticModel model = trainLogistic(train, trainLabels, 2, 500, 1.0, 1e-2);
        std::size_t correct = 0;
        for (std::size_t i : test) {
            if (model.predict(rows[i]) == labels[i]) ++correct;
        }
        result.foldAccuracies.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    }

    double mean = 0.0;
    for (double a : result.foldAccuracies) mean += a;
    mean /= static_cast<double>(folds);
    double var = 0.0;
    for (double a : result.foldAccuracies) var += (a - mean) * (a - mean);
    const double sd = folds > 1 ? std::sqrt(var / static_cast<double>(folds - 1)) : 0.0;
    const double half = kZ95 * sd / std::sqrt(static_cast<double>(folds));
    result.meanAccuracy = mean;
    result.interval.lo = std::max(0.0, mean - half);
    result.interval.hi = std::min(1.0, mean + half);
    return result;
}

// --- downstream utility --------------------------------------------------------------

UtilityResult downstreamUtility(const Table& synthTrain, const Table& realTest,
                                const std::string& target, TaskKind task) {
    requireSameSchema(synthTrain, realTest, "downstream utility");
    const Schema& schema = synthTrain.schema();
    if (!schema.contains(target)) raise(ErrorCategory::Eval, "unknown target feature: " + target);
    if (synthTrain.rowCount() == 0 || realTest.rowCount() == 0) {
        raise(ErrorCategory::Eval, "downstream utility needs non-empty train and test tables");
    }
    const int targetColumn = schema.indexOf(target);
    const FeatureKind kind = schema.at(targetColumn).kind;
    if (task == TaskKind::Classify && kind != FeatureKind::Categorical) {
        raise(ErrorCategory::Eval, "classification target must be categorical: " + target);
    }
    if (task == TaskKind::Regress && kind != FeatureKind::Numerical) {
        raise(ErrorCategory::Eval, "regression target must be numerical: " + target);
    }

    std::vector<int> columns;
    for (int c = 0; c < schema.size(); ++c) {
        if (c != targetColumn) columns.push_back(c);
    }
    const FeatureEncoder encoder({&synthTrain}, columns);
    const std::vector<std::vector<double>> trainRows = encodeAll(encoder, synthTrain);
    const std::vector<std::vector<double>> testRows = encodeAll(encoder, realTest);

    UtilityResult result;
    result.task = task;
    if (task == TaskKind::Classify) {
        // Class codes from the training data, first-occurrence order; test
        // labels outside that set get code -1 and can never be predicted.
        std::map<std::string, int> classCodes;
        std::vector<int> trainLabels(synthTrain.rowCount());
        const std::vector<std::string>& trainCats = synthTrain.categorical(targetColumn);
        for (std::size_t r = 0; r < synthTrain.rowCount(); ++r) {
            trainLabels[r] = classCodes.emplace(trainCats[r], static_cast<int>(classCodes.size()))
                                 .first->second;
        }
        const int classes = static_cast<int>(classCodes.size());
        std::vector<int> testLabels(realTest.rowCount());
        const std::vector<std::string>& testCats = realTest.categorical(targetColumn);
        for (std::size_t r = 0; r < realTest.rowCount(); ++r) {
            auto it = classCodes.find(testCats[r]);
            testLabels[r] = it == classCodes.end() ? -1 : it->second;
            if (it == classCodes.end()) ++result.absentClassRows;
        }
        std::vector<double> treeTargets(trainLabels.begin(), trainLabels.end());
        const LogisticModel lr = trainLogistic(trainRows, trainLabels, classes, 1000, 1.0, 1e-4);
        const Cart tree(trainRows, treeTargets, true, classes);
        for (const char* name : {"logistic_regression", "decision_tree"}) {
            const bool isLr = std::string(name) == "logistic_regression";
            std::vector<int> predictions(realTest.rowCount());
            std::size_t correct = 0;
            for (std::size_t r = 0; r < realTest.rowCount(); ++r) {
                predictions[r] = classes == 0   ? -1
                                 : classes == 1 ? 0
                                 : isLr         ? lr.predict(testRows[r])
                                                : tree.predictClass(testRows[r]);
                if (predictions[r] == testLabels[r]) ++correct;
            }
            UtilityModelMetrics metrics;
            metrics.model = name;
            metrics.accuracy = static_cast<double>(correct) / static_cast<double>(realTest.rowCount());
            metrics.macroF1 = macroF1(testLabels, predictions);
            result.models.push_back(std::move(metrics));
        }
    } else {
        const std::vector<double>& trainY = synthTrain.numeric(targetColumn);
        const std::vector<double>& testY = realTest.numeric(targetColumn);
        const std::vector<double> w = leastSquares(trainRows, trainY);
        const Cart tree(trainRows, trainY, false, 0);
        for (const char* name : {"linear_regression", "decision_tree"}) {
            const bool isLinear = std::string(name) == "linear_regression";
            double sse = 0.0;
            for (std::size_t r = 0; r < realTest.rowCount(); ++r) {
                const double prediction =
                    isLinear ? linearPredict(w, testRows[r]) : tree.predictValue(testRows[r]);
                sse += (prediction - testY[r]) * (prediction - testY[r]);
            }
            UtilityModelMetrics metrics;
            metrics.model = name;
            metrics.mse = sse / static_cast<double>(realTest.rowCount());
            result.models.push_back(std::move(metrics));
        }
    }
    return result;
}

}  // namespace depsynth
