#include "depsynth/BallTree.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "depsynth/Errors.h"

namespace depsynth {

double l1Distance(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::fabs(a[i] - b[i]);
    return d;
}

BallTree::BallTree(std::vector<std::vector<double>> points, int leafCapacity)
    : points_(std::move(points)) {
    if (points_.empty()) raise(ErrorCategory::Config, "ball tree needs at least one point");
    if (leafCapacity < 1) raise(ErrorCategory::Config, "ball tree leaf capacity must be >= 1");
    dim_ = static_cast<int>(points_.front().size());
    for (const auto& p : points_) {
        if (static_cast<int>(p.size()) != dim_) {
            raise(ErrorCategory::Config, "ball tree points must share one dimension");
        }
    }
    ids_.resize(points_.size());
    std::iota(ids_.begin(), ids_.end(), 0);
    root_ = build(0, static_cast<int>(ids_.size()), leafCapacity);
}

int BallTree::build(int begin, int end, int leafCapacity) {
    Node node;
    node.begin = begin;
    node.end = end;

    node.centroid.assign(static_cast<std::size_t>(dim_), 0.0);
    for (int i = begin; i < end; ++i) {
        const auto& p = points_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(i)])];
        for (int d = 0; d < dim_; ++d) node.centroid[static_cast<std::size_t>(d)] += p[static_cast<std::size_t>(d)];
    }
    for (int d = 0; d < dim_; ++d) node.centroid[static_cast<std::size_t>(d)] /= (end - begin);
    for (int i = begin; i < end; ++i) {
        node.radius = std::max(
            node.radius,
            l1Distance(points_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(i)])], node.centroid));
    }

    // Split along the widest coordinate; a zero spread means all points
    // coincide, in which case splitting cannot make progress.
    int splitDim = -1;
    double widest = 0.0;
    if (end - begin > leafCapacity && dim_ > 0) {
        for (int d = 0; d < dim_; ++d) {
            double lo = points_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(begin)])][static_cast<std::size_t>(d)];
            double hi = lo;
            for (int i = begin + 1; i < end; ++i) {
                const double v =
                    points_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(i)])][static_cast<std::size_t>(d)];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > widest) {
                widest = hi - lo;
                splitDim = d;
            }
        }
    }

    const int index = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    if (splitDim < 0) return index;  // leaf

    const int mid = begin + (end - begin) / 2;
    std::nth_element(ids_.begin() + begin, ids_.begin() + mid, ids_.begin() + end,
                     [&](int a, int b) {
                         const double va = points_[static_cast<std::size_t>(a)][static_cast<std::size_t>(splitDim)];
                         const double vb = points_[static_cast<std::size_t>(b)][static_cast<std::size_t>(splitDim)];
                         return va != vb ? va < vb : a < b;
                     });
    const int left = build(begin, mid, leafCapacity);
    const int right = build(mid, end, leafCapacity);
    nodes_[static_cast<std::size_t>(index)].left = left;
    nodes_[static_cast<std::size_t>(index)].right = right;
    return index;
}

void BallTree::query(int nodeIndex, const std::vector<double>& center, double radius,
                     std::vector<int>& hits) const {
    const Node& node = nodes_[static_cast<std::size_t>(nodeIndex)];
    const double centroidDist = l1Distance(center, node.centroid);
    if (centroidDist - node.radius > radius) return;  // ball entirely outside query
    if (centroidDist + node.radius <= radius) {        // ball entirely inside query
        for (int i = node.begin; i < node.end; ++i) hits.push_back(ids_[static_cast<std::size_t>(i)]);
        return;
    }
    if (node.left < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            const int id = ids_[static_cast<std::size_t>(i)];
            if (l1Distance(points_[static_cast<std::size_t>(id)], center) <= radius) hits.push_back(id);
        }
        return;
    }
    query(node.left, center, radius, hits);
    query(node.right, center, radius, hits);
}

std::vector<int> BallTree::rangeQuery(const std::vector<double>& center, double radius) const {
    if (static_cast<int>(center.size()) != dim_) {
        raise(ErrorCategory::Config, "ball tree query dimension mismatch");
    }
    if (radius < 0.0) raise(ErrorCategory::Config, "ball tree query radius must be >= 0");
    std::vector<int> hits;
    if (root_ >= 0) query(root_, center, radius, hits);
    std::sort(hits.begin(), hits.end());
    return hits;
}

}  // namespace depsynth
