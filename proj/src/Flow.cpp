#include "depsynth/Flow.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "depsynth/Rng.h"

namespace depsynth {

namespace {

constexpr int kBins = 8;
constexpr double kTail = 4.0;                 // spline acts on [-kTail, kTail], identity outside
constexpr double kMinBinFraction = 1e-3;      // keeps every bin strictly positive
constexpr int kHeadParams = 2 + 2 * kBins + (kBins - 1);  // affine + widths + heights + derivatives
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLayerNormEps = 1e-5;
// softplus(x + kDerivShift) == 1 at x == 0, so a zero head yields unit slopes.
const double kDerivShift = std::log(std::exp(1.0) - 1.0);

// --- minimal reverse-mode tape --------------------------------------------------

struct Tape {
    struct Node {
        int p0 = -1;
        int p1 = -1;
        double d0 = 0.0;
        double d1 = 0.0;
    };
    std::vector<Node> nodes;
    std::vector<double> vals;
    std::vector<double> adj;

    void clear() {
        nodes.clear();
        vals.clear();
    }

    int push(double v, int p0 = -1, double d0 = 0.0, int p1 = -1, double d1 = 0.0) {
        nodes.push_back({p0, p1, d0, d1});
        vals.push_back(v);
        return static_cast<int>(vals.size()) - 1;
    }

    void backward(int loss) {
        adj.assign(vals.size(), 0.0);
        adj[static_cast<std::size_t>(loss)] = 1.0;
        for (int i = loss; i >= 0; --i) {
            const double a = adj[static_cast<std::size_t>(i)];
            if (a == 0.0) continue;
            const Node& n = nodes[static_cast<std::size_t>(i)];
            if (n.p0 >= 0) adj[static_cast<std::size_t>(n.p0)] += a * n.d0;
            if (n.p1 >= 0) adj[static_cast<std::size_t>(n.p1)] += a * n.d1;
        }
    }
};

struct TapeVar {
    Tape* tape = nullptr;
    int id = -1;
    double value() const { return tape->vals[static_cast<std::size_t>(id)]; }
};

inline TapeVar operator+(TapeVar a, TapeVar b) {
    return {a.tape, a.tape->push(a.value() + b.value(), a.id, 1.0, b.id, 1.0)};
}
inline TapeVar operator-(TapeVar a, TapeVar b) {
    return {a.tape, a.tape->push(a.value() - b.value(), a.id, 1.0, b.id, -1.0)};
}
inline TapeVar operator*(TapeVar a, TapeVar b) {
    return {a.tape, a.tape->push(a.value() * b.value(), a.id, b.value(), b.id, a.value())};
}
inline TapeVar operator/(TapeVar a, TapeVar b) {
    const double bv = b.value();
    return {a.tape, a.tape->push(a.value() / bv, a.id, 1.0 / bv, b.id, -a.value() / (bv * bv))};
}
inline TapeVar operator+(TapeVar a, double c) { return {a.tape, a.tape->push(a.value() + c, a.id, 1.0)}; }
inline TapeVar operator+(double c, TapeVar a) { return a + c; }
inline TapeVar operator-(TapeVar a, double c) { return {a.tape, a.tape->push(a.value() - c, a.id, 1.0)}; }
inline TapeVar operator-(double c, TapeVar a) { return {a.tape, a.tape->push(c - a.value(), a.id, -1.0)}; }
inline TapeVar operator*(TapeVar a, double c) { return {a.tape, a.tape->push(a.value() * c, a.id, c)}; }
inline TapeVar operator*(double c, TapeVar a) { return a * c; }
inline TapeVar operator/(TapeVar a, double c) { return {a.tape, a.tape->push(a.value() / c, a.id, 1.0 / c)}; }
inline TapeVar operator/(double c, TapeVar a) {
    const double av = a.value();
    return {a.tape, a.tape->push(c / av, a.id, -c / (av * av))};
}
inline TapeVar operator-(TapeVar a) { return {a.tape, a.tape->push(-a.value(), a.id, -1.0)}; }

inline TapeVar fexp(TapeVar a) {
    const double v = std::exp(a.value());
    return {a.tape, a.tape->push(v, a.id, v)};
}
inline TapeVar flog(TapeVar a) {
    return {a.tape, a.tape->push(std::log(a.value()), a.id, 1.0 / a.value())};
}
inline TapeVar fsqrt(TapeVar a) {
    const double v = std::sqrt(a.value());
    return {a.tape, a.tape->push(v, a.id, 0.5 / v)};
}
inline TapeVar fclampMin(TapeVar a, double lo) {
    const bool inside = a.value() > lo;
    return {a.tape, a.tape->push(inside ? a.value() : lo, a.id, inside ? 1.0 : 0.0)};
}
inline TapeVar fsoftplusShifted(TapeVar a) {
    const double z = a.value() + kDerivShift;
    const double v = z > 30.0 ? z : std::log1p(std::exp(z));
    const double g = 1.0 / (1.0 + std::exp(-z));
    return {a.tape, a.tape->push(v, a.id, g)};
}
inline double scalarValue(TapeVar a) { return a.value(); }
inline TapeVar constantLike(TapeVar ref, double c) { return {ref.tape, ref.tape->push(c)}; }

inline double fexp(double a) { return std::exp(a); }
inline double flog(double a) { return std::log(a); }
inline double fsqrt(double a) { return std::sqrt(a); }
inline double fclampMin(double a, double lo) { return a > lo ? a : lo; }
inline double fsoftplusShifted(double a) {
    const double z = a + kDerivShift;
    return z > 30.0 ? z : std::log1p(std::exp(z));
}
inline double scalarValue(double a) { return a; }
inline double constantLike(double, double c) { return c; }

// --- rational-quadratic spline shared by the double and tape paths ----------------

template <class T>
struct SplineKnots {
    std::array<T, kBins + 1> x;
    std::array<T, kBins + 1> y;
    std::array<T, kBins + 1> d;
};

template <class T>
void cumulativeKnots(const std::vector<T>& head, int offset, std::array<T, kBins + 1>* knots) {
    std::array<T, kBins> e;
    T sum = fexp(head[static_cast<std::size_t>(offset)]);
    e[0] = sum;
    for (int i = 1; i < kBins; ++i) {
        e[static_cast<std::size_t>(i)] = fexp(head[static_cast<std::size_t>(offset + i)]);
        sum = sum + e[static_cast<std::size_t>(i)];
    }
    (*knots)[0] = constantLike(head[0], -kTail);
    T acc = (*knots)[0];
    for (int i = 0; i < kBins; ++i) {
        T fraction = kMinBinFraction + (1.0 - kBins * kMinBinFraction) * (e[static_cast<std::size_t>(i)] / sum);
        acc = acc + (2.0 * kTail) * fraction;
        (*knots)[static_cast<std::size_t>(i + 1)] = acc;
    }
    // The fractions sum to one exactly in real arithmetic, so the last knot is
    // kTail; pin it to keep rounding drift out of the tail boundary.
    (*knots)[kBins] = constantLike(head[0], kTail);
}

template <class T>
SplineKnots<T> buildKnots(const std::vector<T>& head) {
    SplineKnots<T> k;
    cumulativeKnots(head, 2, &k.x);
    cumulativeKnots(head, 2 + kBins, &k.y);
    k.d[0] = constantLike(head[0], 1.0);
    for (int i = 1; i < kBins; ++i) {
        k.d[static_cast<std::size_t>(i)] = fsoftplusShifted(head[static_cast<std::size_t>(2 + 2 * kBins + i - 1)]);
    }
    k.d[kBins] = constantLike(head[0], 1.0);
    return k;
}

template <class T>
T rqLogDerivative(const T& sk, const T& d0, const T& d1, const T& xi) {
    T omx = 1.0 - xi;
    T denom = sk + (d1 + d0 - 2.0 * sk) * (xi * omx);
    T num = (sk * sk) * (d1 * (xi * xi) + 2.0 * sk * (xi * omx) + d0 * (omx * omx));
    return flog(fclampMin(num, 1e-300)) - 2.0 * flog(fclampMin(denom, 1e-300));
}

template <class T, class Arr>
int locateBin(const Arr& knots, double v) {
    int bin = 0;
    for (int i = 1; i < kBins; ++i) {
        if (scalarValue(knots[static_cast<std::size_t>(i)]) <= v) bin = i;
    }
    return bin;
}

// y = spline(u) and log s'(u); identity with zero log-derivative on the tails.
template <class T>
void splineForward(const SplineKnots<T>& k, const T& u, T* y, T* logDeriv) {
    const double uv = scalarValue(u);
    if (uv <= -kTail || uv >= kTail) {
        *y = u;
        *logDeriv = constantLike(u, 0.0);
        return;
    }
    const int bin = locateBin<T>(k.x, uv);
    T hx = k.x[static_cast<std::size_t>(bin + 1)] - k.x[static_cast<std::size_t>(bin)];
    T hy = k.y[static_cast<std::size_t>(bin + 1)] - k.y[static_cast<std::size_t>(bin)];
    T sk = hy / hx;
    T xi = (u - k.x[static_cast<std::size_t>(bin)]) / hx;
    T omx = 1.0 - xi;
    T denom = sk + (k.d[static_cast<std::size_t>(bin + 1)] + k.d[static_cast<std::size_t>(bin)] - 2.0 * sk) * (xi * omx);
    *y = k.y[static_cast<std::size_t>(bin)] +
         hy * (sk * (xi * xi) + k.d[static_cast<std::size_t>(bin)] * (xi * omx)) / denom;
    *logDeriv = rqLogDerivative(sk, k.d[static_cast<std::size_t>(bin)], k.d[static_cast<std::size_t>(bin + 1)], xi);
}

// u = spline^{-1}(y) and log s'(u), via the stable quadratic root.
template <class T>
void splineInverse(const SplineKnots<T>& k, const T& y, T* u, T* logDeriv) {
    const double yv = scalarValue(y);
    if (yv <= -kTail || yv >= kTail) {
        *u = y;
        *logDeriv = constantLike(y, 0.0);
        return;
    }
    const int bin = locateBin<T>(k.y, yv);
    T hx = k.x[static_cast<std::size_t>(bin + 1)] - k.x[static_cast<std::size_t>(bin)];
    T hy = k.y[static_cast<std::size_t>(bin + 1)] - k.y[static_cast<std::size_t>(bin)];
    T sk = hy / hx;
    T dy = y - k.y[static_cast<std::size_t>(bin)];
    T w = k.d[static_cast<std::size_t>(bin + 1)] + k.d[static_cast<std::size_t>(bin)] - 2.0 * sk;
    T qa = hy * (sk - k.d[static_cast<std::size_t>(bin)]) + dy * w;
    T qb = hy * k.d[static_cast<std::size_t>(bin)] - dy * w;
    T qc = -(sk * dy);
    T disc = fclampMin(qb * qb - 4.0 * qa * qc, 0.0);
    T xi = (2.0 * qc) / (-qb - fsqrt(disc));
    *u = k.x[static_cast<std::size_t>(bin)] + xi * hx;
    *logDeriv = rqLogDerivative(sk, k.d[static_cast<std::size_t>(bin)], k.d[static_cast<std::size_t>(bin + 1)], xi);
}

// NLL of one standardized target under the flow head. head[0] is log a. In
// affine-only mode the spline stage is skipped (ablation configuration).
template <class T>
T headNll(const std::vector<T>& head, double standardizedTarget, double logStd, bool affineOnly) {
    T b = head[1];
    T y = constantLike(head[0], standardizedTarget);
    T u = y;
    T logDeriv = constantLike(head[0], 0.0);
    if (!affineOnly) {
        SplineKnots<T> k = buildKnots(head);
        splineInverse(k, y, &u, &logDeriv);
    }
    T z = (u - b) / fexp(head[0]);
    return 0.5 * (z * z) + head[0] + logDeriv + (0.5 * kLog2Pi + logStd);
}

// --- conditioner network ------------------------------------------------------------

// Parameter group indices, aligned with ConditionalFlow::parameterGroupNames().
enum Group { kGateW = 0, kGateB, kValueW, kValueB, kNormGain, kNormBias, kHeadW, kHeadB, kGroupCount };

struct CondStash {
    std::vector<double> g, m, sig, act, xhat, ln, dr, out;
    std::vector<double> dropMask;  // inverted-dropout scale per hidden unit
    double invStd = 0.0;
};

void condForward(const std::vector<std::vector<double>>& p, int P, int H, int O,
                 const double* x, CondStash& ws) {
    ws.g.assign(static_cast<std::size_t>(H), 0.0);
    ws.m.assign(static_cast<std::size_t>(H), 0.0);
    for (int i = 0; i < P; ++i) {
        const double xi = x[i];
        const double* wg = &p[kGateW][static_cast<std::size_t>(i * H)];
        const double* wv = &p[kValueW][static_cast<std::size_t>(i * H)];
        for (int j = 0; j < H; ++j) {
            ws.g[static_cast<std::size_t>(j)] += xi * wg[j];
            ws.m[static_cast<std::size_t>(j)] += xi * wv[j];
        }
    }
    ws.sig.resize(static_cast<std::size_t>(H));
    ws.act.resize(static_cast<std::size_t>(H));
    double mean = 0.0;
    for (int j = 0; j < H; ++j) {
        ws.g[static_cast<std::size_t>(j)] += p[kGateB][static_cast<std::size_t>(j)];
        ws.m[static_cast<std::size_t>(j)] += p[kValueB][static_cast<std::size_t>(j)];
        const double gj = ws.g[static_cast<std::size_t>(j)];
        const double s = 1.0 / (1.0 + std::exp(-gj));
        ws.sig[static_cast<std::size_t>(j)] = s;
        ws.act[static_cast<std::size_t>(j)] = gj * s * ws.m[static_cast<std::size_t>(j)];  // SwiGLU
        mean += ws.act[static_cast<std::size_t>(j)];
    }
    mean /= H;
    double var = 0.0;
    for (int j = 0; j < H; ++j) {
        const double d = ws.act[static_cast<std::size_t>(j)] - mean;
        var += d * d;
    }
    var /= H;
    ws.invStd = 1.0 / std::sqrt(var + kLayerNormEps);
    ws.xhat.resize(static_cast<std::size_t>(H));
    ws.ln.resize(static_cast<std::size_t>(H));
    ws.dr.resize(static_cast<std::size_t>(H));
    const bool masked = !ws.dropMask.empty();
    for (int j = 0; j < H; ++j) {
        ws.xhat[static_cast<std::size_t>(j)] = (ws.act[static_cast<std::size_t>(j)] - mean) * ws.invStd;
        ws.ln[static_cast<std::size_t>(j)] = p[kNormGain][static_cast<std::size_t>(j)] * ws.xhat[static_cast<std::size_t>(j)] +
                                             p[kNormBias][static_cast<std::size_t>(j)];
        ws.dr[static_cast<std::size_t>(j)] =
            masked ? ws.ln[static_cast<std::size_t>(j)] * ws.dropMask[static_cast<std::size_t>(j)]
                   : ws.ln[static_cast<std::size_t>(j)];
    }
    ws.out.assign(static_cast<std::size_t>(O), 0.0);
    for (int j = 0; j < H; ++j) {
        const double dj = ws.dr[static_cast<std::size_t>(j)];
        if (dj == 0.0) continue;
        const double* wo = &p[kHeadW][static_cast<std::size_t>(j * O)];
        for (int o = 0; o < O; ++o) ws.out[static_cast<std::size_t>(o)] += dj * wo[o];
    }
    for (int o = 0; o < O; ++o) ws.out[static_cast<std::size_t>(o)] += p[kHeadB][static_cast<std::size_t>(o)];
}

void condBackward(const std::vector<std::vector<double>>& p, int P, int H, int O,
                  const double* x, const CondStash& ws, const std::vector<double>& dOut,
                  std::vector<std::vector<double>>& grads) {
    std::vector<double> dDr(static_cast<std::size_t>(H), 0.0);
    for (int j = 0; j < H; ++j) {
        const double dj = ws.dr[static_cast<std::size_t>(j)];
        double acc = 0.0;
        const double* wo = &p[kHeadW][static_cast<std::size_t>(j * O)];
        double* gwo = &grads[kHeadW][static_cast<std::size_t>(j * O)];
        for (int o = 0; o < O; ++o) {
            gwo[o] += dj * dOut[static_cast<std::size_t>(o)];
            acc += wo[o] * dOut[static_cast<std::size_t>(o)];
        }
        dDr[static_cast<std::size_t>(j)] = acc;
    }
    for (int o = 0; o < O; ++o) grads[kHeadB][static_cast<std::size_t>(o)] += dOut[static_cast<std::size_t>(o)];

    const bool masked = !ws.dropMask.empty();
    std::vector<double> dXhat(static_cast<std::size_t>(H));
    double sumDXhat = 0.0;
    double sumDXhatXhat = 0.0;
    for (int j = 0; j < H; ++j) {
        const double dLn = masked ? dDr[static_cast<std::size_t>(j)] * ws.dropMask[static_cast<std::size_t>(j)]
                                  : dDr[static_cast<std::size_t>(j)];
        grads[kNormGain][static_cast<std::size_t>(j)] += dLn * ws.xhat[static_cast<std::size_t>(j)];
        grads[kNormBias][static_cast<std::size_t>(j)] += dLn;
        const double dx = dLn * p[kNormGain][static_cast<std::size_t>(j)];
        dXhat[static_cast<std::size_t>(j)] = dx;
        sumDXhat += dx;
        sumDXhatXhat += dx * ws.xhat[static_cast<std::size_t>(j)];
    }
    sumDXhat /= H;
    sumDXhatXhat /= H;

    for (int j = 0; j < H; ++j) {
        const double dAct = ws.invStd * (dXhat[static_cast<std::size_t>(j)] - sumDXhat -
                                         ws.xhat[static_cast<std::size_t>(j)] * sumDXhatXhat);
        const double gj = ws.g[static_cast<std::size_t>(j)];
        const double s = ws.sig[static_cast<std::size_t>(j)];
        const double silu = gj * s;
        const double dSilu = s * (1.0 + gj * (1.0 - s));
        const double dM = dAct * silu;
        const double dG = dAct * ws.m[static_cast<std::size_t>(j)] * dSilu;
        grads[kGateB][static_cast<std::size_t>(j)] += dG;
        grads[kValueB][static_cast<std::size_t>(j)] += dM;
        for (int i = 0; i < P; ++i) {
            grads[kGateW][static_cast<std::size_t>(i * H + j)] += x[i] * dG;
            grads[kValueW][static_cast<std::size_t>(i * H + j)] += x[i] * dM;
        }
    }
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

// --- encodeParents --------------------------------------------------------------------

std::vector<double> encodeParents(const NormStats& stats, const std::vector<int>& parentColumns,
                                  const std::vector<Value>& values) {
    if (parentColumns.size() != values.size()) {
        raise(ErrorCategory::Schema, "parent encoding: value count does not match parent count");
    }
    if (parentColumns.empty()) return {1.0};
    std::vector<double> out;
    out.reserve(parentColumns.size());
    for (std::size_t i = 0; i < parentColumns.size(); ++i) {
        const int col = parentColumns[i];
        const Value& v = values[i];
        if (stats.schema().at(col).kind == FeatureKind::Numerical) {
            if (v.kind != FeatureKind::Numerical) {
                raise(ErrorCategory::Schema, "parent value kind mismatch for " + stats.schema().at(col).name);
            }
            out.push_back(stats.normalize(col, v.num));
        } else {
            if (v.kind != FeatureKind::Categorical) {
                raise(ErrorCategory::Schema, "parent value kind mismatch for " + stats.schema().at(col).name);
            }
            const int k = stats.supportSize(col);
            const int code = stats.code(col, v.cat);
            out.push_back(k <= 1 ? 0.0 : static_cast<double>(code) / (k - 1));
        }
    }
    return out;
}

// --- ConditionalFlow ---------------------------------------------------------------

const std::vector<std::string>& ConditionalFlow::parameterGroupNames() {
    static const std::vector<std::string> kNames = {
        "gate_weight", "gate_bias", "value_weight", "value_bias",
        "norm_gain",   "norm_bias", "head_weight",  "head_bias",
    };
    return kNames;
}

ConditionalFlow::ConditionalFlow(int contextWidth, FeatureKind targetKind, int hiddenUnits)
    : contextWidth_(contextWidth), hidden_(hiddenUnits), targetKind_(targetKind) {
    if (contextWidth_ < 1) raise(ErrorCategory::Config, "flow context width must be >= 1");
    if (hidden_ < 1) raise(ErrorCategory::Config, "flow hidden width must be >= 1");
    const int P = contextWidth_;
    const int H = hidden_;
    const int O = kHeadParams;
    params_.resize(kGroupCount);
    params_[kGateW].assign(static_cast<std::size_t>(P * H), 0.0);
    params_[kGateB].assign(static_cast<std::size_t>(H), 0.0);
    params_[kValueW].assign(static_cast<std::size_t>(P * H), 0.0);
    params_[kValueB].assign(static_cast<std::size_t>(H), 0.0);
    params_[kNormGain].assign(static_cast<std::size_t>(H), 1.0);
    params_[kNormBias].assign(static_cast<std::size_t>(H), 0.0);
    // Zero output head: the transform starts as the exact identity. Hidden
    // layers get a fixed pseudo-random init so gradients reach them once the
    // head moves off zero.
    params_[kHeadW].assign(static_cast<std::size_t>(H * O), 0.0);
    params_[kHeadB].assign(static_cast<std::size_t>(O), 0.0);
    std::mt19937_64 rng = makeStreamRng(0x5eedf10eULL, static_cast<std::uint64_t>(P) * 131 + static_cast<std::uint64_t>(H));
    const double limit = std::sqrt(6.0 / (P + H));
    for (double& w : params_[kGateW]) w = (2.0 * uniformDouble(rng) - 1.0) * limit;
    for (double& w : params_[kValueW]) w = (2.0 * uniformDouble(rng) - 1.0) * limit;
}

const std::vector<double>& ConditionalFlow::parameterGroup(int group) const {
    if (group < 0 || group >= static_cast<int>(params_.size())) {
        raise(ErrorCategory::Config, "parameter group index out of range");
    }
    return params_[static_cast<std::size_t>(group)];
}

std::vector<double>& ConditionalFlow::mutableParameterGroup(int group) {
    if (group < 0 || group >= static_cast<int>(params_.size())) {
        raise(ErrorCategory::Config, "parameter group index out of range");
    }
    return params_[static_cast<std::size_t>(group)];
}

void ConditionalFlow::setStandardization(double mean, double sd) {
    if (!(sd > 0.0)) raise(ErrorCategory::Config, "flow target std must be > 0");
    mean_ = mean;
    std_ = sd;
}

void ConditionalFlow::randomizeParameters(std::mt19937_64& rng, double scale) {
    for (auto& group : params_) {
        for (double& w : group) w += (2.0 * uniformDouble(rng) - 1.0) * scale;
    }
}

std::vector<double> ConditionalFlow::conditionerOut(const std::vector<double>& context) const {
    if (static_cast<int>(context.size()) != contextWidth_) {
        raise(ErrorCategory::Schema, "flow context width mismatch");
    }
    CondStash ws;
    condForward(params_, contextWidth_, hidden_, kHeadParams, context.data(), ws);
    return ws.out;
}

ConditionalFlow::Transform ConditionalFlow::forward(double z, const std::vector<double>& context) const {
    const std::vector<double> head = conditionerOut(context);
    const double a = std::exp(head[0]);
    const double u = a * z + head[1];
    double y = u;
    double logDeriv = 0.0;
    if (!affineOnly_) {
        const SplineKnots<double> knots = buildKnots(head);
        splineForward(knots, u, &y, &logDeriv);
    }
    Transform t;
    t.value = mean_ + std_ * y;
    t.logDet = head[0] + logDeriv + std::log(std_);
    return t;
}

double ConditionalFlow::inverse(double v, const std::vector<double>& context) const {
    const std::vector<double> head = conditionerOut(context);
    const double y = (v - mean_) / std_;
    double u = y;
    double logDeriv = 0.0;
    if (!affineOnly_) {
        const SplineKnots<double> knots = buildKnots(head);
        splineInverse(knots, y, &u, &logDeriv);
    }
    return (u - head[1]) / std::exp(head[0]);
}

double ConditionalFlow::logDensity(double v, const std::vector<double>& context) const {
    const std::vector<double> head = conditionerOut(context);
    return -headNll(head, (v - mean_) / std_, std::log(std_), affineOnly_);
}

double ConditionalFlow::batchLoss(const std::vector<std::vector<double>>& contexts,
                                  const std::vector<double>& targets,
                                  std::vector<std::vector<double>>* gradients) const {
    if (contexts.size() != targets.size() || contexts.empty()) {
        raise(ErrorCategory::Train, "flow batch needs equally many contexts and targets");
    }
    if (gradients != nullptr) {
        gradients->assign(params_.size(), {});
        for (std::size_t g = 0; g < params_.size(); ++g) {
            (*gradients)[g].assign(params_[g].size(), 0.0);
        }
    }
    Tape tape;
    CondStash ws;
    std::vector<TapeVar> head(static_cast<std::size_t>(kHeadParams));
    std::vector<double> dOut(static_cast<std::size_t>(kHeadParams));
    const double logStd = std::log(std_);
    double total = 0.0;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        condForward(params_, contextWidth_, hidden_, kHeadParams, contexts[i].data(), ws);
        tape.clear();
        for (int o = 0; o < kHeadParams; ++o) {
            head[static_cast<std::size_t>(o)] = {&tape, tape.push(ws.out[static_cast<std::size_t>(o)])};
        }
        const TapeVar nll = headNll(head, (targets[i] - mean_) / std_, logStd, affineOnly_);
        total += nll.value();
        if (gradients != nullptr) {
            tape.backward(nll.id);
            for (int o = 0; o < kHeadParams; ++o) dOut[static_cast<std::size_t>(o)] = tape.adj[static_cast<std::size_t>(o)];
            condBackward(params_, contextWidth_, hidden_, kHeadParams, contexts[i].data(), ws, dOut, *gradients);
        }
    }
    const double n = static_cast<double>(contexts.size());
    if (gradients != nullptr) {
        for (auto& g : *gradients) {
            for (double& v : g) v /= n;
        }
    }
    return total / n;
}

// --- training ---------------------------------------------------------------------------

struct FlowTrainer {
    static std::vector<double> fitFeature(ConditionalFlow& flow,
                                          const std::vector<std::vector<double>>& contexts,
                                          const std::vector<double>& rawTargets,
                                          const TrainConfig& cfg, std::mt19937_64& rng) {
        if (cfg.epochs < 1) raise(ErrorCategory::Train, "epochs must be >= 1");
        if (cfg.batchSize < 1) raise(ErrorCategory::Train, "batch size must be >= 1");
        if (!(cfg.learningRate > 0.0)) raise(ErrorCategory::Train, "learning rate must be > 0");
        if (cfg.dropoutRate < 0.0 || cfg.dropoutRate >= 1.0) {
            raise(ErrorCategory::Train, "dropout rate must be in [0, 1)");
        }
        const std::size_t n = contexts.size();
        const bool categorical = flow.targetKind() == FeatureKind::Categorical;

        std::vector<std::vector<double>> m(flow.params_.size());
        std::vector<std::vector<double>> v(flow.params_.size());
        for (std::size_t g = 0; g < flow.params_.size(); ++g) {
            m[g].assign(flow.params_[g].size(), 0.0);
            v[g].assign(flow.params_[g].size(), 0.0);
        }
        long step = 0;

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::vector<double> targets(n);
        std::vector<double> history;
        double best = std::numeric_limits<double>::infinity();
        int sinceBest = 0;
        std::vector<std::vector<double>> bestParams = flow.params_;

        Tape tape;
        CondStash ws;
        std::vector<TapeVar> head(static_cast<std::size_t>(kHeadParams));
        std::vector<double> dOut(static_cast<std::size_t>(kHeadParams));
        std::vector<std::vector<double>> grads(flow.params_.size());

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            for (std::size_t i = 0; i < n; ++i) {
                targets[i] = categorical ? rawTargets[i] + (uniformDouble(rng) - 0.5) : rawTargets[i];
            }
            for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates
                std::swap(perm[i - 1], perm[boundedUint(rng, i)]);
            }
            double epochLoss = 0.0;
            const double logStd = std::log(flow.std_);
            for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batchSize)) {
                const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batchSize));
                for (std::size_t g = 0; g < flow.params_.size(); ++g) {
                    grads[g].assign(flow.params_[g].size(), 0.0);
                }
                for (std::size_t bi = start; bi < end; ++bi) {
                    const std::size_t i = perm[bi];
                    ws.dropMask.clear();
                    if (cfg.dropoutRate > 0.0) {
                        ws.dropMask.resize(static_cast<std::size_t>(flow.hidden_));
                        const double keep = 1.0 - cfg.dropoutRate;
                        for (double& mask : ws.dropMask) {
                            mask = uniformDouble(rng) < keep ? 1.0 / keep : 0.0;
                        }
                    }
                    condForward(flow.params_, flow.contextWidth_, flow.hidden_, kHeadParams,
                                contexts[i].data(), ws);
                    tape.clear();
                    for (int o = 0; o < kHeadParams; ++o) {
                        head[static_cast<std::size_t>(o)] = {&tape, tape.push(ws.out[static_cast<std::size_t>(o)])};
                    }
                    const TapeVar nll =
                        headNll(head, (targets[i] - flow.mean_) / flow.std_, logStd, flow.affineOnly_);
                    epochLoss += nll.value();
                    tape.backward(nll.id);
                    for (int o = 0; o < kHeadParams; ++o) {
                        dOut[static_cast<std::size_t>(o)] = tape.adj[static_cast<std::size_t>(o)];
                    }
                    condBackward(flow.params_, flow.contextWidth_, flow.hidden_, kHeadParams,
                                 contexts[i].data(), ws, dOut, grads);
                }
                const double invBatch = 1.0 / static_cast<double>(end - start);
                ++step;
                const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(step));
                const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(step));
                for (std::size_t g = 0; g < flow.params_.size(); ++g) {
                    const int gi = static_cast<int>(g);
                    const bool decayed = gi == kGateW || gi == kValueW || gi == kHeadW;
                    for (std::size_t j = 0; j < flow.params_[g].size(); ++j) {
                        const double grad = grads[g][j] * invBatch;
                        m[g][j] = 0.9 * m[g][j] + 0.1 * grad;
                        v[g][j] = 0.999 * v[g][j] + 0.001 * grad * grad;
                        const double update = (m[g][j] / bc1) / (std::sqrt(v[g][j] / bc2) + 1e-8);
                        double p = flow.params_[g][j];
                        p -= cfg.learningRate * (update + (decayed ? cfg.weightDecay * p : 0.0));
                        flow.params_[g][j] = p;
                    }
                }
            }
            const double meanNll = epochLoss / static_cast<double>(n);
            if (!std::isfinite(meanNll)) {
                raise(ErrorCategory::Train, "flow training diverged (non-finite NLL)");
            }
            history.push_back(meanNll);
            if (meanNll < best) {
                best = meanNll;
                sinceBest = 0;
                bestParams = flow.params_;
            } else if (++sinceBest >= cfg.patience) {
                break;
            }
        }
        flow.params_ = std::move(bestParams);  // keep the best epoch, not the last
        return history;
    }
};

// --- FlowModel -------------------------------------------------------------------------

std::vector<int> FlowModel::parentColumnsOf(const std::string& feature) const {
    std::vector<int> cols;
    for (const std::string& parent : graph_.parentsOf(feature)) {
        cols.push_back(schema_.indexOf(parent));
    }
    return cols;
}

FlowModel FlowModel::fit(const Table& real, const DependencyGraph& finalizedGraph,
                         const TrainConfig& config) {
    if (real.rowCount() < 2) raise(ErrorCategory::Train, "flow training needs at least two rows");
    if (!finalizedGraph.hasRoot()) raise(ErrorCategory::Graph, "flow fitting needs a finalized dependency graph");
    if (finalizedGraph.findCycle()) raise(ErrorCategory::Graph, "flow fitting needs an acyclic dependency graph");

    FlowModel model;
    model.schema_ = real.schema();
    model.graph_ = finalizedGraph;
    model.stats_ = fitNormStats(real);
    model.config_ = config;

    const std::size_t n = real.rowCount();
    for (int c = 0; c < model.schema_.size(); ++c) {
        const FeatureSpec& spec = model.schema_.at(c);
        const std::vector<int> parents = model.parentColumnsOf(spec.name);

        std::vector<std::vector<double>> contexts(n);
        std::vector<Value> parentValues(parents.size());
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t k = 0; k < parents.size(); ++k) parentValues[k] = real.value(r, parents[k]);
            contexts[r] = encodeParents(model.stats_, parents, parentValues);
        }

        ConditionalFlow flow(parents.empty() ? 1 : static_cast<int>(parents.size()), spec.kind,
                             config.hiddenUnits);
        flow.setAffineOnly(config.affineOnly);
        std::vector<double> rawTargets(n);
        if (spec.kind == FeatureKind::Numerical) {
            const std::vector<double>& xs = real.numeric(c);
            double mean = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (double x : xs) var += (x - mean) * (x - mean);
            var /= static_cast<double>(n);
            double sd = std::sqrt(var);
            if (sd < 1e-12) sd = 1.0;  // constant column: the flow just reproduces the constant
            flow.setStandardization(mean, sd);
            for (std::size_t r = 0; r < n; ++r) rawTargets[r] = xs[r];
        } else {
            const std::vector<std::string>& xs = real.categorical(c);
            double mean = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                rawTargets[r] = static_cast<double>(model.stats_.code(c, xs[r]));
                mean += rawTargets[r];
            }
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t r = 0; r < n; ++r) var += (rawTargets[r] - mean) * (rawTargets[r] - mean);
            var /= static_cast<double>(n);
            // Dequantization adds uniform noise with variance 1/12.
            flow.setStandardization(mean, std::sqrt(var + 1.0 / 12.0));
        }

        std::mt19937_64 rng = makeStreamRng(config.seed, static_cast<std::uint64_t>(c) + 0xf10aULL);
        std::vector<double> history = FlowTrainer::fitFeature(flow, contexts, rawTargets, config, rng);
        model.history_.emplace(spec.name, std::move(history));
        model.flows_.emplace(spec.name, std::move(flow));
    }
    return model;
}

const ConditionalFlow& FlowModel::flow(const std::string& feature) const {
    auto it = flows_.find(feature);
    if (it == flows_.end()) raise(ErrorCategory::Schema, "no flow fitted for feature: " + feature);
    return it->second;
}

const std::vector<double>& FlowModel::trainingHistory(const std::string& feature) const {
    auto it = history_.find(feature);
    if (it == history_.end()) {
        static const std::vector<double> kEmpty;
        return kEmpty;
    }
    return it->second;
}

Table FlowModel::sampleTable(std::size_t n, std::uint64_t seed) const {
    if (n < 1) raise(ErrorCategory::Config, "requested row count must be >= 1");
    if (flows_.empty()) raise(ErrorCategory::Model, "flow model holds no fitted flows");
    const std::vector<std::string> order = graph_.topoOrder();

    struct Plan {
        int column = -1;
        const ConditionalFlow* flow = nullptr;
        std::vector<int> parents;
    };
    std::vector<Plan> plans;
    plans.reserve(order.size());
    for (const std::string& name : order) {
        Plan plan;
        plan.column = schema_.indexOf(name);
        plan.flow = &flow(name);
        plan.parents = parentColumnsOf(name);
        plans.push_back(std::move(plan));
    }

    Table out(schema_);
    out.reserve(n);
    std::vector<Value> row(static_cast<std::size_t>(schema_.size()));
    std::vector<Value> parentValues;
    for (std::size_t r = 0; r < n; ++r) {
        std::mt19937_64 rng = makeStreamRng(seed, r);
        for (const Plan& plan : plans) {
            parentValues.clear();
            for (int pc : plan.parents) parentValues.push_back(row[static_cast<std::size_t>(pc)]);
            const std::vector<double> ctx = encodeParents(stats_, plan.parents, parentValues);
            const double z = standardNormal(rng);
            const double v = plan.flow->forward(z, ctx).value;
            if (schema_.at(plan.column).kind == FeatureKind::Numerical) {
                const double lo = stats_.minOf(plan.column);
                const double hi = stats_.maxOf(plan.column);
                row[static_cast<std::size_t>(plan.column)] =
                    Value::numerical(std::min(hi, std::max(lo, v)));
            } else {
                const int k = stats_.supportSize(plan.column);
                const int code = static_cast<int>(
                    std::min<long>(k - 1, std::max<long>(0, std::llround(v))));
                row[static_cast<std::size_t>(plan.column)] =
                    Value::categorical(stats_.category(plan.column, code));
            }
        }
        out.appendRow(row);
    }
    return out;
}

double FlowModel::featureMeanNll(const std::string& feature, const Table& data) const {
    if (data.schema().fingerprint() != schema_.fingerprint()) {
        raise(ErrorCategory::Eval, "table schema does not match the fitted model");
    }
    const int column = schema_.indexOf(feature);
    const ConditionalFlow& f = flow(feature);
    const std::vector<int> parents = parentColumnsOf(feature);

    std::vector<std::vector<double>> contexts(data.rowCount());
    std::vector<Value> parentValues(parents.size());
    for (std::size_t r = 0; r < data.rowCount(); ++r) {
        for (std::size_t k = 0; k < parents.size(); ++k) parentValues[k] = data.value(r, parents[k]);
        contexts[r] = encodeParents(stats_, parents, parentValues);
    }
    std::vector<double> targets(data.rowCount());
    if (schema_.at(column).kind == FeatureKind::Numerical) {
        const std::vector<double>& xs = data.numeric(column);
        for (std::size_t r = 0; r < data.rowCount(); ++r) targets[r] = xs[r];
    } else {
        std::mt19937_64 rng = makeStreamRng(0xdeaaULL, static_cast<std::uint64_t>(column));
        const std::vector<std::string>& xs = data.categorical(column);
        for (std::size_t r = 0; r < data.rowCount(); ++r) {
            targets[r] = static_cast<double>(stats_.code(column, xs[r])) + (uniformDouble(rng) - 0.5);
        }
    }
    return f.batchLoss(contexts, targets);
}

// --- persistence --------------------------------------------------------------------

std::string FlowModel::archiveText() const {
    nlohmann::ordered_json doc;
    doc["format"] = "depsynth-flow-v1";
    doc["schema_fingerprint"] = hex64(schema_.fingerprint());
    doc["graph_fingerprint"] = hex64(graph_.fingerprint());
    nlohmann::ordered_json features = nlohmann::ordered_json::array();
    for (const FeatureSpec& f : schema_.features()) {
        features.push_back({{"name", f.name}, {"kind", featureKindName(f.kind)}});
    }
    doc["schema"] = features;
    doc["graph_text"] = graph_.dependencyText();
    doc["train"] = {
        {"epochs", config_.epochs},
        {"batch_size", config_.batchSize},
        {"learning_rate", config_.learningRate},
        {"weight_decay", config_.weightDecay},
        {"dropout_rate", config_.dropoutRate},
        {"hidden_units", config_.hiddenUnits},
        {"patience", config_.patience},
        {"affine_only", config_.affineOnly},
        {"seed", config_.seed},
    };
    nlohmann::ordered_json norm = nlohmann::ordered_json::array();
    for (int c = 0; c < schema_.size(); ++c) {
        if (schema_.at(c).kind == FeatureKind::Numerical) {
            norm.push_back({{"min", stats_.minOf(c)}, {"max", stats_.maxOf(c)}});
        } else {
            norm.push_back({{"support", stats_.support(c)}});
        }
    }
    doc["norm"] = norm;
    nlohmann::ordered_json flows = nlohmann::ordered_json::object();
    for (const auto& [name, flow] : flows_) {
        nlohmann::ordered_json fj;
        fj["context_width"] = flow.contextWidth();
        fj["hidden_units"] = flow.hiddenUnits();
        fj["target_kind"] = featureKindName(flow.targetKind());
        fj["target_mean"] = flow.targetMean();
        fj["target_std"] = flow.targetStd();
        nlohmann::ordered_json groups = nlohmann::ordered_json::array();
        for (std::size_t g = 0; g < ConditionalFlow::parameterGroupNames().size(); ++g) {
            groups.push_back(flow.parameterGroup(static_cast<int>(g)));
        }
        fj["params"] = groups;
        flows[name] = std::move(fj);
    }
    doc["flows"] = std::move(flows);
    return doc.dump(1);
}

void FlowModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCategory::Io, "cannot write file: " + path);
    out << archiveText();
    if (!out) raise(ErrorCategory::Io, "failed while writing file: " + path);
}

FlowModel FlowModel::fromArchiveText(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCategory::Model, std::string("model archive is not valid json: ") + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "depsynth-flow-v1") {
            raise(ErrorCategory::Model, "unsupported model archive format");
        }
        std::vector<FeatureSpec> specs;
        for (const auto& f : doc.at("schema")) {
            FeatureSpec spec;
            spec.name = f.at("name").get<std::string>();
            spec.kind = f.at("kind").get<std::string>() == "numerical" ? FeatureKind::Numerical
                                                                       : FeatureKind::Categorical;
            specs.push_back(std::move(spec));
        }
        FlowModel model;
        model.schema_ = Schema(std::move(specs));
        if (hex64(model.schema_.fingerprint()) != doc.at("schema_fingerprint").get<std::string>()) {
            raise(ErrorCategory::Model, "model archive schema fingerprint mismatch");
        }
        model.graph_ = parseDependencyText(doc.at("graph_text").get<std::string>(), model.schema_);
        model.graph_.finalize();
        if (hex64(model.graph_.fingerprint()) != doc.at("graph_fingerprint").get<std::string>()) {
            raise(ErrorCategory::Model, "model archive graph fingerprint mismatch");
        }
        const auto& t = doc.at("train");
        model.config_.epochs = t.at("epochs").get<int>();
        model.config_.batchSize = t.at("batch_size").get<int>();
        model.config_.learningRate = t.at("learning_rate").get<double>();
        model.config_.weightDecay = t.at("weight_decay").get<double>();
        model.config_.dropoutRate = t.at("dropout_rate").get<double>();
        model.config_.hiddenUnits = t.at("hidden_units").get<int>();
        model.config_.patience = t.at("patience").get<int>();
        model.config_.affineOnly = t.at("affine_only").get<bool>();
        model.config_.seed = t.at("seed").get<std::uint64_t>();

        std::vector<std::pair<double, double>> ranges(static_cast<std::size_t>(model.schema_.size()),
                                                      {0.0, 0.0});
        std::vector<std::vector<std::string>> supports(static_cast<std::size_t>(model.schema_.size()));
        const auto& norm = doc.at("norm");
        for (int c = 0; c < model.schema_.size(); ++c) {
            const auto& entry = norm.at(static_cast<std::size_t>(c));
            if (model.schema_.at(c).kind == FeatureKind::Numerical) {
                ranges[static_cast<std::size_t>(c)] = {entry.at("min").get<double>(),
                                                       entry.at("max").get<double>()};
            } else {
                supports[static_cast<std::size_t>(c)] =
                    entry.at("support").get<std::vector<std::string>>();
            }
        }
        model.stats_ = NormStats::fromSaved(model.schema_, ranges, supports);

        const auto& flows = doc.at("flows");
        for (const FeatureSpec& spec : model.schema_.features()) {
            const auto& fj = flows.at(spec.name);
            ConditionalFlow flow(fj.at("context_width").get<int>(),
                                 fj.at("target_kind").get<std::string>() == "numerical"
                                     ? FeatureKind::Numerical
                                     : FeatureKind::Categorical,
                                 fj.at("hidden_units").get<int>());
            flow.setStandardization(fj.at("target_mean").get<double>(), fj.at("target_std").get<double>());
            flow.setAffineOnly(model.config_.affineOnly);
            const auto& groups = fj.at("params");
            for (std::size_t g = 0; g < ConditionalFlow::parameterGroupNames().size(); ++g) {
                std::vector<double> values = groups.at(g).get<std::vector<double>>();
                std::vector<double>& target = flow.mutableParameterGroup(static_cast<int>(g));
                if (values.size() != target.size()) {
                    raise(ErrorCategory::Model, "model archive parameter shape mismatch for " + spec.name);
                }
                target = std::move(values);
            }
            model.flows_.emplace(spec.name, std::move(flow));
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCategory::Model, std::string("model archive is missing fields: ") + e.what());
    }
}

FlowModel FlowModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCategory::Io, "cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return fromArchiveText(buf.str());
}

}  // namespace depsynth
