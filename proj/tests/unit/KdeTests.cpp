#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "Fixtures.h"
#include "depsynth/Kde.h"
#include "depsynth/Rng.h"

using namespace depsynth;
using namespace depsynth::testfix;

TEST_CASE("bandwidth rules match their closed forms") {
    CHECK(bandwidth(BandwidthRule::Scott, 32, 1) == 0.5);  // 32^(-1/5) is exact
    CHECK(bandwidth(BandwidthRule::Scott, 1, 1) == 1.0);
    CHECK(bandwidth(BandwidthRule::Silverman, 32, 1) ==
          doctest::Approx(0.5296119205244061).epsilon(1e-12));
    CHECK(bandwidth(BandwidthRule::Scott, 100, 2) ==
          doctest::Approx(0.4641588833612779).epsilon(1e-12));
    CHECK(bandwidth(BandwidthRule::Fixed, 100, 2, 0.37) == 0.37);

    CHECK(expectError([] { bandwidth(BandwidthRule::Scott, 0, 1); }).category() ==
          ErrorCategory::Config);
    CHECK(expectError([] { bandwidth(BandwidthRule::Scott, 10, 0); }).category() ==
          ErrorCategory::Config);
    CHECK(expectError([] { bandwidth(BandwidthRule::Fixed, 10, 1, 0.0); }).category() ==
          ErrorCategory::Config);

    CHECK(std::string(bandwidthRuleName(BandwidthRule::Silverman)) == "silverman");
    CHECK(bandwidthRuleFromName("fixed") == BandwidthRule::Fixed);
    CHECK(expectError([] { bandwidthRuleFromName("gauss"); }).category() == ErrorCategory::Config);
}

TEST_CASE("kde density matches the Gaussian mixture closed form") {
    // Single kernel at 0 with h=1: density at the center is 1/sqrt(2*pi).
    CHECK(kdeDensity({0.0}, 1.0, 0.0) == doctest::Approx(0.3989422804014327).epsilon(1e-12));
    // Two kernels: mean of the two Gaussian evaluations.
    const double expected =
        0.5 * (std::exp(-0.5 * 0.25) + std::exp(-0.5 * 2.25)) / std::sqrt(2.0 * 3.141592653589793);
    CHECK(kdeDensity({0.5, 2.5}, 1.0, 1.0) == doctest::Approx(expected).epsilon(1e-12));

    CHECK(expectError([] { kdeDensity({}, 1.0, 0.0); }).category() == ErrorCategory::Config);
    CHECK(expectError([] { kdeDensity({1.0}, 0.0, 0.0); }).category() == ErrorCategory::Config);
}

TEST_CASE("kde density integrates to one") {
    std::mt19937_64 rng = makeRng(11);
    std::vector<double> values(64);
    for (double& v : values) v = standardNormal(rng);
    const double h = 0.3;
    const auto [minIt, maxIt] = std::minmax_element(values.begin(), values.end());
    const double lo = *minIt - 5.0 * h;
    const double hi = *maxIt + 5.0 * h;
    const int grid = 10000;
    double integral = 0.0;
    double prev = kdeDensity(values, h, lo);
    for (int i = 1; i <= grid; ++i) {
        const double x = lo + (hi - lo) * i / grid;
        const double cur = kdeDensity(values, h, x);
        integral += 0.5 * (prev + cur) * (hi - lo) / grid;
        prev = cur;
    }
    CHECK(integral > 0.999);
    CHECK(integral < 1.001);
}

TEST_CASE("kde sampling draws candidate plus scaled noise, clamped") {
    std::mt19937_64 rng = makeRng(3);
    SUBCASE("vanishing bandwidth returns the candidate") {
        for (int i = 0; i < 20; ++i) {
            CHECK(kdeSample({5.0}, 1e-12, 0.0, 10.0, rng) == doctest::Approx(5.0).epsilon(1e-9));
        }
    }
    SUBCASE("empirical mean matches the mixture mean") {
        double sum = 0.0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) sum += kdeSample({0.0, 10.0}, 0.01, 0.0, 10.0, rng);
        CHECK(sum / draws == doctest::Approx(5.0).epsilon(0.04));  // +-0.2 absolute
    }
    SUBCASE("samples never leave the clamp range") {
        for (int i = 0; i < 200; ++i) {
            const double v = kdeSample({0.0, 1.0}, 5.0, 0.0, 1.0, rng);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(expectError([&] { kdeSample({}, 1.0, 0.0, 1.0, rng); }).category() ==
          ErrorCategory::Config);
}

TEST_CASE("categorical sampling follows empirical frequencies") {
    std::mt19937_64 rng = makeRng(9);
    SUBCASE("single candidate and constant candidates are deterministic") {
        for (int i = 0; i < 10; ++i) CHECK(categoricalSample({"only"}, rng) == "only");
        for (int i = 0; i < 10; ++i) CHECK(categoricalSample({"x", "x", "x"}, rng) == "x");
    }
    SUBCASE("two-to-one candidates sample near two thirds") {
        int a = 0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            if (categoricalSample({"A", "A", "B"}, rng) == "A") ++a;
        }
        const double frac = static_cast<double>(a) / draws;
        CHECK(frac == doctest::Approx(2.0 / 3.0).epsilon(0.03));
    }
    CHECK(expectError([&] { categoricalSample({}, rng); }).category() == ErrorCategory::Config);
}

namespace {

// Six rows over (education categorical, age numerical, outcome, score).
Table smallMixedTable() {
    Schema schema({{"age", FeatureKind::Numerical},
                   {"education", FeatureKind::Categorical},
                   {"outcome", FeatureKind::Categorical},
                   {"score", FeatureKind::Numerical}});
    Table t(schema);
    const double ages[] = {20, 30, 40, 50, 60, 70};
    const char* edu[] = {"HS", "HS", "HS", "BSc", "BSc", "BSc"};
    const char* outcome[] = {"no", "no", "yes", "yes", "yes", "no"};
    const double score[] = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    for (int r = 0; r < 6; ++r) {
        t.appendRow({Value::numerical(ages[r]), Value::categorical(edu[r]),
                     Value::categorical(outcome[r]), Value::numerical(score[r])});
    }
    return t;
}

}  // namespace

TEST_CASE("kde index partitions by categorical parent tuples") {
    const Table t = smallMixedTable();
    const std::string graphText =
        "age: []\neducation: []\noutcome: [education->outcome]\nscore: [age->score]\n";
    const KdeModel model(t, finalizedGraph(graphText, t.schema()), FuzzyPolicy{1, 0.05, 2.0});
    CHECK(model.partitionCount("outcome") == 2);  // HS and BSc
    CHECK(model.partitionCount("score") == 1);    // single tree over normalized ages
    CHECK(model.partitionCount("age") == 1);      // root-only: whole-table partition
}

TEST_CASE("fuzzy matching expands in stages until enough candidates") {
    const Table t = smallMixedTable();
    const std::string graphText =
        "age: []\neducation: []\noutcome: [education->outcome]\nscore: [age->score]\n";

    SUBCASE("exact categorical tuple short-circuits at radius (0, 0)") {
        const KdeModel model(t, finalizedGraph(graphText, t.schema()), FuzzyPolicy{3, 0.05, 2.0});
        const CandidateSet set = model.fuzzyMatch("outcome", {Value::categorical("HS")});
        CHECK(set.exact);
        CHECK(set.hammingRadius == 0);
        CHECK(set.numericRadius == 0.0);
        CHECK(set.rows == std::vector<int>{0, 1, 2});
    }

    SUBCASE("unseen category first matches at hamming radius 1") {
        const KdeModel model(t, finalizedGraph(graphText, t.schema()), FuzzyPolicy{1, 0.05, 2.0});
        const CandidateSet set = model.fuzzyMatch("outcome", {Value::categorical("PhD")});
        CHECK_FALSE(set.exact);
        CHECK(set.hammingRadius == 1);
        CHECK(set.rows.size() == 6);  // both partitions are at distance 1
    }

    SUBCASE("numeric parent at normalized distance 0.07 is found at eps 0.1") {
        Schema schema({{"x", FeatureKind::Numerical}, {"y", FeatureKind::Numerical}});
        Table small(schema);
        small.appendRow({Value::numerical(0.0), Value::numerical(1.0)});
        small.appendRow({Value::numerical(3.0), Value::numerical(2.0)});
        small.appendRow({Value::numerical(10.0), Value::numerical(3.0)});
        const KdeModel model(small, finalizedGraph("x: []\ny: [x->y]\n", schema),
                             FuzzyPolicy{1, 0.05, 2.0});
        // Query x = 2.3 normalizes to 0.23; nearest row (x = 3) sits at 0.07.
        const CandidateSet set = model.fuzzyMatch("y", {Value::numerical(2.3)});
        CHECK_FALSE(set.exact);
        CHECK(set.hammingRadius == 0);
        CHECK(set.numericRadius == doctest::Approx(0.1));
        CHECK(set.rows == std::vector<int>{1});
    }

    SUBCASE("candidate sets grow with the radius and contain the exact set") {
        const KdeModel tight(t, finalizedGraph(graphText, t.schema()), FuzzyPolicy{3, 0.05, 2.0});
        const KdeModel wide(t, finalizedGraph(graphText, t.schema()), FuzzyPolicy{6, 0.05, 2.0});
        const CandidateSet exact = tight.fuzzyMatch("outcome", {Value::categorical("BSc")});
        const CandidateSet fuzzy = wide.fuzzyMatch("outcome", {Value::categorical("BSc")});
        CHECK(exact.rows.size() == 3);
        CHECK(fuzzy.rows.size() == 6);
        CHECK(fuzzy.hammingRadius >= exact.hammingRadius);
        CHECK(std::includes(fuzzy.rows.begin(), fuzzy.rows.end(), exact.rows.begin(),
                            exact.rows.end()));
    }

    SUBCASE("parent value count is validated") {
        const KdeModel model(t, finalizedGraph(graphText, t.schema()), FuzzyPolicy{1, 0.05, 2.0});
        CHECK(expectError([&] { model.fuzzyMatch("outcome", {}); }).category() ==
              ErrorCategory::Schema);
    }
}

TEST_CASE("kde sampling on iris is complete, in-support, and seeded") {
    const Table iris = loadCsvInferred(dataPath("iris.csv"));
    const DependencyGraph graph = finalizedGraph(readFileText(dataPath("dep_iris.txt")), iris.schema());
    const KdeModel model(iris, graph);
    const NormStats stats = fitNormStats(iris);

    const Table synth = model.sampleTable(150, 42);
    REQUIRE(synth.rowCount() == 150);
    CHECK(synth.schema().fingerprint() == iris.schema().fingerprint());

    std::set<std::string> species(iris.categorical(4).begin(), iris.categorical(4).end());
    for (const std::string& s : synth.categorical(4)) CHECK(species.count(s) == 1);
    for (int c = 0; c < 4; ++c) {
        for (double v : synth.numeric(c)) {
            CHECK(v >= stats.minOf(c));
            CHECK(v <= stats.maxOf(c));
        }
    }

    CHECK(csvText(model.sampleTable(25, 7)) == csvText(model.sampleTable(25, 7)));
    CHECK(csvText(model.sampleTable(25, 7)) != csvText(model.sampleTable(25, 8)));
}

TEST_CASE("kde sampling preserves a deterministic pair bijection") {
    // Large enough that every education level clears the default kMin of 20,
    // so the exact-match stage fires for every sampled row.
    const Table census = makeCensusTable(2000, 123);
    const KdeModel model(census, finalizedGraph(censusGraphText(), census.schema()));
    const Table synth = model.sampleTable(200, 5);

    std::map<std::string, std::string> mapping;
    const int edu = census.schema().indexOf("education");
    const int num = census.schema().indexOf("educational-num");
    for (std::size_t r = 0; r < census.rowCount(); ++r) {
        mapping[census.categorical(edu)[r]] = census.categorical(num)[r];
    }
    for (std::size_t r = 0; r < synth.rowCount(); ++r) {
        CHECK(synth.categorical(num)[r] == mapping.at(synth.categorical(edu)[r]));
    }
}

TEST_CASE("kde model construction guards") {
    const Table t = smallMixedTable();
    DependencyGraph bare = parseDependencyText("age: []\n", t.schema());
    CHECK(expectError([&] { KdeModel(t, bare); }).category() == ErrorCategory::Graph);

    const DependencyGraph good = finalizedGraph("age: []\n", t.schema());
    CHECK(expectError([&] { KdeModel(Table(t.schema()), good); }).category() ==
          ErrorCategory::Config);
    CHECK(expectError([&] { KdeModel(t, good, FuzzyPolicy{0, 0.05, 2.0}); }).category() ==
          ErrorCategory::Config);
    CHECK(expectError([&] { KdeModel(t, good, FuzzyPolicy{1, 0.0, 2.0}); }).category() ==
          ErrorCategory::Config);
    CHECK(expectError([&] { KdeModel(t, good, FuzzyPolicy{1, 0.05, 1.0}); }).category() ==
          ErrorCategory::Config);
    CHECK(expectError([&] {
              KdeModel(t, good, FuzzyPolicy{}, BandwidthRule::Fixed, -1.0);
          }).category() == ErrorCategory::Config);
}
