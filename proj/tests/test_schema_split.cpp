#include <algorithm>
#include <functional>
#include <optional>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "renalct/error.hpp"
#include "renalct/grid.hpp"
#include "renalct/phantom.hpp"
#include "renalct/predictor_bridge.hpp"
#include "renalct/rng.hpp"
#include "renalct/schema.hpp"
#include "renalct/split.hpp"
#include "test_support.hpp"

using namespace renalct;
using renalct::testing::random_feature_set;
using renalct::testing::TempDir;
using renalct::testing::worked_feature_set;

namespace {

Annotation make_annotation(int i, FeatureSet f) {
    Annotation a;
    a.annotation_id = "A" + std::to_string(i);
    a.patient_id = "P" + std::to_string(i / 2);
    a.report_id = "R" + std::to_string(i);
    a.sentence = "Sentence " + std::to_string(i) + ".";
    a.slice.series_number = 4;
    a.slice.image_number = 1 + i;
    a.features = std::move(f);
    return a;
}

CohortManifest table1_manifest() {
    PhantomConfig cfg;
    return sample_cohort(cfg).manifest;
}

std::optional<ErrorKind> kind_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.kind();
    }
    return std::nullopt;
}

} // namespace

// ---------------------------------------------------------------------------
// Schema

TEST(Schema, WorkedFeatureSetIsValid) { EXPECT_TRUE(validate_feature_set(worked_feature_set()).empty()); }

TEST(Schema, AllUnknownIsValid) { EXPECT_TRUE(validate_feature_set(FeatureSet{}).empty()); }

TEST(Schema, NegativeSizeIsReported) {
    auto f = worked_feature_set();
    f.size_cm = -1.0;
    const auto v = validate_feature_set(f);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].field, "size_cm");
}

TEST(Schema, NonFiniteSizeIsReported) {
    auto f = worked_feature_set();
    f.size_cm = std::numeric_limits<double>::infinity();
    EXPECT_FALSE(validate_feature_set(f).empty());
}

TEST(Schema, RawSizeNeedsValueOrUnparseableMarker) {
    FeatureSet f;
    f.raw_size = "large";
    ASSERT_EQ(validate_feature_set(f).size(), 1u);
    EXPECT_EQ(validate_feature_set(f)[0].field, "raw_size");
    f.size_unparseable = true;
    EXPECT_TRUE(validate_feature_set(f).empty());
}

TEST(Schema, TokensRoundTrip) {
    EXPECT_EQ(to_token(Enhancement::non_enhancement), "non_enhancement");
    EXPECT_EQ(parse_token<Attenuation>("isoattenuating"), Attenuation::isoattenuating);
    EXPECT_FALSE(try_parse_token<Attenuation>("dense").has_value());
    EXPECT_EQ(kind_of([] { parse_token<Position>("middle"); }), ErrorKind::data);
}

TEST(Schema, ManifestRoundTripIsIdentity) {
    Rng rng(11);
    CohortManifest m;
    m.provenance = "phantom";
    for (int i = 0; i < 300; ++i) {
        auto a = make_annotation(i, random_feature_set(rng));
        if (i % 7 == 0)
            a.features.raw_size = "about " + std::to_string(i) + " mm";
        if (i % 7 == 0 && !a.features.size_cm)
            a.features.size_unparseable = true;
        if (i % 5 == 0)
            a.split_fold = i % 3;
        if (i % 11 == 0)
            a.slice.sort_order = SortOrder::descending;
        m.annotations.push_back(a);
    }
    std::istringstream in(serialize_manifest(m));
    EXPECT_EQ(parse_manifest(in), m);
}

TEST(Schema, ManifestFileRoundTripWith130Annotations) {
    TempDir dir("schema");
    const auto m = table1_manifest();
    save_manifest(m, dir / "m.jsonl");
    const auto back = load_manifest(dir / "m.jsonl");
    EXPECT_EQ(back.annotations.size(), 130u);
    EXPECT_EQ(back, m);
}

TEST(Schema, EmptyManifestIsValid) {
    std::istringstream in("");
    EXPECT_TRUE(parse_manifest(in).annotations.empty());
    std::istringstream header_only("{\"schema_version\":1,\"provenance\":\"real\"}\n");
    EXPECT_TRUE(parse_manifest(header_only).annotations.empty());
}

TEST(Schema, UnknownTokenIsRejectedWithLineAndToken) {
    auto j = annotation_to_json(make_annotation(0, worked_feature_set()));
    j["features"]["attenuation"] = "dense";
    std::istringstream in("{\"schema_version\":1}\n" + j.dump() + "\n");
    try {
        parse_manifest(in, "fixture.jsonl");
        FAIL() << "expected a data error";
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::data);
        const std::string msg = e.what();
        EXPECT_NE(msg.find("fixture.jsonl:2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("features.attenuation"), std::string::npos) << msg;
        EXPECT_NE(msg.find("dense"), std::string::npos) << msg;
    }
}

TEST(Schema, MalformedAndDuplicateRecordsAreRejected) {
    std::istringstream bad("{not json}\n");
    EXPECT_EQ(kind_of([&] { parse_manifest(bad); }), ErrorKind::data);
    const auto line = annotation_to_json(make_annotation(0, worked_feature_set())).dump();
    std::istringstream dup(line + "\n" + line + "\n");
    EXPECT_EQ(kind_of([&] { parse_manifest(dup); }), ErrorKind::data);
    auto j = annotation_to_json(make_annotation(0, worked_feature_set()));
    j["sentence"] = "";
    std::istringstream empty_sentence(j.dump() + "\n");
    EXPECT_EQ(kind_of([&] { parse_manifest(empty_sentence); }), ErrorKind::data);
    j = annotation_to_json(make_annotation(0, worked_feature_set()));
    j["slice"]["image_number"] = 0;
    std::istringstream zero_image(j.dump() + "\n");
    EXPECT_EQ(kind_of([&] { parse_manifest(zero_image); }), ErrorKind::data);
}

TEST(Schema, BooleansDefaultToFalse) {
    nlohmann::json j = {{"position", "left"},
                        {"exophytic", "unknown"},
                        {"attenuation", "unknown"},
                        {"enhancement", "unknown"}};
    const auto f = feature_set_from_json(j);
    EXPECT_FALSE(f.cyst);
    EXPECT_FALSE(f.mass);
    EXPECT_FALSE(f.tumor);
    EXPECT_EQ(f.attenuation, Attenuation::unknown);
}

// ---------------------------------------------------------------------------
// Rng and grid

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
    EXPECT_EQ(derive_seed(7, "a"), derive_seed(7, "a"));
    EXPECT_NE(derive_seed(7, "a"), derive_seed(7, "b"));
    EXPECT_NE(derive_seed(7, "a"), derive_seed(8, "a"));
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, IndexStaysInRange) {
    Rng rng(3);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 5000; ++i)
        ++counts[rng.index(5)];
    for (int c : counts)
        EXPECT_GT(c, 850);
}

TEST(Grid, MapAndIndexing) {
    Grid<int> g(2, 3, 1);
    g(1, 2) = 5;
    const auto d = g.map([](int v) { return v * 2.0; });
    EXPECT_EQ(d.rows(), 2u);
    EXPECT_EQ(d.cols(), 3u);
    EXPECT_DOUBLE_EQ(d(1, 2), 10.0);
    EXPECT_DOUBLE_EQ(d(0, 0), 2.0);
}

// ---------------------------------------------------------------------------
// Split

TEST(Split, FoldSizesFollowPartitionArithmetic) {
    const auto m = table1_manifest();
    SplitConfig cfg;
    cfg.seed = 1;
    const auto folds = make_folds(m, cfg);
    EXPECT_TRUE(check_partition(m, folds).empty());
    for (auto s : folds.fold_sizes())
        EXPECT_EQ(s, 26u);
}

TEST(Split, UnevenSizesDifferByAtMostOne) {
    auto m = table1_manifest();
    m.annotations.resize(128);
    SplitConfig cfg;
    const auto folds = make_folds(m, cfg);
    EXPECT_TRUE(check_partition(m, folds).empty());
    const auto sizes = folds.fold_sizes();
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    EXPECT_LE(*hi - *lo, 1u);
}

TEST(Split, LeftCountsAreSpreadEvenly) {
    const auto m = table1_manifest();
    SplitConfig cfg;
    cfg.seed = 3;
    const auto folds = make_folds(m, cfg);
    std::vector<int> left(5, 0);
    for (const auto &a : m.annotations)
        if (a.features.position == Position::left)
            ++left[static_cast<std::size_t>(folds.fold_of(a.annotation_id))];
    const auto [lo, hi] = std::minmax_element(left.begin(), left.end());
    EXPECT_LE(*hi - *lo, 2);
}

TEST(Split, SameSeedGivesIdenticalFoldFiles) {
    const auto m = table1_manifest();
    SplitConfig cfg;
    cfg.seed = 1;
    EXPECT_EQ(folds_to_json(make_folds(m, cfg)).dump(), folds_to_json(make_folds(m, cfg)).dump());
}

TEST(Split, KGreaterThanNIsAConfigError) {
    CohortManifest m;
    for (int i = 0; i < 3; ++i)
        m.annotations.push_back(make_annotation(i, FeatureSet{}));
    SplitConfig cfg;
    cfg.k = 5;
    EXPECT_EQ(kind_of([&] { stratified_kfold(m, cfg); }), ErrorKind::config);
}

TEST(Split, IdenticalLabelsGiveRoundRobinSizes) {
    CohortManifest m;
    for (int i = 0; i < 10; ++i)
        m.annotations.push_back(make_annotation(i, FeatureSet{}));
    SplitConfig cfg;
    const auto folds = make_folds(m, cfg);
    for (auto s : folds.fold_sizes())
        EXPECT_EQ(s, 2u);
    EXPECT_EQ(folds.swaps, 0);
}

TEST(Split, CountTwoLandsOneTrainOneValidation) {
    const auto m = table1_manifest();
    std::vector<std::string> endo;
    for (const auto &a : m.annotations)
        if (a.features.exophytic == GrowthPattern::endophytic)
            endo.push_back(a.annotation_id);
    ASSERT_EQ(endo.size(), 2u);
    for (std::uint64_t seed : {0ULL, 1ULL, 7ULL, 42ULL}) {
        SplitConfig cfg;
        cfg.seed = seed;
        const auto folds = make_folds(m, cfg);
        EXPECT_NE(folds.fold_of(endo[0]), folds.fold_of(endo[1])) << "seed " << seed;
    }
}

TEST(Split, SingletonIsPinnedToTrainingWithWarning) {
    auto m = table1_manifest();
    bool dropped = false;
    for (auto &a : m.annotations)
        if (!dropped && a.features.exophytic == GrowthPattern::endophytic) {
            a.features.exophytic = GrowthPattern::unknown;
            dropped = true;
        }
    SplitConfig cfg;
    const auto folds = make_folds(m, cfg);
    ASSERT_EQ(folds.pinned_train.size(), 1u);
    const auto *pinned = m.find(folds.pinned_train[0]);
    ASSERT_NE(pinned, nullptr);
    EXPECT_EQ(pinned->features.exophytic, GrowthPattern::endophytic);
    EXPECT_FALSE(folds.warnings.empty());
}

TEST(Split, EveryLabelWithCountTwoIsOnEachTrainingSide) {
    const auto m = table1_manifest();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SplitConfig cfg;
        cfg.seed = seed;
        const auto folds = make_folds(m, cfg);
        std::map<std::string, std::vector<int>> per_label;
        for (const auto &a : m.annotations)
            for (Feature f : kCategoricalFeatures)
                per_label[std::string(feature_key(f)) + "=" + categorical_value(a.features, f)].push_back(
                    folds.fold_of(a.annotation_id));
        for (const auto &[label, fold_list] : per_label) {
            if (fold_list.size() < 2)
                continue;
            for (int k = 0; k < 5; ++k) {
                const auto outside = std::count_if(fold_list.begin(), fold_list.end(), [&](int f) { return f != k; });
                EXPECT_GE(outside, 1) << label << " fold " << k << " seed " << seed;
            }
            if (fold_list.size() >= 5) {
                const std::set<int> distinct(fold_list.begin(), fold_list.end());
                EXPECT_GE(distinct.size(), 1u);
            }
        }
    }
}

TEST(Split, BalancedLabelsNeedNoSwaps) {
    CohortManifest m;
    for (int i = 0; i < 20; ++i) {
        FeatureSet f;
        f.position = i % 2 ? Position::left : Position::right;
        m.annotations.push_back(make_annotation(i, f));
    }
    SplitConfig cfg;
    EXPECT_EQ(make_folds(m, cfg).swaps, 0);
}

TEST(Split, PatientLevelKeepsPatientsTogether) {
    const auto m = table1_manifest();
    SplitConfig cfg;
    cfg.patient_level = true;
    const auto folds = make_folds(m, cfg);
    std::map<std::string, std::set<int>> by_patient;
    for (const auto &a : m.annotations)
        by_patient[a.patient_id].insert(folds.fold_of(a.annotation_id));
    for (const auto &[p, set] : by_patient)
        EXPECT_EQ(set.size(), 1u) << p;
}

TEST(Split, FoldFileRoundTrip) {
    TempDir dir("folds");
    const auto m = table1_manifest();
    const auto folds = make_folds(m, SplitConfig{});
    save_folds(folds, dir / "folds.json");
    const auto back = load_folds(dir / "folds.json");
    EXPECT_EQ(back.assignments, folds.assignments);
    EXPECT_EQ(back.k, folds.k);
    EXPECT_EQ(back.pinned_train, folds.pinned_train);
}

// ---------------------------------------------------------------------------
// Prediction bridge

TEST(Bridge, PerfectPredictionsGiveF1One) {
    const auto m = table1_manifest();
    PredictionFile file;
    for (const auto &a : m.annotations)
        file.rows.push_back(prediction_from_features(a.annotation_id, a.features));
    const auto rows = evaluate_joined(join_predictions(file, m));
    for (const auto &r : rows) {
        ASSERT_TRUE(r.f1_or_mse.has_value()) << feature_key(r.feature);
        EXPECT_DOUBLE_EQ(*r.f1_or_mse, r.feature == Feature::size ? 0.0 : 1.0) << feature_key(r.feature);
        EXPECT_FALSE(r.auc.has_value());
    }
}

TEST(Bridge, MissingIdsAreReportedAndCoverageDrops) {
    PhantomConfig pc;
    pc.n = 130;
    const auto m = sample_cohort(pc).manifest;
    PredictionFile file;
    for (std::size_t i = 5; i < m.annotations.size(); ++i)
        file.rows.push_back(prediction_from_features(m.annotations[i].annotation_id, m.annotations[i].features));
    const auto joined = join_predictions(file, m);
    EXPECT_EQ(joined.missing_ids.size(), 5u);
    EXPECT_FALSE(joined.warnings.empty());
    const auto rows = evaluate_joined(joined);
    const auto pos = std::find_if(rows.begin(), rows.end(), [](const MetricRow &r) { return r.feature == Feature::position; });
    ASSERT_NE(pos, rows.end());
    std::size_t known = 0, known_present = 0;
    for (std::size_t i = 0; i < m.annotations.size(); ++i)
        if (m.annotations[i].features.position != Position::unknown) {
            ++known;
            if (i >= 5)
                ++known_present;
        }
    EXPECT_NEAR(*pos->coverage, static_cast<double>(known_present) / static_cast<double>(known), 1e-12);
}

TEST(Bridge, DuplicateIdsAndBadScoresAreRejected) {
    std::istringstream dup("{\"annotation_id\":\"A\",\"features\":{}}\n{\"annotation_id\":\"A\",\"features\":{}}\n");
    EXPECT_EQ(kind_of([&] { parse_predictions(dup); }), ErrorKind::data);
    std::istringstream bad(
        "{\"annotation_id\":\"A\",\"scores\":{\"cyst\":{\"true\":1.5,\"false\":0.0}}}\n");
    EXPECT_EQ(kind_of([&] { parse_predictions(bad); }), ErrorKind::data);
}

TEST(Bridge, ScoreFilesRoundTripAndYieldAuc) {
    const auto m = table1_manifest();
    const auto file = random_predictor(m, 5);
    std::istringstream in(serialize_predictions(file));
    const auto back = parse_predictions(in);
    ASSERT_EQ(back.rows.size(), file.rows.size());
    const auto rows = evaluate_joined(join_predictions(back, m));
    for (const auto &r : rows)
        if (r.feature != Feature::size) {
            EXPECT_TRUE(r.auc.has_value()) << feature_key(r.feature);
        }
}

TEST(Bridge, ConstantPredictorMatchesTable1Marginals) {
    const auto m = table1_manifest();
    auto acc = [&](const std::string &value) {
        const auto rows = evaluate_joined(join_predictions(constant_predictor(m, Feature::cyst, value), m));
        for (const auto &r : rows)
            if (r.feature == Feature::cyst)
                return *r.accuracy;
        return -1.0;
    };
    EXPECT_NEAR(acc("true"), 78.0 / 130.0, 1e-12);
    EXPECT_NEAR(acc("false"), 52.0 / 130.0, 1e-12);
    EXPECT_TRUE(constant_predictor(CohortManifest{}, Feature::cyst, "true").rows.empty());
}

TEST(Bridge, RandomEmitterAgreesWithRandomBaseline) {
    // Averaging many random prediction files approaches the analytic chance
    // level that random_baseline also targets.
    const auto m = table1_manifest();
    double sum = 0.0;
    const int files = 200;
    for (int s = 0; s < files; ++s) {
        const auto rows = evaluate_joined(join_predictions(random_predictor(m, static_cast<std::uint64_t>(s)), m));
        for (const auto &r : rows)
            if (r.feature == Feature::position)
                sum += *r.accuracy;
    }
    LabelColumn col;
    col.feature = Feature::position;
    for (const auto &a : m.annotations) {
        col.truth.push_back(categorical_value(a.features, Feature::position));
        col.predicted.push_back(std::string(kUnknownToken));
    }
    const auto baseline = random_baseline(col, 2000, 9);
    EXPECT_NEAR(sum / files, *baseline.accuracy, 0.02);
    EXPECT_NEAR(*baseline.accuracy, 0.5, 0.02);
}
