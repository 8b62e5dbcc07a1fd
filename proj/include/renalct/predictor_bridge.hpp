#pragma once

// Prediction files: the JSONL boundary through which external detectors (or
// the extraction stage) feed evaluation, plus the trivial baseline predictors.
//
// Row format:
//   {"annotation_id": "...",
//    "features": {"position": "left", "size_cm": 1.2, "cyst": true, ...},
//    "scores": {"cyst": {"true": 0.8, "false": 0.2}, ...},
//    "scores_are_ranks": false}
// Every key under "features" and "scores" is optional. A feature that has
// scores but no label (a score-only head) is labelled by thresholding.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "renalct/error.hpp"
#include "renalct/metric_table.hpp"
#include "renalct/metrics.hpp"
#include "renalct/rng.hpp"
#include "renalct/schema.hpp"

namespace renalct {

struct PredictionRow {
    std::string annotation_id;
    std::map<Feature, std::string> labels; // categorical tokens
    std::optional<double> size_cm;
    bool size_present = false; // size_cm given, possibly as "unknown"
    std::map<Feature, std::map<std::string, double>> scores;
    bool scores_are_ranks = false;
};

struct PredictionFile {
    std::vector<PredictionRow> rows;
};

namespace detail {

inline std::string json_label(const nlohmann::json &v) {
    if (v.is_boolean())
        return v.get<bool>() ? "true" : "false";
    if (v.is_string())
        return v.get<std::string>();
    throw FieldError{"", "expected a string or boolean"};
}

} // namespace detail

inline PredictionRow prediction_row_from_json(const nlohmann::json &j, const std::string &where) {
    PredictionRow row;
    auto bad = [&](const std::string &field, const std::string &msg) {
        fail(ErrorKind::data, where + ": field '" + field + "': " + msg);
    };
    if (!j.is_object() || !j.contains("annotation_id") || !j["annotation_id"].is_string())
        bad("annotation_id", "missing required field");
    row.annotation_id = j["annotation_id"].get<std::string>();
    // Manifest keys are tolerated so a manifest line doubles as a prediction;
    // anything else usually means the wrong file was passed.
    static const std::set<std::string> known_keys{"annotation_id", "features", "scores", "scores_are_ranks",
                                                  "patient_id",    "report_id", "sentence", "slice"};
    for (const auto &[key, value] : j.items())
        if (!known_keys.count(key))
            bad(key, "unknown field in prediction record");
    row.scores_are_ranks = j.value("scores_are_ranks", false);

    if (auto it = j.find("features"); it != j.end()) {
        if (!it->is_object())
            bad("features", "expected an object");
        for (const auto &[key, value] : it->items()) {
            if (key == "raw_size" || key == "size_unparseable")
                continue;
            Feature f;
            try {
                f = parse_feature(key);
            } catch (const Error &) {
                bad("features." + key, "unknown feature");
            }
            if (f == Feature::size) {
                row.size_present = true;
                if (value.is_number())
                    row.size_cm = value.get<double>();
                else if (!(value.is_null() || (value.is_string() && value == kUnknownToken)))
                    bad("features.size_cm", "expected a number or \"unknown\"");
                continue;
            }
            std::string token;
            try {
                token = detail::json_label(value);
            } catch (const detail::FieldError &e) {
                bad("features." + key, e.message);
            }
            FeatureSet probe;
            try {
                set_categorical_value(probe, f, token);
            } catch (const Error &) {
                bad("features." + key, "unknown token '" + token + "'");
            }
            row.labels[f] = token;
        }
    }
    if (auto it = j.find("scores"); it != j.end()) {
        if (!it->is_object())
            bad("scores", "expected an object");
        for (const auto &[key, per_class] : it->items()) {
            Feature f;
            try {
                f = parse_feature(key);
            } catch (const Error &) {
                bad("scores." + key, "unknown feature");
            }
            if (f == Feature::size)
                bad("scores." + key, "size has no class scores");
            if (!per_class.is_object())
                bad("scores." + key, "expected a class -> score object");
            const auto classes = known_classes(f);
            std::map<std::string, double> s;
            double sum = 0.0;
            for (const auto &[cls, v] : per_class.items()) {
                if (std::find(classes.begin(), classes.end(), cls) == classes.end())
                    bad("scores." + key + "." + cls, "unknown class");
                if (!v.is_number())
                    bad("scores." + key + "." + cls, "expected a number");
                const double x = v.get<double>();
                if (!row.scores_are_ranks && !(x >= 0.0 && x <= 1.0))
                    bad("scores." + key + "." + cls, "score " + std::to_string(x) + " outside [0, 1]");
                s[cls] = x;
                sum += x;
            }
            if (!row.scores_are_ranks && s.size() == classes.size() && !(sum >= 0.99 && sum <= 1.01))
                bad("scores." + key, "class scores sum to " + std::to_string(sum) +
                                         "; expected 1 (set scores_are_ranks for raw ranks)");
            row.scores[f] = std::move(s);
        }
    }
    return row;
}

inline nlohmann::ordered_json prediction_row_to_json(const PredictionRow &row) {
    nlohmann::ordered_json j;
    j["annotation_id"] = row.annotation_id;
    nlohmann::ordered_json features = nlohmann::ordered_json::object();
    for (Feature f : kAllFeatures) {
        if (f == Feature::size) {
            if (row.size_present)
                features["size_cm"] = row.size_cm ? nlohmann::ordered_json(*row.size_cm)
                                                  : nlohmann::ordered_json(kUnknownToken);
            continue;
        }
        if (auto it = row.labels.find(f); it != row.labels.end()) {
            const bool boolean = f == Feature::cyst || f == Feature::mass || f == Feature::tumor;
            if (boolean)
                features[std::string(feature_key(f))] = it->second == "true";
            else
                features[std::string(feature_key(f))] = it->second;
        }
    }
    j["features"] = features;
    if (!row.scores.empty()) {
        nlohmann::ordered_json scores = nlohmann::ordered_json::object();
        for (const auto &[f, per_class] : row.scores) {
            nlohmann::ordered_json s = nlohmann::ordered_json::object();
            for (const auto &[cls, v] : per_class)
                s[cls] = v;
            scores[std::string(feature_key(f))] = s;
        }
        j["scores"] = scores;
    }
    if (row.scores_are_ranks)
        j["scores_are_ranks"] = true;
    return j;
}

inline PredictionFile parse_predictions(std::istream &in, const std::string &source = "<stream>") {
    PredictionFile file;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto where = source + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error &e) {
            fail(ErrorKind::data, where + ": malformed JSON record: " + e.what());
        }
        auto row = prediction_row_from_json(j, where);
        if (!seen.insert(row.annotation_id).second)
            fail(ErrorKind::data, where + ": field 'annotation_id': duplicate id '" + row.annotation_id + "'");
        file.rows.push_back(std::move(row));
    }
    return file;
}

inline PredictionFile load_predictions_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::data, "cannot open prediction file " + path.string());
    return parse_predictions(in, path.string());
}

inline std::string serialize_predictions(const PredictionFile &file) {
    std::ostringstream out;
    for (const auto &row : file.rows)
        out << prediction_row_to_json(row).dump() << '\n';
    return out.str();
}

inline void save_predictions(const PredictionFile &file, const std::filesystem::path &path) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::data, "cannot write " + path.string());
    out << serialize_predictions(file);
}

/// Full prediction row from a FeatureSet (extraction output, ground truth).
inline PredictionRow prediction_from_features(const std::string &id, const FeatureSet &f) {
    PredictionRow row;
    row.annotation_id = id;
    for (Feature k : kCategoricalFeatures)
        row.labels[k] = categorical_value(f, k);
    row.size_present = true;
    row.size_cm = f.size_cm;
    return row;
}

// ---------------------------------------------------------------------------
// Joining against the manifest

using FeatureColumn = std::variant<LabelColumn, ScoredLabelColumn>;

struct JoinedPredictions {
    std::vector<FeatureColumn> categorical; // kCategoricalFeatures order
    std::vector<std::optional<double>> size_truth;
    std::vector<std::optional<double>> size_predicted;
    std::vector<std::string> ids;
    std::vector<std::string> missing_ids;
    std::vector<std::string> warnings;
};

/// Max-macro-F1 threshold on the positive-class score of a binary feature.
/// Candidate thresholds are the observed scores; ties go to the lowest one.
inline double select_threshold(const std::vector<double> &scores, const std::vector<std::string> &truth,
                               Feature feature) {
    const auto pos = positive_class(feature);
    if (!pos)
        fail(ErrorKind::config, "thresholds apply to binary features only");
    const auto classes = known_classes(feature);
    const std::string neg(classes[0] == *pos ? classes[1] : classes[0]);
    std::vector<double> candidates = scores;
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    double best_t = 0.5, best_f1 = -1.0;
    for (double t : candidates) {
        LabelColumn col;
        col.feature = feature;
        col.truth = truth;
        for (double s : scores)
            col.predicted.push_back(s >= t ? std::string(*pos) : neg);
        const auto m = classification_metrics(col);
        if (m && m->f1 > best_f1) {
            best_f1 = m->f1;
            best_t = t;
        }
    }
    return best_t;
}

/// Builds one column per feature for `ids` (all manifest annotations when
/// empty). Ids without a prediction row are reported and predicted unknown.
/// Score-only features are labelled with thresholds[feature] (binary, default
/// 0.5) or by arg-max (multi-class).
inline JoinedPredictions join_predictions(const PredictionFile &file, const CohortManifest &manifest,
                                          std::vector<std::string> ids = {},
                                          const std::map<Feature, double> &thresholds = {}) {
    std::map<std::string, const PredictionRow *> by_id;
    for (const auto &row : file.rows)
        by_id[row.annotation_id] = &row;
    JoinedPredictions out;
    if (ids.empty())
        for (const auto &a : manifest.annotations)
            ids.push_back(a.annotation_id);
    for (const auto &row : file.rows)
        if (!manifest.find(row.annotation_id))
            fail(ErrorKind::data, "prediction for unknown annotation id '" + row.annotation_id + "'");

    for (Feature f : kCategoricalFeatures) {
        bool all_scored = true, any_scored = false;
        for (const auto &id : ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end())
                continue;
            const bool has = it->second->scores.count(f) > 0;
            all_scored = all_scored && has;
            any_scored = any_scored || has;
        }
        if (any_scored && !all_scored)
            out.warnings.push_back(std::string(feature_key(f)) +
                                   ": scores present on only some rows; AUC not computed");
        ScoredLabelColumn col;
        col.labels.feature = f;
        for (const auto &id : ids) {
            const Annotation *a = manifest.find(id);
            if (!a)
                fail(ErrorKind::data, "annotation id '" + id + "' not in manifest");
            col.labels.truth.push_back(categorical_value(a->features, f));
            const auto it = by_id.find(id);
            std::string predicted(kUnknownToken);
            std::map<std::string, double> scores;
            if (it != by_id.end()) {
                const PredictionRow &row = *it->second;
                if (auto s = row.scores.find(f); s != row.scores.end())
                    scores = s->second;
                if (auto l = row.labels.find(f); l != row.labels.end()) {
                    predicted = l->second;
                } else if (!scores.empty()) {
                    if (auto pos = positive_class(f)) {
                        const double t = thresholds.count(f) ? thresholds.at(f) : 0.5;
                        const auto classes = known_classes(f);
                        const std::string neg(classes[0] == *pos ? classes[1] : classes[0]);
                        const double p = scores.count(std::string(*pos)) ? scores.at(std::string(*pos)) : 0.0;
                        predicted = p >= t ? std::string(*pos) : neg;
                    } else {
                        predicted = std::max_element(scores.begin(), scores.end(), [](const auto &x, const auto &y) {
                                        return x.second < y.second;
                                    })->first;
                    }
                }
            }
            col.labels.predicted.push_back(std::move(predicted));
            col.scores.push_back(std::move(scores));
        }
        if (any_scored && all_scored)
            out.categorical.emplace_back(std::move(col));
        else
            out.categorical.emplace_back(std::move(col.labels));
    }
    for (const auto &id : ids) {
        const Annotation *a = manifest.find(id);
        out.size_truth.push_back(a->features.size_cm);
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            out.missing_ids.push_back(id);
            out.size_predicted.emplace_back();
        } else {
            out.size_predicted.push_back(it->second->size_cm);
        }
    }
    out.ids = std::move(ids);
    if (!out.missing_ids.empty()) {
        std::string msg = std::to_string(out.missing_ids.size()) + " of " + std::to_string(out.ids.size()) +
                          " annotations have no prediction:";
        for (const auto &id : out.missing_ids)
            msg += " " + id;
        out.warnings.push_back(msg);
    }
    return out;
}

/// Feature rows in table order: Position, Size, then the remaining features.
inline std::vector<MetricRow> evaluate_joined(const JoinedPredictions &joined) {
    std::vector<MetricRow> rows;
    for (Feature f : kAllFeatures) {
        if (f == Feature::size) {
            rows.push_back(size_row(joined.size_truth, joined.size_predicted));
            continue;
        }
        for (const auto &col : joined.categorical) {
            const Feature cf = std::visit(
                [](const auto &c) {
                    if constexpr (std::is_same_v<std::decay_t<decltype(c)>, LabelColumn>)
                        return c.feature;
                    else
                        return c.labels.feature;
                },
                col);
            if (cf == f)
                rows.push_back(std::visit([](const auto &c) { return metric_row(c); }, col));
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Trivial predictors

inline PredictionFile constant_predictor(const CohortManifest &manifest, Feature feature, std::string value) {
    if (feature == Feature::size)
        fail(ErrorKind::config, "constant predictor needs a categorical feature");
    FeatureSet probe;
    set_categorical_value(probe, feature, value);
    PredictionFile file;
    for (const auto &a : manifest.annotations) {
        PredictionRow row;
        row.annotation_id = a.annotation_id;
        row.labels[feature] = value;
        file.rows.push_back(std::move(row));
    }
    return file;
}

/// Uniform labels over known classes and normalized uniform class scores.
inline PredictionFile random_predictor(const CohortManifest &manifest, std::uint64_t seed) {
    PredictionFile file;
    for (const auto &a : manifest.annotations) {
        Rng rng(derive_seed(seed, a.annotation_id));
        PredictionRow row;
        row.annotation_id = a.annotation_id;
        for (Feature f : kCategoricalFeatures) {
            const auto classes = known_classes(f);
            row.labels[f] = std::string(classes[rng.index(classes.size())]);
            std::map<std::string, double> s;
            double sum = 0.0;
            for (auto c : classes) {
                const double u = rng.uniform() + 1e-12;
                s[std::string(c)] = u;
                sum += u;
            }
            for (auto &[c, v] : s)
                v /= sum;
            row.scores[f] = std::move(s);
        }
        file.rows.push_back(std::move(row));
    }
    return file;
}

} // namespace renalct
