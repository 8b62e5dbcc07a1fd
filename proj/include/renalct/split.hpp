#pragma once

// Annotation-level k-fold splitting by iterative multi-label stratification,
// followed by a deterministic swap-repair pass that guarantees minority classes
// reach both sides of every fold where the counts allow it.
//
// Each stratified feature contributes one label per annotation: the pair
// (feature, value), unknown included. Allocation walks labels from the rarest
// to the most common; each example carrying the current label goes to the fold
// with the greatest remaining demand for it, ties broken by the greatest
// remaining capacity and then by a seeded draw. Fold capacities are the
// floor/ceil of n/k, so fold sizes are fixed by partition arithmetic.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "renalct/error.hpp"
#include "renalct/rng.hpp"
#include "renalct/schema.hpp"

namespace renalct {

struct SplitConfig {
    int k = 5;
    std::uint64_t seed = 0;
    std::vector<Feature> stratify_on{kCategoricalFeatures.begin(), kCategoricalFeatures.end()};
    // Minimum instances of a class required on the training side of each fold.
    int minority_floor = 1;
    // Keep all annotations of a patient in the same fold.
    bool patient_level = false;
};

struct FoldAssignment {
    int k = 0;
    std::uint64_t seed = 0;
    // In manifest order.
    std::vector<std::pair<std::string, int>> assignments;
    // Singleton-class annotations used for training in every fold and never
    // for validation. They still carry a fold index so the partition holds.
    std::vector<std::string> pinned_train;
    std::vector<std::string> warnings;
    int swaps = 0;

    int fold_of(const std::string &id) const {
        for (const auto &[a, f] : assignments)
            if (a == id)
                return f;
        fail(ErrorKind::data, "annotation '" + id + "' has no fold assignment");
    }

    bool is_pinned(const std::string &id) const {
        return std::find(pinned_train.begin(), pinned_train.end(), id) != pinned_train.end();
    }

    std::vector<std::string> validation_ids(int fold) const {
        std::vector<std::string> out;
        for (const auto &[id, f] : assignments)
            if (f == fold && !is_pinned(id))
                out.push_back(id);
        return out;
    }

    std::vector<std::string> training_ids(int fold) const {
        std::vector<std::string> out;
        for (const auto &[id, f] : assignments)
            if (f != fold || is_pinned(id))
                out.push_back(id);
        return out;
    }

    std::vector<std::size_t> fold_sizes() const {
        std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
        for (const auto &[id, f] : assignments)
            ++sizes[static_cast<std::size_t>(f)];
        return sizes;
    }

    bool operator==(const FoldAssignment &) const = default;
};

namespace detail {

struct LabelKey {
    Feature feature;
    std::string value;
    auto operator<=>(const LabelKey &) const = default;
};

inline std::string label_name(const LabelKey &l) {
    return std::string(feature_key(l.feature)) + "=" + l.value;
}

/// A unit of allocation: one annotation, or one patient in patient-level mode.
struct Unit {
    std::vector<std::size_t> members; // annotation indices
    std::vector<int> label_counts;    // indexed by label id
};

struct SplitProblem {
    std::vector<LabelKey> labels;
    std::vector<Unit> units;
    std::vector<int> unit_of; // annotation index -> unit index
};

inline SplitProblem build_problem(const CohortManifest &m, const SplitConfig &cfg) {
    SplitProblem p;
    std::map<LabelKey, std::size_t> label_ids;
    for (Feature f : cfg.stratify_on) {
        if (f == Feature::size)
            continue; // continuous; not a stratification label
        for (auto v : known_classes(f))
            label_ids.emplace(LabelKey{f, std::string(v)}, 0);
        if (feature_has_unknown_state(f))
            label_ids.emplace(LabelKey{f, std::string(kUnknownToken)}, 0);
    }
    std::size_t next = 0;
    for (auto &[key, id] : label_ids) {
        id = next++;
        p.labels.push_back(key);
    }

    p.unit_of.assign(m.annotations.size(), -1);
    std::map<std::string, std::size_t> patient_unit;
    for (std::size_t i = 0; i < m.annotations.size(); ++i) {
        const auto &a = m.annotations[i];
        std::size_t u;
        if (cfg.patient_level) {
            auto [it, inserted] = patient_unit.emplace(a.patient_id, p.units.size());
            if (inserted)
                p.units.push_back(Unit{{}, std::vector<int>(p.labels.size(), 0)});
            u = it->second;
        } else {
            u = p.units.size();
            p.units.push_back(Unit{{}, std::vector<int>(p.labels.size(), 0)});
        }
        p.units[u].members.push_back(i);
        p.unit_of[i] = static_cast<int>(u);
        for (Feature f : cfg.stratify_on) {
            if (f == Feature::size)
                continue;
            const auto it = label_ids.find(LabelKey{f, categorical_value(a.features, f)});
            if (it != label_ids.end())
                ++p.units[u].label_counts[it->second];
        }
    }
    return p;
}

inline std::vector<std::size_t> fold_capacities(std::size_t n, int k) {
    std::vector<std::size_t> cap(static_cast<std::size_t>(k), n / static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < n % static_cast<std::size_t>(k); ++j)
        ++cap[j];
    return cap;
}

inline void validate_split_config(const SplitConfig &cfg, std::size_t units) {
    if (cfg.k < 2)
        fail(ErrorKind::config, "k must be at least 2 (got " + std::to_string(cfg.k) + ")");
    if (static_cast<std::size_t>(cfg.k) > units)
        fail(ErrorKind::config, "k=" + std::to_string(cfg.k) + " exceeds the number of " +
                                    (cfg.patient_level ? "patients" : "annotations") + " (" +
                                    std::to_string(units) + ")");
    if (cfg.minority_floor < 0)
        fail(ErrorKind::config, "minority_floor must be non-negative");
}

} // namespace detail

inline FoldAssignment stratified_kfold(const CohortManifest &m, const SplitConfig &cfg) {
    auto problem = detail::build_problem(m, cfg);
    auto &units = problem.units;
    detail::validate_split_config(cfg, units.size());
    const auto k = static_cast<std::size_t>(cfg.k);
    const std::size_t n_labels = problem.labels.size();

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));

    std::vector<int> unit_fold(units.size(), -1);
    auto capacity = detail::fold_capacities(m.annotations.size(), cfg.k);
    std::vector<long long> remaining_capacity(capacity.begin(), capacity.end());

    const bool degenerate =
        n_labels == 0 || std::all_of(units.begin(), units.end(), [&](const detail::Unit &u) {
            return u.label_counts == units.front().label_counts;
        });

    if (degenerate && !cfg.patient_level) {
        for (std::size_t i = 0; i < order.size(); ++i)
            unit_fold[order[i]] = static_cast<int>(i % k);
    } else {
        std::vector<std::vector<double>> demand(k, std::vector<double>(n_labels, 0.0));
        std::vector<long long> remaining_label(n_labels, 0);
        for (const auto &u : units)
            for (std::size_t l = 0; l < n_labels; ++l)
                remaining_label[l] += u.label_counts[l];
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t l = 0; l < n_labels; ++l)
                demand[j][l] = static_cast<double>(remaining_label[l]) / static_cast<double>(k);

        auto assign = [&](std::size_t u, std::size_t j) {
            unit_fold[u] = static_cast<int>(j);
            remaining_capacity[j] -= static_cast<long long>(units[u].members.size());
            for (std::size_t l = 0; l < n_labels; ++l) {
                demand[j][l] -= units[u].label_counts[l];
                remaining_label[l] -= units[u].label_counts[l];
            }
        };

        auto pick_fold = [&](std::size_t u, std::optional<std::size_t> label) {
            const auto size = static_cast<long long>(units[u].members.size());
            std::vector<std::size_t> eligible;
            for (std::size_t j = 0; j < k; ++j)
                if (remaining_capacity[j] >= size)
                    eligible.push_back(j);
            if (eligible.empty()) {
                eligible.resize(k);
                std::iota(eligible.begin(), eligible.end(), 0);
            }
            std::vector<std::size_t> best;
            for (std::size_t j : eligible) {
                if (best.empty()) {
                    best.push_back(j);
                    continue;
                }
                const std::size_t b = best.front();
                const double dj = label ? demand[j][*label] : 0.0;
                const double db = label ? demand[b][*label] : 0.0;
                if (dj > db || (dj == db && remaining_capacity[j] > remaining_capacity[b])) {
                    best.assign(1, j);
                } else if (dj == db && remaining_capacity[j] == remaining_capacity[b]) {
                    best.push_back(j);
                }
            }
            return best.size() == 1 ? best.front() : best[rng.index(best.size())];
        };

        std::size_t unassigned = units.size();
        while (unassigned > 0) {
            std::optional<std::size_t> rarest;
            for (std::size_t l = 0; l < n_labels; ++l)
                if (remaining_label[l] > 0 && (!rarest || remaining_label[l] < remaining_label[*rarest]))
                    rarest = l;
            if (!rarest) {
                // Units without any stratification label.
                for (std::size_t u : order)
                    if (unit_fold[u] < 0) {
                        assign(u, pick_fold(u, std::nullopt));
                        --unassigned;
                    }
                break;
            }
            for (std::size_t u : order) {
                if (unit_fold[u] >= 0 || units[u].label_counts[*rarest] == 0)
                    continue;
                assign(u, pick_fold(u, rarest));
                --unassigned;
            }
        }
    }

    FoldAssignment out;
    out.k = cfg.k;
    out.seed = cfg.seed;
    for (std::size_t i = 0; i < m.annotations.size(); ++i)
        out.assignments.emplace_back(m.annotations[i].annotation_id,
                                     unit_fold[static_cast<std::size_t>(problem.unit_of[i])]);
    for (std::size_t j = 0; j < k; ++j)
        if (std::none_of(out.assignments.begin(), out.assignments.end(),
                         [&](const auto &p) { return p.second == static_cast<int>(j); }))
            out.warnings.push_back("fold " + std::to_string(j) + " is empty");
    return out;
}

/// Swap-repair pass. For every class of a stratified feature:
///  - count 1: the annotation is pinned to training in all folds (warning);
///  - count >= 2: every fold's training side holds >= minority_floor instances;
///  - count >= k: every fold's validation side holds at least one instance.
/// Repairs are pairwise swaps between folds, so fold sizes never change.
inline FoldAssignment enforce_minority_presence(FoldAssignment assignment, const CohortManifest &m,
                                                const SplitConfig &cfg) {
    auto problem = detail::build_problem(m, cfg);
    const auto &units = problem.units;
    const auto k = assignment.k;
    const std::size_t n_labels = problem.labels.size();

    std::vector<int> unit_fold(units.size(), -1);
    for (std::size_t i = 0; i < m.annotations.size(); ++i)
        unit_fold[static_cast<std::size_t>(problem.unit_of[i])] =
            assignment.fold_of(m.annotations[i].annotation_id);

    std::vector<long long> totals(n_labels, 0);
    for (const auto &u : units)
        for (std::size_t l = 0; l < n_labels; ++l)
            totals[l] += u.label_counts[l];

    // counts[l][j]: instances of label l in fold j, kept in sync with swaps.
    std::vector<std::vector<long long>> counts(n_labels, std::vector<long long>(static_cast<std::size_t>(k), 0));
    for (std::size_t u = 0; u < units.size(); ++u)
        for (std::size_t l = 0; l < n_labels; ++l)
            counts[l][static_cast<std::size_t>(unit_fold[u])] += units[u].label_counts[l];
    auto fold_count = [&](std::size_t l, int fold) { return counts[l][static_cast<std::size_t>(fold)]; };
    auto swap_units = [&](std::size_t a, std::size_t b) {
        const auto fa = static_cast<std::size_t>(unit_fold[a]);
        const auto fb = static_cast<std::size_t>(unit_fold[b]);
        for (std::size_t l = 0; l < n_labels; ++l) {
            counts[l][fa] += units[b].label_counts[l] - units[a].label_counts[l];
            counts[l][fb] += units[a].label_counts[l] - units[b].label_counts[l];
        }
        std::swap(unit_fold[a], unit_fold[b]);
    };

    auto is_unknown = [&](std::size_t l) { return problem.labels[l].value == kUnknownToken; };

    // A label's constraint, evaluated against the current fold map.
    auto satisfied = [&](std::size_t l) {
        const long long total = totals[l];
        if (is_unknown(l) || total < 2)
            return true;
        for (int j = 0; j < k; ++j) {
            const long long in_fold = fold_count(l, j);
            const long long floor = std::min<long long>(cfg.minority_floor, total - 1);
            if (total - in_fold < floor)
                return false;
            if (total >= k && in_fold == 0)
                return false;
        }
        return true;
    };

    auto similarity = [&](std::size_t a, std::size_t b) {
        int s = 0;
        for (std::size_t l = 0; l < n_labels; ++l)
            s += std::min(units[a].label_counts[l], units[b].label_counts[l]);
        return s;
    };

    std::vector<std::size_t> label_order(n_labels);
    std::iota(label_order.begin(), label_order.end(), 0);
    std::stable_sort(label_order.begin(), label_order.end(),
                     [&](std::size_t a, std::size_t b) { return totals[a] < totals[b]; });

    std::set<std::string> pinned;
    for (std::size_t l : label_order) {
        if (is_unknown(l) || totals[l] != 1)
            continue;
        for (std::size_t u = 0; u < units.size(); ++u)
            if (units[u].label_counts[l] > 0)
                for (std::size_t member : units[u].members)
                    if (pinned.insert(m.annotations[member].annotation_id).second)
                        assignment.warnings.push_back(
                            "class " + detail::label_name(problem.labels[l]) +
                            " has a single instance (" + m.annotations[member].annotation_id +
                            "); pinned to training in every fold");
    }

    const int max_rounds = static_cast<int>(n_labels) * k * 4 + 8;
    for (std::size_t l : label_order) {
        int rounds = 0;
        while (!satisfied(l) && rounds++ < max_rounds) {
            // Find the offending fold: one holding too many (all) instances, or
            // one holding none when every fold should hold at least one.
            const long long total = totals[l];
            int source = -1, target = -1;
            for (int j = 0; j < k && source < 0; ++j) {
                const long long floor = std::min<long long>(cfg.minority_floor, total - 1);
                if (total - fold_count(l, j) < floor) {
                    source = j; // move one instance out of j
                }
            }
            if (source < 0)
                for (int j = 0; j < k && target < 0; ++j)
                    if (total >= k && fold_count(l, j) == 0)
                        target = j; // move one instance into j

            struct Candidate {
                std::size_t carrier, other;
                int score;
            };
            std::optional<Candidate> best;
            std::vector<std::size_t> before;
            for (std::size_t o = 0; o < n_labels; ++o)
                if (o != l && satisfied(o))
                    before.push_back(o);
            for (std::size_t x = 0; x < units.size(); ++x) {
                if (units[x].label_counts[l] == 0)
                    continue;
                const int fx = unit_fold[x];
                if (source >= 0 && fx != source)
                    continue;
                if (target >= 0 && fold_count(l, fx) < 2)
                    continue;
                for (std::size_t y = 0; y < units.size(); ++y) {
                    const int fy = unit_fold[y];
                    if (fy == fx || units[y].label_counts[l] > 0)
                        continue;
                    if (target >= 0 && fy != target)
                        continue;
                    if (units[y].members.size() != units[x].members.size())
                        continue;
                    // Reject swaps that break an already satisfied label.
                    swap_units(x, y);
                    const bool keeps =
                        std::all_of(before.begin(), before.end(), [&](std::size_t o) { return satisfied(o); });
                    swap_units(x, y);
                    if (!keeps)
                        continue;
                    const int score = similarity(x, y);
                    if (!best || score > best->score)
                        best = Candidate{x, y, score};
                }
            }
            if (!best)
                break;
            swap_units(best->carrier, best->other);
            ++assignment.swaps;
        }
        if (!satisfied(l))
            assignment.warnings.push_back("could not satisfy minority presence for class " +
                                          detail::label_name(problem.labels[l]));
    }

    for (std::size_t i = 0; i < m.annotations.size(); ++i)
        assignment.assignments[i].second = unit_fold[static_cast<std::size_t>(problem.unit_of[i])];
    assignment.pinned_train.assign(pinned.begin(), pinned.end());
    std::sort(assignment.pinned_train.begin(), assignment.pinned_train.end());
    return assignment;
}

inline FoldAssignment make_folds(const CohortManifest &m, const SplitConfig &cfg) {
    return enforce_minority_presence(stratified_kfold(m, cfg), m, cfg);
}

/// Empty when the assignment partitions the manifest into k non-empty folds.
inline std::vector<std::string> check_partition(const CohortManifest &m, const FoldAssignment &a) {
    std::vector<std::string> problems;
    std::map<std::string, int> seen;
    for (const auto &[id, fold] : a.assignments) {
        if (++seen[id] > 1)
            problems.push_back("annotation '" + id + "' assigned more than once");
        if (fold < 0 || fold >= a.k)
            problems.push_back("annotation '" + id + "' has fold " + std::to_string(fold) +
                               " outside [0, " + std::to_string(a.k) + ")");
        if (!m.find(id))
            problems.push_back("annotation '" + id + "' is not in the manifest");
    }
    for (const auto &ann : m.annotations)
        if (!seen.count(ann.annotation_id))
            problems.push_back("annotation '" + ann.annotation_id + "' has no fold");
    if (a.k > 0)
        for (std::size_t j = 0; j < a.fold_sizes().size(); ++j)
            if (a.fold_sizes()[j] == 0)
                problems.push_back("fold " + std::to_string(j) + " is empty");
    return problems;
}

inline CohortManifest apply_folds(CohortManifest m, const FoldAssignment &a) {
    for (auto &ann : m.annotations)
        ann.split_fold = a.fold_of(ann.annotation_id);
    return m;
}

// ---------------------------------------------------------------------------
// Persistence: {seed, k, assignments: [{annotation_id, fold}], ...}

inline nlohmann::ordered_json folds_to_json(const FoldAssignment &a) {
    nlohmann::ordered_json j;
    j["seed"] = a.seed;
    j["k"] = a.k;
    auto rows = nlohmann::ordered_json::array();
    for (const auto &[id, fold] : a.assignments)
        rows.push_back({{"annotation_id", id}, {"fold", fold}});
    j["assignments"] = std::move(rows);
    j["pinned_train"] = a.pinned_train;
    j["swaps"] = a.swaps;
    j["warnings"] = a.warnings;
    return j;
}

inline FoldAssignment folds_from_json(const nlohmann::json &j) {
    FoldAssignment a;
    try {
        a.seed = j.at("seed").get<std::uint64_t>();
        a.k = j.at("k").get<int>();
        for (const auto &row : j.at("assignments"))
            a.assignments.emplace_back(row.at("annotation_id").get<std::string>(),
                                       row.at("fold").get<int>());
        if (j.contains("pinned_train"))
            a.pinned_train = j["pinned_train"].get<std::vector<std::string>>();
        if (j.contains("swaps"))
            a.swaps = j["swaps"].get<int>();
        if (j.contains("warnings"))
            a.warnings = j["warnings"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::data, std::string("malformed fold file: ") + e.what());
    }
    return a;
}

inline void save_folds(const FoldAssignment &a, const std::filesystem::path &path) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::data, "cannot write " + path.string());
    out << folds_to_json(a).dump(2) << '\n';
}

inline FoldAssignment load_folds(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::data, "cannot open fold file " + path.string());
    try {
        return folds_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error &e) {
        fail(ErrorKind::data, path.string() + ": " + e.what());
    }
}

} // namespace renalct
