#pragma once

// Scoring: per-feature classification metrics, rank AUC, size MSE, the random
// baseline and the BLEU / ROUGE-L / METEOR text metrics. Anything that cannot
// be computed comes back as std::nullopt and is rendered "--", never as 0.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "renalct/error.hpp"
#include "renalct/porter_stemmer.hpp"
#include "renalct/rng.hpp"
#include "renalct/schema.hpp"

namespace renalct {

// ---------------------------------------------------------------------------
// Classification

/// Truth and predicted class tokens for one feature. kUnknownToken marks an
/// unknown value on either side.
struct LabelColumn {
    Feature feature = Feature::position;
    std::vector<std::string> truth;
    std::vector<std::string> predicted;

    std::size_t size() const { return truth.size(); }
};

/// Per-instance class scores, one map per instance. Only columns built from a
/// score-bearing predictor carry these; extraction-derived columns cannot be
/// turned into one, which is what keeps AUC off those rows.
struct ScoredLabelColumn {
    LabelColumn labels;
    std::vector<std::map<std::string, double>> scores;
};

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t scored = 0;
};

/// Macro averages over the classes present in the known truth. Instances with
/// unknown truth are skipped. A prediction of unknown is simply wrong: it
/// counts as a false negative for the true class. A class that is never
/// predicted gets precision 0.
inline std::optional<ClassificationMetrics> classification_metrics(const LabelColumn &col) {
    if (col.truth.size() != col.predicted.size())
        fail(ErrorKind::data, "label column length mismatch for " +
                                  std::string(feature_key(col.feature)));
    std::vector<std::string> classes;
    std::size_t scored = 0, correct = 0;
    for (std::size_t i = 0; i < col.size(); ++i) {
        if (col.truth[i] == kUnknownToken)
            continue;
        ++scored;
        if (col.predicted[i] == col.truth[i])
            ++correct;
        if (std::find(classes.begin(), classes.end(), col.truth[i]) == classes.end())
            classes.push_back(col.truth[i]);
    }
    if (scored == 0)
        return std::nullopt;
    std::sort(classes.begin(), classes.end());

    ClassificationMetrics m;
    m.scored = scored;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(scored);
    for (const auto &c : classes) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < col.size(); ++i) {
            if (col.truth[i] == kUnknownToken)
                continue;
            const bool is_true = col.truth[i] == c;
            const bool is_pred = col.predicted[i] == c;
            tp += is_true && is_pred;
            fp += !is_true && is_pred;
            fn += is_true && !is_pred;
        }
        const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        const double f = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
        m.precision += p;
        m.recall += r;
        m.f1 += f;
    }
    const auto k = static_cast<double>(classes.size());
    m.precision /= k;
    m.recall /= k;
    m.f1 /= k;
    return m;
}

/// Rank statistic: P(score_pos > score_neg) + 0.5 P(tie), over all pairs.
inline std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        fail(ErrorKind::data, "auc: scores and labels differ in length");
    // Sort once and count pairs by rank so large columns stay O(n log n).
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pairs_won = 0.0;
    std::size_t negatives_below = 0, positives = 0, negatives = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t pos = 0, neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] != 0 ? pos : neg) += 1;
            ++j;
        }
        pairs_won += static_cast<double>(pos) * (static_cast<double>(negatives_below) + 0.5 * static_cast<double>(neg));
        negatives_below += neg;
        positives += pos;
        negatives += neg;
        i = j;
    }
    if (positives == 0 || negatives == 0)
        return std::nullopt;
    return pairs_won / (static_cast<double>(positives) * static_cast<double>(negatives));
}

/// Binary features use the positive class score; multi-class features take the
/// macro one-vs-rest mean over classes where both sides are present.
inline std::optional<double> column_auc(const ScoredLabelColumn &col) {
    const auto &labels = col.labels;
    if (col.scores.size() != labels.size())
        fail(ErrorKind::data, "score column length mismatch for " + std::string(feature_key(labels.feature)));
    std::vector<std::string_view> classes;
    if (auto pos = positive_class(labels.feature))
        classes.push_back(*pos);
    else
        for (auto c : known_classes(labels.feature))
            classes.push_back(c);

    double sum = 0.0;
    int counted = 0;
    for (auto c : classes) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels.truth[i] == kUnknownToken)
                continue;
            const auto it = col.scores[i].find(std::string(c));
            s.push_back(it == col.scores[i].end() ? 0.0 : it->second);
            y.push_back(labels.truth[i] == c ? 1 : 0);
        }
        if (auto a = auc(s, y)) {
            sum += *a;
            ++counted;
        }
    }
    if (counted == 0)
        return std::nullopt;
    return sum / counted;
}

struct SizeError {
    double mse = 0.0;
    double coverage = 0.0;
    std::size_t scored = 0;
};

/// MSE over pairs where both sides are known; coverage = scored / known truth.
inline std::optional<SizeError> size_mse(std::span<const std::optional<double>> truth,
                                         std::span<const std::optional<double>> predicted) {
    if (truth.size() != predicted.size())
        fail(ErrorKind::data, "size_mse: columns differ in length");
    std::size_t known = 0, scored = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!truth[i])
            continue;
        ++known;
        if (!predicted[i])
            continue;
        ++scored;
        const double d = *truth[i] - *predicted[i];
        sum += d * d;
    }
    if (scored == 0)
        return std::nullopt;
    return SizeError{sum / static_cast<double>(scored),
                     static_cast<double>(scored) / static_cast<double>(known), scored};
}

// ---------------------------------------------------------------------------
// Metric rows

struct MetricRow {
    Feature feature = Feature::position;
    std::optional<double> auc;
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1_or_mse;
    std::optional<double> coverage;
};

inline MetricRow metric_row(const LabelColumn &col) {
    MetricRow row;
    row.feature = col.feature;
    if (auto m = classification_metrics(col)) {
        row.accuracy = m->accuracy;
        row.precision = m->precision;
        row.recall = m->recall;
        row.f1_or_mse = m->f1;
    }
    std::size_t known = 0, answered = 0;
    for (std::size_t i = 0; i < col.size(); ++i)
        if (col.truth[i] != kUnknownToken) {
            ++known;
            answered += col.predicted[i] != kUnknownToken;
        }
    if (known > 0)
        row.coverage = static_cast<double>(answered) / static_cast<double>(known);
    return row;
}

inline MetricRow metric_row(const ScoredLabelColumn &col) {
    MetricRow row = metric_row(col.labels);
    row.auc = column_auc(col);
    return row;
}

inline MetricRow size_row(std::span<const std::optional<double>> truth,
                          std::span<const std::optional<double>> predicted) {
    MetricRow row;
    row.feature = Feature::size;
    if (auto e = size_mse(truth, predicted)) {
        row.f1_or_mse = e->mse;
        row.coverage = e->coverage;
    }
    return row;
}

/// Uniform guessing over the feature's known classes with uniform [0, 1)
/// scores, averaged over trials. Size guesses are uniform over the observed
/// truth range.
inline MetricRow random_baseline(const LabelColumn &truth_only, int trials, std::uint64_t seed) {
    if (trials < 1)
        fail(ErrorKind::config, "random baseline needs at least one trial");
    const auto classes = known_classes(truth_only.feature);
    if (classes.empty())
        fail(ErrorKind::config, "random baseline over a non-categorical feature");
    Rng rng(derive_seed(seed, feature_key(truth_only.feature)));
    MetricRow mean;
    mean.feature = truth_only.feature;
    std::array<double, 5> sums{};
    std::array<int, 5> counts{};
    auto add = [&](int slot, const std::optional<double> &v) {
        if (v) {
            sums[static_cast<std::size_t>(slot)] += *v;
            ++counts[static_cast<std::size_t>(slot)];
        }
    };
    for (int t = 0; t < trials; ++t) {
        ScoredLabelColumn col;
        col.labels.feature = truth_only.feature;
        col.labels.truth = truth_only.truth;
        col.labels.predicted.reserve(truth_only.size());
        col.scores.reserve(truth_only.size());
        for (std::size_t i = 0; i < truth_only.size(); ++i) {
            col.labels.predicted.emplace_back(classes[rng.index(classes.size())]);
            std::map<std::string, double> s;
            for (auto c : classes)
                s[std::string(c)] = rng.uniform();
            col.scores.push_back(std::move(s));
        }
        const auto row = metric_row(col);
        add(0, row.auc);
        add(1, row.accuracy);
        add(2, row.precision);
        add(3, row.recall);
        add(4, row.f1_or_mse);
    }
    auto avg = [&](int slot) -> std::optional<double> {
        const auto s = static_cast<std::size_t>(slot);
        if (counts[s] == 0)
            return std::nullopt;
        return sums[s] / counts[s];
    };
    mean.auc = avg(0);
    mean.accuracy = avg(1);
    mean.precision = avg(2);
    mean.recall = avg(3);
    mean.f1_or_mse = avg(4);
    mean.coverage = 1.0;
    return mean;
}

inline MetricRow random_size_baseline(std::span<const std::optional<double>> truth, int trials,
                                      std::uint64_t seed) {
    if (trials < 1)
        fail(ErrorKind::config, "random baseline needs at least one trial");
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto &t : truth)
        if (t) {
            lo = any ? std::min(lo, *t) : *t;
            hi = any ? std::max(hi, *t) : *t;
            any = true;
        }
    MetricRow row;
    row.feature = Feature::size;
    if (!any)
        return row;
    Rng rng(derive_seed(seed, "size_cm"));
    double sum = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::vector<std::optional<double>> guess;
        guess.reserve(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i)
            guess.emplace_back(rng.uniform(lo, hi));
        sum += size_mse(truth, guess)->mse;
    }
    row.f1_or_mse = sum / trials;
    row.coverage = 1.0;
    return row;
}

// ---------------------------------------------------------------------------
// Text metrics

inline constexpr std::string_view kNlgTokenizerVersion = "nlg-tok-v1";

/// Lowercases and splits on whitespace after separating punctuation. '.' and
/// ',' between digits stay inside numbers; '-' and '\'' between letters or
/// digits stay inside words.
inline std::vector<std::string> nlg_tokenize(std::string_view text) {
    auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty())
            out.push_back(std::move(current));
        current.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        const unsigned char uc = static_cast<unsigned char>(c);
        if (std::isspace(uc)) {
            flush();
            continue;
        }
        if (alnum(c) || uc >= 0x80) {
            current += static_cast<char>(std::tolower(uc));
            continue;
        }
        const bool has_prev = i > 0, has_next = i + 1 < text.size();
        const bool inner_number = (c == '.' || c == ',') && has_prev && has_next &&
                                  digit(text[i - 1]) && digit(text[i + 1]) && !current.empty();
        const bool inner_word = (c == '-' || c == '\'') && has_prev && has_next &&
                                alnum(text[i - 1]) && alnum(text[i + 1]) && !current.empty();
        if (inner_number || inner_word) {
            current += c;
            continue;
        }
        flush();
        out.emplace_back(1, c);
    }
    flush();
    return out;
}

struct BleuOptions {
    int max_n = 4;
    bool add_one_smoothing = false;
};

/// Corpus BLEU with one reference per candidate.
inline double bleu(std::span<const std::vector<std::string>> candidates,
                   std::span<const std::vector<std::string>> references, BleuOptions opt = {}) {
    if (candidates.empty())
        fail(ErrorKind::data, "bleu: empty candidate set");
    if (candidates.size() != references.size())
        fail(ErrorKind::data, "bleu: candidate and reference counts differ");
    if (opt.max_n < 1)
        fail(ErrorKind::config, "bleu: max_n must be positive");
    std::vector<double> matched(static_cast<std::size_t>(opt.max_n), 0.0);
    std::vector<double> total(static_cast<std::size_t>(opt.max_n), 0.0);
    double c_len = 0.0, r_len = 0.0;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const auto &c = candidates[k];
        const auto &r = references[k];
        c_len += static_cast<double>(c.size());
        r_len += static_cast<double>(r.size());
        for (int n = 1; n <= opt.max_n; ++n) {
            std::map<std::vector<std::string>, int> ref_counts, cand_counts;
            for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= r.size(); ++i)
                ++ref_counts[std::vector<std::string>(r.begin() + static_cast<long>(i), r.begin() + static_cast<long>(i) + n)];
            for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= c.size(); ++i)
                ++cand_counts[std::vector<std::string>(c.begin() + static_cast<long>(i), c.begin() + static_cast<long>(i) + n)];
            for (const auto &[gram, count] : cand_counts) {
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end())
                    matched[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
                total[static_cast<std::size_t>(n - 1)] += count;
            }
        }
    }
    if (c_len == 0.0)
        return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 0; n < matched.size(); ++n) {
        double p;
        if (opt.add_one_smoothing)
            p = (matched[n] + 1.0) / (total[n] + 1.0);
        else if (total[n] == 0.0 || matched[n] == 0.0)
            return 0.0;
        else
            p = matched[n] / total[n];
        log_sum += std::log(p);
    }
    const double bp = c_len < r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
    return bp * std::exp(log_sum / static_cast<double>(opt.max_n));
}

inline std::size_t lcs_length(const std::vector<std::string> &a, const std::vector<std::string> &b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double rouge_l(const std::vector<std::string> &candidate, const std::vector<std::string> &reference) {
    if (reference.empty())
        fail(ErrorKind::data, "rouge_l: empty reference");
    if (candidate.empty())
        return 0.0;
    const double l = static_cast<double>(lcs_length(candidate, reference));
    if (l == 0.0)
        return 0.0;
    const double p = l / static_cast<double>(candidate.size());
    const double r = l / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

inline double rouge_l_corpus(std::span<const std::vector<std::string>> candidates,
                             std::span<const std::vector<std::string>> references) {
    if (candidates.empty() || candidates.size() != references.size())
        fail(ErrorKind::data, "rouge_l: corpora must be non-empty and aligned");
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        sum += rouge_l(candidates[i], references[i]);
    return sum / static_cast<double>(candidates.size());
}

struct MeteorParams {
    double alpha = 0.9;
    double beta = 3.0;
    double gamma = 0.5;
    long node_budget = 2'000'000;
};

struct MeteorAlignment {
    std::size_t exact = 0;
    std::size_t matches = 0;
    std::size_t chunks = 0;
    bool exhaustive = true; // false when the search budget ran out
};

namespace detail {

inline bool is_alpha_word(std::string_view w) {
    return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

/// One-to-one unigram alignment ordered lexicographically by (most exact
/// matches, most total matches, fewest chunks). Exact matches take priority
/// over stem matches, as in the staged matcher.
inline MeteorAlignment meteor_align(const std::vector<std::string> &c, const std::vector<std::string> &r,
                                    long node_budget) {
    auto stem_of = [](const std::string &w) { return is_alpha_word(w) ? porter::stem(w) : w; };
    std::vector<std::string> cs, rs;
    for (const auto &w : c) cs.push_back(stem_of(w));
    for (const auto &w : r) rs.push_back(stem_of(w));

    // Candidate options: (reference index, is_exact).
    std::vector<std::vector<std::pair<std::size_t, bool>>> options(c.size());
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (c[i] == r[j])
                options[i].push_back({j, true});
            else if (cs[i] == rs[j])
                options[i].push_back({j, false});
        }

    struct Score {
        std::size_t exact, matches, chunks;
        bool better_than(const Score &o) const {
            if (exact != o.exact) return exact > o.exact;
            if (matches != o.matches) return matches > o.matches;
            return chunks < o.chunks;
        }
    };
    // Suffix upper bounds on additional exact / total matches.
    std::vector<std::size_t> exact_left(c.size() + 1, 0), any_left(c.size() + 1, 0);
    for (std::size_t i = c.size(); i-- > 0;) {
        bool has_exact = false;
        for (const auto &o : options[i]) has_exact = has_exact || o.second;
        exact_left[i] = exact_left[i + 1] + has_exact;
        any_left[i] = any_left[i + 1] + !options[i].empty();
    }

    Score best{0, 0, 0};
    bool have_best = false;
    long nodes = 0;
    bool exhausted = false;
    std::vector<bool> used(r.size(), false);

    // last = reference index matched by candidate i-1, or npos.
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    auto dfs = [&](auto &&self, std::size_t i, std::size_t last, Score cur) -> void {
        if (++nodes > node_budget) {
            exhausted = true;
            return;
        }
        if (have_best) {
            const Score bound{cur.exact + exact_left[i], cur.matches + any_left[i], cur.chunks};
            if (!bound.better_than(best))
                return;
        }
        if (i == c.size()) {
            if (!have_best || cur.better_than(best)) {
                best = cur;
                have_best = true;
            }
            return;
        }
        // Extending the current chunk first finds good solutions early.
        auto sorted = options[i];
        std::stable_sort(sorted.begin(), sorted.end(), [&](const auto &a, const auto &b) {
            const bool ca = last != npos && a.first == last + 1;
            const bool cb = last != npos && b.first == last + 1;
            if (ca != cb) return ca;
            return a.second > b.second;
        });
        for (const auto &[j, is_exact] : sorted) {
            if (used[j])
                continue;
            used[j] = true;
            Score next = cur;
            next.exact += is_exact;
            next.matches += 1;
            next.chunks += (last != npos && j == last + 1) ? 0 : 1;
            self(self, i + 1, j, next);
            used[j] = false;
            if (exhausted)
                return;
        }
        self(self, i + 1, npos, cur);
    };
    dfs(dfs, 0, npos, Score{0, 0, 0});
    return MeteorAlignment{best.exact, best.matches, best.chunks, !exhausted};
}

} // namespace detail

inline double meteor(const std::vector<std::string> &candidate, const std::vector<std::string> &reference,
                     const MeteorParams &p = {}) {
    if (candidate.empty() || reference.empty())
        return 0.0;
    const auto a = detail::meteor_align(candidate, reference, p.node_budget);
    if (a.matches == 0)
        return 0.0;
    const double m = static_cast<double>(a.matches);
    const double precision = m / static_cast<double>(candidate.size());
    const double recall = m / static_cast<double>(reference.size());
    const double fmean = precision * recall / (p.alpha * precision + (1.0 - p.alpha) * recall);
    const double penalty = p.gamma * std::pow(static_cast<double>(a.chunks) / m, p.beta);
    return fmean * (1.0 - penalty);
}

inline double meteor_corpus(std::span<const std::vector<std::string>> candidates,
                            std::span<const std::vector<std::string>> references, const MeteorParams &p = {}) {
    if (candidates.empty() || candidates.size() != references.size())
        fail(ErrorKind::data, "meteor: corpora must be non-empty and aligned");
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        sum += meteor(candidates[i], references[i], p);
    return sum / static_cast<double>(candidates.size());
}

struct NlgScores {
    double bleu1 = 0.0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double meteor = 0.0;
};

inline NlgScores nlg_scores(std::span<const std::string> candidates, std::span<const std::string> references,
                            bool add_one_smoothing = false) {
    std::vector<std::vector<std::string>> c, r;
    for (const auto &s : candidates) c.push_back(nlg_tokenize(s));
    for (const auto &s : references) r.push_back(nlg_tokenize(s));
    NlgScores out;
    out.bleu1 = bleu(c, r, {1, add_one_smoothing});
    out.bleu4 = bleu(c, r, {4, add_one_smoothing});
    out.rouge_l = rouge_l_corpus(c, r);
    out.meteor = meteor_corpus(c, r);
    return out;
}

} // namespace renalct
