#pragma once

// Per-fold metric tables, their mean over folds, and the CSV / text renderings.
// Not-computable cells render as "--".

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "renalct/error.hpp"
#include "renalct/metrics.hpp"
#include "renalct/schema.hpp"

namespace renalct {

struct MetricTable {
    std::optional<int> fold; // nullopt: mean over folds
    std::vector<MetricRow> rows;
    std::optional<NlgScores> nlg;
};

inline std::string format_cell(const std::optional<double> &v, int decimals) {
    if (!v)
        return "--";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
    return buf;
}

/// Cell-wise mean over the folds where the cell is computable.
inline MetricTable mean_over_folds(const std::vector<MetricTable> &folds) {
    if (folds.empty())
        fail(ErrorKind::not_computable, "no folds to aggregate");
    MetricTable out;
    for (const auto &row : folds.front().rows) {
        MetricRow mean;
        mean.feature = row.feature;
        auto cell = [&](std::optional<double> MetricRow::*member) -> std::optional<double> {
            double sum = 0.0;
            int n = 0;
            for (const auto &t : folds)
                for (const auto &r : t.rows)
                    if (r.feature == row.feature && r.*member) {
                        sum += *(r.*member);
                        ++n;
                    }
            if (n == 0)
                return std::nullopt;
            return sum / n;
        };
        mean.auc = cell(&MetricRow::auc);
        mean.accuracy = cell(&MetricRow::accuracy);
        mean.precision = cell(&MetricRow::precision);
        mean.recall = cell(&MetricRow::recall);
        mean.f1_or_mse = cell(&MetricRow::f1_or_mse);
        mean.coverage = cell(&MetricRow::coverage);
        out.rows.push_back(mean);
    }
    int nlg_folds = 0;
    NlgScores sum;
    for (const auto &t : folds)
        if (t.nlg) {
            sum.bleu1 += t.nlg->bleu1;
            sum.bleu4 += t.nlg->bleu4;
            sum.rouge_l += t.nlg->rouge_l;
            sum.meteor += t.nlg->meteor;
            ++nlg_folds;
        }
    if (nlg_folds > 0) {
        sum.bleu1 /= nlg_folds;
        sum.bleu4 /= nlg_folds;
        sum.rouge_l /= nlg_folds;
        sum.meteor /= nlg_folds;
        out.nlg = sum;
    }
    return out;
}

inline std::string fold_label(const MetricTable &t) { return t.fold ? std::to_string(*t.fold) : "mean"; }

inline constexpr std::string_view kFeatureCsvHeader = "fold,feature,auc,accuracy,precision,recall,f1_or_mse,coverage";
inline constexpr std::string_view kNlgCsvHeader = "fold,bleu1,bleu4,rouge_l,meteor";

inline std::string features_csv(const std::vector<MetricTable> &tables) {
    std::ostringstream out;
    out << kFeatureCsvHeader << '\n';
    for (const auto &t : tables)
        for (const auto &r : t.rows)
            out << fold_label(t) << ',' << feature_key(r.feature) << ',' << format_cell(r.auc, 6) << ','
                << format_cell(r.accuracy, 6) << ',' << format_cell(r.precision, 6) << ','
                << format_cell(r.recall, 6) << ',' << format_cell(r.f1_or_mse, 6) << ','
                << format_cell(r.coverage, 6) << '\n';
    return out.str();
}

inline std::string nlg_csv(const std::vector<MetricTable> &tables) {
    std::ostringstream out;
    out << kNlgCsvHeader << '\n';
    for (const auto &t : tables)
        if (t.nlg)
            out << fold_label(t) << ',' << format_cell(t.nlg->bleu1, 6) << ','
                << format_cell(t.nlg->bleu4, 6) << ',' << format_cell(t.nlg->rouge_l, 6) << ','
                << format_cell(t.nlg->meteor, 6) << '\n';
    return out.str();
}

/// Fixed-width layout: one feature per row, AUC / Accuracy / Precision /
/// Recall / F1 (MSE for size), then the text-metric block.
inline std::string render_text_table(const MetricTable &t, std::string_view title = "") {
    std::ostringstream out;
    if (!title.empty())
        out << title << '\n';
    char line[256];
    std::snprintf(line, sizeof line, "%-12s %8s %9s %10s %8s %9s %9s\n", "Feature", "AUC", "Accuracy",
                  "Precision", "Recall", "F1 / MSE", "Coverage");
    out << line;
    for (const auto &r : t.rows) {
        std::snprintf(line, sizeof line, "%-12s %8s %9s %10s %8s %9s %9s\n",
                      std::string(feature_display_name(r.feature)).c_str(), format_cell(r.auc, 4).c_str(),
                      format_cell(r.accuracy, 4).c_str(), format_cell(r.precision, 4).c_str(),
                      format_cell(r.recall, 4).c_str(), format_cell(r.f1_or_mse, 4).c_str(),
                      format_cell(r.coverage, 4).c_str());
        out << line;
    }
    if (t.nlg) {
        std::snprintf(line, sizeof line, "\n%-8s %-8s %-8s %-8s\n%-8s %-8s %-8s %-8s\n", "BLEU-1", "BLEU-4",
                      "ROUGE-L", "METEOR", format_cell(t.nlg->bleu1, 4).c_str(),
                      format_cell(t.nlg->bleu4, 4).c_str(), format_cell(t.nlg->rouge_l, 4).c_str(),
                      format_cell(t.nlg->meteor, 4).c_str());
        out << line;
    }
    return out.str();
}

} // namespace renalct
