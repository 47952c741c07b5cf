#ifndef FOODREC_METRICS_HPP
#define FOODREC_METRICS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "foodrec/network.hpp" // EpochRecord / TrainCurves

namespace foodrec::metrics {

/// counts[i*k+j] = items of true class i predicted as class j.
struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes)
        : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

    std::int64_t& at(int i, int j) { return counts[static_cast<std::size_t>(i) * k + j]; }
    std::int64_t at(int i, int j) const { return counts[static_cast<std::size_t>(i) * k + j]; }
    std::int64_t total() const;
    std::int64_t trace() const;
    std::int64_t row_total(int i) const;
    std::int64_t col_total(int j) const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& truths, const std::vector<int>& preds,
                                 int k);

/// trace / total.
double overall_accuracy(const ConfusionMatrix& m);

struct ClassRates {
    double tpr = 0.0;
    double tnr = 0.0;
    double rr = 0.0; // (tpr + tnr) / 2
};

/// TPR = counts[c][c]/row_c; TNR = (total - row_c - FP_c)/(total - row_c).
ClassRates recognition_rate(const ConfusionMatrix& m, int c);

double mean_recognition_rate(const ConfusionMatrix& m);

struct EvalReport {
    std::vector<std::string> classes;
    ConfusionMatrix matrix;
    double overall_accuracy = 0.0;
    std::vector<ClassRates> per_class;
    double mean_rr = 0.0;
};

EvalReport build_report(const ConfusionMatrix& m, const std::vector<std::string>& classes);

/// JSON document with keys classes, matrix (row-major), overall_accuracy,
/// per_class (tpr/tnr/rr), mean_rr. Full-precision numbers; the console
/// rendering rounds to 4 decimals.
void emit_report(const EvalReport& report, const std::string& path);
EvalReport parse_report(const std::string& path);
std::string format_report_text(const EvalReport& report);

/// CSV: epoch,train_loss,train_acc,test_loss,test_acc,eta (one row/epoch).
void emit_curves(const TrainCurves& curves, const std::string& path);
TrainCurves parse_curves(const std::string& path);

/// Standalone SVG line chart with four polyline series (train/test accuracy,
/// train/test loss).
void emit_curves_chart(const TrainCurves& curves, const std::string& path);

// Built-in oracle fixtures: the published reference confusion tables for the
// ten-class task and their published per-class recognition rates.
ConfusionMatrix reference_bof_confusion();
ConfusionMatrix reference_cnn_confusion();
const std::array<double, 10>& reference_bof_rr();
const std::array<double, 10>& reference_cnn_rr();

} // namespace foodrec::metrics

#endif
