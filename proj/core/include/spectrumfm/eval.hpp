#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "spectrumfm/error.hpp"

namespace spectrumfm::eval {

// One evaluated sample: a binary decision score (where applicable), the
// predicted class, the true class, and the generation SNR annotation.
struct ScoredSample {
    double score = 0.0;
    int predicted = 0;
    int true_label = 0;
    double snr_db = 0.0;
};

struct RocPoint {
    double threshold;  // +inf for the (0, 0) endpoint
    double pfa;
    double pd;
};

// Threshold sweep over all distinct scores (ties grouped), decision rule
// score >= threshold. Includes the (0,0) and (1,1) endpoints. Requires both
// classes present.
std::vector<RocPoint> roc_curve(std::span<const ScoredSample> samples);

// Trapezoidal area under a valid ROC curve.
double auc(std::span<const RocPoint> curve);

// Linear interpolation of Pd at the requested Pfa.
double pd_at_pfa(std::span<const RocPoint> curve, double target_pfa);

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

using Confusion = std::vector<std::vector<long>>;  // [true][predicted]

Confusion confusion_matrix(std::span<const ScoredSample> samples, int num_classes);

// Per-class precision/recall/F1 with the 0/0 -> 0 convention.
std::vector<Prf> per_class_prf(const Confusion& confusion);
// Unweighted class means; F1 is the harmonic mean per class, then averaged.
Prf macro_prf(const Confusion& confusion);

// Accuracy per exact SNR value.
std::map<double, double> accuracy_by_snr(std::span<const ScoredSample> samples);
std::map<double, std::pair<long, long>> correct_by_snr(std::span<const ScoredSample> samples);

struct EvalReport {
    std::map<double, double> accuracy_by_snr;
    std::map<double, std::pair<long, long>> snr_counts;  // (correct, total)
    std::vector<RocPoint> roc;  // binary tasks only
    bool has_roc = false;
    double auc = 0.0;
    Prf macro;
    std::vector<Prf> per_class;
    Confusion confusion;
    std::vector<std::string> class_names;
    double overall_accuracy = 0.0;
    long num_samples = 0;
};

EvalReport build_report(std::span<const ScoredSample> samples, int num_classes,
                        const std::vector<std::string>& class_names, bool binary_scores);

// roc.csv, acc_by_snr.csv, prf.csv, confusion.csv under `dir`.
void write_report_csvs(const std::string& dir, const EvalReport& report);

}  // namespace spectrumfm::eval
