#include "spectrumfm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

namespace spectrumfm::eval {

namespace {

void validate_curve(std::span<const RocPoint> curve) {
    if (curve.size() < 2) throw EvalError("roc curve must have at least two points");
    if (curve.front().pfa != 0.0 || curve.front().pd != 0.0)
        throw EvalError("roc curve must start at (0, 0)");
    if (curve.back().pfa != 1.0 || curve.back().pd != 1.0)
        throw EvalError("roc curve must end at (1, 1)");
    for (size_t i = 0; i < curve.size(); ++i) {
        if (curve[i].pfa < 0.0 || curve[i].pfa > 1.0 || curve[i].pd < 0.0 || curve[i].pd > 1.0)
            throw EvalError("roc point outside the unit square");
        if (i > 0 && (curve[i].pfa < curve[i - 1].pfa || curve[i].pd < curve[i - 1].pd))
            throw EvalError("roc curve is not monotone; points unsorted or invalid");
    }
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const ScoredSample> samples) {
    long positives = 0, negatives = 0;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score)) throw EvalError("roc_curve: non-finite score");
        (s.true_label == 0 ? negatives : positives)++;
    }
    if (positives == 0 || negatives == 0)
        throw EvalError("roc_curve: both classes must be present");

    std::vector<std::pair<double, int>> by_score;
    by_score.reserve(samples.size());
    for (const auto& s : samples) by_score.emplace_back(s.score, s.true_label);
    std::sort(by_score.begin(), by_score.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    std::vector<RocPoint> curve;
    curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    long tp = 0, fp = 0;
    size_t i = 0;
    while (i < by_score.size()) {
        const double threshold = by_score[i].first;
        // ties collapse into one threshold step
        while (i < by_score.size() && by_score[i].first == threshold) {
            (by_score[i].second == 0 ? fp : tp)++;
            ++i;
        }
        curve.push_back({threshold, static_cast<double>(fp) / static_cast<double>(negatives),
                         static_cast<double>(tp) / static_cast<double>(positives)});
    }
    return curve;
}

double auc(std::span<const RocPoint> curve) {
    validate_curve(curve);
    double area = 0.0;
    for (size_t i = 1; i < curve.size(); ++i)
        area += (curve[i].pfa - curve[i - 1].pfa) * (curve[i].pd + curve[i - 1].pd) * 0.5;
    return area;
}

double pd_at_pfa(std::span<const RocPoint> curve, double target_pfa) {
    validate_curve(curve);
    if (!(target_pfa >= 0.0 && target_pfa <= 1.0))
        throw EvalError("pd_at_pfa: target outside [0, 1]");
    // last point at or below the target; later points at equal pfa dominate
    size_t i = 0;
    for (size_t k = 0; k < curve.size(); ++k)
        if (curve[k].pfa <= target_pfa) i = k;
    if (curve[i].pfa == target_pfa || i + 1 == curve.size()) return curve[i].pd;
    const RocPoint& a = curve[i];
    const RocPoint& b = curve[i + 1];
    return a.pd + (target_pfa - a.pfa) * (b.pd - a.pd) / (b.pfa - a.pfa);
}

Confusion confusion_matrix(std::span<const ScoredSample> samples, int num_classes) {
    if (num_classes < 1) throw EvalError("confusion_matrix: need at least one class");
    Confusion m(static_cast<size_t>(num_classes),
                std::vector<long>(static_cast<size_t>(num_classes), 0));
    for (const auto& s : samples) {
        if (s.true_label < 0 || s.true_label >= num_classes || s.predicted < 0 ||
            s.predicted >= num_classes)
            throw EvalError("confusion_matrix: label out of range");
        m[static_cast<size_t>(s.true_label)][static_cast<size_t>(s.predicted)]++;
    }
    return m;
}

std::vector<Prf> per_class_prf(const Confusion& confusion) {
    const size_t c = confusion.size();
    if (c == 0) throw EvalError("macro_prf: empty confusion matrix");
    for (const auto& row : confusion) {
        if (row.size() != c) throw EvalError("macro_prf: confusion matrix must be square");
        for (long v : row)
            if (v < 0) throw EvalError("macro_prf: negative count");
    }
    std::vector<Prf> out(c);
    for (size_t k = 0; k < c; ++k) {
        long tp = confusion[k][k];
        long pred = 0, truth = 0;
        for (size_t r = 0; r < c; ++r) pred += confusion[r][k];
        for (size_t j = 0; j < c; ++j) truth += confusion[k][j];
        const double p = pred > 0 ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
        const double r = truth > 0 ? static_cast<double>(tp) / static_cast<double>(truth) : 0.0;
        const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        out[k] = {p, r, f1};
    }
    return out;
}

Prf macro_prf(const Confusion& confusion) {
    const std::vector<Prf> per = per_class_prf(confusion);
    Prf macro;
    for (const auto& c : per) {
        macro.precision += c.precision;
        macro.recall += c.recall;
        macro.f1 += c.f1;
    }
    const double n = static_cast<double>(per.size());
    macro.precision /= n;
    macro.recall /= n;
    macro.f1 /= n;
    return macro;
}

std::map<double, std::pair<long, long>> correct_by_snr(std::span<const ScoredSample> samples) {
    if (samples.empty()) throw EvalError("accuracy_by_snr: no samples");
    std::map<double, std::pair<long, long>> buckets;
    for (const auto& s : samples) {
        if (!std::isfinite(s.snr_db)) throw EvalError("accuracy_by_snr: missing SNR annotation");
        auto& [correct, total] = buckets[s.snr_db];
        correct += (s.predicted == s.true_label);
        total += 1;
    }
    return buckets;
}

std::map<double, double> accuracy_by_snr(std::span<const ScoredSample> samples) {
    std::map<double, double> out;
    for (const auto& [snr, ct] : correct_by_snr(samples))
        out[snr] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
    return out;
}

EvalReport build_report(std::span<const ScoredSample> samples, int num_classes,
                        const std::vector<std::string>& class_names, bool binary_scores) {
    if (samples.empty()) throw EvalError("build_report: no samples");
    EvalReport report;
    report.class_names = class_names;
    report.num_samples = static_cast<long>(samples.size());
    report.confusion = confusion_matrix(samples, num_classes);
    report.per_class = per_class_prf(report.confusion);
    report.macro = macro_prf(report.confusion);
    report.accuracy_by_snr = accuracy_by_snr(samples);
    report.snr_counts = correct_by_snr(samples);
    long correct = 0;
    for (const auto& s : samples) correct += (s.predicted == s.true_label);
    report.overall_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    if (binary_scores) {
        report.roc = roc_curve(samples);
        report.auc = auc(report.roc);
        report.has_roc = true;
    }
    return report;
}

namespace {

std::ofstream open_csv(const std::string& dir, const char* name) {
    std::filesystem::path p = std::filesystem::path(dir) / name;
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError(std::string("cannot open ") + p.string());
    return os;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

void write_report_csvs(const std::string& dir, const EvalReport& report) {
    std::filesystem::create_directories(dir);
    if (report.has_roc) {
        auto os = open_csv(dir, "roc.csv");
        os << "threshold,pfa,pd\n";
        for (const auto& p : report.roc)
            os << fmt(p.threshold) << ',' << fmt(p.pfa) << ',' << fmt(p.pd) << '\n';
    }
    {
        auto os = open_csv(dir, "acc_by_snr.csv");
        os << "snr_db,accuracy,count\n";
        for (const auto& [snr, acc] : report.accuracy_by_snr) {
            const auto it = report.snr_counts.find(snr);
            const long count = it == report.snr_counts.end() ? 0 : it->second.second;
            os << fmt(snr) << ',' << fmt(acc) << ',' << count << '\n';
        }
    }
    {
        auto os = open_csv(dir, "prf.csv");
        os << "class,precision,recall,f1\n";
        for (size_t k = 0; k < report.per_class.size(); ++k) {
            const std::string name =
                k < report.class_names.size() ? report.class_names[k] : std::to_string(k);
            os << name << ',' << fmt(report.per_class[k].precision) << ','
               << fmt(report.per_class[k].recall) << ',' << fmt(report.per_class[k].f1) << '\n';
        }
        os << "macro," << fmt(report.macro.precision) << ',' << fmt(report.macro.recall) << ','
           << fmt(report.macro.f1) << '\n';
    }
    {
        auto os = open_csv(dir, "confusion.csv");
        os << "true\\predicted";
        for (size_t k = 0; k < report.confusion.size(); ++k)
            os << ','
               << (k < report.class_names.size() ? report.class_names[k] : std::to_string(k));
        os << '\n';
        for (size_t r = 0; r < report.confusion.size(); ++r) {
            os << (r < report.class_names.size() ? report.class_names[r] : std::to_string(r));
            for (long v : report.confusion[r]) os << ',' << v;
            os << '\n';
        }
    }
}

}  // namespace spectrumfm::eval
