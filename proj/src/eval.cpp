#include "fairspec/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairspec/error.hpp"
#include "fairspec/parallel.hpp"

namespace fairspec {

double ClassAccuracyVector::worst() const {
    if (values.empty()) throw InvalidArgument("ClassAccuracyVector: empty");
    return *std::min_element(values.begin(), values.end());
}

double ClassAccuracyVector::mean() const {
    if (values.empty()) throw InvalidArgument("ClassAccuracyVector: empty");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

MatrixXd dataset_logits(const Net& net, const Dataset& ds) {
    MatrixXd logits(ds.size(), net.output_dim());
    parallel_for(ds.size(), [&](int q) { logits.row(q) = predict_logits(net, ds.sample(q)).transpose(); });
    return logits;
}

std::vector<int> predictions_from_logits(const MatrixXd& logits) {
    std::vector<int> pred(logits.rows());
    for (Eigen::Index q = 0; q < logits.rows(); ++q) pred[q] = argmax(logits.row(q));
    return pred;
}

ClassAccuracyVector per_class_accuracy_from_logits(const MatrixXd& logits, std::span<const int> labels,
                                                   int num_classes) {
    if (logits.rows() != static_cast<Eigen::Index>(labels.size()))
        throw DimensionMismatch("per_class_accuracy: logits/labels length mismatch");
    const auto counts = class_counts_checked(labels, num_classes);
    std::vector<int> correct(num_classes, 0);
    const auto pred = predictions_from_logits(logits);
    for (std::size_t q = 0; q < labels.size(); ++q)
        if (pred[q] == labels[q]) ++correct[labels[q]];
    ClassAccuracyVector acc;
    acc.values.resize(num_classes);
    for (int j = 0; j < num_classes; ++j) acc.values[j] = static_cast<double>(correct[j]) / counts[j];
    return acc;
}

ClassAccuracyVector per_class_accuracy(const Net& net, const Dataset& ds) {
    return per_class_accuracy_from_logits(dataset_logits(net, ds), ds.labels, ds.num_classes);
}

ClassAccuracyVector robust_per_class(const Net& net, const Dataset& ds, const AttackConfig& cfg) {
    return per_class_accuracy(net, adversarial_set(net, ds, cfg));
}

namespace {

void require_pair(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) throw InvalidArgument(std::string(what) + ": length mismatch");
    if (a.size() < 2) throw InvalidArgument(std::string(what) + ": need at least two entries");
}

// Ties within runs of equal keys: Σ t(t−1)/2.
template <typename Eq>
long long tie_pairs(const std::vector<std::size_t>& order, Eq&& equal) {
    long long ties = 0;
    std::size_t run = 1;
    for (std::size_t k = 1; k <= order.size(); ++k) {
        if (k < order.size() && equal(order[k - 1], order[k])) {
            ++run;
        } else {
            ties += static_cast<long long>(run) * static_cast<long long>(run - 1) / 2;
            run = 1;
        }
    }
    return ties;
}

// Stable merge sort by b, counting inversions (pairs out of order in b).
long long sort_count_swaps(std::vector<std::size_t>& idx, std::span<const double> b) {
    if (idx.size() < 2) return 0;
    std::vector<std::size_t> buf(idx.size());
    long long swaps = 0;
    for (std::size_t width = 1; width < idx.size(); width *= 2) {
        for (std::size_t lo = 0; lo < idx.size(); lo += 2 * width) {
            const std::size_t mid = std::min(lo + width, idx.size());
            const std::size_t hi = std::min(lo + 2 * width, idx.size());
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid && j < hi) {
                if (b[idx[j]] < b[idx[i]]) {
                    swaps += static_cast<long long>(mid - i);
                    buf[k++] = idx[j++];
                } else {
                    buf[k++] = idx[i++];
                }
            }
            while (i < mid) buf[k++] = idx[i++];
            while (j < hi) buf[k++] = idx[j++];
        }
        idx.swap(buf);
    }
    return swaps;
}

}  // namespace

double kendall_tau(std::span<const double> a, std::span<const double> b) {
    require_pair(a, b, "kendall_tau");
    const std::size_t n = a.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
    });
    const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    const long long ties_a = tie_pairs(order, [&](std::size_t i, std::size_t j) { return a[i] == a[j]; });
    const long long ties_ab =
        tie_pairs(order, [&](std::size_t i, std::size_t j) { return a[i] == a[j] && b[i] == b[j]; });
    const long long swaps = sort_count_swaps(order, b);
    const long long ties_b = tie_pairs(order, [&](std::size_t i, std::size_t j) { return b[i] == b[j]; });
    if (ties_a == n0 || ties_b == n0) throw InvalidArgument("kendall_tau: undefined for a constant vector");
    const double numer = static_cast<double>(n0 - ties_a - ties_b + ties_ab - 2 * swaps);
    const double denom = std::sqrt(static_cast<double>(n0 - ties_a) * static_cast<double>(n0 - ties_b));
    return numer / denom;
}

double covariance(std::span<const double> a, std::span<const double> b) {
    require_pair(a, b, "covariance");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / (n - 1);
}

EvalReport evaluate(const Net& net, const Dataset& eval_ds, const AttackConfig& attack, const Dataset* train_ds) {
    EvalReport r;
    r.clean = per_class_accuracy(net, eval_ds);
    r.robust = robust_per_class(net, eval_ds, attack);
    if (train_ds) {
        r.train_robust = robust_per_class(net, *train_ds, attack);
        try {
            r.kendall_train_test = kendall_tau(r.train_robust->values, r.robust.values);
        } catch (const InvalidArgument&) {
            // constant accuracy vector: τ undefined, reported empty
        }
        r.cov_train_test = covariance(r.train_robust->values, r.robust.values);
    }
    return r;
}

namespace {
std::string opt_field(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }
}  // namespace

std::string per_class_csv(const EvalReport& report) {
    std::string out = "class,clean_acc,robust_acc\n";
    for (int j = 0; j < report.clean.num_classes(); ++j)
        out += fmt::format("{},{},{}\n", j, report.clean.values[j], report.robust.values[j]);
    return out;
}

std::string summary_csv(const EvalReport& report) {
    std::string out =
        "avg_clean,worst_clean,avg_robust,worst_robust,kendall_train_test,cov_train_test,"
        "worst_clean_error,worst_robust_error\n";
    out += fmt::format("{},{},{},{},{},{},{},{}\n", report.avg_clean(), report.worst_clean(), report.avg_robust(),
                       report.worst_robust(), opt_field(report.kendall_train_test),
                       opt_field(report.cov_train_test), 1.0 - report.worst_clean(),
                       1.0 - report.worst_robust());
    return out;
}

}  // namespace fairspec
