#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairspec/attack.hpp"
#include "fairspec/data.hpp"
#include "fairspec/network.hpp"

namespace fairspec {

struct ClassAccuracyVector {
    std::vector<double> values;  // one entry per class, each in [0, 1]

    int num_classes() const noexcept { return static_cast<int>(values.size()); }
    double worst() const;
    double mean() const;
};

/// Logits for every row of ds (m × d_y).
MatrixXd dataset_logits(const Net& net, const Dataset& ds);

/// Argmax predictions with the smallest index winning ties.
std::vector<int> predictions_from_logits(const MatrixXd& logits);

ClassAccuracyVector per_class_accuracy_from_logits(const MatrixXd& logits, std::span<const int> labels,
                                                   int num_classes);
ClassAccuracyVector per_class_accuracy(const Net& net, const Dataset& ds);
ClassAccuracyVector robust_per_class(const Net& net, const Dataset& ds, const AttackConfig& cfg);

/// Kendall τ-b (tie-adjusted), O(n log n).
double kendall_tau(std::span<const double> a, std::span<const double> b);
/// Sample covariance with the n − 1 denominator.
double covariance(std::span<const double> a, std::span<const double> b);

struct EvalReport {
    ClassAccuracyVector clean;
    ClassAccuracyVector robust;
    /// Train-set robust accuracy per class, when a training set was supplied.
    std::optional<ClassAccuracyVector> train_robust;
    std::optional<double> kendall_train_test;
    std::optional<double> cov_train_test;

    double avg_clean() const { return clean.mean(); }
    double worst_clean() const { return clean.worst(); }
    double avg_robust() const { return robust.mean(); }
    double worst_robust() const { return robust.worst(); }
};

EvalReport evaluate(const Net& net, const Dataset& eval_ds, const AttackConfig& attack,
                    const Dataset* train_ds = nullptr);

/// class,clean_acc,robust_acc
std::string per_class_csv(const EvalReport& report);
/// avg_clean,worst_clean,avg_robust,worst_robust,kendall_train_test,cov_train_test
/// followed by the matching worst-class errors.
std::string summary_csv(const EvalReport& report);

}  // namespace fairspec
