#pragma once

// Confusion-matrix constructions, the differentiable surrogate matrix and
// its regularizer gradient, and the adversarial training loop that uses
// them.
//
// Convention: entry (i, j) of every confusion-type matrix is the fraction
// of class-j samples attributed to class i (columns are true classes), and
// the diagonal is zero.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairspec/attack.hpp"
#include "fairspec/data.hpp"
#include "fairspec/eval.hpp"
#include "fairspec/network.hpp"

namespace fairspec {

struct ConfusionMatrix {
    MatrixXd m;

    int num_classes() const noexcept { return static_cast<int>(m.rows()); }
    /// Zero diagonal, entries in [0, 1], column sums ≤ 1 (+1e-12).
    void validate() const;
};

/// Policy for classes with no samples in the evaluated set. Whole datasets
/// require every class; training minibatches may legitimately miss some.
enum class MissingClasses { reject, allow };

ConfusionMatrix confusion_hard_from_logits(const MatrixXd& logits, std::span<const int> labels, int num_classes,
                                           MissingClasses policy = MissingClasses::reject);
ConfusionMatrix confusion_hard(const Net& net, const Dataset& ds);

/// argmax_{i ≠ y} z[i], smallest index on ties.
int strongest_competitor(const VectorXd& logits, int y);

ConfusionMatrix confusion_margin_from_logits(const MatrixXd& logits, std::span<const int> labels,
                                             int num_classes, double gamma,
                                             MissingClasses policy = MissingClasses::reject);
ConfusionMatrix confusion_margin(const Net& net, const Dataset& ds, double gamma);

/// Maximum column sum, i.e. the worst per-class error rate.
double worst_class_error(const ConfusionMatrix& c);

/// CE(softmax(z + γ(1 − onehot(y))), y).
double margin_shifted_ce(const VectorXd& logits, int y, double gamma);

struct SurrogateMatrix {
    MatrixXd values;
    std::vector<std::vector<int>> membership;  // cell (i, j) at i * d_y + j
    std::vector<int> class_counts;             // m_j of the set the matrix was built on

    int num_classes() const noexcept { return static_cast<int>(values.rows()); }
    const std::vector<int>& members(int i, int j) const { return membership[i * num_classes() + j]; }
};

/// Cell (i, j) averages the margin-shifted CE over S'_ij, the class-j samples
/// within margin γ of their strongest competitor i, normalized by m_j.
SurrogateMatrix surrogate_matrix(const Net& net, const Dataset& adv_ds, double gamma,
                                 MissingClasses policy = MissingClasses::reject);

/// Σ_{i≠j} spec_grad_ij · L_ij with the cell membership held fixed.
double surrogate_objective(const Net& net, const Dataset& adv_ds, const SurrogateMatrix& surrogate, double gamma,
                           const MatrixXd& spec_grad);

/// Gradient of the confusional spectral regularizer: for every member sample
/// of cell (i, j), its margin-shifted CE gradient weighted by
/// spec_grad_ij / m_j (the sign factor is the constant +1).
GradBundle<double> psi_grad(const Net& net, const Dataset& adv_ds, const SurrogateMatrix& surrogate,
                            double gamma, const MatrixXd& spec_grad);
GradBundle<double> psi_grad(const Net& net, const Dataset& adv_ds, double gamma, const MatrixXd& spec_grad);

enum class RegMode { hybrid, minibatch };
std::string to_string(RegMode mode);
RegMode reg_mode_from_string(const std::string& s);

struct RegConfig {
    double alpha = 0.3;
    double gamma = 0.0;
    RegMode mode = RegMode::hybrid;
    /// Hybrid only: build the epoch confusion matrix from the adversarial
    /// examples produced during the previous epoch instead of a fresh pass.
    bool stale_adversarial = false;

    void validate() const;
};

struct TrainConfig {
    int epochs = 1;
    int batch_size = 128;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<std::pair<int, double>> lr_drops;  // (epoch, factor), applied from that epoch on
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at(int epoch) const;
};

/// Fine-tuning defaults: 2 epochs, lr 0.01, no drops.
TrainConfig finetune_defaults();

struct EpochRecord {
    int epoch = 0;
    double train_ce = 0;         // mean adversarial CE over the epoch's batches
    double reg_value = 0;        // mean Σ g_ij L_ij over batches where the regularizer ran
    double spec_norm_conf = 0;   // ‖C_{S',γ}‖₂ on the training set after the epoch
    double worst_class_conf = 0; // ‖C_{S',γ}‖₁ on the same matrix
    int reg_skipped = 0;         // refreshes skipped for a degenerate spectrum
    ClassAccuracyVector train_clean, train_robust;
    std::optional<ClassAccuracyVector> test_clean, test_robust;
};

struct TrainHistory {
    int num_classes = 0;
    std::vector<EpochRecord> epochs;

    /// epoch,train_ce,reg_value,spec_norm_conf, per-class clean/robust
    /// accuracy columns, worst-class columns.
    std::string to_csv() const;
};

struct TrainResult {
    Net net;
    TrainHistory history;
};

struct TrainInputs {
    const Dataset& train;
    const Dataset* test = nullptr;
    AttackConfig attack;
    /// Adversary used for history evaluation; defaults to `attack`.
    std::optional<AttackConfig> eval_attack;
    /// Called with every confusion matrix the loop builds.
    std::function<void(const ConfusionMatrix&)> on_confusion;
};

/// Adversarial training with the confusional spectral regularizer
/// (alpha = 0 gives plain PGD adversarial training).
TrainResult train(Net net, const TrainInputs& inputs, const RegConfig& reg, const TrainConfig& cfg);

/// Same loop, intended for a pretrained net (see finetune_defaults()).
TrainResult finetune(Net net, const TrainInputs& inputs, const RegConfig& reg, const TrainConfig& cfg);

}  // namespace fairspec
