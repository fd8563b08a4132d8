#pragma once

// First-order white-box adversaries on the cross-entropy loss: FGSM and
// PGD in ℓ∞ and ℓ₂ balls, plus helpers shared with training.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "fairspec/data.hpp"
#include "fairspec/network.hpp"

namespace fairspec {

enum class Norm { linf, l2 };

std::string to_string(Norm norm);
Norm norm_from_string(const std::string& s);

struct AttackConfig {
    Norm norm = Norm::linf;
    double epsilon = 0.0;
    double step_size = 1.0;
    int iters = 1;
    bool random_start = false;
    std::uint64_t seed = 0;
    std::optional<std::pair<double, double>> clamp;  // box [lo, hi]
    /// Debug: throw if any PGD iterate leaves the ε-ball (+1e-12).
    bool check_projection = false;

    void validate() const;
};

/// Slack allowed on ‖x' − x‖_p ≤ ε.
inline constexpr double kBallSlack = 1e-12;

VectorXd softmax(const VectorXd& logits);
/// −log softmax(z)[y], computed with log-sum-exp.
double cross_entropy(const VectorXd& logits, int y);
/// ∂CE/∂z = softmax(z) − onehot(y).
VectorXd cross_entropy_grad(const VectorXd& logits, int y);

struct LossAndInputGrad {
    double loss = 0;
    VectorXd grad;
};

LossAndInputGrad loss_and_input_grad(const Net& net, const VectorXd& x, int y);

/// ‖v‖_∞ or ‖v‖₂.
double norm_of(const VectorXd& v, Norm norm);

struct FgsmResult {
    VectorXd x;
    bool zero_gradient = false;  // ℓ₂ mode with ∇ = 0: x returned unchanged
};

FgsmResult fgsm(const Net& net, const VectorXd& x, int y, double epsilon, Norm norm,
                const std::optional<std::pair<double, double>>& clamp = std::nullopt);

/// PGD from cfg.seed; returns the iterate with the highest loss seen
/// (the start point included).
VectorXd pgd(const Net& net, const VectorXd& x, int y, const AttackConfig& cfg);

/// PGD on ds rows `indices`; sample q uses seed derive_seed(stream_seed, {q}).
/// Rows of the result follow `indices`.
Dataset adversarial_examples(const Net& net, const Dataset& ds, std::span<const int> indices,
                             const AttackConfig& cfg, std::uint64_t stream_seed);

/// PGD over the whole dataset, labels preserved, per-sample seeds from cfg.seed.
Dataset adversarial_set(const Net& net, const Dataset& ds, const AttackConfig& cfg);

}  // namespace fairspec
