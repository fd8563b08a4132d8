#pragma once

// Computable forms of the worst-class robust generalization bound and the
// numerical studies around it.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairspec/attack.hpp"
#include "fairspec/data.hpp"
#include "fairspec/network.hpp"

namespace fairspec {

/// Φ(f) = B² n² h ln(nh) Π‖W_l‖₂² Σ ‖W_l‖_F²/‖W_l‖₂².
double phi(const Net& net, double input_radius);
/// Φ′: Φ with B replaced by B + ε.
double phi_robust(const Net& net, double input_radius, double epsilon);

struct BoundReport {
    double spectral_term = 0;    // ν‖C_{S',γ}‖₂
    double phi_prime = 0;
    double complexity_term = 0;  // scale only: the O(·) constant is taken as 1
    double total = 0;

    // inputs
    double conf_spec = 0;
    int num_classes = 0;
    int m_min = 0;
    double gamma = 0;
    double delta = 0;
    double epsilon = 0;
    double input_radius = 0;
    int n = 0;
    int h = 0;
    double nu = 0;

    nlohmann::json to_json() const;
};

/// total = ν·conf_spec + √( ν² d_y / ((m_min − 8 d_y) γ²) · (Φ′ + ln(n m_min / δ)) ).
/// Throws InfeasibleBound when m_min ≤ 8 d_y and InvalidArgument for γ ≤ 0,
/// δ ∉ (0, 1) or ν ∉ [1, √d_y].
BoundReport bound_value(double conf_spec, const Net& net, const ClassStats& stats, double gamma, double delta,
                        double epsilon, std::optional<double> nu = std::nullopt);

/// Largest admissible prior scale: γ / (114 n B √(h ln(4nh)) Π‖W_l‖₂^{(n−1)/n}).
double sigma_star(const Net& net, double gamma, double input_radius);

/// Output-change bound under weight noise: e ‖x‖ Π‖W_l‖₂ Σ ‖U_l‖₂/‖W_l‖₂,
/// valid while every ‖U_l‖₂ ≤ ‖W_l‖₂ / n.
double perturbation_bound(const std::vector<double>& weight_spectral, const std::vector<double>& noise_spectral,
                          double input_norm);

struct PerturbationCheck {
    int trials = 0;
    int samples = 0;
    int violations = 0;
    int rescaled_layers = 0;  // noise draws shrunk to meet ‖U_l‖₂ ≤ ‖W_l‖₂/n
    double max_ratio = 0;     // max over trials and x of measured / bound
    std::vector<double> trial_max_ratio;
};

/// Draws `trials` perturbations with N(0, σ²) entries, shrinking any layer
/// whose noise exceeds ‖W_l‖₂/n onto that radius, and compares the measured
/// output change on every row of xs with perturbation_bound.
PerturbationCheck check_perturbation_bound(const Net& net, const MatrixXd& xs, double sigma, std::uint64_t seed,
                                           int trials);

enum class AccuracyFlavor { clean, robust };

struct SharpnessOptions {
    std::vector<double> grid;  // σ² values, ascending
    int n_samples = 50;
    double drop_threshold = 0.05;
    std::uint64_t seed = 0;
    AccuracyFlavor flavor = AccuracyFlavor::robust;
    AttackConfig attack;  // used when flavor == robust

    /// {0.01, 0.02, …, 1.00}
    static std::vector<double> default_grid();
};

struct SharpnessReport {
    std::optional<double> sigma2_star;
    std::vector<double> grid;
    std::vector<double> worst_drop;       // per grid point, over the samples evaluated
    std::vector<int> samples_evaluated;   // < n_samples when a violation stopped the scan early
    int n_samples = 0;
    double drop_threshold = 0;
    double base_accuracy = 0;
    std::string flavor;

    nlohmann::json to_json() const;
};

/// Largest σ² in the grid for which every one of n_samples perturbed nets
/// keeps the training-accuracy drop within the threshold. Sample s uses the
/// same standard-normal draw at every σ², scaled by σ.
SharpnessReport sharpness_variance(const Net& net, const Dataset& ds, const SharpnessOptions& options);

/// Training accuracy of the perturbed net for sample s at noise σ.
double perturbed_accuracy(const Net& net, const Dataset& ds, double sigma, std::uint64_t sample_seed,
                          AccuracyFlavor flavor, const AttackConfig& attack);

struct NuReport {
    int trials = 0;
    int num_classes = 0;
    int skipped_zero = 0;
    int failed = 0;  // power iteration did not converge
    double mean_nu = 0;
    double max_nu = 0;
    double min_nu = 0;
    std::vector<double> bin_edges;  // on [0, √d_y]
    std::vector<long long> histogram;
    std::string generator;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    std::string histogram_csv() const;
};

/// Built-in random confusion-matrix generators (zero diagonal, nonnegative):
///   "uniform"           off-diagonal U(0,1), rescaled so column sums ≤ 1 (default)
///   "uniform_colscaled" off-diagonal U(0,1), column j renormalized to sum r_j ~ U(0,1)
///   "sparse"            each off-diagonal entry nonzero with probability 0.3
std::vector<std::string> nu_generators();
MatrixXd generate_confusion(const std::string& generator, int num_classes, std::uint64_t seed);

/// ν = ‖C‖₁ / ‖C‖₂ over `trials` generated matrices.
NuReport nu_study(int num_classes, int trials, std::uint64_t seed, const std::string& generator = "uniform",
                  int bins = 50);

}  // namespace fairspec
