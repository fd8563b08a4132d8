#include "fairspec/pacbayes.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "fairspec/error.hpp"
#include "fairspec/eval.hpp"
#include "fairspec/parallel.hpp"
#include "fairspec/rng.hpp"

namespace fairspec {

namespace {

void require_positive_norms(const WeightStats<double>& stats, const char* what) {
    for (std::size_t l = 0; l < stats.spectral.size(); ++l)
        if (!(stats.spectral[l] > 0))
            throw InvalidArgument(std::string(what) + ": layer " + std::to_string(l) + " has zero spectral norm");
}

double phi_with_radius(const Net& net, double radius) {
    const int n = net.num_layers();
    const int h = net.max_width();
    if (n < 1 || h < 2) throw InvalidArgument("phi: need n >= 1 and h >= 2");
    if (!(radius >= 0)) throw InvalidArgument("phi: input radius must be >= 0");
    const auto stats = weight_norm_stats(net);
    require_positive_norms(stats, "phi");
    const double nh = static_cast<double>(n) * h;
    return radius * radius * static_cast<double>(n) * n * h * std::log(nh) * stats.spec_product *
           stats.spec_product * stats.fro_spec_ratio_sum;
}

nlohmann::json nan_to_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

double phi(const Net& net, double input_radius) { return phi_with_radius(net, input_radius); }

double phi_robust(const Net& net, double input_radius, double epsilon) {
    if (!(epsilon >= 0)) throw InvalidArgument("phi_robust: epsilon must be >= 0");
    return phi_with_radius(net, input_radius + epsilon);
}

BoundReport bound_value(double conf_spec, const Net& net, const ClassStats& stats, double gamma, double delta,
                        double epsilon, std::optional<double> nu) {
    const int d_y = static_cast<int>(stats.counts.size());
    if (d_y != net.output_dim()) throw DimensionMismatch("bound_value: class stats do not match network outputs");
    if (!(gamma > 0)) throw InvalidArgument("bound_value: gamma must be > 0");
    if (!(delta > 0 && delta < 1)) throw InvalidArgument("bound_value: delta must lie in (0, 1)");
    if (!(conf_spec >= 0)) throw InvalidArgument("bound_value: confusion spectral norm must be >= 0");
    if (!(epsilon >= 0)) throw InvalidArgument("bound_value: epsilon must be >= 0");
    const double nu_value = nu.value_or(std::sqrt(static_cast<double>(d_y)));
    if (!(nu_value >= 1.0 && nu_value <= std::sqrt(static_cast<double>(d_y)) + 1e-12))
        throw InvalidArgument("bound_value: nu must lie in [1, sqrt(d_y)]");
    if (stats.m_min <= 8 * d_y)
        throw InfeasibleBound("bound_value: m_min = " + std::to_string(stats.m_min) + " must exceed 8 d_y = " +
                              std::to_string(8 * d_y));

    BoundReport r;
    r.conf_spec = conf_spec;
    r.num_classes = d_y;
    r.m_min = stats.m_min;
    r.gamma = gamma;
    r.delta = delta;
    r.epsilon = epsilon;
    r.input_radius = stats.input_radius;
    r.n = net.num_layers();
    r.h = net.max_width();
    r.nu = nu_value;

    r.phi_prime = phi_robust(net, stats.input_radius, epsilon);
    r.spectral_term = nu_value * conf_spec;
    const double scale = nu_value * nu_value * d_y / ((stats.m_min - 8.0 * d_y) * gamma * gamma);
    const double log_term = std::log(static_cast<double>(r.n) * stats.m_min / delta);
    r.complexity_term = std::sqrt(scale * (r.phi_prime + log_term));
    r.total = r.spectral_term + r.complexity_term;
    return r;
}

nlohmann::json BoundReport::to_json() const {
    return {
        {"spectral_term", spectral_term},
        {"phi_prime", phi_prime},
        {"complexity_term", complexity_term},
        {"complexity_term_note", "scale, not certificate (O(.) constant taken as 1)"},
        {"total", total},
        {"inputs",
         {{"conf_spec", conf_spec},
          {"d_y", num_classes},
          {"m_min", m_min},
          {"gamma", gamma},
          {"delta", delta},
          {"epsilon", epsilon},
          {"B", input_radius},
          {"n", n},
          {"h", h},
          {"nu", nu}}},
    };
}

double sigma_star(const Net& net, double gamma, double input_radius) {
    if (!(gamma > 0)) throw InvalidArgument("sigma_star: gamma must be > 0");
    if (!(input_radius > 0)) throw InvalidArgument("sigma_star: input radius must be > 0");
    const auto stats = weight_norm_stats(net);
    require_positive_norms(stats, "sigma_star");
    const double n = net.num_layers();
    const double h = net.max_width();
    const double norm_factor = std::pow(stats.spec_product, (n - 1.0) / n);
    return gamma / (114.0 * n * input_radius * std::sqrt(h * std::log(4.0 * n * h)) * norm_factor);
}

double perturbation_bound(const std::vector<double>& weight_spectral, const std::vector<double>& noise_spectral,
                          double input_norm) {
    if (weight_spectral.size() != noise_spectral.size())
        throw DimensionMismatch("perturbation_bound: layer count mismatch");
    double product = 1.0;
    double relative = 0.0;
    for (std::size_t l = 0; l < weight_spectral.size(); ++l) {
        product *= weight_spectral[l];
        relative += noise_spectral[l] / weight_spectral[l];
    }
    return std::numbers::e * input_norm * product * relative;
}

PerturbationCheck check_perturbation_bound(const Net& net, const MatrixXd& xs, double sigma, std::uint64_t seed,
                                           int trials) {
    if (xs.cols() != net.input_dim()) throw DimensionMismatch("check_perturbation_bound: xs has wrong width");
    const auto stats = weight_norm_stats(net);
    require_positive_norms(stats, "check_perturbation_bound");
    const int n = net.num_layers();

    const MatrixXd base = dataset_logits(net, Dataset{xs, std::vector<int>(xs.rows(), 0), net.output_dim()});

    PerturbationCheck check;
    check.trials = trials;
    check.samples = static_cast<int>(xs.rows());
    check.trial_max_ratio.assign(trials, 0.0);
    std::vector<int> violations(trials, 0);
    std::vector<int> rescaled(trials, 0);

    parallel_for(trials, [&](int t) {
        auto p = perturb(net, sigma, derive_seed(seed, {static_cast<std::uint64_t>(t)}));
        std::vector<MatrixXd> layers;
        for (int l = 0; l < n; ++l) {
            const double cap = stats.spectral[l] / n;
            if (p.noise_spectral[l] > cap) {
                p.noise[l] *= cap / p.noise_spectral[l];
                p.noise_spectral[l] = spectral_norm(p.noise[l]);
                ++rescaled[t];
            }
            layers.push_back(net.layers()[l] + p.noise[l]);
        }
        const Net moved(std::move(layers), net.seed());
        double worst = 0;
        for (Eigen::Index q = 0; q < xs.rows(); ++q) {
            const VectorXd x = xs.row(q).transpose();
            const double change = (predict_logits(moved, x) - base.row(q).transpose()).norm();
            const double bound = perturbation_bound(stats.spectral, p.noise_spectral, x.norm());
            if (change > bound + 1e-9) ++violations[t];
            const double ratio = bound > 0 ? change / bound : (change > 0 ? std::numeric_limits<double>::infinity() : 0.0);
            worst = std::max(worst, ratio);
        }
        check.trial_max_ratio[t] = worst;
    });
    for (int t = 0; t < trials; ++t) {
        check.violations += violations[t];
        check.rescaled_layers += rescaled[t];
        check.max_ratio = std::max(check.max_ratio, check.trial_max_ratio[t]);
    }
    return check;
}

std::vector<double> SharpnessOptions::default_grid() {
    std::vector<double> grid;
    for (int k = 1; k <= 100; ++k) grid.push_back(k / 100.0);
    return grid;
}

namespace {

double overall_accuracy(const Net& net, const Dataset& ds) {
    const auto pred = predictions_from_logits(dataset_logits(net, ds));
    int correct = 0;
    for (int q = 0; q < ds.size(); ++q) correct += pred[q] == ds.labels[q];
    return static_cast<double>(correct) / ds.size();
}

double flavored_accuracy(const Net& net, const Dataset& ds, AccuracyFlavor flavor, const AttackConfig& attack) {
    if (flavor == AccuracyFlavor::clean) return overall_accuracy(net, ds);
    return overall_accuracy(net, adversarial_set(net, ds, attack));
}

}  // namespace

double perturbed_accuracy(const Net& net, const Dataset& ds, double sigma, std::uint64_t sample_seed,
                          AccuracyFlavor flavor, const AttackConfig& attack) {
    return flavored_accuracy(perturb(net, sigma, sample_seed).net, ds, flavor, attack);
}

SharpnessReport sharpness_variance(const Net& net, const Dataset& ds, const SharpnessOptions& opt) {
    if (opt.grid.empty()) throw InvalidArgument("sharpness_variance: empty grid");
    for (std::size_t k = 0; k < opt.grid.size(); ++k) {
        if (!(opt.grid[k] >= 0)) throw InvalidArgument("sharpness_variance: grid values must be >= 0");
        if (k > 0 && opt.grid[k] < opt.grid[k - 1]) throw InvalidArgument("sharpness_variance: grid must be ascending");
    }
    if (opt.n_samples < 1) throw InvalidArgument("sharpness_variance: n_samples must be >= 1");
    if (ds.size() == 0) throw InvalidArgument("sharpness_variance: empty dataset");
    if (opt.flavor == AccuracyFlavor::robust) opt.attack.validate();

    SharpnessReport r;
    r.grid = opt.grid;
    r.n_samples = opt.n_samples;
    r.drop_threshold = opt.drop_threshold;
    r.flavor = opt.flavor == AccuracyFlavor::clean ? "clean" : "robust";
    r.worst_drop.assign(opt.grid.size(), std::numeric_limits<double>::quiet_NaN());
    r.samples_evaluated.assign(opt.grid.size(), 0);
    r.base_accuracy = flavored_accuracy(net, ds, opt.flavor, opt.attack);

    // Scan from the largest σ²; the first feasible value is the answer.
    for (std::size_t k = opt.grid.size(); k-- > 0;) {
        const double sigma = std::sqrt(opt.grid[k]);
        double worst = -std::numeric_limits<double>::infinity();
        bool feasible = true;
        for (int s = 0; s < opt.n_samples; ++s) {
            const double acc = perturbed_accuracy(net, ds, sigma, derive_seed(opt.seed, {static_cast<std::uint64_t>(s)}),
                                                  opt.flavor, opt.attack);
            worst = std::max(worst, r.base_accuracy - acc);
            r.samples_evaluated[k] = s + 1;
            if (r.base_accuracy - acc > opt.drop_threshold) {
                feasible = false;
                break;
            }
        }
        r.worst_drop[k] = worst;
        spdlog::debug("sharpness: sigma2={} worst_drop={} feasible={}", opt.grid[k], worst, feasible);
        if (feasible) {
            r.sigma2_star = opt.grid[k];
            break;
        }
    }
    return r;
}

nlohmann::json SharpnessReport::to_json() const {
    nlohmann::json drops = nlohmann::json::array();
    for (double d : worst_drop) drops.push_back(nan_to_null(d));
    return {
        {"sigma2_star", sigma2_star ? nlohmann::json(*sigma2_star) : nlohmann::json(nullptr)},
        {"grid", grid},
        {"worst_drop", drops},
        {"samples_evaluated", samples_evaluated},
        {"n_samples", n_samples},
        {"drop_threshold", drop_threshold},
        {"base_accuracy", base_accuracy},
        {"flavor", flavor},
    };
}

std::vector<std::string> nu_generators() { return {"uniform", "uniform_colscaled", "sparse"}; }

MatrixXd generate_confusion(const std::string& generator, int d_y, std::uint64_t seed) {
    if (d_y < 2) throw InvalidArgument("generate_confusion: need d_y >= 2");
    Rng rng(seed);
    MatrixXd c = MatrixXd::Zero(d_y, d_y);
    if (generator == "uniform" || generator == "sparse") {
        const bool sparse = generator == "sparse";
        for (int j = 0; j < d_y; ++j)
            for (int i = 0; i < d_y; ++i) {
                if (i == j) continue;
                const double keep = sparse ? rng.uniform() : 0.0;
                const double v = rng.uniform();
                if (keep < 0.3 || !sparse) c(i, j) = v;
            }
        const double max_col = l1_matrix_norm(c);
        if (max_col > 0) c *= rng.uniform() / max_col;
    } else if (generator == "uniform_colscaled") {
        for (int j = 0; j < d_y; ++j) {
            for (int i = 0; i < d_y; ++i)
                if (i != j) c(i, j) = rng.uniform();
            const double sum = c.col(j).sum();
            const double rate = rng.uniform();
            if (sum > 0) c.col(j) *= rate / sum;
        }
    } else {
        throw InvalidArgument("unknown nu generator '" + generator + "'");
    }
    return c;
}

NuReport nu_study(int d_y, int trials, std::uint64_t seed, const std::string& generator, int bins) {
    if (trials < 1) throw InvalidArgument("nu_study: trials must be >= 1");
    if (bins < 1) throw InvalidArgument("nu_study: bins must be >= 1");
    generate_confusion(generator, d_y, seed);  // validates the generator name and d_y

    enum Status : char { ok, zero, failed };
    std::vector<double> nus(trials, 0.0);
    std::vector<char> status(trials, ok);
    parallel_for(trials, [&](int t) {
        const MatrixXd c = generate_confusion(generator, d_y, derive_seed(seed, {static_cast<std::uint64_t>(t)}));
        const double l1 = l1_matrix_norm(c);
        if (l1 == 0) {
            status[t] = zero;
            return;
        }
        try {
            nus[t] = l1 / spectral_norm(c);
        } catch (const NonConvergence&) {
            status[t] = failed;
        }
    });

    const double lo = 1.0 / std::sqrt(static_cast<double>(d_y)) - 1e-9;
    const double hi = std::sqrt(static_cast<double>(d_y)) + 1e-9;
    NuReport r;
    r.trials = trials;
    r.num_classes = d_y;
    r.generator = generator;
    r.seed = seed;
    r.min_nu = std::numeric_limits<double>::infinity();
    r.max_nu = -std::numeric_limits<double>::infinity();
    const double top = std::sqrt(static_cast<double>(d_y));
    for (int b = 0; b <= bins; ++b) r.bin_edges.push_back(top * b / bins);
    r.histogram.assign(bins, 0);
    double sum = 0;
    int used = 0;
    for (int t = 0; t < trials; ++t) {
        if (status[t] == zero) {
            ++r.skipped_zero;
            continue;
        }
        if (status[t] == failed) {
            ++r.failed;
            continue;
        }
        const double nu = nus[t];
        if (nu < lo || nu > hi)
            throw Error(fmt::format("nu_study: trial {} gave nu = {} outside [1/sqrt(d_y), sqrt(d_y)]", t, nu));
        sum += nu;
        ++used;
        r.min_nu = std::min(r.min_nu, nu);
        r.max_nu = std::max(r.max_nu, nu);
        const int bin = std::clamp(static_cast<int>(nu / top * bins), 0, bins - 1);
        ++r.histogram[bin];
    }
    r.mean_nu = used > 0 ? sum / used : std::numeric_limits<double>::quiet_NaN();
    return r;
}

nlohmann::json NuReport::to_json() const {
    return {
        {"trials", trials},
        {"d_y", num_classes},
        {"generator", generator},
        {"seed", seed},
        {"mean_nu", nan_to_null(mean_nu)},
        {"max_nu", nan_to_null(max_nu)},
        {"min_nu", nan_to_null(min_nu)},
        {"skipped_zero", skipped_zero},
        {"failed", failed},
        {"bin_edges", bin_edges},
        {"histogram", histogram},
    };
}

std::string NuReport::histogram_csv() const {
    std::string out = "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < histogram.size(); ++b)
        out += fmt::format("{},{},{}\n", bin_edges[b], bin_edges[b + 1], histogram[b]);
    return out;
}

}  // namespace fairspec
