#include "fairspec/attack.hpp"

#include <cmath>
#include <numeric>

#include "fairspec/error.hpp"
#include "fairspec/parallel.hpp"
#include "fairspec/rng.hpp"

namespace fairspec {

std::string to_string(Norm norm) { return norm == Norm::linf ? "linf" : "l2"; }

Norm norm_from_string(const std::string& s) {
    if (s == "linf") return Norm::linf;
    if (s == "l2") return Norm::l2;
    throw InvalidArgument("unknown norm '" + s + "' (expected linf or l2)");
}

void AttackConfig::validate() const {
    if (!(epsilon >= 0)) throw InvalidArgument("attack: epsilon must be >= 0");
    if (iters < 1) throw InvalidArgument("attack: iters must be >= 1");
    if (!(step_size > 0)) throw InvalidArgument("attack: step_size must be > 0");
    if (clamp && !(clamp->first <= clamp->second)) throw InvalidArgument("attack: clamp needs lo <= hi");
}

VectorXd softmax(const VectorXd& logits) {
    const double top = logits.maxCoeff();
    VectorXd e = (logits.array() - top).exp();
    return e / e.sum();
}

double cross_entropy(const VectorXd& logits, int y) {
    const double top = logits.maxCoeff();
    const double lse = top + std::log((logits.array() - top).exp().sum());
    return lse - logits[y];
}

VectorXd cross_entropy_grad(const VectorXd& logits, int y) {
    VectorXd g = softmax(logits);
    g[y] -= 1.0;
    return g;
}

LossAndInputGrad loss_and_input_grad(const Net& net, const VectorXd& x, int y) {
    const auto trace = forward(net, x);
    const VectorXd& z = trace.logits();
    auto g = backward(net, trace, cross_entropy_grad(z, y));
    return {cross_entropy(z, y), std::move(g.input_grad)};
}

double norm_of(const VectorXd& v, Norm norm) {
    if (v.size() == 0) return 0.0;
    return norm == Norm::linf ? v.cwiseAbs().maxCoeff() : v.norm();
}

namespace {

void apply_clamp(VectorXd& x, const std::optional<std::pair<double, double>>& clamp) {
    if (clamp) x = x.cwiseMax(clamp->first).cwiseMin(clamp->second);
}

// Clamping a point that starts outside the box can move it farther than ε.
void require_inside(const VectorXd& x, const std::optional<std::pair<double, double>>& clamp) {
    if (clamp && (x.minCoeff() < clamp->first || x.maxCoeff() > clamp->second))
        throw InvalidArgument("attack: input lies outside the clamp box");
}

VectorXd sign_of(const VectorXd& g) {
    return g.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

void project_ball(VectorXd& delta, double epsilon, Norm norm) {
    if (norm == Norm::linf) {
        delta = delta.cwiseMax(-epsilon).cwiseMin(epsilon);
    } else {
        const double n = delta.norm();
        if (n > epsilon) delta *= epsilon / n;
    }
}

VectorXd random_start_offset(Rng& rng, Eigen::Index d, double epsilon, Norm norm) {
    VectorXd delta(d);
    if (norm == Norm::linf) {
        for (Eigen::Index i = 0; i < d; ++i) delta[i] = rng.uniform(-epsilon, epsilon);
        return delta;
    }
    for (Eigen::Index i = 0; i < d; ++i) delta[i] = rng.normal();
    const double n = delta.norm();
    if (n == 0) return VectorXd::Zero(d);
    const double radius = epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
    return delta * (radius / n);
}

}  // namespace

FgsmResult fgsm(const Net& net, const VectorXd& x, int y, double epsilon, Norm norm,
                const std::optional<std::pair<double, double>>& clamp) {
    if (!(epsilon >= 0)) throw InvalidArgument("fgsm: epsilon must be >= 0");
    FgsmResult r{x, false};
    if (epsilon == 0) return r;
    require_inside(x, clamp);
    const auto lg = loss_and_input_grad(net, x, y);
    if (norm == Norm::linf) {
        r.x = x + epsilon * sign_of(lg.grad);
    } else {
        const double n = lg.grad.norm();
        if (n == 0) {
            r.zero_gradient = true;
            return r;
        }
        r.x = x + (epsilon / n) * lg.grad;
    }
    apply_clamp(r.x, clamp);
    return r;
}

VectorXd pgd(const Net& net, const VectorXd& x, int y, const AttackConfig& cfg) {
    cfg.validate();
    if (cfg.epsilon == 0) return x;
    require_inside(x, cfg.clamp);

    VectorXd current = x;
    if (cfg.random_start) {
        Rng rng(cfg.seed);
        current = x + random_start_offset(rng, x.size(), cfg.epsilon, cfg.norm);
        apply_clamp(current, cfg.clamp);
    }

    VectorXd best = current;
    double best_loss = -std::numeric_limits<double>::infinity();
    for (int t = 0;; ++t) {
        const auto lg = loss_and_input_grad(net, current, y);
        if (lg.loss > best_loss) {
            best_loss = lg.loss;
            best = current;
        }
        if (t == cfg.iters) break;

        VectorXd step;
        if (cfg.norm == Norm::linf) {
            step = cfg.step_size * sign_of(lg.grad);
        } else {
            const double n = lg.grad.norm();
            if (n == 0) break;
            step = (cfg.step_size / n) * lg.grad;
        }
        VectorXd delta = current + step - x;
        project_ball(delta, cfg.epsilon, cfg.norm);
        current = x + delta;
        apply_clamp(current, cfg.clamp);
        if (cfg.check_projection && norm_of(current - x, cfg.norm) > cfg.epsilon + kBallSlack)
            throw Error("pgd: iterate left the epsilon ball");
    }
    return best;
}

Dataset adversarial_examples(const Net& net, const Dataset& ds, std::span<const int> indices,
                             const AttackConfig& cfg, std::uint64_t stream_seed) {
    cfg.validate();
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), ds.dim());
    out.labels.resize(indices.size());
    parallel_for(static_cast<int>(indices.size()), [&](int k) {
        const int q = indices[k];
        AttackConfig sample_cfg = cfg;
        sample_cfg.seed = derive_seed(stream_seed, {static_cast<std::uint64_t>(q)});
        const VectorXd x = ds.sample(q);
        out.features.row(k) = pgd(net, x, ds.labels[q], sample_cfg).transpose();
        out.labels[k] = ds.labels[q];
    });
    return out;
}

Dataset adversarial_set(const Net& net, const Dataset& ds, const AttackConfig& cfg) {
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return adversarial_examples(net, ds, all, cfg, cfg.seed);
}

}  // namespace fairspec
