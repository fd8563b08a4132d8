#include "fairspec/fairness.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>

#include "fairspec/error.hpp"
#include "fairspec/parallel.hpp"
#include "fairspec/rng.hpp"

namespace fairspec {

void ConfusionMatrix::validate() const {
    if (m.rows() != m.cols()) throw DimensionMismatch("ConfusionMatrix: not square");
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (m(i, i) != 0.0) throw InvalidArgument("ConfusionMatrix: nonzero diagonal");
    }
    if ((m.array() < 0.0).any() || (m.array() > 1.0).any())
        throw InvalidArgument("ConfusionMatrix: entry outside [0, 1]");
    if (m.size() > 0 && m.colwise().sum().maxCoeff() > 1.0 + 1e-12)
        throw InvalidArgument("ConfusionMatrix: column sum exceeds 1");
}

namespace {

std::vector<int> counts_for(std::span<const int> labels, int num_classes, MissingClasses policy) {
    if (policy == MissingClasses::reject) return class_counts_checked(labels, num_classes);
    std::vector<int> counts(num_classes, 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw InvalidArgument("label " + std::to_string(y) + " out of range");
        ++counts[y];
    }
    return counts;
}

// Per sample: its strongest competitor i when f[y] ≤ γ + f[i], else -1.
std::vector<int> margin_cells(const MatrixXd& logits, std::span<const int> labels, double gamma) {
    std::vector<int> cell(labels.size(), -1);
    for (std::size_t q = 0; q < labels.size(); ++q) {
        const VectorXd z = logits.row(static_cast<Eigen::Index>(q)).transpose();
        const int y = labels[q];
        const int i = strongest_competitor(z, y);
        if (z[y] <= gamma + z[i]) cell[q] = i;
    }
    return cell;
}

}  // namespace

ConfusionMatrix confusion_hard_from_logits(const MatrixXd& logits, std::span<const int> labels, int num_classes,
                                           MissingClasses policy) {
    if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || logits.cols() != num_classes)
        throw DimensionMismatch("confusion_hard: logits shape mismatch");
    const auto counts = counts_for(labels, num_classes, policy);
    MatrixXd hits = MatrixXd::Zero(num_classes, num_classes);
    for (std::size_t q = 0; q < labels.size(); ++q) {
        const int pred = argmax(logits.row(static_cast<Eigen::Index>(q)));
        if (pred != labels[q]) hits(pred, labels[q]) += 1.0;
    }
    for (int j = 0; j < num_classes; ++j)
        if (counts[j] > 0) hits.col(j) /= counts[j];
    return {hits};
}

ConfusionMatrix confusion_hard(const Net& net, const Dataset& ds) {
    return confusion_hard_from_logits(dataset_logits(net, ds), ds.labels, ds.num_classes);
}

int strongest_competitor(const VectorXd& logits, int y) {
    int best = -1;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (i == y) continue;
        if (best < 0 || logits[i] > logits[best]) best = static_cast<int>(i);
    }
    if (best < 0) throw InvalidArgument("strongest_competitor: need at least two classes");
    return best;
}

ConfusionMatrix confusion_margin_from_logits(const MatrixXd& logits, std::span<const int> labels, int num_classes,
                                             double gamma, MissingClasses policy) {
    if (!(gamma >= 0)) throw InvalidArgument("confusion_margin: gamma must be >= 0");
    if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || logits.cols() != num_classes)
        throw DimensionMismatch("confusion_margin: logits shape mismatch");
    const auto counts = counts_for(labels, num_classes, policy);
    const auto cell = margin_cells(logits, labels, gamma);
    MatrixXd hits = MatrixXd::Zero(num_classes, num_classes);
    for (std::size_t q = 0; q < labels.size(); ++q)
        if (cell[q] >= 0) hits(cell[q], labels[q]) += 1.0;
    for (int j = 0; j < num_classes; ++j)
        if (counts[j] > 0) hits.col(j) /= counts[j];
    return {hits};
}

ConfusionMatrix confusion_margin(const Net& net, const Dataset& ds, double gamma) {
    return confusion_margin_from_logits(dataset_logits(net, ds), ds.labels, ds.num_classes, gamma);
}

// Column sums accumulated top to bottom, so the value is the plain sum of
// the column's error fractions with no reassociation.
double worst_class_error(const ConfusionMatrix& c) {
    double worst = 0;
    for (Eigen::Index j = 0; j < c.m.cols(); ++j) {
        double s = 0;
        for (Eigen::Index i = 0; i < c.m.rows(); ++i) s += std::abs(c.m(i, j));
        worst = std::max(worst, s);
    }
    return worst;
}

double margin_shifted_ce(const VectorXd& logits, int y, double gamma) {
    VectorXd shifted = logits.array() + gamma;
    shifted[y] = logits[y];
    return cross_entropy(shifted, y);
}

namespace {

VectorXd margin_shifted_ce_grad(const VectorXd& logits, int y, double gamma) {
    VectorXd shifted = logits.array() + gamma;
    shifted[y] = logits[y];
    return cross_entropy_grad(shifted, y);
}

}  // namespace

SurrogateMatrix surrogate_matrix(const Net& net, const Dataset& adv_ds, double gamma, MissingClasses policy) {
    if (!(gamma >= 0)) throw InvalidArgument("surrogate_matrix: gamma must be >= 0");
    const int d_y = adv_ds.num_classes;
    SurrogateMatrix s;
    s.class_counts = counts_for(adv_ds.labels, d_y, policy);
    s.values = MatrixXd::Zero(d_y, d_y);
    s.membership.assign(static_cast<std::size_t>(d_y) * d_y, {});
    const MatrixXd logits = dataset_logits(net, adv_ds);
    const auto cell = margin_cells(logits, adv_ds.labels, gamma);
    for (int q = 0; q < adv_ds.size(); ++q) {
        if (cell[q] < 0) continue;
        const int j = adv_ds.labels[q];
        s.membership[cell[q] * d_y + j].push_back(q);
        s.values(cell[q], j) += margin_shifted_ce(logits.row(q).transpose(), j, gamma) / s.class_counts[j];
    }
    return s;
}

double surrogate_objective(const Net& net, const Dataset& adv_ds, const SurrogateMatrix& surrogate, double gamma,
                           const MatrixXd& spec_grad) {
    const int d_y = surrogate.num_classes();
    double total = 0;
    for (int i = 0; i < d_y; ++i) {
        for (int j = 0; j < d_y; ++j) {
            if (i == j || surrogate.members(i, j).empty()) continue;
            double cell = 0;
            for (int q : surrogate.members(i, j))
                cell += margin_shifted_ce(predict_logits(net, adv_ds.sample(q)), j, gamma);
            total += spec_grad(i, j) * cell / surrogate.class_counts[j];
        }
    }
    return total;
}

GradBundle<double> psi_grad(const Net& net, const Dataset& adv_ds, const SurrogateMatrix& surrogate, double gamma,
                            const MatrixXd& spec_grad) {
    const int d_y = surrogate.num_classes();
    if (spec_grad.rows() != d_y || spec_grad.cols() != d_y)
        throw DimensionMismatch("psi_grad: spec_grad must be d_y x d_y");

    struct Member {
        int q;
        double weight;
    };
    std::vector<Member> members;
    for (int i = 0; i < d_y; ++i)
        for (int j = 0; j < d_y; ++j)
            if (i != j)
                for (int q : surrogate.members(i, j))
                    members.push_back({q, spec_grad(i, j) / surrogate.class_counts[j]});

    std::vector<GradBundle<double>> per_member(members.size());
    parallel_for(static_cast<int>(members.size()), [&](int k) {
        const int q = members[k].q;
        const auto trace = forward(net, adv_ds.sample(q));
        per_member[k] = backward(net, trace, margin_shifted_ce_grad(trace.logits(), adv_ds.labels[q], gamma));
    });
    auto total = GradBundle<double>::zeros_like(net);
    for (std::size_t k = 0; k < members.size(); ++k) total.add_scaled(per_member[k], members[k].weight);
    total.input_grad.setZero();
    return total;
}

GradBundle<double> psi_grad(const Net& net, const Dataset& adv_ds, double gamma, const MatrixXd& spec_grad) {
    return psi_grad(net, adv_ds, surrogate_matrix(net, adv_ds, gamma), gamma, spec_grad);
}

std::string to_string(RegMode mode) { return mode == RegMode::hybrid ? "hybrid" : "minibatch"; }

RegMode reg_mode_from_string(const std::string& s) {
    if (s == "hybrid") return RegMode::hybrid;
    if (s == "minibatch") return RegMode::minibatch;
    throw InvalidArgument("unknown regularizer mode '" + s + "' (expected hybrid or minibatch)");
}

void RegConfig::validate() const {
    if (!(alpha >= 0)) throw InvalidArgument("regularizer: alpha must be >= 0");
    if (!(gamma >= 0)) throw InvalidArgument("regularizer: gamma must be >= 0");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidArgument("train: epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
    if (!(lr > 0)) throw InvalidArgument("train: lr must be > 0");
    if (!(momentum >= 0)) throw InvalidArgument("train: momentum must be >= 0");
    if (!(weight_decay >= 0)) throw InvalidArgument("train: weight_decay must be >= 0");
    for (const auto& [epoch, factor] : lr_drops)
        if (epoch < 0 || !(factor > 0)) throw InvalidArgument("train: lr_drops need epoch >= 0 and factor > 0");
}

double TrainConfig::lr_at(int epoch) const {
    double rate = lr;
    for (const auto& [at, factor] : lr_drops)
        if (epoch >= at) rate *= factor;
    return rate;
}

TrainConfig finetune_defaults() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.lr = 0.01;
    cfg.lr_drops.clear();
    return cfg;
}

std::string TrainHistory::to_csv() const {
    const bool has_test = !epochs.empty() && epochs.front().test_clean.has_value();
    std::string out = "epoch,train_ce,reg_value,spec_norm_conf,worst_class_conf,reg_skipped";
    const auto add_cols = [&](const char* prefix) {
        for (int j = 0; j < num_classes; ++j) out += fmt::format(",{}_clean_acc_{},{}_robust_acc_{}", prefix, j, prefix, j);
    };
    add_cols("train");
    if (has_test) add_cols("test");
    out += ",train_worst_clean,train_worst_robust";
    if (has_test) out += ",test_worst_clean,test_worst_robust";
    out += '\n';
    for (const auto& e : epochs) {
        out += fmt::format("{},{},{},{},{},{}", e.epoch, e.train_ce, e.reg_value, e.spec_norm_conf, e.worst_class_conf,
                           e.reg_skipped);
        for (int j = 0; j < num_classes; ++j)
            out += fmt::format(",{},{}", e.train_clean.values[j], e.train_robust.values[j]);
        if (has_test)
            for (int j = 0; j < num_classes; ++j)
                out += fmt::format(",{},{}", e.test_clean->values[j], e.test_robust->values[j]);
        out += fmt::format(",{},{}", e.train_clean.worst(), e.train_robust.worst());
        if (has_test) out += fmt::format(",{},{}", e.test_clean->worst(), e.test_robust->worst());
        out += '\n';
    }
    return out;
}

namespace {

constexpr std::uint64_t kBatchStream = 0xBA7C4;
constexpr std::uint64_t kEpochConfusionStream = 0xC0F05;

std::optional<MatrixXd> try_spectral_grad(const ConfusionMatrix& c, int epoch, int& skipped) {
    try {
        return spectral_grad(c.m);
    } catch (const Error& e) {
        ++skipped;
        spdlog::info("epoch {}: regularizer skipped ({})", epoch, e.what());
        return std::nullopt;
    }
}

}  // namespace

TrainResult train(Net net, const TrainInputs& in, const RegConfig& reg, const TrainConfig& cfg) {
    reg.validate();
    cfg.validate();
    in.attack.validate();
    in.train.validate(true);
    if (in.train.dim() != net.input_dim() || in.train.num_classes != net.output_dim())
        throw DimensionMismatch("train: dataset does not match network dimensions");
    const AttackConfig eval_attack = in.eval_attack.value_or(in.attack);
    const Dataset& ds = in.train;
    const int d_y = ds.num_classes;
    const bool regularize = reg.alpha > 0;

    TrainResult result{std::move(net), {d_y, {}}};
    Net& model = result.net;
    std::vector<MatrixXd> velocity;
    for (const auto& w : model.layers()) velocity.push_back(MatrixXd::Zero(w.rows(), w.cols()));

    std::optional<Dataset> previous_adv;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        EpochRecord rec;
        rec.epoch = epoch + 1;

        std::optional<MatrixXd> cached_grad;
        if (regularize && reg.mode == RegMode::hybrid) {
            Dataset fresh;
            const Dataset* epoch_adv = nullptr;
            if (reg.stale_adversarial && previous_adv) {
                epoch_adv = &*previous_adv;
            } else {
                std::vector<int> all(ds.size());
                std::iota(all.begin(), all.end(), 0);
                fresh = adversarial_examples(model, ds, all, in.attack,
                                             derive_seed(in.attack.seed, {kEpochConfusionStream,
                                                                          static_cast<std::uint64_t>(epoch)}));
                epoch_adv = &fresh;
            }
            const auto conf = confusion_margin(model, *epoch_adv, reg.gamma);
            if (in.on_confusion) in.on_confusion(conf);
            cached_grad = try_spectral_grad(conf, epoch + 1, rec.reg_skipped);
        }

        const BatchPlan plan = make_batch_plan(ds.size(), cfg.batch_size,
                                               derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch)}));
        Dataset epoch_adv_store;
        if (reg.stale_adversarial) {
            epoch_adv_store.num_classes = d_y;
            epoch_adv_store.features.resize(ds.size(), ds.dim());
            epoch_adv_store.labels = ds.labels;
        }

        double ce_sum = 0;
        double reg_sum = 0;
        int reg_batches = 0;
        for (int b = 0; b < plan.num_batches(); ++b) {
            const auto idx = plan.batch(b);
            const Dataset adv = adversarial_examples(
                model, ds, idx, in.attack,
                derive_seed(in.attack.seed, {kBatchStream, static_cast<std::uint64_t>(epoch)}));
            if (reg.stale_adversarial)
                for (std::size_t k = 0; k < idx.size(); ++k)
                    epoch_adv_store.features.row(idx[k]) = adv.features.row(static_cast<Eigen::Index>(k));

            const int bs = adv.size();
            std::vector<GradBundle<double>> per_sample(bs);
            std::vector<double> losses(bs);
            parallel_for(bs, [&](int k) {
                const auto trace = forward(model, adv.sample(k));
                losses[k] = cross_entropy(trace.logits(), adv.labels[k]);
                per_sample[k] = backward(model, trace, cross_entropy_grad(trace.logits(), adv.labels[k]));
            });
            auto grad = GradBundle<double>::zeros_like(model);
            for (int k = 0; k < bs; ++k) {
                grad.add_scaled(per_sample[k], 1.0 / bs);
                ce_sum += losses[k] / bs;
            }

            if (regularize) {
                std::optional<MatrixXd> spec = cached_grad;
                if (reg.mode == RegMode::minibatch) {
                    const auto conf = confusion_margin_from_logits(dataset_logits(model, adv), adv.labels, d_y,
                                                                   reg.gamma, MissingClasses::allow);
                    if (in.on_confusion) in.on_confusion(conf);
                    spec = try_spectral_grad(conf, epoch + 1, rec.reg_skipped);
                }
                if (spec) {
                    const auto sur = surrogate_matrix(model, adv, reg.gamma, MissingClasses::allow);
                    grad.add_scaled(psi_grad(model, adv, sur, reg.gamma, *spec), reg.alpha);
                    reg_sum += spec->cwiseProduct(sur.values).sum();
                    ++reg_batches;
                }
            }

            auto& layers = model.mutable_layers();
            for (std::size_t l = 0; l < layers.size(); ++l) {
                velocity[l] = cfg.momentum * velocity[l] + grad.weight_grads[l] + cfg.weight_decay * layers[l];
                layers[l] -= lr * velocity[l];
            }
        }
        if (reg.stale_adversarial) previous_adv = std::move(epoch_adv_store);

        rec.train_ce = plan.num_batches() > 0 ? ce_sum / plan.num_batches() : 0.0;
        rec.reg_value = reg_batches > 0 ? reg_sum / reg_batches : 0.0;

        const Dataset adv_train = adversarial_set(model, ds, eval_attack);
        rec.train_clean = per_class_accuracy(model, ds);
        rec.train_robust = per_class_accuracy(model, adv_train);
        const auto conf = confusion_margin(model, adv_train, reg.gamma);
        if (in.on_confusion) in.on_confusion(conf);
        rec.spec_norm_conf = spectral_norm(conf.m);
        rec.worst_class_conf = worst_class_error(conf);
        if (in.test) {
            rec.test_clean = per_class_accuracy(model, *in.test);
            rec.test_robust = robust_per_class(model, *in.test, eval_attack);
        }
        spdlog::info("epoch {}/{} lr={} ce={:.4f} reg={:.4f} |C|2={:.4f} worst_train_robust={:.3f}{}", rec.epoch,
                     cfg.epochs, lr, rec.train_ce, rec.reg_value, rec.spec_norm_conf, rec.train_robust.worst(),
                     rec.test_robust ? fmt::format(" worst_test_robust={:.3f}", rec.test_robust->worst()) : "");
        result.history.epochs.push_back(std::move(rec));
    }
    return result;
}

TrainResult finetune(Net net, const TrainInputs& inputs, const RegConfig& reg, const TrainConfig& cfg) {
    return train(std::move(net), inputs, reg, cfg);
}

}  // namespace fairspec
