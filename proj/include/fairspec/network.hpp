#pragma once

// Bias-free ReLU feedforward networks f(x) = W_n φ(W_{n-1} … φ(W_1 x)).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairspec/error.hpp"
#include "fairspec/rng.hpp"
#include "fairspec/tensor.hpp"

namespace fairspec {

template <typename Scalar>
class FeedForwardNet {
public:
    FeedForwardNet() = default;

    /// Layer l is a dim_l × dim_{l-1} matrix.
    explicit FeedForwardNet(std::vector<Matrix<Scalar>> layers, std::uint64_t seed = 0)
        : layers_(std::move(layers)), seed_(seed) {
        validate();
    }

    /// He-style Gaussian init, std √(2 / fan_in). dims = {input, hidden..., output}.
    static FeedForwardNet he_init(std::span<const int> dims, std::uint64_t seed) {
        if (dims.size() < 2) throw InvalidArgument("he_init: need at least input and output dims");
        std::vector<Matrix<Scalar>> layers;
        for (std::size_t l = 1; l < dims.size(); ++l) {
            if (dims[l] < 1 || dims[l - 1] < 1) throw InvalidArgument("he_init: dims must be positive");
            Rng rng(derive_seed(seed, {l}));
            const double stddev = std::sqrt(2.0 / dims[l - 1]);
            Matrix<Scalar> w(dims[l], dims[l - 1]);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(rng.normal(0.0, stddev));
            layers.push_back(std::move(w));
        }
        return FeedForwardNet(std::move(layers), seed);
    }

    const std::vector<Matrix<Scalar>>& layers() const noexcept { return layers_; }
    /// Mutable access for optimizers; callers own keeping the dims intact.
    std::vector<Matrix<Scalar>>& mutable_layers() noexcept { return layers_; }
    const Matrix<Scalar>& layer(std::size_t l) const { return layers_.at(l); }

    int num_layers() const noexcept { return static_cast<int>(layers_.size()); }
    int input_dim() const noexcept { return layers_.empty() ? 0 : static_cast<int>(layers_.front().cols()); }
    int output_dim() const noexcept { return layers_.empty() ? 0 : static_cast<int>(layers_.back().rows()); }

    /// Width h: the largest dimension anywhere in the network.
    int max_width() const noexcept {
        int h = input_dim();
        for (const auto& w : layers_) h = std::max(h, static_cast<int>(w.rows()));
        return h;
    }

    std::vector<int> dims() const {
        std::vector<int> d;
        if (layers_.empty()) return d;
        d.push_back(input_dim());
        for (const auto& w : layers_) d.push_back(static_cast<int>(w.rows()));
        return d;
    }

    std::uint64_t seed() const noexcept { return seed_; }

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& w : layers_) n += static_cast<std::size_t>(w.size());
        return n;
    }

    void validate() const {
        if (layers_.empty()) throw InvalidArgument("FeedForwardNet: no layers");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (layers_[l].size() == 0) throw InvalidArgument("FeedForwardNet: empty layer");
            if (l > 0 && layers_[l].cols() != layers_[l - 1].rows()) {
                throw DimensionMismatch("FeedForwardNet: layer " + std::to_string(l) + " expects " +
                                        std::to_string(layers_[l].cols()) + " inputs, previous layer has " +
                                        std::to_string(layers_[l - 1].rows()) + " outputs");
            }
            require_finite(layers_[l], "FeedForwardNet layer " + std::to_string(l));
        }
    }

private:
    std::vector<Matrix<Scalar>> layers_;
    std::uint64_t seed_ = 0;
};

using Net = FeedForwardNet<double>;

template <typename Scalar>
struct ForwardTrace {
    Vector<Scalar> input;
    std::vector<Vector<Scalar>> pre_activations;  // f^{(l)}(x), l = 1..n

    const Vector<Scalar>& logits() const { return pre_activations.back(); }
};

template <typename Scalar>
struct GradBundle {
    std::vector<Matrix<Scalar>> weight_grads;
    Vector<Scalar> input_grad;

    static GradBundle zeros_like(const FeedForwardNet<Scalar>& net) {
        GradBundle g;
        for (const auto& w : net.layers()) g.weight_grads.push_back(Matrix<Scalar>::Zero(w.rows(), w.cols()));
        g.input_grad = Vector<Scalar>::Zero(net.input_dim());
        return g;
    }

    GradBundle& add_scaled(const GradBundle& other, Scalar scale) {
        for (std::size_t l = 0; l < weight_grads.size(); ++l) weight_grads[l] += scale * other.weight_grads[l];
        if (input_grad.size() == other.input_grad.size()) input_grad += scale * other.input_grad;
        return *this;
    }

    /// Σ_l ⟨G_l, D_l⟩ over the weight gradients.
    Scalar dot(const std::vector<Matrix<Scalar>>& directions) const {
        Scalar s(0);
        for (std::size_t l = 0; l < weight_grads.size(); ++l)
            s += weight_grads[l].cwiseProduct(directions[l]).sum();
        return s;
    }
};

template <typename Scalar>
Vector<Scalar> relu(const Vector<Scalar>& z) {
    return z.cwiseMax(Scalar(0));
}

/// Argmax with the smallest index winning ties.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

template <typename Scalar, typename Derived>
ForwardTrace<Scalar> forward(const FeedForwardNet<Scalar>& net, const Eigen::MatrixBase<Derived>& x) {
    if (x.size() != net.input_dim()) {
        throw DimensionMismatch("forward: input has " + std::to_string(x.size()) + " entries, net expects " +
                                std::to_string(net.input_dim()));
    }
    ForwardTrace<Scalar> trace;
    trace.input = x;
    trace.pre_activations.reserve(net.layers().size());
    Vector<Scalar> a = trace.input;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        Vector<Scalar> z = net.layers()[l] * a;
        if (l + 1 < net.layers().size()) a = relu(z);
        trace.pre_activations.push_back(std::move(z));
    }
    return trace;
}

/// Logits only; skips recording the trace.
template <typename Scalar, typename Derived>
Vector<Scalar> predict_logits(const FeedForwardNet<Scalar>& net, const Eigen::MatrixBase<Derived>& x) {
    if (x.size() != net.input_dim()) throw DimensionMismatch("predict_logits: input dimension mismatch");
    Vector<Scalar> a = x;
    const auto& layers = net.layers();
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) a = relu(Vector<Scalar>(layers[l] * a));
    return layers.back() * a;
}

/// Reverse-mode pass for the scalar gᵀ f(x): returns ∂/∂W_l and ∂/∂x.
/// φ'(0) is taken as 0.
template <typename Scalar, typename Derived>
GradBundle<Scalar> backward(const FeedForwardNet<Scalar>& net, const ForwardTrace<Scalar>& trace,
                            const Eigen::MatrixBase<Derived>& grad_logits) {
    const auto& layers = net.layers();
    if (trace.pre_activations.size() != layers.size() || trace.input.size() != net.input_dim())
        throw DimensionMismatch("backward: trace does not belong to this net");
    if (grad_logits.size() != net.output_dim())
        throw DimensionMismatch("backward: grad_logits has wrong length");

    GradBundle<Scalar> g;
    g.weight_grads.resize(layers.size());
    Vector<Scalar> delta = grad_logits;
    for (std::size_t k = layers.size(); k-- > 0;) {
        if (k > 0) {
            const Vector<Scalar>& z_prev = trace.pre_activations[k - 1];
            g.weight_grads[k].noalias() = delta * relu(z_prev).transpose();
            Vector<Scalar> back = layers[k].transpose() * delta;
            delta = (z_prev.array() > Scalar(0)).select(back, Scalar(0));
        } else {
            g.weight_grads[0].noalias() = delta * trace.input.transpose();
            g.input_grad = layers[0].transpose() * delta;
        }
    }
    return g;
}

/// M(f(x), y) = f(x)[y] − max_{i≠y} f(x)[i].
template <typename Derived>
typename Derived::Scalar margin(const Eigen::MatrixBase<Derived>& logits, int y) {
    using Scalar = typename Derived::Scalar;
    if (logits.size() < 2) throw InvalidArgument("margin: need at least two classes");
    if (y < 0 || y >= logits.size()) throw InvalidArgument("margin: label " + std::to_string(y) + " out of range");
    Scalar other = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        if (i != y) other = std::max(other, logits[i]);
    return logits[y] - other;
}

template <typename Scalar>
struct WeightStats {
    std::vector<Scalar> spectral;
    std::vector<Scalar> frobenius;
    Scalar spec_product{1};
    Scalar fro_spec_ratio_sum{0};  // Σ ‖W_l‖_F² / ‖W_l‖₂²
    Scalar beta{0};                // geometric mean of spectral norms
};

template <typename Scalar>
WeightStats<Scalar> weight_norm_stats(const FeedForwardNet<Scalar>& net) {
    WeightStats<Scalar> s;
    Scalar log_sum(0);
    for (const auto& w : net.layers()) {
        const Scalar sn = spectral_norm(w);
        const Scalar fn = frobenius_norm(w);
        s.spectral.push_back(sn);
        s.frobenius.push_back(fn);
        s.spec_product *= sn;
        if (sn > Scalar(0)) s.fro_spec_ratio_sum += (fn * fn) / (sn * sn);
        log_sum += std::log(sn);
    }
    s.beta = std::exp(log_sum / Scalar(net.num_layers()));
    return s;
}

/// Rescales every layer to spectral norm β (the geometric mean). The
/// function computed by the net is unchanged by positive homogeneity.
template <typename Scalar>
FeedForwardNet<Scalar> rebalance(const FeedForwardNet<Scalar>& net) {
    const auto stats = weight_norm_stats(net);
    std::vector<Matrix<Scalar>> out;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        if (!(stats.spectral[l] > Scalar(0)))
            throw InvalidArgument("rebalance: layer " + std::to_string(l) + " has zero spectral norm");
        out.push_back((stats.beta / stats.spectral[l]) * net.layers()[l]);
    }
    return FeedForwardNet<Scalar>(std::move(out), net.seed());
}

template <typename Scalar>
struct Perturbed {
    FeedForwardNet<Scalar> net;
    std::vector<Scalar> noise_spectral;  // ‖U_l‖₂
    std::vector<Matrix<Scalar>> noise;   // U_l
};

/// Draws U_l with i.i.d. N(0, σ²) entries and returns W + U.
template <typename Scalar>
Perturbed<Scalar> perturb(const FeedForwardNet<Scalar>& net, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0)) throw InvalidArgument("perturb: sigma must be nonnegative");
    Perturbed<Scalar> p;
    std::vector<Matrix<Scalar>> layers;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto& w = net.layers()[l];
        Matrix<Scalar> u(w.rows(), w.cols());
        Rng rng(derive_seed(seed, {l}));
        for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = Scalar(sigma * rng.normal());
        p.noise_spectral.push_back(spectral_norm(u));
        layers.push_back(w + u);
        p.noise.push_back(std::move(u));
    }
    p.net = FeedForwardNet<Scalar>(std::move(layers), net.seed());
    return p;
}

}  // namespace fairspec
