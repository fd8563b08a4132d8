#pragma once

// Dense kernels shared by every other module: matrix norms, the leading
// singular triplet by power iteration, and the gradient of the spectral
// norm with respect to the matrix entries.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fairspec/error.hpp"

namespace fairspec {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

inline constexpr double kPowerTol = 1e-10;
inline constexpr int kPowerMaxIter = 10'000;
/// Minimum σ₁ − σ₂ for the spectral norm to count as differentiable.
inline constexpr double kSpectralGapMin = 1e-9;

template <typename Scalar>
struct SingularTriplet {
    Scalar sigma{0};
    Vector<Scalar> u;
    Vector<Scalar> v;
};

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const std::string& what) {
    if (!m.allFinite()) throw InvalidArgument(what + ": non-finite entry");
}

template <typename Derived>
typename Derived::Scalar frobenius_norm(const Eigen::MatrixBase<Derived>& m) {
    return m.norm();
}

/// Maximum absolute column sum.
template <typename Derived>
typename Derived::Scalar l1_matrix_norm(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    if (m.size() == 0) return Scalar(0);
    return m.cwiseAbs().colwise().sum().maxCoeff();
}

namespace detail {

template <typename Scalar>
struct PowerResult {
    Scalar sigma{0};
    Vector<Scalar> u;
    Vector<Scalar> v;
    Scalar residual{0};
    int iterations = 0;
    bool converged = false;
};

// Power iteration on mᵀm started from `start`. When `deflate` is non-null
// the iterate is kept orthogonal to that unit vector, which yields the next
// singular pair. Convergence: ‖mᵀu − σv‖ ≤ tol·σ with u = mv/‖mv‖, σ = ‖mv‖.
template <typename Derived>
PowerResult<typename Derived::Scalar> power_iterate(
    const Eigen::MatrixBase<Derived>& m, Vector<typename Derived::Scalar> v,
    const Vector<typename Derived::Scalar>* deflate, double tol, int max_iter) {
    using Scalar = typename Derived::Scalar;
    PowerResult<Scalar> r;
    if (deflate) v -= deflate->dot(v) * (*deflate);
    const Scalar vn = v.norm();
    r.u = Vector<Scalar>::Zero(m.rows());
    r.v = v;
    if (vn == Scalar(0)) {
        r.converged = true;
        return r;
    }
    v /= vn;
    for (int it = 1; it <= max_iter; ++it) {
        Vector<Scalar> w = m * v;
        const Scalar sigma = w.norm();
        r.iterations = it;
        r.v = v;
        r.sigma = sigma;
        if (sigma == Scalar(0)) {
            r.residual = 0;
            r.converged = true;
            return r;
        }
        r.u = w / sigma;
        Vector<Scalar> z = m.transpose() * r.u;
        if (deflate) z -= deflate->dot(z) * (*deflate);
        r.residual = (z - sigma * v).norm();
        if (r.residual <= tol * sigma) {
            r.converged = true;
            return r;
        }
        v = z / z.norm();
    }
    return r;
}

template <typename Scalar>
void canonical_sign(SingularTriplet<Scalar>& t) {
    for (Eigen::Index k = 0; k < t.v.size(); ++k) {
        if (std::abs(t.v[k]) > Scalar(1e-12)) {
            if (t.v[k] < Scalar(0)) {
                t.v = -t.v;
                t.u = -t.u;
            }
            return;
        }
    }
}

template <typename Derived>
SingularTriplet<typename Derived::Scalar> top_pair_from(
    const Eigen::MatrixBase<Derived>& m, const Vector<typename Derived::Scalar>& start,
    double tol, int max_iter) {
    using Scalar = typename Derived::Scalar;
    auto r = power_iterate(m, start, nullptr, tol, max_iter);
    if (!r.converged) {
        throw NonConvergence("power iteration did not converge in " +
                                 std::to_string(max_iter) + " iterations",
                             static_cast<double>(r.sigma), static_cast<double>(r.residual),
                             std::vector<double>(r.v.data(), r.v.data() + r.v.size()));
    }
    return SingularTriplet<Scalar>{r.sigma, std::move(r.u), std::move(r.v)};
}

}  // namespace detail

/// Leading singular triplet (σ₁, u₁, v₁) of `m`, with the first nonzero
/// entry of v₁ positive. Starts from the normalized all-ones vector so the
/// result is bit-stable.
template <typename Derived>
SingularTriplet<typename Derived::Scalar> top_singular_pair(const Eigen::MatrixBase<Derived>& m,
                                                            double tol = kPowerTol,
                                                            int max_iter = kPowerMaxIter) {
    using Scalar = typename Derived::Scalar;
    if (m.size() == 0) throw InvalidArgument("top_singular_pair: empty matrix");
    if (!(tol > 0)) throw InvalidArgument("top_singular_pair: tol must be positive");

    const auto cols = m.cols();
    const Scalar frob = m.norm();
    if (frob == Scalar(0)) {
        SingularTriplet<Scalar> t{Scalar(0), Vector<Scalar>::Unit(m.rows(), 0),
                                  Vector<Scalar>::Constant(cols, Scalar(1) / std::sqrt(Scalar(cols)))};
        return t;
    }

    Vector<Scalar> start = Vector<Scalar>::Constant(cols, Scalar(1) / std::sqrt(Scalar(cols)));
    auto t = detail::top_pair_from(m, start, tol, max_iter);

    // σ₁ ≥ ‖m‖_F / √rank. Falling below means the start vector had no
    // component along v₁; restart from the heaviest row of m.
    const Scalar floor_sigma =
        frob / std::sqrt(Scalar(std::min(m.rows(), cols))) * Scalar(1 - 1e-12);
    if (t.sigma < floor_sigma) {
        Eigen::Index heaviest = 0;
        m.rowwise().squaredNorm().maxCoeff(&heaviest);
        start = m.row(heaviest).transpose();
        t = detail::top_pair_from(m, start, tol, max_iter);
    }
    detail::canonical_sign(t);
    return t;
}

template <typename Derived>
typename Derived::Scalar spectral_norm(const Eigen::MatrixBase<Derived>& m, double tol = kPowerTol,
                                       int max_iter = kPowerMaxIter) {
    return top_singular_pair(m, tol, max_iter).sigma;
}

/// Second singular value, by power iteration deflated against `top.v`.
/// When σ₂ ≈ σ₃ the iterate need not settle; the Rayleigh estimate after
/// `max_iter` steps is returned in that case.
template <typename Derived>
typename Derived::Scalar second_singular_value(const Eigen::MatrixBase<Derived>& m,
                                               const SingularTriplet<typename Derived::Scalar>& top,
                                               double tol = kPowerTol,
                                               int max_iter = kPowerMaxIter) {
    using Scalar = typename Derived::Scalar;
    if (std::min(m.rows(), m.cols()) < 2) return Scalar(0);
    const auto cols = m.cols();
    Vector<Scalar> start = Vector<Scalar>::Ones(cols);
    start -= top.v.dot(start) * top.v;
    if (start.norm() < Scalar(1e-8)) {
        Eigen::Index k = 0;
        top.v.cwiseAbs().minCoeff(&k);
        start = Vector<Scalar>::Unit(cols, k);
    }
    return detail::power_iterate(m, start, &top.v, tol, max_iter).sigma;
}

/// ∂‖m‖₂/∂m = u₁v₁ᵀ. Throws DegenerateSpectrum when σ₁ − σ₂ ≤ 1e-9.
template <typename Derived>
Matrix<typename Derived::Scalar> spectral_grad(const Eigen::MatrixBase<Derived>& m,
                                               double tol = kPowerTol,
                                               int max_iter = kPowerMaxIter) {
    using Scalar = typename Derived::Scalar;
    auto top = top_singular_pair(m, tol, max_iter);
    if (top.sigma == Scalar(0)) throw DegenerateSpectrum("spectral_grad: zero matrix", 0.0, 0.0);
    const Scalar sigma2 = second_singular_value(m, top, tol, max_iter);
    // sigma2 > sigma1 means the first pass locked onto a lower singular
    // vector; the gap test below rejects that case too.
    if (top.sigma - sigma2 <= Scalar(kSpectralGapMin)) {
        throw DegenerateSpectrum("spectral_grad: repeated top singular value",
                                 static_cast<double>(top.sigma), static_cast<double>(sigma2));
    }
    return top.u * top.v.transpose();
}

}  // namespace fairspec
