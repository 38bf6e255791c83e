#include "lab/spectral.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <vector>

#include "lab/errors.hpp"

namespace lab {

namespace {

constexpr double k_imag_tol = 1e-8;

void require_square(const Eigen::MatrixXd& P, const char* who) {
    if (P.rows() != P.cols() || P.rows() == 0) throw dimension_mismatch(std::string(who) + ": matrix must be square and nonempty");
}

// Lowest index whose magnitude is within a relative 1e-9 of the maximum, so
// solver noise cannot flip the choice between equal-modulus entries.
Eigen::Index argmax_abs(const auto& col) {
    double top = 0.0;
    for (Eigen::Index i = 0; i < col.size(); ++i) top = std::max(top, static_cast<double>(std::abs(col(i))));
    for (Eigen::Index i = 0; i < col.size(); ++i)
        if (std::abs(col(i)) >= top * (1.0 - 1e-9)) return i;
    return 0;
}

// Log stationary weights when P is a nonnegative matrix in detailed balance
// (mu_i P_ij = mu_j P_ji); empty otherwise. Weights are propagated along a
// spanning forest in log space so very skewed chains stay representable.
std::vector<double> detailed_balance_log_weights(const Eigen::MatrixXd& P) {
    const Eigen::Index n = P.rows();
    if ((P.array() < 0.0).any()) return {};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if ((P(i, j) > 0.0) != (P(j, i) > 0.0)) return {};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> lw(n, nan);
    std::vector<Eigen::Index> queue;
    for (Eigen::Index root = 0; root < n; ++root) {
        if (!std::isnan(lw[root])) continue;
        lw[root] = 0.0;
        queue.assign(1, root);
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const Eigen::Index i = queue[q];
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i && P(i, j) > 0.0 && std::isnan(lw[j])) {
                    lw[j] = lw[i] + std::log(P(i, j)) - std::log(P(j, i));
                    queue.push_back(j);
                }
        }
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (P(i, j) > 0.0) {
                const double lhs = lw[i] + std::log(P(i, j));
                const double rhs = lw[j] + std::log(P(j, i));
                if (std::abs(lhs - rhs) > 1e-10) return {};
            }
    return lw;
}

}  // namespace

Eigen::VectorXd spectrum::real_values() const {
    if (!is_real) throw non_real_spectrum("spectrum has complex eigenvalues");
    return eigenvalues.real();
}

Eigen::MatrixXd spectrum::real_vectors() const {
    if (!is_real) throw non_real_spectrum("spectrum has complex eigenvalues");
    return vectors.real();
}

void fix_column_signs(Eigen::MatrixXd& M) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
        auto col = M.col(j);
        if (col(argmax_abs(col)) < 0.0) col = -col;
    }
}

spectrum eigendecompose(const Eigen::MatrixXd& P, eigen_order order) {
    require_square(P, "eigendecompose");
    const Eigen::Index n = P.rows();
    Eigen::VectorXcd vals;
    Eigen::MatrixXcd vecs;
    const auto lw = detailed_balance_log_weights(P);
    if (!lw.empty()) {
        // Reversible: D P D^{-1} is symmetric for D = diag(sqrt(mu)). This keeps
        // the spectrum exactly real for strongly non-normal chains where the
        // general solver would split eigenvalues into complex pairs.
        Eigen::MatrixXd S(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                S(i, j) = P(i, j) == 0.0 ? 0.0 : P(i, j) * std::exp(0.5 * (lw[i] - lw[j]));
        S = 0.5 * (S + S.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
        if (es.info() != Eigen::Success) throw non_convergence("eigen solver failed");
        Eigen::MatrixXd V = es.eigenvectors();
        for (Eigen::Index i = 0; i < n; ++i) V.row(i) *= std::exp(-0.5 * lw[i]);
        vals = es.eigenvalues().cast<std::complex<double>>();
        vecs = V.cast<std::complex<double>>();
    } else {
        Eigen::EigenSolver<Eigen::MatrixXd> es(P, true);
        if (es.info() != Eigen::Success) throw non_convergence("eigen solver failed");
        vals = es.eigenvalues();
        vecs = es.eigenvectors();
    }

    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        double ka = order == eigen_order::real_part ? vals(a).real() : std::abs(vals(a));
        double kb = order == eigen_order::real_part ? vals(b).real() : std::abs(vals(b));
        if (ka != kb) return ka > kb;
        return vals(a).imag() > vals(b).imag();
    });

    spectrum s;
    s.eigenvalues.resize(n);
    s.vectors.resize(n, n);
    double max_imag = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        s.eigenvalues(k) = vals(idx[k]);
        max_imag = std::max(max_imag, std::abs(vals(idx[k]).imag()));
        Eigen::VectorXcd v = vecs.col(idx[k]);
        v /= v.norm();
        // rotate so the largest-magnitude entry is real and positive
        Eigen::Index m = argmax_abs(v);
        std::complex<double> phase = v(m) / std::abs(v(m));
        v *= std::conj(phase);
        s.vectors.col(k) = v;
    }
    s.is_real = max_imag <= k_imag_tol;
    if (s.is_real) {
        s.eigenvalues = s.eigenvalues.real().cast<std::complex<double>>();
        s.vectors = s.vectors.real().cast<std::complex<double>>();
    }
    return s;
}

Eigen::MatrixXd resolvent(const Eigen::MatrixXd& P, double gamma) {
    require_square(P, "resolvent");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw invalid_argument("gamma must lie in [0,1)");
    const Eigen::Index n = P.rows();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - gamma * P);
    if (!lu.isInvertible()) throw singular_matrix("I - gamma P is singular");
    return lu.inverse();
}

rsbf_basis rsbf(const Eigen::MatrixXd& P, double gamma, int K) {
    require_square(P, "rsbf");
    const Eigen::Index n = P.rows();
    if (K < 1 || K > n) throw invalid_argument("rsbf: K must lie in [1, n]");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(resolvent(P, gamma), Eigen::ComputeFullU);
    Eigen::MatrixXd U = svd.matrixU();
    Eigen::VectorXd sv = svd.singularValues();

    // Resolve ties: replace each tied block by the canonical directions it
    // aligns with best, orthonormalized in index order.
    Eigen::Index start = 0;
    while (start < n) {
        Eigen::Index end = start + 1;
        while (end < n && std::abs(sv(end) - sv(start)) <= 1e-10 * std::max(1.0, sv(start))) ++end;
        const Eigen::Index g = end - start;
        if (g > 1) {
            Eigen::MatrixXd Q = U.middleCols(start, g);
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Q.transpose());
            std::vector<Eigen::Index> picked;
            for (Eigen::Index k = 0; k < g; ++k) picked.push_back(qr.colsPermutation().indices()(k));
            std::sort(picked.begin(), picked.end());
            Eigen::MatrixXd B(n, g);
            for (Eigen::Index k = 0; k < g; ++k) B.col(k) = Q * Q.row(picked[k]).transpose();
            Eigen::HouseholderQR<Eigen::MatrixXd> h(B);
            Eigen::MatrixXd Qn = h.householderQ() * Eigen::MatrixXd::Identity(n, g);
            // Householder QR fixes signs arbitrarily; align each column with B
            for (Eigen::Index k = 0; k < g; ++k)
                if (Qn.col(k).dot(B.col(k)) < 0.0) Qn.col(k) = -Qn.col(k);
            U.middleCols(start, g) = Qn;
        }
        start = end;
    }
    fix_column_signs(U);
    return {U.leftCols(K), sv.head(K)};
}

Eigen::MatrixXd top_ebfs(const spectrum& s, int K) {
    if (K < 1 || K > s.vectors.cols()) throw invalid_argument("top_ebfs: K out of range");
    return s.real_vectors().leftCols(K);
}

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& Y, double rel_tol) {
    if (Y.cols() == 0) throw invalid_argument("orthonormal_basis: no columns");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Y, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    if (sv(0) == 0.0 || sv(sv.size() - 1) <= rel_tol * sv(0) || Y.cols() > Y.rows())
        throw rank_deficient("span has dimension below the number of columns");
    return svd.matrixU();
}

void check_orthonormal(const Eigen::MatrixXd& Q, double tol) {
    Eigen::MatrixXd G = Q.transpose() * Q;
    G -= Eigen::MatrixXd::Identity(Q.cols(), Q.cols());
    if (G.cwiseAbs().maxCoeff() > tol) throw invalid_argument("basis is not orthonormal");
}

double grassmann_distance(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw dimension_mismatch("grassmann_distance: subspace dimensions differ");
    check_orthonormal(A, 1e-8);
    check_orthonormal(B, 1e-8);
    // acos loses half the digits near zero, so small angles come from the
    // sines (singular values of the part of B outside span(A)).
    const Eigen::MatrixXd C = A.transpose() * B;
    Eigen::JacobiSVD<Eigen::MatrixXd> cos_svd(C);
    Eigen::JacobiSVD<Eigen::MatrixXd> sin_svd(B - A * C);
    const Eigen::Index k = cos_svd.singularValues().size();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        const double c = std::clamp(cos_svd.singularValues()(i), 0.0, 1.0);
        const double sn = std::clamp(sin_svd.singularValues()(k - 1 - i), 0.0, 1.0);
        const double theta = c * c >= 0.5 ? std::asin(sn) : std::acos(c);
        acc += theta * theta;
    }
    return std::sqrt(acc);
}

double vector_subspace_distance(const Eigen::VectorXd& v, const Eigen::MatrixXd& S) {
    if (v.size() != S.rows()) throw dimension_mismatch("vector_subspace_distance: length mismatch");
    double nv = v.norm();
    if (nv == 0.0) throw invalid_argument("vector_subspace_distance: zero vector");
    double c = std::clamp((S.transpose() * v).norm() / nv, 0.0, 1.0);
    return std::acos(c);
}

double vector_feature_distance(const Eigen::VectorXd& v, const Eigen::MatrixXd& F) {
    if (v.size() != F.rows()) throw dimension_mismatch("vector_feature_distance: length mismatch");
    // rank-revealing basis so that a column duplicating another is harmless
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(F, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    Eigen::Index r = 0;
    while (r < sv.size() && sv(r) > 1e-12 * sv(0)) ++r;
    if (r == 0) throw rank_deficient("feature matrix is zero");
    return vector_subspace_distance(v, svd.matrixU().leftCols(r));
}

double expected_variation(const Eigen::VectorXd& V, const Eigen::MatrixXd& P) {
    if (P.rows() != P.cols() || P.cols() != V.size()) throw dimension_mismatch("expected_variation: shapes disagree");
    return (V - P * V).cwiseAbs().sum();
}

Eigen::VectorXd eigenbasis_coefficients(const Eigen::VectorXd& V, const spectrum& s) {
    Eigen::MatrixXd U = s.real_vectors();
    if (U.rows() != V.size()) throw dimension_mismatch("eigenbasis_coefficients: length mismatch");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(U);
    if (!lu.isInvertible()) throw singular_matrix("eigenvector matrix is singular");
    return lu.solve(V);
}

}  // namespace lab
