#pragma once

#include <Eigen/Dense>

namespace lab {

enum class eigen_order { real_part, magnitude };

/*
 * Eigenpairs of a square matrix. Columns of `vectors` have unit 2-norm and
 * their largest-magnitude entry is real and positive. Entries within a
 * relative 1e-9 of the largest count as tied; the lowest index wins.
 */
struct spectrum {
    Eigen::VectorXcd eigenvalues;
    Eigen::MatrixXcd vectors;
    bool is_real = true;

    // Both throw non_real_spectrum when is_real is false.
    Eigen::VectorXd real_values() const;
    Eigen::MatrixXd real_vectors() const;
};

struct rsbf_basis {
    Eigen::MatrixXd vectors;
    Eigen::VectorXd singular_values;
};

// Default ordering is descending real part, ties by descending imaginary part.
spectrum eigendecompose(const Eigen::MatrixXd& P, eigen_order order = eigen_order::real_part);

// Psi = (I - gamma P)^{-1}.
Eigen::MatrixXd resolvent(const Eigen::MatrixXd& P, double gamma);

// Top-K left singular vectors of the resolvent. Tied singular values are
// resolved by aligning the tied block with the canonical basis.
rsbf_basis rsbf(const Eigen::MatrixXd& P, double gamma, int K);

// First K eigenvectors of a real spectrum.
Eigen::MatrixXd top_ebfs(const spectrum& s, int K);

// Orthonormal basis of span(Y). Throws rank_deficient if the span has
// dimension below Y.cols().
Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& Y, double rel_tol = 1e-10);

// Throws invalid_argument unless Q has orthonormal columns within tol.
void check_orthonormal(const Eigen::MatrixXd& Q, double tol = 1e-10);

// l2 norm of principal angles between span(A) and span(B). Both arguments
// must have orthonormal columns.
double grassmann_distance(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

// Angle between v and span(S); S orthonormal.
double vector_subspace_distance(const Eigen::VectorXd& v, const Eigen::MatrixXd& S);

// Generalized Grassmann distance between span{v} and span(F) for arbitrary
// (non-orthonormal) feature columns F.
double vector_feature_distance(const Eigen::VectorXd& v, const Eigen::MatrixXd& F);

double expected_variation(const Eigen::VectorXd& V, const Eigen::MatrixXd& P);

Eigen::VectorXd eigenbasis_coefficients(const Eigen::VectorXd& V, const spectrum& s);

// Fixes the sign of each column so its largest-magnitude entry is positive.
void fix_column_signs(Eigen::MatrixXd& M);

}  // namespace lab
