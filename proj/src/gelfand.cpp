#include "fbsee/gelfand.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace fbsee {

namespace {

void check_spd(const Mat& m, const std::string& name) {
    require(m.rows() == m.cols() && m.rows() > 0, name + " must be square and non-empty");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
            name + " must be symmetric (1e-12 relative)");
    Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
    require(es.eigenvalues().minCoeff() > 0.0, name + " must be positive definite");
}

} // namespace

GelfandTriple::GelfandTriple(Mat mass, Mat norm, CoercivityCertificate cert)
    : dim(static_cast<int>(mass.rows())), mass_h(std::move(mass)), norm_v(std::move(norm)),
      coercivity(cert) {
    check_spd(mass_h, "massH");
    check_spd(norm_v, "normV");
    require(norm_v.rows() == dim, "massH and normV must have equal dimension");
    // The embedding constant must exist; SPD pencils always provide one,
    // evaluating it here surfaces degenerate inputs early.
    require(std::isfinite(embedding_constant()), "embedding constant must be finite");
}

GelfandTriple GelfandTriple::identity(int n, CoercivityCertificate cert) {
    return GelfandTriple(Mat::Identity(n, n), Mat::Identity(n, n), cert);
}

double GelfandTriple::embedding_constant() const {
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(mass_h, norm_v, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

double inner_h(const Vec& x, const Vec& y, const GelfandTriple& triple) {
    require(x.size() == triple.dim && y.size() == triple.dim, "inner_h: dimension mismatch");
    return x.dot(triple.mass_h * y);
}

double norm_h_sq(const Vec& x, const GelfandTriple& triple) {
    return inner_h(x, x, triple);
}

double norm_v_sq(const Vec& x, const GelfandTriple& triple) {
    require(x.size() == triple.dim, "norm_v_sq: dimension mismatch");
    return x.dot(triple.norm_v * x);
}

double pairing(const Vec& f, const Vec& x, const GelfandTriple& triple) {
    return inner_h(f, x, triple);
}

std::optional<double> certify_coercivity(const std::vector<Mat>& a_samples,
                                         const GelfandTriple& triple, double lambda) {
    require(!a_samples.empty(), "certify_coercivity: need at least one sample");
    double alpha = std::numeric_limits<double>::infinity();
    for (const Mat& a : a_samples) {
        require(a.rows() == triple.dim && a.cols() == triple.dim,
                "certify_coercivity: sample dimension mismatch");
        require(a.allFinite(), "certify_coercivity: non-finite sample entries");
        // Quadratic form of <A x, x> is x^T sym(massH A) x.
        const Mat ma = triple.mass_h * a;
        const Mat form = 0.5 * (ma + ma.transpose()) + lambda * triple.mass_h;
        Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(form, triple.norm_v,
                                                         Eigen::EigenvaluesOnly);
        alpha = std::min(alpha, es.eigenvalues().minCoeff());
    }
    if (!(alpha > 0.0)) return std::nullopt;
    return alpha;
}

Mat adjoint_matrix(const Mat& a, const Mat& mass) {
    // (A x, y)_mass = (x, A* y)_mass with A* = mass^-1 A^T mass.
    return mass.ldlt().solve(a.transpose() * mass);
}

EvolutionCoefficients build_adjoints(EvolutionCoefficients coeffs, const GelfandTriple& triple,
                                     const Mat& mass_u) {
    require(static_cast<bool>(coeffs.a) && static_cast<bool>(coeffs.b) &&
                static_cast<bool>(coeffs.d),
            "build_adjoints: coefficient callbacks must be populated");
    const Mat mass_h = triple.mass_h;
    Eigen::LDLT<Mat> mh(mass_h);
    Eigen::LDLT<Mat> mu(mass_u);
    require(mh.info() == Eigen::Success && mh.isPositive(), "build_adjoints: singular massH");
    require(mu.info() == Eigen::Success && mu.isPositive(), "build_adjoints: singular massU");

    auto base_a = coeffs.a;
    auto base_b = coeffs.b;
    auto base_d = coeffs.d;
    coeffs.adjoint_a = [base_a, mass_h](int i, double w) {
        return adjoint_matrix(base_a(i, w), mass_h);
    };
    coeffs.adjoint_b = [base_b, mass_h](int i, double w) {
        return adjoint_matrix(base_b(i, w), mass_h);
    };
    coeffs.adjoint_d = [base_d, mass_h, mass_u](int i, double w) -> Mat {
        // (D u, x)_H = (u, D* x)_U with D* = massU^-1 D^T massH.
        return mass_u.ldlt().solve(base_d(i, w).transpose() * mass_h);
    };
    return coeffs;
}

} // namespace fbsee
