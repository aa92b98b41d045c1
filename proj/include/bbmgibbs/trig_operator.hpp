#pragma once

#include <bbmgibbs/spectral.hpp>

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bbmgibbs {

/// Dense real operator on E_0^N in the packed basis (c_0, c_1..c_N, s_1..s_N).
struct TrigOperator {
    int N = 0;
    Eigen::MatrixXd mat;

    TrigOperator() : mat(Eigen::MatrixXd::Zero(1, 1)) {}

    TrigOperator(int order, Eigen::MatrixXd m) : N(order), mat(std::move(m)) {
        const int d = 2 * N + 1;
        if (mat.rows() != d || mat.cols() != d)
            throw std::invalid_argument("TrigOperator: dimension inconsistent with N");
        if (!mat.allFinite())
            throw std::invalid_argument("TrigOperator: non-finite entry");
    }

    static TrigOperator identity(int order) {
        return TrigOperator(order, Eigen::MatrixXd::Identity(2 * order + 1, 2 * order + 1));
    }

    int dim() const { return 2 * N + 1; }

    /// Applies the operator to Pi_N u; the result has order N.
    SpectralField apply(const SpectralField& u) const {
        return SpectralField::from_packed(N, mat * project(u, N).packed());
    }

    TrigOperator transposed() const { return TrigOperator(N, mat.transpose()); }

    TrigOperator operator*(const TrigOperator& o) const {
        if (o.N != N) throw std::invalid_argument("TrigOperator: order mismatch");
        return TrigOperator(N, mat * o.mat);
    }

    double symmetry_defect() const { return (mat - mat.transpose()).cwiseAbs().maxCoeff(); }
    double antisymmetry_defect() const { return (mat + mat.transpose()).cwiseAbs().maxCoeff(); }
};

/// Matrix of d_x on E_0^N.
inline TrigOperator dx_matrix(int N) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * N + 1, 2 * N + 1);
    for (int n = 1; n <= N; ++n) {
        m(n, N + n) = n;
        m(N + n, n) = -n;
    }
    return TrigOperator(N, std::move(m));
}

/// Matrix of H^s = (1 - d_x^2)^{s/2} on E_0^N (diagonal).
inline TrigOperator h_power_matrix(int N, double s) {
    Eigen::VectorXd d(2 * N + 1);
    d[0] = 1.0;
    for (int n = 1; n <= N; ++n) {
        const double w = std::pow(1.0 + static_cast<double>(n) * n, 0.5 * s);
        d[n] = w;
        d[N + n] = w;
    }
    return TrigOperator(N, d.asDiagonal());
}

/// Matrix of K_N = Pi_N (1 - d_x^2)^{-1} d_x Pi_N.
inline TrigOperator k_matrix(int N) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * N + 1, 2 * N + 1);
    for (int n = 1; n <= N; ++n) {
        const double w = static_cast<double>(n) / (1.0 + static_cast<double>(n) * n);
        m(n, N + n) = w;
        m(N + n, n) = -w;
    }
    return TrigOperator(N, std::move(m));
}

/// Cosine/sine Fourier data of a real periodic function:
/// f = p[0] + sum_k ( p[k] cos kx + q[k] sin kx ).
struct FourierCoeffs {
    Eigen::VectorXd p;       // indices 0..K
    Eigen::VectorXd q;       // indices 0..K with q[0] = 0
    double tail_mass = 0.0;  // l2 mass of the discarded coefficients

    int band() const { return static_cast<int>(p.size()) - 1; }
};

/// Matrix of Pi_N f Pi_N for the multiplication operator by f, assembled
/// exactly from the Fourier data (requires band >= 2N). Symmetric by
/// construction.
inline TrigOperator mult_operator(const FourierCoeffs& f, int N) {
    if (f.band() < 2 * N)
        throw std::invalid_argument("mult_operator: need Fourier band >= 2N");
    const auto& p = f.p;
    const auto& q = f.q;
    Eigen::MatrixXd m(2 * N + 1, 2 * N + 1);
    m(0, 0) = p[0];
    for (int n = 1; n <= N; ++n) {
        m(0, n) = m(n, 0) = p[n] / std::sqrt(2.0);
        m(0, N + n) = m(N + n, 0) = q[n] / std::sqrt(2.0);
    }
    for (int n = 1; n <= N; ++n) {
        for (int mm = 1; mm <= N; ++mm) {
            const int d = std::abs(n - mm), s = n + mm;
            const double pd = (d == 0) ? 2.0 * p[0] : p[d];
            m(n, mm) = 0.5 * (pd + p[s]);
            m(N + n, N + mm) = 0.5 * (pd - p[s]);
            const int sgn = (mm > n) - (mm < n);
            m(n, N + mm) = 0.5 * (q[s] + sgn * q[d]);
            m(N + mm, n) = m(n, N + mm);
        }
    }
    return TrigOperator(N, std::move(m));
}

/// sup_n sum_m |g^n_m| over the plain exponential basis, the operator size
/// used by the bilinear smoothing estimates. For a multiplication operator
/// this is the l1 mass of the symbol's Fourier coefficients.
inline double exp_basis_l1_norm(const TrigOperator& g) {
    const int N = g.N;
    const int d = g.dim();
    using C = std::complex<double>;
    const C i(0.0, 1.0);
    // columns of U express (eps_{-N}..eps_0..eps_N) in the packed real basis
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Zero(d, d);
    U(0, N) = 1.0;
    const double r = 1.0 / std::sqrt(2.0);
    for (int n = 1; n <= N; ++n) {
        U(n, N + n) = r;
        U(N + n, N + n) = i * r;
        U(n, N - n) = r;
        U(N + n, N - n) = -i * r;
    }
    const Eigen::MatrixXcd gc = U.adjoint() * g.mat * U;
    double best = 0.0;
    for (int row = 0; row < d; ++row) best = std::max(best, gc.row(row).cwiseAbs().sum());
    return best;
}

inline double exp_basis_l1_norm(const FourierCoeffs& f) {
    double s = std::abs(f.p[0]);
    for (int k = 1; k <= f.band(); ++k)
        s += std::sqrt(f.p[k] * f.p[k] + f.q[k] * f.q[k]);
    return s;
}

/// Serializes with a header (order, basis convention, source fingerprint) so
/// cached operators can be validated before reuse.
inline void save_operator(const TrigOperator& op, const std::string& path,
                          std::uint64_t v_fingerprint = 0) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_operator: cannot open " + path);
    out << "bbmgibbs-operator 1\n";
    out << "N " << op.N << "\n";
    out << "basis c0,c1..cN,s1..sN\n";
    out << "vhash " << v_fingerprint << "\n";
    out.precision(17);
    for (int r = 0; r < op.dim(); ++r) {
        for (int c = 0; c < op.dim(); ++c) out << op.mat(r, c) << (c + 1 == op.dim() ? '\n' : ' ');
    }
    if (!out) throw std::runtime_error("save_operator: write failed for " + path);
}

inline TrigOperator load_operator(const std::string& path, std::uint64_t* v_fingerprint = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_operator: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "bbmgibbs-operator" || version != 1)
        throw std::runtime_error("load_operator: unrecognized format in " + path);
    std::string key, basis;
    int N = -1;
    std::uint64_t vh = 0;
    in >> key >> N;
    if (key != "N" || N < 0) throw std::runtime_error("load_operator: bad order header");
    in >> key >> basis;
    if (key != "basis" || basis != "c0,c1..cN,s1..sN")
        throw std::runtime_error("load_operator: basis convention mismatch");
    in >> key >> vh;
    if (key != "vhash") throw std::runtime_error("load_operator: bad fingerprint header");
    const int d = 2 * N + 1;
    Eigen::MatrixXd m(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
            if (!(in >> m(r, c))) throw std::runtime_error("load_operator: truncated matrix");
    if (v_fingerprint) *v_fingerprint = vh;
    return TrigOperator(N, std::move(m));
}

}  // namespace bbmgibbs
