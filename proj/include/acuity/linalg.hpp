#pragma once

#include <cmath>
#include <vector>

namespace acuity {

// Row-major dense matrix of doubles. All model tensors use this, including
// 1×n bias rows, so a single visitor can walk every parameter.
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(size_t(r) * size_t(c), fill) {}

    double& operator()(int r, int c) { return a[size_t(r) * cols + c]; }
    double operator()(int r, int c) const { return a[size_t(r) * cols + c]; }
    double* row(int r) { return a.data() + size_t(r) * cols; }
    const double* row(int r) const { return a.data() + size_t(r) * cols; }
    size_t size() const { return a.size(); }

    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    bool finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double dot(const double* x, const double* y, int n);

// y = W x  (W: out×in)
inline void matvec(const Matrix& w, const double* x, double* y) {
    for (int r = 0; r < w.rows; ++r) y[r] = dot(w.row(r), x, w.cols);
}

// y += Wᵀ x  (x has w.rows entries, y has w.cols)
inline void matvec_t_add(const Matrix& w, const double* x, double* y) {
    for (int r = 0; r < w.rows; ++r) {
        const double* wr = w.row(r);
        double xr = x[r];
        for (int c = 0; c < w.cols; ++c) y[c] += wr[c] * xr;
    }
}

// W += outer(x, y)  (x: rows, y: cols)
inline void add_outer(Matrix& w, const double* x, const double* y) {
    for (int r = 0; r < w.rows; ++r) {
        double* wr = w.row(r);
        double xr = x[r];
        for (int c = 0; c < w.cols; ++c) wr[c] += xr * y[c];
    }
}

inline void axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// four independent accumulators so the loop vectorizes without relying on
// floating-point reassociation flags
inline double dot(const double* x, const double* y, int n) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        a0 += x[i] * y[i];
        a1 += x[i + 1] * y[i + 1];
        a2 += x[i + 2] * y[i + 2];
        a3 += x[i + 3] * y[i + 3];
    }
    double acc = (a0 + a1) + (a2 + a3);
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

}  // namespace acuity
