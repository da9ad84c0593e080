#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "spectrumfm/error.hpp"

namespace spectrumfm {

// Dense row-major matrix of doubles. Everything the model touches is a Mat;
// vectors are 1xN. Double precision throughout so gradients can be checked
// against central finite differences.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}
    Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {}

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(0.0); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// C = op(A) * op(B), accumulating if accumulate is true.
void gemm(const Mat& a, bool trans_a, const Mat& b, bool trans_b, Mat& c, bool accumulate);

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    gemm(a, false, b, false, c, false);
    return c;
}

void require_shape(const Mat& m, int rows, int cols, const char* what);

}  // namespace spectrumfm
