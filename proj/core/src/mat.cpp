#include "spectrumfm/mat.hpp"

#include <string>

namespace spectrumfm {

void require_shape(const Mat& m, int rows, int cols, const char* what) {
    if (m.rows != rows || m.cols != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                         std::to_string(m.cols));
    }
}

// Loop orders are chosen so the innermost loop always walks contiguous memory.
void gemm(const Mat& a, bool trans_a, const Mat& b, bool trans_b, Mat& c, bool accumulate) {
    const int m = trans_a ? a.cols : a.rows;
    const int k = trans_a ? a.rows : a.cols;
    const int kb = trans_b ? b.cols : b.rows;
    const int n = trans_b ? b.rows : b.cols;
    if (k != kb) throw ShapeError("gemm: inner dimensions disagree");
    if (c.rows != m || c.cols != n) throw ShapeError("gemm: output shape mismatch");
    if (!accumulate) c.zero();

    if (!trans_a && !trans_b) {
        for (int i = 0; i < m; ++i) {
            const double* arow = a.row(i);
            double* crow = c.row(i);
            for (int p = 0; p < k; ++p) {
                const double av = arow[p];
                if (av == 0.0) continue;
                const double* brow = b.row(p);
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (int i = 0; i < m; ++i) {
            const double* arow = a.row(i);
            double* crow = c.row(i);
            for (int j = 0; j < n; ++j) {
                const double* brow = b.row(j);
                double acc = 0.0;
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (int p = 0; p < k; ++p) {
            const double* arow = a.row(p);
            const double* brow = b.row(p);
            for (int i = 0; i < m; ++i) {
                const double av = arow[i];
                if (av == 0.0) continue;
                double* crow = c.row(i);
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            double* crow = c.row(i);
            for (int p = 0; p < k; ++p) {
                const double av = a.at(p, i);
                if (av == 0.0) continue;
                const double* bcol = b.row(0) + p;  // stride b.cols
                for (int j = 0; j < n; ++j) crow[j] += av * bcol[static_cast<size_t>(j) * b.cols];
            }
        }
    }
}

}  // namespace spectrumfm
